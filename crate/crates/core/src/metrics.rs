//! Objective evaluation: key consistency, corpus statistics and key
//! histograms by valence.
//!
//! Ratios are kept as integer counts and only turned into floats when
//! reported.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analysis::{detect_key_from_notes, LeadSheet};
use crate::midi_io::{Note, TICKS_PER_BAR};
use crate::theory::{Key, Mode, Pitch};
use crate::tokenizer::{decode, Emotion, Event, Layout, TokenSequence, TrackKind};

/// Octave used to realise chord symbols as block notes.
pub const CHORD_OCTAVE: i32 = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub matches: usize,
    pub samples: usize,
}

impl Ratio {
    fn add(&mut self, hit: bool) {
        self.samples += 1;
        self.matches += hit as usize;
    }

    /// `None` when no sample contributed.
    pub fn value(&self) -> Option<f64> {
        (self.samples > 0).then(|| self.matches as f64 / self.samples as f64)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{v:.3} ({}/{})", self.matches, self.samples),
            None => write!(f, "n/a (0/0)"),
        }
    }
}

/// Per-sample outcome; `None` components were not applicable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleOutcome {
    Rejected,
    Scored {
        melody: bool,
        chord: bool,
        lead_sheet: bool,
        performance: Option<bool>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyConsistencyReport {
    pub melody: Ratio,
    pub chord: Ratio,
    pub lead_sheet: Ratio,
    pub performance: Ratio,
    /// Samples that did not decode or carry no key.
    pub rejects: usize,
}

impl KeyConsistencyReport {
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = SampleOutcome>) -> Self {
        let mut r = Self::default();
        for o in outcomes {
            match o {
                SampleOutcome::Rejected => r.rejects += 1,
                SampleOutcome::Scored {
                    melody,
                    chord,
                    lead_sheet,
                    performance,
                } => {
                    r.melody.add(melody);
                    r.chord.add(chord);
                    r.lead_sheet.add(lead_sheet);
                    if let Some(p) = performance {
                        r.performance.add(p);
                    }
                }
            }
        }
        r
    }

    pub fn components(&self) -> [(&'static str, Ratio); 4] {
        [
            ("M", self.melody),
            ("C", self.chord),
            ("M+C", self.lead_sheet),
            ("P", self.performance),
        ]
    }

    /// `component matches samples ratio` rows, then a `rejects` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("component\tmatches\tsamples\tratio\n");
        for (name, r) in self.components() {
            let v = r.value().map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!("{name}\t{}\t{}\t{v}\n", r.matches, r.samples));
        }
        out.push_str(&format!("rejects\t{}\t\t\n", self.rejects));
        out
    }
}

/// Chord symbols realised as block notes lasting each bar.
pub fn chord_notes(lead: &LeadSheet) -> Vec<Note> {
    let mut notes = Vec::new();
    for &(tick, chord) in &lead.chords {
        let Some(c) = chord else { continue };
        for &i in c.quality.intervals() {
            let midi = 12 * (CHORD_OCTAVE + 1) + ((c.root.value() + i) % 12) as i32;
            notes.push(Note::new(
                Pitch::new(midi).expect("octave 4 is in range"),
                tick,
                TICKS_PER_BAR,
                100,
            ));
        }
    }
    notes
}

fn matches(notes: &[Note], key: Key) -> bool {
    detect_key_from_notes(notes).is_ok_and(|k| k == key)
}

/// Scores one sample against its own `Key` condition. Empty components
/// count as misses.
pub fn score_sample(seq: &TokenSequence) -> SampleOutcome {
    let Ok(d) = decode(seq) else {
        return SampleOutcome::Rejected;
    };
    let Some(key) = d.lead.key else {
        return SampleOutcome::Rejected;
    };
    let chords = chord_notes(&d.lead);
    let both: Vec<Note> = d.lead.melody.iter().chain(&chords).copied().collect();
    SampleOutcome::Scored {
        melody: matches(&d.lead.melody, key),
        chord: matches(&chords, key),
        lead_sheet: matches(&both, key),
        performance: d.performance.map(|p| matches(p.notes(), key)),
    }
}

pub fn key_consistency(samples: &[TokenSequence]) -> KeyConsistencyReport {
    KeyConsistencyReport::from_outcomes(samples.iter().map(score_sample))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub clips: usize,
    /// Clips whose `Key` event is major.
    pub major: usize,
    /// Clips with any `Key` event.
    pub keyed: usize,
    pub mean_bars: Option<f64>,
    pub mean_events: Option<f64>,
}

impl CorpusStats {
    pub fn to_tsv(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.3}"));
        format!(
            "clips\tmajor\tkeyed\tmean_bars\tmean_events\n{}\t{}\t{}\t{}\t{}\n",
            self.clips,
            self.major,
            self.keyed,
            f(self.mean_bars),
            f(self.mean_events)
        )
    }
}

fn key_of(seq: &TokenSequence) -> Option<Key> {
    seq.events.iter().find_map(|e| match e {
        Event::Key(k) => Some(*k),
        _ => None,
    })
}

/// Bars in a sequence: `Bar` events for lead sheets, `Track_M` markers for
/// performances (each performance bar carries two `Bar` events).
pub fn bar_count(seq: &TokenSequence) -> usize {
    match seq.layout {
        Layout::LeadSheet => seq.events.iter().filter(|e| **e == Event::Bar).count(),
        Layout::Performance => seq.events.iter().filter(|e| **e == Event::Track(TrackKind::M)).count(),
    }
}

pub fn corpus_stats(corpus: &[TokenSequence]) -> CorpusStats {
    let n = corpus.len();
    let keys: Vec<Key> = corpus.iter().filter_map(key_of).collect();
    let bars: usize = corpus.iter().map(bar_count).sum();
    let events: usize = corpus.iter().map(TokenSequence::len).sum();
    let mean = |total: usize| (n > 0).then(|| total as f64 / n as f64);
    CorpusStats {
        clips: n,
        major: keys.iter().filter(|k| k.mode == Mode::Major).count(),
        keyed: keys.len(),
        mean_bars: mean(bars),
        mean_events: mean(events),
    }
}

/// Key counts per valence group.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyHistogram {
    /// Positive, Q1 and Q4.
    pub high: [usize; 24],
    /// Negative, Q2 and Q3.
    pub low: [usize; 24],
    /// No emotion label.
    pub unlabelled: [usize; 24],
}

fn key_index(k: Key) -> usize {
    Key::all().position(|x| x == k).expect("every key is listed")
}

impl KeyHistogram {
    /// One row per key in `Key::all()` order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("key\thigh_valence\tlow_valence\tunlabelled\n");
        for (i, k) in Key::all().enumerate() {
            out.push_str(&format!(
                "{k}\t{}\t{}\t{}\n",
                self.high[i], self.low[i], self.unlabelled[i]
            ));
        }
        out
    }
}

/// Sequences without a `Key` event are skipped.
pub fn key_histogram(corpus: &[TokenSequence]) -> KeyHistogram {
    let mut h = KeyHistogram::default();
    for seq in corpus {
        let Some(key) = key_of(seq) else { continue };
        let emotion = seq.events.iter().find_map(|e| match e {
            Event::Emotion(e) => Some(*e),
            _ => None,
        });
        let slot = match emotion.map(Emotion::valence) {
            Some(Emotion::Positive) => &mut h.high,
            Some(Emotion::Negative) => &mut h.low,
            _ => &mut h.unlabelled,
        };
        slot[key_index(key)] += 1;
    }
    h
}
