//! Prefix grammar over token sequences.
//!
//! The grammar is strict enough that a grammar-valid sequence decodes to
//! exactly one structure and re-encodes to itself: positions increase
//! within a bar, chords sit only on the first sub-beat of lead-sheet bars,
//! lead-sheet melodies are monophonic, performance notes at one position
//! are listed in strictly descending pitch and never overlap a sounding
//! note of the same pitch, and `EOS` is only legal once every note has
//! ended inside the last bar.

use thiserror::Error;

use super::event::{Category, ChordRoot, Emotion, Event, TrackKind, MAX_OCTAVE};
use super::vocab::Vocabulary;
use super::{Layout, Repr};
use crate::midi_io::TICKS_PER_BAR;
use crate::theory::{degree_to_pc, Degree, Key, Mode, Numeral, Pitch};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("grammar violation at token {position} ({found}); expected one of: {}", fmt_categories(.expected))]
pub struct GrammarError {
    pub position: usize,
    pub found: String,
    pub expected: Vec<Category>,
}

fn fmt_categories(c: &[Category]) -> String {
    if c.is_empty() {
        return "nothing (sequence complete)".into();
    }
    c.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Lead,
    M,
    X,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pos {
    Start,
    NeedKey,
    /// Between bars (before the first bar, or after a finished performance bar).
    Top,
    AfterTrackM,
    AfterTrackX,
    BarStart,
    GroupOpen,
    AfterChord,
    AfterOctave(u8),
    AfterPitch(u8),
    AfterDuration(u8, u8),
    GroupDone,
    Done,
}

/// What a successfully pushed token contributed to the decoded structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Committed {
    Emotion(Emotion),
    Key(Key),
    Chord {
        bar: u32,
        root: ChordRoot,
        quality: crate::theory::ChordQuality,
    },
    Note {
        section: Section,
        pitch: Pitch,
        onset: u32,
        duration: u32,
        velocity_bin: Option<u8>,
    },
    Tempo {
        bar: u32,
        bin: u8,
    },
    Bar,
    End,
}

/// Incremental grammar checker and follow-set oracle.
#[derive(Debug, Clone)]
pub struct GrammarState {
    repr: Repr,
    layout: Layout,
    bar_limit: Option<u32>,
    pos: Pos,
    key: Option<Key>,
    section: Section,
    bars: u32,
    bar_start: u32,
    last_sub: Option<u8>,
    tempo_seen: bool,
    tempo_bin: Option<u8>,
    group_onset: u32,
    group_has_note: bool,
    group_low: Option<u8>,
    melody_end: u32,
    sounding: [u32; 128],
    max_end: u32,
    len: usize,
}

/// Degrees a canonical sequence may contain in `mode`. In minor, II# and V#
/// would decode to the same classes as III and VI, so they are excluded.
pub fn canonical_degree(d: Degree, mode: Mode) -> bool {
    d.is_encodable() && !(mode == Mode::Minor && d.sharp && matches!(d.numeral, Numeral::II | Numeral::V))
}

const LEAD_EMOTIONS: [Emotion; 3] = [Emotion::None, Emotion::Positive, Emotion::Negative];
const PERF_EMOTIONS: [Emotion; 5] = [Emotion::None, Emotion::Q1, Emotion::Q2, Emotion::Q3, Emotion::Q4];

impl GrammarState {
    pub fn new(repr: Repr, layout: Layout) -> Self {
        Self {
            repr,
            layout,
            bar_limit: None,
            pos: Pos::Start,
            key: None,
            section: match layout {
                Layout::LeadSheet => Section::Lead,
                Layout::Performance => Section::M,
            },
            bars: 0,
            bar_start: 0,
            last_sub: None,
            tempo_seen: false,
            tempo_bin: None,
            group_onset: 0,
            group_has_note: false,
            group_low: None,
            melody_end: 0,
            sounding: [0; 128],
            max_end: 0,
            len: 0,
        }
    }

    /// Caps the number of bars; durations are then also limited so every
    /// note ends inside the cap, which keeps `EOS` reachable.
    pub fn with_bar_limit(mut self, limit: Option<u32>) -> Self {
        self.bar_limit = limit;
        self
    }

    pub fn repr(&self) -> Repr {
        self.repr
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn key(&self) -> Option<Key> {
        self.key
    }

    pub fn bars(&self) -> u32 {
        self.bars
    }

    pub fn section(&self) -> Section {
        self.section
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_done(&self) -> bool {
        self.pos == Pos::Done
    }

    /// True at points where a performance bar may end (`Track_M` / `EOS` legal
    /// apart from coverage and bar limits).
    pub fn at_performance_boundary(&self) -> bool {
        self.section == Section::X && self.boundary_in_bar()
    }

    fn boundary_in_bar(&self) -> bool {
        matches!(self.pos, Pos::BarStart | Pos::AfterChord | Pos::GroupDone)
    }

    fn bar_room(&self) -> bool {
        self.bar_limit.is_none_or(|l| self.bars < l)
    }

    fn covered(&self) -> bool {
        self.max_end <= self.bars * TICKS_PER_BAR
    }

    fn pitch_free(&self, midi: u8) -> bool {
        match self.section {
            Section::Lead | Section::M => true,
            Section::X => self.sounding[midi as usize] <= self.group_onset && self.group_low.is_none_or(|l| midi < l),
        }
    }

    fn note_start_ok(&self) -> bool {
        let pos_ok = match self.section {
            Section::Lead | Section::M => matches!(self.pos, Pos::GroupOpen | Pos::AfterChord),
            Section::X => matches!(self.pos, Pos::GroupOpen | Pos::GroupDone),
        };
        if !pos_ok {
            return false;
        }
        match self.section {
            Section::Lead | Section::M => !self.group_has_note && self.group_onset >= self.melody_end,
            Section::X => (Pitch::MIN..=Pitch::MAX).any(|m| self.pitch_free(m)),
        }
    }

    fn degree_pitch(&self, octave: u8, d: Degree) -> Option<u8> {
        let key = self.key?;
        if !canonical_degree(d, key.mode) {
            return None;
        }
        let midi = 12 * (octave as i32 + 1) + degree_to_pc(d, key).value() as i32;
        Pitch::new(midi).ok().map(|p| p.midi())
    }

    fn degree_ok(&self, octave: u8, d: Degree) -> bool {
        self.degree_pitch(octave, d).is_some_and(|m| self.pitch_free(m))
    }

    fn sub_beat_ok(&self, k: u8) -> bool {
        if !self.boundary_in_bar() || k >= 16 || self.last_sub.is_some_and(|l| k <= l) {
            return false;
        }
        let onset = self.bar_start + k as u32;
        match self.section {
            Section::Lead | Section::M => k == 0 || onset >= self.melody_end,
            Section::X => (Pitch::MIN..=Pitch::MAX).any(|m| self.sounding[m as usize] <= onset),
        }
    }

    pub fn allows(&self, ev: &Event) -> bool {
        let functional = self.repr == Repr::Functional;
        let perf = self.layout == Layout::Performance;
        match *ev {
            Event::Emotion(e) => {
                self.pos == Pos::Start
                    && match self.layout {
                        Layout::LeadSheet => LEAD_EMOTIONS.contains(&e),
                        Layout::Performance => PERF_EMOTIONS.contains(&e),
                    }
            }
            Event::Key(_) => self.pos == Pos::NeedKey,
            Event::Bar => {
                if perf {
                    matches!(self.pos, Pos::AfterTrackM | Pos::AfterTrackX)
                } else {
                    (self.pos == Pos::Top || self.boundary_in_bar()) && self.bar_room()
                }
            }
            Event::Track(TrackKind::M) => {
                perf && (self.pos == Pos::Top || self.at_performance_boundary()) && self.bar_room()
            }
            Event::Track(TrackKind::X) => perf && self.section == Section::M && self.boundary_in_bar(),
            Event::Eos => {
                let pos_ok = if perf {
                    self.pos == Pos::Top || self.at_performance_boundary()
                } else {
                    self.pos == Pos::Top || self.boundary_in_bar()
                };
                pos_ok && self.covered()
            }
            Event::SubBeat(k) => self.pos != Pos::Top && self.sub_beat_ok(k),
            Event::Tempo(b) => {
                perf && self.section == Section::X
                    && self.pos == Pos::BarStart
                    && !self.tempo_seen
                    && self.tempo_bin != Some(b)
                    && b < super::event::TEMPO_BINS
            }
            Event::Chord(c) => {
                let root_ok = match c.root {
                    ChordRoot::Functional(d) => functional && self.key.is_some_and(|k| canonical_degree(d, k.mode)),
                    ChordRoot::Absolute(_) => !functional,
                };
                root_ok && self.pos == Pos::GroupOpen && self.section != Section::X && self.last_sub == Some(0)
            }
            Event::Octave(o) => {
                functional
                    && o <= MAX_OCTAVE
                    && self.note_start_ok()
                    && Degree::vocabulary().any(|d| self.degree_ok(o, d))
            }
            Event::Degree(d) => match self.pos {
                Pos::AfterOctave(o) => functional && self.degree_ok(o, d),
                _ => false,
            },
            Event::Pitch(p) => !functional && self.note_start_ok() && self.pitch_free(p.midi()),
            Event::Duration(d) => {
                matches!(self.pos, Pos::AfterPitch(_))
                    && (1..=super::event::MAX_DURATION).contains(&d)
                    && self
                        .bar_limit
                        .is_none_or(|l| self.group_onset + d as u32 <= l * TICKS_PER_BAR)
            }
            Event::Velocity(v) => matches!(self.pos, Pos::AfterDuration(..)) && v < super::event::VELOCITY_BINS,
        }
    }

    /// Categories with at least one legal token, in vocabulary order.
    pub fn follow_categories(&self) -> Vec<Category> {
        let vocab = Vocabulary::shared(self.repr, self.layout);
        self.candidate_categories()
            .into_iter()
            .filter(|&c| {
                vocab
                    .category_range(c)
                    .any(|id| self.allows(&vocab.events()[id as usize]))
            })
            .collect()
    }

    /// Categories worth scanning from the current position.
    fn candidate_categories(&self) -> Vec<Category> {
        use Category as C;
        match self.pos {
            Pos::Start => vec![C::Emotion],
            Pos::NeedKey => vec![C::Key],
            Pos::Done => vec![],
            Pos::AfterOctave(_) => vec![C::Degree],
            Pos::AfterPitch(_) => vec![C::Duration],
            Pos::AfterDuration(..) => vec![C::Velocity],
            Pos::AfterTrackM | Pos::AfterTrackX => vec![C::Bar],
            _ => vec![
                C::Bar,
                C::SubBeat,
                C::Tempo,
                C::Chord,
                C::Octave,
                C::Pitch,
                C::Track,
                C::Eos,
            ],
        }
    }

    /// Ids of every legal next token in `vocab`, ascending.
    pub fn legal_ids(&self, vocab: &Vocabulary) -> Vec<u32> {
        let mut out = Vec::new();
        for c in self.candidate_categories() {
            for id in vocab.category_range(c) {
                if self.allows(&vocab.events()[id as usize]) {
                    out.push(id);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Validates and applies `ev`.
    pub fn push(&mut self, ev: Event) -> Result<Committed, GrammarError> {
        if !self.allows(&ev) {
            return Err(GrammarError {
                position: self.len,
                found: ev.to_string(),
                expected: self.follow_categories(),
            });
        }
        self.len += 1;
        let committed = match ev {
            Event::Emotion(e) => {
                self.pos = if self.repr.has_key() { Pos::NeedKey } else { Pos::Top };
                Committed::Emotion(e)
            }
            Event::Key(k) => {
                self.key = Some(k);
                self.pos = Pos::Top;
                Committed::Key(k)
            }
            Event::Bar => {
                match self.layout {
                    Layout::LeadSheet => {
                        self.bars += 1;
                        self.section = Section::Lead;
                    }
                    Layout::Performance => {
                        self.section = if self.pos == Pos::AfterTrackM {
                            Section::M
                        } else {
                            Section::X
                        };
                    }
                }
                self.bar_start = (self.bars - 1) * TICKS_PER_BAR;
                self.last_sub = None;
                self.tempo_seen = false;
                self.pos = Pos::BarStart;
                Committed::Bar
            }
            Event::Track(TrackKind::M) => {
                self.bars += 1;
                self.pos = Pos::AfterTrackM;
                Committed::Bar
            }
            Event::Track(TrackKind::X) => {
                self.pos = Pos::AfterTrackX;
                Committed::Bar
            }
            Event::SubBeat(k) => {
                self.last_sub = Some(k);
                self.group_onset = self.bar_start + k as u32;
                self.group_has_note = false;
                self.group_low = None;
                self.pos = Pos::GroupOpen;
                Committed::Bar
            }
            Event::Tempo(bin) => {
                self.tempo_seen = true;
                self.tempo_bin = Some(bin);
                Committed::Tempo {
                    bar: self.bars - 1,
                    bin,
                }
            }
            Event::Chord(c) => {
                self.pos = Pos::AfterChord;
                Committed::Chord {
                    bar: self.bars - 1,
                    root: c.root,
                    quality: c.quality,
                }
            }
            Event::Octave(o) => {
                self.pos = Pos::AfterOctave(o);
                Committed::Bar
            }
            Event::Degree(d) => {
                let Pos::AfterOctave(o) = self.pos else { unreachable!() };
                let midi = self.degree_pitch(o, d).expect("checked by allows");
                self.pos = Pos::AfterPitch(midi);
                Committed::Bar
            }
            Event::Pitch(p) => {
                self.pos = Pos::AfterPitch(p.midi());
                Committed::Bar
            }
            Event::Duration(d) => {
                let Pos::AfterPitch(midi) = self.pos else {
                    unreachable!()
                };
                if self.section == Section::X {
                    self.pos = Pos::AfterDuration(midi, d);
                    Committed::Bar
                } else {
                    let end = self.group_onset + d as u32;
                    self.melody_end = end;
                    self.max_end = self.max_end.max(end);
                    self.group_has_note = true;
                    self.pos = Pos::GroupDone;
                    Committed::Note {
                        section: self.section,
                        pitch: Pitch::new(midi as i32).expect("range checked"),
                        onset: self.group_onset,
                        duration: d as u32,
                        velocity_bin: None,
                    }
                }
            }
            Event::Velocity(v) => {
                let Pos::AfterDuration(midi, d) = self.pos else {
                    unreachable!()
                };
                let end = self.group_onset + d as u32;
                self.sounding[midi as usize] = end;
                self.max_end = self.max_end.max(end);
                self.group_low = Some(midi);
                self.pos = Pos::GroupDone;
                Committed::Note {
                    section: Section::X,
                    pitch: Pitch::new(midi as i32).expect("range checked"),
                    onset: self.group_onset,
                    duration: d as u32,
                    velocity_bin: Some(v),
                }
            }
            Event::Eos => {
                self.pos = Pos::Done;
                Committed::End
            }
        };
        Ok(committed)
    }

    /// Checks a whole sequence, which must end with `EOS`.
    pub fn validate(repr: Repr, layout: Layout, events: &[Event]) -> Result<(), GrammarError> {
        let mut st = GrammarState::new(repr, layout);
        for e in events {
            st.push(*e)?;
        }
        if !st.is_done() {
            return Err(GrammarError {
                position: st.len,
                found: "end of input".into(),
                expected: st.follow_categories(),
            });
        }
        Ok(())
    }
}
