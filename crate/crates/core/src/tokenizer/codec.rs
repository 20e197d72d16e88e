//! Lead-sheet and performance encoders and the grammar-checked decoder.

use rand::Rng;

use super::event::{ChordRoot, Emotion, Event, TrackKind, MAX_DURATION, TEMPO_BINS, VELOCITY_BINS};
use super::grammar::{Committed, GrammarState, Section};
use super::{Layout, Repr, TokenSequence, TokenizerError};
use crate::analysis::LeadSheet;
use crate::midi_io::{sort_notes, Note, QuantizedTrack, TempoChange, TICKS_PER_BAR};
use crate::theory::{
    chord_to_absolute, chord_to_functional, nearest_octave, neighbours, octave_degree_to_pitch, pitch_to_octave_degree,
    raw_degree, AbsoluteChord, Chord, Degree, Key, Pitch,
};

/// Velocity given to decoded lead-sheet notes, which carry none.
pub const LEAD_VELOCITY: u8 = 100;

const VELOCITY_LO: f64 = 1.0;
const VELOCITY_HI: f64 = 128.0;
const TEMPO_LO: f64 = 30.0;
const TEMPO_HI: f64 = 210.0;

fn bin(x: f64, lo: f64, hi: f64, n: u8) -> u8 {
    let w = (hi - lo) / n as f64;
    ((x - lo) / w).floor().clamp(0.0, n as f64 - 1.0) as u8
}

fn center(b: u8, lo: f64, hi: f64, n: u8) -> f64 {
    lo + (b as f64 + 0.5) * (hi - lo) / n as f64
}

/// 32 equal-width bins over velocities 1..=127.
pub fn velocity_bin(velocity: u8) -> u8 {
    bin(velocity as f64, VELOCITY_LO, VELOCITY_HI, VELOCITY_BINS)
}

pub fn velocity_bin_center(b: u8) -> u8 {
    center(b, VELOCITY_LO, VELOCITY_HI, VELOCITY_BINS)
        .round()
        .clamp(1.0, 127.0) as u8
}

/// 64 equal-width bins over 30..210 bpm; values outside clamp to the end bins.
pub fn tempo_bin(bpm: f64) -> u8 {
    bin(bpm, TEMPO_LO, TEMPO_HI, TEMPO_BINS)
}

pub fn tempo_bin_center(b: u8) -> f64 {
    center(b, TEMPO_LO, TEMPO_HI, TEMPO_BINS)
}

/// Result of decoding a token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub emotion: Emotion,
    /// For performance sequences, the lead sheet carried by the `Track_M` bars.
    pub lead: LeadSheet,
    pub performance: Option<QuantizedTrack>,
}

fn check_emotion(emotion: Emotion, layout: Layout) -> Result<(), TokenizerError> {
    let ok = match layout {
        Layout::LeadSheet => !emotion.is_quadrant(),
        Layout::Performance => emotion == Emotion::None || emotion.is_quadrant(),
    };
    if ok {
        Ok(())
    } else {
        Err(TokenizerError::InvalidInput(format!(
            "emotion {emotion} is not a {layout} condition"
        )))
    }
}

fn header(emotion: Emotion, key: Option<Key>, repr: Repr, out: &mut Vec<Event>) -> Result<Option<Key>, TokenizerError> {
    out.push(Event::Emotion(emotion));
    if repr.has_key() {
        let k = key.ok_or(TokenizerError::MissingKey)?;
        out.push(Event::Key(k));
        Ok(Some(k))
    } else {
        Ok(None)
    }
}

fn note_events<R: Rng + ?Sized>(pitch: Pitch, key: Option<Key>, repr: Repr, rng: &mut R, out: &mut Vec<Event>) {
    match (repr, key) {
        (Repr::Functional, Some(k)) => {
            let (octave, deg) = pitch_to_octave_degree(pitch, k, rng);
            out.push(Event::Octave(octave as u8));
            out.push(Event::Degree(deg));
        }
        _ => out.push(Event::Pitch(pitch)),
    }
}

fn chord_event<R: Rng + ?Sized>(chord: AbsoluteChord, key: Option<Key>, repr: Repr, rng: &mut R) -> Event {
    let root = match (repr, key) {
        (Repr::Functional, Some(k)) => ChordRoot::Functional(chord_to_functional(chord, k, rng).root),
        _ => ChordRoot::Absolute(chord.root),
    };
    Event::Chord(Chord::new(root, chord.quality))
}

fn clipped(duration: u32) -> u8 {
    duration.min(MAX_DURATION as u32) as u8
}

fn validate_lead(lead: &LeadSheet) -> Result<(), TokenizerError> {
    if !lead.is_monophonic() {
        return Err(TokenizerError::InvalidInput("melody is not monophonic".into()));
    }
    let span = lead.bars * TICKS_PER_BAR;
    if let Some(n) = lead.melody.iter().find(|n| n.end() > span || n.duration == 0) {
        return Err(TokenizerError::InvalidInput(format!(
            "melody note at {} does not fit in {} bars",
            n.onset, lead.bars
        )));
    }
    if lead.melody.windows(2).any(|w| w[0].onset >= w[1].onset) {
        return Err(TokenizerError::InvalidInput("melody is not sorted".into()));
    }
    Ok(())
}

/// Tokens of one lead-sheet bar after its `Bar` token.
fn lead_bar<R: Rng + ?Sized>(
    lead: &LeadSheet,
    bar: u32,
    key: Option<Key>,
    repr: Repr,
    rng: &mut R,
    out: &mut Vec<Event>,
) {
    let lo = bar * TICKS_PER_BAR;
    let hi = lo + TICKS_PER_BAR;
    let chord = lead.chord_at_bar(bar);
    let notes: Vec<&Note> = lead.melody.iter().filter(|n| n.onset >= lo && n.onset < hi).collect();
    let first_at_zero = notes.first().is_some_and(|n| n.onset == lo);
    if let Some(c) = chord {
        out.push(Event::SubBeat(0));
        out.push(chord_event(c, key, repr, rng));
    }
    for (i, n) in notes.iter().enumerate() {
        if !(i == 0 && first_at_zero && chord.is_some()) {
            out.push(Event::SubBeat((n.onset - lo) as u8));
        }
        note_events(n.pitch, key, repr, rng, out);
        out.push(Event::Duration(clipped(n.duration)));
    }
}

/// Encodes a lead sheet as `Emotion [Key] (Bar groups*)* EOS`.
pub fn encode_lead_sheet<R: Rng + ?Sized>(
    lead: &LeadSheet,
    emotion: Emotion,
    repr: Repr,
    rng: &mut R,
) -> Result<TokenSequence, TokenizerError> {
    check_emotion(emotion, Layout::LeadSheet)?;
    validate_lead(lead)?;
    let mut out = Vec::new();
    let key = header(emotion, lead.key, repr, &mut out)?;
    for bar in 0..lead.bars {
        out.push(Event::Bar);
        lead_bar(lead, bar, key, repr, rng, &mut out);
    }
    out.push(Event::Eos);
    Ok(TokenSequence::new(repr, Layout::LeadSheet, out))
}

fn tempo_at(track: &QuantizedTrack, tick: u32) -> Option<f64> {
    track
        .tempo_changes()
        .iter()
        .take_while(|t| t.tick <= tick)
        .last()
        .map(|t| t.bpm())
}

struct Spelled {
    onset: u32,
    midi: u8,
    degree: Option<(u8, Degree)>,
    duration: u8,
    velocity: u8,
}

/// Chooses the encoded pitch of every performance note. Notes whose class
/// has a direct spelling keep their pitch; minor-key classes that need a
/// neighbour take one that does not overlap another note of the same pitch,
/// and are dropped when neither neighbour is free.
fn spell_performance<R: Rng + ?Sized>(
    track: &QuantizedTrack,
    key: Option<Key>,
    repr: Repr,
    rng: &mut R,
) -> Vec<Spelled> {
    let key = key.filter(|_| repr == Repr::Functional);
    let mut busy: Vec<Vec<(u32, u32)>> = vec![Vec::new(); 128];
    let mut out = Vec::with_capacity(track.notes().len());
    let mut deferred = Vec::new();
    for n in track.notes() {
        let duration = clipped(n.duration);
        let velocity = velocity_bin(n.velocity);
        let degree = match key {
            None => None,
            Some(k) if !raw_degree(n.pitch.pitch_class(), k).is_encodable() => {
                deferred.push((n, duration, velocity));
                continue;
            }
            Some(k) => {
                let (o, d) = pitch_to_octave_degree(n.pitch, k, rng);
                Some((o as u8, d))
            }
        };
        busy[n.pitch.midi() as usize].push((n.onset, n.onset + duration as u32));
        out.push(Spelled {
            onset: n.onset,
            midi: n.pitch.midi(),
            degree,
            duration,
            velocity,
        });
    }
    if let Some(k) = key {
        for (n, duration, velocity) in deferred {
            let (lo, hi) = (n.onset, n.onset + duration as u32);
            let (octave, first) = pitch_to_octave_degree(n.pitch, k, rng);
            let [a, b] = neighbours(raw_degree(n.pitch.pitch_class(), k));
            let second = if first == a { b } else { a };
            let candidates = [(octave, first), (nearest_octave(n.pitch, second, k).0, second)];
            let pick = candidates.into_iter().find_map(|(o, d)| {
                let m = octave_degree_to_pitch(o, d, k).ok()?.midi();
                busy[m as usize]
                    .iter()
                    .all(|&(s, e)| hi <= s || e <= lo)
                    .then_some((m, o, d))
            });
            if let Some((m, o, d)) = pick {
                busy[m as usize].push((lo, hi));
                out.push(Spelled {
                    onset: n.onset,
                    midi: m,
                    degree: Some((o as u8, d)),
                    duration,
                    velocity,
                });
            }
        }
    }
    out.sort_by(|a, b| a.onset.cmp(&b.onset).then(b.midi.cmp(&a.midi)));
    out
}

/// Encodes a (lead sheet, performance) pair as interleaved `Track_M` /
/// `Track_X` bars. Both must span the same number of bars.
pub fn encode_performance<R: Rng + ?Sized>(
    lead: &LeadSheet,
    track: &QuantizedTrack,
    emotion: Emotion,
    repr: Repr,
    rng: &mut R,
) -> Result<TokenSequence, TokenizerError> {
    check_emotion(emotion, Layout::Performance)?;
    validate_lead(lead)?;
    if lead.bars != track.bars() {
        return Err(TokenizerError::Alignment {
            lead: lead.bars,
            performance: track.bars(),
        });
    }
    let mut out = Vec::new();
    let key = header(emotion, lead.key, repr, &mut out)?;
    let spelled = spell_performance(track, key, repr, rng);
    let mut next = 0;
    let mut last_tempo: Option<u8> = None;
    for bar in 0..lead.bars {
        out.push(Event::Track(TrackKind::M));
        out.push(Event::Bar);
        lead_bar(lead, bar, key, repr, rng, &mut out);
        out.push(Event::Track(TrackKind::X));
        out.push(Event::Bar);
        let lo = bar * TICKS_PER_BAR;
        if let Some(bpm) = tempo_at(track, lo) {
            let b = tempo_bin(bpm);
            if last_tempo != Some(b) {
                out.push(Event::Tempo(b));
                last_tempo = Some(b);
            }
        }
        let mut current = None;
        while let Some(n) = spelled.get(next).filter(|n| n.onset < lo + TICKS_PER_BAR) {
            if current != Some(n.onset) {
                out.push(Event::SubBeat((n.onset - lo) as u8));
                current = Some(n.onset);
            }
            match n.degree {
                Some((o, d)) => {
                    out.push(Event::Octave(o));
                    out.push(Event::Degree(d));
                }
                None => out.push(Event::Pitch(Pitch::new(n.midi as i32).expect("in range"))),
            }
            out.push(Event::Duration(n.duration));
            out.push(Event::Velocity(n.velocity));
            next += 1;
        }
    }
    out.push(Event::Eos);
    Ok(TokenSequence::new(repr, Layout::Performance, out))
}

/// Decodes a complete, grammar-valid sequence.
pub fn decode(seq: &TokenSequence) -> Result<Decoded, TokenizerError> {
    decode_events(&seq.events, seq.repr, seq.layout)
}

pub fn decode_events(events: &[Event], repr: Repr, layout: Layout) -> Result<Decoded, TokenizerError> {
    let mut st = GrammarState::new(repr, layout);
    let mut emotion = Emotion::None;
    let mut melody = Vec::new();
    let mut chords: Vec<(u32, Option<AbsoluteChord>)> = Vec::new();
    let mut perf_notes = Vec::new();
    let mut tempos = Vec::new();
    for ev in events {
        match st.push(*ev)? {
            Committed::Emotion(e) => emotion = e,
            Committed::Chord { bar, root, quality } => {
                let abs = match root {
                    ChordRoot::Absolute(pc) => Chord::new(pc, quality),
                    ChordRoot::Functional(d) => {
                        chord_to_absolute(Chord::new(d, quality), st.key().expect("functional implies key"))
                    }
                };
                chords.push((bar, Some(abs)));
            }
            Committed::Note {
                section,
                pitch,
                onset,
                duration,
                velocity_bin,
            } => match section {
                Section::Lead | Section::M => melody.push(Note::new(pitch, onset, duration, LEAD_VELOCITY)),
                Section::X => perf_notes.push(Note::new(
                    pitch,
                    onset,
                    duration,
                    velocity_bin_center(velocity_bin.unwrap_or(0)),
                )),
            },
            Committed::Tempo { bar, bin } => {
                tempos.push(TempoChange::from_bpm(bar * TICKS_PER_BAR, tempo_bin_center(bin)));
            }
            Committed::Key(_) | Committed::Bar | Committed::End => {}
        }
    }
    if !st.is_done() {
        return Err(super::GrammarError {
            position: st.len(),
            found: "end of input".into(),
            expected: st.follow_categories(),
        }
        .into());
    }
    let bars = st.bars();
    let mut lead = LeadSheet::empty(st.key(), bars);
    for (bar, c) in chords {
        lead.chords[bar as usize].1 = c;
    }
    lead.melody = melody;
    let performance = match layout {
        Layout::LeadSheet => None,
        Layout::Performance => {
            sort_notes(&mut perf_notes);
            Some(QuantizedTrack::new(perf_notes, tempos, bars)?)
        }
    };
    Ok(Decoded {
        emotion,
        lead,
        performance,
    })
}
