//! Lead-sheet extraction from performance tracks: key detection, skyline
//! melody and template-matching chord recognition.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::midi_io::{Note, QuantizedTrack, TICKS_PER_BAR};
use crate::theory::{AbsoluteChord, Chord, ChordQuality, Key, Mode, PitchClass};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("no notes to analyse")]
    NoContent,
}

/// Krumhansl-Kessler probe-tone ratings, major mode, tonic first.
pub const MAJOR_PROFILE: [f64; 12] = [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
/// Krumhansl-Kessler probe-tone ratings, minor mode, tonic first.
pub const MINOR_PROFILE: [f64; 12] = [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

/// Melody plus one chord decision per bar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeadSheet {
    /// `None` only for sequences decoded from plain REMI, which carry no key.
    pub key: Option<Key>,
    /// Monophonic: no two notes overlap.
    pub melody: Vec<Note>,
    /// Exactly one entry per bar, at ticks 0, 16, 32, ...
    pub chords: Vec<(u32, Option<AbsoluteChord>)>,
    pub bars: u32,
}

impl LeadSheet {
    pub fn empty(key: Option<Key>, bars: u32) -> Self {
        Self {
            key,
            melody: Vec::new(),
            chords: (0..bars).map(|b| (b * TICKS_PER_BAR, None)).collect(),
            bars,
        }
    }

    pub fn chord_at_bar(&self, bar: u32) -> Option<AbsoluteChord> {
        self.chords.get(bar as usize).and_then(|c| c.1)
    }

    /// Playable track: the melody over each chord held as a block in
    /// octave 3. Chord tones that would collide with a melody note of the
    /// same pitch are left out.
    pub fn render(&self) -> QuantizedTrack {
        let mut notes = self.melody.clone();
        for &(tick, chord) in &self.chords {
            let Some(c) = chord else { continue };
            for &i in c.quality.intervals() {
                let Ok(pitch) = crate::theory::Pitch::new(48 + ((c.root.value() + i) % 12) as i32) else {
                    continue;
                };
                let end = tick + TICKS_PER_BAR;
                if self
                    .melody
                    .iter()
                    .any(|m| m.pitch == pitch && m.onset < end && tick < m.end())
                {
                    continue;
                }
                notes.push(Note::new(pitch, tick, TICKS_PER_BAR, 70));
            }
        }
        QuantizedTrack::new(notes, Vec::new(), self.bars).expect("lead sheet notes fit its bars")
    }

    pub fn is_monophonic(&self) -> bool {
        self.melody.windows(2).all(|w| w[0].end() <= w[1].onset)
    }

    pub fn transpose(&self, semitones: i32) -> Result<Self, crate::theory::TheoryError> {
        let melody = self
            .melody
            .iter()
            .map(|n| {
                Ok(Note {
                    pitch: crate::theory::Pitch::new(n.pitch.midi() as i32 + semitones)?,
                    ..*n
                })
            })
            .collect::<Result<_, crate::theory::TheoryError>>()?;
        Ok(Self {
            key: self.key.map(|k| k.transpose(semitones)),
            melody,
            chords: self
                .chords
                .iter()
                .map(|&(t, c)| (t, c.map(|c| c.transpose(semitones))))
                .collect(),
            bars: self.bars,
        })
    }
}

/// Duration-weighted pitch-class histogram.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PitchClassProfile {
    pub weights: [f64; 12],
}

impl PitchClassProfile {
    pub fn from_notes<'a>(notes: impl IntoIterator<Item = &'a Note>) -> Self {
        let mut weights = [0.0; 12];
        for n in notes {
            weights[n.pitch.pitch_class().value() as usize] += n.duration as f64;
        }
        Self { weights }
    }

    /// Weights restricted to the overlap of each note with `[lo, hi)`.
    pub fn windowed<'a>(notes: impl IntoIterator<Item = &'a Note>, lo: u32, hi: u32) -> Self {
        let mut weights = [0.0; 12];
        for n in notes {
            let a = n.onset.max(lo);
            let b = n.end().min(hi);
            if b > a {
                weights[n.pitch.pitch_class().value() as usize] += (b - a) as f64;
            }
        }
        Self { weights }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Values rotated so index 0 is `tonic`.
    pub fn rotated(&self, tonic: PitchClass) -> [f64; 12] {
        std::array::from_fn(|i| self.weights[(i + tonic.value() as usize) % 12])
    }
}

fn pearson(x: &[f64; 12], y: &[f64; 12]) -> f64 {
    let mx = x.iter().sum::<f64>() / 12.0;
    let my = y.iter().sum::<f64>() / 12.0;
    let (mut num, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for i in 0..12 {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        num += dx * dy;
        sx += dx * dx;
        sy += dy * dy;
    }
    let den = (sx * sy).sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Correlation of `profile` against all 24 rotated key profiles, in
/// `Key::all()` order.
pub fn key_correlations(profile: &PitchClassProfile) -> [(Key, f64); 24] {
    let mut out = [(Key::major(0), 0.0); 24];
    for (slot, key) in out.iter_mut().zip(Key::all()) {
        let reference = match key.mode {
            Mode::Major => &MAJOR_PROFILE,
            Mode::Minor => &MINOR_PROFILE,
        };
        *slot = (key, pearson(&profile.rotated(key.tonic), reference));
    }
    out
}

pub fn detect_key_from_notes<'a>(notes: impl IntoIterator<Item = &'a Note>) -> Result<Key, AnalysisError> {
    let profile = PitchClassProfile::from_notes(notes);
    detect_key_from_profile(&profile)
}

/// Krumhansl-Schmuckler: argmax of the 24 correlations. Ties keep the
/// earliest key in `Key::all()` order (major first, then lowest tonic).
pub fn detect_key_from_profile(profile: &PitchClassProfile) -> Result<Key, AnalysisError> {
    if profile.total() <= 0.0 {
        return Err(AnalysisError::NoContent);
    }
    let mut best = None;
    for (key, r) in key_correlations(profile) {
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((key, r));
        }
    }
    Ok(best.expect("24 candidates").0)
}

pub fn detect_key(track: &QuantizedTrack) -> Result<Key, AnalysisError> {
    detect_key_from_notes(track.notes())
}

/// Picks the monophonic melody line from a polyphonic track.
pub trait MelodyExtractor {
    fn extract(&self, track: &QuantizedTrack) -> Vec<Note>;
}

/// Highest note at each onset, each truncated where the next one starts.
#[derive(Debug, Clone, Copy, Default)]
pub struct Skyline;

impl MelodyExtractor for Skyline {
    fn extract(&self, track: &QuantizedTrack) -> Vec<Note> {
        extract_melody_skyline(track)
    }
}

pub fn extract_melody_skyline(track: &QuantizedTrack) -> Vec<Note> {
    let mut tops: Vec<Note> = Vec::new();
    // notes arrive sorted by onset, highest pitch first
    for n in track.notes() {
        if tops.last().is_none_or(|t| t.onset != n.onset) {
            tops.push(*n);
        }
    }
    for i in 1..tops.len() {
        let next = tops[i].onset;
        let prev = &mut tops[i - 1];
        if prev.end() > next {
            prev.duration = next - prev.onset;
        }
    }
    tops
}

/// Weights of the template-matching chord recognizer. Scores are computed
/// on the window's pitch-class weights normalised to sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChordConfig {
    /// Multiplier on the weight of pitch classes outside the template.
    pub non_chord_penalty: f64,
    /// Extra credit proportional to the root's own weight.
    pub root_bonus: f64,
    /// Flat bonus when the lowest sounding pitch is the root.
    pub bass_bonus: f64,
    /// Penalty per template tone that is entirely absent, scaled by template size.
    pub missing_tone_penalty: f64,
    /// Flat bonus for roots inside the key's scale.
    pub in_key_bonus: f64,
    /// Minimum score for a chord to be emitted.
    pub threshold: f64,
}

impl Default for ChordConfig {
    fn default() -> Self {
        Self {
            non_chord_penalty: 1.0,
            root_bonus: 0.2,
            bass_bonus: 0.1,
            missing_tone_penalty: 0.3,
            in_key_bonus: 0.02,
            threshold: 0.6,
        }
    }
}

pub fn chord_score(
    chord: AbsoluteChord,
    weights: &[f64; 12],
    bass: Option<PitchClass>,
    key: Key,
    cfg: &ChordConfig,
) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let mut member = [false; 12];
    for pc in chord.pitch_classes() {
        member[pc.value() as usize] = true;
    }
    let mut inside = 0.0;
    let mut outside = 0.0;
    for (pc, &w) in weights.iter().enumerate() {
        if member[pc] {
            inside += w / total;
        } else {
            outside += w / total;
        }
    }
    let size = chord.quality.intervals().len() as f64;
    let missing = chord
        .pitch_classes()
        .filter(|pc| weights[pc.value() as usize] <= 0.0)
        .count() as f64;
    let mut score = inside - cfg.non_chord_penalty * outside
        + cfg.root_bonus * weights[chord.root.value() as usize] / total
        - cfg.missing_tone_penalty * missing / size;
    if bass == Some(chord.root) {
        score += cfg.bass_bonus;
    }
    if key.contains(chord.root) {
        score += cfg.in_key_bonus;
    }
    score
}

/// Best chord for one window of pitch-class weights, or `None` below threshold.
pub fn best_chord(weights: &[f64; 12], bass: Option<PitchClass>, key: Key, cfg: &ChordConfig) -> Option<AbsoluteChord> {
    let mut best: Option<(AbsoluteChord, f64)> = None;
    for root in PitchClass::all() {
        for quality in ChordQuality::ALL {
            let c = Chord::new(root, quality);
            let s = chord_score(c, weights, bass, key, cfg);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c, s));
            }
        }
    }
    best.filter(|&(_, s)| s >= cfg.threshold).map(|(c, _)| c)
}

/// One decision per bar (16 steps), at ticks 0, 16, 32, ...
pub fn recognize_chords(track: &QuantizedTrack, key: Key) -> Vec<(u32, Option<AbsoluteChord>)> {
    recognize_chords_with(track, key, &ChordConfig::default())
}

pub fn recognize_chords_with(track: &QuantizedTrack, key: Key, cfg: &ChordConfig) -> Vec<(u32, Option<AbsoluteChord>)> {
    (0..track.bars())
        .map(|bar| {
            let lo = bar * TICKS_PER_BAR;
            let hi = lo + TICKS_PER_BAR;
            let profile = PitchClassProfile::windowed(track.notes(), lo, hi);
            let bass = track
                .notes()
                .iter()
                .filter(|n| n.onset < hi && n.end() > lo)
                .map(|n| n.pitch)
                .min()
                .map(|p| p.pitch_class());
            (lo, best_chord(&profile.weights, bass, key, cfg))
        })
        .collect()
}

pub fn extract_lead_sheet(track: &QuantizedTrack) -> Result<LeadSheet, AnalysisError> {
    extract_lead_sheet_with(track, &Skyline, &ChordConfig::default(), None)
}

/// Full lead-sheet extraction with a chosen melody extractor and an
/// optional key override (skipping detection).
pub fn extract_lead_sheet_with(
    track: &QuantizedTrack,
    melody: &dyn MelodyExtractor,
    chords: &ChordConfig,
    key_override: Option<Key>,
) -> Result<LeadSheet, AnalysisError> {
    let key = match key_override {
        Some(k) => k,
        None => detect_key(track)?,
    };
    Ok(LeadSheet {
        key: Some(key),
        melody: melody.extract(track),
        chords: recognize_chords_with(track, key, chords),
        bars: track.bars(),
    })
}

/// Per-file summary printed by the `analyze` command.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub source: String,
    pub lead: LeadSheet,
    pub note_count: usize,
}

impl AnalysisReport {
    pub fn new(source: impl Into<String>, track: &QuantizedTrack, lead: LeadSheet) -> Self {
        Self {
            source: source.into(),
            note_count: track.notes().len(),
            lead,
        }
    }
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "file\t{}", self.source)?;
        match self.lead.key {
            Some(k) => writeln!(f, "key\t{k}")?,
            None => writeln!(f, "key\t-")?,
        }
        writeln!(f, "bars\t{}", self.lead.bars)?;
        writeln!(f, "notes\t{}", self.note_count)?;
        writeln!(f, "melody_notes\t{}", self.lead.melody.len())?;
        for (tick, chord) in &self.lead.chords {
            match chord {
                Some(c) => writeln!(f, "chord\t{tick}\t{c}")?,
                None => writeln!(f, "chord\t{tick}\t-")?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::Pitch;

    fn n(m: i32, onset: u32, dur: u32) -> Note {
        Note::new(Pitch::new(m).unwrap(), onset, dur, 80)
    }

    fn track(notes: Vec<Note>) -> QuantizedTrack {
        let bars = notes.iter().map(Note::end).max().unwrap_or(0).div_ceil(16);
        QuantizedTrack::new(notes, vec![], bars).unwrap()
    }

    #[test]
    fn empty_track_has_no_key() {
        assert_eq!(detect_key(&QuantizedTrack::empty(2)), Err(AnalysisError::NoContent));
    }

    #[test]
    fn transposition_shifts_tonic() {
        let t = track(vec![n(60, 0, 4), n(64, 4, 4), n(67, 8, 4), n(65, 12, 2), n(71, 14, 2)]);
        let k = detect_key(&t).unwrap();
        for s in 1..12 {
            assert_eq!(detect_key(&t.transpose(s).unwrap()).unwrap(), k.transpose(s));
        }
    }

    #[test]
    fn skyline_keeps_top_voice() {
        let t = track(vec![n(60, 0, 4), n(64, 0, 4), n(67, 0, 4)]);
        assert_eq!(extract_melody_skyline(&t), vec![n(67, 0, 4)]);
    }

    #[test]
    fn skyline_truncates_at_next_onset() {
        let t = track(vec![n(67, 0, 8), n(72, 4, 4)]);
        assert_eq!(extract_melody_skyline(&t), vec![n(67, 0, 4), n(72, 4, 4)]);
    }

    #[test]
    fn skyline_fixpoint_on_monophonic_input() {
        let t = track(vec![n(60, 0, 2), n(62, 2, 2), n(64, 8, 8)]);
        assert_eq!(extract_melody_skyline(&t), t.notes().to_vec());
    }

    #[test]
    fn triad_window() {
        let t = track(vec![n(60, 0, 16), n(64, 0, 16), n(67, 0, 16)]);
        let c = recognize_chords(&t, Key::major(0));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].1.unwrap().to_string(), "C:major");
    }

    #[test]
    fn empty_window_is_none() {
        let t = track(vec![
            n(60, 0, 16),
            n(64, 0, 16),
            n(67, 0, 16),
            n(60, 32, 16),
            n(64, 32, 16),
            n(67, 32, 16),
        ]);
        let c = recognize_chords(&t, Key::major(0));
        assert_eq!(c.iter().map(|c| c.0).collect::<Vec<_>>(), vec![0, 16, 32]);
        assert!(c[1].1.is_none());
    }

    #[test]
    fn report_lists_every_window() {
        let t = track(vec![n(60, 0, 16), n(64, 0, 16), n(67, 0, 16)]);
        let lead = extract_lead_sheet(&t).unwrap();
        let text = AnalysisReport::new("x.mid", &t, lead).to_string();
        assert!(text.contains("key\tC_major"));
        assert!(text.contains("chord\t0\tC:major"));
        assert!(text.contains("melody_notes\t1"));
    }
}
