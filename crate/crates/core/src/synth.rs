//! Synthetic material: random grid tracks and lead sheets, key fixtures,
//! a small diatonic piano-clip generator, and grammar-masked random walks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::analysis::LeadSheet;
use crate::midi_io::{Note, QuantizedTrack, TempoChange, TICKS_PER_BAR};
use crate::theory::{degree_to_pc, AbsoluteChord, Chord, ChordQuality, Degree, Key, Numeral, Pitch, PitchClass};
use crate::tokenizer::{Category, Emotion, Event, GrammarState, Layout, Repr, TokenSequence, Vocabulary};

fn pitch(midi: i32) -> Pitch {
    Pitch::new(midi).expect("generator stays in the piano range")
}

/// Random track on the grid satisfying every [`QuantizedTrack`] invariant.
pub fn random_track<R: Rng + ?Sized>(rng: &mut R, bars: u32, max_notes_per_bar: u32) -> QuantizedTrack {
    let span = bars * TICKS_PER_BAR;
    let mut busy: Vec<Vec<(u32, u32)>> = vec![Vec::new(); 128];
    let mut notes = Vec::new();
    for bar in 0..bars {
        for _ in 0..rng.random_range(0..=max_notes_per_bar) {
            let onset = bar * TICKS_PER_BAR + rng.random_range(0..TICKS_PER_BAR);
            let midi = rng.random_range(Pitch::MIN..=Pitch::MAX);
            let duration = rng.random_range(1..=(span - onset).min(32));
            let end = onset + duration;
            let slot = &mut busy[midi as usize];
            if slot.iter().any(|&(s, e)| onset < e && s < end) {
                continue;
            }
            slot.push((onset, end));
            notes.push(Note::new(
                pitch(midi as i32),
                onset,
                duration,
                rng.random_range(1..=127),
            ));
        }
    }
    let mut tempos = Vec::new();
    for bar in 0..bars {
        let p = if bar == 0 { 0.6 } else { 0.2 };
        if rng.random_bool(p) {
            tempos.push(TempoChange::from_bpm(
                bar * TICKS_PER_BAR,
                rng.random_range(30.0..210.0),
            ));
        }
    }
    QuantizedTrack::new(notes, tempos, bars).expect("generator respects track invariants")
}

fn random_chord<R: Rng + ?Sized>(rng: &mut R) -> AbsoluteChord {
    Chord::new(
        PitchClass::new(rng.random_range(0..12)).expect("< 12"),
        *ChordQuality::ALL.choose(rng).expect("non-empty"),
    )
}

/// Random monophonic lead sheet with durations up to 32 sub-beats.
pub fn random_lead_sheet<R: Rng + ?Sized>(rng: &mut R, key: Option<Key>, bars: u32) -> LeadSheet {
    let mut lead = LeadSheet::empty(key, bars);
    let span = bars * TICKS_PER_BAR;
    let mut t = rng.random_range(0..8);
    while t < span {
        let duration = rng.random_range(1..=(span - t).min(32).min(12));
        lead.melody
            .push(Note::new(pitch(rng.random_range(36..=96)), t, duration, 100));
        t += duration + rng.random_range(0..6);
    }
    for c in &mut lead.chords {
        if rng.random_bool(0.75) {
            c.1 = Some(random_chord(rng));
        }
    }
    lead
}

fn degree_midi(key: Key, numeral: Numeral, octave: i32) -> i32 {
    12 * (octave + 1) + degree_to_pc(Degree::natural(numeral), key).value() as i32
}

/// Ascending scale from the tonic in octave 4 followed by a tonic-triad
/// arpeggio, one quarter note each.
pub fn scale_arpeggio(key: Key) -> QuantizedTrack {
    let tonic = degree_midi(key, Numeral::I, 4);
    let mut pitches: Vec<i32> = key.mode.scale().iter().map(|&s| tonic + s as i32).collect();
    pitches.push(tonic + 12);
    let third = key.mode.scale()[2] as i32;
    pitches.extend([tonic, tonic + third, tonic + 7, tonic + 12]);
    let notes = pitches
        .iter()
        .enumerate()
        .map(|(i, &m)| Note::new(pitch(m), i as u32 * 4, 4, 80))
        .collect();
    QuantizedTrack::new(notes, Vec::new(), 3).expect("valid fixture")
}

/// Lead sheet and matching performance that unambiguously sit in `key`:
/// the [`scale_arpeggio`] melody over I-IV-V triads (octave 3 in the
/// performance).
pub fn key_fixture(key: Key) -> (LeadSheet, QuantizedTrack) {
    let melody_track = scale_arpeggio(key);
    let mut lead = LeadSheet::empty(Some(key), melody_track.bars());
    lead.melody = melody_track
        .notes()
        .iter()
        .map(|n| Note { velocity: 100, ..*n })
        .collect();
    let mut notes = melody_track.notes().to_vec();
    for (bar, root) in [Numeral::I, Numeral::IV, Numeral::V].into_iter().enumerate() {
        let quality = if key.is_major() {
            ChordQuality::Major
        } else {
            ChordQuality::Minor
        };
        let pc = degree_to_pc(Degree::natural(root), key);
        lead.chords[bar].1 = Some(Chord::new(pc, quality));
        for &i in quality.intervals() {
            let m = 48 + ((pc.value() + i) % 12) as i32;
            notes.push(Note::new(pitch(m), bar as u32 * TICKS_PER_BAR, TICKS_PER_BAR, 70));
        }
    }
    let track = QuantizedTrack::new(notes, Vec::new(), melody_track.bars()).expect("valid fixture");
    (lead, track)
}

const PROGRESSION: [Numeral; 4] = [Numeral::I, Numeral::IV, Numeral::V, Numeral::I];

/// Diatonic piano clip in `key`: a I-IV-V-I block-chord accompaniment under
/// a quarter-note melody drawn from each bar's chord tones and scale.
pub fn diatonic_clip<R: Rng + ?Sized>(rng: &mut R, key: Key, bars: u32) -> QuantizedTrack {
    let mut notes = Vec::new();
    let tempo = rng.random_range(70.0..150.0);
    for bar in 0..bars {
        let root = PROGRESSION[bar as usize % PROGRESSION.len()];
        let base = bar * TICKS_PER_BAR;
        let tones: Vec<i32> = [0usize, 2, 4]
            .iter()
            .map(|&step| degree_midi(key, Numeral::from_index(root.index() + step), 3))
            .collect();
        let vel = rng.random_range(50..80);
        for (i, &m) in tones.iter().enumerate() {
            let m = if i > 0 && m < tones[0] { m + 12 } else { m };
            notes.push(Note::new(pitch(m), base, TICKS_PER_BAR, vel));
        }
        let last_bar = bar + 1 == bars;
        for beat in 0..4 {
            let step = if last_bar && beat == 3 {
                0
            } else if rng.random_bool(0.6) {
                root.index() + [0, 2, 4].choose(rng).copied().unwrap_or(0)
            } else {
                rng.random_range(0..7)
            };
            let m = degree_midi(key, Numeral::from_index(step), 5);
            notes.push(Note::new(pitch(m), base + beat * 4, 4, rng.random_range(80..110)));
        }
    }
    QuantizedTrack::new(notes, vec![TempoChange::from_bpm(0, tempo)], bars).expect("valid clip")
}

/// One clip of a synthetic emotion-labelled corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub name: String,
    pub key: Key,
    /// Q1/Q4 for major keys, Q2/Q3 for minor keys.
    pub emotion: Emotion,
    pub track: QuantizedTrack,
}

/// `n` diatonic clips cycling through all 24 keys in a shuffled order.
pub fn synthetic_corpus<R: Rng + ?Sized>(rng: &mut R, n: usize, bars: u32) -> Vec<SynthClip> {
    let mut keys: Vec<Key> = Key::all().collect();
    keys.shuffle(rng);
    (0..n)
        .map(|i| {
            let key = keys[i % keys.len()];
            let choices = if key.is_major() {
                [Emotion::Q1, Emotion::Q4]
            } else {
                [Emotion::Q2, Emotion::Q3]
            };
            let emotion = *choices.choose(rng).expect("non-empty");
            SynthClip {
                name: format!("clip_{i:03}"),
                key,
                emotion,
                track: diatonic_clip(rng, key, bars),
            }
        })
        .collect()
}

/// Samples a grammar-valid sequence by repeatedly choosing a legal
/// category, then a legal token within it, uniformly at random.
pub fn random_walk<R: Rng + ?Sized>(repr: Repr, layout: Layout, bar_limit: u32, rng: &mut R) -> TokenSequence {
    let vocab = Vocabulary::shared(repr, layout);
    let mut st = GrammarState::new(repr, layout).with_bar_limit(Some(bar_limit));
    let mut events = Vec::new();
    while !st.is_done() {
        let legal = st.legal_ids(vocab);
        let mut cats: Vec<Category> = legal.iter().map(|&i| vocab.events()[i as usize].category()).collect();
        cats.dedup();
        let cat = *cats.choose(rng).expect("grammar never dead-ends");
        let pool: Vec<u32> = legal
            .into_iter()
            .filter(|&i| vocab.events()[i as usize].category() == cat)
            .collect();
        let ev: Event = vocab.events()[*pool.choose(rng).expect("non-empty") as usize];
        st.push(ev).expect("legal by construction");
        events.push(ev);
    }
    TokenSequence::new(repr, layout, events)
}
