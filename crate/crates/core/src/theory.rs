//! Pitch classes, keys, scale degrees and chord symbols.
//!
//! All conversions are pitch-class arithmetic: MIDI carries no spelling, so
//! D# and Eb are the same class. Minor keys use the natural minor scale.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TheoryError {
    #[error("pitch class {0} outside 0..=11")]
    PitchClassRange(i32),
    #[error("midi pitch {0} outside piano range {min}..={max}", min = Pitch::MIN, max = Pitch::MAX)]
    PitchRange(i32),
    #[error("cannot parse {kind} from {text:?}")]
    Parse { kind: &'static str, text: String },
}

pub const PITCH_CLASS_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PitchClass(u8);

impl PitchClass {
    pub fn new(value: u8) -> Result<Self, TheoryError> {
        if value < 12 {
            Ok(Self(value))
        } else {
            Err(TheoryError::PitchClassRange(value as i32))
        }
    }

    /// Reduces any integer modulo 12.
    pub fn wrapping(value: i32) -> Self {
        Self(value.rem_euclid(12) as u8)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn transpose(self, semitones: i32) -> Self {
        Self::wrapping(self.0 as i32 + semitones)
    }

    pub fn all() -> impl Iterator<Item = PitchClass> {
        (0..12).map(PitchClass)
    }

    pub fn name(self) -> &'static str {
        PITCH_CLASS_NAMES[self.0 as usize]
    }
}

impl fmt::Display for PitchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PitchClass {
    type Err = TheoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PITCH_CLASS_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(s))
            .map(|i| PitchClass(i as u8))
            .ok_or_else(|| TheoryError::Parse {
                kind: "pitch class",
                text: s.to_string(),
            })
    }
}

/// A MIDI note number restricted to the 88 piano keys (A0 = 21 to C8 = 108).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pitch(u8);

impl Pitch {
    pub const MIN: u8 = 21;
    pub const MAX: u8 = 108;

    pub fn new(midi: i32) -> Result<Self, TheoryError> {
        if (Self::MIN as i32..=Self::MAX as i32).contains(&midi) {
            Ok(Self(midi as u8))
        } else {
            Err(TheoryError::PitchRange(midi))
        }
    }

    pub fn midi(self) -> u8 {
        self.0
    }

    pub fn pitch_class(self) -> PitchClass {
        PitchClass(self.0 % 12)
    }

    /// Scientific-notation octave (C4 = 60).
    pub fn octave(self) -> i32 {
        self.0 as i32 / 12 - 1
    }

    pub fn all() -> impl Iterator<Item = Pitch> {
        (Self::MIN..=Self::MAX).map(Pitch)
    }
}

impl fmt::Display for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.pitch_class(), self.octave())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    Major,
    Minor,
}

impl Mode {
    pub fn scale(self) -> &'static [u8; 7] {
        match self {
            Mode::Major => &MAJOR_SCALE,
            Mode::Minor => &MINOR_SCALE,
        }
    }
}

pub const MAJOR_SCALE: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
/// Natural minor.
pub const MINOR_SCALE: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Key {
    pub tonic: PitchClass,
    pub mode: Mode,
}

impl Key {
    pub fn new(tonic: PitchClass, mode: Mode) -> Self {
        Self { tonic, mode }
    }

    pub fn major(tonic: u8) -> Self {
        Self::new(PitchClass::wrapping(tonic as i32), Mode::Major)
    }

    pub fn minor(tonic: u8) -> Self {
        Self::new(PitchClass::wrapping(tonic as i32), Mode::Minor)
    }

    /// The 24 keys, majors first, each mode in ascending tonic order.
    pub fn all() -> impl Iterator<Item = Key> {
        [Mode::Major, Mode::Minor]
            .into_iter()
            .flat_map(|mode| PitchClass::all().map(move |tonic| Key { tonic, mode }))
    }

    pub fn transpose(self, semitones: i32) -> Self {
        Self::new(self.tonic.transpose(semitones), self.mode)
    }

    pub fn is_major(self) -> bool {
        self.mode == Mode::Major
    }

    /// Index in `Key::all()` order.
    pub fn index(self) -> usize {
        let base = match self.mode {
            Mode::Major => 0,
            Mode::Minor => 12,
        };
        base + self.tonic.value() as usize
    }

    pub fn contains(self, pc: PitchClass) -> bool {
        let rel = (pc.value() + 12 - self.tonic.value()) % 12;
        self.mode.scale().contains(&rel)
    }
}

/// Canonical text form: upper-case tonic for major, lower-case for minor,
/// e.g. `C_major`, `c#_minor`.
impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            Mode::Major => write!(f, "{}_major", self.tonic.name()),
            Mode::Minor => write!(f, "{}_minor", self.tonic.name().to_ascii_lowercase()),
        }
    }
}

impl FromStr for Key {
    type Err = TheoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TheoryError::Parse {
            kind: "key",
            text: s.to_string(),
        };
        let (tonic, mode) = s.split_once('_').ok_or_else(err)?;
        let mode = match mode {
            "major" => Mode::Major,
            "minor" => Mode::Minor,
            _ => return Err(err()),
        };
        let expected_case = match mode {
            Mode::Major => tonic.starts_with(|c: char| c.is_ascii_uppercase()),
            Mode::Minor => tonic.starts_with(|c: char| c.is_ascii_lowercase()),
        };
        if !expected_case {
            return Err(err());
        }
        let tonic = tonic.parse().map_err(|_| err())?;
        Ok(Key { tonic, mode })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Numeral {
    I,
    II,
    III,
    IV,
    V,
    VI,
    VII,
}

impl Numeral {
    pub const ALL: [Numeral; 7] = [
        Numeral::I,
        Numeral::II,
        Numeral::III,
        Numeral::IV,
        Numeral::V,
        Numeral::VI,
        Numeral::VII,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 7]
    }

    pub fn as_str(self) -> &'static str {
        ["I", "II", "III", "IV", "V", "VI", "VII"][self.index()]
    }
}

/// A Roman-numeral scale degree, optionally raised by a semitone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Degree {
    pub numeral: Numeral,
    pub sharp: bool,
}

impl Degree {
    pub const fn natural(numeral: Numeral) -> Self {
        Self { numeral, sharp: false }
    }

    pub const fn sharp(numeral: Numeral) -> Self {
        Self { numeral, sharp: true }
    }

    /// III# and VII# never reach a token stream; they are reassigned to a
    /// neighbouring degree during encoding.
    pub fn is_encodable(self) -> bool {
        !(self.sharp && matches!(self.numeral, Numeral::III | Numeral::VII))
    }

    /// The 12 encodable degrees in ascending major-scale order.
    pub fn vocabulary() -> impl Iterator<Item = Degree> {
        Numeral::ALL
            .into_iter()
            .flat_map(|n| [Degree::natural(n), Degree::sharp(n)])
            .filter(|d| d.is_encodable())
    }
}

impl fmt::Display for Degree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.numeral.as_str())?;
        if self.sharp {
            f.write_str("#")?;
        }
        Ok(())
    }
}

impl FromStr for Degree {
    type Err = TheoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (body, sharp) = match s.strip_suffix('#') {
            Some(b) => (b, true),
            None => (s, false),
        };
        let numeral = Numeral::ALL
            .into_iter()
            .find(|n| n.as_str() == body)
            .ok_or_else(|| TheoryError::Parse {
                kind: "degree",
                text: s.to_string(),
            })?;
        Ok(Degree { numeral, sharp })
    }
}

/// Maps a pitch class to its scale degree in `key`.
///
/// In-scale classes map to plain numerals and classes one semitone above a
/// scale step map to the sharped numeral. In minor keys the two classes that
/// would need III# or VII# are sent to a uniformly chosen neighbour
/// (III# to III or IV, VII# to VII or I).
pub fn pc_to_degree<R: Rng + ?Sized>(pc: PitchClass, key: Key, rng: &mut R) -> Degree {
    let deg = raw_degree(pc, key);
    if deg.is_encodable() {
        return deg;
    }
    let [a, b] = neighbours(deg);
    if rng.random_bool(0.5) {
        a
    } else {
        b
    }
}

/// Degree of `pc` without neighbour reassignment (may return III# / VII#).
pub(crate) fn raw_degree(pc: PitchClass, key: Key) -> Degree {
    let rel = (pc.value() + 12 - key.tonic.value()) % 12;
    let scale = key.mode.scale();
    if let Some(i) = scale.iter().position(|&s| s == rel) {
        return Degree::natural(Numeral::from_index(i));
    }
    let below = (rel + 11) % 12;
    let i = scale
        .iter()
        .position(|&s| s == below)
        .expect("every out-of-scale class sits a semitone above a scale step");
    Degree::sharp(Numeral::from_index(i))
}

/// The two plain degrees a III# / VII# is reassigned to, lower first.
pub(crate) fn neighbours(deg: Degree) -> [Degree; 2] {
    let i = deg.numeral.index();
    [
        Degree::natural(deg.numeral),
        Degree::natural(Numeral::from_index(i + 1)),
    ]
}

/// Inverse of [`pc_to_degree`]; total over all degrees and keys.
pub fn degree_to_pc(deg: Degree, key: Key) -> PitchClass {
    let offset = key.mode.scale()[deg.numeral.index()] + deg.sharp as u8;
    key.tonic.transpose(offset as i32)
}

/// Splits a pitch into an (octave, degree) pair relative to `key`.
///
/// The octave is whichever places the decoded pitch closest to `pitch`,
/// ties broken downward, so reassigned minor-key classes land one semitone
/// away and every other pitch decodes exactly. If the randomly picked
/// neighbour would decode outside the piano range, the other one is used.
pub fn pitch_to_octave_degree<R: Rng + ?Sized>(pitch: Pitch, key: Key, rng: &mut R) -> (i32, Degree) {
    let deg = pc_to_degree(pitch.pitch_class(), key, rng);
    let (octave, decoded) = nearest_octave(pitch, deg, key);
    if Pitch::new(decoded).is_ok() {
        return (octave, deg);
    }
    let raw = raw_degree(pitch.pitch_class(), key);
    let other = neighbours(raw)
        .into_iter()
        .find(|d| *d != deg)
        .expect("neighbour pair has two members");
    (nearest_octave(pitch, other, key).0, other)
}

pub(crate) fn nearest_octave(pitch: Pitch, deg: Degree, key: Key) -> (i32, i32) {
    let pc = degree_to_pc(deg, key).value() as i32;
    let p = pitch.midi() as i32;
    let base = p - (p - pc).rem_euclid(12);
    let up = base + 12;
    let m = if (up - p) < (p - base) { up } else { base };
    (m / 12 - 1, m)
}

pub fn octave_degree_to_pitch(octave: i32, deg: Degree, key: Key) -> Result<Pitch, TheoryError> {
    Pitch::new(12 * (octave + 1) + degree_to_pc(deg, key).value() as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChordQuality {
    Major,
    Minor,
    Augment,
    Diminish,
    Suspend2,
    Suspend4,
    Major7,
    Minor7,
    Dominant7,
    Diminish7,
    HalfDiminish7,
}

impl ChordQuality {
    pub const ALL: [ChordQuality; 11] = [
        ChordQuality::Major,
        ChordQuality::Minor,
        ChordQuality::Augment,
        ChordQuality::Diminish,
        ChordQuality::Suspend2,
        ChordQuality::Suspend4,
        ChordQuality::Major7,
        ChordQuality::Minor7,
        ChordQuality::Dominant7,
        ChordQuality::Diminish7,
        ChordQuality::HalfDiminish7,
    ];

    /// Semitone offsets from the root.
    pub fn intervals(self) -> &'static [u8] {
        match self {
            ChordQuality::Major => &[0, 4, 7],
            ChordQuality::Minor => &[0, 3, 7],
            ChordQuality::Augment => &[0, 4, 8],
            ChordQuality::Diminish => &[0, 3, 6],
            ChordQuality::Suspend2 => &[0, 2, 7],
            ChordQuality::Suspend4 => &[0, 5, 7],
            ChordQuality::Major7 => &[0, 4, 7, 11],
            ChordQuality::Minor7 => &[0, 3, 7, 10],
            ChordQuality::Dominant7 => &[0, 4, 7, 10],
            ChordQuality::Diminish7 => &[0, 3, 6, 9],
            ChordQuality::HalfDiminish7 => &[0, 3, 6, 10],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChordQuality::Major => "major",
            ChordQuality::Minor => "minor",
            ChordQuality::Augment => "augment",
            ChordQuality::Diminish => "diminish",
            ChordQuality::Suspend2 => "suspend2",
            ChordQuality::Suspend4 => "suspend4",
            ChordQuality::Major7 => "major7",
            ChordQuality::Minor7 => "minor7",
            ChordQuality::Dominant7 => "dominant7",
            ChordQuality::Diminish7 => "diminish7",
            ChordQuality::HalfDiminish7 => "half-diminish7",
        }
    }
}

impl fmt::Display for ChordQuality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChordQuality {
    type Err = TheoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|q| q.as_str() == s)
            .ok_or_else(|| TheoryError::Parse {
                kind: "chord quality",
                text: s.to_string(),
            })
    }
}

/// Chord symbol with root type `R`: [`PitchClass`] for letter names,
/// [`Degree`] for Roman numerals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Chord<R> {
    pub root: R,
    pub quality: ChordQuality,
}

pub type AbsoluteChord = Chord<PitchClass>;
pub type FunctionalChord = Chord<Degree>;

impl<R> Chord<R> {
    pub fn new(root: R, quality: ChordQuality) -> Self {
        Self { root, quality }
    }
}

impl AbsoluteChord {
    pub fn pitch_classes(&self) -> impl Iterator<Item = PitchClass> + '_ {
        self.quality
            .intervals()
            .iter()
            .map(move |&i| self.root.transpose(i as i32))
    }

    pub fn transpose(self, semitones: i32) -> Self {
        Chord::new(self.root.transpose(semitones), self.quality)
    }
}

impl<R: fmt::Display> fmt::Display for Chord<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.root, self.quality)
    }
}

pub fn chord_to_functional<R: Rng + ?Sized>(chord: AbsoluteChord, key: Key, rng: &mut R) -> FunctionalChord {
    Chord::new(pc_to_degree(chord.root, key, rng), chord.quality)
}

pub fn chord_to_absolute(chord: FunctionalChord, key: Key) -> AbsoluteChord {
    Chord::new(degree_to_pc(chord.root, key), chord.quality)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn d_sharp_is_three_in_c_minor() {
        let pc = PitchClass::new(3).unwrap();
        assert_eq!(
            pc_to_degree(pc, Key::minor(0), &mut rng()),
            Degree::natural(Numeral::III)
        );
    }

    #[test]
    fn tonic_maps_to_one() {
        for key in Key::all() {
            assert_eq!(pc_to_degree(key.tonic, key, &mut rng()), Degree::natural(Numeral::I));
        }
    }

    #[test]
    fn subdominant_of_c_major_is_f() {
        let f = degree_to_pc(Degree::natural(Numeral::IV), Key::major(0));
        assert_eq!(f.value(), 5);
    }

    #[test]
    fn chord_functions_depend_on_key() {
        let fmaj = Chord::new(PitchClass::new(5).unwrap(), ChordQuality::Major);
        let in_c = chord_to_functional(fmaj, Key::major(0), &mut rng());
        let in_f = chord_to_functional(fmaj, Key::major(5), &mut rng());
        assert_eq!(in_c.to_string(), "IV:major");
        assert_eq!(in_f.to_string(), "I:major");
        assert_eq!(chord_to_absolute(in_c, Key::major(0)), fmaj);
    }

    #[test]
    fn b3_in_c_minor_rounds_to_nearest_octave() {
        let b3 = Pitch::new(59).unwrap();
        let key = Key::minor(0);
        let mut r = rng();
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..64 {
            let (oct, deg) = pitch_to_octave_degree(b3, key, &mut r);
            let decoded = octave_degree_to_pitch(oct, deg, key).unwrap().midi();
            if deg == Degree::natural(Numeral::I) {
                assert_eq!((oct, decoded), (4, 60));
            } else {
                assert_eq!(deg, Degree::natural(Numeral::VII));
                assert_eq!((oct, decoded), (3, 58));
            }
            seen.insert(decoded);
        }
        assert_eq!(seen.len(), 2, "both neighbours should be drawn");
    }

    #[test]
    fn extreme_pitches_stay_in_range() {
        // C8 is rel 4 (III#) in g# minor; A0 is rel 11 (VII#) in a# minor.
        for (midi, key) in [(108, Key::minor(8)), (21, Key::minor(10))] {
            let p = Pitch::new(midi).unwrap();
            for seed in 0..32 {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let (oct, deg) = pitch_to_octave_degree(p, key, &mut r);
                let back = octave_degree_to_pitch(oct, deg, key).unwrap();
                assert_eq!((back.midi() as i32 - midi).abs(), 1);
            }
        }
    }

    #[test]
    fn out_of_range_decode_is_an_error() {
        assert!(octave_degree_to_pitch(8, Degree::natural(Numeral::II), Key::major(0)).is_err());
        assert!(octave_degree_to_pitch(0, Degree::natural(Numeral::I), Key::major(0)).is_err());
        assert_eq!(
            octave_degree_to_pitch(4, Degree::natural(Numeral::I), Key::major(0))
                .unwrap()
                .midi(),
            60
        );
    }

    #[test]
    fn text_forms_parse_back() {
        for key in Key::all() {
            assert_eq!(key.to_string().parse::<Key>().unwrap(), key);
        }
        assert_eq!(Key::minor(0).to_string(), "c_minor");
        assert!("C_minor".parse::<Key>().is_err());
        for d in Degree::vocabulary() {
            assert_eq!(d.to_string().parse::<Degree>().unwrap(), d);
        }
        assert_eq!(Degree::vocabulary().count(), 12);
        assert_eq!(Key::all().count(), 24);
    }
}
