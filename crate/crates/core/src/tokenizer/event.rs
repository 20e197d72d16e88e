use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TokenizerError;
use crate::theory::{Chord, ChordQuality, Degree, Key, Pitch, PitchClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Emotion {
    None,
    Positive,
    Negative,
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Emotion {
    pub const ALL: [Emotion; 7] = [
        Emotion::None,
        Emotion::Positive,
        Emotion::Negative,
        Emotion::Q1,
        Emotion::Q2,
        Emotion::Q3,
        Emotion::Q4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::None => "None",
            Emotion::Positive => "Positive",
            Emotion::Negative => "Negative",
            Emotion::Q1 => "Q1",
            Emotion::Q2 => "Q2",
            Emotion::Q3 => "Q3",
            Emotion::Q4 => "Q4",
        }
    }

    pub fn is_quadrant(self) -> bool {
        matches!(self, Emotion::Q1 | Emotion::Q2 | Emotion::Q3 | Emotion::Q4)
    }

    /// High valence: Positive, Q1, Q4. Low valence: Negative, Q2, Q3.
    pub fn valence(self) -> Emotion {
        match self {
            Emotion::Positive | Emotion::Q1 | Emotion::Q4 => Emotion::Positive,
            Emotion::Negative | Emotion::Q2 | Emotion::Q3 => Emotion::Negative,
            Emotion::None => Emotion::None,
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = TokenizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| TokenizerError::UnknownToken(format!("Emotion_{s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChordRoot {
    Absolute(PitchClass),
    Functional(Degree),
}

impl fmt::Display for ChordRoot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChordRoot::Absolute(pc) => pc.fmt(f),
            ChordRoot::Functional(d) => d.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackKind {
    /// Lead-sheet bar.
    M,
    /// Performance bar.
    X,
}

/// Token categories, in vocabulary order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Emotion,
    Key,
    Bar,
    SubBeat,
    Tempo,
    Chord,
    Octave,
    Degree,
    Pitch,
    Duration,
    Velocity,
    Track,
    Eos,
}

impl Category {
    pub const ALL: [Category; 13] = [
        Category::Emotion,
        Category::Key,
        Category::Bar,
        Category::SubBeat,
        Category::Tempo,
        Category::Chord,
        Category::Octave,
        Category::Degree,
        Category::Pitch,
        Category::Duration,
        Category::Velocity,
        Category::Track,
        Category::Eos,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Emotion => "Emotion",
            Category::Key => "Key",
            Category::Bar => "Bar",
            Category::SubBeat => "Sub-Beat",
            Category::Tempo => "Tempo",
            Category::Chord => "Chord",
            Category::Octave => "Octave",
            Category::Degree => "Degree",
            Category::Pitch => "Pitch",
            Category::Duration => "Duration",
            Category::Velocity => "Velocity",
            Category::Track => "Track",
            Category::Eos => "EOS",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const SUB_BEATS: u8 = 16;
pub const TEMPO_BINS: u8 = 64;
pub const VELOCITY_BINS: u8 = 32;
pub const MAX_DURATION: u8 = 32;
pub const MAX_OCTAVE: u8 = 8;

/// One token of the sequence vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Event {
    Emotion(Emotion),
    Key(Key),
    Bar,
    /// Position 0..16 within the bar.
    SubBeat(u8),
    /// Tempo bin 0..64.
    Tempo(u8),
    Chord(Chord<ChordRoot>),
    Octave(u8),
    Degree(Degree),
    Pitch(Pitch),
    /// Length in sub-beats, 1..=32.
    Duration(u8),
    /// Velocity bin 0..32.
    Velocity(u8),
    Track(TrackKind),
    Eos,
}

impl Event {
    pub fn category(&self) -> Category {
        match self {
            Event::Emotion(_) => Category::Emotion,
            Event::Key(_) => Category::Key,
            Event::Bar => Category::Bar,
            Event::SubBeat(_) => Category::SubBeat,
            Event::Tempo(_) => Category::Tempo,
            Event::Chord(_) => Category::Chord,
            Event::Octave(_) => Category::Octave,
            Event::Degree(_) => Category::Degree,
            Event::Pitch(_) => Category::Pitch,
            Event::Duration(_) => Category::Duration,
            Event::Velocity(_) => Category::Velocity,
            Event::Track(_) => Category::Track,
            Event::Eos => Category::Eos,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Emotion(e) => write!(f, "Emotion_{e}"),
            Event::Key(k) => write!(f, "Key_{k}"),
            Event::Bar => f.write_str("Bar"),
            Event::SubBeat(s) => write!(f, "Sub-Beat_{s}"),
            Event::Tempo(t) => write!(f, "Tempo_{t}"),
            Event::Chord(c) => write!(f, "Chord_{}_{}", c.root, c.quality),
            Event::Octave(o) => write!(f, "Octave_{o}"),
            Event::Degree(d) => write!(f, "Degree_{d}"),
            Event::Pitch(p) => write!(f, "Pitch_{}", p.midi()),
            Event::Duration(d) => write!(f, "Duration_{d}"),
            Event::Velocity(v) => write!(f, "Velocity_{v}"),
            Event::Track(TrackKind::M) => f.write_str("Track_M"),
            Event::Track(TrackKind::X) => f.write_str("Track_X"),
            Event::Eos => f.write_str("EOS"),
        }
    }
}

fn bounded(s: &str, lo: u32, hi: u32) -> Option<u8> {
    let v: u32 = s.parse().ok()?;
    (lo..=hi).contains(&v).then_some(v as u8)
}

impl FromStr for Event {
    type Err = TokenizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || TokenizerError::UnknownToken(s.to_string());
        match s {
            "Bar" => return Ok(Event::Bar),
            "EOS" => return Ok(Event::Eos),
            "Track_M" => return Ok(Event::Track(TrackKind::M)),
            "Track_X" => return Ok(Event::Track(TrackKind::X)),
            _ => {}
        }
        let (head, rest) = s.split_once('_').ok_or_else(unknown)?;
        let ev = match head {
            "Emotion" => Event::Emotion(rest.parse().map_err(|_| unknown())?),
            "Key" => Event::Key(rest.parse().map_err(|_| unknown())?),
            "Sub-Beat" => Event::SubBeat(bounded(rest, 0, SUB_BEATS as u32 - 1).ok_or_else(unknown)?),
            "Tempo" => Event::Tempo(bounded(rest, 0, TEMPO_BINS as u32 - 1).ok_or_else(unknown)?),
            "Octave" => Event::Octave(bounded(rest, 0, MAX_OCTAVE as u32).ok_or_else(unknown)?),
            "Degree" => {
                let d: Degree = rest.parse().map_err(|_| unknown())?;
                if !d.is_encodable() {
                    return Err(unknown());
                }
                Event::Degree(d)
            }
            "Pitch" => {
                let v = bounded(rest, Pitch::MIN as u32, Pitch::MAX as u32).ok_or_else(unknown)?;
                Event::Pitch(Pitch::new(v as i32).map_err(|_| unknown())?)
            }
            "Duration" => Event::Duration(bounded(rest, 1, MAX_DURATION as u32).ok_or_else(unknown)?),
            "Velocity" => Event::Velocity(bounded(rest, 0, VELOCITY_BINS as u32 - 1).ok_or_else(unknown)?),
            "Chord" => {
                let (root, quality) = rest.split_once('_').ok_or_else(unknown)?;
                let quality: ChordQuality = quality.parse().map_err(|_| unknown())?;
                let root = if let Ok(d) = root.parse::<Degree>() {
                    if !d.is_encodable() {
                        return Err(unknown());
                    }
                    ChordRoot::Functional(d)
                } else {
                    let pc: PitchClass = root.parse().map_err(|_| unknown())?;
                    if pc.name() != root {
                        return Err(unknown());
                    }
                    ChordRoot::Absolute(pc)
                };
                Event::Chord(Chord::new(root, quality))
            }
            _ => return Err(unknown()),
        };
        Ok(ev)
    }
}
