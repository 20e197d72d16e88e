//! Event vocabularies, the sequence grammar, and lead-sheet / performance
//! encoders and decoders for the three representations.

pub mod codec;
pub mod event;
pub mod grammar;
pub mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{
    decode, decode_events, encode_lead_sheet, encode_performance, tempo_bin, tempo_bin_center, velocity_bin,
    velocity_bin_center, Decoded,
};
pub use event::{Category, ChordRoot, Emotion, Event, TrackKind};
pub use grammar::{GrammarError, GrammarState};
pub use vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("{0} is not in the vocabulary")]
    NotInVocabulary(String),
    #[error("vocabulary file does not match: {0}")]
    VocabularyMismatch(String),
    #[error("representation needs a key but the lead sheet has none")]
    MissingKey,
    #[error("lead sheet has {lead} bars but the performance has {performance}")]
    Alignment { lead: u32, performance: u32 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("decoded track is invalid: {0}")]
    Track(#[from] crate::midi_io::MidiError),
    #[error("token file line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Pitch representation used for note and chord tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Repr {
    /// Absolute pitches, no key token.
    Remi = 0,
    /// Absolute pitches after a key token.
    RemiPlusKey = 1,
    /// Octave plus key-relative degree.
    Functional = 2,
}

impl Repr {
    pub const ALL: [Repr; 3] = [Repr::Remi, Repr::RemiPlusKey, Repr::Functional];

    pub fn has_key(self) -> bool {
        self != Repr::Remi
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Repr::Remi => "remi",
            Repr::RemiPlusKey => "remi+key",
            Repr::Functional => "functional",
        }
    }
}

impl fmt::Display for Repr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Repr {
    type Err = TokenizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| TokenizerError::InvalidInput(format!("unknown representation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    LeadSheet = 0,
    Performance = 1,
}

impl Layout {
    pub const ALL: [Layout; 2] = [Layout::LeadSheet, Layout::Performance];

    pub fn as_str(self) -> &'static str {
        match self {
            Layout::LeadSheet => "lead-sheet",
            Layout::Performance => "performance",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layout {
    type Err = TokenizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| TokenizerError::InvalidInput(format!("unknown layout {s:?}")))
    }
}

/// A token sequence tagged with the vocabulary it belongs to.
///
/// Text form: a `# repr=<repr> layout=<layout>` header, then one token per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub repr: Repr,
    pub layout: Layout,
    pub events: Vec<Event>,
}

impl TokenSequence {
    pub fn new(repr: Repr, layout: Layout, events: Vec<Event>) -> Self {
        Self { repr, layout, events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn vocabulary(&self) -> &'static Vocabulary {
        Vocabulary::shared(self.repr, self.layout)
    }

    pub fn ids(&self) -> Result<Vec<u32>, TokenizerError> {
        self.vocabulary().encode(&self.events)
    }

    pub fn from_ids(repr: Repr, layout: Layout, ids: &[u32]) -> Result<Self, TokenizerError> {
        let events = Vocabulary::shared(repr, layout).decode_ids(ids)?;
        Ok(Self::new(repr, layout, events))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# repr={} layout={}\n", self.repr, self.layout);
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, message: String| TokenizerError::Format {
            line: line + 1,
            message,
        };
        let (_, header) = lines.next().ok_or_else(|| bad(0, "empty file".into()))?;
        let mut repr = None;
        let mut layout = None;
        for field in header
            .strip_prefix('#')
            .ok_or_else(|| bad(0, "missing header".into()))?
            .split_whitespace()
        {
            match field.split_once('=') {
                Some(("repr", v)) => repr = Some(v.parse().map_err(|e: TokenizerError| bad(0, e.to_string()))?),
                Some(("layout", v)) => layout = Some(v.parse().map_err(|e: TokenizerError| bad(0, e.to_string()))?),
                _ => return Err(bad(0, format!("unexpected header field {field:?}"))),
            }
        }
        let repr = repr.ok_or_else(|| bad(0, "header lacks repr".into()))?;
        let layout = layout.ok_or_else(|| bad(0, "header lacks layout".into()))?;
        let vocab = Vocabulary::shared(repr, layout);
        let mut events = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let ev: Event = line.parse().map_err(|e: TokenizerError| bad(i, e.to_string()))?;
            if vocab.id(&ev).is_none() {
                return Err(bad(i, format!("{line} is not in the {repr} {layout} vocabulary")));
            }
            events.push(ev);
        }
        Ok(Self::new(repr, layout, events))
    }
}
