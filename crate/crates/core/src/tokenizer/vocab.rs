use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use super::event::{
    Category, ChordRoot, Emotion, Event, TrackKind, MAX_DURATION, MAX_OCTAVE, SUB_BEATS, TEMPO_BINS, VELOCITY_BINS,
};
use super::{Layout, Repr, TokenizerError};
use crate::theory::{Chord, ChordQuality, Degree, Key, Pitch, PitchClass};

/// Bijective token ↔ id map for one (representation, layout) pair.
///
/// Ids follow the category order of [`Category::ALL`] and, within a
/// category, the natural value order, so a vocabulary is identical on
/// every run.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    repr: Repr,
    layout: Layout,
    events: Vec<Event>,
    ids: HashMap<Event, u32>,
    ranges: Vec<(Category, Range<u32>)>,
}

fn emotions(layout: Layout) -> Vec<Event> {
    let set: &[Emotion] = match layout {
        Layout::LeadSheet => &[Emotion::None, Emotion::Positive, Emotion::Negative],
        Layout::Performance => &Emotion::ALL,
    };
    set.iter().copied().map(Event::Emotion).collect()
}

fn category_events(cat: Category, repr: Repr, layout: Layout) -> Vec<Event> {
    let perf = layout == Layout::Performance;
    let functional = repr == Repr::Functional;
    match cat {
        Category::Emotion => emotions(layout),
        Category::Key if repr.has_key() => Key::all().map(Event::Key).collect(),
        Category::Bar => vec![Event::Bar],
        Category::SubBeat => (0..SUB_BEATS).map(Event::SubBeat).collect(),
        Category::Tempo if perf => (0..TEMPO_BINS).map(Event::Tempo).collect(),
        Category::Chord => {
            let roots: Vec<ChordRoot> = if functional {
                Degree::vocabulary().map(ChordRoot::Functional).collect()
            } else {
                PitchClass::all().map(ChordRoot::Absolute).collect()
            };
            roots
                .into_iter()
                .flat_map(|r| {
                    ChordQuality::ALL
                        .into_iter()
                        .map(move |q| Event::Chord(Chord::new(r, q)))
                })
                .collect()
        }
        Category::Octave if functional => (0..=MAX_OCTAVE).map(Event::Octave).collect(),
        Category::Degree if functional => Degree::vocabulary().map(Event::Degree).collect(),
        Category::Pitch if !functional => Pitch::all().map(Event::Pitch).collect(),
        Category::Duration => (1..=MAX_DURATION).map(Event::Duration).collect(),
        Category::Velocity if perf => (0..VELOCITY_BINS).map(Event::Velocity).collect(),
        Category::Track if perf => vec![Event::Track(TrackKind::M), Event::Track(TrackKind::X)],
        Category::Eos => vec![Event::Eos],
        _ => Vec::new(),
    }
}

impl Vocabulary {
    pub fn build(repr: Repr, layout: Layout) -> Self {
        let mut events = Vec::new();
        let mut ranges = Vec::new();
        for cat in Category::ALL {
            let start = events.len() as u32;
            events.extend(category_events(cat, repr, layout));
            let end = events.len() as u32;
            if end > start {
                ranges.push((cat, start..end));
            }
        }
        let ids = events.iter().enumerate().map(|(i, e)| (*e, i as u32)).collect();
        Self {
            repr,
            layout,
            events,
            ids,
            ranges,
        }
    }

    /// Process-wide cached instance.
    pub fn shared(repr: Repr, layout: Layout) -> &'static Vocabulary {
        static CACHE: [OnceLock<Vocabulary>; 6] = [const { OnceLock::new() }; 6];
        let slot = repr as usize * 2 + layout as usize;
        CACHE[slot].get_or_init(|| Vocabulary::build(repr, layout))
    }

    pub fn repr(&self) -> Repr {
        self.repr
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn id(&self, ev: &Event) -> Option<u32> {
        self.ids.get(ev).copied()
    }

    pub fn event(&self, id: u32) -> Option<Event> {
        self.events.get(id as usize).copied()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn category_range(&self, cat: Category) -> Range<u32> {
        self.ranges
            .iter()
            .find(|(c, _)| *c == cat)
            .map(|(_, r)| r.clone())
            .unwrap_or(0..0)
    }

    pub fn category_counts(&self) -> Vec<(Category, usize)> {
        self.ranges.iter().map(|(c, r)| (*c, r.len())).collect()
    }

    pub fn encode(&self, events: &[Event]) -> Result<Vec<u32>, TokenizerError> {
        events
            .iter()
            .map(|e| self.id(e).ok_or_else(|| TokenizerError::NotInVocabulary(e.to_string())))
            .collect()
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Result<Vec<Event>, TokenizerError> {
        ids.iter()
            .map(|&i| {
                self.event(i)
                    .ok_or_else(|| TokenizerError::NotInVocabulary(format!("id {i}")))
            })
            .collect()
    }

    /// `token<TAB>id` per line in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.events.iter().enumerate() {
            let _ = writeln!(out, "{e}\t{i}");
        }
        out
    }

    /// Parses a vocabulary file and checks it matches the canonical vocabulary.
    pub fn from_tsv(text: &str, repr: Repr, layout: Layout) -> Result<Self, TokenizerError> {
        let v = Self::build(repr, layout);
        if text != v.to_tsv() {
            let line = text
                .lines()
                .zip(v.to_tsv().lines())
                .position(|(a, b)| a != b)
                .unwrap_or(text.lines().count().min(v.len()));
            return Err(TokenizerError::VocabularyMismatch(format!(
                "first difference at line {}",
                line + 1
            )));
        }
        Ok(v)
    }

    /// Hex SHA-256 of [`Vocabulary::to_tsv`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_tsv().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// TSV table `category<TAB>count`, with a final total row.
    pub fn report(&self) -> String {
        let mut out = String::from("category\tcount\n");
        for (c, n) in self.category_counts() {
            let _ = writeln!(out, "{c}\t{n}");
        }
        let _ = writeln!(out, "total\t{}", self.len());
        out
    }
}
