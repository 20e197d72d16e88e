//! Two-stage emotion-conditioned generation.
//!
//! Stage 1 samples a lead sheet `Emotion_{valence} Key ... EOS` from a lead
//! sheet model. Stage 2 rebuilds the interleaved performance context bar by
//! bar: the lead sheet bar is copied verbatim into the `Track_M` half and
//! the `Track_X` half is sampled until the model closes the bar. Bar `i`
//! of the performance therefore only sees lead sheet bars `0..=i`.

pub mod bridge;
pub mod ngram;
pub mod sampler;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::theory::Mode;
use crate::tokenizer::{
    Category, Emotion, Event, GrammarError, GrammarState, Layout, Repr, TokenSequence, TokenizerError, TrackKind,
    Vocabulary,
};

pub use bridge::{BridgeModel, StubMode};
pub use ngram::{NGramConfig, NGramModel};
pub use sampler::{nucleus, sample_next, SamplerConfig};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("invalid request: {0}")]
    Request(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("bridge error: {0}")]
    Bridge(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Autoregressive next-token distribution over a fixed vocabulary.
pub trait SequenceModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Probabilities for the token following `context`; non-negative and
    /// summing to 1.
    fn next_distribution(&self, context: &[u32]) -> Result<Vec<f64>, GenerationError>;
}

impl<M: SequenceModel + ?Sized> SequenceModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_distribution(&self, context: &[u32]) -> Result<Vec<f64>, GenerationError> {
        (**self).next_distribution(context)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformModel {
    pub size: usize,
}

impl SequenceModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn next_distribution(&self, _context: &[u32]) -> Result<Vec<f64>, GenerationError> {
        Ok(vec![1.0 / self.size as f64; self.size])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllReport {
    /// Total negative log-likelihood in nats; infinite if some token had
    /// zero probability.
    pub nll: f64,
    pub tokens: usize,
    pub perplexity: f64,
}

impl NllReport {
    fn new(nll: f64, tokens: usize) -> Self {
        let perplexity = if tokens == 0 { 1.0 } else { (nll / tokens as f64).exp() };
        Self {
            nll,
            tokens,
            perplexity,
        }
    }
}

fn token_nll(model: &dyn SequenceModel, ids: &[u32]) -> Result<f64, GenerationError> {
    let mut nll = 0.0;
    for t in 0..ids.len() {
        let dist = model.next_distribution(&ids[..t])?;
        let p = dist
            .get(ids[t] as usize)
            .copied()
            .ok_or_else(|| GenerationError::Model(format!("token id {} outside the model vocabulary", ids[t])))?;
        nll -= p.ln();
    }
    Ok(nll)
}

/// `nll = -Σ ln p(token | prefix)`, `perplexity = exp(nll / length)`.
pub fn evaluate_nll(model: &dyn SequenceModel, seq: &TokenSequence) -> Result<NllReport, GenerationError> {
    let ids = seq.ids()?;
    Ok(NllReport::new(token_nll(model, &ids)?, ids.len()))
}

/// Token-weighted NLL over a corpus.
pub fn evaluate_corpus_nll(model: &dyn SequenceModel, corpus: &[TokenSequence]) -> Result<NllReport, GenerationError> {
    let mut nll = 0.0;
    let mut tokens = 0;
    for seq in corpus {
        let r = evaluate_nll(model, seq)?;
        nll += r.nll;
        tokens += r.tokens;
    }
    Ok(NllReport::new(nll, tokens))
}

/// Output of one generation call.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub sequence: TokenSequence,
    /// The length budget ran out and the sequence was closed by the
    /// deterministic closing procedure.
    pub truncated: bool,
    /// Grammar-valid. Always true with the grammar mask on.
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadOptions {
    pub sampler: SamplerConfig,
    /// Token budget including the prefix.
    pub max_tokens: usize,
    pub max_bars: Option<u32>,
    /// Restrict the key to major keys for positive and minor keys for
    /// negative valence.
    pub key_gate: bool,
}

impl LeadOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            sampler: SamplerConfig::stage1(seed),
            max_tokens: 1024,
            max_bars: Some(16),
            key_gate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceOptions {
    pub sampler: SamplerConfig,
    /// Sampled tokens allowed in one `Track_X` bar.
    pub bar_budget: usize,
}

impl PerformanceOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            sampler: SamplerConfig::stage2(seed),
            bar_budget: 256,
        }
    }
}

/// Both stages at once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationRequest {
    pub valence: Emotion,
    pub quadrant: Emotion,
    pub lead: LeadOptions,
    pub performance: PerformanceOptions,
}

impl GenerationRequest {
    /// Request for `quadrant` with the matching valence and default options.
    pub fn for_quadrant(quadrant: Emotion, seed: u64) -> Result<Self, GenerationError> {
        if !quadrant.is_quadrant() {
            return Err(GenerationError::Request(format!("{quadrant} is not a quadrant")));
        }
        Ok(Self {
            valence: quadrant.valence(),
            quadrant,
            lead: LeadOptions::new(seed),
            performance: PerformanceOptions::new(seed.wrapping_add(1)),
        })
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if !matches!(self.valence, Emotion::Positive | Emotion::Negative) {
            return Err(GenerationError::Request(format!(
                "valence must be Positive or Negative, got {}",
                self.valence
            )));
        }
        check_quadrant(self.valence, self.quadrant)?;
        self.lead.sampler.validate()?;
        self.performance.sampler.validate()
    }
}

/// Q1/Q4 go with positive lead sheets, Q2/Q3 with negative ones; a lead
/// sheet without valence accepts any quadrant.
pub fn check_quadrant(valence: Emotion, quadrant: Emotion) -> Result<(), GenerationError> {
    if !quadrant.is_quadrant() {
        return Err(GenerationError::Request(format!("{quadrant} is not a quadrant")));
    }
    if valence != Emotion::None && quadrant.valence() != valence {
        return Err(GenerationError::Request(format!(
            "quadrant {quadrant} is inconsistent with a {valence} lead sheet"
        )));
    }
    Ok(())
}

const CLOSING_ORDER: [Category; 13] = [
    Category::Eos,
    Category::Track,
    Category::Duration,
    Category::Velocity,
    Category::Degree,
    Category::Bar,
    Category::Pitch,
    Category::Octave,
    Category::Chord,
    Category::SubBeat,
    Category::Tempo,
    Category::Emotion,
    Category::Key,
];

/// Deterministic completion step: the lowest legal id of the first
/// category in [`CLOSING_ORDER`] that has one.
fn closing_pick(vocab: &Vocabulary, legal: &[u32]) -> Option<u32> {
    CLOSING_ORDER.iter().find_map(|&c| {
        let range = vocab.category_range(c);
        legal.iter().copied().find(|id| range.contains(id))
    })
}

fn gate_allows(ev: &Event, valence: Emotion, gate: bool) -> bool {
    match (ev, gate, valence) {
        (Event::Key(k), true, Emotion::Positive) => k.mode == Mode::Major,
        (Event::Key(k), true, Emotion::Negative) => k.mode == Mode::Minor,
        _ => true,
    }
}

/// Sequence under construction, tracking grammar state while it stays valid.
struct Builder<'a> {
    vocab: &'a Vocabulary,
    state: Option<GrammarState>,
    ids: Vec<u32>,
    events: Vec<Event>,
}

impl<'a> Builder<'a> {
    fn new(vocab: &'a Vocabulary, state: GrammarState) -> Self {
        Self {
            vocab,
            state: Some(state),
            ids: Vec::new(),
            events: Vec::new(),
        }
    }

    fn force(&mut self, ev: Event) -> Result<(), GenerationError> {
        let id = self
            .vocab
            .id(&ev)
            .ok_or_else(|| TokenizerError::NotInVocabulary(ev.to_string()))?;
        if let Some(st) = self.state.as_mut() {
            st.push(ev)?;
        }
        self.ids.push(id);
        self.events.push(ev);
        Ok(())
    }

    /// Appends a sampled token; an illegal one (unmasked mode) ends grammar
    /// tracking.
    fn push_sampled(&mut self, id: u32) {
        let ev = self.vocab.events()[id as usize];
        if let Some(st) = self.state.as_mut() {
            if st.push(ev).is_err() {
                self.state = None;
            }
        }
        self.ids.push(id);
        self.events.push(ev);
    }

    /// Candidate ids: legal ones under the mask, otherwise the whole
    /// vocabulary. `keep` filters both.
    fn candidates(&self, mask: bool, keep: impl Fn(&Event) -> bool) -> Vec<u32> {
        let events = self.vocab.events();
        let pool: Vec<u32> = match (&self.state, mask) {
            (Some(st), true) => st.legal_ids(self.vocab),
            _ => (0..events.len() as u32).collect(),
        };
        pool.into_iter().filter(|&id| keep(&events[id as usize])).collect()
    }

    fn closing(&self, keep: impl Fn(&Event) -> bool) -> Option<u32> {
        let legal = self.candidates(true, keep);
        match self.state {
            Some(_) => closing_pick(self.vocab, &legal),
            None => None,
        }
    }

    fn sample(
        &self,
        model: &dyn SequenceModel,
        cfg: &SamplerConfig,
        candidates: &[u32],
        rng: &mut ChaCha8Rng,
    ) -> Result<u32, GenerationError> {
        let dist = model.next_distribution(&self.ids)?;
        if dist.len() != self.vocab.len() {
            return Err(GenerationError::Model(format!(
                "model returned {} probabilities for a vocabulary of {}",
                dist.len(),
                self.vocab.len()
            )));
        }
        sample_next(&dist, cfg.temperature, cfg.top_p, candidates, rng)
    }

    fn finish(self, repr: Repr, layout: Layout, truncated: bool) -> Generated {
        let sequence = TokenSequence::new(repr, layout, self.events);
        let valid = GrammarState::validate(repr, layout, &sequence.events).is_ok();
        Generated {
            sequence,
            truncated,
            valid,
        }
    }
}

fn check_model(model: &dyn SequenceModel, vocab: &Vocabulary) -> Result<(), GenerationError> {
    if model.vocab_size() != vocab.len() {
        return Err(GenerationError::Model(format!(
            "model vocabulary has {} tokens, {}/{} needs {}",
            model.vocab_size(),
            vocab.repr(),
            vocab.layout(),
            vocab.len()
        )));
    }
    Ok(())
}

/// Stage 1: samples `Emotion_{valence} [Key] bars... EOS`.
pub fn generate_lead_sheet(
    model: &dyn SequenceModel,
    repr: Repr,
    valence: Emotion,
    opts: &LeadOptions,
) -> Result<Generated, GenerationError> {
    opts.sampler.validate()?;
    if valence.is_quadrant() {
        return Err(GenerationError::Request(format!(
            "lead sheets take a valence, not the quadrant {valence}"
        )));
    }
    let vocab = Vocabulary::shared(repr, Layout::LeadSheet);
    check_model(model, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.sampler.seed);
    let cfg = opts.sampler;
    let keep = |ev: &Event| gate_allows(ev, valence, opts.key_gate);
    let mut b = Builder::new(
        vocab,
        GrammarState::new(repr, Layout::LeadSheet).with_bar_limit(opts.max_bars),
    );
    b.force(Event::Emotion(valence))?;
    let mut truncated = false;
    while b.events.last() != Some(&Event::Eos) {
        let id = if b.ids.len() + 1 >= opts.max_tokens {
            truncated = true;
            match b.closing(keep) {
                Some(id) => id,
                None => {
                    b.events.push(Event::Eos);
                    break;
                }
            }
        } else {
            let cands = b.candidates(cfg.grammar_mask, keep);
            b.sample(model, &cfg, &cands, &mut rng)?
        };
        b.push_sampled(id);
    }
    Ok(b.finish(repr, Layout::LeadSheet, truncated))
}

/// Emotion, key event and per-bar bodies of a lead sheet.
type LeadParts = (Emotion, Option<Event>, Vec<Vec<Event>>);

/// Splits a lead sheet into its prefix key and per-bar bodies.
fn lead_bars(lead: &TokenSequence) -> Result<LeadParts, GenerationError> {
    if lead.layout != Layout::LeadSheet {
        return Err(GenerationError::Request("stage 2 needs a lead-sheet sequence".into()));
    }
    GrammarState::validate(lead.repr, lead.layout, &lead.events)?;
    let Some(Event::Emotion(emotion)) = lead.events.first().copied() else {
        unreachable!("validated sequences start with an emotion");
    };
    let mut rest = &lead.events[1..];
    let key = match rest.first() {
        Some(k @ Event::Key(_)) => {
            rest = &rest[1..];
            Some(*k)
        }
        _ => None,
    };
    let mut bars: Vec<Vec<Event>> = Vec::new();
    for ev in rest {
        match ev {
            Event::Bar => bars.push(Vec::new()),
            Event::Eos => break,
            other => bars.last_mut().expect("validated: content follows a bar").push(*other),
        }
    }
    Ok((emotion, key, bars))
}

/// Stage 2: the performance for `lead` under `quadrant`.
pub fn generate_performance(
    model: &dyn SequenceModel,
    lead: &TokenSequence,
    quadrant: Emotion,
    opts: &PerformanceOptions,
) -> Result<Generated, GenerationError> {
    opts.sampler.validate()?;
    let (valence, key, bars) = lead_bars(lead)?;
    check_quadrant(valence, quadrant)?;
    let repr = lead.repr;
    let vocab = Vocabulary::shared(repr, Layout::Performance);
    check_model(model, vocab)?;
    let cfg = opts.sampler;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = bars.len();
    let state = GrammarState::new(repr, Layout::Performance).with_bar_limit(Some(n as u32));
    let mut b = Builder::new(vocab, state);
    b.force(Event::Emotion(quadrant))?;
    if let Some(k) = key {
        b.force(k)?;
    }
    let mut truncated = false;
    for (i, body) in bars.iter().enumerate() {
        let last = i + 1 == n;
        b.force(Event::Track(TrackKind::M))?;
        b.force(Event::Bar)?;
        for ev in body {
            b.force(*ev)?;
        }
        b.force(Event::Track(TrackKind::X))?;
        b.force(Event::Bar)?;
        let keep = |ev: &Event| match ev {
            Event::Eos => last,
            Event::Track(TrackKind::M) => !last,
            _ => true,
        };
        let mut steps = 0;
        loop {
            let id = if steps >= opts.bar_budget {
                truncated = true;
                match b.closing(keep) {
                    Some(id) => id,
                    None => break,
                }
            } else {
                let cands = b.candidates(cfg.grammar_mask, keep);
                b.sample(model, &cfg, &cands, &mut rng)?
            };
            match vocab.events()[id as usize] {
                Event::Track(TrackKind::M) => break,
                Event::Eos => {
                    b.push_sampled(id);
                    break;
                }
                _ => {
                    b.push_sampled(id);
                    steps += 1;
                }
            }
        }
    }
    if b.events.last() != Some(&Event::Eos) {
        match b.state {
            Some(_) => b.force(Event::Eos)?,
            None => b.events.push(Event::Eos),
        }
    }
    Ok(b.finish(repr, Layout::Performance, truncated))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStage {
    pub lead: Generated,
    pub performance: Generated,
}

/// Runs stage 1 with `lead_model`, then stage 2 on its output.
pub fn generate(
    lead_model: &dyn SequenceModel,
    performance_model: &dyn SequenceModel,
    repr: Repr,
    request: &GenerationRequest,
) -> Result<TwoStage, GenerationError> {
    request.validate()?;
    let lead = generate_lead_sheet(lead_model, repr, request.valence, &request.lead)?;
    if !lead.valid {
        return Err(GenerationError::Request(
            "stage 1 produced an invalid lead sheet; enable the grammar mask".into(),
        ));
    }
    let performance = generate_performance(
        performance_model,
        &lead.sequence,
        request.quadrant,
        &request.performance,
    )?;
    Ok(TwoStage { lead, performance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_perplexity_is_vocab_size() {
        let seq = TokenSequence::from_text("# repr=remi layout=lead-sheet\nEmotion_None\nBar\nEOS\n").unwrap();
        let v = seq.vocabulary().len();
        let r = evaluate_nll(&UniformModel { size: v }, &seq).unwrap();
        assert!((r.perplexity - v as f64).abs() < 1e-9);
        assert_eq!(r.tokens, 3);
    }

    #[test]
    fn quadrant_checks() {
        assert!(check_quadrant(Emotion::Positive, Emotion::Q1).is_ok());
        assert!(check_quadrant(Emotion::Positive, Emotion::Q4).is_ok());
        assert!(check_quadrant(Emotion::Negative, Emotion::Q1).is_err());
        assert!(check_quadrant(Emotion::None, Emotion::Q3).is_ok());
        assert!(check_quadrant(Emotion::Negative, Emotion::Negative).is_err());
    }

    #[test]
    fn closing_terminates_from_any_walk_prefix() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for repr in Repr::ALL {
            for layout in Layout::ALL {
                let vocab = Vocabulary::shared(repr, layout);
                for _ in 0..30 {
                    let full = crate::synth::random_walk(repr, layout, 4, &mut rng);
                    let cut = rng.random_range(0..full.len());
                    let mut st = GrammarState::new(repr, layout).with_bar_limit(Some(4));
                    for ev in &full.events[..cut] {
                        st.push(*ev).unwrap();
                    }
                    let mut steps = 0;
                    while !st.is_done() {
                        let id = closing_pick(vocab, &st.legal_ids(vocab)).unwrap();
                        st.push(vocab.events()[id as usize]).unwrap();
                        steps += 1;
                        assert!(steps < 400, "closing does not converge");
                    }
                }
            }
        }
    }
}
