//! Temperature and nucleus (top-p) sampling over a masked distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GenerationError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
    /// Restrict every step to the grammar's legal tokens.
    pub grammar_mask: bool,
}

impl SamplerConfig {
    /// Lead-sheet stage defaults.
    pub fn stage1(seed: u64) -> Self {
        Self {
            temperature: 1.2,
            top_p: 0.97,
            seed,
            grammar_mask: true,
        }
    }

    /// Performance stage defaults.
    pub fn stage2(seed: u64) -> Self {
        Self {
            temperature: 1.1,
            top_p: 0.99,
            seed,
            grammar_mask: true,
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GenerationError::Request(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GenerationError::Request(format!(
                "top-p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// The renormalised nucleus: `(id, probability)` pairs in descending
/// probability order (ties by ascending id).
///
/// Illegal ids are zeroed, the rest are sharpened or flattened by the
/// temperature in the log domain, and the shortest prefix reaching `top_p`
/// cumulative mass is kept. If every legal id has zero mass the nucleus is
/// uniform over `legal`.
pub fn nucleus(dist: &[f64], temperature: f64, top_p: f64, legal: &[u32]) -> Vec<(u32, f64)> {
    let mut scored: Vec<(u32, f64)> = legal
        .iter()
        .filter_map(|&id| {
            let p = dist.get(id as usize).copied().unwrap_or(0.0);
            (p > 0.0).then(|| (id, p.ln() / temperature))
        })
        .collect();
    if scored.is_empty() {
        if !legal.is_empty() {
            log::warn!(
                "all {} legal tokens have zero probability; sampling uniformly",
                legal.len()
            );
        }
        let u = 1.0 / legal.len() as f64;
        return legal.iter().map(|&id| (id, u)).collect();
    }
    let max = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in &mut scored {
        s.1 = (s.1 - max).exp();
        total += s.1;
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut cum = 0.0;
    let mut keep = scored.len();
    for (i, s) in scored.iter_mut().enumerate() {
        s.1 /= total;
        cum += s.1;
        if cum >= top_p - 1e-12 {
            keep = i + 1;
            break;
        }
    }
    scored.truncate(keep);
    let kept: f64 = scored.iter().map(|s| s.1).sum();
    for s in &mut scored {
        s.1 /= kept;
    }
    scored
}

/// Draws one id from the nucleus of `dist` restricted to `legal`.
pub fn sample_next<R: Rng + ?Sized>(
    dist: &[f64],
    temperature: f64,
    top_p: f64,
    legal: &[u32],
    rng: &mut R,
) -> Result<u32, GenerationError> {
    if legal.is_empty() {
        return Err(GenerationError::Request("no legal token to sample".into()));
    }
    let nuc = nucleus(dist, temperature, top_p, legal);
    let r: f64 = rng.random();
    let mut cum = 0.0;
    for &(id, p) in &nuc {
        cum += p;
        if r < cum {
            return Ok(id);
        }
    }
    Ok(nuc.last().expect("nucleus is non-empty").0)
}
