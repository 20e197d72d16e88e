//! Interpolated add-k n-gram language model over token ids.
//!
//! Model file (text, deterministic):
//!
//! ```text
//! tonal-ngram 1
//! order <n>
//! smoothing <k>
//! lambda <l>
//! repr <repr>
//! layout <layout>
//! vocab <sha256>
//! size <V>
//! <context length>\t<space-separated context ids>\t<id>:<count> ...
//! ```
//!
//! Contexts are padded on the left with the begin-of-sequence id `V`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{GenerationError, SequenceModel};
use crate::tokenizer::{Layout, Repr, TokenSequence, Vocabulary};

const MAGIC: &str = "tonal-ngram 1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGramConfig {
    pub order: usize,
    /// Add-k constant applied at every order.
    pub smoothing: f64,
    /// Weight of each order against the next lower one.
    pub lambda: f64,
}

impl Default for NGramConfig {
    fn default() -> Self {
        Self {
            order: 4,
            smoothing: 0.01,
            lambda: 0.8,
        }
    }
}

type Table = BTreeMap<Vec<u32>, BTreeMap<u32, u64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    config: NGramConfig,
    repr: Repr,
    layout: Layout,
    vocab_hash: String,
    size: usize,
    /// `tables[j]` maps a length-`j` context to next-token counts.
    tables: Vec<Table>,
}

impl NGramModel {
    pub fn train(corpus: &[TokenSequence], config: NGramConfig) -> Result<Self, GenerationError> {
        let first = corpus
            .first()
            .ok_or_else(|| GenerationError::Corpus("empty training corpus".into()))?;
        if config.order == 0 {
            return Err(GenerationError::Corpus("order must be at least 1".into()));
        }
        if !(config.smoothing >= 0.0 && (0.0..=1.0).contains(&config.lambda)) {
            return Err(GenerationError::Corpus(
                "smoothing must be >= 0 and lambda in [0, 1]".into(),
            ));
        }
        let (repr, layout) = (first.repr, first.layout);
        if let Some(bad) = corpus.iter().find(|s| s.repr != repr || s.layout != layout) {
            return Err(GenerationError::Corpus(format!(
                "mixed vocabularies: {repr}/{layout} and {}/{}",
                bad.repr, bad.layout
            )));
        }
        let vocab = Vocabulary::shared(repr, layout);
        let size = vocab.len();
        let bos = size as u32;
        let mut tables: Vec<Table> = vec![BTreeMap::new(); config.order];
        for seq in corpus {
            let ids = seq.ids()?;
            let padded: Vec<u32> = std::iter::repeat_n(bos, config.order - 1)
                .chain(ids.iter().copied())
                .collect();
            for t in 0..ids.len() {
                let pos = t + config.order - 1;
                for (j, table) in tables.iter_mut().enumerate() {
                    let ctx = padded[pos - j..pos].to_vec();
                    *table.entry(ctx).or_default().entry(padded[pos]).or_default() += 1;
                }
            }
        }
        Ok(Self {
            config,
            repr,
            layout,
            vocab_hash: vocab.hash(),
            size,
            tables,
        })
    }

    pub fn config(&self) -> NGramConfig {
        self.config
    }

    pub fn repr(&self) -> Repr {
        self.repr
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let c = &self.config;
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "order {}", c.order);
        let _ = writeln!(out, "smoothing {}", c.smoothing);
        let _ = writeln!(out, "lambda {}", c.lambda);
        let _ = writeln!(out, "repr {}", self.repr);
        let _ = writeln!(out, "layout {}", self.layout);
        let _ = writeln!(out, "vocab {}", self.vocab_hash);
        let _ = writeln!(out, "size {}", self.size);
        for (j, table) in self.tables.iter().enumerate() {
            for (ctx, next) in table {
                let ctx: Vec<String> = ctx.iter().map(u32::to_string).collect();
                let next: Vec<String> = next.iter().map(|(w, n)| format!("{w}:{n}")).collect();
                let _ = writeln!(out, "{j}\t{}\t{}", ctx.join(" "), next.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GenerationError> {
        let bad = |line: usize, message: &str| GenerationError::Format {
            line: line + 1,
            message: message.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&MAGIC) {
            return Err(bad(0, "not an n-gram model file"));
        }
        let field = |i: usize, name: &str| -> Result<&str, GenerationError> {
            lines
                .get(i)
                .and_then(|l| l.strip_prefix(name))
                .and_then(|l| l.strip_prefix(' '))
                .ok_or_else(|| bad(i, &format!("expected `{name}`")))
        };
        let num = |i: usize, name: &str| -> Result<f64, GenerationError> {
            field(i, name)?.parse().map_err(|_| bad(i, &format!("bad {name}")))
        };
        let order = num(1, "order")? as usize;
        let config = NGramConfig {
            order,
            smoothing: num(2, "smoothing")?,
            lambda: num(3, "lambda")?,
        };
        let repr: Repr = field(4, "repr")?.parse().map_err(|_| bad(4, "bad repr"))?;
        let layout: Layout = field(5, "layout")?.parse().map_err(|_| bad(5, "bad layout"))?;
        let vocab_hash = field(6, "vocab")?.to_string();
        let size = num(7, "size")? as usize;
        let vocab = Vocabulary::shared(repr, layout);
        if vocab.hash() != vocab_hash || vocab.len() != size {
            return Err(GenerationError::Model(
                "model was trained on a different vocabulary".into(),
            ));
        }
        if order == 0 {
            return Err(bad(1, "order must be at least 1"));
        }
        let mut tables: Vec<Table> = vec![BTreeMap::new(); order];
        for (i, line) in lines.iter().enumerate().skip(8) {
            let mut parts = line.split('\t');
            let (Some(j), Some(ctx), Some(next), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad(i, "expected three tab-separated fields"));
            };
            let j: usize = j.parse().map_err(|_| bad(i, "bad context length"))?;
            let ctx: Vec<u32> = ctx
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(i, "bad context id")))
                .collect::<Result<_, _>>()?;
            if j >= order || ctx.len() != j || ctx.iter().any(|&c| c as usize > size) {
                return Err(bad(i, "context does not fit the model order"));
            }
            let mut counts = BTreeMap::new();
            for item in next.split_whitespace() {
                let (w, n) = item.split_once(':').ok_or_else(|| bad(i, "expected id:count"))?;
                let w: u32 = w.parse().map_err(|_| bad(i, "bad id"))?;
                let n: u64 = n.parse().map_err(|_| bad(i, "bad count"))?;
                if w as usize >= size {
                    return Err(bad(i, "id outside the vocabulary"));
                }
                counts.insert(w, n);
            }
            tables[j].insert(ctx, counts);
        }
        Ok(Self {
            config,
            repr,
            layout,
            vocab_hash,
            size,
            tables,
        })
    }
}

impl SequenceModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.size
    }

    /// `P_j(w) = λ (c(h_j, w) + k) / (c(h_j) + kV) + (1 - λ) P_{j-1}(w)` for
    /// seen contexts `h_j` of length `j`, `P_{j-1}` otherwise, starting from
    /// the uniform distribution.
    fn next_distribution(&self, context: &[u32]) -> Result<Vec<f64>, GenerationError> {
        let v = self.size;
        let bos = v as u32;
        let n = self.config.order;
        let (k, lambda) = (self.config.smoothing, self.config.lambda);
        let padded: Vec<u32> = std::iter::repeat_n(bos, n - 1).chain(context.iter().copied()).collect();
        let end = padded.len();
        let mut p = vec![1.0 / v as f64; v];
        for j in 0..n {
            let Some(counts) = self.tables[j].get(&padded[end - j..end]) else {
                continue;
            };
            let total: u64 = counts.values().sum();
            let denom = total as f64 + k * v as f64;
            for (w, pw) in p.iter_mut().enumerate() {
                let c = counts.get(&(w as u32)).copied().unwrap_or(0) as f64;
                *pw = lambda * (c + k) / denom + (1.0 - lambda) * *pw;
            }
        }
        Ok(p)
    }
}
