//! `tonal`: analyze MIDI, tokenize a manifest corpus, train n-gram models,
//! run two-stage emotion-conditioned generation and evaluate the results.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tonal_core::tokenizer::{Emotion, Layout, Repr};

#[derive(Debug, Parser)]
#[command(name = "tonal", version, about = "Functional music representation toolkit")]
pub struct Cli {
    /// Default seed for commands that take one.
    #[arg(long, global = true, env = "TONAL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-file work (0 = all cores).
    #[arg(long, short = 'j', global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReprArg {
    Remi,
    #[value(name = "remi+key")]
    RemiKey,
    Functional,
}

impl From<ReprArg> for Repr {
    fn from(r: ReprArg) -> Self {
        match r {
            ReprArg::Remi => Repr::Remi,
            ReprArg::RemiKey => Repr::RemiPlusKey,
            ReprArg::Functional => Repr::Functional,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    LeadSheet,
    Performance,
    Both,
}

impl LayoutArg {
    pub fn layouts(self) -> Vec<Layout> {
        match self {
            LayoutArg::LeadSheet => vec![Layout::LeadSheet],
            LayoutArg::Performance => vec![Layout::Performance],
            LayoutArg::Both => vec![Layout::LeadSheet, Layout::Performance],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ValenceArg {
    Positive,
    Negative,
}

impl From<ValenceArg> for Emotion {
    fn from(v: ValenceArg) -> Self {
        match v {
            ValenceArg::Positive => Emotion::Positive,
            ValenceArg::Negative => Emotion::Negative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuadrantArg {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl From<QuadrantArg> for Emotion {
    fn from(q: QuadrantArg) -> Self {
        match q {
            QuadrantArg::Q1 => Emotion::Q1,
            QuadrantArg::Q2 => Emotion::Q2,
            QuadrantArg::Q3 => Emotion::Q3,
            QuadrantArg::Q4 => Emotion::Q4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StubModeArg {
    Uniform,
    WrongLength,
    Silent,
}

/// Stage-1 sampling flags.
#[derive(Debug, Clone, Args)]
pub struct LeadSampling {
    #[arg(long, default_value_t = 1.2)]
    pub lead_temperature: f64,
    #[arg(long, default_value_t = 0.97)]
    pub lead_top_p: f64,
    /// Maximum lead-sheet bars.
    #[arg(long, default_value_t = 8)]
    pub max_bars: u32,
    /// Maximum lead-sheet tokens before the sequence is closed.
    #[arg(long, default_value_t = 1024)]
    pub max_tokens: usize,
    /// Allow any key for either valence.
    #[arg(long)]
    pub no_key_gate: bool,
}

/// Stage-2 sampling flags.
#[derive(Debug, Clone, Args)]
pub struct PerformanceSampling {
    #[arg(long, default_value_t = 1.1)]
    pub performance_temperature: f64,
    #[arg(long, default_value_t = 0.99)]
    pub performance_top_p: f64,
    /// Sampled tokens allowed per performance bar.
    #[arg(long, default_value_t = 256)]
    pub bar_budget: usize,
}

/// A model file or a bridge command.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct ModelArg {
    /// N-gram model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Command speaking the bridge protocol on stdin/stdout.
    #[arg(long)]
    pub bridge: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect key, melody and chords of MIDI files.
    Analyze {
        /// MIDI files or directories.
        inputs: Vec<PathBuf>,
    },
    /// Tokenize every clip of a manifest into train/valid token files.
    Tokenize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "functional")]
        repr: ReprArg,
        #[arg(long, value_enum, default_value = "both")]
        layout: LayoutArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an n-gram model on token files.
    Train {
        /// Token files or directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, default_value_t = 0.01)]
        smoothing: f64,
        #[arg(long, default_value_t = 0.8)]
        lambda: f64,
        /// Train only on sequences of this layout.
        #[arg(long, value_enum)]
        layout: Option<LayoutArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-stage generation: a lead sheet, then its performance.
    Generate {
        #[arg(long)]
        lead_model: PathBuf,
        #[arg(long)]
        performance_model: PathBuf,
        #[arg(long, value_enum)]
        quadrant: QuadrantArg,
        /// Optional; must agree with the quadrant.
        #[arg(long, value_enum)]
        valence: Option<ValenceArg>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[command(flatten)]
        lead: LeadSampling,
        #[command(flatten)]
        performance: PerformanceSampling,
        /// Sample without the grammar mask (ablation).
        #[arg(long)]
        no_grammar_mask: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1 only: lead sheets for a valence.
    GenerateLead {
        #[command(flatten)]
        model: ModelArg,
        /// Vocabulary for a bridge model.
        #[arg(long, value_enum)]
        repr: Option<ReprArg>,
        #[arg(long, value_enum)]
        valence: ValenceArg,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[command(flatten)]
        sampling: LeadSampling,
        #[arg(long)]
        no_grammar_mask: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2 only: a performance for an existing lead-sheet token file.
    GeneratePerformance {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        lead: PathBuf,
        #[arg(long, value_enum)]
        quadrant: QuadrantArg,
        #[command(flatten)]
        sampling: PerformanceSampling,
        #[arg(long)]
        no_grammar_mask: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Key consistency, corpus statistics and key histograms of token files.
    Eval {
        /// Token files or directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Also report perplexity under this model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Write the reports here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a vocabulary's category counts, or its full token table.
    Vocab {
        #[arg(long, value_enum, default_value = "functional")]
        repr: ReprArg,
        #[arg(long, value_enum, default_value = "lead-sheet")]
        layout: LayoutArg,
        /// Print every token with its id.
        #[arg(long)]
        tokens: bool,
    },
    /// Write a synthetic emotion-labelled MIDI corpus and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        bars: u32,
    },
    /// Uniform bridge peer for testing.
    #[command(hide = true)]
    StubModel {
        #[arg(long, value_enum)]
        repr: ReprArg,
        #[arg(long, value_enum)]
        layout: LayoutArg,
        #[arg(long, value_enum, default_value = "uniform")]
        mode: StubModeArg,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
