use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use tonal_core::analysis::{extract_lead_sheet_with, AnalysisReport, ChordConfig, Skyline};
use tonal_core::generation::bridge::serve_stub;
use tonal_core::generation::{
    check_quadrant, evaluate_corpus_nll, generate_lead_sheet, generate_performance, BridgeModel, Generated,
    LeadOptions, NGramConfig, NGramModel, PerformanceOptions, SamplerConfig, SequenceModel, StubMode,
};
use tonal_core::metrics::{corpus_stats, key_histogram, score_sample, KeyConsistencyReport};
use tonal_core::midi_io::{load_midi, midi_bytes, quantize, QuantizedTrack};
use tonal_core::synth::synthetic_corpus;
use tonal_core::tokenizer::{
    decode, encode_lead_sheet, encode_performance, Emotion, Event, Layout, Repr, TokenSequence, Vocabulary,
};

use crate::error::{io_err, CliError, Result};
use crate::manifest::{derive_seed, Clip, Manifest};
use crate::{Cli, Command, LayoutArg, LeadSampling, ModelArg, PerformanceSampling, StubModeArg};

const BRIDGE_TIMEOUT: Duration = Duration::from_secs(30);

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", cli.jobs)))?;
    let seed = cli.seed;
    pool.install(|| dispatch(cli.command, seed))
}

fn dispatch(command: Command, seed: u64) -> Result<()> {
    match command {
        Command::Analyze { inputs } => analyze(&inputs),
        Command::Tokenize {
            manifest,
            repr,
            layout,
            out,
        } => tokenize(&manifest, repr.into(), layout, &out, seed),
        Command::Train {
            inputs,
            order,
            smoothing,
            lambda,
            layout,
            out,
        } => train(
            &inputs,
            layout,
            NGramConfig {
                order,
                smoothing,
                lambda,
            },
            &out,
        ),
        Command::Generate {
            lead_model,
            performance_model,
            quadrant,
            valence,
            count,
            lead,
            performance,
            no_grammar_mask,
            out,
        } => {
            let quadrant: Emotion = quadrant.into();
            if let Some(v) = valence {
                let v: Emotion = v.into();
                if quadrant.valence() != v {
                    return Err(CliError::Usage(format!(
                        "--quadrant {quadrant} requires --valence {}",
                        quadrant.valence()
                    )));
                }
            }
            let lm = load_ngram(&lead_model)?;
            let pm = load_ngram(&performance_model)?;
            expect_layout(&lm, &lead_model, Layout::LeadSheet)?;
            expect_layout(&pm, &performance_model, Layout::Performance)?;
            if lm.repr() != pm.repr() {
                return Err(CliError::Usage(format!(
                    "lead model is {}, performance model is {}",
                    lm.repr(),
                    pm.repr()
                )));
            }
            generate_both(
                &lm,
                &pm,
                quadrant,
                count,
                &lead,
                &performance,
                !no_grammar_mask,
                &out,
                seed,
            )
        }
        Command::GenerateLead {
            model,
            repr,
            valence,
            count,
            sampling,
            no_grammar_mask,
            out,
        } => generate_leads(
            &model,
            repr.map(Into::into),
            valence.into(),
            count,
            &sampling,
            !no_grammar_mask,
            &out,
            seed,
        ),
        Command::GeneratePerformance {
            model,
            lead,
            quadrant,
            sampling,
            no_grammar_mask,
            out,
        } => generate_one_performance(&model, &lead, quadrant.into(), &sampling, !no_grammar_mask, &out, seed),
        Command::Eval { inputs, model, out } => eval(&inputs, model.as_deref(), out.as_deref()),
        Command::Vocab { repr, layout, tokens } => {
            for l in layout.layouts() {
                let v = Vocabulary::shared(repr.into(), l);
                if tokens {
                    print!("{}", v.to_tsv());
                } else {
                    println!("# {} {}", v.repr(), v.layout());
                    print!("{}", v.report());
                }
            }
            Ok(())
        }
        Command::Synth { out, count, bars } => synth(&out, count, bars, seed),
        Command::StubModel { repr, layout, mode } => {
            let layout = match layout {
                LayoutArg::LeadSheet => Layout::LeadSheet,
                LayoutArg::Performance => Layout::Performance,
                LayoutArg::Both => return Err(CliError::Usage("a stub serves exactly one layout".into())),
            };
            let vocab = Vocabulary::shared(repr.into(), layout);
            let mode = match mode {
                StubModeArg::Uniform => StubMode::Uniform,
                StubModeArg::WrongLength => StubMode::WrongLength,
                StubModeArg::Silent => StubMode::Silent,
            };
            let stdin = std::io::stdin();
            serve_stub(stdin.lock(), std::io::stdout().lock(), vocab.len(), &vocab.hash(), mode)
                .map_err(|e| CliError::Data(format!("stub peer: {e}")))
        }
    }
}

/// Files under `inputs` with one of `exts`, sorted. Explicit files are
/// taken whatever their extension.
fn collect_files(inputs: &[PathBuf], exts: &[&str]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, exts: &[&str], out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            if path.is_dir() {
                walk(&path, exts, out)?;
            } else if path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)))
            {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            walk(p, exts, &mut out)?;
        } else {
            out.push(p.clone());
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn load_track(path: &Path) -> Result<QuantizedTrack> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let raw = load_midi(&bytes).map_err(|e| CliError::in_file(path, e))?;
    quantize(&raw).map_err(|e| CliError::in_file(path, e))
}

fn read_tokens(path: &Path) -> Result<TokenSequence> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    TokenSequence::from_text(&text).map_err(|e| CliError::in_file(path, e))
}

fn load_ngram(path: &Path) -> Result<NGramModel> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    NGramModel::from_text(&text).map_err(|e| CliError::in_file(path, e))
}

fn expect_layout(m: &NGramModel, path: &Path, layout: Layout) -> Result<()> {
    if m.layout() != layout {
        return Err(CliError::Usage(format!(
            "{} is a {} model, expected {layout}",
            path.display(),
            m.layout()
        )));
    }
    Ok(())
}

fn analyze(inputs: &[PathBuf]) -> Result<()> {
    let files = collect_files(inputs, &["mid", "midi"])?;
    let reports: Vec<Result<String>> = files
        .par_iter()
        .map(|path| {
            let track = load_track(path)?;
            let lead = extract_lead_sheet_with(&track, &Skyline, &ChordConfig::default(), None)
                .map_err(|e| CliError::in_file(path, e))?;
            Ok(AnalysisReport::new(path.display().to_string(), &track, lead).to_string())
        })
        .collect();
    let mut failed = 0;
    for r in reports {
        match r {
            Ok(text) => println!("{text}"),
            Err(e) => {
                failed += 1;
                eprintln!("error: {e}");
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Data(format!("{failed} of {} files failed", files.len())));
    }
    Ok(())
}

/// `clips/a.mid` becomes `clips__a`.
fn stem(name: &str) -> String {
    Path::new(name)
        .with_extension("")
        .to_string_lossy()
        .replace(['/', '\\'], "__")
}

fn tokenize_clip(clip: &Clip, repr: Repr, layouts: &[Layout], seed: u64) -> Result<Vec<(Layout, TokenSequence)>> {
    let track = load_track(&clip.path)?;
    let lead = extract_lead_sheet_with(&track, &Skyline, &ChordConfig::default(), clip.key)
        .map_err(|e| CliError::in_file(&clip.path, e))?;
    let emotion = clip.emotion.unwrap_or(Emotion::None);
    layouts
        .iter()
        .map(|&layout| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{layout}/{}", clip.name)));
            let seq = match layout {
                Layout::LeadSheet => encode_lead_sheet(&lead, emotion.valence(), repr, &mut rng),
                Layout::Performance => {
                    let e = if emotion.is_quadrant() { emotion } else { Emotion::None };
                    encode_performance(&lead, &track, e, repr, &mut rng)
                }
            }
            .map_err(|e| CliError::in_file(&clip.path, e))?;
            Ok((layout, seq))
        })
        .collect()
}

fn tokenize(manifest_path: &Path, repr: Repr, layout: LayoutArg, out: &Path, default_seed: u64) -> Result<()> {
    let manifest = Manifest::load(manifest_path, default_seed)?;
    let layouts = layout.layouts();
    let train = manifest.training_set();
    let mut names = BTreeMap::new();
    for (i, c) in manifest.clips.iter().enumerate() {
        if let Some(prev) = names.insert(stem(&c.name), i) {
            return Err(CliError::Data(format!(
                "clips {:?} and {:?} map to the same output name",
                manifest.clips[prev].name, c.name
            )));
        }
    }
    let results: Vec<Result<Vec<(Layout, TokenSequence)>>> = manifest
        .clips
        .par_iter()
        .map(|c| tokenize_clip(c, repr, &layouts, manifest.seed))
        .collect();
    let mut split = String::from("clip\tsplit\n");
    let mut written = 0;
    let mut failed = 0;
    for (i, (clip, r)) in manifest.clips.iter().zip(results).enumerate() {
        let part = if train.contains(&i) { "train" } else { "valid" };
        match r {
            Ok(seqs) => {
                let _ = writeln!(split, "{}\t{part}", clip.name);
                for (layout, seq) in seqs {
                    write(
                        &out.join(part).join(format!("{}.{layout}.tok", stem(&clip.name))),
                        seq.to_text(),
                    )?;
                    written += 1;
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("error: {e}");
            }
        }
    }
    for l in &layouts {
        write(
            &out.join(format!("vocab.{l}.tsv")),
            Vocabulary::shared(repr, *l).to_tsv(),
        )?;
    }
    write(&out.join("split.tsv"), split)?;
    println!(
        "wrote {written} token files for {} clips to {}",
        manifest.clips.len() - failed,
        out.display()
    );
    if failed > 0 {
        return Err(CliError::Data(format!(
            "{failed} of {} clips failed",
            manifest.clips.len()
        )));
    }
    Ok(())
}

fn read_corpus(inputs: &[PathBuf]) -> Result<Vec<(PathBuf, TokenSequence)>> {
    let files = collect_files(inputs, &["tok"])?;
    files.par_iter().map(|p| Ok((p.clone(), read_tokens(p)?))).collect()
}

fn train(inputs: &[PathBuf], layout: Option<LayoutArg>, config: NGramConfig, out: &Path) -> Result<()> {
    let keep = layout.map(LayoutArg::layouts).unwrap_or_else(|| Layout::ALL.to_vec());
    let corpus: Vec<TokenSequence> = read_corpus(inputs)?
        .into_iter()
        .map(|c| c.1)
        .filter(|s| keep.contains(&s.layout))
        .collect();
    let model = NGramModel::train(&corpus, config)?;
    write(out, model.to_text())?;
    let tokens: usize = corpus.iter().map(TokenSequence::len).sum();
    println!(
        "trained order-{} {}/{} model on {} sequences ({tokens} tokens) -> {}",
        config.order,
        model.repr(),
        model.layout(),
        corpus.len(),
        out.display()
    );
    Ok(())
}

fn lead_options(s: &LeadSampling, mask: bool, seed: u64) -> LeadOptions {
    LeadOptions {
        sampler: SamplerConfig {
            temperature: s.lead_temperature,
            top_p: s.lead_top_p,
            seed,
            grammar_mask: mask,
        },
        max_tokens: s.max_tokens,
        max_bars: Some(s.max_bars),
        key_gate: !s.no_key_gate,
    }
}

fn performance_options(s: &PerformanceSampling, mask: bool, seed: u64) -> PerformanceOptions {
    PerformanceOptions {
        sampler: SamplerConfig {
            temperature: s.performance_temperature,
            top_p: s.performance_top_p,
            seed,
            grammar_mask: mask,
        },
        bar_budget: s.bar_budget,
    }
}

fn key_name(seq: &TokenSequence) -> String {
    seq.events
        .iter()
        .find_map(|e| match e {
            Event::Key(k) => Some(k.to_string()),
            _ => None,
        })
        .unwrap_or_else(|| "-".into())
}

/// Writes `<base>.tok` and, when it decodes, `<base>.mid`.
fn write_sample(base: &Path, g: &Generated) -> Result<()> {
    let with = |ext: &str| {
        let mut s = base.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    write(&with(".tok"), g.sequence.to_text())?;
    if let Ok(d) = decode(&g.sequence) {
        let track = d.performance.unwrap_or_else(|| d.lead.render());
        write(&with(".mid"), midi_bytes(&track))?;
    }
    Ok(())
}

const SUMMARY_HEADER: &str = "sample\tstage\temotion\tkey\ttokens\ttruncated\tvalid\n";

fn summary_row(name: &str, stage: &str, g: &Generated) -> String {
    let emotion = match g.sequence.events.first() {
        Some(Event::Emotion(e)) => e.to_string(),
        _ => "-".into(),
    };
    format!(
        "{name}\t{stage}\t{emotion}\t{}\t{}\t{}\t{}\n",
        key_name(&g.sequence),
        g.sequence.len(),
        g.truncated,
        g.valid
    )
}

#[allow(clippy::too_many_arguments)]
fn generate_both(
    lm: &NGramModel,
    pm: &NGramModel,
    quadrant: Emotion,
    count: usize,
    lead: &LeadSampling,
    perf: &PerformanceSampling,
    mask: bool,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let valence = quadrant.valence();
    let results: Vec<Result<(Generated, Option<Generated>)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let lo = lead_options(lead, mask, derive_seed(seed, &format!("lead/{i}")));
            let l = generate_lead_sheet(lm, lm.repr(), valence, &lo)?;
            if !l.valid {
                log::warn!("sample {i}: lead sheet is not grammar-valid; skipping stage 2");
                return Ok((l, None));
            }
            let po = performance_options(perf, mask, derive_seed(seed, &format!("performance/{i}")));
            let p = generate_performance(pm, &l.sequence, quadrant, &po)?;
            Ok((l, Some(p)))
        })
        .collect();
    let mut summary = String::from(SUMMARY_HEADER);
    for (i, r) in results.into_iter().enumerate() {
        let (l, p) = r?;
        let name = format!("sample_{i:03}");
        write_sample(&out.join(format!("{name}.lead")), &l)?;
        summary.push_str(&summary_row(&name, "lead", &l));
        if let Some(p) = p {
            write_sample(&out.join(format!("{name}.performance")), &p)?;
            summary.push_str(&summary_row(&name, "performance", &p));
        }
    }
    write(&out.join("generation.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}

enum Source {
    NGram(NGramModel),
    Bridge(Vec<String>, Repr),
}

impl Source {
    fn open(arg: &ModelArg, repr: Option<Repr>, layout: Layout) -> Result<Self> {
        match (&arg.model, &arg.bridge) {
            (Some(path), _) => {
                let m = load_ngram(path)?;
                expect_layout(&m, path, layout)?;
                if let Some(r) = repr.filter(|r| *r != m.repr()) {
                    return Err(CliError::Usage(format!(
                        "{} is a {} model, not {r}",
                        path.display(),
                        m.repr()
                    )));
                }
                Ok(Source::NGram(m))
            }
            (None, Some(cmd)) => {
                let words: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
                if words.is_empty() {
                    return Err(CliError::Usage("empty --bridge command".into()));
                }
                let repr = repr.ok_or_else(|| CliError::Usage("--bridge needs --repr".into()))?;
                Ok(Source::Bridge(words, repr))
            }
            (None, None) => Err(CliError::Usage("give --model or --bridge".into())),
        }
    }

    fn repr(&self) -> Repr {
        match self {
            Source::NGram(m) => m.repr(),
            Source::Bridge(_, r) => *r,
        }
    }

    /// Runs `f` with a model; bridge peers are started per call.
    fn with<T>(&self, layout: Layout, f: impl FnOnce(&dyn SequenceModel) -> Result<T>) -> Result<T> {
        match self {
            Source::NGram(m) => f(m),
            Source::Bridge(words, repr) => {
                let mut cmd = std::process::Command::new(&words[0]);
                cmd.args(&words[1..]);
                let m = BridgeModel::spawn(cmd, Vocabulary::shared(*repr, layout), BRIDGE_TIMEOUT)?;
                f(&m)
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn generate_leads(
    model: &ModelArg,
    repr: Option<Repr>,
    valence: Emotion,
    count: usize,
    sampling: &LeadSampling,
    mask: bool,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let src = Source::open(model, repr, Layout::LeadSheet)?;
    let results: Vec<Result<Generated>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let opts = lead_options(sampling, mask, derive_seed(seed, &format!("lead/{i}")));
            src.with(Layout::LeadSheet, |m| {
                Ok(generate_lead_sheet(m, src.repr(), valence, &opts)?)
            })
        })
        .collect();
    let mut summary = String::from(SUMMARY_HEADER);
    for (i, r) in results.into_iter().enumerate() {
        let g = r?;
        let name = format!("sample_{i:03}");
        write_sample(&out.join(format!("{name}.lead")), &g)?;
        summary.push_str(&summary_row(&name, "lead", &g));
    }
    write(&out.join("generation.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn generate_one_performance(
    model: &ModelArg,
    lead_path: &Path,
    quadrant: Emotion,
    sampling: &PerformanceSampling,
    mask: bool,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let lead = read_tokens(lead_path)?;
    if let Some(Event::Emotion(v)) = lead.events.first() {
        check_quadrant(*v, quadrant)?;
    }
    let src = Source::open(model, Some(lead.repr), Layout::Performance)?;
    let file = lead_path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let base = file.trim_end_matches(".tok").trim_end_matches(".lead");
    let opts = performance_options(sampling, mask, derive_seed(seed, &format!("performance/{base}")));
    let g = src.with(Layout::Performance, |m| {
        Ok(generate_performance(m, &lead, quadrant, &opts)?)
    })?;
    let name = format!("{base}.{quadrant}");
    write_sample(&out.join(format!("{name}.performance")), &g)?;
    let summary = format!("{SUMMARY_HEADER}{}", summary_row(&name, "performance", &g));
    write(&out.join(format!("{name}.tsv")), &summary)?;
    print!("{summary}");
    Ok(())
}

fn eval(inputs: &[PathBuf], model: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let corpus = read_corpus(inputs)?;
    let seqs: Vec<TokenSequence> = corpus.iter().map(|c| c.1.clone()).collect();
    let consistency = KeyConsistencyReport::from_outcomes(seqs.par_iter().map(score_sample).collect::<Vec<_>>());
    let mut stats = String::from("layout\tclips\tmajor\tkeyed\tmean_bars\tmean_events\n");
    for layout in Layout::ALL {
        let group: Vec<TokenSequence> = seqs.iter().filter(|s| s.layout == layout).cloned().collect();
        if group.is_empty() {
            continue;
        }
        let row = corpus_stats(&group).to_tsv();
        let _ = writeln!(stats, "{layout}\t{}", row.lines().nth(1).unwrap_or_default());
    }
    let histogram = key_histogram(&seqs).to_tsv();
    let mut reports = vec![
        ("key_consistency", consistency.to_tsv()),
        ("corpus_stats", stats),
        ("key_histogram", histogram),
    ];
    if let Some(path) = model {
        let m = load_ngram(path)?;
        let matching: Vec<TokenSequence> = seqs
            .iter()
            .filter(|s| s.repr == m.repr() && s.layout == m.layout())
            .cloned()
            .collect();
        let r = evaluate_corpus_nll(&m, &matching)?;
        reports.push((
            "perplexity",
            format!(
                "sequences\ttokens\tnll\tperplexity\n{}\t{}\t{:.6}\t{:.6}\n",
                matching.len(),
                r.tokens,
                r.nll,
                r.perplexity
            ),
        ));
    }
    for (name, table) in &reports {
        match out {
            Some(dir) => write(&dir.join(format!("{name}.tsv")), table)?,
            None => print!("# {name}\n{table}\n"),
        }
    }
    if let Some(dir) = out {
        println!(
            "wrote {} reports for {} sequences to {}",
            reports.len(),
            seqs.len(),
            dir.display()
        );
    }
    Ok(())
}

fn synth(out: &Path, count: usize, bars: u32, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clips = synthetic_corpus(&mut rng, count, bars);
    let mut manifest = Manifest {
        seed,
        split: crate::manifest::DEFAULT_SPLIT,
        clips: Vec::new(),
    };
    for c in &clips {
        let name = format!("{}.mid", c.name);
        write(&out.join(&name), midi_bytes(&c.track))?;
        manifest.clips.push(Clip {
            path: out.join(&name),
            name,
            emotion: Some(c.emotion),
            key: None,
        });
    }
    write(&out.join("manifest.toml"), manifest.to_toml())?;
    println!("wrote {count} clips and manifest.toml to {}", out.display());
    Ok(())
}
