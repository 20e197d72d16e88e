//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tonal_core::analysis::{detect_key, extract_lead_sheet, LeadSheet};
use tonal_core::generation::{
    evaluate_corpus_nll, evaluate_nll, generate_lead_sheet, generate_performance, nucleus, sample_next, LeadOptions,
    NGramConfig, NGramModel, PerformanceOptions,
};
use tonal_core::metrics::key_consistency;
use tonal_core::midi_io::{load_midi, midi_bytes, quantize, Note, QuantizedTrack};
use tonal_core::synth::{key_fixture, random_lead_sheet, random_track, random_walk, scale_arpeggio, synthetic_corpus};
use tonal_core::theory::{degree_to_pc, pc_to_degree, Key, Mode, Pitch, PitchClass};
use tonal_core::tokenizer::{
    decode, encode_lead_sheet, encode_performance, tempo_bin, velocity_bin, velocity_bin_center, Emotion, Event,
    Layout, Repr, TokenSequence, TrackKind,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("conversion table", conversion_table),
        ("d# examples", d_sharp_examples),
        ("codec round trip", codec_round_trip),
        ("generations decode", generations_decode),
        ("key gating", key_gating),
        ("stage separation", stage_separation),
        ("key consistency", key_consistency_fixtures),
        ("key detection", key_detection),
        ("perplexity", perplexity),
        ("nucleus sampling", nucleus_sampling),
        ("midi round trip", midi_round_trip),
        ("cli smoke", cli_smoke),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.2}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(started: Instant, limit: f64) -> Result<f64, String> {
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < limit, "took {secs:.2}s, limit {limit}s");
    Ok(secs)
}

/// Numerals for each semitone above the tonic; two entries mark an
/// ambiguous minor-key class.
const MAJOR_TABLE: [&[&str]; 12] = [
    &["I"],
    &["I#"],
    &["II"],
    &["II#"],
    &["III"],
    &["IV"],
    &["IV#"],
    &["V"],
    &["V#"],
    &["VI"],
    &["VI#"],
    &["VII"],
];
const MINOR_TABLE: [&[&str]; 12] = [
    &["I"],
    &["I#"],
    &["II"],
    &["III"],
    &["III", "IV"],
    &["IV"],
    &["IV#"],
    &["V"],
    &["VI"],
    &["VI#"],
    &["VII"],
    &["VII", "I"],
];

fn conversion_table() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut det, mut amb) = (0, 0);
    for key in Key::all() {
        let table = if key.is_major() { &MAJOR_TABLE } else { &MINOR_TABLE };
        for pc in PitchClass::all() {
            let allowed = table[((pc.value() + 12 - key.tonic.value()) % 12) as usize];
            let mut seen = BTreeSet::new();
            for _ in 0..32 {
                let d = pc_to_degree(pc, key, &mut rng);
                let back = degree_to_pc(d, key);
                seen.insert(d.to_string());
                ensure!(allowed.contains(&d.to_string().as_str()), "{pc} in {key} gave {d}");
                if allowed.len() == 1 {
                    ensure!(back == pc, "{d} in {key} decodes to {back}");
                } else {
                    let dist = (back.value() as i32 - pc.value() as i32).rem_euclid(12);
                    ensure!(dist == 1 || dist == 11, "{pc} in {key}: neighbour {back}");
                }
            }
            ensure!(seen.len() == allowed.len(), "{pc} in {key}: saw {seen:?}");
            if allowed.len() == 1 {
                det += 1;
            } else {
                amb += 1;
            }
        }
    }
    ensure!((det, amb) == (264, 24), "{det} deterministic, {amb} ambiguous");
    let secs = within(started, 1.0)?;
    Ok(format!("{det} deterministic + {amb} ambiguous in {secs:.3}s"))
}

fn d_sharp_examples() -> Outcome {
    let note = Note::new(Pitch::new(63).unwrap(), 0, 4, 100);
    let mut got = Vec::new();
    for (key, want) in [(Key::minor(0), "Degree_III"), (Key::major(3), "Degree_I")] {
        let mut lead = LeadSheet::empty(Some(key), 1);
        lead.melody.push(note);
        let seq = encode_lead_sheet(
            &lead,
            Emotion::None,
            Repr::Functional,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .map_err(|e| e.to_string())?;
        let text: Vec<String> = seq.events.iter().map(|e| e.to_string()).collect();
        let i = text.iter().position(|t| t == "Octave_4").ok_or("no Octave_4 token")?;
        ensure!(text[i + 1] == want, "{key}: got {}", text[i + 1]);
        got.push(format!("{key} -> Octave_4 {want}"));
    }
    Ok(got.join(", "))
}

fn reassigned(pc: PitchClass, key: Key) -> bool {
    let rel = (pc.value() + 12 - key.tonic.value()) % 12;
    key.mode == Mode::Minor && (rel == 4 || rel == 11)
}

fn pitch_ok(a: Pitch, b: Pitch, key: Key, repr: Repr) -> bool {
    if repr == Repr::Functional && reassigned(a.pitch_class(), key) {
        (a.midi() as i32 - b.midi() as i32).abs() == 1
    } else {
        a == b
    }
}

fn lead_matches(orig: &LeadSheet, got: &LeadSheet, key: Key, repr: Repr) -> Result<(), String> {
    ensure!(orig.bars == got.bars, "bars {} vs {}", orig.bars, got.bars);
    ensure!(orig.melody.len() == got.melody.len(), "melody length");
    for (a, b) in orig.melody.iter().zip(&got.melody) {
        ensure!(
            a.onset == b.onset && a.duration.min(32) == b.duration && pitch_ok(a.pitch, b.pitch, key, repr),
            "melody {a:?} vs {b:?}"
        );
    }
    ensure!(orig.chords.len() == got.chords.len(), "chord count");
    for (a, b) in orig.chords.iter().zip(&got.chords) {
        match (a.1, b.1) {
            (None, None) => {}
            (Some(x), Some(y)) => {
                let d = (x.root.value() as i32 - y.root.value() as i32).rem_euclid(12);
                let root_ok = d == 0 || (repr == Repr::Functional && reassigned(x.root, key) && (d == 1 || d == 11));
                ensure!(x.quality == y.quality && root_ok, "chord {x:?} vs {y:?}");
            }
            other => return Err(format!("chord {other:?}")),
        }
    }
    Ok(())
}

fn track_matches(orig: &QuantizedTrack, got: &QuantizedTrack, key: Key, repr: Repr) -> Result<(), String> {
    ensure!(orig.bars() == got.bars(), "bars");
    let bins = |t: &QuantizedTrack| -> Vec<Option<u8>> {
        (0..t.bars())
            .map(|b| {
                t.tempo_changes()
                    .iter()
                    .take_while(|c| c.tick <= b * 16)
                    .last()
                    .map(|c| tempo_bin(c.bpm()))
            })
            .collect()
    };
    ensure!(bins(orig) == bins(got), "tempo bins");
    let mut used = vec![false; got.notes().len()];
    for a in orig.notes() {
        let hit = (0..used.len()).find(|&i| {
            let b = &got.notes()[i];
            !used[i]
                && b.onset == a.onset
                && b.duration == a.duration.min(32)
                && b.velocity == velocity_bin_center(velocity_bin(a.velocity))
                && (a.pitch == b.pitch || pitch_ok(a.pitch, b.pitch, key, repr))
        });
        match hit {
            Some(i) => used[i] = true,
            None => ensure!(
                repr == Repr::Functional && reassigned(a.pitch.pitch_class(), key),
                "lost {a:?}"
            ),
        }
    }
    ensure!(used.iter().all(|u| *u), "spurious notes");
    Ok(())
}

fn codec_round_trip() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let keys: Vec<Key> = Key::all().collect();
    let n = 1000;
    for i in 0..n {
        let repr = Repr::ALL[i % 3];
        let key = keys[rng.random_range(0..24)];
        let bars = rng.random_range(1..6);
        let lead = random_lead_sheet(&mut rng, Some(key), bars);
        let seq = encode_lead_sheet(&lead, Emotion::Positive, repr, &mut rng).map_err(|e| e.to_string())?;
        let d = decode(&seq).map_err(|e| e.to_string())?;
        lead_matches(&lead, &d.lead, key, repr).map_err(|e| format!("lead {i} {repr}: {e}"))?;
        let track = random_track(&mut rng, bars, 12);
        let seq = encode_performance(&lead, &track, Emotion::Q3, repr, &mut rng).map_err(|e| e.to_string())?;
        let d = decode(&seq).map_err(|e| e.to_string())?;
        let perf = d.performance.ok_or("no performance decoded")?;
        track_matches(&track, &perf, key, repr).map_err(|e| format!("performance {i} {repr}: {e}"))?;
    }
    let secs = within(started, 30.0)?;
    Ok(format!("{n} lead sheets + {n} performances in {secs:.2}s"))
}

fn corpus(seed: u64, n: usize, repr: Repr) -> (Vec<TokenSequence>, Vec<TokenSequence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut leads = Vec::new();
    let mut perfs = Vec::new();
    for clip in synthetic_corpus(&mut rng, n, 4) {
        let lead = extract_lead_sheet(&clip.track).unwrap();
        leads.push(encode_lead_sheet(&lead, clip.emotion.valence(), repr, &mut rng).unwrap());
        perfs.push(encode_performance(&lead, &clip.track, clip.emotion, repr, &mut rng).unwrap());
    }
    (leads, perfs)
}

fn models(seed: u64, repr: Repr) -> (NGramModel, NGramModel) {
    let (leads, perfs) = corpus(seed, 24, repr);
    (
        NGramModel::train(&leads, NGramConfig::default()).unwrap(),
        NGramModel::train(&perfs, NGramConfig::default()).unwrap(),
    )
}

fn lead_options(seed: u64) -> LeadOptions {
    let mut o = LeadOptions::new(seed);
    o.max_bars = Some(4);
    o
}

const QUADRANTS: [Emotion; 4] = [Emotion::Q1, Emotion::Q2, Emotion::Q3, Emotion::Q4];

fn generations_decode() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let walks = 10_000;
    for i in 0..walks {
        let repr = Repr::ALL[i % 3];
        let layout = Layout::ALL[(i / 3) % 2];
        let seq = random_walk(repr, layout, 1 + (i as u32 % 4), &mut rng);
        decode(&seq).map_err(|e| format!("walk {i}: {e}\n{}", seq.to_text()))?;
    }
    let mut generated = 0;
    for repr in Repr::ALL {
        let (lm, pm) = models(40 + repr as u64, repr);
        for seed in 0..167u64 {
            let q = QUADRANTS[seed as usize % 4];
            let lead = generate_lead_sheet(&lm, repr, q.valence(), &lead_options(seed)).map_err(|e| e.to_string())?;
            decode(&lead.sequence).map_err(|e| format!("{repr} lead {seed}: {e}"))?;
            let perf = generate_performance(&pm, &lead.sequence, q, &PerformanceOptions::new(seed))
                .map_err(|e| e.to_string())?;
            decode(&perf.sequence).map_err(|e| format!("{repr} performance {seed}: {e}"))?;
            generated += 2;
        }
    }
    ensure!(generated >= 1000, "only {generated} generations");
    Ok(format!("{walks} masked walks + {generated} n-gram generations decode"))
}

fn key_mode(s: &TokenSequence) -> Option<Mode> {
    s.events.iter().find_map(|e| match e {
        Event::Key(k) => Some(k.mode),
        _ => None,
    })
}

fn key_gating() -> Outcome {
    let (lm, _) = models(5, Repr::Functional);
    let mut violations = 0;
    for (valence, mode) in [(Emotion::Positive, Mode::Major), (Emotion::Negative, Mode::Minor)] {
        for seed in 0..1000 {
            let g =
                generate_lead_sheet(&lm, Repr::Functional, valence, &lead_options(seed)).map_err(|e| e.to_string())?;
            if key_mode(&g.sequence) != Some(mode) || g.sequence.events[0] != Event::Emotion(valence) {
                violations += 1;
            }
        }
    }
    ensure!(violations == 0, "{violations} violations");
    Ok("1000 Positive + 1000 Negative, 0 violations".into())
}

/// Bar bodies of the M substream.
fn m_stream(perf: &TokenSequence) -> Vec<Vec<Event>> {
    let mut bars: Vec<Vec<Event>> = Vec::new();
    let mut inside = false;
    for e in &perf.events {
        match e {
            Event::Track(TrackKind::M) => {
                bars.push(Vec::new());
                inside = true;
            }
            Event::Track(TrackKind::X) | Event::Eos => inside = false,
            Event::Bar if inside && bars.last().is_some_and(Vec::is_empty) => {}
            other if inside => bars.last_mut().unwrap().push(*other),
            _ => {}
        }
    }
    bars
}

fn lead_stream(lead: &TokenSequence) -> Vec<Vec<Event>> {
    let mut bars: Vec<Vec<Event>> = Vec::new();
    for e in &lead.events {
        match e {
            Event::Bar => bars.push(Vec::new()),
            Event::Emotion(_) | Event::Key(_) | Event::Eos => {}
            other => bars.last_mut().unwrap().push(*other),
        }
    }
    bars
}

fn stage_separation() -> Outcome {
    let repr = Repr::Functional;
    let (lm, pm) = models(6, repr);
    let mut checked = 0;
    let mut shared = 0;
    for seed in 0..50u64 {
        for (valence, pair) in [
            (Emotion::Positive, [Emotion::Q1, Emotion::Q4]),
            (Emotion::Negative, [Emotion::Q2, Emotion::Q3]),
        ] {
            let lead = generate_lead_sheet(&lm, repr, valence, &lead_options(seed))
                .map_err(|e| e.to_string())?
                .sequence;
            let want = lead_stream(&lead);
            let mut streams = Vec::new();
            for q in pair {
                let g = generate_performance(&pm, &lead, q, &PerformanceOptions::new(seed + 1000))
                    .map_err(|e| e.to_string())?;
                let got = m_stream(&g.sequence);
                ensure!(got == want, "seed {seed} {q}: M substream differs from the lead sheet");
                streams.push(got);
                checked += 1;
            }
            ensure!(
                streams[0] == streams[1],
                "seed {seed}: {} and {} M tracks differ",
                pair[0],
                pair[1]
            );
            if valence == Emotion::Positive {
                shared += 1;
            }
        }
    }
    ensure!(checked == 200, "{checked} generations");
    Ok(format!(
        "{checked} stage-2 generations copy the lead, {shared} Q1/Q4 pairs share M"
    ))
}

fn fixture_corpus(repr: Repr, shift: i32) -> Vec<TokenSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut out = Vec::new();
    for key in Key::all() {
        let (mut lead, track) = key_fixture(key);
        lead.key = Some(key.transpose(shift));
        let q = if key.is_major() { Emotion::Q1 } else { Emotion::Q3 };
        out.push(encode_lead_sheet(&lead, q.valence(), repr, &mut rng).unwrap());
        out.push(encode_performance(&lead, &track, q, repr, &mut rng).unwrap());
    }
    out
}

fn key_consistency_fixtures() -> Outcome {
    let mut lines = Vec::new();
    for repr in [Repr::RemiPlusKey, Repr::Functional] {
        for (shift, want) in [(0, 1.0), (6, 0.0)] {
            let r = key_consistency(&fixture_corpus(repr, shift));
            ensure!(r.rejects == 0, "{repr} shift {shift}: {} rejects", r.rejects);
            for (name, ratio) in r.components() {
                ensure!(ratio.value() == Some(want), "{repr} shift {shift} {name}: {ratio}");
            }
        }
        lines.push(format!("{repr} 1.0/0.0"));
    }
    Ok(format!(
        "diatonic vs tritone-shifted on M, C, M+C, P: {}",
        lines.join(", ")
    ))
}

const KK_MAJOR: [f64; 12] = [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
const KK_MINOR: [f64; 12] = [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn oracle_key(track: &QuantizedTrack) -> Key {
    let mut h = [0.0; 12];
    for n in track.notes() {
        h[(n.pitch.midi() % 12) as usize] += n.duration as f64;
    }
    let mut best = (Key::major(0), f64::NEG_INFINITY);
    for tonic in 0u8..12 {
        for (prof, key) in [(&KK_MAJOR, Key::major(tonic)), (&KK_MINOR, Key::minor(tonic))] {
            let rotated: Vec<f64> = (0..12).map(|pc| prof[(pc + 12 - tonic as usize) % 12]).collect();
            let r = pearson(&h, &rotated);
            if r > best.1 {
                best = (key, r);
            }
        }
    }
    best.0
}

fn key_detection() -> Outcome {
    let mut hits = 0;
    for key in Key::all() {
        let fixture = scale_arpeggio(key);
        let oracle = oracle_key(&fixture);
        let detected = detect_key(&fixture).map_err(|e| e.to_string())?;
        ensure!(oracle == key, "oracle says {oracle} for {key}");
        ensure!(detected == oracle, "detected {detected}, oracle {oracle}");
        hits += 1;
    }
    Ok(format!("{hits}/24 keys agree with the oracle"))
}

fn perplexity() -> Outcome {
    let (leads, _) = corpus(9, 20, Repr::Functional);
    let s = &leads[0];
    let cfg = NGramConfig {
        order: s.len() + 1,
        smoothing: 0.0,
        lambda: 1.0,
    };
    let m = NGramModel::train(std::slice::from_ref(s), cfg).map_err(|e| e.to_string())?;
    let mem = evaluate_nll(&m, s).map_err(|e| e.to_string())?.perplexity;
    ensure!((mem - 1.0).abs() <= 1e-9, "memorization perplexity {mem}");
    let model = NGramModel::train(&leads, NGramConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let shuffled: Vec<TokenSequence> = leads
        .iter()
        .map(|s| {
            let mut ev = s.events.clone();
            ev.shuffle(&mut rng);
            TokenSequence::new(s.repr, s.layout, ev)
        })
        .collect();
    let train = evaluate_corpus_nll(&model, &leads)
        .map_err(|e| e.to_string())?
        .perplexity;
    let shuf = evaluate_corpus_nll(&model, &shuffled)
        .map_err(|e| e.to_string())?
        .perplexity;
    ensure!(train < shuf, "train {train} vs shuffled {shuf}");
    Ok(format!("memorized {mem:.12}, train {train:.3} < shuffled {shuf:.3}"))
}

fn nucleus_sampling() -> Outcome {
    let dist = [0.5, 0.3, 0.15, 0.05];
    let legal = [0, 1, 2, 3];
    let nuc = nucleus(&dist, 1.0, 0.9, &legal);
    let ids: Vec<u32> = nuc.iter().map(|x| x.0).collect();
    ensure!(ids == [0, 1, 2], "nucleus {ids:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[sample_next(&dist, 1.0, 0.9, &legal, &mut rng).map_err(|e| e.to_string())? as usize] += 1;
    }
    let mut worst: f64 = 0.0;
    for id in 0..4 {
        let want = if id < 3 { dist[id] / 0.95 } else { 0.0 };
        let got = counts[id] as f64 / n as f64;
        let sigma = (want * (1.0 - want) / n as f64).sqrt();
        if sigma == 0.0 {
            ensure!(counts[id] == 0, "id {id} drawn {} times", counts[id]);
        } else {
            let z = (got - want).abs() / sigma;
            ensure!(z <= 3.0, "id {id}: {got} vs {want} ({z:.2} sigma)");
            worst = worst.max(z);
        }
    }
    Ok(format!(
        "nucleus {{0,1,2}}, {n} draws, worst deviation {worst:.2} sigma"
    ))
}

fn midi_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..500 {
        let bars = rng.random_range(0..9);
        let t = random_track(&mut rng, bars, 10);
        let back = quantize(&load_midi(&midi_bytes(&t)).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure!(back == t, "track {i} changed");
    }
    Ok("500 tracks".into())
}

fn tonal(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tonal"))
        .args(args)
        .env_remove("TONAL_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "tonal {} exited {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let p = |rel: &str| dir.join(rel).to_string_lossy().into_owned();
    let mut stdout = String::new();
    stdout += &tonal(&[
        "--seed",
        "17",
        "synth",
        "--out",
        &p("midi"),
        "--count",
        "20",
        "--bars",
        "4",
    ])?;
    stdout += &tonal(&["analyze", &p("midi")])?;
    stdout += &tonal(&["tokenize", "--manifest", &p("midi/manifest.toml"), "--out", &p("tok")])?;
    stdout += &tonal(&[
        "train",
        &p("tok/train"),
        "--layout",
        "lead-sheet",
        "--out",
        &p("lead.ngram"),
    ])?;
    stdout += &tonal(&[
        "train",
        &p("tok/train"),
        "--layout",
        "performance",
        "--out",
        &p("perf.ngram"),
    ])?;
    for q in ["q1", "q2", "q3", "q4"] {
        stdout += &tonal(&[
            "--seed",
            "5",
            "generate",
            "--lead-model",
            &p("lead.ngram"),
            "--performance-model",
            &p("perf.ngram"),
            "--quadrant",
            q,
            "--count",
            "3",
            "--max-bars",
            "4",
            "--out",
            &p(&format!("gen/{q}")),
        ])?;
    }
    stdout += &tonal(&[
        "generate-lead",
        "--model",
        &p("lead.ngram"),
        "--valence",
        "negative",
        "--max-bars",
        "4",
        "--out",
        &p("stage1"),
    ])?;
    stdout += &tonal(&[
        "generate-performance",
        "--model",
        &p("perf.ngram"),
        "--lead",
        &p("stage1/sample_000.lead.tok"),
        "--quadrant",
        "q2",
        "--out",
        &p("stage2"),
    ])?;
    stdout += &tonal(&[
        "eval",
        &p("gen"),
        &p("stage2"),
        "--model",
        &p("lead.ngram"),
        "--out",
        &p("eval"),
    ])?;
    let mut files = BTreeMap::new();
    files.insert(
        "stdout".to_string(),
        stdout
            .replace(&dir.to_string_lossy().into_owned(), "<dir>")
            .into_bytes(),
    );
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    for want in [
        "gen/q1/sample_002.performance.mid",
        "gen/q4/generation.tsv",
        "stage2/sample_000.Q2.performance.tok",
        "eval/key_consistency.tsv",
        "eval/perplexity.tsv",
    ] {
        ensure!(files.contains_key(want), "missing {want}");
    }
    Ok(files)
}

fn cli_smoke() -> Outcome {
    let started = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    ensure!(
        first.len() == second.len() && differing.is_empty(),
        "runs differ in {differing:?}"
    );
    let q1 = String::from_utf8_lossy(&first["gen/q1/generation.tsv"]).into_owned();
    ensure!(q1.lines().count() == 7, "generation.tsv:\n{q1}");
    let secs = within(started, 120.0)?;
    Ok(format!("2 runs, {} identical files in {secs:.2}s", first.len()))
}
