//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test --release --test acceptance -- 9 10`.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::Deserialize;

use tiny_lm::committee::{combine_logits, Committee};
use tiny_lm::corpus::{
    build_custom_subset, compute_overlap_metrics, extract_token_set, sample_random_subset, Corpus, Instance, TokenSet,
};
use tiny_lm::harness::synth::{generate, SynthConfig, SynthData};
use tiny_lm::harness::{
    emit_report, parse_table, presets, prepare, run_gap_experiment, ExperimentReport, ExperimentSpec, GapRow,
    ReportFormat, TableRow,
};
use tiny_lm::model::{build_model, latency, Batch, ConvLayerSpec, ModelConfig};
use tiny_lm::rng::{seeded, SeededRng};
use tiny_lm::tokenizer::{tokenize_ids, TokenId, TokenizedSequence, Vocab, BERT_VOCAB_SIZE};
use tiny_lm::train::{
    encode_paragraphs, evaluate, mask_batch, mlm_accuracy, pretrain, EncodedSplit, MaskAction, TrainConfig, TrainMode,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn data_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn synth_vocab(d: &SynthData) -> Vocab {
    Vocab::from_tokens(d.vocab.clone(), None).unwrap()
}

fn c1_gradients() -> Outcome {
    let prims = common::primitive_gradient_errors();
    let (worst_name, worst) = prims.iter().fold(("", 0.0f64), |a, &(n, e)| if e > a.1 { (n, e) } else { a });
    let (model_err, checked) = common::model_gradient_error();
    outcome(
        worst <= 1e-4 && model_err <= 1e-4,
        format!(
            "{} primitives, worst {worst_name} {worst:.1e}; micro BERT-1 {checked} scalars, worst {model_err:.1e}",
            prims.len()
        ),
    )
}

#[derive(Deserialize)]
struct GoldenCase {
    text: String,
    ids: Vec<u32>,
}

fn c2_tokenizer() -> Outcome {
    let vocab = match Vocab::load_sized(data_file("bert-base-uncased-vocab.txt"), Some(BERT_VOCAB_SIZE)) {
        Ok(v) => v,
        Err(e) => return outcome(false, format!("vocabulary: {e}")),
    };
    let text = std::fs::read_to_string(data_file("wordpiece_golden.jsonl")).unwrap_or_default();
    let cases: Vec<GoldenCase> = text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
    let matched = cases.iter().filter(|c| tokenize_ids(&c.text, &vocab) == c.ids).count();
    outcome(cases.len() == 1000 && matched == cases.len(), format!("{matched}/{} golden samples match", cases.len()))
}

fn c3_masking() -> Outcome {
    let d = generate(&SynthConfig { paragraphs: 10, ..Default::default() }, 0);
    let vocab = synth_vocab(&d);
    let sp = vocab.specials();
    let mut rng = seeded(2024);
    let mut mask_rng = seeded(7);
    let (mut candidates, mut selected, mut special_hits) = (0usize, 0usize, 0usize);
    let mut actions = [0usize; 3];
    while candidates < 200_000 {
        let seqs: Vec<TokenizedSequence> = (0..32)
            .map(|_| {
                let len = rng.random_range(1..30);
                let pieces: Vec<TokenId> = (0..len)
                    .map(|_| if rng.random_bool(0.05) { sp.unk } else { rng.random_range(5..vocab.len() as u32) })
                    .collect();
                TokenizedSequence::from_pieces(&pieces, sp, 32)
            })
            .collect();
        let batch = Batch::from_sequences(&seqs).unwrap();
        let m = mask_batch(&batch, sp, vocab.len(), &mut mask_rng);
        for (i, &id) in batch.ids.iter().enumerate() {
            let special = !batch.keep[i] || sp.contains(id);
            if !special {
                candidates += 1;
            }
            if let Some(a) = m.actions[i] {
                if special {
                    special_hits += 1;
                    continue;
                }
                selected += 1;
                actions[match a {
                    MaskAction::Masked => 0,
                    MaskAction::Random => 1,
                    MaskAction::Kept => 2,
                }] += 1;
            }
        }
    }
    let rate = selected as f64 / candidates as f64;
    let split: Vec<f64> = actions.iter().map(|&a| a as f64 / selected as f64).collect();
    let pass = (rate - 0.15).abs() <= 0.005
        && (split[0] - 0.8).abs() <= 0.015
        && (split[1] - 0.1).abs() <= 0.015
        && (split[2] - 0.1).abs() <= 0.015
        && special_hits == 0;
    outcome(
        pass,
        format!(
            "{candidates} candidates, rate {rate:.4}, split {:.3}/{:.3}/{:.3}, {special_hits} special selections",
            split[0], split[1], split[2]
        ),
    )
}

fn c4_set_algebra() -> Outcome {
    let mut rng = seeded(4);
    let mut failures = Vec::new();
    for trial in 0..100 {
        let words = rng.random_range(5..80);
        let mut tokens: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"].map(String::from).to_vec();
        tokens.extend((0..words).map(|i| format!("w{i}")));
        let vocab = Vocab::from_tokens(tokens, None).unwrap();
        let line = |rng: &mut SeededRng, max_len: usize| -> String {
            let len = rng.random_range(0..max_len);
            (0..len).map(|_| format!("w{}", rng.random_range(0..words))).collect::<Vec<_>>().join(" ")
        };
        // blank lines are not paragraphs
        let texts: Vec<String> =
            (0..rng.random_range(0..=1000)).map(|_| line(&mut rng, 12)).filter(|t| !t.is_empty()).collect();
        let n = texts.len();
        let corpus = Corpus::from_texts(texts.iter().map(String::as_str), &vocab);
        let instances: Vec<Instance> = (0..rng.random_range(1..40)).map(|_| Instance::new(line(&mut rng, 15), 0, &vocab)).collect();
        let tc = extract_token_set(&instances, &vocab);
        let size = rng.random_range(0..=n);
        let subset = sample_random_subset(&corpus, size, trial, &vocab);
        let report = compute_overlap_metrics(&subset, &tc);

        let id = |w: &str| vocab.id(w).unwrap();
        let tw: HashSet<TokenId> = subset.indices.iter().flat_map(|&i| texts[i].split_whitespace().map(id)).collect();
        let mut freq: std::collections::HashMap<TokenId, u64> = Default::default();
        for inst in &instances {
            for w in inst.text.split_whitespace() {
                *freq.entry(id(w)).or_default() += 1;
            }
        }
        let missing: BTreeSet<TokenId> = freq.keys().copied().filter(|t| !tw.contains(t)).collect();
        let total: u64 = freq.values().sum();
        let covered: u64 = freq.iter().filter(|(t, _)| tw.contains(t)).map(|(_, f)| f).sum();
        let weighted = if total == 0 { 1.0 } else { covered as f64 / total as f64 };

        let allowed: TokenSet = freq.keys().copied().collect();
        let custom = build_custom_subset(&corpus, &allowed, &vocab).unwrap();
        let custom_brute: Vec<usize> = (0..n)
            .filter(|&i| texts[i].split_whitespace().all(|w| freq.contains_key(&id(w))))
            .collect();

        let ok = report.ws == size
            && subset.tw.ids() == &tw.iter().copied().collect::<BTreeSet<_>>()
            && report.tw == tw.len()
            && report.tc == freq.len()
            && report.tm == missing.len()
            && report.missing == missing.iter().copied().collect::<Vec<_>>()
            && report.weighted_overlap == weighted
            && custom.indices == custom_brute;
        if !ok {
            failures.push(trial);
        }
    }
    outcome(failures.is_empty(), format!("100 random corpora, mismatches in {failures:?}"))
}

fn tlm(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tlm")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("tlm {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn c5_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    let synth = dir.path().join("synthetic");
    let run = || -> Result<(Vec<u8>, Vec<u8>), String> {
        tlm(&["synth-gen", "--out", synth.to_str().unwrap(), "--seed", "5"])?;
        let mut reports = Vec::new();
        for name in ["a.json", "b.json"] {
            let out = dir.path().join(name);
            tlm(&[
                "--deterministic",
                "--data-root",
                root,
                "gap",
                "--preset",
                "synthetic-random-200",
                "--out",
                out.to_str().unwrap(),
            ])?;
            reports.push(std::fs::read(out).map_err(|e| e.to_string())?);
        }
        Ok((reports.remove(0), reports.remove(0)))
    };
    match run() {
        Ok((a, b)) => {
            let acc = serde_json::from_slice::<ExperimentReport>(&a)
                .map(|r| format!("Acc {} / scratch {}", r.pretrained.mean, r.scratch.mean))
                .unwrap_or_else(|e| format!("unparsable report: {e}"));
            outcome(a == b && !a.is_empty(), format!("reports of {} and {} bytes identical: {}; {acc}", a.len(), b.len(), a == b))
        }
        Err(e) => outcome(false, e),
    }
}

fn c6_committee() -> Outcome {
    let d = generate(&SynthConfig { paragraphs: 10, ..Default::default() }, 1);
    let vocab = synth_vocab(&d);
    let test: Vec<Instance> = d.test.iter().map(|(l, t)| Instance::new(t.clone(), *l, &vocab)).collect();
    let split = EncodedSplit::from_instances(&test, vocab.specials(), 32);
    let config = ModelConfig { vocab_size: vocab.len(), num_labels: 4, ..presets::micro_model() };
    let model = build_model::<f32>(&config, 9).unwrap();
    let single = evaluate(&model, &split, 64).unwrap();
    let committee = Committee::new(vec![model.clone(), model.clone(), model]).unwrap().evaluate(&split, 64).unwrap();
    let identity = committee.committee.predictions == single.predictions;

    let (hand, _) = combine_logits::<f64>(&[&[10.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]);

    let mut rng = seeded(6);
    let mut permutation_failures = 0;
    for _ in 0..1000 {
        let k = rng.random_range(1..7);
        let labels = rng.random_range(2..10);
        let sets: Vec<Vec<f64>> =
            (0..k).map(|_| (0..labels).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let mut order: Vec<usize> = (0..k).collect();
        tiny_lm::rng::shuffle(&mut order, &mut rng);
        let a: Vec<&[f64]> = sets.iter().map(Vec::as_slice).collect();
        let b: Vec<&[f64]> = order.iter().map(|&i| sets[i].as_slice()).collect();
        if combine_logits(&a).0 != combine_logits(&b).0 {
            permutation_failures += 1;
        }
    }
    outcome(
        identity && hand == 0 && permutation_failures == 0,
        format!(
            "3-copy committee equals single model on {} instances: {identity}; hand example -> label {hand}; \
             {permutation_failures}/1000 permutation failures",
            split.len()
        ),
    )
}

fn c7_latency() -> Outcome {
    let bert6 = latency(&ModelConfig::bert(6, 12));
    let bert1 =
        latency(&ModelConfig::bert(1, 12).with_conv(vec![ConvLayerSpec::new(64, 3, 3), ConvLayerSpec::new(64, 3, 3)]));
    outcome(bert6 == 25 && bert1 == 7, format!("BERT-6 {bert6}, BERT-1+2CL {bert1}"))
}

fn c8_overfit() -> Outcome {
    // Short paragraphs keep the memorisation run inside its budget.
    let d = generate(&SynthConfig { paragraphs: 32, paragraph_len: (8, 12), ..Default::default() }, 8);
    let vocab = synth_vocab(&d);
    let sp = vocab.specials();
    let corpus = Corpus::from_texts(d.corpus.iter().map(String::as_str), &vocab);
    let data = encode_paragraphs(corpus.paragraphs(), sp, 32);
    let config = ModelConfig { vocab_size: vocab.len(), dropout: 0.0, heads: 8, head_dim: 16, ..presets::micro_model() };
    let mut model = build_model::<f32>(&config, 3).unwrap();
    let epochs = 500;
    let cfg = TrainConfig {
        mode: TrainMode::Pretrain,
        learning_rate: 1e-3,
        weight_decay: 0.0,
        epochs,
        batch_size: 8,
        schedule_epochs: usize::MAX,
        seq_len: 32,
        ..TrainConfig::pretrain_default(0)
    };
    if let Err(e) = pretrain(&mut model, &data, sp, &cfg) {
        return outcome(false, format!("pre-training failed: {e}"));
    }
    // Average over several maskings so one lucky draw cannot pass.
    let draws = 10;
    let mut total = 0.0;
    for s in 0..draws {
        match mlm_accuracy(&model, &data, sp, s, 32) {
            Ok(a) => total += a,
            Err(e) => return outcome(false, format!("evaluation failed: {e}")),
        }
    }
    let acc = total / draws as f64;
    outcome(acc >= 0.99, format!("masked-token accuracy {acc:.4} over {draws} maskings after {epochs} epochs"))
}

/// Gap experiment on freshly generated synthetic data.
fn synthetic_run(dir: &Path, data_seed: u64, spec: ExperimentSpec) -> Result<ExperimentReport, String> {
    let mut spec = spec;
    spec.seed = data_seed;
    spec.resolve_paths(dir);
    let data = prepare(&spec).map_err(|e| e.to_string())?;
    run_gap_experiment(&spec, &data).map_err(|e| e.to_string())
}

fn write_synth(seed: u64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("synthetic");
    std::fs::create_dir_all(&out).unwrap();
    generate(&SynthConfig::default(), seed).write(&out).unwrap();
    dir
}

fn c9_gap_trend() -> Outcome {
    let (mut big, mut small, mut scratch) = (Vec::new(), Vec::new(), Vec::new());
    let mut lines = Vec::new();
    let mut ordered = 0;
    for seed in 0..5 {
        let dir = write_synth(seed);
        let r2000 = synthetic_run(dir.path(), seed, presets::synthetic_gap(2000));
        let r200 = synthetic_run(dir.path(), seed, presets::synthetic_gap(200));
        let (r2000, r200) = match (r2000, r200) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return outcome(false, format!("seed {seed}: {e}")),
        };
        let (a, b, c) = (r2000.pretrained.mean, r200.pretrained.mean, r200.scratch.mean);
        if a > b && b > c {
            ordered += 1;
        }
        lines.push(format!("{a:.3}>{b:.3}>{c:.3}"));
        big.push(a);
        small.push(b);
        scratch.push(c);
    }
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b, c) = (m(&big), m(&small), m(&scratch));
    outcome(
        a > b && b > c && ordered >= 4,
        format!("means {a:.3} > {b:.3} > {c:.3}; ordered in {ordered}/5 seeds [{}]", lines.join(", ")),
    )
}

fn c10_inflation_trend() -> Outcome {
    let mut lines = Vec::new();
    let mut below = 0;
    let (mut inf_acc, mut rnd_acc) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let dir = write_synth(seed);
        let inflated = presets::get("synthetic-inflated-500").unwrap();
        let ri = match synthetic_run(dir.path(), seed, inflated) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        };
        // Fewer than 500 paragraphs may survive the filter; the random arm
        // draws exactly as many as did.
        let rr = match synthetic_run(dir.path(), seed, presets::synthetic_gap(ri.overlap.ws)) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        };
        if ri.overlap.ws != rr.overlap.ws {
            return outcome(false, format!("seed {seed}: W_S {} vs {} not matched", ri.overlap.ws, rr.overlap.ws));
        }
        if ri.pretrained.mean < rr.pretrained.mean {
            below += 1;
        }
        lines.push(format!(
            "W_S {} T_M {}:{:.3} vs {}:{:.3}",
            ri.overlap.ws, ri.overlap.tm, ri.pretrained.mean, rr.overlap.tm, rr.pretrained.mean
        ));
        inf_acc.push(ri.pretrained.mean);
        rnd_acc.push(rr.pretrained.mean);
    }
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    outcome(
        below >= 4 && m(&inf_acc) < m(&rnd_acc),
        format!(
            "inflated below random in {below}/5 seeds, means {:.3} vs {:.3} [{}]",
            m(&inf_acc),
            m(&rnd_acc),
            lines.join(", ")
        ),
    )
}

fn c11_report_schema() -> Outcome {
    let rows = vec![
        GapRow { ws: 90_000, tw: 28_302, tm: 90, acc: 0.891, gap: 0.051 },
        GapRow { ws: 40_000, tw: 27_798, tm: 249, acc: 0.878, gap: 0.038 },
        GapRow { ws: 0, tw: 0, tm: 17_072, acc: 0.84, gap: 0.0 },
    ];
    let mut ok = GapRow::HEADER == ["W_S", "T_W", "T_M", "Acc", "Gap"];
    for format in [ReportFormat::Csv, ReportFormat::Markdown] {
        let text = emit_report(&rows, format);
        ok &= parse_table::<GapRow>(&text, format).map(|back| back == rows).unwrap_or(false);
        let empty = emit_report::<GapRow>(&[], format);
        ok &= parse_table::<GapRow>(&empty, format).map(|b| b.is_empty()).unwrap_or(false);
    }
    let csv = emit_report(&rows, ReportFormat::Csv);
    ok &= csv.lines().next() == Some("W_S,T_W,T_M,Acc,Gap");
    ok &= csv.lines().all(|l| l.split(',').count() == 5);
    outcome(ok, format!("header {:?}; csv and markdown round-trip: {ok}", GapRow::HEADER))
}

type Criterion = (usize, &'static str, fn() -> Outcome, Duration);

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 11] = [
        (1, "gradient correctness", c1_gradients, Duration::from_secs(60)),
        (2, "tokenizer parity", c2_tokenizer, Duration::from_secs(10)),
        (3, "masking statistics", c3_masking, Duration::from_secs(10)),
        (4, "set-algebra oracle", c4_set_algebra, Duration::from_secs(30)),
        (5, "determinism", c5_determinism, Duration::from_secs(300)),
        (6, "committee identity and semantics", c6_committee, Duration::from_secs(60)),
        (7, "latency formula", c7_latency, Duration::from_secs(1)),
        (8, "overfit sanity", c8_overfit, Duration::from_secs(180)),
        (9, "gap trend", c9_gap_trend, Duration::from_secs(900)),
        (10, "T_M-inflation trend", c10_inflation_trend, Duration::from_secs(900)),
        (11, "report schema", c11_report_schema, Duration::from_secs(1)),
    ];
    let mut failed = Vec::new();
    for (n, name, run, budget) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = o.pass && in_time;
        println!(
            "criterion {n:>2} {name}: {} ({}; {:.1}s of {}s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
