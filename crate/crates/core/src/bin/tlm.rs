use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tiny_lm::corpus::compute_overlap_metrics;
use tiny_lm::harness::{
    self, build_experiment_subset, emit_report, presets, run_committee_experiment, run_evaluate_stage,
    run_finetune_stage, run_gap_experiment, run_pretrain_stage, synth, CommitteeReport, CommitteeRow, ErrorClass,
    ExperimentReport, ExperimentSpec, GapRow, HarnessError, Precision, ReportFormat,
};
use tiny_lm::model::{latency, load_checkpoint, save_checkpoint, ConvLayerSpec, Model, ModelConfig, TrainingMetadata};
use tiny_lm::numerics::set_parallel;
use tiny_lm::train::{write_trace, TrainConfig};
use tiny_lm::Scalar;

#[derive(Parser)]
#[command(name = "tlm", version, about = "Tiny-corpus BERT pre-training experiments")]
struct Cli {
    /// Single-threaded, bitwise reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Directory that relative data paths resolve against.
    #[arg(long, global = true, env = "TLM_DATA_ROOT")]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// Experiment spec (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset instead of a spec file; see `tlm presets`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    /// Fine-tuning learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Fine-tuning weight decay.
    #[arg(long)]
    weight_decay: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the spec's pre-training subset and write its manifest.
    BuildSubset {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the selected paragraphs, one per line.
        #[arg(long)]
        paragraphs: Option<PathBuf>,
    },
    /// Token overlap of the spec's subset with its classification data.
    Overlap {
        #[command(flatten)]
        spec: SpecArgs,
        /// List the missing task tokens too.
        #[arg(long)]
        missing: bool,
    },
    /// MLM pre-training on the spec's subset.
    Pretrain {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Fine-tune a classifier, from a pre-trained checkpoint or from scratch.
    Finetune {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch test accuracy as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Test accuracy of one classifier, or of several as a soft committee.
    Evaluate {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Accuracy with and without pre-training.
    Gap {
        #[command(flatten)]
        spec: SpecArgs,
        /// Full JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// One-row W_S/T_W/T_M/Acc/Gap table.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
    },
    /// Train committee members and evaluate their soft committee.
    Committee {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
    },
    /// Sequential depth of a model, or of a spec's models.
    Latency {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, conflicts_with_all = ["config", "preset"])]
        blocks: Option<usize>,
        #[arg(long, default_value_t = 0)]
        conv_layers: usize,
    },
    /// Tabulate JSON reports from `gap` or `committee`.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic topic benchmark.
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        /// Generator settings (TOML); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List preset names, or print one preset as TOML.
    Presets { name: Option<String> },
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("unknown precision {s:?}; use f32 or f64")),
    }
}

struct Ctx {
    data_root: Option<PathBuf>,
}

impl Ctx {
    fn spec(&self, a: &SpecArgs) -> Result<ExperimentSpec, HarnessError> {
        let mut spec = match (&a.config, &a.preset) {
            (Some(path), _) => ExperimentSpec::load(path)?,
            (None, Some(name)) => presets::get(name)
                .ok_or_else(|| HarnessError::usage("spec", format!("no preset named {name:?}")))?,
            (None, None) => return Err(HarnessError::usage("spec", "pass --config or --preset")),
        };
        if let Some(s) = a.seed {
            spec.seed = s;
        }
        if let Some(r) = a.repetitions {
            spec.repetitions = r;
        }
        if let Some(p) = a.precision {
            spec.precision = p;
        }
        if let Some(e) = a.pretrain_epochs {
            spec.pretrain.epochs = e;
        }
        let ft = |c: &mut TrainConfig| {
            if let Some(e) = a.finetune_epochs {
                c.epochs = e;
            }
            if let Some(lr) = a.lr {
                c.learning_rate = lr;
            }
            if let Some(wd) = a.weight_decay {
                c.weight_decay = wd;
            }
        };
        ft(&mut spec.finetune);
        if let Some(c) = &mut spec.finetune_scratch {
            ft(c);
        }
        spec.validate()?;
        let root = match (&self.data_root, &a.config) {
            (Some(r), _) => r.clone(),
            (None, Some(cfg)) => cfg.parent().map(Path::to_path_buf).unwrap_or_default(),
            (None, None) => PathBuf::from("."),
        };
        spec.resolve_paths(&root);
        Ok(spec)
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::data("output", format!("cannot write {}: {e}", path.display())))
}

fn to_json<S: Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn metadata(stage: &str, cfg: &TrainConfig, seed: u64, subset: Option<String>) -> TrainingMetadata {
    TrainingMetadata {
        stage: stage.into(),
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        seed,
        subset_manifest_hash: subset,
    }
}

fn pretrain_cmd<T: Scalar>(spec: &ExperimentSpec, out: &Path, trace: Option<&Path>) -> Result<(), HarnessError> {
    let data = harness::prepare(spec)?;
    let r = run_pretrain_stage::<T>(spec, &data)?;
    print_warnings(&r.warnings);
    save_checkpoint(&r.model, &metadata("pretrain", &spec.pretrain, r.seed, r.subset_manifest_hash), out)
        .map_err(|e| HarnessError::from_model("checkpoint", e))?;
    if let Some(p) = trace {
        write_trace(p, &r.report.epoch_loss).map_err(|e| HarnessError::from_train("trace", e))?;
    }
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    println!(
        "pretrained {} epochs: loss {:.4}, masked accuracy {:.4}",
        r.report.epoch_loss.len(),
        last(&r.report.epoch_loss),
        last(&r.report.epoch_accuracy)
    );
    Ok(())
}

fn finetune_cmd<T: Scalar>(
    spec: &ExperimentSpec,
    init: Option<&Path>,
    out: &Path,
    trace: Option<&Path>,
) -> Result<(), HarnessError> {
    let data = harness::prepare(spec)?;
    let encoder: Option<Model<T>> = match init {
        Some(p) => Some(load_checkpoint::<T>(p).map_err(|e| HarnessError::from_model("checkpoint", e))?.model),
        None => None,
    };
    let r = run_finetune_stage::<T>(spec, &data, encoder.as_ref())?;
    print_warnings(&r.warnings);
    let cfg = if encoder.is_some() { &spec.finetune } else { spec.finetune_scratch.as_ref().unwrap_or(&spec.finetune) };
    save_checkpoint(&r.model, &metadata("finetune", cfg, r.seed, r.subset_manifest_hash), out)
        .map_err(|e| HarnessError::from_model("checkpoint", e))?;
    if let Some(p) = trace {
        write_trace(p, &r.report.test_accuracy).map_err(|e| HarnessError::from_train("trace", e))?;
    }
    println!("best test accuracy {:.4} at epoch {}", r.report.best_accuracy, r.report.best_epoch);
    Ok(())
}

fn evaluate_cmd<T: Scalar>(spec: &ExperimentSpec, checkpoints: &[PathBuf]) -> Result<(), HarnessError> {
    let data = harness::prepare(spec)?;
    let models = checkpoints
        .iter()
        .map(|p| load_checkpoint::<T>(p).map(|c| c.model).map_err(|e| HarnessError::from_model("checkpoint", e)))
        .collect::<Result<Vec<_>, _>>()?;
    let eval = run_evaluate_stage(spec, &data, models)?;
    for (p, m) in checkpoints.iter().zip(&eval.members) {
        println!("{}\t{:.4}", p.display(), m.accuracy);
    }
    if checkpoints.len() > 1 {
        println!("committee\t{:.4}", eval.committee.accuracy);
    }
    Ok(())
}

fn with_precision<F32, F64>(spec: &ExperimentSpec, f32_run: F32, f64_run: F64) -> Result<(), HarnessError>
where
    F32: FnOnce() -> Result<(), HarnessError>,
    F64: FnOnce() -> Result<(), HarnessError>,
{
    match spec.precision {
        Precision::F32 => f32_run(),
        Precision::F64 => f64_run(),
    }
}

fn report_rows(inputs: &[PathBuf], format: ReportFormat) -> Result<String, HarnessError> {
    let mut gap = Vec::new();
    let mut committee = Vec::new();
    for p in inputs {
        let text = fs::read_to_string(p)
            .map_err(|e| HarnessError::data("report", format!("cannot read {}: {e}", p.display())))?;
        if let Ok(r) = serde_json::from_str::<ExperimentReport>(&text) {
            gap.push(GapRow::from_report(&r));
        } else if let Ok(r) = serde_json::from_str::<CommitteeReport>(&text) {
            committee.extend(CommitteeRow::from_report(&r));
        } else {
            return Err(HarnessError::data("report", format!("{} is not a gap or committee report", p.display())));
        }
    }
    match (gap.is_empty(), committee.is_empty()) {
        (false, false) => Err(HarnessError::usage("report", "cannot mix gap and committee reports in one table")),
        (true, false) => Ok(emit_report(&committee, format)),
        _ => Ok(emit_report(&gap, format)),
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let ctx = Ctx { data_root: cli.data_root };
    match cli.command {
        Command::BuildSubset { spec, out, paragraphs } => {
            let spec = ctx.spec(&spec)?;
            let data = harness::prepare(&spec)?;
            let (subset, warnings) = build_experiment_subset(&spec, &data)?;
            print_warnings(&warnings);
            let (Some(subset), Some(corpus)) = (subset, &data.corpus) else {
                return Err(HarnessError::usage("subset", "the spec's recipe selects no corpus"));
            };
            subset.manifest(corpus).save(&out).map_err(|e| HarnessError::from_corpus("subset", e))?;
            if let Some(p) = paragraphs {
                let mut text: String = subset.texts().collect::<Vec<_>>().join("\n");
                text.push('\n');
                write_text(&p, &text)?;
            }
            let o = compute_overlap_metrics(&subset, &data.tc);
            println!("W_S {}\tT_W {}\tT_M {}\t{}", o.ws, o.tw, o.tm, subset.provenance);
        }
        Command::Overlap { spec, missing } => {
            let spec = ctx.spec(&spec)?;
            let data = harness::prepare(&spec)?;
            let (subset, warnings) = build_experiment_subset(&spec, &data)?;
            print_warnings(&warnings);
            let mut o = match &subset {
                Some(s) => compute_overlap_metrics(s, &data.tc),
                None => tiny_lm::corpus::overlap_of(0, &Default::default(), &data.tc),
            };
            if !missing {
                o.missing.clear();
            }
            print!("{}", to_json(&o));
        }
        Command::Pretrain { spec, out, trace } => {
            let spec = ctx.spec(&spec)?;
            let t = trace.as_deref();
            with_precision(&spec, || pretrain_cmd::<f32>(&spec, &out, t), || pretrain_cmd::<f64>(&spec, &out, t))?;
        }
        Command::Finetune { spec, init, out, trace } => {
            let spec = ctx.spec(&spec)?;
            let (i, t) = (init.as_deref(), trace.as_deref());
            with_precision(
                &spec,
                || finetune_cmd::<f32>(&spec, i, &out, t),
                || finetune_cmd::<f64>(&spec, i, &out, t),
            )?;
        }
        Command::Evaluate { spec, checkpoints } => {
            let spec = ctx.spec(&spec)?;
            with_precision(&spec, || evaluate_cmd::<f32>(&spec, &checkpoints), || evaluate_cmd::<f64>(&spec, &checkpoints))?;
        }
        Command::Gap { spec, out, table, format } => {
            let spec = ctx.spec(&spec)?;
            let data = harness::prepare(&spec)?;
            let report = run_gap_experiment(&spec, &data)?;
            print_warnings(&report.warnings);
            let row = [GapRow::from_report(&report)];
            if let Some(p) = table {
                harness::write_report(&p, &row, format)?;
            }
            match out {
                Some(p) => write_text(&p, &to_json(&report))?,
                None => print!("{}", emit_report(&row, format)),
            }
        }
        Command::Committee { spec, out, table, format } => {
            let spec = ctx.spec(&spec)?;
            let data = harness::prepare(&spec)?;
            let report = run_committee_experiment(&spec, &data)?;
            print_warnings(&report.warnings);
            let rows = CommitteeRow::from_report(&report);
            if let Some(p) = table {
                harness::write_report(&p, &rows, format)?;
            }
            match out {
                Some(p) => write_text(&p, &to_json(&report))?,
                None => print!("{}", emit_report(&rows, format)),
            }
        }
        Command::Latency { spec, blocks, conv_layers } => {
            if let Some(blocks) = blocks {
                let config = ModelConfig::bert(blocks, 12).with_conv(vec![ConvLayerSpec::new(1, 3, 3); conv_layers]);
                println!("{}", latency(&config));
                return Ok(());
            }
            let spec = ctx.spec(&spec)?;
            match &spec.committee {
                Some(c) => {
                    for (i, m) in c.members.iter().enumerate() {
                        println!("member {i}\t{}", m.latency());
                    }
                    println!("committee\t{}", c.members.iter().map(ModelConfig::latency).max().unwrap_or(0));
                    if let Some(r) = &c.reference {
                        println!("reference\t{}", r.latency());
                    }
                }
                None => println!("{}", spec.model.latency()),
            }
        }
        Command::Report { inputs, format, out } => {
            let text = report_rows(&inputs, format)?;
            match out {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Command::SynthGen { out, config, seed } => {
            let c = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p)
                        .map_err(|e| HarnessError::usage("synth", format!("cannot read {}: {e}", p.display())))?;
                    toml::from_str(&text).map_err(|e| HarnessError::usage("synth", e.to_string()))?
                }
                None => synth::SynthConfig::default(),
            };
            fs::create_dir_all(&out)
                .and_then(|_| synth::generate(&c, seed).write(&out))
                .map_err(|e| HarnessError::data("synth", format!("cannot write {}: {e}", out.display())))?;
        }
        Command::Presets { name: None } => {
            for n in presets::names() {
                println!("{n}");
            }
        }
        Command::Presets { name: Some(n) } => {
            let spec = presets::get(&n).ok_or_else(|| HarnessError::usage("presets", format!("no preset named {n:?}")))?;
            print!("{}", spec.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ErrorClass::Usage.exit_code() } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if cli.deterministic {
        set_parallel(false);
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            eprintln!("error: cannot pin the thread pool: {e}");
            return ExitCode::from(ErrorClass::Usage.exit_code() as u8);
        }
    }
    let start = Instant::now();
    let result = run(cli);
    eprintln!("elapsed {:.1?}", start.elapsed());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.class);
            ExitCode::from(e.class.exit_code() as u8)
        }
    }
}
