use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::committee::{Committee, CommitteeEvaluation};
use crate::corpus::{
    build_custom_subset, build_inflated_tm_subset, compute_overlap_metrics, overlap_of, reduce_classification_dataset,
    sample_random_subset, ClassificationDataset, Corpus, CorpusSubset, DatasetFormat, InflationSpec, Instance,
    OverlapReport, SubsetManifest, TokenSet,
};
use crate::harness::{mean, sample_sd, ExperimentSpec, HarnessError, Precision, SubsetRecipe};
use crate::model::{build_model, Model, ModelConfig, VocabRemap};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::tokenizer::{SpecialIds, TokenId, TokenizedSequence, Vocab};
use crate::train::{encode_paragraphs, finetune, pretrain, EncodedSplit, FinetuneReport, PretrainReport, TrainConfig};

/// Repetition spread above which a report carries a warning.
pub const SD_WARNING: f64 = 0.02;

const ACCURACY_MEASURE: &str = "test accuracy at the best fine-tuning epoch";

/// Loaded inputs of an experiment.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub vocab: Vocab,
    pub corpus: Option<Corpus>,
    pub dataset: ClassificationDataset,
    /// Task tokens with their train+test frequencies.
    pub tc: TokenSet,
}

/// Loads the vocabulary, classification data and (when the recipe needs
/// one) the corpus named by `spec`.
pub fn prepare(spec: &ExperimentSpec) -> Result<PreparedData, HarnessError> {
    let d = &spec.data;
    let vocab = Vocab::load_sized(&d.vocab, d.vocab_size).map_err(|e| HarnessError::from_tokenizer("vocab", e))?;
    let format = DatasetFormat::by_name(&d.format)
        .ok_or_else(|| HarnessError::usage("dataset", format!("unknown dataset format {:?}", d.format)))?;
    let mut dataset = ClassificationDataset::load(&d.train, &d.test, format, &vocab)
        .map_err(|e| HarnessError::from_corpus("dataset", e))?;
    if let Some(keep) = &d.labels {
        dataset = select_labels(&dataset, keep)?;
    }
    if let Some(r) = d.reduce {
        dataset = reduce_classification_dataset(&dataset, r.n_train, r.n_test, r.seed)
            .map_err(|e| HarnessError::from_corpus("dataset", e))?;
    }
    let tc = dataset.token_set(&vocab);
    let corpus = match (&d.corpus, spec.subset.needs_corpus()) {
        (Some(path), true) => Some(Corpus::ingest(path, &vocab).map_err(|e| HarnessError::from_corpus("corpus", e))?),
        _ => None,
    };
    Ok(PreparedData { vocab, corpus, dataset, tc })
}

/// Keeps the listed labels, renumbered by their position in `keep`.
fn select_labels(ds: &ClassificationDataset, keep: &[usize]) -> Result<ClassificationDataset, HarnessError> {
    let pick = |items: &[Instance]| -> Vec<Instance> {
        items
            .iter()
            .filter_map(|i| {
                keep.iter().position(|&l| l == i.label).map(|label| Instance { label, ..i.clone() })
            })
            .collect()
    };
    ClassificationDataset::new(pick(&ds.train), pick(&ds.test), keep.len())
        .map_err(|e| HarnessError::from_corpus("dataset", e))
}

fn build_subset(
    spec: &ExperimentSpec,
    data: &PreparedData,
    warnings: &mut Vec<String>,
) -> Result<Option<CorpusSubset>, HarnessError> {
    let Some(corpus) = &data.corpus else { return Ok(None) };
    let vocab = &data.vocab;
    let seed = spec.subset.seed().unwrap_or_else(|| derive_seed(spec.seed, "subset"));
    let limit = |s: CorpusSubset, size: Option<usize>, warnings: &mut Vec<String>| match size {
        Some(n) => {
            if n > s.len() {
                warnings.push(format!("subset has {} paragraphs, fewer than the requested {n}", s.len()));
            }
            s.downsample(corpus, n, seed, vocab)
        }
        None => s,
    };
    let subset = match &spec.subset {
        SubsetRecipe::None => return Ok(None),
        SubsetRecipe::Full => {
            let all = TokenSet::from_ids((0..vocab.len() as TokenId).filter(|&t| !vocab.is_special(t)));
            build_custom_subset(corpus, &all, vocab).map_err(|e| HarnessError::from_corpus("subset", e))?
        }
        SubsetRecipe::Custom { size, .. } => {
            let s = build_custom_subset(corpus, &data.tc, vocab).map_err(|e| HarnessError::from_corpus("subset", e))?;
            limit(s, *size, warnings)
        }
        SubsetRecipe::Random { size, .. } => {
            if *size > corpus.len() {
                warnings.push(format!("corpus has {} paragraphs, fewer than the requested {size}", corpus.len()));
            }
            sample_random_subset(corpus, *size, seed, vocab)
        }
        SubsetRecipe::Inflated { fraction, budget, order, size, .. } => {
            let inflation = InflationSpec { exclusion_fraction: *fraction, filler_budget: *budget, order: *order };
            let s = build_inflated_tm_subset(corpus, &data.tc, &inflation, vocab)
                .map_err(|e| HarnessError::from_corpus("subset", e))?;
            limit(s, *size, warnings)
        }
    };
    if subset.empty_warning {
        warnings.push("no corpus paragraph passed the subset filter".into());
    }
    Ok(Some(subset))
}

/// Model inputs shared by every repetition.
struct Inputs {
    specials: SpecialIds,
    pretrain: Vec<TokenizedSequence>,
    train: EncodedSplit,
    test: EncodedSplit,
    vocab_size: usize,
}

fn encode_inputs(
    spec: &ExperimentSpec,
    data: &PreparedData,
    subset: Option<&CorpusSubset>,
) -> Inputs {
    let mut specials = data.vocab.specials();
    let seq_len = spec.finetune.seq_len;
    let mut pretrain =
        subset.map(|s| encode_paragraphs(&s.paragraphs, specials, spec.pretrain.seq_len)).unwrap_or_default();
    let mut train = EncodedSplit::from_instances(&data.dataset.train, specials, seq_len);
    let mut test = EncodedSplit::from_instances(&data.dataset.test, specials, seq_len);
    let mut vocab_size = data.vocab.len();
    if spec.reduced_embedding {
        let mut allowed: TokenSet = data.tc.iter().collect();
        if let Some(s) = subset {
            allowed = allowed.iter().chain(s.tw.iter()).collect();
        }
        let remap = VocabRemap::new(&data.vocab, &allowed);
        pretrain = pretrain.iter().map(|s| remap.reduce_sequence(s)).collect();
        train = train.remap(&remap);
        test = test.remap(&remap);
        vocab_size = remap.len();
        specials = remap.specials();
    }
    Inputs { specials, pretrain, train, test, vocab_size }
}

fn sized(config: &ModelConfig, vocab_size: usize, num_labels: usize) -> ModelConfig {
    ModelConfig { vocab_size, num_labels, ..config.clone() }
}

/// Accuracies of one arm over the repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; absent for a single repetition.
    pub sd: Option<f64>,
    pub per_label_mean: Vec<f64>,
}

impl ArmSummary {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a FinetuneReport>, num_labels: usize) -> Self {
        let reports: Vec<&FinetuneReport> = reports.into_iter().collect();
        let accuracies: Vec<f64> = reports.iter().map(|r| r.best_accuracy).collect();
        let per_label_mean = (0..num_labels)
            .map(|l| mean(&reports.iter().map(|r| r.best_per_label.get(l).copied().unwrap_or(0.0)).collect::<Vec<_>>()))
            .collect();
        Self { mean: mean(&accuracies), sd: sample_sd(&accuracies), accuracies, per_label_mean }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub index: usize,
    /// Absent when there was nothing to pre-train on.
    pub pretrain_seed: Option<u64>,
    pub finetune_seed: u64,
    pub pretrain_loss: Vec<f64>,
    pub pretrain_accuracy: Vec<f64>,
    pub pretrained: FinetuneReport,
    pub scratch: FinetuneReport,
}

/// Outcome of a gap experiment. Contains no timing, so deterministic runs
/// serialize identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub repetitions: usize,
    pub config_hash: String,
    pub subset: Option<String>,
    pub subset_manifest_hash: Option<String>,
    pub subset_manifest: Option<SubsetManifest>,
    pub overlap: OverlapReport,
    pub model: ModelConfig,
    pub parameters: usize,
    pub latency: usize,
    pub accuracy_measure: String,
    pub pretrained: ArmSummary,
    pub scratch: ArmSummary,
    /// `pretrained.mean - scratch.mean`.
    pub gap: f64,
    pub runs: Vec<RepetitionRecord>,
    pub warnings: Vec<String>,
}

fn rep_seed(seed: u64, rep: usize, stage: &str, member: usize) -> u64 {
    if member == 0 {
        derive_seed(seed, &format!("rep{rep}.{stage}"))
    } else {
        derive_seed(seed, &format!("rep{rep}.{stage}.member{member}"))
    }
}

/// Encoder with its per-epoch loss and masked-token accuracy.
type Pretrained<T> = (Model<T>, Vec<f64>, Vec<f64>);

fn pretrained_encoder<T: Scalar>(
    config: &ModelConfig,
    inputs: &Inputs,
    cfg: &TrainConfig,
) -> Result<Pretrained<T>, HarnessError> {
    let mut model = build_model::<T>(config, cfg.seed).map_err(|e| HarnessError::from_model("pretrain", e))?;
    let r = pretrain(&mut model, &inputs.pretrain, inputs.specials, cfg).map_err(|e| HarnessError::from_train("pretrain", e))?;
    Ok((model, r.epoch_loss, r.epoch_accuracy))
}

fn gap_repetition<T: Scalar>(
    spec: &ExperimentSpec,
    inputs: &Inputs,
    num_labels: usize,
    rep: usize,
) -> Result<RepetitionRecord, HarnessError> {
    let encoder_config = sized(&spec.model, inputs.vocab_size, 0);
    let classifier_config = sized(&spec.model, inputs.vocab_size, num_labels);
    let finetune_seed = rep_seed(spec.seed, rep, "finetune", 0);
    let pretrain_seed = (!inputs.pretrain.is_empty()).then(|| rep_seed(spec.seed, rep, "pretrain", 0));
    let (pretrained_arm, scratch_arm) = rayon::join(
        || -> Result<_, HarnessError> {
            let (encoder, loss, acc) = match pretrain_seed {
                Some(s) => {
                    let (m, l, a) = pretrained_encoder::<T>(&encoder_config, inputs, &spec.pretrain_config(s))?;
                    (Some(m), l, a)
                }
                None => (None, Vec::new(), Vec::new()),
            };
            let (_, report) = finetune(
                &classifier_config,
                encoder.as_ref().map(|m| m.params()),
                &inputs.train,
                &inputs.test,
                &spec.finetune_config(finetune_seed),
            )
            .map_err(|e| HarnessError::from_train("finetune (pre-trained arm)", e))?;
            Ok((report, loss, acc))
        },
        || {
            finetune::<T>(&classifier_config, None, &inputs.train, &inputs.test, &spec.scratch_config(finetune_seed))
                .map(|(_, r)| r)
                .map_err(|e| HarnessError::from_train("finetune (scratch arm)", e))
        },
    );
    let (pretrained, pretrain_loss, pretrain_accuracy) = pretrained_arm?;
    Ok(RepetitionRecord {
        index: rep,
        pretrain_seed,
        finetune_seed,
        pretrain_loss,
        pretrain_accuracy,
        pretrained,
        scratch: scratch_arm?,
    })
}

/// Builds the subset, then for every repetition pre-trains, fine-tunes the
/// pre-trained model and fine-tunes an identically configured model from
/// scratch, and aggregates the two arms.
pub fn run_gap_experiment(spec: &ExperimentSpec, data: &PreparedData) -> Result<ExperimentReport, HarnessError> {
    match spec.precision {
        Precision::F32 => run_gap::<f32>(spec, data),
        Precision::F64 => run_gap::<f64>(spec, data),
    }
}

fn run_gap<T: Scalar>(spec: &ExperimentSpec, data: &PreparedData) -> Result<ExperimentReport, HarnessError> {
    spec.validate()?;
    let mut warnings = Vec::new();
    let subset = build_subset(spec, data, &mut warnings)?;
    let inputs = encode_inputs(spec, data, subset.as_ref());
    if inputs.pretrain.is_empty() {
        warnings.push("empty pre-training subset: both arms start from random weights".into());
    }
    let num_labels = data.dataset.num_labels;
    let classifier_config = sized(&spec.model, inputs.vocab_size, num_labels);
    classifier_config.validate().map_err(|e| HarnessError::from_model("model", e))?;
    let parameters = build_model::<f32>(&classifier_config, 0)
        .map_err(|e| HarnessError::from_model("model", e))?
        .num_parameters();

    let runs: Vec<RepetitionRecord> = (0..spec.repetitions)
        .into_par_iter()
        .map(|r| gap_repetition::<T>(spec, &inputs, num_labels, r))
        .collect::<Result<_, _>>()?;

    let pretrained = ArmSummary::from_reports(runs.iter().map(|r| &r.pretrained), num_labels);
    let scratch = ArmSummary::from_reports(runs.iter().map(|r| &r.scratch), num_labels);
    for (arm, s) in [("pre-trained", &pretrained), ("scratch", &scratch)] {
        if let Some(sd) = s.sd.filter(|&sd| sd > SD_WARNING) {
            warnings.push(format!("{arm} accuracy sd {sd} exceeds {SD_WARNING}"));
        }
    }
    let overlap = match &subset {
        Some(s) => compute_overlap_metrics(s, &data.tc),
        None => overlap_of(0, &TokenSet::new(), &data.tc),
    };
    let manifest = match (&subset, &data.corpus) {
        (Some(s), Some(c)) => Some(s.manifest(c)),
        _ => None,
    };
    Ok(ExperimentReport {
        name: spec.name.clone(),
        seed: spec.seed,
        repetitions: spec.repetitions,
        config_hash: spec.config_hash(),
        subset: subset.as_ref().map(|s| s.provenance.to_string()),
        subset_manifest_hash: manifest.as_ref().map(SubsetManifest::digest),
        subset_manifest: manifest,
        overlap,
        latency: classifier_config.latency(),
        model: classifier_config,
        parameters,
        accuracy_measure: ACCURACY_MEASURE.into(),
        gap: pretrained.mean - scratch.mean,
        pretrained,
        scratch,
        runs,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitteeMemberSummary {
    pub model: ModelConfig,
    pub latency: usize,
    pub accuracy: ArmSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitteeRun {
    pub index: usize,
    pub finetune_seeds: Vec<u64>,
    pub pretrain_seeds: Vec<Option<u64>>,
    pub members: Vec<FinetuneReport>,
    pub committee_accuracy: f64,
    pub committee_per_label: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitteeReport {
    pub name: String,
    pub seed: u64,
    pub repetitions: usize,
    pub config_hash: String,
    pub pretrained: bool,
    pub subset_manifest_hash: Option<String>,
    pub overlap: Option<OverlapReport>,
    pub accuracy_measure: String,
    pub members: Vec<CommitteeMemberSummary>,
    pub committee: ArmSummary,
    /// Members run side by side, so the committee is as slow as its
    /// slowest member.
    pub committee_latency: usize,
    pub reference_latency: Option<usize>,
    pub runs: Vec<CommitteeRun>,
    pub warnings: Vec<String>,
}

/// Trains every committee member (pre-training first when requested),
/// evaluates each member alone and the soft committee of their best-epoch
/// models.
pub fn run_committee_experiment(spec: &ExperimentSpec, data: &PreparedData) -> Result<CommitteeReport, HarnessError> {
    match spec.precision {
        Precision::F32 => run_committee::<f32>(spec, data),
        Precision::F64 => run_committee::<f64>(spec, data),
    }
}

fn run_committee<T: Scalar>(spec: &ExperimentSpec, data: &PreparedData) -> Result<CommitteeReport, HarnessError> {
    spec.validate()?;
    let committee = spec.committee.as_ref().ok_or_else(|| HarnessError::usage("spec", "no [committee] section"))?;
    let mut warnings = Vec::new();
    let subset = if committee.pretrained { build_subset(spec, data, &mut warnings)? } else { None };
    let inputs = encode_inputs(spec, data, subset.as_ref());
    if committee.pretrained && inputs.pretrain.is_empty() {
        warnings.push("empty pre-training subset: members start from random weights".into());
    }
    let num_labels = data.dataset.num_labels;
    for m in &committee.members {
        sized(m, inputs.vocab_size, num_labels).validate().map_err(|e| HarnessError::from_model("model", e))?;
    }
    let batch_size = spec.finetune.batch_size;

    let runs: Vec<CommitteeRun> = (0..spec.repetitions)
        .into_par_iter()
        .map(|rep| -> Result<CommitteeRun, HarnessError> {
            let trained: Vec<(Model<T>, FinetuneReport, u64, Option<u64>)> = committee
                .members
                .par_iter()
                .enumerate()
                .map(|(i, member)| {
                    let ft_seed = rep_seed(spec.seed, rep, "finetune", i);
                    let pre_seed = (committee.pretrained && !inputs.pretrain.is_empty())
                        .then(|| rep_seed(spec.seed, rep, "pretrain", i));
                    let encoder = match pre_seed {
                        Some(s) => Some(
                            pretrained_encoder::<T>(&sized(member, inputs.vocab_size, 0), &inputs, &spec.pretrain_config(s))?
                                .0,
                        ),
                        None => None,
                    };
                    let (model, report) = finetune(
                        &sized(member, inputs.vocab_size, num_labels),
                        encoder.as_ref().map(|m| m.params()),
                        &inputs.train,
                        &inputs.test,
                        &spec.finetune_config(ft_seed),
                    )
                    .map_err(|e| HarnessError::from_train(format!("finetune (member {i})"), e))?;
                    Ok((model, report, ft_seed, pre_seed))
                })
                .collect::<Result<_, HarnessError>>()?;
            let mut models = Vec::with_capacity(trained.len());
            let mut members = Vec::with_capacity(trained.len());
            let mut finetune_seeds = Vec::new();
            let mut pretrain_seeds = Vec::new();
            for (m, r, f, p) in trained {
                models.push(m);
                members.push(r);
                finetune_seeds.push(f);
                pretrain_seeds.push(p);
            }
            let eval = Committee::new(models)
                .and_then(|c| c.evaluate(&inputs.test, batch_size))
                .map_err(|e| HarnessError::data("committee", e.to_string()))?;
            Ok(CommitteeRun {
                index: rep,
                finetune_seeds,
                pretrain_seeds,
                members,
                committee_accuracy: eval.committee.accuracy,
                committee_per_label: eval.committee.per_label,
            })
        })
        .collect::<Result<_, _>>()?;

    let members: Vec<CommitteeMemberSummary> = committee
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let model = sized(m, inputs.vocab_size, num_labels);
            CommitteeMemberSummary {
                latency: model.latency(),
                accuracy: ArmSummary::from_reports(runs.iter().map(|r| &r.members[i]), num_labels),
                model,
            }
        })
        .collect();
    let accuracies: Vec<f64> = runs.iter().map(|r| r.committee_accuracy).collect();
    let per_label_mean = (0..num_labels)
        .map(|l| mean(&runs.iter().map(|r| r.committee_per_label[l]).collect::<Vec<_>>()))
        .collect();
    let summary = ArmSummary { mean: mean(&accuracies), sd: sample_sd(&accuracies), accuracies, per_label_mean };
    if let Some(sd) = summary.sd.filter(|&sd| sd > SD_WARNING) {
        warnings.push(format!("committee accuracy sd {sd} exceeds {SD_WARNING}"));
    }
    Ok(CommitteeReport {
        name: spec.name.clone(),
        seed: spec.seed,
        repetitions: spec.repetitions,
        config_hash: spec.config_hash(),
        pretrained: committee.pretrained,
        subset_manifest_hash: match (&subset, &data.corpus) {
            (Some(s), Some(c)) => Some(s.manifest(c).digest()),
            _ => None,
        },
        overlap: subset.as_ref().map(|s| compute_overlap_metrics(s, &data.tc)),
        accuracy_measure: ACCURACY_MEASURE.into(),
        committee_latency: members.iter().map(|m| m.latency).max().unwrap_or(0),
        reference_latency: committee.reference.as_ref().map(ModelConfig::latency),
        members,
        committee: summary,
        runs,
        warnings,
    })
}

/// The pre-training subset named by the spec's recipe, with any warnings
/// raised while building it. `None` when the recipe is `none`.
pub fn build_experiment_subset(
    spec: &ExperimentSpec,
    data: &PreparedData,
) -> Result<(Option<CorpusSubset>, Vec<String>), HarnessError> {
    let mut warnings = Vec::new();
    let subset = build_subset(spec, data, &mut warnings)?;
    Ok((subset, warnings))
}

/// Outcome of a stand-alone stage run.
#[derive(Clone, Debug)]
pub struct StageOutcome<T, R> {
    pub model: Model<T>,
    pub report: R,
    pub seed: u64,
    pub subset_manifest_hash: Option<String>,
    pub warnings: Vec<String>,
}

fn stage_inputs(
    spec: &ExperimentSpec,
    data: &PreparedData,
    with_subset: bool,
) -> Result<(Inputs, Option<String>, Vec<String>), HarnessError> {
    let mut warnings = Vec::new();
    let subset = if with_subset || spec.reduced_embedding { build_subset(spec, data, &mut warnings)? } else { None };
    let hash = match (&subset, &data.corpus) {
        (Some(s), Some(c)) => Some(s.manifest(c).digest()),
        _ => None,
    };
    Ok((encode_inputs(spec, data, subset.as_ref()), hash, warnings))
}

/// Pre-trains the spec's model on its subset with the seed a gap
/// experiment uses for repetition 0.
pub fn run_pretrain_stage<T: Scalar>(
    spec: &ExperimentSpec,
    data: &PreparedData,
) -> Result<StageOutcome<T, PretrainReport>, HarnessError> {
    spec.validate()?;
    let (inputs, subset_manifest_hash, warnings) = stage_inputs(spec, data, true)?;
    if inputs.pretrain.is_empty() {
        return Err(HarnessError::data("pretrain", "the subset recipe selected no paragraphs"));
    }
    let seed = rep_seed(spec.seed, 0, "pretrain", 0);
    let mut model = build_model::<T>(&sized(&spec.model, inputs.vocab_size, 0), seed)
        .map_err(|e| HarnessError::from_model("pretrain", e))?;
    let report = pretrain(&mut model, &inputs.pretrain, inputs.specials, &spec.pretrain_config(seed))
        .map_err(|e| HarnessError::from_train("pretrain", e))?;
    Ok(StageOutcome { model, report, seed, subset_manifest_hash, warnings })
}

/// Fine-tunes the spec's model, starting from `encoder` when given, with
/// the seed a gap experiment uses for repetition 0. The scratch settings
/// apply when there is no encoder.
pub fn run_finetune_stage<T: Scalar>(
    spec: &ExperimentSpec,
    data: &PreparedData,
    encoder: Option<&Model<T>>,
) -> Result<StageOutcome<T, FinetuneReport>, HarnessError> {
    spec.validate()?;
    let (inputs, subset_manifest_hash, warnings) = stage_inputs(spec, data, false)?;
    let config = sized(&spec.model, inputs.vocab_size, data.dataset.num_labels);
    if let Some(e) = encoder {
        if e.config().vocab_size != inputs.vocab_size {
            return Err(HarnessError::data(
                "finetune",
                format!("encoder vocabulary {} does not match the data's {}", e.config().vocab_size, inputs.vocab_size),
            ));
        }
    }
    let seed = rep_seed(spec.seed, 0, "finetune", 0);
    let cfg = if encoder.is_some() { spec.finetune_config(seed) } else { spec.scratch_config(seed) };
    let (model, report) = finetune(&config, encoder.map(|m| m.params()), &inputs.train, &inputs.test, &cfg)
        .map_err(|e| HarnessError::from_train("finetune", e))?;
    Ok(StageOutcome { model, report, seed, subset_manifest_hash, warnings })
}

/// Evaluates trained classifiers on the spec's test split, alone and as a
/// soft committee.
pub fn run_evaluate_stage<T: Scalar>(
    spec: &ExperimentSpec,
    data: &PreparedData,
    models: Vec<Model<T>>,
) -> Result<CommitteeEvaluation, HarnessError> {
    let (inputs, _, _) = stage_inputs(spec, data, false)?;
    Committee::new(models)
        .and_then(|c| c.evaluate(&inputs.test, spec.finetune.batch_size))
        .map_err(|e| HarnessError::data("evaluate", e.to_string()))
}
