//! Ready-made experiment specs for the full-scale runs, keyed by name.
//!
//! Data paths are relative to the data root:
//!
//! ```text
//! bert-base-uncased-vocab.txt
//! wikipedia/paragraphs.txt       one paragraph per line
//! fewrel/{train,test}.tsv        label<TAB>text, 630/70 per label
//! agnews/{train,test}.csv        label,title,description (labels from 1)
//! dbpedia/{train,test}.csv       label,title,content (labels from 1)
//! synthetic/...                  written by `tlm synth-gen`
//! ```
//!
//! Hyperparameter pairs are fine-tuning learning rate and weight decay.
//! Pre-training always uses fifty epochs at 5.5e-5 with decay 1e-2.

use std::path::PathBuf;

use crate::corpus::ExclusionOrder;
use crate::harness::{CommitteeSpec, DataSpec, ExperimentSpec, Precision, Reduction, SubsetRecipe};
use crate::model::{ConvLayerSpec, ModelConfig};
use crate::tokenizer::BERT_VOCAB_SIZE;
use crate::train::{TrainConfig, TrainMode};

/// Seed of the randomly selected pre-training subsets.
pub const SUBSET_SEED: u64 = 42;

pub const FEWREL_LABELS_A: [usize; 10] = [5, 10, 11, 16, 17, 25, 27, 33, 36, 39];
pub const FEWREL_LABELS_B: [usize; 10] = [8, 13, 18, 23, 26, 30, 42, 49, 50, 56];
pub const FEWREL_LABELS_C: [usize; 10] = [0, 2, 5, 10, 11, 16, 17, 36, 45, 63];

const REPETITIONS: usize = 5;

#[derive(Clone, Copy)]
enum Task {
    FewRel,
    AgNews,
    DbPedia,
}

fn data(task: Task, labels: Option<&[usize]>, reduce: Option<(usize, usize)>) -> DataSpec {
    let (dir, ext, format) = match task {
        Task::FewRel => ("fewrel", "tsv", "fewrel"),
        Task::AgNews => ("agnews", "csv", "agnews"),
        Task::DbPedia => ("dbpedia", "csv", "dbpedia"),
    };
    DataSpec {
        vocab: PathBuf::from("bert-base-uncased-vocab.txt"),
        vocab_size: Some(BERT_VOCAB_SIZE),
        corpus: Some(PathBuf::from("wikipedia/paragraphs.txt")),
        train: PathBuf::from(format!("{dir}/train.{ext}")),
        test: PathBuf::from(format!("{dir}/test.{ext}")),
        format: format.into(),
        labels: labels.map(<[usize]>::to_vec),
        reduce: reduce.map(|(n_train, n_test)| Reduction { n_train, n_test, seed: SUBSET_SEED }),
    }
}

fn finetune(lr: f64, wd: f64) -> TrainConfig {
    TrainConfig { patience: None, ..TrainConfig::finetune_default(lr, wd, 0) }
}

fn random(ws: usize) -> SubsetRecipe {
    if ws == 0 {
        SubsetRecipe::None
    } else {
        SubsetRecipe::Random { size: ws, seed: Some(SUBSET_SEED) }
    }
}

fn inflated(ws: usize) -> SubsetRecipe {
    SubsetRecipe::Inflated {
        fraction: 0.5,
        budget: None,
        order: ExclusionOrder::Lowest,
        size: Some(ws),
        seed: Some(SUBSET_SEED),
    }
}

fn gap(name: String, data: DataSpec, subset: SubsetRecipe, (lr, wd): (f64, f64)) -> ExperimentSpec {
    let mut data = data;
    if !subset.needs_corpus() {
        data.corpus = None;
    }
    ExperimentSpec {
        name,
        repetitions: REPETITIONS,
        seed: 0,
        precision: Precision::F32,
        data,
        subset,
        model: ModelConfig::bert(6, 12),
        pretrain: TrainConfig::pretrain_default(0),
        finetune: finetune(lr, wd),
        finetune_scratch: None,
        reduced_embedding: false,
        committee: None,
    }
}

fn bert1(heads: usize, conv: Vec<ConvLayerSpec>) -> ModelConfig {
    ModelConfig::bert(1, heads).with_conv(conv)
}

fn table8_members() -> Vec<ModelConfig> {
    let c = ConvLayerSpec::new;
    vec![
        bert1(8, vec![c(64, 3, 3), c(64, 3, 3)]),
        bert1(12, vec![c(64, 3, 3), c(64, 3, 3)]),
        bert1(24, vec![]),
        bert1(12, vec![c(64, 16, 3), c(64, 16, 3)]),
        bert1(12, vec![c(32, 3, 3), c(32, 3, 3), c(32, 3, 3)]),
    ]
}

fn committee(mut spec: ExperimentSpec, members: Vec<ModelConfig>, pretrained: bool) -> ExperimentSpec {
    spec.committee = Some(CommitteeSpec { members, pretrained, reference: Some(ModelConfig::bert(6, 12)) });
    spec
}

const FEWREL10_ROWS: [(usize, (f64, f64)); 6] = [
    (90_000, (5e-5, 1e-3)),
    (40_000, (5e-5, 2e-2)),
    (20_000, (7e-5, 1.5e-2)),
    (5_000, (5e-5, 1.5e-2)),
    (2_000, (5e-5, 5e-3)),
    (0, (5e-5, 1.2e-2)),
];

const FEWREL64_ROWS: [(usize, (f64, f64)); 7] = [
    (200_000, (5e-5, 1.2e-2)),
    (90_000, (5e-5, 1.2e-2)),
    (40_000, (5e-5, 1.5e-2)),
    (20_000, (5e-5, 1e-3)),
    (5_000, (5e-5, 1e-2)),
    (2_000, (5e-5, 1e-2)),
    (0, (5e-5, 5e-3)),
];

const NEWS_ROWS: [(usize, (f64, f64)); 6] = [
    (90_000, (5e-5, 1.2e-2)),
    (40_000, (5e-5, 1.5e-2)),
    (20_000, (5e-5, 1e-3)),
    (5_000, (5e-5, 1e-2)),
    (2_000, (2e-4, 8e-2)),
    (0, (5e-5, 5e-3)),
];

fn full_scale() -> Vec<ExperimentSpec> {
    let mut out = Vec::new();
    for (i, labels) in [FEWREL_LABELS_A, FEWREL_LABELS_B, FEWREL_LABELS_C].iter().enumerate() {
        out.push(gap(
            format!("fewrel10-custom-{}", ["a", "b", "c"][i]),
            data(Task::FewRel, Some(labels), None),
            SubsetRecipe::Custom { size: None, seed: None },
            (8e-5, 1e-2),
        ));
    }
    out.push(gap(
        "fewrel64-custom-20x20".into(),
        data(Task::FewRel, None, Some((20, 20))),
        SubsetRecipe::Custom { size: None, seed: None },
        (5e-5, 1.1e-2),
    ));
    let mut s = gap(
        "fewrel64-custom-30x20".into(),
        data(Task::FewRel, None, Some((30, 20))),
        SubsetRecipe::Custom { size: None, seed: None },
        (5e-5, 1.1e-2),
    );
    s.finetune_scratch = Some(finetune(1e-5, 1.1e-2));
    out.push(s);
    for (ws, hp) in FEWREL10_ROWS {
        out.push(gap(format!("fewrel10-random-{ws}"), data(Task::FewRel, Some(&FEWREL_LABELS_A), None), random(ws), hp));
    }
    for (ws, hp) in FEWREL64_ROWS {
        out.push(gap(format!("fewrel64-random-{ws}"), data(Task::FewRel, None, None), random(ws), hp));
    }
    out.push(gap(
        "fewrel10-inflated-40000".into(),
        data(Task::FewRel, Some(&FEWREL_LABELS_A), None),
        inflated(40_000),
        (5.5e-5, 2e-2),
    ));
    out.push(gap("fewrel64-inflated-40000".into(), data(Task::FewRel, None, None), inflated(40_000), (5.5e-5, 2e-2)));
    for (ws, hp) in NEWS_ROWS {
        out.push(gap(format!("agnews-random-{ws}"), data(Task::AgNews, None, Some((1000, 1000))), random(ws), hp));
        out.push(gap(format!("dbpedia-random-{ws}"), data(Task::DbPedia, None, Some((100, 100))), random(ws), hp));
    }
    out.push(gap(
        "dbpedia-inflated-20000".into(),
        data(Task::DbPedia, None, Some((100, 100))),
        inflated(20_000),
        (5e-5, 1.2e-2),
    ));
    out.push(committee(
        gap(
            "fewrel10-committee".into(),
            data(Task::FewRel, Some(&FEWREL_LABELS_A), None),
            SubsetRecipe::Custom { size: None, seed: None },
            (1e-4, 1e-2),
        ),
        table8_members(),
        true,
    ));
    out.push(committee(
        gap("fewrel64-committee".into(), data(Task::FewRel, None, None), random(40_000), (1e-4, 1e-2)),
        table8_members(),
        true,
    ));
    out.push(committee(
        gap("agnews-committee".into(), data(Task::AgNews, None, Some((1000, 1000))), SubsetRecipe::None, (1e-4, 1.1e-2)),
        vec![bert1(12, vec![]), bert1(12, vec![]), bert1(12, vec![ConvLayerSpec::new(64, 3, 3)])],
        false,
    ));
    out
}

/// Model used by the synthetic presets: two blocks of two 8-wide heads.
pub fn micro_model() -> ModelConfig {
    ModelConfig { head_dim: 8, max_positions: 32, dropout: 0.1, ..ModelConfig::bert(2, 2) }
}

/// Gap experiment on the synthetic benchmark written by `tlm synth-gen`
/// under `synthetic/`.
pub fn synthetic_gap(ws: usize) -> ExperimentSpec {
    let data = DataSpec {
        vocab: PathBuf::from("synthetic/vocab.txt"),
        vocab_size: None,
        corpus: Some(PathBuf::from("synthetic/corpus.txt")),
        train: PathBuf::from("synthetic/train.tsv"),
        test: PathBuf::from("synthetic/test.tsv"),
        format: "tsv".into(),
        labels: None,
        reduce: None,
    };
    let pretrain = TrainConfig {
        mode: TrainMode::Pretrain,
        learning_rate: 5e-3,
        weight_decay: 1e-2,
        epochs: 40,
        batch_size: 16,
        seq_len: 32,
        ..TrainConfig::pretrain_default(0)
    };
    let finetune = TrainConfig { epochs: 30, batch_size: 8, seq_len: 32, ..finetune(1e-3, 1e-2) };
    ExperimentSpec {
        name: format!("synthetic-random-{ws}"),
        repetitions: 1,
        seed: 0,
        precision: Precision::F32,
        data: data.clone(),
        subset: if ws == 0 { SubsetRecipe::None } else { SubsetRecipe::Random { size: ws, seed: None } },
        model: micro_model(),
        pretrain,
        finetune,
        finetune_scratch: None,
        reduced_embedding: false,
        committee: None,
    }
}

fn synthetic() -> Vec<ExperimentSpec> {
    let mut out: Vec<_> = [2000, 200, 0].into_iter().map(synthetic_gap).collect();
    let mut inflated = synthetic_gap(500);
    inflated.name = "synthetic-inflated-500".into();
    inflated.subset = SubsetRecipe::Inflated {
        fraction: 0.4,
        budget: None,
        order: ExclusionOrder::Lowest,
        size: Some(500),
        seed: None,
    };
    out.push(inflated);
    let mut c = synthetic_gap(2000);
    c.name = "synthetic-committee".into();
    let m = micro_model();
    c.committee = Some(CommitteeSpec {
        members: vec![
            ModelConfig { blocks: 1, ..m.clone() },
            ModelConfig { blocks: 1, heads: 4, ..m.clone() },
            ModelConfig { blocks: 1, conv_layers: vec![ConvLayerSpec::new(4, 3, 3)], ..m.clone() },
        ],
        pretrained: true,
        reference: Some(m),
    });
    out.push(c);
    out
}

/// Every shipped preset in a fixed order.
pub fn all() -> Vec<ExperimentSpec> {
    let mut out = full_scale();
    out.extend(synthetic());
    out
}

pub fn names() -> Vec<String> {
    all().into_iter().map(|s| s.name).collect()
}

pub fn get(name: &str) -> Option<ExperimentSpec> {
    all().into_iter().find(|s| s.name == name)
}
