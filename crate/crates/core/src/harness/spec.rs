use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::ExclusionOrder;
use crate::harness::HarnessError;
use crate::model::ModelConfig;
use crate::train::{TrainConfig, TrainMode};

fn one() -> usize {
    1
}

fn default_format() -> String {
    "fewrel".into()
}

/// Where an experiment's inputs live. Relative paths resolve against the
/// data root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub vocab: PathBuf,
    /// Expected vocabulary length; checked on load when set.
    #[serde(default)]
    pub vocab_size: Option<usize>,
    /// Pre-training corpus, one paragraph per line. Only needed when the
    /// subset recipe draws from it.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    pub train: PathBuf,
    pub test: PathBuf,
    /// `fewrel`, `agnews`, `dbpedia`, `tsv` or `csv`.
    #[serde(default = "default_format")]
    pub format: String,
    /// Keep only these labels, renumbered densely in the given order.
    #[serde(default)]
    pub labels: Option<Vec<usize>>,
    #[serde(default)]
    pub reduce: Option<Reduction>,
}

/// Per-label instance counts for a reduced dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reduction {
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
}

/// How the pre-training paragraphs are chosen. `size` on a filtered recipe
/// draws that many of the surviving paragraphs. Sampling uses `seed` when
/// given, otherwise a seed derived from the experiment seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SubsetRecipe {
    /// No pre-training (`W_S = 0`).
    None,
    /// The whole corpus.
    Full,
    /// Paragraphs made only of classification-task tokens.
    Custom {
        #[serde(default)]
        size: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Random {
        size: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Paragraphs avoiding a share of the task tokens.
    Inflated {
        fraction: f64,
        #[serde(default)]
        budget: Option<usize>,
        #[serde(default)]
        order: ExclusionOrder,
        #[serde(default)]
        size: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl SubsetRecipe {
    pub fn needs_corpus(&self) -> bool {
        !matches!(self, SubsetRecipe::None)
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            SubsetRecipe::Custom { seed, .. }
            | SubsetRecipe::Random { seed, .. }
            | SubsetRecipe::Inflated { seed, .. } => *seed,
            SubsetRecipe::None | SubsetRecipe::Full => None,
        }
    }
}

/// Members of a soft committee trained on the experiment's data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitteeSpec {
    pub members: Vec<ModelConfig>,
    /// Pre-train each member on the experiment subset before fine-tuning.
    #[serde(default)]
    pub pretrained: bool,
    /// Deeper model whose latency the committee is compared with.
    #[serde(default)]
    pub reference: Option<ModelConfig>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Everything needed to run one experiment. Stage seeds inside the train
/// sections are ignored: each repetition derives its own from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    pub data: DataSpec,
    pub subset: SubsetRecipe,
    /// `vocab_size` and `num_labels` are taken from the data.
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Fine-tuning settings for the arm without pre-training, when they
    /// differ.
    #[serde(default)]
    pub finetune_scratch: Option<TrainConfig>,
    /// Shrink the embedding table to the specials plus `T_C ∪ T_W`.
    #[serde(default)]
    pub reduced_embedding: bool,
    #[serde(default)]
    pub committee: Option<CommitteeSpec>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = toml::from_str(text).map_err(|e| HarnessError::usage("spec", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::usage("spec", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::usage("spec", m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.subset.needs_corpus() && self.data.corpus.is_none() {
            return bad("the subset recipe needs data.corpus".into());
        }
        if let SubsetRecipe::Inflated { fraction, .. } = self.subset {
            if !(0.0..=1.0).contains(&fraction) {
                return bad(format!("inflation fraction {fraction} outside [0, 1]"));
            }
        }
        if let Some(labels) = &self.data.labels {
            let mut sorted = labels.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if labels.is_empty() || sorted.len() != labels.len() {
                return bad("data.labels must be non-empty and distinct".into());
            }
        }
        for (what, cfg) in [("pretrain", &self.pretrain), ("finetune", &self.finetune)]
            .into_iter()
            .chain(self.finetune_scratch.as_ref().map(|c| ("finetune_scratch", c)))
        {
            cfg.validate().map_err(|e| HarnessError::usage("spec", format!("{what}: {e}")))?;
        }
        if let Some(c) = &self.committee {
            if c.members.is_empty() {
                return bad("a committee needs at least one member".into());
            }
        }
        Ok(())
    }

    /// Joins relative data paths onto `root`.
    pub fn resolve_paths(&mut self, root: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        fix(&mut self.data.vocab);
        fix(&mut self.data.train);
        fix(&mut self.data.test);
        if let Some(c) = &mut self.data.corpus {
            fix(c);
        }
    }

    pub(crate) fn pretrain_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { mode: TrainMode::Pretrain, seed, ..self.pretrain.clone() }
    }

    pub(crate) fn finetune_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { mode: TrainMode::Finetune, seed, ..self.finetune.clone() }
    }

    pub(crate) fn scratch_config(&self, seed: u64) -> TrainConfig {
        let base = self.finetune_scratch.as_ref().unwrap_or(&self.finetune);
        TrainConfig { mode: TrainMode::Finetune, seed, ..base.clone() }
    }
}
