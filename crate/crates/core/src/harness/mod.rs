//! Experiment orchestration: data preparation, gap and committee
//! experiments, report tables, presets and a synthetic benchmark.

mod experiment;
pub mod presets;
mod report;
mod spec;
pub mod synth;

pub use experiment::{
    build_experiment_subset, prepare, run_committee_experiment, run_evaluate_stage, run_finetune_stage,
    run_gap_experiment, run_pretrain_stage, ArmSummary, CommitteeMemberSummary, CommitteeReport,
    CommitteeRun, ExperimentReport, PreparedData, RepetitionRecord, StageOutcome, SD_WARNING,
};
pub use report::{emit_report, parse_table, write_report, CommitteeRow, GapRow, ReportFormat, TableRow};
pub use spec::{CommitteeSpec, DataSpec, ExperimentSpec, Precision, Reduction, SubsetRecipe};

use std::fmt;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::model::ModelError;
use crate::tokenizer::TokenizerError;
use crate::train::TrainError;

/// Broad failure class; the CLI maps it to an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorClass::Usage => "usage",
            ErrorClass::Data => "data",
            ErrorClass::Numerical => "numerical",
        })
    }
}

/// A failure tagged with the stage it happened in.
#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct HarnessError {
    pub stage: String,
    pub class: ErrorClass,
    pub message: String,
}

impl HarnessError {
    pub fn new(stage: impl Into<String>, class: ErrorClass, message: impl Into<String>) -> Self {
        Self { stage: stage.into(), class, message: message.into() }
    }

    pub fn usage(stage: impl Into<String>, message: impl Into<String>) -> Self {
        Self::new(stage, ErrorClass::Usage, message)
    }

    pub fn data(stage: impl Into<String>, message: impl Into<String>) -> Self {
        Self::new(stage, ErrorClass::Data, message)
    }

    pub fn from_corpus(stage: impl Into<String>, e: CorpusError) -> Self {
        Self::data(stage, e.to_string())
    }

    pub fn from_tokenizer(stage: impl Into<String>, e: TokenizerError) -> Self {
        Self::data(stage, e.to_string())
    }

    pub fn from_model(stage: impl Into<String>, e: ModelError) -> Self {
        let class = match e {
            ModelError::InvalidConfig(_) => ErrorClass::Usage,
            ModelError::Numerics(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        };
        Self::new(stage, class, e.to_string())
    }

    pub fn from_train(stage: impl Into<String>, e: TrainError) -> Self {
        let class = if e.is_numerical() {
            ErrorClass::Numerical
        } else if matches!(e, TrainError::InvalidConfig(_) | TrainError::Model(ModelError::InvalidConfig(_))) {
            ErrorClass::Usage
        } else {
            ErrorClass::Data
        };
        Self::new(stage, class, e.to_string())
    }
}

/// Arithmetic mean; zero for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation (`n - 1` denominator); `None` below two values.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}
