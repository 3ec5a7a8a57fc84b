use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, TokenSet};
use crate::rng::{partial_fisher_yates, seeded};
use crate::tokenizer::{tokenize_ids, TokenId, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One labeled text with its full tokenization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub text: String,
    pub label: usize,
    pub tokens: Vec<TokenId>,
}

impl Instance {
    pub fn new(text: impl Into<String>, label: usize, vocab: &Vocab) -> Self {
        let text = text.into();
        let tokens = tokenize_ids(&text, vocab);
        Self { text, label, tokens }
    }
}

/// Record layout of a delimited classification file.
///
/// The first field is the label; the remaining fields are joined with a
/// space to form the text. A first line whose label does not parse is taken
/// as a header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFormat {
    pub delimiter: u8,
    /// Label value that maps to id 0.
    pub label_base: usize,
}

impl DatasetFormat {
    pub const FEWREL: Self = Self { delimiter: b'\t', label_base: 0 };
    pub const AGNEWS: Self = Self { delimiter: b',', label_base: 1 };
    pub const DBPEDIA: Self = Self { delimiter: b',', label_base: 1 };

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "fewrel" | "tsv" => Some(Self::FEWREL),
            "agnews" => Some(Self::AGNEWS),
            "dbpedia" => Some(Self::DBPEDIA),
            "csv" => Some(Self { delimiter: b',', label_base: 0 }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClassificationDataset {
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    pub num_labels: usize,
}

impl ClassificationDataset {
    /// Checks that labels are dense in `[0, num_labels)`.
    pub fn new(train: Vec<Instance>, test: Vec<Instance>, num_labels: usize) -> Result<Self, CorpusError> {
        let mut seen = vec![false; num_labels];
        for inst in train.iter().chain(&test) {
            match seen.get_mut(inst.label) {
                Some(s) => *s = true,
                None => return Err(CorpusError::SparseLabels(inst.label)),
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(CorpusError::SparseLabels(missing));
        }
        Ok(Self { train, test, num_labels })
    }

    /// Loads train and test files; the label count is the largest id + 1.
    pub fn load(
        train: impl AsRef<Path>,
        test: impl AsRef<Path>,
        format: DatasetFormat,
        vocab: &Vocab,
    ) -> Result<Self, CorpusError> {
        let train = read_instances(train.as_ref(), format, vocab)?;
        let test = read_instances(test.as_ref(), format, vocab)?;
        let num_labels = train.iter().chain(&test).map(|i| i.label + 1).max().unwrap_or(0);
        Self::new(train, test, num_labels)
    }

    pub fn split(&self, split: Split) -> &[Instance] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// `T_C` over train and test, with frequencies, specials excluded.
    pub fn token_set(&self, vocab: &Vocab) -> TokenSet {
        extract_token_set(self.train.iter().chain(&self.test), vocab)
    }

    pub fn label_counts(&self, split: Split) -> Vec<usize> {
        let mut c = vec![0; self.num_labels];
        for i in self.split(split) {
            c[i.label] += 1;
        }
        c
    }
}

pub fn extract_token_set<'a>(instances: impl IntoIterator<Item = &'a Instance>, vocab: &Vocab) -> TokenSet {
    TokenSet::counted(
        instances.into_iter().flat_map(|i| i.tokens.iter().copied()).filter(|&t| !vocab.is_special(t)),
    )
}

fn read_instances(path: &Path, format: DatasetFormat, vocab: &Vocab) -> Result<Vec<Instance>, CorpusError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(format.delimiter)
        .flexible(true)
        .quoting(format.delimiter != b'\t')
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => CorpusError::Io { path: display.clone(), source },
            other => CorpusError::Parse { path: display.clone(), line: 0, message: format!("{other:?}") },
        })?;
    let mut out = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let line = n + 1;
        let record =
            record.map_err(|e| CorpusError::Parse { path: display.clone(), line, message: e.to_string() })?;
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let label_field = record.get(0).unwrap_or("").trim();
        let label = match label_field.parse::<usize>() {
            Ok(l) => l,
            Err(_) if n == 0 => continue,
            Err(_) => {
                return Err(CorpusError::Parse {
                    path: display,
                    line,
                    message: format!("label {label_field:?} is not an integer"),
                })
            }
        };
        let label = label.checked_sub(format.label_base).ok_or_else(|| CorpusError::Parse {
            path: display.clone(),
            line,
            message: format!("label {label} is below base {}", format.label_base),
        })?;
        let text = record.iter().skip(1).collect::<Vec<_>>().join(" ");
        out.push(Instance::new(text, label, vocab));
    }
    Ok(out)
}

/// Keeps `n_train` train and `n_test` test instances per label, sampled
/// uniformly without replacement. Kept instances retain their file order.
pub fn reduce_classification_dataset(
    ds: &ClassificationDataset,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<ClassificationDataset, CorpusError> {
    let mut rng = seeded(seed);
    let mut pick = |split: Split, n: usize| -> Result<Vec<Instance>, CorpusError> {
        let items = ds.split(split);
        let mut by_label: BTreeMap<usize, Vec<usize>> = (0..ds.num_labels).map(|l| (l, Vec::new())).collect();
        for (i, inst) in items.iter().enumerate() {
            by_label.entry(inst.label).or_default().push(i);
        }
        let mut keep = Vec::with_capacity(n * ds.num_labels);
        for (label, members) in by_label {
            if members.len() < n {
                return Err(CorpusError::InsufficientInstances { label, split, needed: n, available: members.len() });
            }
            keep.extend(partial_fisher_yates(members.len(), n, &mut rng).into_iter().map(|j| members[j]));
        }
        keep.sort_unstable();
        Ok(keep.into_iter().map(|i| items[i].clone()).collect())
    };
    let train = pick(Split::Train, n_train)?;
    let test = pick(Split::Test, n_test)?;
    Ok(ClassificationDataset { train, test, num_labels: ds.num_labels })
}
