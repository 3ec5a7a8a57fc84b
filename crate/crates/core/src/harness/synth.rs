//! Synthetic topic corpus and classification task for CPU-scale runs.
//!
//! The vocabulary holds function words and several topics of topic words.
//! Corpus paragraphs follow a first-order chain: each paragraph has one
//! topic, topic words follow a Zipf law within the topic, and every topic
//! word has a preferred successor. Classification instances are labeled by
//! topic and draw topic words uniformly, so rare corpus words matter as much
//! as common ones.

use std::fs;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, seeded, uniform_below, unit_f64};
use crate::tokenizer::{CLS, MASK, PAD, SEP, UNK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub function_words: usize,
    pub zipf_exponent: f64,
    /// Chance that a topic word is followed by its preferred successor.
    pub successor_prob: f64,
    pub paragraphs: usize,
    pub paragraph_len: (usize, usize),
    /// Share of corpus words that are topic words.
    pub topic_rate: f64,
    /// Share of corpus topic words taken from a different topic.
    pub stray_rate: f64,
    pub instance_len: (usize, usize),
    pub instance_topic_rate: f64,
    /// Share of instance topic words taken from a different topic.
    pub instance_noise: f64,
    pub train_per_label: usize,
    pub test_per_label: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            topics: 4,
            words_per_topic: 40,
            function_words: 35,
            zipf_exponent: 1.0,
            successor_prob: 0.3,
            paragraphs: 4_000,
            paragraph_len: (12, 24),
            topic_rate: 0.85,
            stray_rate: 0.05,
            instance_len: (8, 14),
            instance_topic_rate: 0.4,
            instance_noise: 0.3,
            train_per_label: 10,
            test_per_label: 100,
        }
    }
}

/// Generated vocabulary, corpus and labeled splits.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    /// Specials first, then function words, then topic words topic by topic.
    pub vocab: Vec<String>,
    pub corpus: Vec<String>,
    pub train: Vec<(usize, String)>,
    pub test: Vec<(usize, String)>,
}

/// Cumulative Zipf weights over ranks `1..=n`.
fn zipf_cdf(n: usize, s: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = (1..=n)
        .map(|r| {
            acc += 1.0 / (r as f64).powf(s);
            acc
        })
        .collect();
    for c in &mut cdf {
        *c /= acc;
    }
    cdf
}

fn draw_cdf<R: RngCore>(cdf: &[f64], rng: &mut R) -> usize {
    let u = unit_f64(rng);
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn draw_len<R: RngCore>((lo, hi): (usize, usize), rng: &mut R) -> usize {
    lo + uniform_below(rng, (hi.max(lo) - lo + 1) as u64) as usize
}

struct Words {
    function: Vec<String>,
    topics: Vec<Vec<String>>,
}

fn word_names(c: &SynthConfig) -> Words {
    let width = c.words_per_topic.max(c.function_words).saturating_sub(1).to_string().len().max(2);
    let function = (0..c.function_words).map(|i| format!("f{i:0width$}")).collect();
    let topics = (0..c.topics)
        .map(|t| {
            let prefix = topic_prefix(t);
            (0..c.words_per_topic).map(|i| format!("{prefix}{i:0width$}")).collect()
        })
        .collect();
    Words { function, topics }
}

/// `a`, `b`, ..., `z`, `aa`, `ab`, ...; never `f`, which marks function
/// words.
fn topic_prefix(t: usize) -> String {
    const LETTERS: &[u8] = b"abcdeghijklmnopqrstuvwxyz";
    let mut s = String::new();
    let mut n = t;
    loop {
        s.insert(0, LETTERS[n % LETTERS.len()] as char);
        if n < LETTERS.len() {
            break;
        }
        n = n / LETTERS.len() - 1;
    }
    s
}

pub fn generate(c: &SynthConfig, seed: u64) -> SynthData {
    assert!(c.topics >= 2 && c.words_per_topic >= 2 && c.function_words >= 1, "degenerate synthetic config");
    let words = word_names(c);
    let mut vocab: Vec<String> = [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
    vocab.extend(words.function.iter().cloned());
    for t in &words.topics {
        vocab.extend(t.iter().cloned());
    }

    let topic_cdf = zipf_cdf(c.words_per_topic, c.zipf_exponent);
    let function_cdf = zipf_cdf(c.function_words, c.zipf_exponent);
    let mut succ_rng = seeded(derive_seed(seed, "synth.successors"));
    // preferred successor of each topic word, within its topic
    let successor: Vec<Vec<usize>> = (0..c.topics)
        .map(|_| (0..c.words_per_topic).map(|_| uniform_below(&mut succ_rng, c.words_per_topic as u64) as usize).collect())
        .collect();

    let other_topic = |t: usize, rng: &mut dyn RngCore| {
        let o = uniform_below(rng, (c.topics - 1) as u64) as usize;
        if o >= t {
            o + 1
        } else {
            o
        }
    };

    let mut rng = seeded(derive_seed(seed, "synth.corpus"));
    let mut corpus = Vec::with_capacity(c.paragraphs);
    for _ in 0..c.paragraphs {
        let topic = uniform_below(&mut rng, c.topics as u64) as usize;
        let len = draw_len(c.paragraph_len, &mut rng);
        let mut out: Vec<&str> = Vec::with_capacity(len);
        let mut prev: Option<(usize, usize)> = None;
        for _ in 0..len {
            let next = match prev {
                Some((t, w)) if unit_f64(&mut rng) < c.successor_prob => Some((t, successor[t][w])),
                _ if unit_f64(&mut rng) < c.topic_rate => {
                    let t = if unit_f64(&mut rng) < c.stray_rate { other_topic(topic, &mut rng) } else { topic };
                    Some((t, draw_cdf(&topic_cdf, &mut rng)))
                }
                _ => None,
            };
            match next {
                Some((t, w)) => out.push(&words.topics[t][w]),
                None => out.push(&words.function[draw_cdf(&function_cdf, &mut rng)]),
            }
            prev = next;
        }
        corpus.push(out.join(" "));
    }

    let instances = |split: &str, per_label: usize| {
        let mut rng = seeded(derive_seed(seed, split));
        let mut out = Vec::with_capacity(per_label * c.topics);
        for i in 0..per_label * c.topics {
            let label = i % c.topics;
            let len = draw_len(c.instance_len, &mut rng);
            let text: Vec<&str> = (0..len)
                .map(|_| {
                    if unit_f64(&mut rng) < c.instance_topic_rate {
                        let t = if unit_f64(&mut rng) < c.instance_noise { other_topic(label, &mut rng) } else { label };
                        words.topics[t][uniform_below(&mut rng, c.words_per_topic as u64) as usize].as_str()
                    } else {
                        words.function[draw_cdf(&function_cdf, &mut rng)].as_str()
                    }
                })
                .collect();
            out.push((label, text.join(" ")));
        }
        out
    };
    let train = instances("synth.train", c.train_per_label);
    let test = instances("synth.test", c.test_per_label);
    SynthData { vocab, corpus, train, test }
}

impl SynthData {
    /// Writes `vocab.txt`, `corpus.txt`, `train.tsv` and `test.tsv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("vocab.txt"), self.vocab.join("\n") + "\n")?;
        fs::write(dir.join("corpus.txt"), self.corpus.join("\n") + "\n")?;
        let tsv = |rows: &[(usize, String)]| rows.iter().map(|(l, t)| format!("{l}\t{t}\n")).collect::<String>();
        fs::write(dir.join("train.tsv"), tsv(&self.train))?;
        fs::write(dir.join("test.tsv"), tsv(&self.test))
    }
}
