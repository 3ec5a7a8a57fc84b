use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::tokenizer::{BERT_VOCAB_SIZE, MAX_SEQ_LEN};

/// One convolutional front-end layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub filters: usize,
    /// `(rows, cols)`: extent along the token axis, then the hidden axis.
    pub kernel: (usize, usize),
}

impl ConvLayerSpec {
    pub fn new(filters: usize, kh: usize, kw: usize) -> Self {
        Self { filters, kernel: (kh, kw) }
    }
}

fn default_head_dim() -> usize {
    64
}

fn default_ffn_mult() -> usize {
    4
}

fn default_vocab() -> usize {
    BERT_VOCAB_SIZE
}

fn default_positions() -> usize {
    MAX_SEQ_LEN
}

fn default_dropout() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub blocks: usize,
    pub heads: usize,
    #[serde(default = "default_head_dim")]
    pub head_dim: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    #[serde(default)]
    pub conv_layers: Vec<ConvLayerSpec>,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_positions")]
    pub max_positions: usize,
    #[serde(default)]
    pub num_labels: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

impl ModelConfig {
    /// `blocks` transformer blocks of `heads` 64-wide heads over the full
    /// vocabulary, no front-end and no classifier.
    pub fn bert(blocks: usize, heads: usize) -> Self {
        Self {
            blocks,
            heads,
            head_dim: default_head_dim(),
            ffn_mult: default_ffn_mult(),
            conv_layers: Vec::new(),
            vocab_size: BERT_VOCAB_SIZE,
            max_positions: MAX_SEQ_LEN,
            num_labels: 0,
            dropout: default_dropout(),
        }
    }

    pub fn with_conv(mut self, layers: Vec<ConvLayerSpec>) -> Self {
        self.conv_layers = layers;
        self
    }

    pub fn with_labels(mut self, num_labels: usize) -> Self {
        self.num_labels = num_labels;
        self
    }

    pub fn hidden(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_mult * self.hidden()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.blocks == 0 {
            return bad("at least one transformer block is required".into());
        }
        if self.heads == 0 || self.head_dim == 0 || self.ffn_mult == 0 {
            return bad("heads, head_dim and ffn_mult must be positive".into());
        }
        if self.vocab_size < 5 {
            return bad(format!("vocab_size {} cannot hold the special tokens", self.vocab_size));
        }
        if self.max_positions < 2 {
            return bad(format!("max_positions {} leaves no room for [CLS] and [SEP]", self.max_positions));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        for (i, l) in self.conv_layers.iter().enumerate() {
            if l.filters == 0 || l.kernel.0 == 0 || l.kernel.1 == 0 {
                return bad(format!("conv layer {i} needs positive filters and kernel extents"));
            }
        }
        Ok(())
    }

    /// Sequential depth: four steps per block, one per conv layer, one for
    /// the head.
    pub fn latency(&self) -> usize {
        latency(self)
    }

    /// Canonical key-value text stored in checkpoints.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let c: Self = toml::from_str(text).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

pub fn latency(config: &ModelConfig) -> usize {
    4 * config.blocks + config.conv_layers.len() + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hidden_follows_head_count() {
        assert_eq!(ModelConfig::bert(6, 12).hidden(), 768);
        assert_eq!(ModelConfig::bert(1, 24).hidden(), 1536);
        assert_eq!(ModelConfig::bert(1, 8).hidden(), 512);
    }

    #[test]
    fn latency_formula() {
        assert_eq!(latency(&ModelConfig::bert(6, 12)), 25);
        let two = ModelConfig::bert(1, 12).with_conv(vec![ConvLayerSpec::new(64, 3, 3); 2]);
        assert_eq!(latency(&two), 7);
        assert_eq!(latency(&ModelConfig::bert(1, 12)), 5);
    }

    #[test]
    fn validation_and_round_trip() {
        let mut c = ModelConfig::bert(2, 2).with_conv(vec![ConvLayerSpec::new(4, 16, 3)]).with_labels(10);
        c.vocab_size = 300;
        assert_eq!(ModelConfig::from_toml(&c.to_toml()).unwrap(), c);
        c.blocks = 0;
        assert!(c.validate().is_err());
        let mut k = ModelConfig::bert(1, 1).with_conv(vec![ConvLayerSpec::new(4, 0, 3)]);
        assert!(k.validate().is_err());
        k.conv_layers.clear();
        k.dropout = 1.0;
        assert!(k.validate().is_err());
    }
}
