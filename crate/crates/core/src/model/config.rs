use std::fmt;
use std::str::FromStr;

use crate::config::{parse_value, KeyValues};
use crate::error::{Error, Result};

/// Where the visual branch gets its input from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisualInput {
    /// Precomputed frame features.
    Features,
    /// Seeded Gaussian noise with the shape of real features.
    Random,
    /// Visual branch disabled; fusion is skipped.
    None,
}

impl fmt::Display for VisualInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VisualInput::Features => "features",
            VisualInput::Random => "random",
            VisualInput::None => "none",
        })
    }
}

impl FromStr for VisualInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "features" => Ok(VisualInput::Features),
            "random" => Ok(VisualInput::Random),
            "none" => Ok(VisualInput::None),
            other => Err(Error::Config(format!(
                "visual_input must be features, random or none, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_visual: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub temporal_layers: usize,
    pub temporal_heads: usize,
    pub temporal_ffn: usize,
    /// 1-indexed encoder layer receiving the visual features.
    pub fusion_layer: usize,
    pub fusion_heads: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub n_frames: usize,
    pub vocab_size: usize,
    /// Reserved; only 0 is supported.
    pub dropout: f64,
    pub init_std: f64,
    pub visual_input: VisualInput,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 768,
            d_visual: 512,
            n_enc_layers: 6,
            n_dec_layers: 6,
            n_heads: 8,
            ffn_dim: 3072,
            temporal_layers: 2,
            temporal_heads: 4,
            temporal_ffn: 1024,
            fusion_layer: 5,
            fusion_heads: 1,
            max_src_len: 512,
            max_tgt_len: 128,
            n_frames: 50,
            vocab_size: 8192,
            dropout: 0.0,
            init_std: 0.02,
            visual_input: VisualInput::Features,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains in minutes on one core.
    pub fn desk() -> Self {
        ModelConfig {
            d_model: 32,
            d_visual: 16,
            n_enc_layers: 2,
            n_dec_layers: 2,
            n_heads: 4,
            ffn_dim: 64,
            temporal_layers: 2,
            temporal_heads: 2,
            temporal_ffn: 32,
            fusion_layer: 1,
            fusion_heads: 1,
            max_src_len: 96,
            max_tgt_len: 32,
            n_frames: 16,
            vocab_size: 128,
            ..ModelConfig::default()
        }
    }

    pub fn uses_visual(&self) -> bool {
        self.visual_input != VisualInput::None
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("d_visual", self.d_visual),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("temporal_heads", self.temporal_heads),
            ("temporal_ffn", self.temporal_ffn),
            ("fusion_heads", self.fusion_heads),
            ("max_src_len", self.max_src_len),
            ("max_tgt_len", self.max_tgt_len),
            ("n_frames", self.n_frames),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.vocab_size < 5 {
            return Err(Error::Config(format!("vocab_size must be >= 5, got {}", self.vocab_size)));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_visual % self.temporal_heads != 0 {
            return Err(Error::Config(format!(
                "d_visual {} is not divisible by temporal_heads {}",
                self.d_visual, self.temporal_heads
            )));
        }
        if self.d_model % self.fusion_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by fusion_heads {}",
                self.d_model, self.fusion_heads
            )));
        }
        if self.fusion_layer < 1 || self.fusion_layer > self.n_enc_layers {
            return Err(Error::Config(format!(
                "fusion_layer must be in 1..={}, got {}",
                self.n_enc_layers, self.fusion_layer
            )));
        }
        if self.dropout != 0.0 {
            return Err(Error::Config("dropout is reserved; only 0 is supported".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("init_std must be > 0".into()));
        }
        Ok(())
    }
}

impl KeyValues for ModelConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "d_model" => self.d_model = parse_value(key, value)?,
            "d_visual" => self.d_visual = parse_value(key, value)?,
            "n_enc_layers" => self.n_enc_layers = parse_value(key, value)?,
            "n_dec_layers" => self.n_dec_layers = parse_value(key, value)?,
            "n_heads" => self.n_heads = parse_value(key, value)?,
            "ffn_dim" => self.ffn_dim = parse_value(key, value)?,
            "temporal_layers" => self.temporal_layers = parse_value(key, value)?,
            "temporal_heads" => self.temporal_heads = parse_value(key, value)?,
            "temporal_ffn" => self.temporal_ffn = parse_value(key, value)?,
            "fusion_layer" => self.fusion_layer = parse_value(key, value)?,
            "fusion_heads" => self.fusion_heads = parse_value(key, value)?,
            "max_src_len" => self.max_src_len = parse_value(key, value)?,
            "max_tgt_len" => self.max_tgt_len = parse_value(key, value)?,
            "n_frames" => self.n_frames = parse_value(key, value)?,
            "vocab_size" => self.vocab_size = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "init_std" => self.init_std = parse_value(key, value)?,
            "visual_input" => self.visual_input = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_model", self.d_model.to_string()),
            ("d_visual", self.d_visual.to_string()),
            ("n_enc_layers", self.n_enc_layers.to_string()),
            ("n_dec_layers", self.n_dec_layers.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("ffn_dim", self.ffn_dim.to_string()),
            ("temporal_layers", self.temporal_layers.to_string()),
            ("temporal_heads", self.temporal_heads.to_string()),
            ("temporal_ffn", self.temporal_ffn.to_string()),
            ("fusion_layer", self.fusion_layer.to_string()),
            ("fusion_heads", self.fusion_heads.to_string()),
            ("max_src_len", self.max_src_len.to_string()),
            ("max_tgt_len", self.max_tgt_len.to_string()),
            ("n_frames", self.n_frames.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("dropout", self.dropout.to_string()),
            ("init_std", self.init_std.to_string()),
            ("visual_input", self.visual_input.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        assert_eq!(ModelConfig::default().d_model / ModelConfig::default().n_heads, 96);
    }

    #[test]
    fn fusion_layer_out_of_range() {
        let cfg = ModelConfig {
            fusion_layer: 7,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("fusion_layer")));
        let cfg = ModelConfig {
            fusion_layer: 0,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn head_divisibility() {
        let cfg = ModelConfig {
            n_heads: 7,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            temporal_heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn entries_round_trip() {
        let mut cfg = ModelConfig::desk();
        cfg.visual_input = VisualInput::Random;
        let mut back = ModelConfig::default();
        for (k, v) in cfg.entries() {
            assert!(back.set(k, &v).unwrap());
        }
        assert_eq!(back, cfg);
        assert!(!back.set("nonsense", "1").unwrap());
    }
}
