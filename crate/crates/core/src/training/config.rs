use std::path::PathBuf;

use crate::config::{parse_value, KeyValues};
use crate::decoding::DecodeConfig;
use crate::error::{Error, Result};
use crate::numerics::AdamConfig;
use crate::scalar::DType;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub micro_batch: usize,
    pub accumulation: usize,
    pub lr_backbone: f64,
    pub lr_adapter: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub patience: usize,
    pub seed: u64,
    /// Empty keeps checkpoints in memory only.
    pub checkpoint_dir: PathBuf,
    pub beam: usize,
    pub max_decode_len: usize,
    pub block_ngram: usize,
    pub length_penalty: f64,
    pub dtype: DType,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            micro_batch: 16,
            accumulation: 4,
            lr_backbone: 3e-5,
            lr_adapter: 1.5e-4,
            decay_factor: 0.95,
            decay_every_epochs: 10,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            patience: 10,
            seed: 0,
            checkpoint_dir: PathBuf::new(),
            beam: 5,
            max_decode_len: 128,
            block_ngram: 3,
            length_penalty: 0.0,
            dtype: DType::F32,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            beam: self.beam,
            max_len: self.max_decode_len,
            block_ngram: self.block_ngram,
            length_penalty: self.length_penalty,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("micro_batch", self.micro_batch),
            ("accumulation", self.accumulation),
            ("decay_every_epochs", self.decay_every_epochs),
            ("patience", self.patience),
            ("beam", self.beam),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [("lr_backbone", self.lr_backbone), ("lr_adapter", self.lr_adapter), ("adam_eps", self.adam_eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay_factor must be in (0, 1], got {}", self.decay_factor)));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.max_decode_len < 2 {
            return Err(Error::Config("max_decode_len must be >= 2".into()));
        }
        Ok(())
    }
}

fn parse_dtype(value: &str) -> Result<DType> {
    match value {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Config(format!("dtype must be f32 or f64, got {other:?}"))),
    }
}

impl KeyValues for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "micro_batch" => self.micro_batch = parse_value(key, value)?,
            "accumulation" => self.accumulation = parse_value(key, value)?,
            "lr_backbone" => self.lr_backbone = parse_value(key, value)?,
            "lr_adapter" => self.lr_adapter = parse_value(key, value)?,
            "decay_factor" => self.decay_factor = parse_value(key, value)?,
            "decay_every_epochs" => self.decay_every_epochs = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "checkpoint_dir" => self.checkpoint_dir = PathBuf::from(value),
            "beam" => self.beam = parse_value(key, value)?,
            "max_decode_len" => self.max_decode_len = parse_value(key, value)?,
            "block_ngram" => self.block_ngram = parse_value(key, value)?,
            "length_penalty" => self.length_penalty = parse_value(key, value)?,
            "dtype" => self.dtype = parse_dtype(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("micro_batch", self.micro_batch.to_string()),
            ("accumulation", self.accumulation.to_string()),
            ("lr_backbone", self.lr_backbone.to_string()),
            ("lr_adapter", self.lr_adapter.to_string()),
            ("decay_factor", self.decay_factor.to_string()),
            ("decay_every_epochs", self.decay_every_epochs.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_dir", self.checkpoint_dir.display().to_string()),
            ("beam", self.beam.to_string()),
            ("max_decode_len", self.max_decode_len.to_string()),
            ("block_ngram", self.block_ngram.to_string()),
            ("length_penalty", self.length_penalty.to_string()),
            ("dtype", self.dtype.name().to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.micro_batch * c.accumulation, 64);
        assert!((c.lr_adapter / c.lr_backbone - 5.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_values() {
        for (k, v) in [("accumulation", "0"), ("decay_factor", "1.5"), ("decay_factor", "0"), ("patience", "0"), ("lr_adapter", "-1")] {
            let mut c = TrainConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v}");
        }
        assert!(TrainConfig::default().set("dtype", "f16").is_err());
    }

    #[test]
    fn entries_round_trip() {
        let mut c = TrainConfig::default();
        c.checkpoint_dir = PathBuf::from("runs/a");
        c.dtype = DType::F64;
        c.lr_backbone = 0.1 + 0.2;
        let mut back = TrainConfig::default();
        for (k, v) in c.entries() {
            assert!(back.set(k, &v).unwrap());
        }
        assert_eq!(back, c);
    }
}
