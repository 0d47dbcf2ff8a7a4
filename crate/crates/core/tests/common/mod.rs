#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use clipsum::data::{generate, load_dataset, DatasetMode, DatasetRecord, SyntheticConfig};
use clipsum::decoding::StepScorer;
use clipsum::tokenizer::TokenId;
use clipsum::{ModelConfig, RunConfig, VisualInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small encoder-decoder used by the synthetic-task runs.
pub fn desk_model(visual: VisualInput) -> ModelConfig {
    ModelConfig {
        d_model: 32,
        d_visual: 16,
        n_enc_layers: 3,
        n_dec_layers: 2,
        n_heads: 4,
        ffn_dim: 64,
        temporal_layers: 1,
        temporal_heads: 2,
        temporal_ffn: 32,
        fusion_layer: 2,
        fusion_heads: 1,
        max_src_len: 64,
        max_tgt_len: 24,
        n_frames: 16,
        vocab_size: 512,
        init_std: 0.1,
        visual_input: visual,
        ..ModelConfig::default()
    }
}

pub fn desk_run(visual: VisualInput, seed: u64) -> RunConfig {
    let mut run = RunConfig {
        model: desk_model(visual),
        ..RunConfig::default()
    };
    let t = &mut run.train;
    t.epochs = 40;
    t.micro_batch = 4;
    t.accumulation = 4;
    t.lr_backbone = 1e-3;
    t.lr_adapter = 5e-3;
    t.patience = 10;
    t.seed = seed;
    t.max_decode_len = 24;
    run
}

/// Writes a synthetic split to `dir/name` and loads it back.
pub fn synthetic_split(dir: &Path, name: &str, seed: u64, count: usize, sigma: f64) -> Vec<DatasetRecord> {
    let corpus = generate(&SyntheticConfig {
        count,
        seed,
        sigma,
        ..SyntheticConfig::default()
    })
    .expect("generate");
    let path = corpus.write(&dir.join(name)).expect("write split");
    load_dataset(&path, DatasetMode::Training).expect("load split")
}

/// Next-token log-probabilities drawn once per distinct prefix.
pub struct TableScorer {
    vocab: usize,
    rng: ChaCha8Rng,
    table: HashMap<Vec<TokenId>, Vec<f64>>,
    sharpness: f64,
}

impl TableScorer {
    pub fn new(vocab: usize, seed: u64, sharpness: f64) -> Self {
        TableScorer {
            vocab,
            rng: ChaCha8Rng::seed_from_u64(seed),
            table: HashMap::new(),
            sharpness,
        }
    }

    pub fn row(&mut self, prefix: &[TokenId]) -> Vec<f64> {
        if let Some(r) = self.table.get(prefix) {
            return r.clone();
        }
        let logits: Vec<f64> = (0..self.vocab).map(|_| self.sharpness * self.rng.random::<f64>()).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        let row: Vec<f64> = logits.iter().map(|l| l - lse).collect();
        self.table.insert(prefix.to_vec(), row.clone());
        row
    }
}

impl StepScorer for TableScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn log_probs(&mut self, prefixes: &[&[TokenId]]) -> clipsum::Result<Vec<Vec<f64>>> {
        Ok(prefixes.iter().map(|p| self.row(p)).collect())
    }
}
