//! Datasets, frame-feature files, frame sampling and the synthetic task.

pub mod dataset;
pub mod feature_file;
pub mod sampling;
pub mod synthetic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, FeatureFileError, Result};
use crate::model::{Example, FrameFeatureSequence, ModelConfig, VisualInput};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::tokenizer::Vocab;

pub use dataset::{load_dataset, parse_dataset, save_dataset, DatasetMode, DatasetRecord};
pub use feature_file::{decode_features, encode_features, read_feature_file, write_feature_file};
pub use sampling::sample_frame_indices;
pub use synthetic::{generate, Codebook, SyntheticConfig, SyntheticCorpus};

/// Resamples `seq` to exactly `m` frames; unchanged when it already has `m`.
pub fn fit_frames(seq: FrameFeatureSequence<f32>, m: usize) -> FrameFeatureSequence<f32> {
    if seq.num_frames() == m {
        return seq;
    }
    let idx = sample_frame_indices(seq.num_frames(), m);
    let dim = seq.dim();
    let mut data = Vec::with_capacity(m * dim);
    for &i in &idx {
        data.extend_from_slice(seq.features.row(i));
    }
    FrameFeatureSequence {
        features: Tensor::new(vec![m, dim], data).expect("nonzero extents"),
        source_indices: idx.iter().map(|&i| seq.source_indices[i]).collect(),
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Standard-normal features that depend only on `seed` and the record id.
pub fn random_features(id: &str, seed: u64, m: usize, dim: usize) -> FrameFeatureSequence<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(id.as_bytes()));
    let t = Tensor::from_fn(&[m, dim], |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v as f32
    });
    FrameFeatureSequence::contiguous(t).expect("finite noise")
}

/// Loads the record's feature file and fits it to the configured frame count.
pub fn load_record_features(record: &DatasetRecord, cfg: &ModelConfig) -> Result<FrameFeatureSequence<f32>> {
    let seq = read_feature_file(&record.features_path)?;
    if seq.dim() != cfg.d_visual {
        return Err(Error::FeatureFile {
            path: record.features_path.clone(),
            kind: FeatureFileError::DimMismatch {
                expected: cfg.d_visual,
                found: seq.dim(),
            },
        });
    }
    Ok(fit_frames(seq, cfg.n_frames))
}

/// Visual input for `record` according to `cfg.visual_input`.
pub fn record_features(record: &DatasetRecord, cfg: &ModelConfig, noise_seed: u64) -> Result<Option<FrameFeatureSequence<f32>>> {
    match cfg.visual_input {
        VisualInput::Features => load_record_features(record, cfg).map(Some),
        VisualInput::Random => Ok(Some(random_features(&record.id, noise_seed, cfg.n_frames, cfg.d_visual))),
        VisualInput::None => Ok(None),
    }
}

/// Tokenizes one instance. The summary keeps at most `max_tgt_len + 1`
/// tokens so that the teacher-forced decoder input fits the position table.
pub fn build_example<T: Scalar>(
    vocab: &Vocab,
    cfg: &ModelConfig,
    source_text: &str,
    summary: &str,
    features: Option<FrameFeatureSequence<f32>>,
) -> Result<Example<T>> {
    let features = features
        .map(|f| FrameFeatureSequence::new(f.features.cast::<T>(), f.source_indices))
        .transpose()?;
    Ok(Example {
        source: vocab.encode(source_text, cfg.max_src_len),
        features,
        summary: vocab.encode(summary, cfg.max_tgt_len + 1),
    })
}

pub fn prepare_examples<T: Scalar>(
    records: &[DatasetRecord],
    vocab: &Vocab,
    cfg: &ModelConfig,
    noise_seed: u64,
) -> Result<Vec<Example<T>>> {
    records
        .iter()
        .map(|r| {
            let feats = record_features(r, cfg, noise_seed)?;
            build_example(vocab, cfg, &r.source_text(), &r.summary, feats)
        })
        .collect()
}

/// Training corpus for the vocabulary: every step and summary.
pub fn vocab_corpus(records: &[DatasetRecord]) -> Vec<String> {
    records
        .iter()
        .flat_map(|r| r.steps.iter().cloned().chain(std::iter::once(r.summary.clone())))
        .collect()
}
