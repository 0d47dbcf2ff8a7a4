//! Procedural pseudo-recipes whose summaries need one fact that only the
//! frame features carry.
//!
//! Every recipe has a prep step, mixing steps, exactly one cooking step and a
//! finishing step. The summary names the prep, cook and finish actions and
//! how done the cooked ingredient ends up. The doneness phrase never occurs
//! in the step text; the frames of the cooking step are drawn around the
//! doneness codebook vector, the frames of every other step around the
//! vector of its action.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::data::dataset::{save_dataset, DatasetRecord};
use crate::data::feature_file::write_feature_file;
use crate::error::{Error, Result};
use crate::model::FrameFeatureSequence;
use crate::numerics::Tensor;

pub const PREP_ACTIONS: [&str; 6] = ["chop", "dice", "peel", "wash", "mince", "grate"];
pub const MIX_ACTIONS: [&str; 6] = ["mix", "stir", "season", "whisk", "toss", "marinate"];
pub const COOK_ACTIONS: [&str; 6] = ["fry", "bake", "roast", "grill", "boil", "simmer"];
pub const FINISH_ACTIONS: [&str; 4] = ["serve", "plate", "garnish", "drizzle"];
pub const INGREDIENTS: [&str; 12] = [
    "onion", "garlic", "chicken", "beef", "potato", "carrot", "tomato", "pepper", "rice", "tofu", "mushroom", "shrimp",
];
pub const MODIFIERS: [&str; 6] = ["fresh", "small", "large", "whole", "frozen", "ripe"];
pub const ATTRIBUTES: [&str; 4] = [
    "lightly golden brown",
    "deeply charred black",
    "barely tender pale",
    "fully crisp dark",
];

pub const MIN_STEPS: usize = 4;
pub const MAX_STEPS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub count: usize,
    pub seed: u64,
    pub sigma: f64,
    pub frames: usize,
    pub dim: usize,
    /// Codebook vectors depend only on this seed, so splits generated with
    /// different record seeds share one codebook.
    pub codebook_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            count: 100,
            seed: 0,
            sigma: 0.1,
            frames: 16,
            dim: 16,
            codebook_seed: 0,
        }
    }
}

/// One vector per action word followed by one per attribute.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Codebook {
    pub dim: usize,
    pub symbols: Vec<String>,
    pub vectors: Vec<Vec<f32>>,
}

impl Codebook {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let symbols: Vec<String> = PREP_ACTIONS
            .iter()
            .chain(&MIX_ACTIONS)
            .chain(&COOK_ACTIONS)
            .chain(&FINISH_ACTIONS)
            .chain(&ATTRIBUTES)
            .map(|s| s.to_string())
            .collect();
        let vectors = symbols
            .iter()
            .map(|_| {
                (0..dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .map(|v: f64| v as f32)
                    .collect()
            })
            .collect();
        Codebook { dim, symbols, vectors }
    }

    pub fn symbol(&self, name: &str) -> usize {
        self.symbols.iter().position(|s| s == name).expect("known symbol")
    }

    pub fn attribute_symbol(&self, attribute: usize) -> usize {
        self.symbols.len() - ATTRIBUTES.len() + attribute
    }

    /// Index of the closest codebook vector in Euclidean distance.
    pub fn nearest(&self, row: &[f32]) -> usize {
        let dist = |v: &[f32]| -> f64 {
            v.iter()
                .zip(row)
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum()
        };
        (0..self.vectors.len())
            .min_by(|&a, &b| dist(&self.vectors[a]).total_cmp(&dist(&self.vectors[b])))
            .expect("nonempty codebook")
    }

    /// Recovers the attribute by classifying every frame.
    pub fn decode_attribute(&self, features: &Tensor<f32>) -> Option<usize> {
        let first_attr = self.symbols.len() - ATTRIBUTES.len();
        (0..features.rows())
            .map(|r| self.nearest(features.row(r)))
            .find(|&s| s >= first_attr)
            .map(|s| s - first_attr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecord {
    pub record: DatasetRecord,
    pub features: FrameFeatureSequence<f32>,
    pub attribute: usize,
    pub cook_step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub config: SyntheticConfig,
    pub codebook: Codebook,
    pub records: Vec<SyntheticRecord>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    codebook_seed: u64,
    sigma: f64,
    frames: usize,
    codebook: &'a Codebook,
    attributes: Vec<(&'a str, &'a str)>,
}

impl SyntheticCorpus {
    pub fn dataset_records(&self) -> Vec<DatasetRecord> {
        self.records.iter().map(|r| r.record.clone()).collect()
    }

    /// Writes `dataset.jsonl`, `features/<id>.csft` and `codebook.json` under
    /// `dir`; returns the dataset path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir.join("features")).map_err(|e| Error::io(dir, e))?;
        for r in &self.records {
            write_feature_file(&dir.join(&r.record.features_path), &r.features)?;
        }
        let dataset = dir.join("dataset.jsonl");
        save_dataset(&dataset, &self.dataset_records())?;
        let manifest = Manifest {
            seed: self.config.seed,
            codebook_seed: self.config.codebook_seed,
            sigma: self.config.sigma,
            frames: self.config.frames,
            codebook: &self.codebook,
            attributes: self
                .records
                .iter()
                .map(|r| (r.record.id.as_str(), ATTRIBUTES[r.attribute]))
                .collect(),
        };
        let path = dir.join("codebook.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(dataset)
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("nonempty word list")
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    if cfg.frames < MAX_STEPS {
        return Err(Error::Config(format!("frames must be >= {MAX_STEPS}, got {}", cfg.frames)));
    }
    if cfg.dim == 0 {
        return Err(Error::Config("dim must be >= 1".into()));
    }
    if !(cfg.sigma >= 0.0) || !cfg.sigma.is_finite() {
        return Err(Error::Config(format!("sigma must be finite and >= 0, got {}", cfg.sigma)));
    }
    let codebook = Codebook::new(cfg.dim, cfg.codebook_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.sigma).expect("validated sigma");
    let mut records = Vec::with_capacity(cfg.count);

    for i in 0..cfg.count {
        let k = rng.random_range(MIN_STEPS..=MAX_STEPS);
        let cook_step = rng.random_range(1..k - 1);
        let attribute = rng.random_range(0..ATTRIBUTES.len());
        let mut actions = Vec::with_capacity(k);
        let mut ingredients = Vec::with_capacity(k);
        let mut steps = Vec::with_capacity(k);
        for s in 0..k {
            let action = if s == 0 {
                pick(&mut rng, &PREP_ACTIONS)
            } else if s == k - 1 {
                pick(&mut rng, &FINISH_ACTIONS)
            } else if s == cook_step {
                pick(&mut rng, &COOK_ACTIONS)
            } else {
                pick(&mut rng, &MIX_ACTIONS)
            };
            let modifier = pick(&mut rng, &MODIFIERS);
            let ingredient = pick(&mut rng, &INGREDIENTS);
            steps.push(format!("{action} the {modifier} {ingredient}"));
            actions.push(action);
            ingredients.push(ingredient);
        }
        let summary = format!(
            "{} the {} , {} the {} until {} , then {} the {}",
            actions[0],
            ingredients[0],
            actions[cook_step],
            ingredients[cook_step],
            ATTRIBUTES[attribute],
            actions[k - 1],
            ingredients[k - 1]
        );

        let frames = cfg.frames;
        let mut data = Vec::with_capacity(frames * cfg.dim);
        for f in 0..frames {
            let step = f * k / frames;
            let symbol = if step == cook_step {
                codebook.attribute_symbol(attribute)
            } else {
                codebook.symbol(actions[step])
            };
            for &c in &codebook.vectors[symbol] {
                let eps: f64 = if cfg.sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                data.push((c as f64 + eps) as f32);
            }
        }
        let features = FrameFeatureSequence::contiguous(Tensor::new(vec![frames, cfg.dim], data)?)?;
        let id = format!("s{}-{i:05}", cfg.seed);
        records.push(SyntheticRecord {
            record: DatasetRecord {
                features_path: PathBuf::from(format!("features/{id}.csft")),
                id,
                steps,
                summary,
            },
            features,
            attribute,
            cook_step,
        });
    }
    Ok(SyntheticCorpus {
        config: cfg.clone(),
        codebook,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::normalize;

    fn cfg(count: usize, seed: u64, sigma: f64) -> SyntheticConfig {
        SyntheticConfig {
            count,
            seed,
            sigma,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn attribute_words_are_disjoint_from_step_vocabulary() {
        let step_words: Vec<&str> = PREP_ACTIONS
            .iter()
            .chain(&MIX_ACTIONS)
            .chain(&COOK_ACTIONS)
            .chain(&FINISH_ACTIONS)
            .chain(&INGREDIENTS)
            .chain(&MODIFIERS)
            .copied()
            .chain(["the", ",", "until", "then", "."])
            .collect();
        for phrase in ATTRIBUTES {
            for w in phrase.split(' ') {
                assert!(!step_words.contains(&w), "{w}");
                let others = ATTRIBUTES.iter().filter(|p| **p != phrase);
                assert!(others.flat_map(|p| p.split(' ')).all(|o| o != w));
            }
        }
    }

    #[test]
    fn omitted_attribute_only_in_summary() {
        let corpus = generate(&cfg(300, 7, 0.1)).unwrap();
        for r in &corpus.records {
            let k = r.record.steps.len();
            assert!((MIN_STEPS..=MAX_STEPS).contains(&k));
            let summary = normalize(&r.record.summary);
            for w in ATTRIBUTES[r.attribute].split(' ') {
                assert!(summary.iter().any(|t| t == w));
                assert!(r.record.steps.iter().all(|s| !normalize(s).iter().any(|t| t == w)));
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&cfg(20, 3, 0.1)).unwrap().write(a.path()).unwrap();
        generate(&cfg(20, 3, 0.1)).unwrap().write(b.path()).unwrap();
        for name in ["dataset.jsonl", "codebook.json", "features/s3-00007.csft"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
        assert_ne!(generate(&cfg(20, 4, 0.1)).unwrap().records, generate(&cfg(20, 3, 0.1)).unwrap().records);
    }

    #[test]
    fn noiseless_attribute_is_decodable() {
        let corpus = generate(&cfg(200, 11, 0.0)).unwrap();
        for r in &corpus.records {
            assert_eq!(corpus.codebook.decode_attribute(&r.features.features), Some(r.attribute));
        }
    }

    #[test]
    fn cook_frames_are_contiguous() {
        let corpus = generate(&cfg(50, 5, 0.0)).unwrap();
        let cb = &corpus.codebook;
        for r in &corpus.records {
            let attr = cb.attribute_symbol(r.attribute);
            let hits: Vec<usize> = (0..r.features.num_frames())
                .filter(|&f| cb.nearest(r.features.features.row(f)) == attr)
                .collect();
            assert!(!hits.is_empty());
            assert_eq!(hits.last().unwrap() - hits[0] + 1, hits.len());
        }
    }

    #[test]
    fn rejects_zero_count() {
        let err = generate(&cfg(0, 0, 0.1)).unwrap_err();
        assert!(err.to_string().contains("count must be >= 1"));
    }
}
