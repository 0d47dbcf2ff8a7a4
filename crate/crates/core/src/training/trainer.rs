use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::decoding::{summarize, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::mean_rouge2;
use crate::model::{ClipSum, Example, Group};
use crate::numerics::{AdamState, Tensor};
use crate::scalar::Scalar;
use crate::tokenizer::Vocab;
use crate::training::checkpoint::{Checkpoint, TrainState};
use crate::training::schedule::lr_at_epoch;

/// Scores a model on the validation split after every epoch.
pub trait Validator<T> {
    fn rouge2(&mut self, model: &ClipSum<T>) -> Result<f64>;
}

/// Decodes every validation example and reports mean ROUGE-2 F1 against the
/// reference texts.
pub struct BeamValidator<'d, T> {
    examples: &'d [Example<T>],
    references: Vec<String>,
    vocab: &'d Vocab,
    decode: DecodeConfig,
}

impl<'d, T: Scalar> BeamValidator<'d, T> {
    pub fn new(examples: &'d [Example<T>], references: Vec<String>, vocab: &'d Vocab, decode: DecodeConfig) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Data("empty validation split".into()));
        }
        if examples.len() != references.len() {
            return Err(Error::Data(format!(
                "{} validation examples for {} references",
                examples.len(),
                references.len()
            )));
        }
        Ok(BeamValidator {
            examples,
            references,
            vocab,
            decode,
        })
    }
}

/// Decoded summaries for `examples`, in order.
pub fn decode_all<T: Scalar>(model: &ClipSum<T>, vocab: &Vocab, examples: &[Example<T>], cfg: &DecodeConfig) -> Result<Vec<String>> {
    examples
        .par_iter()
        .map(|ex| {
            let h = summarize(model, ex.source.ids(), ex.features.as_ref(), cfg)?;
            vocab.decode(&h.tokens)
        })
        .collect()
}

impl<T: Scalar> Validator<T> for BeamValidator<'_, T> {
    fn rouge2(&mut self, model: &ClipSum<T>) -> Result<f64> {
        let hyps = decode_all(model, self.vocab, self.examples, &self.decode)?;
        let pairs: Vec<(&String, &String)> = hyps.iter().zip(&self.references).collect();
        Ok(mean_rouge2(&pairs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rouge2: f64,
    pub lr_backbone: f64,
    pub lr_adapter: f64,
    pub optimizer_steps: usize,
    pub global_step: usize,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub history: Vec<EpochRecord>,
    pub best_params: Option<Vec<Tensor<T>>>,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
    pub stopped_early: bool,
}

impl<T: Scalar> TrainOutcome<T> {
    /// Loads the best-scoring parameters into `model`.
    pub fn apply_best(&self, model: &mut ClipSum<T>) {
        if let Some(best) = &self.best_params {
            model.params_mut().restore(best.clone());
        }
    }
}

pub struct Trainer<T> {
    pub model: ClipSum<T>,
    pub run: RunConfig,
    pub vocab: Vocab,
    pub adam: AdamState<T>,
    pub state: TrainState,
    rng: ChaCha8Rng,
    lr_groups: Vec<Group>,
}

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";

impl<T: Scalar> Trainer<T> {
    pub fn new(model: ClipSum<T>, run: RunConfig, vocab: Vocab) -> Result<Self> {
        run.train.validate()?;
        let adam = AdamState::new(model.params().tensors());
        let state = TrainState::new(run.train.lr_backbone, run.train.lr_adapter);
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(run.train.seed),
            lr_groups: model.params().groups(),
            model,
            run,
            vocab,
            adam,
            state,
        })
    }

    /// Continues the run saved in `ck`.
    pub fn resume(ck: Checkpoint<T>) -> Result<Self> {
        let model = ck.model(None).map_err(Error::Config)?;
        if ck.adam.first.len() != model.params().len() {
            return Err(Error::Config("optimizer state does not match the model".into()));
        }
        Ok(Trainer {
            rng: ck.rng.restore(),
            lr_groups: model.params().groups(),
            model,
            run: ck.config,
            vocab: ck.vocab,
            adam: ck.adam,
            state: ck.state,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint::capture(&self.run, &self.state, &self.vocab, &self.model, &self.adam, &self.rng)
    }

    fn lrs(&self) -> Vec<f64> {
        self.lr_groups
            .iter()
            .map(|g| match g {
                Group::Backbone => self.state.lr_backbone,
                Group::Adapter => self.state.lr_adapter,
            })
            .collect()
    }

    fn numeric(&self, e: Error) -> Error {
        match e {
            Error::NonFinite { .. } | Error::Backward(_) | Error::InvalidTensor(_) => Error::Training {
                epoch: self.state.epoch,
                step: self.state.global_step,
                message: e.to_string(),
            },
            other => other,
        }
    }

    /// One Adam step on the averaged gradients of `micro_batches`; returns
    /// the mean micro-batch loss.
    pub fn optimizer_step(&mut self, micro_batches: &[Vec<&Example<T>>]) -> Result<f64> {
        let mut total: Option<Vec<Tensor<T>>> = None;
        let mut loss_sum = 0.0;
        for mb in micro_batches {
            let (loss, grads, _) = self.model.loss_and_grads(mb).map_err(|e| self.numeric(e))?;
            if !loss.is_finite() {
                return Err(self.numeric(Error::NonFinite { op: "loss".into() }));
            }
            loss_sum += loss.to_f64_lossless();
            match total.as_mut() {
                None => total = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.add_assign(g)?;
                    }
                }
            }
        }
        let Some(mut grads) = total else {
            return Err(Error::Data("optimizer step over no micro-batches".into()));
        };
        let k = micro_batches.len();
        if k > 1 {
            let inv = T::lit(1.0 / k as f64);
            for g in &mut grads {
                *g = g.scale(inv);
            }
        }
        self.apply_gradients(&grads)?;
        Ok(loss_sum / k as f64)
    }

    /// One Adam step on `grads` at the current per-group learning rates.
    pub fn apply_gradients(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        let lrs = self.lrs();
        let cfg = self.run.train.adam();
        let mut params = self.model.params_mut().take_tensors();
        let res = self.adam.step(&mut params, grads, &lrs, &cfg);
        self.model.params_mut().restore(params);
        res.map_err(|e| self.numeric(e))?;
        self.state.global_step += 1;
        Ok(())
    }

    /// Shuffles the split and runs every accumulation group of the current
    /// epoch; returns (mean micro-batch loss, optimizer steps).
    pub fn train_epoch(&mut self, train: &[Example<T>]) -> Result<(f64, usize)> {
        if train.is_empty() {
            return Err(Error::Data("empty training split".into()));
        }
        let cfg = &self.run.train;
        let epoch = self.state.epoch;
        self.state.lr_backbone = lr_at_epoch(cfg.lr_backbone, epoch, cfg.decay_factor, cfg.decay_every_epochs);
        self.state.lr_adapter = lr_at_epoch(cfg.lr_adapter, epoch, cfg.decay_factor, cfg.decay_every_epochs);
        let order = self.epoch_order(train.len());
        let micro: Vec<Vec<&Example<T>>> = order
            .chunks(self.run.train.micro_batch)
            .map(|c| c.iter().map(|&i| &train[i]).collect())
            .collect();
        let mut loss = 0.0;
        let mut steps = 0;
        for group in micro.chunks(self.run.train.accumulation) {
            loss += self.optimizer_step(group)? * group.len() as f64;
            steps += 1;
        }
        Ok((loss / micro.len() as f64, steps))
    }

    /// A fresh permutation of `0..n` from the run's RNG.
    pub fn epoch_order(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
    }

    fn dir(&self) -> Option<&Path> {
        let d = self.run.train.checkpoint_dir.as_path();
        (!d.as_os_str().is_empty()).then_some(d)
    }

    /// Trains until the epoch budget, early stopping, or `stop_before`
    /// (exclusive) is reached.
    pub fn fit(&mut self, train: &[Example<T>], validator: &mut dyn Validator<T>, stop_before: Option<usize>) -> Result<TrainOutcome<T>> {
        let mut outcome = TrainOutcome {
            history: Vec::new(),
            best_params: None,
            best_checkpoint: None,
            last_checkpoint: None,
            stopped_early: false,
        };
        if let Some(dir) = self.dir() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            if dir.join(BEST_CHECKPOINT).exists() {
                outcome.best_checkpoint = Some(dir.join(BEST_CHECKPOINT));
            }
        }
        let limit = stop_before.map_or(self.run.train.epochs, |s| s.min(self.run.train.epochs));
        while self.state.epoch < limit {
            if self.state.epochs_since_improvement >= self.run.train.patience {
                outcome.stopped_early = true;
                break;
            }
            let epoch = self.state.epoch;
            let (train_loss, steps) = self.train_epoch(train)?;
            let score = validator.rouge2(&self.model)?;
            let improved = self.state.best_rouge2.is_none_or(|b| score > b);
            if improved {
                self.state.best_rouge2 = Some(score);
                self.state.best_epoch = Some(epoch);
                self.state.epochs_since_improvement = 0;
                outcome.best_params = Some(self.model.params().tensors().cloned().collect());
            } else {
                self.state.epochs_since_improvement += 1;
            }
            self.state.epoch = epoch + 1;
            let record = EpochRecord {
                epoch,
                train_loss,
                val_rouge2: score,
                lr_backbone: self.state.lr_backbone,
                lr_adapter: self.state.lr_adapter,
                optimizer_steps: steps,
                global_step: self.state.global_step,
                improved,
            };
            if let Some(dir) = self.dir().map(Path::to_path_buf) {
                let ck = self.checkpoint();
                if improved {
                    let p = dir.join(BEST_CHECKPOINT);
                    ck.save(&p)?;
                    outcome.best_checkpoint = Some(p);
                }
                let p = dir.join(LAST_CHECKPOINT);
                ck.save(&p)?;
                outcome.last_checkpoint = Some(p);
                let hp = dir.join(HISTORY_FILE);
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&hp)
                    .map_err(|e| Error::io(&hp, e))?;
                writeln!(f, "{}", serde_json::to_string(&record).expect("record serializes")).map_err(|e| Error::io(&hp, e))?;
            }
            outcome.history.push(record);
        }
        if self.state.epochs_since_improvement >= self.run.train.patience {
            outcome.stopped_early = true;
        }
        Ok(outcome)
    }
}
