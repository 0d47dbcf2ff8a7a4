//! End-to-end train/select/test runs on prepared record splits.

use std::time::Instant;

use crate::config::RunConfig;
use crate::data::{prepare_examples, vocab_corpus, DatasetRecord};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_corpus, MetricsReport};
use crate::model::ClipSum;
use crate::scalar::Scalar;
use crate::tokenizer::Vocab;
use crate::training::trainer::{decode_all, BeamValidator, EpochRecord, Trainer};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub test: MetricsReport,
    pub hypotheses: Vec<String>,
    pub seconds: f64,
}

/// Builds the vocabulary from `train`, fits with validation selection on
/// `val`, restores the best parameters and scores them on `test`.
pub fn train_and_test<T: Scalar>(
    run: &RunConfig,
    train: &[DatasetRecord],
    val: &[DatasetRecord],
    test: &[DatasetRecord],
) -> Result<RunOutcome> {
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Data("every split must be nonempty".into()));
    }
    let start = Instant::now();
    let mut run = run.clone();
    let vocab = Vocab::build(&vocab_corpus(train), run.model.vocab_size)?;
    run.model.vocab_size = vocab.len();
    let seed = run.train.seed;
    let train_ex = prepare_examples::<T>(train, &vocab, &run.model, seed)?;
    let val_ex = prepare_examples::<T>(val, &vocab, &run.model, seed)?;
    let test_ex = prepare_examples::<T>(test, &vocab, &run.model, seed)?;
    let model = ClipSum::<T>::new(run.model.clone(), seed)?;
    let decode = run.train.decode();
    let mut trainer = Trainer::new(model, run, vocab.clone())?;
    let refs = val.iter().map(|r| r.summary.clone()).collect();
    let mut validator = BeamValidator::new(&val_ex, refs, &vocab, decode.clone())?;
    let outcome = trainer.fit(&train_ex, &mut validator, None)?;
    outcome.apply_best(&mut trainer.model);
    let hypotheses = decode_all(&trainer.model, &vocab, &test_ex, &decode)?;
    let pairs: Vec<(&String, &String)> = hypotheses.iter().zip(test.iter().map(|r| &r.summary)).collect();
    let report = evaluate_corpus(&pairs)?;
    Ok(RunOutcome {
        history: outcome.history,
        best_epoch: trainer.state.best_epoch,
        test: report,
        hypotheses,
        seconds: start.elapsed().as_secs_f64(),
    })
}
