//! Beam search with n-gram blocking, eos termination and a length cap.
//!
//! Scores are raw sums of token log-probabilities. pad and bos are never
//! generated and eos is never blocked. `max_len` bounds the whole sequence,
//! bos included; a hypothesis that reaches it is finished without an eos.

use std::cmp::Ordering;

use crate::error::Result;
use crate::model::{ClipSum, EncodedSource, FrameFeatureSequence};
use crate::numerics::log_sum_exp;
use crate::scalar::Scalar;
use crate::tokenizer::{TokenId, TokenSequence, BOS, EOS, PAD};

/// Next-token log-probabilities for a batch of prefixes.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;

    fn log_probs(&mut self, prefixes: &[&[TokenId]]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_len: usize,
    /// 0 disables blocking.
    pub block_ngram: usize,
    /// Finished hypotheses are ranked by `score / generated^length_penalty`.
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 5,
            max_len: 128,
            block_ngram: 3,
            length_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<TokenId>,
    pub score: f64,
    pub step_log_probs: Vec<f64>,
    pub finished: bool,
    created: u64,
}

impl BeamHypothesis {
    fn root() -> Self {
        BeamHypothesis {
            tokens: vec![BOS],
            score: 0.0,
            step_log_probs: Vec::new(),
            finished: false,
            created: 0,
        }
    }

    pub fn sequence(&self) -> TokenSequence {
        TokenSequence::new(self.tokens.clone())
    }

    fn ranking_score(&self, length_penalty: f64) -> f64 {
        if length_penalty == 0.0 {
            self.score
        } else {
            self.score / ((self.tokens.len() - 1) as f64).powf(length_penalty)
        }
    }
}

/// Sets to `-inf` every logit whose token would repeat an `n`-gram already in
/// `history`. eos is exempt.
pub fn block_repeated_ngrams(history: &[TokenId], logits: &mut [f64], n: usize) {
    if n == 0 || history.len() < n - 1 {
        return;
    }
    let k = n - 1;
    let suffix = &history[history.len() - k..];
    for start in 0..history.len() - k {
        if history[start..start + k] == *suffix {
            let t = history[start + k];
            if t != EOS {
                logits[t as usize] = f64::NEG_INFINITY;
            }
        }
    }
}

fn prepare_row(history: &[TokenId], mut row: Vec<f64>, block_n: usize) -> Vec<f64> {
    row[PAD as usize] = f64::NEG_INFINITY;
    row[BOS as usize] = f64::NEG_INFINITY;
    let eos = row[EOS as usize];
    block_repeated_ngrams(history, &mut row, block_n);
    row[EOS as usize] = eos;
    row
}

fn degenerate() -> BeamHypothesis {
    BeamHypothesis {
        tokens: vec![BOS, EOS],
        score: 0.0,
        step_log_probs: vec![0.0],
        finished: true,
        created: 0,
    }
}

pub fn beam_search(scorer: &mut dyn StepScorer, cfg: &DecodeConfig) -> Result<BeamHypothesis> {
    let vocab = scorer.vocab_size();
    if cfg.beam == 0 || cfg.max_len < 2 || vocab <= EOS as usize {
        return Ok(degenerate());
    }
    let mut live = vec![BeamHypothesis::root()];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    let mut created = 1u64;

    while !live.is_empty() {
        let prefixes: Vec<&[TokenId]> = live.iter().map(|h| h.tokens.as_slice()).collect();
        let rows = scorer.log_probs(&prefixes)?;
        let mut candidates: Vec<(f64, TokenId, usize)> = Vec::new();
        for (p, (h, row)) in live.iter().zip(rows).enumerate() {
            let row = prepare_row(&h.tokens, row, cfg.block_ngram);
            for (t, &lp) in row.iter().enumerate() {
                if lp.is_finite() {
                    candidates.push((h.score + lp, t as TokenId, p));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(live[a.2].created.cmp(&live[b.2].created))
        });
        candidates.truncate(cfg.beam);

        let mut next = Vec::with_capacity(candidates.len());
        for (score, tok, p) in candidates {
            let parent = &live[p];
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let mut step_log_probs = parent.step_log_probs.clone();
            step_log_probs.push(score - parent.score);
            let done = tok == EOS || tokens.len() >= cfg.max_len;
            let h = BeamHypothesis {
                tokens,
                score,
                step_log_probs,
                finished: done,
                created,
            };
            created += 1;
            if done {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;

        if cfg.length_penalty == 0.0 {
            if let Some(best) = finished.iter().map(|h| h.score).max_by(f64::total_cmp) {
                if live.iter().all(|h| best > h.score) {
                    break;
                }
            }
        }
    }

    Ok(finished
        .into_iter()
        .max_by(|a, b| {
            a.ranking_score(cfg.length_penalty)
                .total_cmp(&b.ranking_score(cfg.length_penalty))
                .then(b.created.cmp(&a.created))
        })
        .unwrap_or_else(degenerate))
}

/// Picks the most likely allowed token at every step; ties go to the lower id.
pub fn greedy_decode(scorer: &mut dyn StepScorer, max_len: usize, block_ngram: usize) -> Result<BeamHypothesis> {
    if max_len < 2 || scorer.vocab_size() <= EOS as usize {
        return Ok(degenerate());
    }
    let mut h = BeamHypothesis::root();
    loop {
        let row = scorer.log_probs(&[h.tokens.as_slice()])?.remove(0);
        let row = prepare_row(&h.tokens, row, block_ngram);
        let (tok, lp) = row
            .iter()
            .enumerate()
            .fold((EOS as usize, row[EOS as usize]), |best, (t, &v)| if v > best.1 { (t, v) } else { best });
        h.tokens.push(tok as TokenId);
        h.score += lp;
        h.step_log_probs.push(lp);
        if tok == EOS as usize || h.tokens.len() >= max_len {
            h.finished = true;
            return Ok(h);
        }
    }
}

/// Scores prefixes with a model's decoder over one encoded source.
pub struct ModelScorer<'m, T> {
    model: &'m ClipSum<T>,
    source: EncodedSource<T>,
}

impl<'m, T: Scalar> ModelScorer<'m, T> {
    pub fn new(model: &'m ClipSum<T>, tokens: &[TokenId], feats: Option<&FrameFeatureSequence<T>>) -> Result<Self> {
        Ok(ModelScorer {
            model,
            source: model.encode_source(tokens, feats)?,
        })
    }

    /// Longest sequence the decoder's position table allows.
    pub fn max_len(&self) -> usize {
        self.model.config().max_tgt_len + 1
    }
}

impl<T: Scalar> StepScorer for ModelScorer<'_, T> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn log_probs(&mut self, prefixes: &[&[TokenId]]) -> Result<Vec<Vec<f64>>> {
        prefixes
            .iter()
            .map(|p| {
                let logits = self.model.decoder_forward(p, &self.source)?;
                let last: Vec<f64> = logits.row(logits.rows() - 1).iter().map(|v| v.to_f64_lossless()).collect();
                let lse = log_sum_exp(&last);
                Ok(last.iter().map(|v| v - lse).collect())
            })
            .collect()
    }
}

/// Beam-decodes one source; `max_len` is capped by the decoder length.
pub fn summarize<T: Scalar>(
    model: &ClipSum<T>,
    tokens: &[TokenId],
    feats: Option<&FrameFeatureSequence<T>>,
    cfg: &DecodeConfig,
) -> Result<BeamHypothesis> {
    let mut scorer = ModelScorer::new(model, tokens, feats)?;
    let cfg = DecodeConfig {
        max_len: cfg.max_len.min(scorer.max_len()),
        ..*cfg
    };
    if cfg.beam == 1 {
        greedy_decode(&mut scorer, cfg.max_len, cfg.block_ngram)
    } else {
        beam_search(&mut scorer, &cfg)
    }
}

pub fn has_repeated_ngram(tokens: &[TokenId], n: usize) -> bool {
    if n == 0 || tokens.len() < n {
        return false;
    }
    let mut seen = std::collections::HashSet::new();
    tokens.windows(n).any(|w| !seen.insert(w))
}
