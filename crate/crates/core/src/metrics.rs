//! ROUGE-1/2/L, corpus BLEU-4 and METEOR-lite over token streams.
//!
//! METEOR-lite aligns exact matches first and then suffix-stripped stems; it
//! has no synonym or paraphrase stage, so its absolute values are not
//! comparable with full METEOR.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tokenizer::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub const ZERO: Prf = Prf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    fn from_counts(hits: usize, cand: usize, reference: usize) -> Prf {
        if cand == 0 || reference == 0 || hits == 0 {
            return Prf::ZERO;
        }
        let p = hits as f64 / cand as f64;
        let r = hits as f64 / reference as f64;
        Prf {
            precision: p,
            recall: r,
            f1: 2.0 * p * r / (p + r),
        }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped overlap and the candidate/reference n-gram totals.
fn clipped_overlap<T: Eq + Hash>(cand: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let hits = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (hits, c.values().sum(), r.values().sum())
}

pub fn rouge_n<T: Eq + Hash>(cand: &[T], reference: &[T], n: usize) -> Prf {
    let (hits, nc, nr) = clipped_overlap(cand, reference, n);
    Prf::from_counts(hits, nc, nr)
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(cand: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_len(cand, reference), cand.len(), reference.len())
}

/// Corpus BLEU-4 with brevity penalty and no smoothing.
pub fn bleu4<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Data("bleu4 needs a nonempty corpus".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Data(format!(
            "bleu4: {} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (mut hits, mut total) = (0, 0);
        for (c, r) in candidates.iter().zip(references) {
            let (h, nc, _) = clipped_overlap(c, r, n);
            hits += h;
            total += nc;
        }
        if hits == 0 {
            return Ok(0.0);
        }
        log_sum += (hits as f64 / total as f64).ln();
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * (log_sum / 4.0).exp())
}

pub const STEM_SUFFIXES: [&str; 5] = ["ing", "es", "ed", "ly", "s"];
const MIN_STEM: usize = 3;

/// Strips the longest listed suffix that leaves at least three characters.
pub fn stem(word: &str) -> &str {
    let mut best = word;
    for suf in STEM_SUFFIXES {
        if let Some(s) = word.strip_suffix(suf) {
            if s.chars().count() >= MIN_STEM && s.len() < best.len() {
                best = s;
            }
        }
    }
    best
}

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_GAMMA: f64 = 0.5;
pub const METEOR_BETA: f64 = 3.0;

/// Aligned `(candidate, reference)` index pairs sorted by candidate index.
pub fn meteor_alignment<S: AsRef<str>>(cand: &[S], reference: &[S]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut cand_used = vec![false; cand.len()];
    let mut pairs = Vec::new();
    let stages: [fn(&str) -> &str; 2] = [|w| w, stem];
    for key in stages {
        for (i, c) in cand.iter().enumerate() {
            if cand_used[i] {
                continue;
            }
            let ck = key(c.as_ref());
            if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && key(reference[j].as_ref()) == ck) {
                ref_used[j] = true;
                cand_used[i] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

pub fn meteor_lite<S: AsRef<str>>(cand: &[S], reference: &[S]) -> f64 {
    let pairs = meteor_alignment(cand, reference);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (chunks as f64 / m as f64).powf(METEOR_BETA);
    f_mean * (1.0 - penalty)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleScores {
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
    pub meteor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub count: usize,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub per_example: Vec<ExampleScores>,
}

impl MetricsReport {
    /// Five corpus scores as percentages with one decimal.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>6}", "metric", "score");
        for (name, v) in [
            ("ROUGE-1", self.rouge1_f),
            ("ROUGE-2", self.rouge2_f),
            ("ROUGE-L", self.rouge_l_f),
            ("BLEU-4", self.bleu4),
            ("METEOR*", self.meteor),
        ] {
            let _ = writeln!(s, "{name:<10} {:>6.1}", 100.0 * v);
        }
        let _ = writeln!(s, "examples   {:>6}", self.count);
        s
    }
}

/// Scores `(candidate, reference)` text pairs after tokenizer normalization.
pub fn evaluate_corpus<A: AsRef<str>, B: AsRef<str>>(pairs: &[(A, B)]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Data("cannot evaluate an empty corpus".into()));
    }
    let cands: Vec<Vec<String>> = pairs.iter().map(|(c, _)| normalize(c.as_ref())).collect();
    let refs: Vec<Vec<String>> = pairs.iter().map(|(_, r)| normalize(r.as_ref())).collect();
    let per_example: Vec<ExampleScores> = cands
        .iter()
        .zip(&refs)
        .map(|(c, r)| ExampleScores {
            rouge1_f: rouge_n(c, r, 1).f1,
            rouge2_f: rouge_n(c, r, 2).f1,
            rouge_l_f: rouge_l(c, r).f1,
            meteor: meteor_lite(c, r),
        })
        .collect();
    let n = per_example.len() as f64;
    let mean = |f: fn(&ExampleScores) -> f64| per_example.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        count: per_example.len(),
        rouge1_f: mean(|e| e.rouge1_f),
        rouge2_f: mean(|e| e.rouge2_f),
        rouge_l_f: mean(|e| e.rouge_l_f),
        bleu4: bleu4(&cands, &refs)?,
        meteor: mean(|e| e.meteor),
        per_example,
    })
}

/// Mean ROUGE-2 F1 over text pairs.
pub fn mean_rouge2<A: AsRef<str>, B: AsRef<str>>(pairs: &[(A, B)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = pairs
        .iter()
        .map(|(c, r)| rouge_n(&normalize(c.as_ref()), &normalize(r.as_ref()), 2).f1)
        .sum();
    total / pairs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn rouge_examples() {
        let p = rouge_n(&toks("a b c"), &toks("a c d"), 1);
        assert!(close(p.precision, 2.0 / 3.0) && close(p.recall, 2.0 / 3.0) && close(p.f1, 2.0 / 3.0));
        assert_eq!(rouge_n(&toks("a b"), &toks("c d"), 1), Prf::ZERO);
        assert_eq!(rouge_n(&toks("a"), &toks("a"), 2), Prf::ZERO);
        let l = rouge_l(&toks("a b c d"), &toks("b d"));
        assert!(close(l.recall, 1.0) && close(l.precision, 0.5) && close(l.f1, 2.0 / 3.0));
        assert_eq!(rouge_l(&toks(""), &toks("a")), Prf::ZERO);
        let same = toks("the cat sat on the mat");
        for n in 1..=4 {
            assert_eq!(rouge_n(&same, &same, n).f1, 1.0);
        }
        assert_eq!(rouge_l(&same, &same).f1, 1.0);
    }

    #[test]
    fn clipping_counts_repeats_once_per_reference_occurrence() {
        let p = rouge_n(&toks("the the the"), &toks("the cat"), 1);
        assert!(close(p.precision, 1.0 / 3.0) && close(p.recall, 0.5));
    }

    #[test]
    fn bleu_examples() {
        let c = vec![toks("the cat sat on the mat"), toks("a dog runs")];
        let r = vec![toks("the cat sat on the red mat"), toks("a dog runs fast")];
        assert!((bleu4(&c, &r).unwrap() - 0.658420129297).abs() < 1e-9);
        assert_eq!(bleu4(&r, &r).unwrap(), 1.0);
        assert_eq!(bleu4(&[toks("a b c")], &[toks("a b c d")]).unwrap(), 0.0);
        assert!(bleu4::<String>(&[], &[]).is_err());
    }

    #[test]
    fn stems() {
        assert_eq!(stem("cooking"), "cook");
        assert_eq!(stem("cooked"), "cook");
        assert_eq!(stem("dishes"), "dish");
        assert_eq!(stem("quickly"), "quick");
        assert_eq!(stem("eggs"), "egg");
        assert_eq!(stem("is"), "is");
        assert_eq!(stem("bus"), "bus");
    }

    #[test]
    fn meteor_examples() {
        let cand = toks("the cats were cooking dinner");
        let reference = toks("the cat cooked the dinner");
        assert_eq!(meteor_alignment(&cand, &reference), [(0, 0), (1, 1), (3, 2), (4, 4)]);
        assert!((meteor_lite(&cand, &reference) - 0.63125).abs() < 1e-12);
        let same = toks("a b c d");
        assert!((meteor_lite(&same, &same) - (1.0 - 0.5 / 64.0)).abs() < 1e-12);
        assert_eq!(meteor_lite(&toks("x y"), &toks("z")), 0.0);
        assert!(meteor_lite(&toks("cooking"), &toks("cooked")) > 0.0);
    }

    #[test]
    fn corpus_report() {
        let r = evaluate_corpus(&[("Fry the onion.", "fry the onion .")]).unwrap();
        assert_eq!((r.rouge1_f, r.rouge2_f, r.rouge_l_f, r.bleu4), (1.0, 1.0, 1.0, 1.0));
        assert!(r.render().contains("ROUGE-1     100.0"));
        assert!(evaluate_corpus::<&str, &str>(&[]).is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_monotone(a in prop::collection::vec(0u8..5, 0..12), b in prop::collection::vec(0u8..5, 0..12), n in 1usize..4) {
            let p = rouge_n(&a, &b, n);
            for v in [p.precision, p.recall, p.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if b.len() >= n {
                let mut longer = a.clone();
                longer.extend_from_slice(&b[..n]);
                prop_assert!(rouge_n(&longer, &b, n).recall >= p.recall);
            }
        }

        #[test]
        fn lcs_dominates_common_substring(a in prop::collection::vec(0u8..4, 0..10), b in prop::collection::vec(0u8..4, 0..10)) {
            let mut best = 0;
            for i in 0..a.len() {
                for j in 0..b.len() {
                    let mut k = 0;
                    while i + k < a.len() && j + k < b.len() && a[i + k] == b[j + k] {
                        k += 1;
                    }
                    best = best.max(k);
                }
            }
            prop_assert!(lcs_len(&a, &b) >= best);
        }
    }
}
