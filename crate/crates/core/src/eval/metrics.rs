use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;

use serde::{Deserialize, Serialize};

use super::tokenize::TokenizerRegistry;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l_tokens<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<RougeScore> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("empty reference".into()));
    }
    let l = lcs_len(hyp, reference) as f64;
    let precision = if hyp.is_empty() { 0.0 } else { l / hyp.len() as f64 };
    let recall = l / reference.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(RougeScore { precision, recall, f1 })
}

/// Sentence ROUGE-L under the language's metric tokenizer.
pub fn rouge_l(hyp: &str, reference: &str, lang: &str, registry: &TokenizerRegistry) -> Result<RougeScore> {
    rouge_l_tokens(&registry.tokenize(hyp, lang), &registry.tokenize(reference, lang))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    /// Modified n-gram precisions, percent, orders 1 to 4.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub sys_len: usize,
    pub ref_len: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped matches and totals per order, plus lengths.
pub(crate) fn bleu_stats(hyp: &[String], reference: &[String]) -> ([usize; 4], [usize; 4]) {
    let mut correct = [0; 4];
    let mut total = [0; 4];
    for n in 1..=4 {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        total[n - 1] = hyp.len().saturating_sub(n - 1);
        correct[n - 1] = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    }
    (correct, total)
}

/// Corpus BLEU-4 from accumulated statistics.
///
/// Orders with no match are smoothed geometrically: the k-th such order gets
/// precision `100 / (2^k · total)`. An order with no candidate n-grams ends
/// the computation and leaves its precision at zero.
pub fn bleu_from_stats(correct: [usize; 4], total: [usize; 4], sys_len: usize, ref_len: usize) -> BleuScore {
    let mut precisions = [0.0; 4];
    let mut smooth = 1.0;
    for n in 0..4 {
        if total[n] == 0 {
            break;
        }
        if correct[n] == 0 {
            smooth *= 2.0;
            precisions[n] = 100.0 / (smooth * total[n] as f64);
        } else {
            precisions[n] = 100.0 * correct[n] as f64 / total[n] as f64;
        }
    }
    let brevity_penalty = if sys_len >= ref_len {
        1.0
    } else if sys_len == 0 {
        0.0
    } else {
        libm::exp(1.0 - ref_len as f64 / sys_len as f64)
    };
    let log = |p: f64| if p == 0.0 { -9_999_999_999.0 } else { libm::log(p) };
    let mean_log = precisions.iter().map(|p| log(*p)).sum::<f64>() / 4.0;
    BleuScore {
        score: brevity_penalty * libm::exp(mean_log),
        precisions,
        brevity_penalty,
        sys_len,
        ref_len,
    }
}

/// Corpus-level BLEU-4 in `[0, 100]`.
pub fn bleu(hyps: &[String], refs: &[String], lang: &str, registry: &TokenizerRegistry) -> Result<BleuScore> {
    if hyps.len() != refs.len() {
        return Err(Error::DimensionMismatch {
            expected: refs.len(),
            found: hyps.len(),
        });
    }
    if hyps.is_empty() {
        return Err(Error::InvalidArgument("no sentences to score".into()));
    }
    let mut correct = [0; 4];
    let mut total = [0; 4];
    let (mut sys_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let h = registry.tokenize(h, lang);
        let r = registry.tokenize(r, lang);
        let (c, t) = bleu_stats(&h, &r);
        for n in 0..4 {
            correct[n] += c[n];
            total[n] += t[n];
        }
        sys_len += h.len();
        ref_len += r.len();
    }
    Ok(bleu_from_stats(correct, total, sys_len, ref_len))
}

/// Fraction of hypotheses equal to their reference token-for-token.
pub fn exact_match(hyps: &[String], refs: &[String], lang: &str, registry: &TokenizerRegistry) -> Result<f64> {
    if hyps.len() != refs.len() || hyps.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let hits = hyps
        .iter()
        .zip(refs)
        .filter(|(h, r)| registry.tokenize(h, lang) == registry.tokenize(r, lang))
        .count();
    Ok(hits as f64 / hyps.len() as f64)
}
