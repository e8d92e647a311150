use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Longest output, not counting EOS.
    pub max_len: usize,
    /// EOS is unavailable until this many tokens have been emitted.
    pub min_len: usize,
    /// Exponent `a` of the `len^a` divisor applied when ranking finished
    /// hypotheses. Zero ranks by raw log-probability sum.
    #[serde(default)]
    pub length_penalty: f64,
    /// Forbid the denoising sentinels in task outputs.
    #[serde(default)]
    pub suppress_sentinels: bool,
}

impl DecodeConfig {
    pub fn new(beam_size: usize, max_len: usize, min_len: usize) -> Self {
        DecodeConfig {
            beam_size,
            max_len,
            min_len,
            length_penalty: 0.0,
            suppress_sentinels: false,
        }
    }

    pub fn greedy(max_len: usize) -> Self {
        Self::new(1, max_len, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::InvalidArgument("beam size must be positive".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= min_len ({}) <= max_len ({})",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    fn rank(&self, score: f64, len: usize) -> f64 {
        if self.length_penalty == 0.0 {
            score
        } else {
            score / libm::pow(len.max(1) as f64, self.length_penalty)
        }
    }
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self::new(4, 100, 1)
    }
}

/// Beam search over a next-token log-probability oracle.
///
/// `step(prefix)` returns log-probabilities for the token after `prefix`.
/// Ties prefer the lower token id, so a beam of one is greedy argmax.
pub fn beam_search<F>(mut step: F, vocab: usize, eos: u32, pad: Option<u32>, cfg: &DecodeConfig) -> Result<Vec<u32>>
where
    F: FnMut(&[u32]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut alive: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    for t in 0..cfg.max_len {
        let mut cands: Vec<(usize, u32, f64)> = Vec::new();
        for (b, (prefix, score)) in alive.iter().enumerate() {
            let lp = step(prefix)?;
            if lp.len() != vocab {
                return Err(Error::DimensionMismatch {
                    expected: vocab,
                    found: lp.len(),
                });
            }
            for (tok, l) in lp.iter().enumerate() {
                let tok = tok as u32;
                if Some(tok) == pad || (tok == eos && t < cfg.min_len) || !l.is_finite() {
                    continue;
                }
                cands.push((b, tok, score + l));
            }
        }
        // Stable sort keeps beam-then-token order among equal scores.
        cands.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(core::cmp::Ordering::Equal));
        let mut next = Vec::with_capacity(cfg.beam_size);
        for (b, tok, score) in cands.into_iter().take(cfg.beam_size) {
            if tok == eos {
                finished.push((alive[b].0.clone(), score));
            } else {
                let mut seq = alive[b].0.clone();
                seq.push(tok);
                next.push((seq, score));
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
        // Scores only fall as sequences grow, so a finished hypothesis at
        // least as good as every live one cannot be overtaken.
        if cfg.length_penalty == 0.0 {
            let best_done = finished.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
            let best_alive = alive.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= best_alive {
                break;
            }
        }
    }
    finished.extend(alive.into_iter().filter(|a| a.0.len() == cfg.max_len));
    let mut best: Option<(Vec<u32>, f64)> = None;
    for (seq, score) in finished {
        let r = cfg.rank(score, seq.len());
        if best.as_ref().is_none_or(|b| r > b.1) {
            best = Some((seq, r));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::InvalidArgument("no admissible hypothesis".into()))
}

/// Argmax decoding, independent of [`beam_search`].
pub fn greedy_search<F>(mut step: F, eos: u32, pad: Option<u32>, max_len: usize, min_len: usize) -> Result<Vec<u32>>
where
    F: FnMut(&[u32]) -> Result<Vec<f64>>,
{
    let mut out = Vec::new();
    while out.len() < max_len {
        let lp = step(&out)?;
        let mut best: Option<(u32, f64)> = None;
        for (tok, l) in lp.iter().enumerate() {
            let tok = tok as u32;
            if Some(tok) == pad || (tok == eos && out.len() < min_len) {
                continue;
            }
            if best.is_none_or(|b| *l > b.1) {
                best = Some((tok, *l));
            }
        }
        match best {
            Some((tok, _)) if tok == eos => break,
            Some((tok, _)) => out.push(tok),
            None => return Err(Error::InvalidArgument("no admissible token".into())),
        }
    }
    Ok(out)
}
