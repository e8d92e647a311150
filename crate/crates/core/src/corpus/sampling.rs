use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Example;
use crate::error::{Error, Result};
use crate::lang::LangCode;

/// One meta-task: a language with disjoint support and query examples.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch<E> {
    pub lang: LangCode,
    pub support: Vec<E>,
    pub query: Vec<E>,
}

/// Shuffle `batch` and cut it into support and query.
///
/// Support size is `round(fraction * len)`, clamped so neither side is empty.
pub fn split_support_query<E, R: Rng + ?Sized>(mut batch: Vec<E>, support_fraction: f64, rng: &mut R) -> Result<(Vec<E>, Vec<E>)> {
    if batch.len() < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "cannot split {} example(s) into support and query",
            batch.len()
        )));
    }
    if !(support_fraction > 0.0 && support_fraction < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "support fraction {support_fraction} outside (0, 1)"
        )));
    }
    let n = batch.len();
    let support = (libm::round(support_fraction * n as f64) as usize).clamp(1, n - 1);
    batch.shuffle(rng);
    let query = batch.split_off(support);
    Ok((batch, query))
}

/// Pick a language uniformly, draw `batch_size` of its examples without
/// replacement and split them.
pub fn sample_task_batch<E: Clone, R: Rng + ?Sized>(
    meta_sets: &BTreeMap<LangCode, Vec<E>>,
    batch_size: usize,
    support_fraction: f64,
    rng: &mut R,
) -> Result<TaskBatch<E>> {
    if meta_sets.is_empty() {
        return Err(Error::InvalidArgument("no meta-training languages".into()));
    }
    for (lang, set) in meta_sets {
        if set.len() < batch_size {
            return Err(Error::Shortfall {
                lang: lang.as_str().into(),
                requested: batch_size,
                available: set.len(),
            });
        }
    }
    let pick = rng.gen_range(0..meta_sets.len());
    let (lang, set) = meta_sets.iter().nth(pick).expect("index in range");
    let batch: Vec<E> = index::sample(rng, set.len(), batch_size)
        .into_iter()
        .map(|i| set[i].clone())
        .collect();
    let (support, query) = split_support_query(batch, support_fraction, rng)?;
    Ok(TaskBatch {
        lang: lang.clone(),
        support,
        query,
    })
}

/// Per-language sample counts for the multilingual denoising corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train: 5000,
            valid: 1000,
            test: 1000,
        }
    }
}

/// Monolingual denoising corpus pooled over languages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiMonoLang {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

/// Sample each language's lines without replacement into train/valid/test,
/// pool them in language order and shuffle the training split.
pub fn build_multimonolang(
    mono: &BTreeMap<LangCode, Vec<alloc::string::String>>,
    per_lang: SplitCounts,
    seed: u64,
) -> Result<MultiMonoLang> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let need = per_lang.train + per_lang.valid + per_lang.test;
    let mut out = MultiMonoLang {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for (lang, lines) in mono {
        let lines: Vec<&alloc::string::String> = lines.iter().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() < need {
            return Err(Error::Shortfall {
                lang: lang.as_str().into(),
                requested: need,
                available: lines.len(),
            });
        }
        let picked = index::sample(&mut rng, lines.len(), need).into_vec();
        for (i, idx) in picked.into_iter().enumerate() {
            let ex = Example::monolingual(lines[idx].as_str(), lang.clone())?;
            if i < per_lang.train {
                out.train.push(ex);
            } else if i < per_lang.train + per_lang.valid {
                out.valid.push(ex);
            } else {
                out.test.push(ex);
            }
        }
    }
    out.train.shuffle(&mut rng);
    Ok(out)
}
