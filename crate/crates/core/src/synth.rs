//! Synthetic multilingual benchmark.
//!
//! Every language writes the same `K` meaning symbols with its own bijective
//! alphabet (a permutation of the shared surface characters). Languages in a
//! cluster share a prototype permutation and differ from it by a single
//! adjacent transposition; prototypes of different clusters are far apart.
//! The base task acts on meanings, so solving it in a language requires
//! knowing that language's alphabet order. Monolingual text consists of
//! ascending meaning runs, which is where that order can be learned.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Task};
use crate::error::{Error, Result};
use crate::lang::LangCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseTask {
    Copy,
    Reverse,
    /// Distinct symbols sorted by meaning.
    #[default]
    Sort,
    /// Each symbol replaced by the next meaning, wrapping at `K`.
    Successor,
}

impl BaseTask {
    /// Apply the task to a meaning sequence.
    pub fn apply(self, meanings: &[usize], k: usize) -> Vec<usize> {
        match self {
            BaseTask::Copy => meanings.to_vec(),
            BaseTask::Reverse => meanings.iter().rev().copied().collect(),
            BaseTask::Sort => {
                let mut v = meanings.to_vec();
                v.sort_unstable();
                v
            }
            BaseTask::Successor => meanings.iter().map(|m| (m + 1) % k).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub clusters: usize,
    pub per_cluster: usize,
    /// Meaning symbols `K`, also the alphabet size.
    pub meanings: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub task: BaseTask,
    /// The high-resource language used for supervised fine-tuning.
    pub pivot: String,
    /// Supervised examples per language and split.
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Monolingual lines per language.
    pub mono: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            clusters: 3,
            per_cluster: 2,
            meanings: 8,
            min_len: 3,
            max_len: 6,
            task: BaseTask::Sort,
            pivot: String::from("en"),
            train: 400,
            valid: 64,
            test: 64,
            mono: 600,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("synth config: {m}")));
        if self.clusters == 0 || self.per_cluster == 0 {
            return bad("need at least one cluster and one language per cluster".into());
        }
        if self.clusters > 26 || self.per_cluster > 26 {
            return bad("at most 26 clusters of 26 languages".into());
        }
        if !(4..=26).contains(&self.meanings) {
            return bad(format!("meanings {} outside 4..=26", self.meanings));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len".into());
        }
        if self.task == BaseTask::Sort && self.max_len > self.meanings {
            return bad("sort inputs are distinct, so max_len cannot exceed meanings".into());
        }
        if self.pivot.len() != 2 || !self.pivot.chars().all(|c| c.is_ascii_lowercase()) {
            return bad(format!("pivot code {:?} is not two lowercase letters", self.pivot));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLanguage {
    pub code: LangCode,
    /// Construction cluster; `None` for the pivot.
    pub cluster: Option<usize>,
    /// Surface character of each meaning.
    pub alphabet: Vec<char>,
}

impl SynthLanguage {
    pub fn render(&self, meanings: &[usize]) -> String {
        meanings.iter().map(|m| self.alphabet[*m]).collect()
    }

    pub fn read(&self, text: &str) -> Option<Vec<usize>> {
        text.chars().map(|c| self.alphabet.iter().position(|a| *a == c)).collect()
    }

    /// One-hot encoding of the alphabet permutation, `K * K` values.
    pub fn vector(&self) -> Vec<f64> {
        let k = self.alphabet.len();
        let mut v = vec![0.0; k * k];
        for (m, c) in self.alphabet.iter().enumerate() {
            let s = (*c as u8 - b'a') as usize;
            v[m * k + s] = 1.0;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBenchmark {
    pub config: SynthConfig,
    pub languages: Vec<SynthLanguage>,
    pub mono: BTreeMap<LangCode, Vec<String>>,
    pub train: BTreeMap<LangCode, Vec<Example>>,
    pub valid: BTreeMap<LangCode, Vec<Example>>,
    pub test: BTreeMap<LangCode, Vec<Example>>,
}

impl SynthBenchmark {
    pub fn language(&self, code: &str) -> Option<&SynthLanguage> {
        self.languages.iter().find(|l| l.code.as_str() == code)
    }

    /// The clustered languages, excluding the pivot.
    pub fn clustered(&self) -> impl Iterator<Item = &SynthLanguage> {
        self.languages.iter().filter(|l| l.cluster.is_some())
    }

    /// Construction partition, members sorted.
    pub fn true_clusters(&self) -> Vec<Vec<LangCode>> {
        let mut out = vec![Vec::new(); self.config.clusters];
        for l in self.clustered() {
            out[l.cluster.expect("clustered")].push(l.code.clone());
        }
        out
    }

    /// Every surface character, for building a tokenizer.
    pub fn alphabet(&self) -> Vec<char> {
        (0..self.config.meanings).map(|i| (b'a' + i as u8) as char).collect()
    }

    /// Reference answer for `source` written in `lang`.
    pub fn solve(&self, lang: &str, source: &str) -> Option<String> {
        let l = self.language(lang)?;
        let m = l.read(source)?;
        Some(l.render(&self.config.task.apply(&m, self.config.meanings)))
    }
}

fn hamming(a: &[char], b: &[char]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn cluster_code(c: usize, j: usize) -> LangCode {
    LangCode::new(format!("{}{}", (b'a' + c as u8) as char, (b'a' + j as u8) as char))
}

/// Build the benchmark deterministically from `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthBenchmark> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.meanings;
    let identity: Vec<char> = (0..k).map(|i| (b'a' + i as u8) as char).collect();

    // The first member of each cluster is its prototype; the others apply one
    // adjacent transposition each. Draw until every cross-cluster pair, and
    // every language against the pivot, differs in at least K - 2 places.
    let min_gap = k - 2;
    let mut attempts = 0;
    let languages = loop {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::InvalidArgument("could not place well-separated clusters".into()));
        }
        let mut langs = vec![SynthLanguage {
            code: LangCode::new(cfg.pivot.clone()),
            cluster: None,
            alphabet: identity.clone(),
        }];
        for c in 0..cfg.clusters {
            let mut proto = identity.clone();
            proto.shuffle(&mut rng);
            let swaps = index::sample(&mut rng, k - 1, (cfg.per_cluster - 1).min(k - 1)).into_vec();
            for j in 0..cfg.per_cluster {
                let mut a = proto.clone();
                if j > 0 {
                    let s = swaps[(j - 1) % swaps.len()];
                    a.swap(s, s + 1);
                }
                let code = cluster_code(c, j);
                if code.as_str() == cfg.pivot {
                    return Err(Error::DuplicateLanguage(cfg.pivot.clone()));
                }
                langs.push(SynthLanguage {
                    code,
                    cluster: Some(c),
                    alphabet: a,
                });
            }
        }
        let separated = langs.iter().enumerate().all(|(i, x)| {
            langs[i + 1..]
                .iter()
                .all(|y| x.cluster == y.cluster || hamming(&x.alphabet, &y.alphabet) >= min_gap)
        });
        if separated {
            break langs;
        }
    };

    let mut mono = BTreeMap::new();
    let mut train = BTreeMap::new();
    let mut valid = BTreeMap::new();
    let mut test = BTreeMap::new();
    for lang in &languages {
        let lines: Vec<String> = (0..cfg.mono).map(|_| lang.render(&ascending_run(cfg, &mut rng))).collect();
        mono.insert(lang.code.clone(), lines);
        let make = |n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Example>> {
            (0..n)
                .map(|_| {
                    let m = task_input(cfg, rng);
                    let src = lang.render(&m);
                    let tgt = lang.render(&cfg.task.apply(&m, k));
                    Example::new(src, tgt, lang.code.clone(), Task::Summarization)
                })
                .collect()
        };
        train.insert(lang.code.clone(), make(cfg.train, &mut rng)?);
        valid.insert(lang.code.clone(), make(cfg.valid, &mut rng)?);
        test.insert(lang.code.clone(), make(cfg.test, &mut rng)?);
    }
    Ok(SynthBenchmark {
        config: cfg.clone(),
        languages,
        mono,
        train,
        valid,
        test,
    })
}

/// Increasing meanings with steps of one or two.
fn ascending_run(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = cfg.meanings;
    let len = rng.gen_range(cfg.min_len..=cfg.max_len).min(k);
    loop {
        let mut cur = rng.gen_range(0..k);
        let mut out = vec![cur];
        while out.len() < len {
            cur += rng.gen_range(1..=2);
            if cur >= k {
                break;
            }
            out.push(cur);
        }
        if out.len() >= cfg.min_len.min(k) {
            return out;
        }
    }
}

fn task_input(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    match cfg.task {
        BaseTask::Sort => {
            let mut v = index::sample(rng, cfg.meanings, len).into_vec();
            v.shuffle(rng);
            v
        }
        _ => (0..len).map(|_| rng.gen_range(0..cfg.meanings)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langspace::{cluster_languages, cosine_distance, LanguageSpace, Linkage};

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap().languages, generate(&other).unwrap().languages);
    }

    #[test]
    fn tasks_are_oracle_checkable() {
        let b = generate(&SynthConfig::default()).unwrap();
        for (lang, exs) in &b.test {
            for e in exs {
                assert_eq!(b.solve(lang.as_str(), &e.source).unwrap(), e.target);
            }
        }
        assert_eq!(BaseTask::Successor.apply(&[0, 7], 8), vec![1, 0]);
        assert_eq!(BaseTask::Reverse.apply(&[0, 7, 2], 8), vec![2, 7, 0]);
    }

    #[test]
    fn construction_distances() {
        let b = generate(&SynthConfig::default()).unwrap();
        let langs: Vec<_> = b.clustered().collect();
        assert_eq!(langs.len(), 6);
        for x in &langs {
            for y in &langs {
                let d = cosine_distance(&x.vector(), &y.vector()).unwrap();
                if x.code == y.code {
                    continue;
                }
                if x.cluster == y.cluster {
                    assert!(d <= 0.25 + 1e-12, "{} {} {d}", x.code, y.code);
                } else {
                    assert!(d >= 0.75, "{} {} {d}", x.code, y.code);
                }
            }
        }
    }

    #[test]
    fn clustering_recovers_construction() {
        for seed in 0..20 {
            let b = generate(&SynthConfig {
                seed,
                ..SynthConfig::default()
            })
            .unwrap();
            let space = LanguageSpace::from_records(b.clustered().map(|l| (l.code.clone(), l.vector()))).unwrap();
            let set = cluster_languages(&space, 3, Linkage::Average).unwrap();
            let mut got: Vec<Vec<LangCode>> = set.clusters.iter().map(|c| c.members.clone()).collect();
            got.sort();
            let mut want = b.true_clusters();
            want.sort();
            assert_eq!(got, want, "seed {seed}");
        }
    }

    #[test]
    fn mono_lines_ascend() {
        let b = generate(&SynthConfig::default()).unwrap();
        for (lang, lines) in &b.mono {
            let l = b.language(lang.as_str()).unwrap();
            for line in lines {
                let m = l.read(line).unwrap();
                assert!(m.windows(2).all(|w| w[1] > w[0]));
            }
        }
    }
}
