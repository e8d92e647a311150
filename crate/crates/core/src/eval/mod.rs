//! Generation metrics, zero-shot evaluation and the tag-distance analysis.

mod metrics;
mod tokenize;

pub use metrics::{bleu, bleu_from_stats, exact_match, lcs_len, rouge_l, rouge_l_tokens, BleuScore, RougeScore};
pub use tokenize::{Segmentation, TokenizerRegistry};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{tag_tokens, Example, TaggedSequence, Tokenizer, MAX_SOURCE_LEN};
use crate::error::{Error, Result};
use crate::exec::{Executor, Serial};
use crate::lang::LangCode;
use crate::langspace::cosine_distance;
use crate::model::{DecodeConfig, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RougeL,
    Bleu,
    /// Whole-sequence accuracy under the metric tokenizer.
    ExactMatch,
}

impl core::fmt::Display for Metric {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Metric::RougeL => "rouge_l",
            Metric::Bleu => "bleu",
            Metric::ExactMatch => "exact_match",
        })
    }
}

impl core::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rouge_l" => Ok(Metric::RougeL),
            "bleu" => Ok(Metric::Bleu),
            "exact_match" => Ok(Metric::ExactMatch),
            _ => Err(Error::InvalidArgument(format!("unknown metric {s:?}"))),
        }
    }
}

/// One language's score. ROUGE-L carries mean precision and recall with the
/// mean F1 as `score` (all in `[0, 1]`); BLEU is in `[0, 100]`; exact match is
/// a fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: Metric,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    pub n: usize,
}

/// Score `hyps` against `refs` for one language.
pub fn score(metric: Metric, hyps: &[String], refs: &[String], lang: &str, registry: &TokenizerRegistry) -> Result<MetricResult> {
    if hyps.is_empty() || hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let n = hyps.len();
    Ok(match metric {
        Metric::RougeL => {
            let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
            for (h, rf) in hyps.iter().zip(refs) {
                let s = rouge_l(h, rf, lang, registry)?;
                p += s.precision;
                r += s.recall;
                f += s.f1;
            }
            let k = n as f64;
            MetricResult {
                name: metric,
                score: f / k,
                precision: Some(p / k),
                recall: Some(r / k),
                n,
            }
        }
        Metric::Bleu => MetricResult {
            name: metric,
            score: bleu(hyps, refs, lang, registry)?.score,
            precision: None,
            recall: None,
            n,
        },
        Metric::ExactMatch => MetricResult {
            name: metric,
            score: exact_match(hyps, refs, lang, registry)?,
            precision: None,
            recall: None,
            n,
        },
    })
}

/// Generated output for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub lang: LangCode,
    pub source: String,
    pub reference: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub per_lang: BTreeMap<LangCode, MetricResult>,
    pub average: f64,
    pub decode: DecodeConfig,
    pub model_provenance: String,
}

impl EvalReport {
    pub fn new(metric: Metric, per_lang: BTreeMap<LangCode, MetricResult>, decode: DecodeConfig, model_provenance: String) -> Result<Self> {
        if per_lang.is_empty() {
            return Err(Error::InvalidArgument("report without languages".into()));
        }
        let average = per_lang.values().map(|m| m.score).sum::<f64>() / per_lang.len() as f64;
        Ok(EvalReport {
            metric,
            per_lang,
            average,
            decode,
            model_provenance,
        })
    }

    /// Aligned table: one header row of languages plus `avg`, one score row.
    pub fn to_table(&self) -> String {
        table(&[(self.model_provenance.as_str(), self)])
    }
}

/// Several reports as rows of one table, in the given order. Languages are
/// the union over reports; missing cells print as `-`.
pub fn table(rows: &[(&str, &EvalReport)]) -> String {
    let mut langs: Vec<&LangCode> = rows.iter().flat_map(|(_, r)| r.per_lang.keys()).collect();
    langs.sort();
    langs.dedup();
    let label_w = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(5);
    let scale = |r: &EvalReport, v: f64| if r.metric == Metric::Bleu { v } else { 100.0 * v };
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "model");
    for l in &langs {
        let _ = write!(out, " {:>7}", l.as_str());
    }
    let _ = writeln!(out, " {:>7}", "avg");
    for (name, r) in rows {
        let _ = write!(out, "{name:<label_w$}");
        for l in &langs {
            match r.per_lang.get(*l) {
                Some(m) => {
                    let _ = write!(out, " {:>7.2}", scale(r, m.score));
                }
                None => {
                    let _ = write!(out, " {:>7}", "-");
                }
            }
        }
        let _ = writeln!(out, " {:>7.2}", scale(r, r.average));
    }
    out
}

/// Longest source that still fits the model after the two tags.
pub fn source_budget(model: &Model) -> usize {
    MAX_SOURCE_LEN.min(model.config.max_positions.saturating_sub(2))
}

/// Decode every test example and score each language.
///
/// Languages seen in meta-training are refused unless `allow_seen` is set.
#[allow(clippy::too_many_arguments)]
pub fn zero_shot_evaluate<T: Tokenizer + Sync + ?Sized>(
    model: &Model,
    tokenizer: &T,
    test_sets: &BTreeMap<LangCode, Vec<Example>>,
    decode: &DecodeConfig,
    metric: Metric,
    registry: &TokenizerRegistry,
    meta_train_langs: &[LangCode],
    allow_seen: bool,
    model_provenance: &str,
) -> Result<(EvalReport, Vec<Generation>)> {
    zero_shot_evaluate_with(
        &Serial,
        model,
        tokenizer,
        test_sets,
        decode,
        metric,
        registry,
        meta_train_langs,
        allow_seen,
        model_provenance,
    )
}

/// [`zero_shot_evaluate`] with decoding spread over `exec`.
#[allow(clippy::too_many_arguments)]
pub fn zero_shot_evaluate_with<E: Executor + ?Sized, T: Tokenizer + Sync + ?Sized>(
    exec: &E,
    model: &Model,
    tokenizer: &T,
    test_sets: &BTreeMap<LangCode, Vec<Example>>,
    decode: &DecodeConfig,
    metric: Metric,
    registry: &TokenizerRegistry,
    meta_train_langs: &[LangCode],
    allow_seen: bool,
    model_provenance: &str,
) -> Result<(EvalReport, Vec<Generation>)> {
    if !allow_seen {
        if let Some(l) = test_sets.keys().find(|l| meta_train_langs.contains(l)) {
            return Err(Error::Contamination(String::from(l.as_str())));
        }
    }
    let budget = source_budget(model);
    let banned = if decode.suppress_sentinels {
        tokenizer.sentinels()
    } else {
        Vec::new()
    };
    let mut per_lang = BTreeMap::new();
    let mut generations = Vec::new();
    for (lang, examples) in test_sets {
        if examples.is_empty() {
            return Err(Error::InvalidArgument(format!("no test examples for {lang}")));
        }
        if let Some(ex) = examples.iter().find(|e| &e.lang != lang) {
            return Err(Error::InvalidArgument(format!("{} example in the {lang} test set", ex.lang)));
        }
        let outputs = exec.map(examples, |ex| -> Result<String> {
            let input = tag_tokens(&tokenizer.encode(&ex.source), lang, tokenizer, budget)?;
            Ok(tokenizer.decode(&model.generate_masked(&input, decode, &banned)?))
        });
        let mut hyps = Vec::with_capacity(examples.len());
        let mut refs = Vec::with_capacity(examples.len());
        for (ex, out) in examples.iter().zip(outputs) {
            let hyp = out?;
            generations.push(Generation {
                lang: lang.clone(),
                source: ex.source.clone(),
                reference: ex.target.clone(),
                hypothesis: hyp.clone(),
            });
            hyps.push(hyp);
            refs.push(ex.target.clone());
        }
        per_lang.insert(lang.clone(), score(metric, &hyps, &refs, lang.as_str(), registry)?);
    }
    Ok((
        EvalReport::new(metric, per_lang, *decode, String::from(model_provenance))?,
        generations,
    ))
}

/// Pairwise cosine distances between language-tag representations.
pub fn tag_distance_matrix(model: &Model, probes: &BTreeMap<LangCode, Vec<TaggedSequence>>) -> Result<(Vec<LangCode>, Vec<Vec<f64>>)> {
    if probes.len() < 2 {
        return Err(Error::InvalidArgument("need at least two languages".into()));
    }
    let langs: Vec<LangCode> = probes.keys().cloned().collect();
    let reps = probes
        .values()
        .map(|p| model.language_tag_representation(p))
        .collect::<Result<Vec<_>>>()?;
    let n = langs.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(&reps[i], &reps[j])?;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok((langs, m))
}

pub fn mean_off_diagonal(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                total += v;
            }
        }
    }
    total / (n * (n - 1)) as f64
}

/// Text heat table: distances with a shade glyph per cell.
pub fn render_matrix(langs: &[LangCode], m: &[Vec<f64>]) -> String {
    const SHADES: [char; 5] = [' ', '░', '▒', '▓', '█'];
    let mut out = String::new();
    let _ = write!(out, "{:>6}", "");
    for l in langs {
        let _ = write!(out, " {:>7}", l.as_str());
    }
    out.push('\n');
    let max = m.iter().flatten().cloned().fold(0.0, f64::max);
    for (l, row) in langs.iter().zip(m) {
        let _ = write!(out, "{:>6}", l.as_str());
        for v in row {
            let k = if max > 0.0 { ((v / max) * 4.0 + 0.5) as usize } else { 0 };
            let _ = write!(out, " {:>6.4}{}", v, SHADES[k.min(4)]);
        }
        out.push('\n');
    }
    out
}
