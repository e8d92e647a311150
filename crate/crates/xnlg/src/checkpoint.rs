//! Self-describing model checkpoints with stage provenance.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xnlg_core::corpus::{CharTokenizer, CharTokenizerSpec};
use xnlg_core::model::{Model, ModelConfig};
use xnlg_core::params::{ParameterSet, Tensor};
use xnlg_core::LangCode;

use crate::error::{CliError, Result};
use crate::formats::{read_json, write_json};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    AdaptivePretrain,
    EnglishFinetune,
    MetaTrain,
    BaselineFt,
}

impl Stage {
    /// The stage whose output this stage consumes.
    pub fn requires(self) -> Option<Stage> {
        match self {
            Stage::Init => None,
            Stage::AdaptivePretrain => Some(Stage::Init),
            Stage::EnglishFinetune => Some(Stage::AdaptivePretrain),
            Stage::MetaTrain | Stage::BaselineFt => Some(Stage::EnglishFinetune),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Init => "init",
            Stage::AdaptivePretrain => "adaptive_pretrain",
            Stage::EnglishFinetune => "english_finetune",
            Stage::MetaTrain => "meta_train",
            Stage::BaselineFt => "baseline_ft",
        })
    }
}

/// One completed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// SHA-256 of the parameters this stage produced.
    pub params_sha256: String,
    /// The stage's section of the effective run config.
    pub config: serde_json::Value,
    /// Languages whose data the stage trained on.
    #[serde(default)]
    pub languages: Vec<LangCode>,
    /// Markers such as `ablation` or `out_of_order`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    /// Scalar summaries (losses before and after, step counts).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageProvenance {
    pub stages: Vec<StageRecord>,
}

impl StageProvenance {
    pub fn last(&self) -> Option<&StageRecord> {
        self.stages.last()
    }

    pub fn contains(&self, stage: Stage) -> bool {
        self.stages.iter().any(|s| s.stage == stage)
    }

    /// Every language any recorded meta-training stage used.
    pub fn meta_train_languages(&self) -> Vec<LangCode> {
        let mut out: Vec<LangCode> = self
            .stages
            .iter()
            .filter(|s| s.stage == Stage::MetaTrain)
            .flat_map(|s| s.languages.iter().cloned())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// `a → b → c` summary for reports.
    pub fn chain(&self) -> String {
        self.stages.iter().map(|s| s.stage.to_string()).collect::<Vec<_>>().join(" -> ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: u32,
    model: ModelConfig,
    tokenizer: CharTokenizerSpec,
    provenance: StageProvenance,
    params: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub tokenizer: CharTokenizerSpec,
    pub provenance: StageProvenance,
}

/// SHA-256 over names, shapes and the little-endian bits of every value.
pub fn params_sha256(params: &ParameterSet) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.iter() {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.shape.len() as u64).to_le_bytes());
        for d in &t.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for x in &t.data {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl Checkpoint {
    pub fn new(model: Model, tokenizer: CharTokenizerSpec, provenance: StageProvenance) -> Self {
        Checkpoint {
            model,
            tokenizer,
            provenance,
        }
    }

    pub fn tokenizer(&self) -> CharTokenizer {
        CharTokenizer::from_spec(self.tokenizer.clone())
    }

    pub fn params_sha256(&self) -> String {
        params_sha256(&self.model.params)
    }

    /// Append a stage record for the current parameters.
    pub fn record(&mut self, mut rec: StageRecord) {
        rec.params_sha256 = self.params_sha256();
        self.provenance.stages.push(rec);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format: FORMAT_VERSION,
            model: self.model.config.clone(),
            tokenizer: self.tokenizer.clone(),
            provenance: self.provenance.clone(),
            params: self
                .model
                .params
                .iter()
                .map(|(n, t)| NamedTensor {
                    name: n.to_string(),
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                })
                .collect(),
        };
        write_json(path, &file)
    }

    /// Load and verify that the parameters hash to the last recorded stage.
    pub fn load(path: &Path) -> Result<Self> {
        let file: CheckpointFile = read_json(path)?;
        if file.format != FORMAT_VERSION {
            return Err(CliError::data(path, format!("unsupported checkpoint format {}", file.format)));
        }
        let entries = file
            .params
            .into_iter()
            .map(|t| Ok((t.name, Tensor::new(&t.shape, t.data)?)))
            .collect::<xnlg_core::Result<Vec<_>>>()
            .map_err(|e| CliError::data(path, e.to_string()))?;
        let params = ParameterSet::from_entries(entries).map_err(|e| CliError::data(path, e.to_string()))?;
        let model = Model::from_parts(file.model, params).map_err(|e| CliError::data(path, e.to_string()))?;
        let tok = CharTokenizer::from_spec(file.tokenizer.clone());
        if xnlg_core::corpus::Tokenizer::vocab_size(&tok) != model.config.vocab_size {
            return Err(CliError::data(path, "tokenizer and model vocabulary sizes differ"));
        }
        let ck = Checkpoint {
            model,
            tokenizer: file.tokenizer,
            provenance: file.provenance,
        };
        if let Some(last) = ck.provenance.last() {
            let actual = ck.params_sha256();
            if last.params_sha256 != actual {
                return Err(CliError::data(
                    path,
                    format!(
                        "parameter hash {actual} does not match the recorded {} stage ({})",
                        last.stage, last.params_sha256
                    ),
                ));
            }
        }
        Ok(ck)
    }
}

/// How to treat a checkpoint that lacks the stage an operation expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Strictness {
    pub strict: bool,
    pub force: bool,
}

/// Check that `ck` carries the provenance `stage` needs. Returns a warning
/// (and marks the run out of order) when the check fails but is tolerated.
pub fn check_order(ck: &Checkpoint, stage: Stage, how: Strictness) -> Result<Option<String>> {
    let Some(need) = stage.requires() else {
        return Ok(None);
    };
    let last = ck.provenance.last().map(|r| r.stage);
    if last == Some(need) {
        return Ok(None);
    }
    let found = match last {
        Some(s) => format!("last stage {s}"),
        None => "no provenance".to_string(),
    };
    let msg = format!("{stage} expects a checkpoint from {need}, found {found}");
    if how.strict && !how.force {
        return Err(CliError::Provenance(format!("{msg} (pass --force to override)")));
    }
    Ok(Some(msg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use xnlg_core::corpus::Tokenizer;

    fn tiny() -> Checkpoint {
        let tok = CharTokenizer::new(vec!["en".into(), "hi".into()], 2, "abc ".chars());
        let cfg = ModelConfig {
            vocab_size: tok.vocab_size(),
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 8,
            max_positions: 8,
            dropout: 0.0,
            extra_layer_norm: false,
        };
        let mut ck = Checkpoint::new(Model::init(cfg, 3).unwrap(), tok.spec().clone(), StageProvenance::default());
        ck.record(StageRecord {
            stage: Stage::Init,
            params_sha256: String::new(),
            config: serde_json::json!({"seed": 3}),
            languages: vec![],
            flags: vec![],
            metrics: BTreeMap::new(),
        });
        ck
    }

    #[test]
    fn save_load_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let ck = tiny();
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params_sha256(), ck.provenance.stages[0].params_sha256);
    }

    #[test]
    fn tampered_parameters_fail_verification() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let mut ck = tiny();
        ck.model.params.tensors_mut()[0].data[0] += 1e-12;
        ck.save(&p).unwrap();
        let e = Checkpoint::load(&p).unwrap_err();
        assert!(e.to_string().contains("does not match"), "{e}");
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn hash_depends_on_every_bit() {
        let ck = tiny();
        let mut p = ck.model.params.clone();
        assert_eq!(params_sha256(&p), ck.params_sha256());
        let x = &mut p.tensors_mut()[1].data[0];
        *x = f64::from_bits(x.to_bits() ^ 1);
        assert_ne!(params_sha256(&p), ck.params_sha256());
    }

    #[test]
    fn order_rules() {
        let ck = tiny();
        let lax = Strictness::default();
        assert!(check_order(&ck, Stage::AdaptivePretrain, lax).unwrap().is_none());
        let w = check_order(&ck, Stage::MetaTrain, lax).unwrap().unwrap();
        assert!(w.contains("english_finetune"));
        let strict = Strictness {
            strict: true,
            force: false,
        };
        assert_eq!(check_order(&ck, Stage::MetaTrain, strict).unwrap_err().exit_code(), 2);
        let forced = Strictness { strict: true, force: true };
        assert!(check_order(&ck, Stage::MetaTrain, forced).unwrap().is_some());
    }
}
