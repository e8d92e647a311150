//! Declarative run configuration.
//!
//! One JSON file with a section per stage. Relative paths resolve against
//! the config file's directory; [`RunConfig::resolve`] rewrites them as
//! absolute so the effective config written next to the outputs replays the
//! run from anywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xnlg_core::corpus::{Split, SplitCounts, Task};
use xnlg_core::eval::Metric;
use xnlg_core::langspace::{ClusterSet, Linkage};
use xnlg_core::metalearn::MetaConfig;
use xnlg_core::model::{DecodeConfig, ModelConfig};
use xnlg_core::optim::OptimizerKind;
use xnlg_core::params::FreezeMask;
use xnlg_core::synth::SynthConfig;
use xnlg_core::train::TrainConfig;
use xnlg_core::LangCode;

use crate::checkpoint::Stage;
use crate::error::{CliError, Result};
use crate::formats::read_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Synth,
    Cluster,
    Pretrain,
    Finetune,
    MetaTrain,
    BaselineFt,
    Evaluate,
    Analyze,
}

impl Command {
    pub const PIPELINE: [Command; 8] = [
        Command::Synth,
        Command::Cluster,
        Command::Pretrain,
        Command::Finetune,
        Command::MetaTrain,
        Command::BaselineFt,
        Command::Evaluate,
        Command::Analyze,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; results do not depend on this.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Commands executed by `run`, in order.
    #[serde(default = "default_stages")]
    pub stages: Vec<Command>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub languages: LanguagesConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSection,
    /// Frozen during English fine-tuning, meta-training and the baseline.
    #[serde(default = "FreezeMask::embeddings_and_decoder")]
    pub freeze: FreezeMask,
    #[serde(default = "default_smoothing")]
    pub label_smoothing: f64,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub meta: MetaSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
}

fn default_stages() -> Vec<Command> {
    Command::PIPELINE.to_vec()
}

fn default_smoothing() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub lang: LangCode,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguagesConfig {
    /// CSV or JSONL vector file. Defaults to the synthetic benchmark's.
    pub vectors: Option<PathBuf>,
    pub k: usize,
    pub linkage: Linkage,
    /// Languages without vectors, placed by hand.
    pub unrepresented: Vec<Placement>,
    /// A fixed partition that replaces clustering.
    pub clusters: Option<ClusterSet>,
}

impl Default for LanguagesConfig {
    fn default() -> Self {
        LanguagesConfig {
            vectors: None,
            k: 3,
            linkage: Linkage::Average,
            unrepresented: Vec::new(),
            clusters: None,
        }
    }
}

/// Datasets live at `dir/{train,valid,test}/<lang>.jsonl`; the monolingual
/// manifest at `dir/mono/manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Defaults to `out_dir/data`, where `synth` writes.
    pub dir: Option<PathBuf>,
    pub task: Task,
    /// The high-resource fine-tuning language.
    pub pivot: LangCode,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            task: Task::Summarization,
            pivot: LangCode::from("en"),
        }
    }
}

/// Model dimensions; the vocabulary size comes from the tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub extra_layer_norm: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::desk(1);
        ModelSection {
            d_model: d.d_model,
            n_layers: d.n_layers,
            n_heads: d.n_heads,
            d_ff: d.d_ff,
            // Room for the default 100-token decode.
            max_positions: 128,
            dropout: d.dropout,
            extra_layer_norm: d.extra_layer_norm,
        }
    }
}

impl ModelSection {
    pub fn config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_positions: self.max_positions,
            dropout: self.dropout,
            extra_layer_norm: self.extra_layer_norm,
        }
    }
}

/// Optimizer settings for a supervised stage. The data order seed is derived
/// from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Optim {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
}

impl Default for Optim {
    fn default() -> Self {
        Optim {
            steps: 1000,
            batch_size: 16,
            lr: 1e-3,
            optimizer: OptimizerKind::AdamW,
            weight_decay: 0.0,
        }
    }
}

impl Optim {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            optimizer: self.optimizer,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    #[serde(flatten)]
    pub optim: Optim,
    pub corruption_rate: f64,
    pub mean_span: f64,
    pub sentinels: usize,
    /// Independently corrupted copies of each training line.
    pub views: usize,
    /// Per-language sample counts; defaults to the manifest's.
    pub counts: Option<SplitCounts>,
    /// Start from this checkpoint instead of a fresh initialization.
    pub init: Option<PathBuf>,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            optim: Optim {
                steps: 2000,
                lr: 3e-3,
                ..Optim::default()
            },
            corruption_rate: 0.15,
            mean_span: 3.0,
            sentinels: 8,
            views: 1,
            counts: None,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneSection {
    #[serde(flatten)]
    pub optim: Optim,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            optim: Optim {
                steps: 1000,
                lr: 3e-3,
                ..Optim::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaSection {
    #[serde(flatten)]
    pub cfg: MetaConfig,
    /// Meta-training languages; defaults to the cluster centroids.
    pub languages: Option<Vec<LangCode>>,
    /// Permit languages outside the centroid set.
    pub ablation: bool,
    /// Which split of each language feeds meta-training.
    pub split: Split,
    /// Save an intermediate checkpoint every this many meta-steps.
    pub checkpoint_every: Option<usize>,
}

impl Default for MetaSection {
    fn default() -> Self {
        MetaSection {
            cfg: MetaConfig::default(),
            languages: None,
            ablation: false,
            split: Split::Valid,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineSection {
    #[serde(flatten)]
    pub optim: Optim,
    /// Use meta-training's step count and examples per step instead of
    /// `steps` and `batch_size`.
    pub match_meta_budget: bool,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            optim: Optim::default(),
            match_meta_budget: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    pub name: String,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metric: Metric,
    pub decode: DecodeConfig,
    /// Defaults to every clustered language that is not a centroid.
    pub targets: Option<Vec<LangCode>>,
    /// Evaluate on languages seen in meta-training anyway.
    pub allow_seen: bool,
    pub lowercase: bool,
    /// Checkpoints to score; defaults to the pipeline's EnZ, Meta and FTZ.
    pub models: Option<Vec<ModelRef>>,
    /// Average the best `k` meta-training checkpoints.
    pub best_k: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            metric: Metric::RougeL,
            decode: DecodeConfig::default(),
            targets: None,
            allow_seen: false,
            lowercase: false,
            models: None,
            best_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    /// Test inputs per language averaged into each tag representation.
    pub probes: usize,
    /// Defaults to every clustered language.
    pub languages: Option<Vec<LangCode>>,
    pub models: Option<Vec<ModelRef>>,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection {
            probes: 16,
            languages: None,
            models: None,
        }
    }
}

impl RunConfig {
    /// Parse, resolve relative paths against the file's directory and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_json(path).map_err(|e| CliError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = cfg.resolve(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg = cfg.resolve(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Make every path absolute relative to `base`.
    pub fn resolve(mut self, base: &Path) -> Result<Self> {
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        let base = std::path::absolute(base).map_err(|e| CliError::io(base, e))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        if let Some(p) = self.languages.vectors.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.pretrain.init.as_mut() {
            fix(p);
        }
        for m in self.eval.models.iter_mut().chain(self.analyze.models.iter_mut()).flatten() {
            fix(&mut m.checkpoint);
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.languages.k == 0 {
            return bad("languages.k must be positive".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if let Some(s) = &self.synth {
            s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.model.config(64).validate().map_err(|e| CliError::Config(e.to_string()))?;
        // The stage trainers reuse one objective for every step, so a dropout
        // mask would be fixed for the whole run.
        if self.model.dropout != 0.0 {
            return bad("model.dropout is not supported by the pipeline stages; use the library objective directly".into());
        }
        self.meta.cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.eval.decode.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.eval.decode.max_len + 1 > self.model.max_positions {
            return bad(format!(
                "eval.decode.max_len {} does not fit model.max_positions {}",
                self.eval.decode.max_len, self.model.max_positions
            ));
        }
        let p = &self.pretrain;
        if !(p.corruption_rate > 0.0 && p.corruption_rate < 1.0) || p.mean_span < 1.0 || p.sentinels == 0 || p.views == 0 {
            return bad("pretrain needs 0 < corruption_rate < 1, mean_span >= 1, sentinels >= 1, views >= 1".into());
        }
        for (name, o) in [
            ("pretrain", &self.pretrain.optim),
            ("finetune", &self.finetune.optim),
            ("baseline", &self.baseline.optim),
        ] {
            if o.batch_size == 0 || o.lr.is_nan() || o.lr < 0.0 {
                return bad(format!("{name}: batch_size must be positive and lr non-negative"));
            }
        }
        if self.analyze.probes == 0 {
            return bad("analyze.probes must be positive".into());
        }
        if self.eval.best_k == Some(0) {
            return bad("eval.best_k must be positive".into());
        }
        if self.meta.checkpoint_every == Some(0) {
            return bad("meta.checkpoint_every must be positive".into());
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data.dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn dataset_path(&self, split: Split, lang: &LangCode) -> PathBuf {
        self.data_dir().join(split.to_string()).join(format!("{lang}.jsonl"))
    }

    pub fn mono_manifest(&self) -> PathBuf {
        self.data_dir().join("mono").join("manifest.json")
    }

    pub fn vectors_path(&self) -> PathBuf {
        self.languages
            .vectors
            .clone()
            .unwrap_or_else(|| self.data_dir().join("vectors.csv"))
    }

    pub fn clusters_path(&self) -> PathBuf {
        self.out_dir.join("clusters.json")
    }

    pub fn checkpoint_path(&self, stage: Stage) -> PathBuf {
        let name = match stage {
            Stage::Init => "init",
            Stage::AdaptivePretrain => "zp",
            Stage::EnglishFinetune => "enz",
            Stage::MetaTrain => "meta",
            Stage::BaselineFt => "ftz",
        };
        self.out_dir.join("checkpoints").join(format!("{name}.json"))
    }

    /// Independent seed per stage, derived from the run seed.
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        let salt = match stage {
            Stage::Init => 0x11,
            Stage::AdaptivePretrain => 0x22,
            Stage::EnglishFinetune => 0x33,
            Stage::MetaTrain => 0x44,
            Stage::BaselineFt => 0x55,
        };
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
    }

    /// Models scored by `evaluate` and `analyze` unless listed explicitly.
    pub fn default_models(&self) -> Vec<ModelRef> {
        [
            ("EnZ", Stage::EnglishFinetune),
            ("Meta", Stage::MetaTrain),
            ("FTZ", Stage::BaselineFt),
        ]
        .into_iter()
        .map(|(n, s)| ModelRef {
            name: n.to_string(),
            checkpoint: self.checkpoint_path(s),
        })
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 7, "out_dir": "run"}"#, Path::new("/tmp/x")).unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x/run"));
        assert_eq!(cfg.meta.cfg, MetaConfig::default());
        assert_eq!(cfg.meta.cfg.alpha, 1e-4);
        assert_eq!(cfg.meta.cfg.beta, 1e-5);
        assert_eq!(cfg.meta.cfg.m, 2);
        assert_eq!(cfg.meta.cfg.batch_size, 8);
        assert_eq!(cfg.meta.cfg.epochs, 10);
        assert_eq!(cfg.eval.decode.beam_size, 4);
        assert_eq!(cfg.eval.decode.min_len, 1);
        assert_eq!(cfg.languages.k, 3);
        assert_eq!(cfg.freeze, FreezeMask::embeddings_and_decoder());
        assert_eq!(cfg.stages, Command::PIPELINE.to_vec());
    }

    #[test]
    fn seed_is_required_and_unknown_fields_rejected() {
        let e = RunConfig::from_json(r#"{"out_dir": "run"}"#, Path::new("/tmp")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = RunConfig::from_json(r#"{"seed": 1, "out_dir": "run", "modle": {}}"#, Path::new("/tmp")).unwrap_err();
        assert!(e.to_string().contains("modle"), "{e}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for body in [
            r#"{"seed": 1, "out_dir": "r", "model": {"d_model": 30, "n_heads": 4}}"#,
            r#"{"seed": 1, "out_dir": "r", "meta": {"m": 0}}"#,
            r#"{"seed": 1, "out_dir": "r", "label_smoothing": 1.0}"#,
            r#"{"seed": 1, "out_dir": "r", "eval": {"decode": {"beam_size": 4, "max_len": 100, "min_len": 1}}, "model": {"max_positions": 32}}"#,
        ] {
            let e = RunConfig::from_json(body, Path::new("/tmp")).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{body}: {e}");
        }
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = RunConfig::from_json(
            r#"{"seed": 3, "out_dir": "r", "synth": {"meanings": 6}, "meta": {"alpha": 0.01, "order": "first"}}"#,
            Path::new("/tmp/base"),
        )
        .unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&text, Path::new("/elsewhere")).unwrap();
        assert_eq!(back, cfg);
    }
}
