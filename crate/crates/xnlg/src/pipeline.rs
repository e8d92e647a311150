//! The pipeline stages behind each command.
//!
//! Layout under `out_dir`:
//!
//! ```text
//! data/                  synthetic benchmark (when `synth` runs)
//! clusters.json          cluster config
//! checkpoints/*.json     init, zp, enz, meta, ftz (+ meta/step-N.json)
//! logs/*.jsonl           per-step losses and the meta-training log
//! reports/               EvalReports (JSON and table) and generations
//! analysis/              tag-distance matrices (CSV and text)
//! effective_config.json  the config after command-line overrides
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xnlg_core::corpus::{
    build_multimonolang, denoising_pair, tag_example, tag_tokens, CharTokenizer, EncodedPair, Example, Split, Tokenizer,
};
use xnlg_core::eval::{self, mean_off_diagonal, render_matrix, source_budget, table, EvalReport, MetricResult, TokenizerRegistry};
use xnlg_core::langspace::{assign_unrepresented, cluster_languages, mean_cosine_distances, ClusterSet};
use xnlg_core::metalearn::{few_shot_adapt, meta_train_with, MetaLogEntry};
use xnlg_core::model::Model;
use xnlg_core::params::FreezeMask;
use xnlg_core::synth;
use xnlg_core::train::{mean_loss, train_with, StepReport};
use xnlg_core::LangCode;

use crate::checkpoint::{check_order, Checkpoint, Stage, StageProvenance, StageRecord, Strictness};
use crate::config::{Command, ModelRef, RunConfig};
use crate::error::{in_file, CliError, Result};
use crate::exec::Threads;
use crate::formats::{
    load_clusters, load_dataset, load_language_vectors, write_dataset, write_json, write_jsonl, write_text, JsonlWriter, MonoManifest,
    VectorFormat,
};

/// Everything a command needs.
pub struct Context {
    pub cfg: RunConfig,
    pub how: Strictness,
    pub exec: Threads,
    pub quiet: bool,
}

impl Context {
    pub fn new(cfg: RunConfig, how: Strictness) -> Self {
        let exec = cfg.threads.map(Threads::new).unwrap_or_default();
        Context {
            cfg,
            how,
            exec,
            quiet: false,
        }
    }

    pub fn quiet(mut self) -> Self {
        self.quiet = true;
        self
    }

    fn note(&self, msg: impl Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    /// Write the effective config next to the outputs.
    pub fn write_effective_config(&self) -> Result<()> {
        write_json(&self.cfg.out_dir.join("effective_config.json"), &self.cfg)
    }

    pub fn clusters(&self) -> Result<ClusterSet> {
        match &self.cfg.languages.clusters {
            Some(c) => {
                c.validate().map_err(|e| CliError::Config(e.to_string()))?;
                Ok(c.clone())
            }
            None => load_clusters(&self.cfg.clusters_path()),
        }
    }

    pub fn load_split(&self, split: Split, lang: &LangCode) -> Result<Vec<Example>> {
        let path = self.cfg.dataset_path(split, lang);
        Ok(load_dataset(&path, self.cfg.data.task, lang, split)?.examples)
    }

    fn load_checkpoint(&self, stage: Stage, expects: Stage) -> Result<(Checkpoint, Vec<String>)> {
        let ck = Checkpoint::load(&self.cfg.checkpoint_path(stage))?;
        let mut flags = Vec::new();
        if let Some(w) = check_order(&ck, expects, self.how)? {
            self.note(format!("warning: {w}"));
            flags.push("out_of_order".to_string());
        }
        Ok((ck, flags))
    }
}

/// Exclusive ownership of an output directory for one command.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
        let path = out_dir.join(".lock");
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                CliError::data(
                    &path,
                    "another run holds this output directory (remove the lock file if it is stale)",
                )
            } else {
                CliError::io(&path, e)
            }
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(RunLock { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    s.trim_matches('-').to_string()
}

fn record(
    stage: Stage,
    config: impl Serialize,
    languages: Vec<LangCode>,
    flags: Vec<String>,
    metrics: BTreeMap<String, f64>,
) -> StageRecord {
    StageRecord {
        stage,
        params_sha256: String::new(),
        config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
        languages,
        flags,
        metrics,
    }
}

/// Tag and tokenize supervised examples, capping sources and targets at the
/// model's positions.
fn encode_all(examples: &[Example], tok: &CharTokenizer, model: &Model) -> Result<Vec<EncodedPair>> {
    let budget = source_budget(model);
    let max_target = model.config.max_positions;
    examples
        .iter()
        .map(|e| {
            let mut p = tag_example(e, tok, budget)?;
            if p.target.len() > max_target {
                p.target.truncate(max_target - 1);
                p.target.push(tok.eos_id());
            }
            Ok(p)
        })
        .collect::<xnlg_core::Result<Vec<_>>>()
        .map_err(CliError::from)
}

fn list_languages(dir: &Path) -> Vec<LangCode> {
    let mut out = BTreeSet::new();
    for split in ["train", "valid", "test"] {
        if let Ok(entries) = fs::read_dir(dir.join(split)) {
            for e in entries.flatten() {
                let p = e.path();
                if p.extension().and_then(|x| x.to_str()) == Some("jsonl") {
                    if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                        out.insert(LangCode::from(stem));
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Generated benchmark description written next to the data.
#[derive(Debug, Serialize, Deserialize)]
pub struct SynthInfo {
    pub config: synth::SynthConfig,
    pub languages: Vec<synth::SynthLanguage>,
    pub true_clusters: Vec<Vec<LangCode>>,
}

pub fn cmd_synth(ctx: &Context) -> Result<PathBuf> {
    let scfg = ctx
        .cfg
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Config("the synth command needs a `synth` section".into()))?;
    let bench = synth::generate(scfg)?;
    let dir = ctx.cfg.data_dir();
    for (split, sets) in [
        (Split::Train, &bench.train),
        (Split::Valid, &bench.valid),
        (Split::Test, &bench.test),
    ] {
        for (lang, exs) in sets {
            write_dataset(&ctx.cfg.dataset_path(split, lang), exs)?;
        }
    }
    let mut langs = BTreeMap::new();
    let mut min_lines = usize::MAX;
    for (lang, lines) in &bench.mono {
        let rel = PathBuf::from(format!("{lang}.txt"));
        let mut text = lines.join("\n");
        text.push('\n');
        write_text(&dir.join("mono").join(&rel), &text)?;
        langs.insert(lang.clone(), rel);
        min_lines = min_lines.min(lines.len());
    }
    let held = (min_lines / 12).max(1);
    let manifest = MonoManifest {
        counts: xnlg_core::corpus::SplitCounts {
            train: min_lines.saturating_sub(2 * held),
            valid: held,
            test: held,
        },
        languages: langs,
    };
    write_json(&ctx.cfg.mono_manifest(), &manifest)?;
    let space = xnlg_core::langspace::LanguageSpace::from_records(bench.clustered().map(|l| (l.code.clone(), l.vector())))?;
    crate::formats::write_language_vectors(&dir.join("vectors.csv"), &space, VectorFormat::Csv)?;
    write_json(
        &dir.join("synth.json"),
        &SynthInfo {
            config: scfg.clone(),
            languages: bench.languages.clone(),
            true_clusters: bench.true_clusters(),
        },
    )?;
    ctx.note(format!(
        "synth: {} languages, {} clusters, data in {}",
        bench.languages.len(),
        scfg.clusters,
        dir.display()
    ));
    Ok(dir)
}

pub fn cmd_cluster(ctx: &Context) -> Result<ClusterSet> {
    let lc = &ctx.cfg.languages;
    let (set, report) = match &lc.clusters {
        Some(fixed) => {
            fixed.validate().map_err(|e| CliError::Config(e.to_string()))?;
            (fixed.clone(), String::from("fixed partition from the run config\n"))
        }
        None => {
            let path = ctx.cfg.vectors_path();
            let space = load_language_vectors(&path, VectorFormat::from_path(&path)?)?;
            if lc.k > space.len() {
                return Err(CliError::Config(format!(
                    "k = {} but only {} languages have vectors",
                    lc.k,
                    space.len()
                )));
            }
            let mut set = cluster_languages(&space, lc.k, lc.linkage)?.with_centroids(&space)?;
            for p in &lc.unrepresented {
                set = assign_unrepresented(set, p.lang.clone(), p.cluster).map_err(|e| CliError::Config(e.to_string()))?;
            }
            let mut report = format!("{} languages, k = {}, {:?} linkage\n", space.len(), lc.k, lc.linkage);
            for (i, c) in set.clusters.iter().enumerate() {
                report.push_str(&format!(
                    "cluster {i}: centroid {}\n",
                    c.centroid.as_ref().map_or("-", |l| l.as_str())
                ));
                for (m, d) in mean_cosine_distances(c, &space) {
                    match d {
                        Some(d) => report.push_str(&format!("  {m:<6} mean distance {d:.4}\n")),
                        None => report.push_str(&format!("  {m:<6} (no vector)\n")),
                    }
                }
            }
            (set, report)
        }
    };
    write_json(&ctx.cfg.clusters_path(), &set)?;
    write_text(&ctx.cfg.out_dir.join("clusters.txt"), &report)?;
    ctx.note(format!(
        "cluster: centroids {:?}",
        set.centroids().iter().map(LangCode::as_str).collect::<Vec<_>>()
    ));
    Ok(set)
}

#[derive(Serialize)]
struct LossLine {
    step: usize,
    loss: f64,
}

fn loss_logger(path: &Path) -> Result<(JsonlWriter, impl FnMut(&mut JsonlWriter, StepReport) -> Result<()>)> {
    let w = JsonlWriter::create(path)?;
    Ok((w, |w: &mut JsonlWriter, r: StepReport| {
        w.write(&LossLine {
            step: r.step,
            loss: r.loss,
        })
    }))
}

fn supervised(
    ctx: &Context,
    model: &Model,
    data: &[EncodedPair],
    freeze: &FreezeMask,
    cfg: &xnlg_core::train::TrainConfig,
    log: &Path,
) -> Result<xnlg_core::params::ParameterSet> {
    let loss = model.loss(ctx.cfg.label_smoothing)?;
    let trainable = model.trainable(freeze)?;
    let (mut w, mut write) = loss_logger(log)?;
    let mut io_err = None;
    let (params, _) = train_with(&ctx.exec, &loss, &model.params, data, &trainable, cfg, |r| {
        if io_err.is_none() {
            if let Err(e) = write(&mut w, r) {
                io_err = Some(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    w.finish()?;
    Ok(params)
}

fn held_out_loss(ctx: &Context, model: &Model, data: &[EncodedPair]) -> Result<Option<f64>> {
    if data.is_empty() {
        return Ok(None);
    }
    let loss = model.loss(ctx.cfg.label_smoothing)?;
    Ok(Some(mean_loss(&loss, &model.params, data, 64)?))
}

/// A fresh model and tokenizer covering every language in the data directory.
fn initialize(ctx: &Context, mono: &BTreeMap<LangCode, Vec<String>>) -> Result<Checkpoint> {
    let dir = ctx.cfg.data_dir();
    let mut langs: BTreeSet<LangCode> = list_languages(&dir).into_iter().collect();
    langs.extend(mono.keys().cloned());
    let mut texts: Vec<String> = mono.values().flatten().cloned().collect();
    for lang in &langs {
        for split in [Split::Train, Split::Valid, Split::Test] {
            if ctx.cfg.dataset_path(split, lang).exists() {
                for e in ctx.load_split(split, lang)? {
                    texts.push(e.source);
                    texts.push(e.target);
                }
            }
        }
    }
    let tok = CharTokenizer::fit(
        langs.iter().cloned().collect(),
        ctx.cfg.pretrain.sentinels,
        texts.iter().map(String::as_str),
    );
    let mcfg = ctx.cfg.model.config(tok.vocab_size());
    let model = Model::init(mcfg, ctx.cfg.stage_seed(Stage::Init)).map_err(|e| CliError::Config(e.to_string()))?;
    let mut ck = Checkpoint::new(model, tok.spec().clone(), StageProvenance::default());
    ck.record(record(
        Stage::Init,
        serde_json::json!({ "model": ctx.cfg.model, "seed": ctx.cfg.stage_seed(Stage::Init) }),
        langs.into_iter().collect(),
        Vec::new(),
        BTreeMap::from([("parameters".to_string(), ck.model.parameter_count() as f64)]),
    ));
    ck.save(&ctx.cfg.checkpoint_path(Stage::Init))?;
    Ok(ck)
}

pub fn cmd_pretrain(ctx: &Context) -> Result<Checkpoint> {
    let pc = &ctx.cfg.pretrain;
    let manifest_path = ctx.cfg.mono_manifest();
    let (manifest, lines) = MonoManifest::load(&manifest_path)?;
    let counts = pc.counts.unwrap_or(manifest.counts);
    let seed = ctx.cfg.stage_seed(Stage::AdaptivePretrain);
    let corpus = build_multimonolang(&lines, counts, seed).map_err(in_file(&manifest_path))?;
    let (mut ck, flags) = match &pc.init {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let mut flags = Vec::new();
            if let Some(w) = check_order(&ck, Stage::AdaptivePretrain, ctx.how)? {
                ctx.note(format!("warning: {w}"));
                flags.push("out_of_order".to_string());
            }
            (ck, flags)
        }
        None => (initialize(ctx, &lines)?, Vec::new()),
    };
    let tok = ck.tokenizer();
    let budget = source_budget(&ck.model);
    let max_target = ck.model.config.max_positions;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1CE);
    let mut corrupt = |exs: &[Example], views: usize| -> Result<(Vec<EncodedPair>, usize)> {
        let mut out = Vec::new();
        let mut dropped = 0;
        for _ in 0..views {
            for e in exs {
                let p = denoising_pair(&e.source, &e.lang, &tok, pc.corruption_rate, pc.mean_span, budget, &mut rng)?;
                if p.target.len() > max_target {
                    dropped += 1;
                } else {
                    out.push(p);
                }
            }
        }
        Ok((out, dropped))
    };
    let (train, dropped) = corrupt(&corpus.train, pc.views)?;
    let (valid, _) = corrupt(&corpus.valid, 1)?;
    if dropped > 0 {
        ctx.note(format!(
            "pretrain: dropped {dropped} pairs whose targets exceed the model's positions"
        ));
    }
    let before = held_out_loss(ctx, &ck.model, &valid)?;
    let params = supervised(
        ctx,
        &ck.model,
        &train,
        &FreezeMask::none(),
        &pc.optim.train_config(seed),
        &ctx.cfg.out_dir.join("logs/pretrain.jsonl"),
    )?;
    ck.model.params = params;
    let after = held_out_loss(ctx, &ck.model, &valid)?;
    let mut metrics = BTreeMap::from([
        ("steps".to_string(), pc.optim.steps as f64),
        ("train_pairs".to_string(), train.len() as f64),
    ]);
    if let (Some(b), Some(a)) = (before, after) {
        metrics.insert("valid_loss_before".into(), b);
        metrics.insert("valid_loss_after".into(), a);
        ctx.note(format!("pretrain: held-out denoising loss {b:.4} -> {a:.4}"));
    }
    ck.record(record(Stage::AdaptivePretrain, pc, lines.keys().cloned().collect(), flags, metrics));
    ck.save(&ctx.cfg.checkpoint_path(Stage::AdaptivePretrain))?;
    Ok(ck)
}

pub fn cmd_finetune(ctx: &Context) -> Result<Checkpoint> {
    let (mut ck, flags) = ctx.load_checkpoint(Stage::AdaptivePretrain, Stage::EnglishFinetune)?;
    let tok = ck.tokenizer();
    let pivot = ctx.cfg.data.pivot.clone();
    let train = encode_all(&ctx.load_split(Split::Train, &pivot)?, &tok, &ck.model)?;
    let valid = if ctx.cfg.dataset_path(Split::Valid, &pivot).exists() {
        encode_all(&ctx.load_split(Split::Valid, &pivot)?, &tok, &ck.model)?
    } else {
        Vec::new()
    };
    let before = held_out_loss(ctx, &ck.model, &valid)?;
    let fc = &ctx.cfg.finetune;
    ck.model.params = supervised(
        ctx,
        &ck.model,
        &train,
        &ctx.cfg.freeze,
        &fc.optim.train_config(ctx.cfg.stage_seed(Stage::EnglishFinetune)),
        &ctx.cfg.out_dir.join("logs/finetune.jsonl"),
    )?;
    let after = held_out_loss(ctx, &ck.model, &valid)?;
    let mut metrics = BTreeMap::from([("steps".to_string(), fc.optim.steps as f64)]);
    if let (Some(b), Some(a)) = (before, after) {
        metrics.insert("valid_loss_before".into(), b);
        metrics.insert("valid_loss_after".into(), a);
        ctx.note(format!("finetune: held-out {pivot} loss {b:.4} -> {a:.4}"));
    }
    let section = serde_json::json!({ "optim": fc.optim, "freeze": ctx.cfg.freeze, "label_smoothing": ctx.cfg.label_smoothing });
    ck.record(record(Stage::EnglishFinetune, section, vec![pivot], flags, metrics));
    ck.save(&ctx.cfg.checkpoint_path(Stage::EnglishFinetune))?;
    Ok(ck)
}

/// Meta-training languages and whether they leave the centroid set.
fn meta_languages(ctx: &Context) -> Result<(Vec<LangCode>, bool)> {
    let centroids = ctx.clusters()?.centroids();
    let langs = match &ctx.cfg.meta.languages {
        Some(l) => l.clone(),
        None => centroids.clone(),
    };
    if langs.is_empty() {
        return Err(CliError::Config("no meta-training languages (are cluster centroids set?)".into()));
    }
    let outside: Vec<String> = langs.iter().filter(|l| !centroids.contains(l)).map(|l| l.to_string()).collect();
    if !outside.is_empty() && !ctx.cfg.meta.ablation {
        return Err(CliError::Config(format!(
            "meta-training languages {outside:?} are not cluster centroids; set meta.ablation to run this anyway"
        )));
    }
    Ok((langs, !outside.is_empty()))
}

fn meta_sets(ctx: &Context, langs: &[LangCode], tok: &CharTokenizer, model: &Model) -> Result<BTreeMap<LangCode, Vec<EncodedPair>>> {
    langs
        .iter()
        .map(|l| Ok((l.clone(), encode_all(&ctx.load_split(ctx.cfg.meta.split, l)?, tok, model)?)))
        .collect()
}

pub fn cmd_meta_train(ctx: &Context) -> Result<Checkpoint> {
    let (mut ck, mut flags) = ctx.load_checkpoint(Stage::EnglishFinetune, Stage::MetaTrain)?;
    let (langs, ablation) = meta_languages(ctx)?;
    if ablation {
        flags.push("ablation".to_string());
    }
    let tok = ck.tokenizer();
    let sets = meta_sets(ctx, &langs, &tok, &ck.model)?;
    let ms = &ctx.cfg.meta;
    let loss = ck.model.loss(ctx.cfg.label_smoothing)?;
    let trainable = ck.model.trainable(&ctx.cfg.freeze)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.stage_seed(Stage::MetaTrain));
    let mut log = JsonlWriter::create(&ctx.cfg.out_dir.join("logs/meta_train.jsonl"))?;
    let mut losses = Vec::new();
    let inter_dir = ctx.cfg.out_dir.join("checkpoints/meta");
    if inter_dir.exists() {
        fs::remove_dir_all(&inter_dir).map_err(|e| CliError::io(&inter_dir, e))?;
    }
    let mut failure = None;
    let section = serde_json::to_value(ms).unwrap_or_default();
    let params = meta_train_with(
        &ctx.exec,
        &loss,
        &ck.model.params,
        &sets,
        &ms.cfg,
        &trainable,
        &mut rng,
        |e: &MetaLogEntry, p| {
            losses.push(e.meta_loss);
            let res = log.write(e).and_then(|_| match ms.checkpoint_every {
                Some(k) if (e.step + 1).is_multiple_of(k) => {
                    let mut snap = ck.clone();
                    snap.model.params = p.clone();
                    let metrics = BTreeMap::from([("step".to_string(), (e.step + 1) as f64)]);
                    snap.record(record(
                        Stage::MetaTrain,
                        &section,
                        langs.clone(),
                        vec!["intermediate".into()],
                        metrics,
                    ));
                    snap.save(&inter_dir.join(format!("step-{:06}.json", e.step + 1)))
                }
                _ => Ok(()),
            });
            if let Err(err) = res {
                let msg = err.to_string();
                failure = Some(err);
                return Err(xnlg_core::Error::InvalidArgument(msg));
            }
            Ok(())
        },
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let params = params?;
    log.finish()?;
    ck.model.params = params;
    let mut metrics = BTreeMap::from([("steps".to_string(), losses.len() as f64)]);
    if let (Some(f), Some(l)) = (losses.first(), losses.last()) {
        metrics.insert("meta_loss_first".into(), *f);
        metrics.insert("meta_loss_last".into(), *l);
    }
    ctx.note(format!(
        "meta-train: {} meta-steps on {:?}",
        losses.len(),
        langs.iter().map(LangCode::as_str).collect::<Vec<_>>()
    ));
    ck.record(record(Stage::MetaTrain, &section, langs, flags, metrics));
    ck.save(&ctx.cfg.checkpoint_path(Stage::MetaTrain))?;
    Ok(ck)
}

pub fn cmd_baseline_ft(ctx: &Context) -> Result<Checkpoint> {
    let (mut ck, mut flags) = ctx.load_checkpoint(Stage::EnglishFinetune, Stage::BaselineFt)?;
    let (langs, ablation) = meta_languages(ctx)?;
    if ablation {
        flags.push("ablation".to_string());
    }
    let tok = ck.tokenizer();
    let pooled: Vec<EncodedPair> = meta_sets(ctx, &langs, &tok, &ck.model)?.into_values().flatten().collect();
    let bs = &ctx.cfg.baseline;
    let mut optim = bs.optim.clone();
    if bs.match_meta_budget {
        let m = &ctx.cfg.meta.cfg;
        optim.steps = m.epochs * m.iterations_per_epoch(pooled.len());
        optim.batch_size = m.tasks_per_meta_batch * m.batch_size;
    }
    ck.model.params = supervised(
        ctx,
        &ck.model,
        &pooled,
        &ctx.cfg.freeze,
        &optim.train_config(ctx.cfg.stage_seed(Stage::BaselineFt)),
        &ctx.cfg.out_dir.join("logs/baseline_ft.jsonl"),
    )?;
    ctx.note(format!("baseline-ft: {} steps of {} examples", optim.steps, optim.batch_size));
    let metrics = BTreeMap::from([
        ("steps".to_string(), optim.steps as f64),
        ("batch_size".to_string(), optim.batch_size as f64),
    ]);
    ck.record(record(Stage::BaselineFt, &optim, langs, flags, metrics));
    ck.save(&ctx.cfg.checkpoint_path(Stage::BaselineFt))?;
    Ok(ck)
}

/// Checkpoints named in the config, or the pipeline's own that exist.
fn models_to_score(ctx: &Context, explicit: &Option<Vec<ModelRef>>) -> Result<Vec<ModelRef>> {
    match explicit {
        Some(m) => Ok(m.clone()),
        None => {
            let found: Vec<ModelRef> = ctx.cfg.default_models().into_iter().filter(|m| m.checkpoint.exists()).collect();
            if found.is_empty() {
                return Err(CliError::data(ctx.cfg.out_dir.join("checkpoints"), "no checkpoints to score"));
            }
            Ok(found)
        }
    }
}

fn targets(ctx: &Context, clusters: &ClusterSet) -> Vec<LangCode> {
    match &ctx.cfg.eval.targets {
        Some(t) => t.clone(),
        None => clusters.non_centroids().into_iter().filter(|l| *l != ctx.cfg.data.pivot).collect(),
    }
}

/// Languages a checkpoint was adapted on beyond the pivot.
fn trained_languages(p: &StageProvenance) -> Vec<LangCode> {
    let mut out: Vec<LangCode> = p
        .stages
        .iter()
        .filter(|s| matches!(s.stage, Stage::MetaTrain | Stage::BaselineFt))
        .flat_map(|s| s.languages.iter().cloned())
        .collect();
    out.sort();
    out.dedup();
    out
}

fn score_checkpoint(
    ctx: &Context,
    name: &str,
    ck: &Checkpoint,
    sets: &BTreeMap<LangCode, Vec<Example>>,
) -> Result<(EvalReport, Vec<eval::Generation>)> {
    let ec = &ctx.cfg.eval;
    let registry = TokenizerRegistry::default().with_lowercase(ec.lowercase);
    let tag = format!("{name} [{}] sha256:{}", ck.provenance.chain(), &ck.params_sha256()[..16]);
    let seen = trained_languages(&ck.provenance);
    Ok(eval::zero_shot_evaluate_with(
        &ctx.exec,
        &ck.model,
        &ck.tokenizer(),
        sets,
        &ec.decode,
        ec.metric,
        &registry,
        &seen,
        ec.allow_seen,
        &tag,
    )?)
}

/// Fine-tune `ck` on the first `shots` validation examples of `lang`. The
/// adapted model has seen `lang`, so scoring it on that language is no longer
/// zero-shot.
pub fn few_shot(ctx: &Context, ck: &Checkpoint, lang: &LangCode, shots: usize, steps: usize, lr: f64) -> Result<Model> {
    let mut examples = ctx.load_split(Split::Valid, lang)?;
    if examples.len() < shots {
        return Err(CliError::data(
            ctx.cfg.dataset_path(Split::Valid, lang),
            format!("{} validation examples, {shots} requested", examples.len()),
        ));
    }
    examples.truncate(shots);
    let support = encode_all(&examples, &ck.tokenizer(), &ck.model)?;
    let loss = ck.model.loss(ctx.cfg.label_smoothing)?;
    let trainable = ck.model.trainable(&ctx.cfg.freeze)?;
    let params = few_shot_adapt(&loss, &ck.model.params, &support, steps, lr, &trainable)?;
    Ok(Model::from_parts(ck.model.config.clone(), params)?)
}

pub fn cmd_evaluate(ctx: &Context) -> Result<Vec<(String, EvalReport)>> {
    let clusters = ctx.clusters()?;
    let langs = targets(ctx, &clusters);
    if langs.is_empty() {
        return Err(CliError::Config("no target languages to evaluate".into()));
    }
    let sets: BTreeMap<LangCode, Vec<Example>> = langs
        .iter()
        .map(|l| Ok((l.clone(), ctx.load_split(Split::Test, l)?)))
        .collect::<Result<_>>()?;
    let dir = ctx.cfg.out_dir.join("reports");
    let mut out = Vec::new();
    for m in models_to_score(ctx, &ctx.cfg.eval.models)? {
        let ck = Checkpoint::load(&m.checkpoint)?;
        let (report, gens) = score_checkpoint(ctx, &m.name, &ck, &sets)?;
        let s = slug(&m.name);
        write_json(&dir.join(format!("{s}.json")), &report)?;
        write_text(&dir.join(format!("{s}.txt")), &report.to_table())?;
        write_jsonl(&dir.join(format!("{s}.generations.jsonl")), &gens)?;
        out.push((m.name.clone(), report));
    }
    if let Some(k) = ctx.cfg.eval.best_k {
        let report = best_k_report(ctx, k, &sets)?;
        write_json(&dir.join(format!("meta-best{k}.json")), &report)?;
        out.push((format!("Meta best-{k}"), report));
    }
    let rows: Vec<(&str, &EvalReport)> = out.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let t = table(&rows);
    write_text(&dir.join("table.txt"), &t)?;
    ctx.note(t.trim_end());
    Ok(out)
}

/// Per-language mean over the `k` meta-training checkpoints with the best
/// average score.
fn best_k_report(ctx: &Context, k: usize, sets: &BTreeMap<LangCode, Vec<Example>>) -> Result<EvalReport> {
    let inter = ctx.cfg.out_dir.join("checkpoints/meta");
    let mut paths: Vec<PathBuf> = fs::read_dir(&inter)
        .map(|rd| {
            rd.flatten()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect()
        })
        .unwrap_or_default();
    paths.sort();
    let last = ctx.cfg.checkpoint_path(Stage::MetaTrain);
    if last.exists() {
        paths.push(last);
    }
    if paths.len() < k {
        return Err(CliError::Config(format!(
            "--best-k {k} needs at least {k} meta checkpoints, found {} (set meta.checkpoint_every)",
            paths.len()
        )));
    }
    let mut scored = Vec::new();
    for p in &paths {
        let ck = Checkpoint::load(p)?;
        scored.push(score_checkpoint(ctx, "meta", &ck, sets)?.0);
    }
    // Stable: earlier checkpoints win ties.
    scored.sort_by(|a, b| b.average.partial_cmp(&a.average).unwrap_or(std::cmp::Ordering::Equal));
    let best = &scored[..k];
    let mut per_lang = BTreeMap::new();
    for lang in sets.keys() {
        let rs: Vec<&MetricResult> = best.iter().map(|r| &r.per_lang[lang]).collect();
        let mean = |f: &dyn Fn(&MetricResult) -> Option<f64>| -> Option<f64> {
            let v: Option<Vec<f64>> = rs.iter().map(|r| f(r)).collect();
            v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        per_lang.insert(
            lang.clone(),
            MetricResult {
                name: ctx.cfg.eval.metric,
                score: mean(&|r| Some(r.score)).unwrap_or(0.0),
                precision: mean(&|r| r.precision),
                recall: mean(&|r| r.recall),
                n: rs[0].n,
            },
        );
    }
    Ok(EvalReport::new(
        ctx.cfg.eval.metric,
        per_lang,
        ctx.cfg.eval.decode,
        format!("Meta best {k} of {} checkpoints", paths.len()),
    )?)
}

/// One model's tag-distance analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagAnalysis {
    pub name: String,
    pub languages: Vec<LangCode>,
    pub matrix: Vec<Vec<f64>>,
    pub mean_off_diagonal: f64,
}

pub fn cmd_analyze(ctx: &Context) -> Result<Vec<TagAnalysis>> {
    let langs = match &ctx.cfg.analyze.languages {
        Some(l) => l.clone(),
        None => {
            let mut l: Vec<LangCode> = ctx.clusters()?.clusters.iter().flat_map(|c| c.members.iter().cloned()).collect();
            l.sort();
            l
        }
    };
    let mut probe_text = BTreeMap::new();
    for l in &langs {
        let exs = ctx.load_split(Split::Test, l)?;
        probe_text.insert(l.clone(), exs.into_iter().take(ctx.cfg.analyze.probes).collect::<Vec<_>>());
    }
    let dir = ctx.cfg.out_dir.join("analysis");
    let mut out = Vec::new();
    for m in models_to_score(ctx, &ctx.cfg.analyze.models)? {
        let ck = Checkpoint::load(&m.checkpoint)?;
        let tok = ck.tokenizer();
        let budget = source_budget(&ck.model);
        let mut probes = BTreeMap::new();
        for (l, exs) in &probe_text {
            let seqs = exs
                .iter()
                .map(|e| tag_tokens(&tok.encode(&e.source), l, &tok, budget))
                .collect::<xnlg_core::Result<Vec<_>>>()?;
            probes.insert(l.clone(), seqs);
        }
        let (order, matrix) = eval::tag_distance_matrix(&ck.model, &probes)?;
        let mean = mean_off_diagonal(&matrix);
        let s = slug(&m.name);
        let mut csv = String::from("lang");
        for l in &order {
            csv.push(',');
            csv.push_str(l.as_str());
        }
        csv.push('\n');
        for (l, row) in order.iter().zip(&matrix) {
            csv.push_str(l.as_str());
            for v in row {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
        write_text(&dir.join(format!("{s}.csv")), &csv)?;
        write_text(
            &dir.join(format!("{s}.txt")),
            &format!(
                "{}\n{}mean off-diagonal distance: {mean:.6}\n",
                m.name,
                render_matrix(&order, &matrix)
            ),
        )?;
        ctx.note(format!("analyze: {} mean tag distance {mean:.4}", m.name));
        out.push(TagAnalysis {
            name: m.name.clone(),
            languages: order,
            matrix,
            mean_off_diagonal: mean,
        });
    }
    write_json(
        &dir.join("summary.json"),
        &out.iter()
            .map(|a| (a.name.clone(), a.mean_off_diagonal))
            .collect::<BTreeMap<_, _>>(),
    )?;
    Ok(out)
}

/// Outputs of a full `run`.
#[derive(Debug, Default)]
pub struct RunOutputs {
    pub clusters: Option<ClusterSet>,
    pub reports: Vec<(String, EvalReport)>,
    pub analysis: Vec<TagAnalysis>,
}

pub fn execute(ctx: &Context, cmd: Command, out: &mut RunOutputs) -> Result<()> {
    match cmd {
        Command::Synth => {
            cmd_synth(ctx)?;
        }
        Command::Cluster => out.clusters = Some(cmd_cluster(ctx)?),
        Command::Pretrain => {
            cmd_pretrain(ctx)?;
        }
        Command::Finetune => {
            cmd_finetune(ctx)?;
        }
        Command::MetaTrain => {
            cmd_meta_train(ctx)?;
        }
        Command::BaselineFt => {
            cmd_baseline_ft(ctx)?;
        }
        Command::Evaluate => out.reports = cmd_evaluate(ctx)?,
        Command::Analyze => out.analysis = cmd_analyze(ctx)?,
    }
    Ok(())
}

/// Every configured stage in order, under one lock.
pub fn run(ctx: &Context) -> Result<RunOutputs> {
    let _lock = RunLock::acquire(&ctx.cfg.out_dir)?;
    ctx.write_effective_config()?;
    let mut out = RunOutputs::default();
    for cmd in &ctx.cfg.stages {
        execute(ctx, *cmd, &mut out)?;
    }
    Ok(out)
}
