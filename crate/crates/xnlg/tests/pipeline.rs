mod common;

use serde_json::json;
use xnlg::checkpoint::{Checkpoint, Stage, Strictness};
use xnlg::config::{Command, RunConfig};
use xnlg::pipeline::{self, cmd_evaluate, execute, RunOutputs};
use xnlg_core::params::bitwise_eq;
use xnlg_core::LangCode;

fn load(ctx: &pipeline::Context, stage: Stage) -> Checkpoint {
    Checkpoint::load(&ctx.cfg.checkpoint_path(stage)).unwrap()
}

#[test]
fn full_run_outputs_and_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny(dir.path());
    cfg["meta"]["checkpoint_every"] = json!(1);
    cfg["eval"]["best_k"] = json!(2);
    let ctx = common::context(
        &cfg,
        Strictness {
            strict: true,
            force: false,
        },
    );
    let out = pipeline::run(&ctx).unwrap();

    // Targets default to the non-centroids; the pivot is never a target.
    let held: Vec<LangCode> = ["ab", "bb", "cb"].map(LangCode::from).to_vec();
    assert_eq!(
        out.clusters.as_ref().unwrap().centroids(),
        ["aa", "ba", "ca"].map(LangCode::from).to_vec()
    );
    let names: Vec<&str> = out.reports.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["EnZ", "Meta", "FTZ", "Meta best-2"]);
    for (_, r) in &out.reports {
        assert_eq!(r.per_lang.keys().cloned().collect::<Vec<_>>(), held);
        assert!(!r.model_provenance.contains('/'), "{}", r.model_provenance);
    }
    for f in [
        "reports/table.txt",
        "reports/meta.generations.jsonl",
        "analysis/meta.csv",
        "analysis/summary.json",
        "logs/meta_train.jsonl",
        "clusters.txt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(out.analysis.len(), 3);

    // Embeddings and decoder never move after pre-training.
    let zp = load(&ctx, Stage::AdaptivePretrain);
    for stage in [Stage::EnglishFinetune, Stage::MetaTrain, Stage::BaselineFt] {
        let ck = load(&ctx, stage);
        for (name, t) in zp.model.params.iter() {
            let same = bitwise_eq(&t.data, &ck.model.params.get(name).unwrap().data);
            if name == "token_embeddings" || name.starts_with("decoder.") {
                assert!(same, "{stage}: {name}");
            }
        }
        assert!(!ck.model.params.changed_tensors(&zp.model.params).is_empty());
    }

    // Provenance chains and the baseline's budget.
    let meta = load(&ctx, Stage::MetaTrain);
    let ftz = load(&ctx, Stage::BaselineFt);
    assert_eq!(
        meta.provenance.chain(),
        "init -> adaptive_pretrain -> english_finetune -> meta_train"
    );
    assert_eq!(ftz.provenance.last().unwrap().stage, Stage::BaselineFt);
    let meta_steps = meta.provenance.last().unwrap().metrics["steps"];
    let m = &ctx.cfg.meta.cfg;
    assert_eq!(ftz.provenance.last().unwrap().metrics["steps"], meta_steps);
    assert_eq!(
        ftz.provenance.last().unwrap().metrics["batch_size"],
        (m.tasks_per_meta_batch * m.batch_size) as f64
    );
    assert_eq!(
        meta.provenance.meta_train_languages(),
        ["aa", "ba", "ca"].map(LangCode::from).to_vec()
    );
    let log = std::fs::read_to_string(dir.path().join("logs/meta_train.jsonl")).unwrap();
    assert_eq!(log.lines().count() as f64, meta_steps);

    // The effective config replays the run.
    let replay = RunConfig::load(&dir.path().join("effective_config.json")).unwrap();
    assert_eq!(replay, ctx.cfg);
}

#[test]
fn zero_step_stages_are_no_ops() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny(dir.path());
    cfg["pretrain"]["steps"] = json!(0);
    cfg["finetune"]["steps"] = json!(0);
    cfg["meta"]["epochs"] = json!(0);
    let ctx = common::context(&cfg, Strictness::default());
    let mut out = RunOutputs::default();
    for cmd in [
        Command::Synth,
        Command::Cluster,
        Command::Pretrain,
        Command::Finetune,
        Command::MetaTrain,
    ] {
        execute(&ctx, cmd, &mut out).unwrap();
    }
    let init = load(&ctx, Stage::Init).model.params;
    assert_eq!(load(&ctx, Stage::AdaptivePretrain).model.params, init);
    assert_eq!(load(&ctx, Stage::EnglishFinetune).model.params, init);
    assert_eq!(load(&ctx, Stage::MetaTrain).model.params, init);
}

#[test]
fn training_stages_reduce_held_out_loss() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny(dir.path());
    cfg["pretrain"]["steps"] = json!(500);
    cfg["finetune"]["steps"] = json!(200);
    let ctx = common::context(&cfg, Strictness::default());
    let mut out = RunOutputs::default();
    for cmd in [Command::Synth, Command::Cluster, Command::Pretrain, Command::Finetune] {
        execute(&ctx, cmd, &mut out).unwrap();
    }
    for stage in [Stage::AdaptivePretrain, Stage::EnglishFinetune] {
        let m = load(&ctx, stage).provenance.last().unwrap().metrics.clone();
        assert!(m["valid_loss_after"] < m["valid_loss_before"], "{stage}: {m:?}");
    }
}

#[test]
fn non_centroid_meta_languages_need_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny(dir.path());
    cfg["stages"] = json!(["synth", "cluster", "pretrain", "finetune"]);
    pipeline::run(&common::context(&cfg, Strictness::default())).unwrap();

    cfg["meta"]["languages"] = json!(["aa", "ab"]);
    let ctx = common::context(&cfg, Strictness::default());
    let e = execute(&ctx, Command::MetaTrain, &mut RunOutputs::default()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("ab"), "{e}");

    cfg["meta"]["ablation"] = json!(true);
    let ctx = common::context(&cfg, Strictness::default());
    execute(&ctx, Command::MetaTrain, &mut RunOutputs::default()).unwrap();
    let rec = load(&ctx, Stage::MetaTrain).provenance.last().unwrap().clone();
    assert_eq!(rec.flags, vec!["ablation".to_string()]);
    assert_eq!(rec.languages, ["aa", "ab"].map(LangCode::from).to_vec());

    // Scoring that checkpoint on ab would leak its training data.
    let e = cmd_evaluate(&ctx).unwrap_err();
    assert_eq!(e.exit_code(), 5);
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        pipeline::cmd_synth(&common::context(&common::tiny(d.path()), Strictness::default())).unwrap();
    }
    for f in [
        "train/ab.jsonl",
        "test/en.jsonl",
        "mono/ca.txt",
        "mono/manifest.json",
        "vectors.csv",
        "synth.json",
    ] {
        assert_eq!(
            std::fs::read(a.path().join("data").join(f)).unwrap(),
            std::fs::read(b.path().join("data").join(f)).unwrap(),
            "{f}"
        );
    }
}
