#![allow(dead_code)]

use std::path::Path;

use serde_json::{json, Value};
use xnlg::checkpoint::Strictness;
use xnlg::config::RunConfig;
use xnlg::pipeline::Context;

/// A pipeline small enough to run in a second or two.
pub fn tiny(out_dir: &Path) -> Value {
    json!({
        "seed": 5,
        "out_dir": out_dir,
        "threads": 2,
        "synth": {"train": 40, "valid": 24, "test": 16, "mono": 60, "meanings": 6, "min_len": 2, "max_len": 4},
        "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 16, "max_positions": 12},
        "pretrain": {"steps": 30, "batch_size": 8, "lr": 0.003, "corruption_rate": 0.3, "mean_span": 2.0, "sentinels": 4},
        "finetune": {"steps": 30, "batch_size": 8, "lr": 0.003},
        "meta": {"alpha": 0.1, "beta": 0.001, "m": 1, "epochs": 1, "batch_size": 4},
        "eval": {"metric": "exact_match", "decode": {"beam_size": 1, "max_len": 6, "min_len": 1}},
        "analyze": {"probes": 4}
    })
}

pub fn write(dir: &Path, cfg: &Value) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

pub fn context(cfg: &Value, how: Strictness) -> Context {
    let cfg = RunConfig::from_json(&cfg.to_string(), Path::new("/")).unwrap();
    Context::new(cfg, how).quiet()
}
