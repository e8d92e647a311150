use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use xnlg::checkpoint::Strictness;
use xnlg::config::{Command, RunConfig};
use xnlg::pipeline::{execute, run, Context, RunLock, RunOutputs};
use xnlg::Result;
use xnlg_core::metalearn::Order;

#[derive(Parser)]
#[command(
    name = "xnlg",
    version,
    about = "Cluster-centroid meta-learning for zero-shot cross-lingual generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Run config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Treat stage-order violations as errors.
    #[arg(long, global = true)]
    strict: bool,
    /// Proceed despite stage-order violations under --strict.
    #[arg(long, global = true)]
    force: bool,
    /// Meta-gradient order.
    #[arg(long, global = true, value_enum)]
    order: Option<OrderArg>,
    /// Average the best k meta-training checkpoints during evaluation.
    #[arg(long, global = true)]
    best_k: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    First,
    Second,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate the synthetic benchmark.
    Synth,
    /// Cluster languages and pick centroids.
    Cluster,
    /// Denoising pre-training on the multilingual monolingual corpus.
    Pretrain,
    /// Supervised fine-tuning on the pivot language.
    Finetune,
    /// Meta-train on the centroid languages.
    MetaTrain,
    /// Plain fine-tuning on the pooled centroid data (control).
    BaselineFt,
    /// Zero-shot evaluation on the target languages.
    Evaluate,
    /// Tag-distance analysis.
    Analyze,
    /// Every stage listed in the config.
    Run,
}

fn load(cli: &Cli) -> Result<Context> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| xnlg::CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.order {
        cfg.meta.cfg.order = match o {
            OrderArg::First => Order::First,
            OrderArg::Second => Order::Second,
        };
    }
    if let Some(k) = cli.best_k {
        cfg.eval.best_k = Some(k);
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    let how = Strictness {
        strict: cli.strict,
        force: cli.force,
    };
    let ctx = Context::new(cfg, how);
    Ok(if cli.quiet { ctx.quiet() } else { ctx })
}

fn dispatch(cli: &Cli) -> Result<()> {
    let ctx = load(cli)?;
    let cmd = match cli.command {
        Cmd::Run => {
            run(&ctx)?;
            return Ok(());
        }
        Cmd::Synth => Command::Synth,
        Cmd::Cluster => Command::Cluster,
        Cmd::Pretrain => Command::Pretrain,
        Cmd::Finetune => Command::Finetune,
        Cmd::MetaTrain => Command::MetaTrain,
        Cmd::BaselineFt => Command::BaselineFt,
        Cmd::Evaluate => Command::Evaluate,
        Cmd::Analyze => Command::Analyze,
    };
    // Readers may run alongside each other; writers of checkpoints may not.
    let _lock = match cmd {
        Command::Evaluate | Command::Analyze => None,
        _ => Some(RunLock::acquire(&ctx.cfg.out_dir)?),
    };
    ctx.write_effective_config()?;
    execute(&ctx, cmd, &mut RunOutputs::default())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
