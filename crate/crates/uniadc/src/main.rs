use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uniadc::config::{ForegroundPolicy, Mode, RunConfig, ScorerKind};
use uniadc::pipeline::{run_eval, run_sweep, run_synth, run_train};
use uniadc::report::report_csv;
use uniadc::AppResult;

/// Unified few-shot anomaly detection and classification.
///
/// Exit status: 0 on success, 1 for invalid input or configuration, 2 for
/// runtime failures.
#[derive(Debug, Parser)]
#[command(name = "uniadc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize category-labelled anomaly training samples.
    Synth(Common),
    /// Train one discriminator per image class (synthesizes first if needed).
    Train(Common),
    /// Evaluate checkpoints and write metric reports.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory of `<class>.ckpt` files (default: `<out>/checkpoints`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write score and label map images.
        #[arg(long)]
        overlays: bool,
    },
    /// Sweep the detection threshold and plot Acc and mIoU.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated thresholds (default: 0.05, 0.10, ..., 0.95).
        #[arg(long, value_delimiter = ',')]
        tau_grid: Option<Vec<f64>>,
    },
}

/// Settings shared by all commands; each flag overrides the config file.
#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root, or `toy` for the built-in benchmark.
    #[arg(long)]
    dataset: Option<String>,
    /// Anomaly priors file (required unless the dataset is `toy`).
    #[arg(long)]
    priors: Option<PathBuf>,
    /// Restrict to these image classes (repeatable).
    #[arg(long = "class")]
    classes: Vec<String>,
    /// Supervision mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Normal support images per class.
    #[arg(long)]
    k_normal: Option<usize>,
    /// Real anomalies per category (few_shot and full_shot).
    #[arg(long)]
    k_anomaly: Option<usize>,
    /// Lower bound of the inpainting strength range (exclusive).
    #[arg(long)]
    gamma_min: Option<f64>,
    /// Upper bound of the inpainting strength range.
    #[arg(long)]
    gamma_max: Option<f64>,
    /// Candidates per selection mini-batch.
    #[arg(long)]
    batch_select: Option<usize>,
    /// Synthetic samples per anomaly category.
    #[arg(long)]
    n_per_category: Option<usize>,
    /// Detection threshold on the anomaly score.
    #[arg(long)]
    tau: Option<f64>,
    /// Weight of the classification loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Training mini-batch size.
    #[arg(long)]
    train_batch: Option<usize>,
    /// Hidden width of the fusion network.
    #[arg(long)]
    hidden: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Root random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Inpainting backend.
    #[arg(long)]
    backend: Option<String>,
    /// Candidate scorer used by selection.
    #[arg(long, value_enum)]
    scorer: Option<ScorerKind>,
    /// How object foregrounds are obtained.
    #[arg(long, value_enum)]
    foreground: Option<ForegroundPolicy>,
    /// Train an extra "Other" embedding on class-agnostic anomalies.
    #[arg(long)]
    open_set: bool,
}

impl Common {
    fn resolve(self) -> AppResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(
            dataset, mode, k_normal, k_anomaly, gamma_min, gamma_max, batch_select, n_per_category, tau, lambda,
            epochs, lr, train_batch, hidden, embed_dim, seed, out, backend, scorer, foreground
        );
        if self.priors.is_some() {
            c.priors = self.priors;
        }
        if !self.classes.is_empty() {
            c.classes = self.classes;
        }
        c.open_set |= self.open_set;
        Ok(c)
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:.4}"))
}

fn run(command: Command) -> AppResult<()> {
    match command {
        Command::Synth(common) => {
            for s in run_synth(&common.resolve()?)? {
                let counts: Vec<String> = s.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("{}: {}", s.class, counts.join(" "));
            }
        }
        Command::Train(common) => {
            for s in run_train(&common.resolve()?)? {
                println!(
                    "{}: {} samples, final loss {}, {}",
                    s.class,
                    s.samples,
                    fmt(s.final_loss),
                    s.checkpoint.display()
                );
            }
        }
        Command::Eval {
            common,
            checkpoint,
            overlays,
        } => {
            let mut config = common.resolve()?;
            config.overlays |= overlays;
            let reports = run_eval(&config, checkpoint.as_deref())?;
            print!("{}", report_csv(&reports));
        }
        Command::Sweep {
            common,
            checkpoint,
            tau_grid,
        } => {
            let out = run_sweep(&common.resolve()?, checkpoint.as_deref(), tau_grid.as_deref())?;
            println!("tau,acc,miou");
            for p in &out.mean {
                println!("{},{},{}", p.tau, fmt(p.acc), fmt(p.miou));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
