use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ncabr_core::harness::{
    cmd_compare, cmd_eval, cmd_train, parse_loss_set, write_traces, HarnessError, RunConfig,
};

#[derive(Parser)]
#[command(name = "ncabr", version, about = "Network-coded adaptive bitrate streaming simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic two-level bandwidth traces.
    Tracegen {
        #[command(flatten)]
        common: Common,
        /// Number of traces to write.
        #[arg(long)]
        count: Option<usize>,
        /// Trace length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Train a learned policy and write its checkpoint and learning curve.
    Train(Common),
    /// Evaluate one algorithm over a trace directory.
    Eval(Common),
    /// Evaluate several algorithms under identical conditions.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated algorithms; the first is the reference.
        #[arg(long, value_delimiter = ',')]
        algos: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<String>,
    /// Directory of trace files.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Checkpoint file; may be repeated.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// QoE variant: 1, 2, 3 or all.
    #[arg(long)]
    qoe: Option<String>,
    /// Comma-separated loss ratios, e.g. 0.01,0.02.
    #[arg(long)]
    loss_set: Option<String>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Parallel rollout workers.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn resolve(self) -> Result<RunConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.algo {
            cfg.algo = v;
        }
        if let Some(v) = self.traces {
            cfg.traces = Some(v);
        }
        if !self.checkpoints.is_empty() {
            cfg.checkpoints = self.checkpoints;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.qoe {
            cfg.qoe = v;
        }
        if let Some(v) = self.loss_set {
            cfg.loss_set = parse_loss_set(&v)?;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        Ok(cfg)
    }
}

fn require_traces(cfg: &RunConfig) -> Result<(), HarnessError> {
    if cfg.traces.is_none() {
        return Err(HarnessError::Config("--traces (or `traces` in the config) is required".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Tracegen { common, count, duration } => {
            let mut cfg = common.resolve()?;
            if let Some(c) = count {
                cfg.trace_count = c;
            }
            if let Some(d) = duration {
                cfg.trace_duration = d;
            }
            let paths = write_traces(&cfg.out, cfg.trace_count, cfg.trace_duration, &cfg.trace_model(), cfg.seed)?;
            println!("wrote {} traces to {}", paths.len(), cfg.out.display());
        }
        Command::Train(common) => {
            let cfg = common.resolve()?;
            require_traces(&cfg)?;
            cfg.validate()?;
            let out = cmd_train(&cfg)?;
            if let Some(v) = out.result.best_validation {
                println!("best validation reward {v:.3} at epoch {}", out.result.best_epoch);
            }
            println!("checkpoint {}\ncurve {}", out.checkpoint.display(), out.curve.display());
        }
        Command::Eval(common) => {
            let cfg = common.resolve()?;
            require_traces(&cfg)?;
            cfg.validate()?;
            let (_, line) = cmd_eval(&cfg)?;
            println!("{line}");
        }
        Command::Compare { common, algos } => {
            let mut cfg = common.resolve()?;
            if !algos.is_empty() {
                cfg.algos = algos;
            }
            require_traces(&cfg)?;
            cfg.validate()?;
            for row in cmd_compare(&cfg)? {
                println!(
                    "{:<10} QoE{} mean {:>9.3}  bitrate {:>7.1} kbps  gain {:+.2}%",
                    row.algo,
                    row.variant.number(),
                    row.mean_qoe,
                    row.mean_bitrate_kbps,
                    100.0 * row.gain
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Config(_) | HarnessError::UnknownAlgo(_) | HarnessError::MissingCheckpoint(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
