mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use symphony::training::Algorithm;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "symphony", version, about = "Multi-agent driving simulation: data, training, rollouts and evaluation")]
struct Cli {
    /// Worker threads; defaults to the available hardware threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with the scripted expert.
    GenData(GenDataArgs),
    /// Train a policy and select a checkpoint on held-out training segments.
    Train(TrainArgs),
    /// Run one pruned search on a segment and export the branch trace.
    Simulate(SimulateArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "SYMPHONY_SEED")]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> symphony::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    world: Option<String>,
    #[arg(long)]
    segments: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Variant {
    Bc,
    BcTs,
    Mgail,
    MgailTs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long, alias = "out")]
    out_dir: PathBuf,
    /// Learning rule, optionally with tree search.
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    #[arg(long, value_enum)]
    hierarchy: Option<Toggle>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Index into the test split.
    #[arg(long, default_value_t = 0)]
    segment: usize,
    #[arg(long)]
    branches: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long, value_enum)]
    beam: Option<Toggle>,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> symphony::Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| symphony::Error::Config(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::GenData(a) => {
            let mut cfg = a.common.resolve()?;
            if let Some(w) = &a.world {
                cfg.world = w.parse()?;
            }
            if let Some(n) = a.segments {
                cfg.segments = n;
            }
            commands::gen_data(&cfg, &a.out)
        }
        Command::Train(a) => {
            let mut cfg = a.common.resolve()?;
            if let Some(v) = a.variant {
                cfg.algorithm = match v {
                    Variant::Bc | Variant::BcTs => Algorithm::Bc,
                    Variant::Mgail | Variant::MgailTs => Algorithm::Mgail,
                };
                cfg.tree_search = matches!(v, Variant::BcTs | Variant::MgailTs);
            }
            if let Some(h) = a.hierarchy {
                cfg.hierarchy = h == Toggle::On;
            }
            if let Some(s) = a.steps {
                cfg.steps = s;
            }
            commands::train(&cfg, &a.data, &a.out_dir)
        }
        Command::Simulate(a) => {
            let mut cfg = a.common.resolve()?;
            if let Some(b) = a.branches {
                cfg.rollouts = b;
            }
            commands::simulate(&cfg, &a.ckpt, &a.data, a.segment, &a.out)
        }
        Command::Eval(a) => {
            let mut cfg = a.common.resolve()?;
            if let Some(r) = a.rollouts {
                cfg.rollouts = r;
            }
            if let Some(b) = a.beam {
                cfg.beam = Some(b == Toggle::On);
            }
            commands::eval(&cfg, &a.ckpt, &a.data, &a.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
