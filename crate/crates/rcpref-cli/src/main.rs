//! `rcpref`: reproducible pipelines over the rcpref library. Every command
//! writes its outputs atomically and a `manifest.json` last.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DEFAULT_OUT: &str = "out";

#[derive(Parser, Debug, Clone)]
#[command(name = "rcpref", version, about = "Response-conditioned preference modelling pipelines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every named random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (outputs are identical for any value).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Generate a synthetic corpus and its sft / rm / eval splits.
    Gen(GenArgs),
    /// Build an augmented or evaluation dataset from a corpus file.
    Augment(AugmentArgs),
    /// Train a scorer or policy.
    Train(TrainArgs),
    /// Evaluate a checkpoint with one metric.
    Eval(EvalArgs),
    /// Word-num sweep curve and multi-length stability for a scorer.
    Sweep(SweepArgs),
    /// Train and evaluate an ablation grid.
    Ablate(AblateArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    /// Override the corpus size.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentRecipe {
    Rc,
    LiftPlus,
    LiftReverse,
    LiftNoreverse,
    LiftEmpty,
    EvalEmpty,
    EvalRandom,
    EvalQuality,
    EvalLength,
    EvalMultilength,
    EvalMls,
}

#[derive(Args, Debug, Clone)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub recipe: AugmentRecipe,
    /// Input corpus JSONL.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Rm,
    RcRm,
    Dpo,
    RcDpo,
    RDpo,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub objective: ObjectiveKind,
    /// Preference-pair JSONL.
    #[arg(long)]
    pub data: PathBuf,
    /// Rc-example JSONL (rc-rm, rc-dpo).
    #[arg(long)]
    pub rc: Option<PathBuf>,
    /// Reference policy checkpoint (policy objectives); defaults to the initial policy.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Override the number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Consistency,
    Correlation,
    Multilength,
    Sweep,
    LengthAcc,
    WinRatio,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub metric: Metric,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Second checkpoint (win-ratio).
    #[arg(long)]
    pub checkpoint_b: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Index-aligned second dataset (consistency).
    #[arg(long)]
    pub data_b: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sweep items from `augment --recipe eval-mls`.
    #[arg(long)]
    pub mls: PathBuf,
    /// Multi-length items from `augment --recipe eval-multilength`.
    #[arg(long)]
    pub ml: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationFlag {
    Arm,
    RcRatio,
    Lambda,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub kind: AblationFlag,
    /// Ratio step for rc-ratio.
    #[arg(long, default_value_t = 0.1)]
    pub increment: f64,
    /// λ values for the lambda sweep (repeatable).
    #[arg(long = "lambda")]
    pub lambdas: Vec<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Gen(a) => &a.common,
            Command::Augment(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Sweep(a) => &a.common,
            Command::Ablate(a) => &a.common,
            Command::Replay(a) => &a.common,
        }
    }
}

fn lib_code(e: &rcpref::Error) -> u8 {
    match e {
        rcpref::Error::Config(_) => 2,
        rcpref::Error::Io { .. } => 3,
        rcpref::Error::Numeric(_) | rcpref::Error::NonFiniteLoss { .. } => 4,
        rcpref::Error::Schema { .. } => 5,
        rcpref::Error::Contract(_) | rcpref::Error::Domain(_) => 6,
        rcpref::Error::Cell { source, .. } => lib_code(source),
    }
}

/// Exit codes: 2 config, 3 I/O, 4 numeric, 5 schema, 6 contract/domain.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rcpref::Error>() {
            return lib_code(e);
        }
        if cause.downcast_ref::<config::ConfigFileError>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli, std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
