//! `torusred trainsim` — distributed-versus-single-process training
//! equivalence.

use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, ValueEnum};
use torusred::collectives::Algorithm;
use torusred::sim::{run_trainsim, DivergenceReport, ModelKind, OptimizerKind, TrainSimSpec};
use torusred::topology::GridTopology;

use crate::output::{self, OutputArgs, OutputFormat};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    Logistic,
    Mlp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Lars,
}

#[derive(Args, Debug)]
pub struct TrainsimArgs {
    #[arg(long, default_value_t = 4)]
    pub workers: u32,
    /// Per-worker batch size.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::Logistic)]
    pub model: ModelArg,
    /// Hidden width of the MLP model.
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Lars)]
    pub optimizer: OptimizerArg,
    /// Label-smoothing epsilon.
    #[arg(long, default_value_t = 0.1)]
    pub smoothing: f64,
    #[arg(long, default_value_t = 512)]
    pub dataset_size: usize,
    #[arg(long, default_value_t = 20)]
    pub features: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Collective used to average gradients.
    #[arg(long, default_value = "torus")]
    pub algo: Algorithm,
    /// Worker grid as "XxY"; squarest factorization of --workers otherwise.
    #[arg(long)]
    pub grid: Option<GridTopology>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Maximum tolerated relative parameter divergence.
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn to_csv(report: &DivergenceReport) -> String {
    let header = [
        "workers",
        "per_worker_batch",
        "steps",
        "model",
        "optimizer",
        "algorithm",
        "seed",
        "step0_gradient_rel_error",
        "max_rel_divergence",
        "final_loss_single",
        "final_loss_distributed",
        "final_loss_abs_diff",
        "tolerance",
        "passed",
    ];
    let rows = vec![vec![
        report.workers.to_string(),
        report.per_worker_batch.to_string(),
        report.steps.to_string(),
        format!("{:?}", report.model).to_lowercase(),
        format!("{:?}", report.optimizer).to_lowercase(),
        report.algorithm.to_string(),
        report.seed.to_string(),
        format!("{:e}", report.step0_gradient_rel_error),
        format!("{:e}", report.max_rel_divergence),
        format!("{:e}", report.final_loss_single),
        format!("{:e}", report.final_loss_distributed),
        format!("{:e}", report.final_loss_abs_diff),
        format!("{:e}", report.tolerance),
        report.passed.to_string(),
    ]];
    output::csv_table(&header, &rows)
}

pub fn run(args: TrainsimArgs) -> anyhow::Result<ExitCode> {
    let spec = TrainSimSpec {
        model: match args.model {
            ModelArg::Logistic => ModelKind::Logistic,
            ModelArg::Mlp => ModelKind::Mlp,
        },
        hidden: args.hidden,
        dataset_size: args.dataset_size,
        features: args.features,
        classes: args.classes,
        workers: args.workers,
        per_worker_batch: args.batch,
        steps: args.steps,
        optimizer: match args.optimizer {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Lars => OptimizerKind::Lars,
        },
        label_smoothing: args.smoothing,
        learning_rate: args.lr,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        algorithm: args.algo,
        grid: args.grid,
        seed: args.seed,
        tolerance: args.tolerance,
    };
    let report = run_trainsim(&spec).context("training simulation failed")?;
    let rendered = match args.output.format {
        OutputFormat::Json => output::to_json(&report)?,
        OutputFormat::Csv => to_csv(&report),
    };
    output::emit(args.output.out.as_deref(), &rendered)?;
    eprintln!(
        "trainsim: divergence {:.3e} over {} steps (tolerance {:.1e}) -> {}",
        report.max_rel_divergence,
        report.steps,
        report.tolerance,
        if report.passed { "ok" } else { "FAILED" }
    );
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
