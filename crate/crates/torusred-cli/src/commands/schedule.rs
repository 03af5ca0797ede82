//! `torusred schedule` — per-epoch learning-rate/momentum/batch tables.

use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Args;
use serde::Serialize;
use torusred::largebatch::BatchSchedule;

use crate::output::{self, OutputArgs, OutputFormat};

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    /// Built-in name (reference, exp1..exp4) or a path to a TOML schedule
    /// file.
    #[arg(long)]
    pub schedule: String,
    /// Epoch stride of the emitted rows.
    #[arg(long, default_value_t = 1.0)]
    pub resolution: f64,
    /// Override the dataset size the schedule assumes.
    #[arg(long)]
    pub dataset_size: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Serialize)]
struct ScheduleRow {
    epoch: f64,
    lr: f64,
    momentum: f64,
    per_worker_batch: u64,
    total_batch: u64,
}

fn load(args: &ScheduleArgs) -> anyhow::Result<BatchSchedule> {
    if let Some(builtin) = BatchSchedule::builtin(&args.schedule) {
        return Ok(builtin);
    }
    let path = Path::new(&args.schedule);
    if !path.exists() {
        bail!(
            "unknown schedule {:?}: not a built-in ({}) and no such file",
            args.schedule,
            BatchSchedule::BUILTIN_NAMES.join(", ")
        );
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading schedule file {}", path.display()))?;
    BatchSchedule::from_toml_str(&text)
        .with_context(|| format!("parsing schedule file {}", path.display()))
}

pub fn run(args: ScheduleArgs) -> anyhow::Result<ExitCode> {
    if args.resolution <= 0.0 || args.resolution.is_nan() {
        bail!("--resolution must be positive");
    }
    let mut schedule = load(&args)?;
    if let Some(ds) = args.dataset_size {
        schedule.dataset_size = ds;
        schedule
            .validate()
            .context("schedule invalid after dataset override")?;
    }

    let mut rows = Vec::new();
    let mut epoch = 0.0;
    while epoch < schedule.final_epoch() {
        let (per_worker, _workers, total) = schedule.batch_size_at(epoch)?;
        rows.push(ScheduleRow {
            epoch,
            lr: schedule.lr_at(epoch)?,
            momentum: schedule.momentum_at(epoch)?,
            per_worker_batch: per_worker,
            total_batch: total,
        });
        epoch += args.resolution;
    }

    let rendered = match args.output.format {
        OutputFormat::Json => output::to_json(&rows)?,
        OutputFormat::Csv => {
            let header = ["epoch", "lr", "momentum", "per_worker_batch", "total_batch"];
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.epoch.to_string(),
                        r.lr.to_string(),
                        r.momentum.to_string(),
                        r.per_worker_batch.to_string(),
                        r.total_batch.to_string(),
                    ]
                })
                .collect();
            output::csv_table(&header, &table)
        }
    };
    output::emit(args.output.out.as_deref(), &rendered)?;
    Ok(ExitCode::SUCCESS)
}
