//! `torusred cost` — traces and predicted times under the alpha-beta model.

use std::process::ExitCode;

use anyhow::bail;
use clap::Args;
use serde::Serialize;
use torusred::collectives::Algorithm;
use torusred::costmodel::{self, predict_time, CostReport, LinkModel};
use torusred::element::Dtype;
use torusred::topology::GridTopology;

use crate::output::{self, OutputArgs, OutputFormat};

#[derive(Args, Debug)]
pub struct CostArgs {
    /// Grid sweep preset; "paper-grids" covers the published 1024..4096-rank
    /// configurations.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub ranks: Option<u32>,
    /// Grid as "XxY" (horizontal x vertical).
    #[arg(long)]
    pub grid: Option<GridTopology>,
    /// Restrict to one algorithm (all three otherwise).
    #[arg(long)]
    pub algo: Option<Algorithm>,
    /// Payload length in elements. Defaults to a 102 MiB gradient at the
    /// wire dtype.
    #[arg(long)]
    pub size: Option<u64>,
    /// Element width used for payload volumes.
    #[arg(long, default_value = "f16")]
    pub wire_dtype: Dtype,
    /// Seconds of latency per message.
    #[arg(long, default_value_t = 5e-6)]
    pub alpha: f64,
    /// Link bandwidth in bytes per second.
    #[arg(long, default_value_t = 12.5e9)]
    pub beta: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Serialize)]
struct CostEntry {
    grid: String,
    predicted_seconds: f64,
    horizontal_steps: u64,
    total_steps: u64,
    total_bytes_per_rank: u64,
    #[serde(flatten)]
    report: CostReport,
}

pub fn run(args: CostArgs) -> anyhow::Result<ExitCode> {
    let link = LinkModel::new(args.alpha, args.beta)?;
    let grids: Vec<GridTopology> = match (&args.preset, args.ranks, args.grid) {
        (Some(name), None, None) if name == "paper-grids" => costmodel::reference_grid_sweep(),
        (Some(name), _, _) if name != "paper-grids" => {
            bail!("unknown preset {name:?} (expected \"paper-grids\")")
        }
        (Some(_), _, _) => bail!("--preset cannot be combined with --ranks/--grid"),
        (None, ranks, grid) => vec![super::resolve_grid(ranks, grid)?],
    };
    let element_bytes = args.wire_dtype.size_bytes() as u64;
    let elements = args.size.unwrap_or(102 * 1024 * 1024 / element_bytes);
    let algorithms: Vec<Algorithm> = args
        .algo
        .map(|a| vec![a])
        .unwrap_or_else(|| Algorithm::ALL.to_vec());

    let mut entries = Vec::new();
    for topo in &grids {
        for &algorithm in &algorithms {
            let report = costmodel::trace(algorithm, topo, elements, element_bytes);
            entries.push(CostEntry {
                grid: topo.to_string(),
                predicted_seconds: predict_time(&report, &link),
                horizontal_steps: report.horizontal_steps(),
                total_steps: report.total_steps(),
                total_bytes_per_rank: report.total_bytes_per_rank(),
                report,
            });
        }
    }

    let rendered = match args.output.format {
        OutputFormat::Json => output::to_json(&entries)?,
        OutputFormat::Csv => {
            // One five-column block per report, annotated with a comment line
            // when the sweep spans several grids.
            let mut text = String::new();
            for entry in &entries {
                if entries.len() > 1 {
                    text.push_str(&format!(
                        "# grid={} ranks={} payload_elements={} element_bytes={}\n",
                        entry.grid,
                        entry.report.n_ranks,
                        entry.report.payload_elements,
                        entry.report.element_bytes
                    ));
                }
                text.push_str(&entry.report.to_csv(&link));
            }
            text
        }
    };
    output::emit(args.output.out.as_deref(), &rendered)?;
    Ok(ExitCode::SUCCESS)
}
