//! `torusred verify` — the collectives correctness matrix.

use std::process::ExitCode;

use anyhow::Context;
use clap::Args;
use torusred::collectives::ReductionPolicy;
use torusred::element::Dtype;
use torusred::verify::{self, VerifyOptions, VerifyReport};

use crate::output::{self, OutputArgs, OutputFormat};

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Widen the matrix up to 64 ranks.
    #[arg(long)]
    pub full: bool,
    /// Restrict the matrix to one wire dtype (runs f32 and f64 otherwise).
    #[arg(long)]
    pub wire_dtype: Option<Dtype>,
    /// Accumulation dtype for --wire-dtype (defaults to the wire dtype, or
    /// f32 for an f16 wire).
    #[arg(long)]
    pub accum_dtype: Option<Dtype>,
    /// Corrupt one payload byte per run; verification must then fail.
    #[arg(long)]
    pub inject_fault: bool,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn policy_from_flags(
    wire: Option<Dtype>,
    accum: Option<Dtype>,
) -> anyhow::Result<Option<ReductionPolicy>> {
    let Some(wire) = wire else {
        if accum.is_some() {
            anyhow::bail!("--accum-dtype requires --wire-dtype");
        }
        return Ok(None);
    };
    let accum = accum.unwrap_or(if wire == Dtype::F16 { Dtype::F32 } else { wire });
    Ok(Some(
        ReductionPolicy::new(wire, accum).context("invalid dtype policy")?,
    ))
}

fn to_csv(report: &VerifyReport) -> String {
    let header = [
        "check",
        "algorithm",
        "n_ranks",
        "x",
        "y",
        "length",
        "wire",
        "accum",
        "metric",
        "tolerance",
        "passed",
    ];
    let rows: Vec<Vec<String>> = report
        .cases
        .iter()
        .map(|c| {
            vec![
                format!("{:?}", c.check).to_lowercase(),
                c.algorithm
                    .map(|a| a.to_string())
                    .unwrap_or_else(|| "all".into()),
                c.n_ranks.to_string(),
                c.x.to_string(),
                c.y.to_string(),
                c.length.to_string(),
                c.wire.to_string(),
                c.accum.to_string(),
                format!("{:e}", c.metric),
                format!("{:e}", c.tolerance),
                c.passed.to_string(),
            ]
        })
        .collect();
    output::csv_table(&header, &rows)
}

pub fn run(args: VerifyArgs) -> anyhow::Result<ExitCode> {
    let mut options = if args.full {
        VerifyOptions::full()
    } else {
        VerifyOptions::default()
    };
    options.seed = args.seed;
    options.inject_fault = args.inject_fault;
    if let Some(policy) = policy_from_flags(args.wire_dtype, args.accum_dtype)? {
        options.policies = vec![policy];
    }
    let report = verify::run(&options).context("verification run failed")?;
    let rendered = match args.output.format {
        OutputFormat::Json => output::to_json(&report)?,
        OutputFormat::Csv => to_csv(&report),
    };
    output::emit(args.output.out.as_deref(), &rendered)?;
    eprintln!(
        "verify: {} checks, {} failures{}",
        report.checked,
        report.failures,
        if args.inject_fault {
            " (fault injection active)"
        } else {
            ""
        }
    );
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
