//! `torusred bench` — wall-clock all-reduce measurement on the in-process
//! fabric (one thread per rank) or over TCP (one process per rank).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use torusred::bench::{run_inproc, run_rank, BenchOptions, BenchReport};
use torusred::collectives::Algorithm;
use torusred::element::Dtype;
use torusred::topology::GridTopology;
use torusred::transport::tcp::{load_peer_table, TcpEndpoint, TcpOptions};
use torusred::verify::tolerance_for;

use crate::output::{self, OutputArgs, OutputFormat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TransportKind {
    Inproc,
    Tcp,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value = "torus")]
    pub algo: Algorithm,
    /// Total rank count (squarest grid is chosen unless --grid is given).
    #[arg(long)]
    pub ranks: Option<u32>,
    /// Grid as "XxY" (horizontal x vertical).
    #[arg(long)]
    pub grid: Option<GridTopology>,
    /// Payload length in elements.
    #[arg(long, default_value_t = 65536)]
    pub size: usize,
    #[arg(long, default_value = "f32")]
    pub wire_dtype: Dtype,
    /// Defaults to the wire dtype (f32 for an f16 wire).
    #[arg(long)]
    pub accum_dtype: Option<Dtype>,
    #[arg(long, value_enum, default_value_t = TransportKind::Inproc)]
    pub transport: TransportKind,
    /// This process's rank (tcp only).
    #[arg(long)]
    pub rank: Option<u32>,
    /// Peer table file: one "rank host:port" per line, '#' comments (tcp only).
    #[arg(long)]
    pub peers: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Injected per-message latency in seconds (inproc only).
    #[arg(long)]
    pub inject_delay: Option<f64>,
    /// Receive/connect timeout in seconds (tcp).
    #[arg(long, default_value_t = 30.0)]
    pub timeout_secs: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn to_csv(report: &BenchReport) -> String {
    let header = ["algo", "n", "x", "y", "bytes", "median_s", "bus_GBps"];
    let rows = vec![vec![
        report.algorithm.to_string(),
        report.n_ranks.to_string(),
        report.x.to_string(),
        report.y.to_string(),
        report.payload_bytes.to_string(),
        format!("{:e}", report.median_seconds),
        format!("{}", report.bus_bandwidth_bytes_per_sec / 1e9),
    ]];
    output::csv_table(&header, &rows)
}

pub fn run(args: BenchArgs) -> anyhow::Result<ExitCode> {
    let policy = super::verify::policy_from_flags(Some(args.wire_dtype), args.accum_dtype)?
        .expect("wire dtype given");
    if args.iters == 0 {
        bail!("--iters must be at least 1");
    }
    let report = match args.transport {
        TransportKind::Inproc => {
            let topo = super::resolve_grid(args.ranks, args.grid)?;
            let opts = BenchOptions {
                algorithm: args.algo,
                topo,
                elements: args.size,
                policy,
                iters: args.iters,
                warmup: args.warmup,
                send_delay: args.inject_delay.map(Duration::from_secs_f64),
                seed: args.seed,
            };
            run_inproc(&opts).context("in-process benchmark failed")?
        }
        TransportKind::Tcp => {
            if args.inject_delay.is_some() {
                bail!("--inject-delay only applies to the in-process fabric");
            }
            let rank = args.rank.context("tcp transport needs --rank")?;
            let peers_path = args
                .peers
                .as_deref()
                .context("tcp transport needs --peers")?;
            let peers = load_peer_table(peers_path)
                .with_context(|| format!("loading peer table {}", peers_path.display()))?;
            let n = peers.len() as u32;
            let topo = match args.grid {
                Some(g) if g.n_ranks() == n => g,
                Some(g) => bail!("--grid {g} does not cover the {n} peers in the table"),
                None => GridTopology::squarest(n)?,
            };
            let timeout = Duration::from_secs_f64(args.timeout_secs);
            let ep = TcpEndpoint::bind(
                rank,
                peers,
                TcpOptions {
                    recv_timeout: timeout,
                    connect_timeout: timeout,
                },
            )
            .context("binding the TCP endpoint")?;
            let opts = BenchOptions {
                algorithm: args.algo,
                topo,
                elements: args.size,
                policy,
                iters: args.iters,
                warmup: args.warmup,
                send_delay: None,
                seed: args.seed,
            };
            match policy.accum() {
                Dtype::F16 => run_rank::<torusred::F16, _>(&ep, &opts),
                Dtype::F32 => run_rank::<f32, _>(&ep, &opts),
                Dtype::F64 => run_rank::<f64, _>(&ep, &opts),
            }
            .context("TCP benchmark failed")?
        }
    };

    let rendered = match args.output.format {
        OutputFormat::Json => output::to_json(&report)?,
        OutputFormat::Csv => to_csv(&report),
    };
    output::emit(args.output.out.as_deref(), &rendered)?;

    let tolerance = tolerance_for(policy);
    let ok = report.trace_agrees && report.max_rel_error <= tolerance;
    eprintln!(
        "bench: {} on {} ranks, median {:.3e}s, bus {:.3} GB/s, result error {:.2e}{}",
        report.algorithm,
        report.n_ranks,
        report.median_seconds,
        report.bus_bandwidth_bytes_per_sec / 1e9,
        report.max_rel_error,
        if ok { "" } else { " (CHECK FAILED)" }
    );
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
