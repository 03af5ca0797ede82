//! Wall-clock measurement of the collectives, with the step-count trace of
//! the cost model checked against the instrumented fabric.

use std::collections::BTreeMap;
use std::sync::Barrier;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::collectives::{execute_blocking, Algorithm, CollectiveError, ReductionPolicy};
use crate::costmodel::{self, CostReport};
use crate::element::{Dtype, Element};
use crate::topology::GridTopology;
use crate::transport::inproc::{FabricOptions, InprocFabric};
use crate::transport::Transport;

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub algorithm: Algorithm,
    pub topo: GridTopology,
    pub elements: usize,
    pub policy: ReductionPolicy,
    pub iters: usize,
    pub warmup: usize,
    /// Injected per-message latency on the in-process fabric.
    pub send_delay: Option<Duration>,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub algorithm: Algorithm,
    pub n_ranks: u32,
    pub x: u32,
    pub y: u32,
    pub elements: usize,
    pub payload_bytes: u64,
    pub wire: Dtype,
    pub accum: Dtype,
    pub iters: usize,
    pub warmup: usize,
    pub min_seconds: f64,
    pub median_seconds: f64,
    /// All-reduce bus bandwidth: `2 (N-1)/N * bytes / median`.
    pub bus_bandwidth_bytes_per_sec: f64,
    pub samples_seconds: Vec<f64>,
    /// Sequential rounds observed per wire phase, from the fabric statistics.
    pub measured_phase_steps: BTreeMap<u8, u64>,
    pub trace: CostReport,
    /// Every trace phase matched the instrumented steps and payload sizes.
    pub trace_agrees: bool,
    /// Relative error of the final buffer against the locally recomputed
    /// oracle sum.
    pub max_rel_error: f64,
}

/// Deterministic per-rank input, reproducible on any rank from the seed.
pub fn bench_input(seed: u64, rank: u32, elements: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xb0b0 + u64::from(rank)));
    (0..elements).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn oracle(seed: u64, n: u32, elements: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; elements];
    for rank in 0..n {
        for (acc, v) in out.iter_mut().zip(bench_input(seed, rank, elements)) {
            *acc += v;
        }
    }
    out
}

fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

fn finish_report(
    opts: &BenchOptions,
    samples: Vec<f64>,
    measured_phase_steps: BTreeMap<u8, u64>,
    trace_agrees: bool,
    max_rel_error: f64,
) -> BenchReport {
    let wire_bytes = (opts.elements * opts.policy.wire().size_bytes()) as u64;
    let med = median(&samples);
    let n = opts.topo.n_ranks() as f64;
    let trace = costmodel::trace(
        opts.algorithm,
        &opts.topo,
        opts.elements as u64,
        opts.policy.wire().size_bytes() as u64,
    );
    BenchReport {
        algorithm: opts.algorithm,
        n_ranks: opts.topo.n_ranks(),
        x: opts.topo.x(),
        y: opts.topo.y(),
        elements: opts.elements,
        payload_bytes: wire_bytes,
        wire: opts.policy.wire(),
        accum: opts.policy.accum(),
        iters: opts.iters,
        warmup: opts.warmup,
        min_seconds: samples.iter().cloned().fold(f64::INFINITY, f64::min),
        bus_bandwidth_bytes_per_sec: if med > 0.0 {
            2.0 * (n - 1.0) / n * wire_bytes as f64 / med
        } else {
            0.0
        },
        median_seconds: med,
        samples_seconds: samples,
        measured_phase_steps,
        trace,
        trace_agrees,
        max_rel_error,
    }
}

fn run_inproc_typed<E: Element>(opts: &BenchOptions) -> Result<BenchReport, CollectiveError> {
    let n = opts.topo.n_ranks();
    let fabric_options = FabricOptions {
        send_delay: opts.send_delay,
        ..Default::default()
    };
    let (fabric, endpoints) = InprocFabric::with_options(n, fabric_options);
    let barrier = Barrier::new(n as usize + 1);
    let total_iters = opts.iters + opts.warmup;
    let mut samples = Vec::with_capacity(opts.iters);
    let mut final_bufs: Vec<Option<Vec<E>>> = (0..n).map(|_| None).collect();
    let mut worker_result: Result<(), CollectiveError> = Ok(());

    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(n as usize);
        for (ep, slot) in endpoints.into_iter().zip(final_bufs.iter_mut()) {
            let barrier = &barrier;
            let topo = opts.topo;
            let (algorithm, elements, wire, seed) =
                (opts.algorithm, opts.elements, opts.policy.wire(), opts.seed);
            handles.push(scope.spawn(move || -> Result<(), CollectiveError> {
                let rank = ep.rank();
                let actions = algorithm.schedule(&topo, rank, elements);
                let input: Vec<E> = bench_input(seed, rank, elements)
                    .into_iter()
                    .map(E::from_f64_lossy)
                    .collect();
                let mut buf = Vec::new();
                for iter in 0..total_iters {
                    buf = input.clone();
                    barrier.wait();
                    execute_blocking(&ep, &actions, &mut buf, wire, iter as u32)?;
                    barrier.wait();
                }
                *slot = Some(buf);
                Ok(())
            }));
        }
        for iter in 0..total_iters {
            barrier.wait();
            let start = Instant::now();
            barrier.wait();
            if iter >= opts.warmup {
                samples.push(start.elapsed().as_secs_f64());
            }
        }
        for handle in handles {
            let joined = handle.join().expect("bench worker panicked");
            if joined.is_err() && worker_result.is_ok() {
                worker_result = joined;
            }
        }
    });
    worker_result?;

    // Fabric statistics accumulate over all iterations; compare one
    // iteration's worth of rounds against the trace.
    let stats = fabric.stats();
    let mut measured = BTreeMap::new();
    for (&phase, s) in &stats.phases {
        measured.insert(phase, s.sequential_steps());
    }
    let trace = costmodel::trace(
        opts.algorithm,
        &opts.topo,
        opts.elements as u64,
        opts.policy.wire().size_bytes() as u64,
    );
    let trace_agrees = costmodel::compare_with_stats(&trace, &stats)
        .iter()
        .all(|row| row.agree);

    let want = oracle(opts.seed, n, opts.elements);
    let tolerance_floor = 1e-300;
    let mut max_rel_error = 0.0f64;
    for buf in final_bufs.into_iter().flatten() {
        for (got, want) in buf.into_iter().zip(&want) {
            let rel = (got.into_f64() - want).abs() / want.abs().max(tolerance_floor);
            max_rel_error = max_rel_error.max(rel);
        }
    }
    Ok(finish_report(
        opts,
        samples,
        measured,
        trace_agrees,
        max_rel_error,
    ))
}

/// Benchmark over the in-process fabric, one thread per rank, iterations
/// separated by barriers. Warmup iterations are excluded from the samples.
pub fn run_inproc(opts: &BenchOptions) -> Result<BenchReport, CollectiveError> {
    assert!(opts.iters >= 1, "need at least one measured iteration");
    match opts.policy.accum() {
        Dtype::F16 => run_inproc_typed::<half::f16>(opts),
        Dtype::F32 => run_inproc_typed::<f32>(opts),
        Dtype::F64 => run_inproc_typed::<f64>(opts),
    }
}

/// Benchmark this rank's side of the collective over an existing transport
/// (used for TCP runs, one process per rank). Iteration timing is taken
/// locally; ranks stay in lockstep through the collective's own dependencies.
pub fn run_rank<E: Element, T: Transport>(
    ep: &T,
    opts: &BenchOptions,
) -> Result<BenchReport, CollectiveError> {
    assert!(opts.iters >= 1, "need at least one measured iteration");
    let rank = ep.rank();
    let actions = opts.algorithm.schedule(&opts.topo, rank, opts.elements);
    let input: Vec<E> = bench_input(opts.seed, rank, opts.elements)
        .into_iter()
        .map(E::from_f64_lossy)
        .collect();
    let wire = opts.policy.wire();
    let mut samples = Vec::with_capacity(opts.iters);
    let mut buf = input.clone();
    for iter in 0..opts.iters + opts.warmup {
        buf = input.clone();
        let start = Instant::now();
        execute_blocking(ep, &actions, &mut buf, wire, iter as u32)?;
        if iter >= opts.warmup {
            samples.push(start.elapsed().as_secs_f64());
        }
    }
    let want = oracle(opts.seed, ep.n_ranks(), opts.elements);
    let mut max_rel_error = 0.0f64;
    for (got, want) in buf.into_iter().zip(&want) {
        let rel = (got.into_f64() - want).abs() / want.abs().max(1e-300);
        max_rel_error = max_rel_error.max(rel);
    }
    // No shared fabric statistics across processes; the trace check is
    // an in-process concern.
    Ok(finish_report(
        opts,
        samples,
        BTreeMap::new(),
        true,
        max_rel_error,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::tolerance_for;

    fn opts(algorithm: Algorithm, topo: GridTopology) -> BenchOptions {
        BenchOptions {
            algorithm,
            topo,
            elements: 256,
            policy: ReductionPolicy::f32(),
            iters: 3,
            warmup: 1,
            send_delay: None,
            seed: 11,
        }
    }

    #[test]
    fn inproc_bench_reports_and_agrees() {
        let topo = GridTopology::from_extents(4, 2).unwrap();
        let report = run_inproc(&opts(Algorithm::Torus, topo)).unwrap();
        assert_eq!(report.samples_seconds.len(), 3);
        assert!(report.trace_agrees);
        assert!(report.max_rel_error < tolerance_for(ReductionPolicy::f32()));
        assert!(report.min_seconds <= report.median_seconds);
    }

    #[test]
    fn injected_delay_separates_torus_from_ring() {
        let topo = GridTopology::from_extents(4, 4).unwrap();
        let delay = Some(Duration::from_micros(300));
        let mut torus = opts(Algorithm::Torus, topo);
        torus.elements = 16;
        torus.send_delay = delay;
        let mut ring = opts(Algorithm::Ring, topo);
        ring.elements = 16;
        ring.send_delay = delay;
        let torus_report = run_inproc(&torus).unwrap();
        let ring_report = run_inproc(&ring).unwrap();
        // 12 sequential delayed steps against 30.
        assert!(
            torus_report.median_seconds < ring_report.median_seconds,
            "torus {} vs ring {}",
            torus_report.median_seconds,
            ring_report.median_seconds
        );
    }
}
