//! Correctness verification of the collectives against an independent oracle.
//!
//! For every combination of rank count, grid factorization, buffer length,
//! and reduction policy, each algorithm runs over the in-process fabric and
//! every rank's output is compared against the sequential f64 sum of all
//! ranks' inputs. Inputs are uniform in [0, 1) so the sums are
//! cancellation-free and plain relative error is meaningful.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::collectives::{run_single_threaded, Algorithm, CollectiveError, ReductionPolicy};
use crate::element::{Dtype, Element};
use crate::topology::GridTopology;
use crate::transport::inproc::FabricOptions;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub rank_counts: Vec<u32>,
    pub lengths: Vec<usize>,
    pub policies: Vec<ReductionPolicy>,
    pub seed: u64,
    /// Corrupt one payload byte per collective run; verification must fail.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            rank_counts: vec![1, 2, 4, 8, 16],
            lengths: vec![1, 7, 64, 1000],
            policies: vec![ReductionPolicy::f32(), ReductionPolicy::f64()],
            seed: 7,
            inject_fault: false,
        }
    }
}

impl VerifyOptions {
    /// The widest stock matrix, up to 64 ranks.
    pub fn full() -> Self {
        VerifyOptions {
            rank_counts: vec![1, 2, 4, 8, 9, 16, 64],
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// Every rank's output against the sequential f64 sum.
    Oracle,
    /// The three algorithms against each other on identical inputs.
    CrossAlgorithm,
    /// Two runs of the same case must be bit-identical.
    Determinism,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyCase {
    pub check: CheckKind,
    pub algorithm: Option<Algorithm>,
    pub n_ranks: u32,
    pub x: u32,
    pub y: u32,
    pub length: usize,
    pub wire: Dtype,
    pub accum: Dtype,
    /// Max relative error for value checks; differing-element count for
    /// determinism checks.
    pub metric: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub cases: Vec<VerifyCase>,
    pub checked: usize,
    pub failures: usize,
    pub passed: bool,
}

/// Relative tolerance implied by the coarsest dtype on the link.
pub fn tolerance_for(policy: ReductionPolicy) -> f64 {
    match policy.wire() {
        Dtype::F16 => 5e-2,
        Dtype::F32 => 1e-5,
        Dtype::F64 => 1e-12,
    }
}

fn factorizations(n: u32) -> Vec<(u32, u32)> {
    (1..=n)
        .filter(|&x| n.is_multiple_of(x))
        .map(|x| (x, n / x))
        .collect()
}

fn case_inputs(seed: u64, n: u32, length: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|rank| {
            let mix = seed ^ (u64::from(n) << 40) ^ ((length as u64) << 20) ^ u64::from(rank);
            let mut rng = ChaCha8Rng::seed_from_u64(mix);
            (0..length).map(|_| rng.random_range(0.0..1.0)).collect()
        })
        .collect()
}

fn sequential_oracle(inputs: &[Vec<f64>]) -> Vec<f64> {
    let length = inputs[0].len();
    let mut out = vec![0.0; length];
    for rank_input in inputs {
        for (acc, v) in out.iter_mut().zip(rank_input) {
            *acc += v;
        }
    }
    out
}

fn run_case<E: Element>(
    algorithm: Algorithm,
    topo: &GridTopology,
    inputs: &[Vec<f64>],
    wire: Dtype,
    fault: bool,
) -> Result<Vec<Vec<f64>>, CollectiveError> {
    let mut bufs: Vec<Vec<E>> = inputs
        .iter()
        .map(|input| input.iter().map(|&v| E::from_f64_lossy(v)).collect())
        .collect();
    let options = FabricOptions {
        corrupt_one_payload: fault,
        ..Default::default()
    };
    run_single_threaded(algorithm, topo, &mut bufs, wire, options)?;
    Ok(bufs
        .into_iter()
        .map(|buf| buf.into_iter().map(Element::into_f64).collect())
        .collect())
}

fn dispatch_case(
    algorithm: Algorithm,
    topo: &GridTopology,
    inputs: &[Vec<f64>],
    policy: ReductionPolicy,
    fault: bool,
) -> Result<Vec<Vec<f64>>, CollectiveError> {
    match policy.accum() {
        Dtype::F16 => run_case::<half::f16>(algorithm, topo, inputs, policy.wire(), fault),
        Dtype::F32 => run_case::<f32>(algorithm, topo, inputs, policy.wire(), fault),
        Dtype::F64 => run_case::<f64>(algorithm, topo, inputs, policy.wire(), fault),
    }
}

fn max_rel_error(outputs: &[Vec<f64>], oracle: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for rank_output in outputs {
        for (&got, &want) in rank_output.iter().zip(oracle) {
            let rel = (got - want).abs() / want.abs().max(1e-300);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Run the whole verification matrix.
pub fn run(options: &VerifyOptions) -> Result<VerifyReport, CollectiveError> {
    let mut cases = Vec::new();
    for &n in &options.rank_counts {
        for &length in &options.lengths {
            let inputs = case_inputs(options.seed, n, length);
            let oracle = sequential_oracle(&inputs);
            for &policy in &options.policies {
                let tolerance = tolerance_for(policy);
                // Reference output per algorithm for the cross check, taken
                // from the squarest grid.
                let mut reference: Vec<(Algorithm, Vec<f64>)> = Vec::new();
                for algorithm in Algorithm::ALL {
                    let grids: Vec<GridTopology> = match algorithm {
                        // The ring ignores the grid shape; run it once.
                        Algorithm::Ring => vec![GridTopology::squarest(n).unwrap()],
                        _ => factorizations(n)
                            .into_iter()
                            .map(|(x, y)| GridTopology::new(n, x, y).unwrap())
                            .collect(),
                    };
                    for topo in grids {
                        let outputs =
                            dispatch_case(algorithm, &topo, &inputs, policy, options.inject_fault)?;
                        let metric = max_rel_error(&outputs, &oracle);
                        cases.push(VerifyCase {
                            check: CheckKind::Oracle,
                            algorithm: Some(algorithm),
                            n_ranks: n,
                            x: topo.x(),
                            y: topo.y(),
                            length,
                            wire: policy.wire(),
                            accum: policy.accum(),
                            metric,
                            tolerance,
                            passed: metric <= tolerance,
                        });
                        if topo.x() == GridTopology::squarest(n).unwrap().x() {
                            reference.push((algorithm, outputs.into_iter().next().unwrap()));
                        }
                    }
                }
                // Cross-algorithm agreement on the squarest grid.
                let mut cross_metric = 0.0f64;
                for i in 0..reference.len() {
                    for j in i + 1..reference.len() {
                        let diff = reference[i]
                            .1
                            .iter()
                            .zip(&reference[j].1)
                            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
                            .fold(0.0f64, f64::max);
                        cross_metric = cross_metric.max(diff);
                    }
                }
                let squarest = GridTopology::squarest(n).unwrap();
                cases.push(VerifyCase {
                    check: CheckKind::CrossAlgorithm,
                    algorithm: None,
                    n_ranks: n,
                    x: squarest.x(),
                    y: squarest.y(),
                    length,
                    wire: policy.wire(),
                    accum: policy.accum(),
                    metric: cross_metric,
                    tolerance: 2.0 * tolerance,
                    passed: cross_metric <= 2.0 * tolerance,
                });
                // Determinism: repeat the torus run, demand identical bits.
                let first = dispatch_case(Algorithm::Torus, &squarest, &inputs, policy, false)?;
                let second = dispatch_case(Algorithm::Torus, &squarest, &inputs, policy, false)?;
                let differing: usize = first
                    .iter()
                    .zip(&second)
                    .map(|(a, b)| {
                        a.iter()
                            .zip(b)
                            .filter(|(x, y)| x.to_bits() != y.to_bits())
                            .count()
                    })
                    .sum();
                cases.push(VerifyCase {
                    check: CheckKind::Determinism,
                    algorithm: Some(Algorithm::Torus),
                    n_ranks: n,
                    x: squarest.x(),
                    y: squarest.y(),
                    length,
                    wire: policy.wire(),
                    accum: policy.accum(),
                    metric: differing as f64,
                    tolerance: 0.0,
                    passed: differing == 0,
                });
            }
        }
    }
    let failures = cases.iter().filter(|c| !c.passed).count();
    Ok(VerifyReport {
        checked: cases.len(),
        failures,
        passed: failures == 0,
        cases,
    })
}
