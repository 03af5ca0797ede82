//! Step/volume traces of each algorithm and latency-bandwidth (alpha-beta)
//! time and scaling-efficiency predictions.
//!
//! A trace counts the sequential message rounds of each phase and the payload
//! of the largest chunk per round (the worst rank bounds a step). Rows and
//! columns proceed in parallel, so the total predicted time of a collective
//! is the sum over its phases of `steps * (alpha + bytes / beta)`.
//!
//! Traces are computed from closed-form step counts. They deliberately share
//! no code with the schedule builders in [`crate::collectives`], so comparing
//! a trace against instrumented transport statistics is a genuine two-route
//! check.

use serde::Serialize;
use thiserror::Error;

use crate::collectives::Algorithm;
use crate::topology::GridTopology;
use crate::transport::TransportStats;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("invalid link model: {0}")]
    InvalidLink(String),
    #[error("invalid cluster spec: {0}")]
    InvalidCluster(String),
}

/// Latency-bandwidth link model: a message of `s` bytes costs
/// `alpha + s / beta` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinkModel {
    /// Seconds of fixed cost per message.
    pub alpha: f64,
    /// Bytes per second of link bandwidth.
    pub beta: f64,
}

impl LinkModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, CostError> {
        if alpha < 0.0 || alpha.is_nan() {
            return Err(CostError::InvalidLink(format!(
                "alpha must be >= 0, got {alpha}"
            )));
        }
        if beta <= 0.0 || beta.is_nan() {
            return Err(CostError::InvalidLink(format!(
                "beta must be > 0, got {beta}"
            )));
        }
        Ok(LinkModel { alpha, beta })
    }

    /// A plausible commodity-cluster operating point: 5 us per message and
    /// 12.5 GB/s (a 100 Gbit/s link). Used as the documented default for
    /// efficiency predictions; only orderings, never absolute numbers, should
    /// be read off this model.
    pub fn plausible_cluster() -> Self {
        LinkModel {
            alpha: 5e-6,
            beta: 12.5e9,
        }
    }
}

/// One phase of a collective: how many sequential rounds it takes and how
/// large a round's payload is.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PhaseCost {
    pub label: &'static str,
    /// Sequential message rounds in the phase. In ring phases every rank
    /// sends one message per round; in chain phases the rounds are hops.
    pub steps: u64,
    /// Payload bytes of the largest chunk moved in one round.
    pub per_step_payload_bytes: u64,
}

impl PhaseCost {
    pub fn seconds(&self, link: &LinkModel) -> f64 {
        self.steps as f64 * (link.alpha + self.per_step_payload_bytes as f64 / link.beta)
    }
}

/// Step and volume projection for one collective execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub algorithm: Algorithm,
    pub n_ranks: u32,
    pub x: u32,
    pub y: u32,
    pub payload_elements: u64,
    pub element_bytes: u64,
    pub phases: Vec<PhaseCost>,
}

impl CostReport {
    pub fn total_steps(&self) -> u64 {
        self.phases.iter().map(|p| p.steps).sum()
    }

    /// Bytes a rank on the critical path sends over the whole collective.
    pub fn total_bytes_per_rank(&self) -> u64 {
        self.phases
            .iter()
            .map(|p| p.steps * p.per_step_payload_bytes)
            .sum()
    }

    /// Steps of the row-oriented phases only (the headline torus count,
    /// `2(X-1)`). Zero for algorithms without a horizontal phase label.
    pub fn horizontal_steps(&self) -> u64 {
        self.phases
            .iter()
            .filter(|p| p.label.starts_with("horizontal"))
            .map(|p| p.steps)
            .sum()
    }

    /// CSV with the columns `algorithm,phase,steps,per_step_bytes,predicted_seconds`.
    pub fn to_csv(&self, link: &LinkModel) -> String {
        let mut out = String::from("algorithm,phase,steps,per_step_bytes,predicted_seconds\n");
        for phase in &self.phases {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.algorithm,
                phase.label,
                phase.steps,
                phase.per_step_payload_bytes,
                phase.seconds(link)
            ));
        }
        out
    }
}

fn max_chunk(elements: u64, parts: u64) -> u64 {
    // Largest chunk of the balanced partition.
    elements.div_ceil(parts)
}

/// Project the step counts and per-round payloads of one collective run.
pub fn trace(
    algorithm: Algorithm,
    topo: &GridTopology,
    payload_elements: u64,
    element_bytes: u64,
) -> CostReport {
    let n = topo.n_ranks() as u64;
    let x = topo.x() as u64;
    let y = topo.y() as u64;
    let d = payload_elements;
    let phases = match algorithm {
        Algorithm::Ring => vec![PhaseCost {
            label: "ring-all-reduce",
            steps: 2 * (n - 1),
            per_step_payload_bytes: max_chunk(d, n) * element_bytes,
        }],
        Algorithm::Torus => {
            let row_chunk = max_chunk(d, x);
            vec![
                PhaseCost {
                    label: "horizontal-reduce-scatter",
                    steps: x - 1,
                    per_step_payload_bytes: row_chunk * element_bytes,
                },
                PhaseCost {
                    label: "vertical-all-reduce",
                    steps: 2 * (y - 1),
                    per_step_payload_bytes: max_chunk(row_chunk, y) * element_bytes,
                },
                PhaseCost {
                    label: "horizontal-all-gather",
                    steps: x - 1,
                    per_step_payload_bytes: row_chunk * element_bytes,
                },
            ]
        }
        Algorithm::Hierarchical => vec![
            PhaseCost {
                label: "intra-group-reduce",
                steps: x - 1,
                per_step_payload_bytes: d * element_bytes,
            },
            PhaseCost {
                label: "leader-all-reduce",
                steps: 2 * (y - 1),
                per_step_payload_bytes: max_chunk(d, y) * element_bytes,
            },
            PhaseCost {
                label: "intra-group-broadcast",
                steps: x - 1,
                per_step_payload_bytes: d * element_bytes,
            },
        ],
    };
    CostReport {
        algorithm,
        n_ranks: topo.n_ranks(),
        x: topo.x(),
        y: topo.y(),
        payload_elements,
        element_bytes,
        phases,
    }
}

/// Predicted wall-clock seconds for one collective under the link model.
/// Phases are sequential; steps within a phase are sequential per rank.
pub fn predict_time(report: &CostReport, link: &LinkModel) -> f64 {
    report.phases.iter().map(|p| p.seconds(link)).sum()
}

/// Wire phase codes covered by each trace phase, in trace order. Lets
/// instrumented transport statistics be folded onto a trace.
pub fn phase_groups(algorithm: Algorithm) -> &'static [&'static [u8]] {
    use crate::collectives::phases as p;
    match algorithm {
        Algorithm::Ring => &[&[p::RING_REDUCE_SCATTER, p::RING_ALL_GATHER]],
        Algorithm::Torus => &[
            &[p::TORUS_HORIZONTAL_REDUCE_SCATTER],
            &[
                p::TORUS_VERTICAL_REDUCE_SCATTER,
                p::TORUS_VERTICAL_ALL_GATHER,
            ],
            &[p::TORUS_HORIZONTAL_ALL_GATHER],
        ],
        Algorithm::Hierarchical => &[
            &[p::HIER_INTRA_REDUCE],
            &[p::HIER_LEADER_REDUCE_SCATTER, p::HIER_LEADER_ALL_GATHER],
            &[p::HIER_INTRA_BROADCAST],
        ],
    }
}

/// One row of the trace-versus-measurement comparison.
#[derive(Clone, Debug, Serialize)]
pub struct TraceAgreementRow {
    pub phase: &'static str,
    pub trace_steps: u64,
    pub observed_steps: u64,
    pub trace_per_step_bytes: u64,
    pub observed_max_payload_bytes: u64,
    pub agree: bool,
}

/// Fold instrumented send statistics onto a trace, phase by phase. Observed
/// steps of a trace phase are the summed sequential rounds of the wire phases
/// it covers; observed payload is their largest message.
pub fn compare_with_stats(report: &CostReport, stats: &TransportStats) -> Vec<TraceAgreementRow> {
    let groups = phase_groups(report.algorithm);
    assert_eq!(groups.len(), report.phases.len());
    report
        .phases
        .iter()
        .zip(groups)
        .map(|(phase, group)| {
            let mut observed_steps = 0;
            let mut observed_bytes = 0;
            for code in group.iter() {
                if let Some(s) = stats.phases.get(code) {
                    observed_steps += s.sequential_steps();
                    observed_bytes = observed_bytes.max(s.max_payload_bytes);
                }
            }
            let agree = observed_steps == phase.steps
                && (phase.steps == 0 || observed_bytes == phase.per_step_payload_bytes);
            TraceAgreementRow {
                phase: phase.label,
                trace_steps: phase.steps,
                observed_steps,
                trace_per_step_bytes: phase.per_step_payload_bytes,
                observed_max_payload_bytes: observed_bytes,
                agree,
            }
        })
        .collect()
}

/// Cluster description for throughput/efficiency prediction.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ClusterSpec {
    pub topology: GridTopology,
    /// Size of the gradient payload synchronized each iteration, in bytes.
    pub gradient_bytes: u64,
    /// Compute throughput of one worker in isolation.
    pub per_gpu_images_per_sec: f64,
    pub per_worker_batch: u64,
}

impl ClusterSpec {
    fn validate(&self) -> Result<(), CostError> {
        if self.gradient_bytes == 0
            || self.per_worker_batch == 0
            || self.per_gpu_images_per_sec <= 0.0
            || self.per_gpu_images_per_sec.is_nan()
        {
            return Err(CostError::InvalidCluster(format!("{self:?}")));
        }
        Ok(())
    }

    fn iteration_seconds(&self, link: &LinkModel, algorithm: Algorithm) -> f64 {
        let compute = self.per_worker_batch as f64 / self.per_gpu_images_per_sec;
        // Byte-granular trace; chunk slack below one element is irrelevant at
        // this scale.
        let comm = predict_time(
            &trace(algorithm, &self.topology, self.gradient_bytes, 1),
            link,
        );
        compute + comm
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EfficiencyPrediction {
    pub images_per_sec: f64,
    /// Throughput relative to perfectly-scaled baseline throughput.
    pub efficiency: f64,
    pub iteration_seconds: f64,
}

/// Predict cluster throughput and scaling efficiency relative to a
/// `baseline_n`-worker run of the same per-worker configuration (the baseline
/// uses its squarest grid). Assumes zero overlap of compute and
/// communication, so communication cost is an upper bound.
pub fn predict_efficiency(
    spec: &ClusterSpec,
    link: &LinkModel,
    algorithm: Algorithm,
    baseline_n: u32,
) -> Result<EfficiencyPrediction, CostError> {
    spec.validate()?;
    if baseline_n == 0 {
        return Err(CostError::InvalidCluster(
            "baseline_n must be positive".into(),
        ));
    }
    let baseline = ClusterSpec {
        topology: GridTopology::squarest(baseline_n)
            .map_err(|e| CostError::InvalidCluster(e.to_string()))?,
        ..*spec
    };
    let iter_n = spec.iteration_seconds(link, algorithm);
    let iter_b = baseline.iteration_seconds(link, algorithm);
    let n = spec.topology.n_ranks() as f64;
    let throughput = n * spec.per_worker_batch as f64 / iter_n;
    let baseline_throughput = baseline_n as f64 * spec.per_worker_batch as f64 / iter_b;
    let efficiency = throughput / ((n / baseline_n as f64) * baseline_throughput);
    Ok(EfficiencyPrediction {
        images_per_sec: throughput,
        efficiency,
        iteration_seconds: iter_n,
    })
}

/// Built-in grid sweep: the published large-cluster configurations this
/// model is meant to be compared against (1024 through 4096 ranks).
/// Exposed on the CLI as the `paper-grids` preset.
pub fn reference_grid_sweep() -> Vec<GridTopology> {
    [(32, 32), (64, 32), (64, 34), (72, 48), (64, 64)]
        .into_iter()
        .map(|(x, y)| GridTopology::from_extents(x, y).unwrap())
        .collect()
}
