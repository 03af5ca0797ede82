//! Desk-scale data-parallel SGD simulation.
//!
//! Runs the same training twice: (a) K workers that each compute gradients on
//! their shard of every batch and average them through a collective, and (b) a
//! single process over the full K*b batch. In exact arithmetic the two are
//! identical; the report measures how far floating-point summation order and
//! the collective actually let them drift.
//!
//! Everything is seeded and single-threaded (the collective runs under the
//! round-based scheduler), so a report is a pure function of its spec.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collectives::{run_single_threaded, Algorithm, CollectiveError};
use crate::element::Dtype;
use crate::largebatch::{
    lars_step, momentum_sgd_step, smooth_labels, smoothed_cross_entropy, LargeBatchError,
    LarsConfig,
};
use crate::topology::GridTopology;
use crate::transport::inproc::FabricOptions;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Collective(#[from] CollectiveError),
    #[error(transparent)]
    LargeBatch(#[from] LargeBatchError),
    #[error("internal check failed: {0}")]
    Internal(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Multinomial logistic regression (one linear layer).
    Logistic,
    /// Two-layer perceptron with a tanh hidden layer.
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Lars,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainSimSpec {
    pub model: ModelKind,
    /// Hidden width for the MLP; ignored by the logistic model.
    pub hidden: usize,
    pub dataset_size: usize,
    pub features: usize,
    pub classes: usize,
    pub workers: u32,
    pub per_worker_batch: usize,
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub label_smoothing: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub algorithm: Algorithm,
    /// Worker grid; the squarest factorization of the worker count if absent.
    pub grid: Option<GridTopology>,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for TrainSimSpec {
    fn default() -> Self {
        TrainSimSpec {
            model: ModelKind::Logistic,
            hidden: 16,
            dataset_size: 512,
            features: 20,
            classes: 10,
            workers: 4,
            per_worker_batch: 8,
            steps: 50,
            optimizer: OptimizerKind::Lars,
            label_smoothing: 0.1,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            algorithm: Algorithm::Torus,
            grid: None,
            seed: 42,
            tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DivergenceReport {
    pub workers: u32,
    pub per_worker_batch: usize,
    pub steps: usize,
    pub model: ModelKind,
    pub optimizer: OptimizerKind,
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Relative error between the collective's gradient average and the
    /// sequentially computed average of per-shard gradients at step 0.
    pub step0_gradient_rel_error: f64,
    /// Largest parameter gap between the two runs across all steps, relative
    /// to the largest-magnitude parameter of the single-process run.
    pub max_rel_divergence: f64,
    pub final_loss_single: f64,
    pub final_loss_distributed: f64,
    pub final_loss_abs_diff: f64,
    pub tolerance: f64,
    pub passed: bool,
}

struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

fn synth_dataset(size: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut features = Vec::with_capacity(size);
    let mut labels = Vec::with_capacity(size);
    for i in 0..size {
        let label = i % classes;
        features.push(
            means[label]
                .iter()
                .map(|&m| m + rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        labels.push(label);
    }
    Dataset { features, labels }
}

#[derive(Clone)]
struct Layer {
    values: Vec<f64>,
    velocity: Vec<f64>,
    /// Layers can individually opt out of trust-ratio scaling; by default it
    /// applies everywhere, biases included.
    use_lars: bool,
}

impl Layer {
    fn new(len: usize, use_lars: bool) -> Self {
        Layer {
            values: vec![0.0; len],
            velocity: vec![0.0; len],
            use_lars,
        }
    }
}

#[derive(Clone)]
struct Model {
    kind: ModelKind,
    features: usize,
    classes: usize,
    hidden: usize,
    layers: Vec<Layer>,
}

impl Model {
    fn new(spec: &TrainSimSpec) -> Self {
        let (features, classes, hidden) = (spec.features, spec.classes, spec.hidden);
        let mut layers = match spec.model {
            ModelKind::Logistic => {
                vec![
                    Layer::new(classes * features, true),
                    Layer::new(classes, true),
                ]
            }
            ModelKind::Mlp => vec![
                Layer::new(hidden * features, true),
                Layer::new(hidden, true),
                Layer::new(classes * hidden, true),
                Layer::new(classes, true),
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x9e37_79b9));
        for (i, layer) in layers.iter_mut().enumerate() {
            // Biases (odd indices) start at zero.
            if i % 2 == 0 {
                let fan_in = if i == 0 { features } else { hidden };
                let scale = 1.0 / (fan_in as f64).sqrt();
                for v in layer.values.iter_mut() {
                    *v = rng.random_range(-scale..scale);
                }
            }
        }
        Model {
            kind: spec.model,
            features,
            classes,
            hidden,
            layers,
        }
    }

    fn param_len(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    fn logits(&self, x: &[f64], hidden_out: &mut Vec<f64>) -> Vec<f64> {
        match self.kind {
            ModelKind::Logistic => {
                let w = &self.layers[0].values;
                let b = &self.layers[1].values;
                (0..self.classes)
                    .map(|c| {
                        b[c] + x
                            .iter()
                            .enumerate()
                            .map(|(d, &xv)| w[c * self.features + d] * xv)
                            .sum::<f64>()
                    })
                    .collect()
            }
            ModelKind::Mlp => {
                let w1 = &self.layers[0].values;
                let b1 = &self.layers[1].values;
                let w2 = &self.layers[2].values;
                let b2 = &self.layers[3].values;
                hidden_out.clear();
                for j in 0..self.hidden {
                    let z = b1[j]
                        + x.iter()
                            .enumerate()
                            .map(|(d, &xv)| w1[j * self.features + d] * xv)
                            .sum::<f64>();
                    hidden_out.push(z.tanh());
                }
                (0..self.classes)
                    .map(|c| {
                        b2[c]
                            + hidden_out
                                .iter()
                                .enumerate()
                                .map(|(j, &h)| w2[c * self.hidden + j] * h)
                                .sum::<f64>()
                    })
                    .collect()
            }
        }
    }

    /// Mean loss and mean per-layer gradients over the given sample indices,
    /// accumulated in index order.
    fn loss_and_grads(
        &self,
        data: &Dataset,
        indices: &[usize],
        smoothing: f64,
    ) -> Result<(f64, Vec<Vec<f64>>), LargeBatchError> {
        let mut grads: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| vec![0.0; l.values.len()])
            .collect();
        let mut loss_sum = 0.0;
        let mut hidden_buf = Vec::with_capacity(self.hidden);
        for &idx in indices {
            let x = &data.features[idx];
            let target = smooth_labels(data.labels[idx], smoothing, self.classes)?;
            let logits = self.logits(x, &mut hidden_buf);
            let (loss, dlogits) = smoothed_cross_entropy(&logits, &target)?;
            loss_sum += loss;
            match self.kind {
                ModelKind::Logistic => {
                    for c in 0..self.classes {
                        let g = dlogits[c];
                        for (d, &xv) in x.iter().enumerate() {
                            grads[0][c * self.features + d] += g * xv;
                        }
                        grads[1][c] += g;
                    }
                }
                ModelKind::Mlp => {
                    let w2 = &self.layers[2].values;
                    let mut dhidden = vec![0.0; self.hidden];
                    for c in 0..self.classes {
                        let g = dlogits[c];
                        for (j, &h) in hidden_buf.iter().enumerate() {
                            grads[2][c * self.hidden + j] += g * h;
                            dhidden[j] += w2[c * self.hidden + j] * g;
                        }
                        grads[3][c] += g;
                    }
                    for j in 0..self.hidden {
                        let dz = dhidden[j] * (1.0 - hidden_buf[j] * hidden_buf[j]);
                        for (d, &xv) in x.iter().enumerate() {
                            grads[0][j * self.features + d] += dz * xv;
                        }
                        grads[1][j] += dz;
                    }
                }
            }
        }
        let scale = 1.0 / indices.len() as f64;
        for layer in grads.iter_mut() {
            for g in layer.iter_mut() {
                *g *= scale;
            }
        }
        Ok((loss_sum * scale, grads))
    }

    fn apply_update(
        &mut self,
        grads: &[Vec<f64>],
        spec: &TrainSimSpec,
    ) -> Result<(), LargeBatchError> {
        let lars_cfg = LarsConfig {
            coefficient: 0.01,
            eps: 1e-6,
            weight_decay: spec.weight_decay,
        };
        for (layer, grad) in self.layers.iter_mut().zip(grads) {
            match spec.optimizer {
                OptimizerKind::Lars if layer.use_lars => lars_step(
                    &mut layer.values,
                    grad,
                    &mut layer.velocity,
                    spec.learning_rate,
                    spec.momentum,
                    &lars_cfg,
                )?,
                _ => momentum_sgd_step(
                    &mut layer.values,
                    grad,
                    &mut layer.velocity,
                    spec.learning_rate,
                    spec.momentum,
                    spec.weight_decay,
                )?,
            }
        }
        Ok(())
    }
}

fn flatten(grads: &[Vec<f64>]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.iter().copied()).collect()
}

fn unflatten(flat: &[f64], shape_of: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(shape_of.len());
    let mut offset = 0;
    for layer in shape_of {
        out.push(flat[offset..offset + layer.len()].to_vec());
        offset += layer.len();
    }
    out
}

fn max_abs(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |acc, v| acc.max(v.abs()))
}

fn validate(spec: &TrainSimSpec) -> Result<GridTopology, SimError> {
    if spec.workers == 0
        || spec.per_worker_batch == 0
        || spec.steps == 0
        || spec.features == 0
        || spec.classes == 0
        || spec.dataset_size == 0
    {
        return Err(SimError::InvalidSpec("counts must be positive".into()));
    }
    if spec.model == ModelKind::Mlp && spec.hidden == 0 {
        return Err(SimError::InvalidSpec(
            "mlp needs a positive hidden width".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.label_smoothing) {
        return Err(SimError::InvalidSpec(
            "label smoothing must lie in [0, 1]".into(),
        ));
    }
    let topo = match spec.grid {
        Some(g) => {
            if g.n_ranks() != spec.workers {
                return Err(SimError::InvalidSpec(format!(
                    "grid {g} does not match {} workers",
                    spec.workers
                )));
            }
            g
        }
        None => GridTopology::squarest(spec.workers)
            .map_err(|e| SimError::InvalidSpec(e.to_string()))?,
    };
    Ok(topo)
}

/// Run the distributed and single-process trainings side by side and report
/// their divergence.
pub fn run_trainsim(spec: &TrainSimSpec) -> Result<DivergenceReport, SimError> {
    let topo = validate(spec)?;
    let k = spec.workers as usize;
    let global_batch = k * spec.per_worker_batch;
    let data = synth_dataset(spec.dataset_size, spec.features, spec.classes, spec.seed);

    let mut single = Model::new(spec);
    let mut replicas: Vec<Model> = (0..k).map(|_| single.clone()).collect();

    let mut max_rel_divergence = 0.0f64;
    let mut step0_gradient_rel_error = 0.0f64;
    let mut final_loss_single = 0.0;
    let mut final_loss_distributed = 0.0;

    for step in 0..spec.steps {
        let indices: Vec<usize> = (0..global_batch)
            .map(|i| (step * global_batch + i) % spec.dataset_size)
            .collect();

        // (a) distributed: per-shard mean gradients, summed by the collective,
        // divided by K exactly once.
        let mut shard_losses = Vec::with_capacity(k);
        let mut shard_grads = Vec::with_capacity(k);
        for (j, replica) in replicas.iter().enumerate() {
            let shard = &indices[j * spec.per_worker_batch..(j + 1) * spec.per_worker_batch];
            let (loss, grads) = replica.loss_and_grads(&data, shard, spec.label_smoothing)?;
            shard_losses.push(loss);
            shard_grads.push(grads);
        }
        let mut bufs: Vec<Vec<f64>> = shard_grads.iter().map(|g| flatten(g)).collect();
        run_single_threaded(
            spec.algorithm,
            &topo,
            &mut bufs,
            Dtype::F64,
            FabricOptions::default(),
        )?;
        for buf in &bufs[1..] {
            if buf
                .iter()
                .zip(&bufs[0])
                .any(|(a, b)| a.to_bits() != b.to_bits())
            {
                return Err(SimError::Internal(
                    "collective left ranks with different sums".into(),
                ));
            }
        }
        let averaged: Vec<f64> = bufs[0].iter().map(|&v| v / k as f64).collect();

        if step == 0 {
            // Independent route: sequential mean of the per-shard gradients.
            let mut sequential = vec![0.0f64; single.param_len()];
            for grads in &shard_grads {
                for (acc, v) in sequential.iter_mut().zip(flatten(grads)) {
                    *acc += v;
                }
            }
            for v in sequential.iter_mut() {
                *v /= k as f64;
            }
            let diff = max_abs(averaged.iter().zip(&sequential).map(|(a, b)| a - b));
            let scale = max_abs(sequential.iter().copied()).max(1e-300);
            step0_gradient_rel_error = diff / scale;
        }

        let averaged_layers = unflatten(&averaged, &shard_grads[0]);
        for replica in replicas.iter_mut() {
            replica.apply_update(&averaged_layers, spec)?;
        }

        // (b) single process over the whole batch.
        let (loss_single, grads_single) =
            single.loss_and_grads(&data, &indices, spec.label_smoothing)?;
        single.apply_update(&grads_single, spec)?;

        // Track the worst parameter gap, relative to the largest parameter.
        let dist_params = flatten(
            &replicas[0]
                .layers
                .iter()
                .map(|l| l.values.clone())
                .collect::<Vec<_>>(),
        );
        let single_params = flatten(
            &single
                .layers
                .iter()
                .map(|l| l.values.clone())
                .collect::<Vec<_>>(),
        );
        let diff = max_abs(dist_params.iter().zip(&single_params).map(|(a, b)| a - b));
        let scale = max_abs(single_params.iter().copied()).max(1e-300);
        max_rel_divergence = max_rel_divergence.max(diff / scale);

        if step + 1 == spec.steps {
            final_loss_single = loss_single;
            final_loss_distributed = shard_losses.iter().sum::<f64>() / k as f64;
        }
    }

    Ok(DivergenceReport {
        workers: spec.workers,
        per_worker_batch: spec.per_worker_batch,
        steps: spec.steps,
        model: spec.model,
        optimizer: spec.optimizer,
        algorithm: spec.algorithm,
        seed: spec.seed,
        step0_gradient_rel_error,
        max_rel_divergence,
        final_loss_single,
        final_loss_distributed,
        final_loss_abs_diff: (final_loss_single - final_loss_distributed).abs(),
        tolerance: spec.tolerance,
        passed: max_rel_divergence <= spec.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_divergence_is_summation_noise_only() {
        let spec = TrainSimSpec {
            optimizer: OptimizerKind::Sgd,
            label_smoothing: 0.0,
            weight_decay: 0.0,
            ..Default::default()
        };
        let report = run_trainsim(&spec).unwrap();
        assert!(report.max_rel_divergence < 1e-10, "{report:?}");
        assert!(report.step0_gradient_rel_error < 1e-12);
        assert!(report.passed);
    }

    #[test]
    fn single_worker_is_bitwise_identical() {
        let spec = TrainSimSpec {
            workers: 1,
            ..Default::default()
        };
        let report = run_trainsim(&spec).unwrap();
        assert_eq!(report.max_rel_divergence, 0.0);
        assert_eq!(report.final_loss_abs_diff, 0.0);
    }

    #[test]
    fn lars_with_smoothing_stays_within_tolerance() {
        let report = run_trainsim(&TrainSimSpec::default()).unwrap();
        assert!(report.max_rel_divergence < 1e-8, "{report:?}");
        assert!(report.passed);
    }

    #[test]
    fn mlp_variant_runs() {
        let spec = TrainSimSpec {
            model: ModelKind::Mlp,
            steps: 10,
            ..Default::default()
        };
        let report = run_trainsim(&spec).unwrap();
        assert!(report.max_rel_divergence < 1e-8, "{report:?}");
    }

    #[test]
    fn ring_and_hierarchical_also_agree() {
        for algorithm in [Algorithm::Ring, Algorithm::Hierarchical] {
            let spec = TrainSimSpec {
                algorithm,
                steps: 10,
                ..Default::default()
            };
            let report = run_trainsim(&spec).unwrap();
            assert!(report.passed, "{algorithm}: {report:?}");
        }
    }

    #[test]
    fn reports_are_deterministic() {
        let spec = TrainSimSpec {
            steps: 5,
            ..Default::default()
        };
        let a = serde_json::to_string(&run_trainsim(&spec).unwrap()).unwrap();
        let b = serde_json::to_string(&run_trainsim(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_specs_rejected() {
        let spec = TrainSimSpec {
            workers: 0,
            ..Default::default()
        };
        assert!(matches!(run_trainsim(&spec), Err(SimError::InvalidSpec(_))));
        let spec = TrainSimSpec {
            workers: 4,
            grid: Some(GridTopology::from_extents(3, 1).unwrap()),
            ..Default::default()
        };
        assert!(matches!(run_trainsim(&spec), Err(SimError::InvalidSpec(_))));
    }
}
