//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `cargo test --test acceptance -- --nocapture` to
//! see them). Tolerances are pinned here, not configurable.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use torusred::bench::{run_inproc, BenchOptions};
use torusred::collectives::{run_single_threaded, Algorithm, ReductionPolicy};
use torusred::costmodel::{
    self, compare_with_stats, predict_efficiency, predict_time, ClusterSpec, LinkModel,
};
use torusred::element::Dtype;
use torusred::largebatch::{lars_step, smooth_labels, smoothed_cross_entropy, LarsConfig};
use torusred::sim::{run_trainsim, TrainSimSpec};
use torusred::topology::GridTopology;
use torusred::verify::{self, VerifyOptions};
use torusred::LrConfigB64;

fn pass(id: u32, what: &str) {
    println!("ACCEPTANCE {id:2} PASS - {what}");
}

#[test]
fn criterion_01_op_count_reproduction() {
    for topo in costmodel::reference_grid_sweep() {
        let torus = costmodel::trace(Algorithm::Torus, &topo, 1 << 20, 2);
        assert_eq!(
            torus.horizontal_steps(),
            2 * (topo.x() as u64 - 1),
            "torus horizontal steps on {topo}"
        );
        let ring = costmodel::trace(Algorithm::Ring, &topo, 1 << 20, 2);
        assert_eq!(
            ring.total_steps(),
            2 * (topo.n_ranks() as u64 - 1),
            "ring steps on {topo}"
        );
    }
    // The headline 32x32 numbers.
    let g = GridTopology::from_extents(32, 32).unwrap();
    assert_eq!(
        costmodel::trace(Algorithm::Torus, &g, 1, 1).horizontal_steps(),
        62
    );
    assert_eq!(
        costmodel::trace(Algorithm::Ring, &g, 1, 1).total_steps(),
        2046
    );
    pass(
        1,
        "torus horizontal steps 2(X-1), ring steps 2(N-1) on every stock grid",
    );
}

#[test]
fn criterion_02_vertical_volume_x_times_smaller() {
    let mut grids = costmodel::reference_grid_sweep();
    grids.extend(
        [(2u32, 2u32), (4, 2), (2, 4), (8, 8), (3, 5)]
            .into_iter()
            .map(|(x, y)| GridTopology::from_extents(x, y).unwrap()),
    );
    for topo in grids {
        for (elements, element_bytes) in [(1_000_000u64, 2u64), (999_983, 4), (64, 8), (1, 4)] {
            let torus = costmodel::trace(Algorithm::Torus, &topo, elements, element_bytes);
            let hier = costmodel::trace(Algorithm::Hierarchical, &topo, elements, element_bytes);
            let x = topo.x() as i64;
            let diff = x * torus.phases[1].per_step_payload_bytes as i64
                - hier.phases[1].per_step_payload_bytes as i64;
            let slack = x * element_bytes as i64;
            assert!(
                diff.abs() <= slack,
                "{topo}, D={elements}: X*torus={} hier={}",
                x * torus.phases[1].per_step_payload_bytes as i64,
                hier.phases[1].per_step_payload_bytes
            );
        }
    }
    pass(
        2,
        "hierarchical phase-2 payload = X * torus phase-2 payload within partition slack",
    );
}

#[test]
fn criterion_03_oracle_equivalence_full_matrix() {
    let start = Instant::now();
    let report = verify::run(&VerifyOptions::full()).unwrap();
    let elapsed = start.elapsed();
    assert!(
        report.passed,
        "{} of {} verification cases failed",
        report.failures, report.checked
    );
    assert!(elapsed < Duration::from_secs(60), "matrix took {elapsed:?}");
    pass(
        3,
        &format!(
            "all {} cases within 1e-5 (f32) / 1e-12 (f64) of the sequential oracle in {:.1?}",
            report.checked, elapsed
        ),
    );
}

#[test]
fn criterion_04_trace_matches_instrumented_execution() {
    let grids = [
        (1u32, 1u32),
        (2, 2),
        (4, 2),
        (2, 4),
        (3, 3),
        (4, 4),
        (8, 8),
        (1, 4),
        (4, 1),
        (6, 4),
    ];
    for (x, y) in grids {
        let topo = GridTopology::from_extents(x, y).unwrap();
        let n = topo.n_ranks();
        for algorithm in Algorithm::ALL {
            for length in [1000usize, 7] {
                let mut bufs: Vec<Vec<f32>> = (0..n).map(|r| vec![r as f32; length]).collect();
                let stats = run_single_threaded(
                    algorithm,
                    &topo,
                    &mut bufs,
                    Dtype::F32,
                    Default::default(),
                )
                .unwrap();
                let trace = costmodel::trace(algorithm, &topo, length as u64, 4);
                for row in compare_with_stats(&trace, &stats) {
                    assert!(
                        row.agree,
                        "{algorithm} {x}x{y} len {length} phase {}: trace {} steps/{}B, \
                         observed {} steps/{}B",
                        row.phase,
                        row.trace_steps,
                        row.trace_per_step_bytes,
                        row.observed_steps,
                        row.observed_max_payload_bytes
                    );
                }
                // Ring phases involve every rank in every step: per-rank send
                // counts equal the step counts exactly.
                if matches!(algorithm, Algorithm::Ring | Algorithm::Torus) {
                    for phase_stats in stats.phases.values() {
                        for (&rank, &sends) in &phase_stats.sends_per_rank {
                            assert_eq!(
                                sends,
                                phase_stats.sequential_steps(),
                                "{algorithm} {x}x{y}: rank {rank} send count"
                            );
                        }
                    }
                }
            }
        }
    }
    pass(
        4,
        "instrumented send counts equal trace step counts for every (algorithm, grid)",
    );
}

#[test]
fn criterion_05_latency_dominance() {
    // Model sweep: any positive alpha, X,Y >= 2 puts the torus ahead.
    for n in [4u32, 16, 64, 256, 1024] {
        let factorizations = (2..=n / 2)
            .filter(|x| n % x == 0 && n / x >= 2)
            .map(|x| (x, n / x));
        for (x, y) in factorizations {
            let topo = GridTopology::new(n, x, y).unwrap();
            for alpha in [1e-6, 1e-4, 1e-2] {
                for beta in [1e8, 1e10, 1e12] {
                    for d in [1u64, 1000, 1 << 20] {
                        let link = LinkModel::new(alpha, beta).unwrap();
                        let torus =
                            predict_time(&costmodel::trace(Algorithm::Torus, &topo, d, 4), &link);
                        let ring =
                            predict_time(&costmodel::trace(Algorithm::Ring, &topo, d, 4), &link);
                        assert!(
                            torus < ring,
                            "{x}x{y} alpha={alpha} beta={beta} D={d}: {torus} !< {ring}"
                        );
                    }
                }
            }
        }
    }
    // Empirical confirmation at 16 ranks with an injected per-message delay.
    let topo = GridTopology::from_extents(4, 4).unwrap();
    let bench = |algorithm| {
        run_inproc(&BenchOptions {
            algorithm,
            topo,
            elements: 16,
            policy: ReductionPolicy::f32(),
            iters: 5,
            warmup: 2,
            send_delay: Some(Duration::from_micros(300)),
            seed: 3,
        })
        .unwrap()
    };
    let torus = bench(Algorithm::Torus);
    let ring = bench(Algorithm::Ring);
    assert!(
        torus.median_seconds < ring.median_seconds,
        "measured: torus {} vs ring {}",
        torus.median_seconds,
        ring.median_seconds
    );
    pass(
        5,
        &format!(
            "torus < ring across the sweep; measured at 16 ranks: {:.1}ms vs {:.1}ms",
            torus.median_seconds * 1e3,
            ring.median_seconds * 1e3
        ),
    );
}

#[test]
fn criterion_06_efficiency_ordering_over_cluster_sizes() {
    // Documented plausible operating point plus the 4-worker compute rate
    // (2565 images/s over 4 workers) and a 102 MiB gradient.
    let link = LinkModel::plausible_cluster();
    let sweep = [(32u32, 32u32), (64, 32), (72, 48), (64, 64)];
    let mut efficiencies = Vec::new();
    for (x, y) in sweep {
        let spec = ClusterSpec {
            topology: GridTopology::from_extents(x, y).unwrap(),
            gradient_bytes: 102 * 1024 * 1024,
            per_gpu_images_per_sec: 2565.0 / 4.0,
            per_worker_batch: 32,
        };
        let prediction = predict_efficiency(&spec, &link, Algorithm::Torus, 4).unwrap();
        efficiencies.push((spec.topology.n_ranks(), prediction.efficiency));
    }
    for pair in efficiencies.windows(2) {
        assert!(
            pair[1].1 < pair[0].1,
            "efficiency must decrease monotonically: {efficiencies:?}"
        );
    }
    pass(
        6,
        &format!(
            "efficiency strictly decreasing over 1024/2048/3456/4096 ranks: {}",
            efficiencies
                .iter()
                .map(|(n, e)| format!("{n}:{:.2}%", e * 100.0))
                .collect::<Vec<_>>()
                .join(" > ")
        ),
    );
}

#[test]
fn criterion_07_schedule_formulas() {
    let cfg = LrConfigB64::default();
    assert_eq!(cfg.lr(0.0).unwrap(), 0.2);
    // Zero at the decay end regardless of branch: check from both sides of
    // the switch by construction (29- and 50-based branches share the
    // quadratic factor).
    assert_eq!(cfg.lr(90.0).unwrap(), 0.0);
    let early_only = LrConfigB64 {
        switch_epoch: 1000.0,
        ..cfg
    };
    assert_eq!(early_only.lr(90.0).unwrap(), 0.0);
    let late_only = LrConfigB64 {
        switch_epoch: 0.0,
        warmup_epochs: 0.0,
        ..cfg
    };
    assert_eq!(late_only.lr(90.0).unwrap(), 0.0);

    let dataset = 1_281_167.0;
    for epoch in [0.0, 10.0, 30.0, 45.0, 89.0, 90.0] {
        let m = cfg.momentum(epoch, 32768.0, dataset).unwrap();
        assert!((m - 0.9).abs() < 1e-12, "momentum at epoch {epoch}: {m}");
    }
    // Momentum is independent of the epoch at a fixed batch.
    let reference = cfg.momentum(0.0, 55296.0, dataset).unwrap();
    for epoch in [10.0, 50.0, 89.0] {
        assert_eq!(cfg.momentum(epoch, 55296.0, dataset).unwrap(), reference);
    }
    pass(
        7,
        "lr_b(0)=0.2, lr_b(90)=0 on both branches, momentum(32K)=0.9 for all epochs",
    );
}

#[test]
fn criterion_08_label_smoothing_and_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    // Distribution properties over random (label, epsilon, classes).
    for _ in 0..200 {
        let classes = rng.random_range(2usize..300);
        let label = rng.random_range(0..classes);
        let epsilon = rng.random_range(0.0..=1.0);
        let q = smooth_labels(label, epsilon, classes).unwrap();
        let sum: f64 = q.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(q.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    // epsilon = 0 reduces to one-hot.
    let q = smooth_labels::<f64>(3, 0.0, 8).unwrap();
    assert_eq!(q.iter().filter(|&&v| v == 1.0).count(), 1);
    assert_eq!(q[3], 1.0);

    // Gradient against central finite differences on 100 random instances.
    for _ in 0..100 {
        let classes = rng.random_range(2usize..12);
        let logits: Vec<f64> = (0..classes).map(|_| rng.random_range(-3.0..3.0)).collect();
        let label = rng.random_range(0..classes);
        let q = smooth_labels(label, 0.1, classes).unwrap();
        let (_, grad) = smoothed_cross_entropy(&logits, &q).unwrap();
        let h = 1e-6;
        for i in 0..classes {
            let mut plus = logits.clone();
            plus[i] += h;
            let mut minus = logits.clone();
            minus[i] -= h;
            let fd = (smoothed_cross_entropy(&plus, &q).unwrap().0
                - smoothed_cross_entropy(&minus, &q).unwrap().0)
                / (2.0 * h);
            let denom = grad[i].abs().max(1e-4);
            assert!(
                (grad[i] - fd).abs() / denom < 1e-4,
                "component {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }
    pass(
        8,
        "smoothed labels are distributions; loss gradient matches finite differences",
    );
}

#[test]
fn criterion_09_lars_update_norm_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = LarsConfig {
        coefficient: 0.01,
        eps: 0.0,
        weight_decay: 0.0,
    };
    for trial in 0..50 {
        let len = rng.random_range(1usize..200);
        let weights0: Vec<f64> = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let grads: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights_norm: f64 = weights0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let grads_norm: f64 = grads.iter().map(|v| v * v).sum::<f64>().sqrt();
        if weights_norm == 0.0 || grads_norm == 0.0 {
            continue;
        }
        let global_lr = rng.random_range(0.01..1.0);
        let mut weights = weights0.clone();
        let mut velocity = vec![0.0; len];
        lars_step(&mut weights, &grads, &mut velocity, global_lr, 0.0, &cfg).unwrap();
        let update_norm: f64 = weights0
            .iter()
            .zip(&weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let expected = global_lr * 0.01 * weights_norm;
        assert!(
            (update_norm - expected).abs() / expected < 1e-12,
            "trial {trial}: {update_norm} vs {expected}"
        );
    }
    pass(
        9,
        "pre-momentum LARS update norm equals lr * 0.01 * ||w|| within 1e-12",
    );
}

#[test]
fn criterion_10_end_to_end_training_equivalence() {
    let start = Instant::now();
    // K=4 workers, torus synchronization, f64, 50 steps, LARS with label
    // smoothing: the defaults.
    let spec = TrainSimSpec::default();
    let report = run_trainsim(&spec).unwrap();
    let elapsed = start.elapsed();
    assert!(
        report.max_rel_divergence < 1e-8,
        "divergence {} exceeds 1e-8",
        report.max_rel_divergence
    );
    assert!(report.passed);
    assert!(report.step0_gradient_rel_error < 1e-12);
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    pass(
        10,
        &format!(
            "distributed vs single-process divergence {:.2e} over {} steps in {:.1?}",
            report.max_rel_divergence, report.steps, elapsed
        ),
    );
}

#[test]
fn criterion_11_determinism_with_fixed_seed() {
    // Verification reports.
    let opts = VerifyOptions {
        rank_counts: vec![1, 2, 4, 8],
        ..Default::default()
    };
    let a = serde_json::to_string(&verify::run(&opts).unwrap()).unwrap();
    let b = serde_json::to_string(&verify::run(&opts).unwrap()).unwrap();
    assert_eq!(a, b, "verification reports must be byte-identical");
    // Training simulation reports.
    let spec = TrainSimSpec {
        steps: 10,
        ..Default::default()
    };
    let a = serde_json::to_string(&run_trainsim(&spec).unwrap()).unwrap();
    let b = serde_json::to_string(&run_trainsim(&spec).unwrap()).unwrap();
    assert_eq!(a, b, "training reports must be byte-identical");
    // Cost traces and raw collective outputs.
    let topo = GridTopology::from_extents(4, 2).unwrap();
    let trace_a =
        serde_json::to_string(&costmodel::trace(Algorithm::Torus, &topo, 999, 4)).unwrap();
    let trace_b =
        serde_json::to_string(&costmodel::trace(Algorithm::Torus, &topo, 999, 4)).unwrap();
    assert_eq!(trace_a, trace_b);
    let run_once = || {
        let mut bufs: Vec<Vec<f32>> = (0..8)
            .map(|r| (0..50).map(|i| ((r * 50 + i) as f32).sin()).collect())
            .collect();
        run_single_threaded(
            Algorithm::Torus,
            &topo,
            &mut bufs,
            Dtype::F32,
            Default::default(),
        )
        .unwrap();
        bufs.into_iter()
            .map(|b| b.into_iter().map(f32::to_bits).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    assert_eq!(
        run_once(),
        run_once(),
        "collective outputs must be bit-identical"
    );
    pass(
        11,
        "repeated seeded runs produce byte-identical reports and bit-identical buffers",
    );
}

#[test]
fn criterion_12_mixed_precision_accumulation() {
    use half::f16;
    let topo = GridTopology::from_extents(4, 4).unwrap();
    let length = 256;
    let mut sum_err_wide = 0.0f64;
    let mut sum_err_narrow = 0.0f64;
    let mut count = 0u64;
    for trial in 0..100u64 {
        let inputs: Vec<Vec<f64>> = (0..16)
            .map(|rank| {
                let mut rng = ChaCha8Rng::seed_from_u64(trial * 977 + rank);
                (0..length).map(|_| rng.random_range(0.0..1.0)).collect()
            })
            .collect();
        let mut oracle = vec![0.0f64; length];
        for input in &inputs {
            for (acc, v) in oracle.iter_mut().zip(input) {
                *acc += v;
            }
        }
        let mut wide: Vec<Vec<f32>> = inputs
            .iter()
            .map(|i| i.iter().map(|&v| v as f32).collect())
            .collect();
        run_single_threaded(
            Algorithm::Torus,
            &topo,
            &mut wide,
            Dtype::F16,
            Default::default(),
        )
        .unwrap();
        let mut narrow: Vec<Vec<f16>> = inputs
            .iter()
            .map(|i| i.iter().map(|&v| f16::from_f64(v)).collect())
            .collect();
        run_single_threaded(
            Algorithm::Torus,
            &topo,
            &mut narrow,
            Dtype::F16,
            Default::default(),
        )
        .unwrap();
        for rank in 0..16usize {
            for i in 0..length {
                sum_err_wide += (wide[rank][i] as f64 - oracle[i]).abs();
                sum_err_narrow += (f64::from(narrow[rank][i]) - oracle[i]).abs();
                count += 1;
            }
        }
    }
    let mean_wide = sum_err_wide / count as f64;
    let mean_narrow = sum_err_narrow / count as f64;
    assert!(
        mean_wide <= mean_narrow,
        "f16-wire/f32-accum error {mean_wide} exceeds all-f16 error {mean_narrow}"
    );
    pass(
        12,
        &format!(
            "mean |err| vs f64 oracle: f32 accumulation {mean_wide:.2e} <= f16 accumulation {mean_narrow:.2e}"
        ),
    );
}
