//! Release acceptance checks, one test per numbered criterion. Each test
//! prints a `criterion NN: PASS ...` line with the measured values (visible
//! under `--nocapture`); the harness result line carries the same verdict.
//!
//! Criteria 7-10 share one expensive fixture: a seeded 7-case phantom
//! cohort evaluated by two independent leave-one-out runs.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use growthcast_core::convnet::{
    batch_loss_and_grads, init_weights, train_seeded, BatchMasks, NetSpec, NetWeights, TrainHyper,
};
use growthcast_core::eval::fold::{run_loocv, ExperimentConfig, LoocvReport};
use growthcast_core::eval::report::{render_csv, render_json, render_text};
use growthcast_core::eval::{compute_metrics, ConfusionCounts, GrowthZone, GrowthZoneConfig, Metrics};
use growthcast_core::growthsim::{generate_cohort, PhantomConfig};
use growthcast_core::learner::{primal_objective, rfe_rank, train_svm, SvmConfig};
use growthcast_core::preprocess::{normalize_icvf, normalize_suv, PatchConfig};
use growthcast_core::seed::{stage_rng, Stage};
use growthcast_core::volume::{Dims, TumorMask};

// ---------------------------------------------------------------------------
// Criterion 1: analytic ConvNet gradients match central finite differences.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_net_gradients_match_finite_differences() {
    let started = Instant::now();
    // Small widths keep the full parameter sweep cheap; the layer graph is
    // the production one. f64 weights keep the difference quotient stable.
    let spec = NetSpec {
        input_hw: 17,
        input_channels: 3,
        conv1_filters: 2,
        conv2_filters: 3,
        fc1_units: 8,
    };
    let weight_decay = 5.0e-4;
    let eps = 1.0e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let patches: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..spec.patch_len()).map(|_| (rng.gen::<f64>() * 255.0) as f32).collect())
        .collect();
    let labels = [true, false, false, true];
    let batch: Vec<(&[f32], bool)> =
        patches.iter().map(|p| p.as_slice()).zip(labels).collect();
    let mut weights = init_weights::<f64, _>(&spec, &mut rng).unwrap();
    // Fixed dropout masks make the loss a smooth deterministic function of
    // the weights, so the same masks must be reused by every evaluation.
    let masks = BatchMasks::sample(batch.len(), spec.fc1_units, 0.5, &mut rng).unwrap();

    let (_, analytic) = batch_loss_and_grads(&weights, &batch, &masks, weight_decay).unwrap();
    let l2 = |v: &[f64]| v.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut worst: (f64, &str) = (0.0, "none");
    for ti in 0..8 {
        let (name, len) = {
            let fields = weights.tensors.fields();
            (fields[ti].0, fields[ti].1.len())
        };
        let mut fd = vec![0.0f64; len];
        for k in 0..len {
            let orig = weights.tensors.fields()[ti].1[k];
            set_param(&mut weights, ti, k, orig + eps);
            let (loss_hi, _) = batch_loss_and_grads(&weights, &batch, &masks, weight_decay).unwrap();
            set_param(&mut weights, ti, k, orig - eps);
            let (loss_lo, _) = batch_loss_and_grads(&weights, &batch, &masks, weight_decay).unwrap();
            set_param(&mut weights, ti, k, orig);
            fd[k] = (loss_hi - loss_lo) / (2.0 * eps);
        }
        let analytic_t = analytic.fields()[ti].1;
        let diff: Vec<f64> = analytic_t.iter().zip(&fd).map(|(a, f)| a - f).collect();
        let rel = l2(&diff) / l2(analytic_t).max(l2(&fd)).max(1e-12);
        if rel > worst.0 {
            worst = (rel, name);
        }
        assert!(rel < 1.0e-4, "tensor {name}: relative gradient error {rel:.3e} >= 1e-4");
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:.1?}, budget 60s");
    println!(
        "criterion 01: PASS gradient check, worst tensor {} rel err {:.3e}, {elapsed:.1?}",
        worst.1, worst.0
    );
}

fn set_param(w: &mut NetWeights<f64>, tensor: usize, k: usize, value: f64) {
    let fields = w.tensors.fields_mut();
    fields[tensor].1[k] = value;
}

// ---------------------------------------------------------------------------
// Criterion 2: the coordinate-descent SVM reaches the same primal objective
// as an independent projected-subgradient solver.
// ---------------------------------------------------------------------------

/// Pegasos-style projected subgradient descent on the same primal, sharing
/// nothing with the dual coordinate-descent path. `F(0) = C` bounds the
/// optimum, so iterates are projected onto the ball of radius sqrt(2C).
fn subgradient_primal(xs: &[Vec<f64>], ys: &[bool], c: f64, iters: usize) -> f64 {
    let n = xs.len();
    let d = xs[0].len();
    let u = c / n as f64;
    // Augmented vector: w[..d] are the feature weights, w[d] is the bias.
    let mut w = vec![0.0f64; d + 1];
    let radius = (2.0 * c).sqrt();
    let mut best = f64::INFINITY;
    for t in 1..=iters {
        let mut grad = w.clone();
        for (x, &y) in xs.iter().zip(ys) {
            let s = if y { 1.0 } else { -1.0 };
            let f = w[..d].iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + w[d];
            if s * f < 1.0 {
                for (g, xj) in grad[..d].iter_mut().zip(x) {
                    *g -= u * s * xj;
                }
                grad[d] -= u * s;
            }
        }
        let step = 1.0 / t as f64;
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= step * gj;
        }
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > radius {
            let scale = radius / norm;
            for wj in &mut w {
                *wj *= scale;
            }
        }
        best = best.min(primal_objective(xs, ys, c, &w[..d], w[d]));
    }
    best
}

fn random_svm_problem(seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (50, 5);
    let w_star: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b_star: f64 = rng.gen_range(-0.5..0.5);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let f = w_star.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() + b_star;
        ys.push(f + rng.gen_range(-0.3..0.3) > 0.0);
        xs.push(x);
    }
    if ys.iter().all(|&y| y) || ys.iter().all(|&y| !y) {
        let flip = ys[0];
        ys[0] = !flip;
    }
    (xs, ys)
}

#[test]
fn criterion_02_svm_objective_matches_subgradient_oracle() {
    let started = Instant::now();
    let cfg = SvmConfig::default();
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let (xs, ys) = random_svm_problem(9000 + i);
        let model = train_svm(&xs, &ys, &cfg).unwrap();
        let cd = primal_objective(&xs, &ys, cfg.c, &model.w, model.b);
        let oracle = subgradient_primal(&xs, &ys, cfg.c, 400_000);
        let rel = (cd - oracle).abs() / oracle.abs().max(1e-12);
        worst = worst.max(rel);
        assert!(
            rel <= 1.0e-4,
            "problem {i}: coordinate descent {cd:.9} vs oracle {oracle:.9}, rel {rel:.3e}"
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:.1?}, budget 60s");
    println!(
        "criterion 02: PASS 20 problems, worst relative objective gap {worst:.3e}, {elapsed:.1?}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: recursive feature elimination recovers a planted feature.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_rfe_recovers_planted_feature() {
    let started = Instant::now();
    let cfg = SvmConfig::default();
    let prior = [2usize];
    let (n, d) = (60, 9);
    let mut hits = 0u32;
    for trial in 0..100u32 {
        let mut rng = stage_rng(42, Stage::RfeTrials(trial));
        let planted = loop {
            let j = rng.gen_range(0..d);
            if j != prior[0] {
                break j;
            }
        };
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let y: bool = rng.gen_bool(0.5);
            let s = if y { 1.0 } else { -1.0 };
            let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            x[planted] = 0.9 * s + 0.5 * rng.gen_range(-1.0..1.0);
            xs.push(x);
            ys.push(y);
        }
        if ys.iter().all(|&y| y) || ys.iter().all(|&y| !y) {
            let flip = ys[0];
            ys[0] = !flip;
        }
        let ranking = rfe_rank(&xs, &ys, &cfg, &prior).unwrap();
        assert_eq!(ranking[0], prior[0], "prior feature must rank first");
        let first_free = *ranking.iter().find(|&&j| j != prior[0]).unwrap();
        if first_free == planted {
            hits += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(hits >= 95, "planted feature ranked first in only {hits}/100 trials");
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:.1?}, budget 300s");
    println!("criterion 03: PASS planted feature ranked first in {hits}/100 trials, {elapsed:.1?}");
}

// ---------------------------------------------------------------------------
// Criterion 4: channel normalization values, including both window edges.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_channel_normalization_table() {
    // SUV: scale by 100, clamp to [100, 2600], map onto [0, 255]; each raw
    // value r inside the window lands at (r - 1) * 10.2.
    let suv_table = [
        (0.0, 0.0),     // scaled 0, clamped up to the low edge
        (0.5, 0.0),     // scaled 50, still below the window
        (1.0, 0.0),     // exactly the low window edge
        (1.5, 5.1),     // 0.5 * 10.2
        (2.0, 10.2),    // 1.0 * 10.2
        (5.0, 40.8),    // 4.0 * 10.2
        (10.0, 91.8),   // 9.0 * 10.2
        (13.5, 127.5),  // window midpoint
        (20.0, 193.8),  // 19.0 * 10.2
        (25.0, 244.8),  // 24.0 * 10.2
        (26.0, 255.0),  // exactly the high window edge
        (40.0, 255.0),  // scaled 4000, clamped down to the high edge
    ];
    // ICVF: a fraction in [0, 1] maps onto [0, 100].
    let icvf_table = [
        (0.0, 0.0), // low domain edge
        (1.0, 100.0), // high domain edge
        (0.125, 12.5),
        (0.2, 20.0),
        (0.25, 25.0),
        (0.5, 50.0),
        (0.75, 75.0),
        (0.99, 99.0),
    ];
    for (raw, want) in suv_table {
        let got = normalize_suv(raw).unwrap();
        assert!(
            (got - want).abs() <= 1e-9,
            "normalize_suv({raw}) = {got}, want {want}"
        );
    }
    for (raw, want) in icvf_table {
        let got = normalize_icvf(raw).unwrap();
        assert!(
            (got - want).abs() <= 1e-9,
            "normalize_icvf({raw}) = {got}, want {want}"
        );
    }
    assert!(normalize_suv(f64::NAN).is_err());
    assert!(normalize_icvf(-0.01).is_err());
    assert!(normalize_icvf(1.01).is_err());
    println!(
        "criterion 04: PASS {} table values within 1e-9, domain errors rejected",
        suv_table.len() + icvf_table.len()
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: confusion counts and metrics against hand-derived arithmetic.
// ---------------------------------------------------------------------------

fn hand_mask(dims: Dims, fg: &[(usize, usize, usize)]) -> TumorMask {
    let mut data = vec![0u8; dims.0 * dims.1 * dims.2];
    for &(x, y, z) in fg {
        data[x + dims.0 * (y + dims.1 * z)] = 1;
    }
    TumorMask::new(dims, (1.0, 1.0, 1.0), data).unwrap()
}

/// The percent metrics implied by hand-counted confusion cells, mirroring
/// the evaluation formulas operation for operation so equality is exact.
fn hand_metrics(c: ConfusionCounts) -> Metrics {
    let v_pred = (c.tp + c.fp) as f64;
    let v_gt = (c.tp + c.fn_) as f64;
    let precision = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / v_pred };
    Metrics {
        recall_pct: 100.0 * c.tp as f64 / v_gt,
        precision_pct: 100.0 * precision,
        dice_pct: 100.0 * 2.0 * c.tp as f64
            / (2.0 * c.tp as f64 + c.fp as f64 + c.fn_ as f64),
        rvd_pct: 100.0 * (v_pred - v_gt).abs() / v_gt,
    }
}

#[test]
fn criterion_05_confusion_metrics_match_hand_counts() {
    let d41 = (4usize, 4usize, 1usize);
    let zone_a = GrowthZone { lo: (0, 0, 0), hi: (2, 2, 0), vol_dims: d41 }; // 9 voxels
    let zone_all = GrowthZone { lo: (0, 0, 0), hi: (3, 3, 0), vol_dims: d41 }; // 16 voxels
    let d332 = (3usize, 3usize, 2usize);
    let zone_3d = GrowthZone { lo: (0, 0, 0), hi: (1, 1, 1), vol_dims: d332 }; // 8 voxels
    let d51 = (5usize, 5usize, 1usize);
    let zone_mid = GrowthZone { lo: (1, 1, 0), hi: (3, 3, 0), vol_dims: d51 }; // 9 voxels

    // (pred, gt, zone, hand counts tp/fp/fn/tn, evaluated voxel total)
    let cases: [(TumorMask, TumorMask, &GrowthZone, ConfusionCounts, u64); 10] = [
        // 1: exact match inside the zone.
        (
            hand_mask(d41, &[(1, 1, 0)]),
            hand_mask(d41, &[(1, 1, 0)]),
            &zone_a,
            ConfusionCounts { tp: 1, fp: 0, fn_: 0, tn: 8 },
            9,
        ),
        // 2: one extra predicted voxel.
        (
            hand_mask(d41, &[(1, 1, 0), (2, 1, 0)]),
            hand_mask(d41, &[(1, 1, 0)]),
            &zone_a,
            ConfusionCounts { tp: 1, fp: 1, fn_: 0, tn: 7 },
            9,
        ),
        // 3: empty prediction; precision 0 by convention.
        (
            hand_mask(d41, &[]),
            hand_mask(d41, &[(1, 1, 0)]),
            &zone_a,
            ConfusionCounts { tp: 0, fp: 0, fn_: 1, tn: 8 },
            9,
        ),
        // 4: truth escapes the zone but is still charged as a miss; equal
        // volumes keep RVD at zero despite disjoint masks.
        (
            hand_mask(d41, &[(1, 1, 0)]),
            hand_mask(d41, &[(3, 3, 0)]),
            &zone_a,
            ConfusionCounts { tp: 0, fp: 1, fn_: 1, tn: 8 },
            10,
        ),
        // 5: a false positive outside the zone still costs precision.
        (
            hand_mask(d41, &[(1, 1, 0), (3, 3, 0)]),
            hand_mask(d41, &[(1, 1, 0)]),
            &zone_a,
            ConfusionCounts { tp: 1, fp: 1, fn_: 0, tn: 8 },
            10,
        ),
        // 6: whole-volume zone, prediction one voxel short.
        (
            hand_mask(d41, &[(0, 0, 0), (1, 0, 0), (2, 0, 0)]),
            hand_mask(d41, &[(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0)]),
            &zone_all,
            ConfusionCounts { tp: 3, fp: 0, fn_: 1, tn: 12 },
            16,
        ),
        // 7: 3D zone; one hit, two strays each way, volumes tie.
        (
            hand_mask(d332, &[(0, 0, 0), (1, 1, 0), (0, 1, 1)]),
            hand_mask(d332, &[(0, 0, 0), (1, 1, 1), (2, 2, 1)]),
            &zone_3d,
            ConfusionCounts { tp: 1, fp: 2, fn_: 2, tn: 4 },
            9,
        ),
        // 8: interior zone with an out-of-zone false positive.
        (
            hand_mask(d51, &[(1, 1, 0), (2, 1, 0), (2, 2, 0), (4, 4, 0)]),
            hand_mask(d51, &[(1, 1, 0), (2, 1, 0), (3, 1, 0), (1, 2, 0)]),
            &zone_mid,
            ConfusionCounts { tp: 2, fp: 2, fn_: 2, tn: 4 },
            10,
        ),
        // 9: under-segmentation: volume 2 against 5.
        (
            hand_mask(d41, &[(0, 0, 0), (1, 1, 0)]),
            hand_mask(d41, &[(0, 0, 0), (1, 0, 0), (2, 0, 0), (0, 1, 0), (1, 1, 0)]),
            &zone_all,
            ConfusionCounts { tp: 2, fp: 0, fn_: 3, tn: 11 },
            16,
        ),
        // 10: over-segmentation: volume 5 against 1.
        (
            hand_mask(d41, &[(1, 1, 0), (0, 1, 0), (2, 1, 0), (1, 0, 0), (1, 2, 0)]),
            hand_mask(d41, &[(1, 1, 0)]),
            &zone_a,
            ConfusionCounts { tp: 1, fp: 4, fn_: 0, tn: 4 },
            9,
        ),
    ];

    for (i, (pred, gt, zone, want, total)) in cases.iter().enumerate() {
        let (counts, metrics) = compute_metrics(pred, gt, zone).unwrap();
        assert_eq!(counts, *want, "case {}: confusion counts", i + 1);
        assert_eq!(
            counts.tp + counts.fp + counts.fn_ + counts.tn,
            *total,
            "case {}: evaluated voxel total",
            i + 1
        );
        assert_eq!(metrics, hand_metrics(*want), "case {}: metrics", i + 1);
    }

    // Spot checks with exactly representable hand values.
    let (_, m1) = compute_metrics(&cases[0].0, &cases[0].1, cases[0].2).unwrap();
    assert_eq!(
        (m1.recall_pct, m1.precision_pct, m1.dice_pct, m1.rvd_pct),
        (100.0, 100.0, 100.0, 0.0)
    );
    let (_, m6) = compute_metrics(&cases[5].0, &cases[5].1, cases[5].2).unwrap();
    assert_eq!((m6.recall_pct, m6.rvd_pct), (75.0, 25.0));
    let (_, m9) = compute_metrics(&cases[8].0, &cases[8].1, cases[8].2).unwrap();
    assert_eq!((m9.recall_pct, m9.precision_pct, m9.rvd_pct), (40.0, 100.0, 60.0));
    let (_, m10) = compute_metrics(&cases[9].0, &cases[9].1, cases[9].2).unwrap();
    assert_eq!((m10.precision_pct, m10.rvd_pct), (20.0, 400.0));

    println!("criterion 05: PASS 10 mask pairs match hand-derived confusion arithmetic exactly");
}

// ---------------------------------------------------------------------------
// Criterion 6: the net learns a mask-channel-equals-label task.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_net_learns_separable_patch_task() {
    let started = Instant::now();
    let spec = NetSpec {
        input_hw: 17,
        input_channels: 3,
        conv1_filters: 8,
        conv2_filters: 16,
        fc1_units: 64,
    };
    let plane = spec.input_hw * spec.input_hw;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    // The mask channel alone carries the label; the other channels are noise.
    let patches: Vec<(Vec<f32>, bool)> = (0..1000)
        .map(|i| {
            let label = i % 2 == 1;
            let mut p: Vec<f32> =
                (0..2 * plane).map(|_| (rng.gen::<f64>() * 255.0) as f32).collect();
            p.extend(std::iter::repeat(if label { 255.0f32 } else { 0.0 }).take(plane));
            (p, label)
        })
        .collect();
    let samples: Vec<(&[f32], bool)> =
        patches.iter().map(|(p, y)| (p.as_slice(), *y)).collect();
    let hyper = TrainHyper {
        epochs: 5,
        base_lr: 0.05,
        batch: 64,
        dropout: 0.0,
        seed: 1,
        ..TrainHyper::default()
    };
    let (_, history) = train_seeded::<f32>(&spec, &samples, &hyper).unwrap();
    let best = history
        .iter()
        .max_by(|a, b| a.val_accuracy.total_cmp(&b.val_accuracy))
        .unwrap();
    let elapsed = started.elapsed();
    assert!(
        best.val_accuracy >= 0.99,
        "best validation accuracy {:.4} at epoch {} < 0.99",
        best.val_accuracy,
        best.epoch
    );
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:.1?}, budget 300s");
    println!(
        "criterion 06: PASS val accuracy {:.4} at epoch {} of {}, {elapsed:.1?}",
        best.val_accuracy,
        best.epoch,
        hyper.epochs
    );
}

// ---------------------------------------------------------------------------
// Criteria 7-10: the seeded phantom cross-validation contract.
// ---------------------------------------------------------------------------

/// Stationary-regime phantoms: the seed ball burns in until the traveling
/// front is mature, so both follow-up intervals grow at comparable rates,
/// and the follow-up schedule is clinically regular. Kinetics are drawn
/// fast enough that every interval clears the 15% growth floor at 48^3.
fn fixture_phantoms() -> PhantomConfig {
    PhantomConfig {
        diffusivity_range: (6.0e-4, 9.0e-4),
        proliferation_range: (8.0e-3, 1.2e-2),
        interval_mean_days: 280.0,
        interval_std_days: 15.0,
        interval_min_days: 240,
        interval_max_days: 320,
        burn_in_days: 450.0,
        ..PhantomConfig::default()
    }
}

/// Desk-scale experiment: production layer graph and patch geometry with
/// reduced widths, sampling box, and epoch count so the two evaluation runs
/// fit the time budget on one core.
fn fixture_experiment() -> ExperimentConfig {
    ExperimentConfig {
        net: NetSpec {
            input_hw: 17,
            input_channels: 3,
            conv1_filters: 8,
            conv2_filters: 16,
            fc1_units: 64,
        },
        patch: PatchConfig { patch_size: 17, sampling_halfwidth: 8, balance: true },
        hyper: TrainHyper { epochs: 12, batch: 64, ..TrainHyper::default() },
        svm: SvmConfig::default(),
        zone: GrowthZoneConfig::default(),
        master_seed: 42,
        skip_baseline: false,
    }
}

struct CrossValidationFixture {
    report_a: LoocvReport,
    report_b: LoocvReport,
    run_elapsed: Duration,
}

static FIXTURE: OnceLock<CrossValidationFixture> = OnceLock::new();

fn fixture() -> &'static CrossValidationFixture {
    FIXTURE.get_or_init(|| {
        let config = fixture_experiment();
        let cohort_a = generate_cohort(&fixture_phantoms(), 7).unwrap();
        let started = Instant::now();
        let run_a = run_loocv(&cohort_a, &config, 1).unwrap();
        let run_elapsed = started.elapsed();
        // The second run regenerates its own cohort so the reproducibility
        // check covers the phantom synthesis path as well.
        let cohort_b = generate_cohort(&fixture_phantoms(), 7).unwrap();
        let run_b = run_loocv(&cohort_b, &config, 1).unwrap();
        CrossValidationFixture {
            report_a: run_a.report,
            report_b: run_b.report,
            run_elapsed,
        }
    })
}

#[test]
fn criterion_07_phantom_loocv_beats_identity_baseline() {
    let fx = fixture();
    let report = &fx.report_a;
    assert_eq!(report.folds.len(), 7);
    let learned = report.learned.dice.mean;
    let identity = report.identity.dice.mean;
    let rvd = report.learned.rvd.mean;
    let ok = learned >= identity && learned >= 80.0 && rvd <= 15.0;
    let budget = Duration::from_secs(30 * 60);
    println!(
        "criterion 07: {} learned dice {learned:.2} (identity {identity:.2}, floor 80), \
         rvd {rvd:.2} (cap 15), run {:.1?} (budget {budget:?})",
        if ok { "PASS" } else { "FAIL" },
        fx.run_elapsed
    );
    assert!(learned >= identity, "learned dice {learned:.2} < identity {identity:.2}");
    assert!(learned >= 80.0, "learned dice {learned:.2} < 80");
    assert!(rvd <= 15.0, "learned rvd {rvd:.2} > 15");
    assert!(fx.run_elapsed < budget, "run took {:.1?}", fx.run_elapsed);
}

#[test]
fn criterion_08_deep_features_survive_selection() {
    // Soft criterion: a miss asks for investigation of the ranking, not a
    // release block, so the evidence is printed either way.
    let report = &fixture().report_a;
    let mut folds_with_deep = 0;
    for fold in &report.folds {
        assert!(!fold.selected_features.is_empty(), "fold {}: empty selection", fold.fold);
        if fold.selected_features.iter().any(|&j| j <= 1) {
            folds_with_deep += 1;
        }
    }
    let n = report.folds.len();
    if folds_with_deep >= 5 {
        println!(
            "criterion 08: PASS a deep feature survives selection in {folds_with_deep}/{n} folds"
        );
    } else {
        println!(
            "criterion 08: SOFT FAIL deep features selected in only {folds_with_deep}/{n} folds; \
             investigate before release:"
        );
        for fold in &report.folds {
            println!(
                "  fold {}: m {} selected {:?} ranking {:?} acc_by_m {:?}",
                fold.fold, fold.chosen_m, fold.selected_features, fold.ranking, fold.acc_by_m
            );
        }
    }
}

#[test]
fn criterion_09_reports_reproduce_byte_for_byte() {
    let fx = fixture();
    let json_a = render_json(&fx.report_a);
    let json_b = render_json(&fx.report_b);
    let csv_a = render_csv(&fx.report_a);
    let csv_b = render_csv(&fx.report_b);
    let text_a = render_text(&fx.report_a);
    let text_b = render_text(&fx.report_b);
    assert_eq!(json_a, json_b, "JSON reports differ between identically seeded runs");
    assert_eq!(csv_a, csv_b, "CSV reports differ between identically seeded runs");
    assert_eq!(text_a, text_b, "text reports differ between identically seeded runs");
    println!(
        "criterion 09: PASS two seeded runs match byte for byte \
         (json {} B, csv {} B, text {} B)",
        json_a.len(),
        csv_a.len(),
        text_a.len()
    );
}

#[test]
fn criterion_10_leakage_guard_holds_every_fold() {
    let report = &fixture().report_a;
    for fold in &report.folds {
        assert!(fold.leakage_guard_ok, "fold {} failed the leakage guard", fold.fold);
    }
    println!(
        "criterion 10: PASS leakage guard held in all {} folds",
        report.folds.len()
    );
}
