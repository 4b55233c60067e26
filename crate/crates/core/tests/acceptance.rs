//! Acceptance suite: one test per release criterion, each printing a single
//! `acceptance N PASS` line (run with `--nocapture` to see the measured
//! margins; a failing criterion panics with an `acceptance N FAIL` message).
//!
//! The criteria, with their pinned tolerances:
//!
//! 1. Full-pipeline loss gradients match central finite differences on 50
//!    random small configurations (rel ≤ 1e-4, absolute floor 1e-8).
//! 2. Spectral reference: tridiagonal eigensolver vs a dense Jacobi oracle
//!    (≤ 1e-9), the two lowest double-well eigenvalues (±2e-3), and the
//!    Galerkin residual of solved eigenpairs (≤ 1e-12).
//! 3. With exact eigenpairs as oracle heads, the terminal propagation
//!    residual shrinks with time-step order ≥ 0.5 as the grid doubles.
//! 4. Desk-scale training on the 1-d linear Schrödinger problem lands
//!    within 5e-3 of the spectral eigenvalue with err_psi ≤ 5e-2.
//! 5. Desk-scale degenerate double-well: supervised init biased toward the
//!    second eigenfunction plus a pinned eigenvalue recovers it to
//!    err_psi ≤ 0.2.
//! 6. Normalization: exact scale covariance, moving-average fixed point,
//!    and the hinge threshold at its configured values.
//! 7. Determinism: identical seeds give byte-identical history CSVs.
//! 8. Full-scale runs are documented long-run presets, exercised here only
//!    for assembly; their mechanisms are covered by criteria 1-7.

mod common;

use common::{dense_tridiagonal, jacobi_eigenvalues};
use eigenfk::config::{RunConfig, Scale, PRESET_NAMES};
use eigenfk::network::{NetworkSpec, Params};
use eigenfk::normalization::{batch_normalizer, ema, hinge};
use eigenfk::reference::{build_matrix, reference_for, solve_1d_all, FourierProblem1d, RefPair};
use eigenfk::linalg::Mat;
use eigenfk::sde::{
    propagate_linear, propagate_semilinear, sample_initial, simulate_forward, ClipBounds,
    Normalizer, PathBatch, RefHeads, TimeGrid,
};
use eigenfk::trainer::{
    step_loss_and_gradient, LossConfig, Schedule, SupervisedInit, TrainConfig, Trainer, ZPolicy,
};
use eigenfk::{Problem, RunRng, StreamKind, Tape};
use rand::Rng;

// ---------------------------------------------------------------------------
// 1. Full-pipeline gradients vs central finite differences
// ---------------------------------------------------------------------------

#[test]
fn a1_full_pipeline_gradient_matches_finite_differences() {
    const REL_TOL: f64 = 1e-4;
    const ABS_FLOOR: f64 = 1e-8;
    const CONFIGS: usize = 50;

    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;
    let meta = RunRng::new(0xACC1);

    for i in 0..CONFIGS {
        let mut draw = meta.stream(StreamKind::Validation, 9000 + i as u64, 0);
        let dim = draw.gen_range(1..=3usize);
        let problem = match i % 4 {
            0 => {
                let c: Vec<f64> = (0..dim).map(|_| draw.gen_range(0.1..1.0)).collect();
                Problem::fokker_planck(dim, Some(c)).unwrap()
            }
            1 => {
                let c: Vec<f64> = (0..dim).map(|_| draw.gen_range(0.0..0.5)).collect();
                Problem::linear_schrodinger(dim, Some(c)).unwrap()
            }
            2 => Problem::nonlinear_schrodinger(dim, draw.gen_range(0.5..1.5)).unwrap(),
            _ => {
                let c: Vec<f64> = (0..dim).map(|_| draw.gen_range(0.2..1.5)).collect();
                Problem::double_well(dim, Some(c)).unwrap()
            }
        };
        let layers = draw.gen_range(1..=2usize);
        let spec = NetworkSpec {
            dim,
            harmonics: draw.gen_range(1..=2usize),
            hidden: (0..layers).map(|_| draw.gen_range(2..=8usize)).collect(),
            lambda_init: draw.gen_range(-1.0..1.0),
        };
        let mut params = Params::init(&spec, &RunRng::new(5000 + i as u64));
        // Finite differences only measure a derivative where one exists, so
        // evaluate at a generic parameter point. Freshly initialized nets
        // have all-zero biases, and with two hidden layers a batch row that
        // turns the whole first layer off leaves the second layer's
        // preactivations exactly on the rectifier kink (0·W2 + 0). At such a
        // point the loss is genuinely one-sided in the second bias vector:
        // central differences return half-slopes at every step size while
        // the analytic pass returns the (valid) zero subgradient. A dense
        // jitter moves every bias off zero, making that coincidence
        // measure-zero.
        {
            let n = params.to_flat().len();
            let mut s = RunRng::new(6000 + i as u64).stream(StreamKind::Init, 1, 0);
            let jitter: Vec<f64> = (0..n).map(|_| s.gen_range(-0.05..0.05)).collect();
            params.axpy_flat(1.0, &jitter);
        }

        // Small loss weights keep the loss O(10), so finite-difference
        // round-off stays well under the 1e-8 absolute floor. Wide clip
        // bounds keep the semilinear clamp's kink away from the sampled
        // paths — the clamp mechanism has its own tests.
        let cfg = LossConfig {
            eta1: draw.gen_range(1.0..4.0),
            eta2: draw.gen_range(0.3..1.5),
            eta3: draw.gen_range(1.0..6.0),
            z0: draw.gen_range(0.5..2.5),
            clip: ClipBounds::symmetric(50.0).unwrap(),
            parallel: false,
        };
        let policy = if i % 2 == 0 {
            let mag = draw.gen_range(0.7..1.6);
            ZPolicy::Fixed(if draw.gen_range(0..4) == 0 { -mag } else { mag })
        } else {
            ZPolicy::Ema {
                prev: if i % 6 == 1 { None } else { Some(draw.gen_range(0.8..1.8)) },
                gamma: draw.gen_range(0.1..0.9),
                differentiate: true,
            }
        };

        let grid = TimeGrid::uniform(draw.gen_range(0.05..0.3), 3).unwrap();
        let rng = RunRng::new(7000 + i as u64);
        let x0 = sample_initial(4, dim, &rng, StreamKind::InitialPoints, 1, 0);
        let batch = simulate_forward(&x0, &grid, problem.sigma(), &rng, 1, 0).unwrap();
        let batches = [batch];

        let loss_of = |flat: &[f64]| -> f64 {
            let mut p = Params::zeros(&spec);
            p.set_flat(flat);
            step_loss_and_gradient(&problem, &p, &batches, policy.clone(), &cfg).unwrap().loss
        };

        let out =
            step_loss_and_gradient(&problem, &params, &batches, policy.clone(), &cfg).unwrap();
        let base = params.to_flat();
        for j in 0..base.len() {
            let fd_at = |h: f64| -> f64 {
                let mut plus = base.clone();
                plus[j] += h;
                let mut minus = base.clone();
                minus[j] -= h;
                (loss_of(&plus) - loss_of(&minus)) / (2.0 * h)
            };
            let ad = out.grad[j];
            // The network uses rectifier activations, so a difference step
            // can straddle an activation kink; that shows up as a mismatch
            // that depends on the step size, while a genuine gradient defect
            // does not. A failing entry therefore gets one retry with a
            // tenfold smaller step (round-off there is ~3e-9 for these loss
            // magnitudes, still inside the 1e-8 floor).
            let scale = base[j].abs().max(1.0);
            let mut accepted = None;
            let mut fd = f64::NAN;
            let mut diff = f64::NAN;
            for h in [1e-5 * scale, 1e-6 * scale] {
                fd = fd_at(h);
                diff = (fd - ad).abs();
                if diff <= (REL_TOL * ad.abs()).max(ABS_FLOOR) {
                    accepted = Some(diff);
                    break;
                }
            }
            assert!(
                accepted.is_some(),
                "acceptance 1 FAIL: config {i} parameter {j} (of {}): \
                 analytic {ad:.6e} vs finite-difference {fd:.6e} at both step sizes, \
                 |diff| {diff:.3e} > max({REL_TOL:.0e}*|analytic|, {ABS_FLOOR:.0e})",
                base.len()
            );
            let diff = accepted.unwrap();
            if ad.abs() > ABS_FLOOR {
                worst_rel = worst_rel.max(diff / ad.abs());
            }
            worst_abs = worst_abs.max(diff);
        }
    }

    println!(
        "acceptance 1 PASS: loss gradient vs central differences on {CONFIGS} random \
         configurations (d<=3, widths<=8, N=3, K=4, all four operator families, fixed and \
         differentiated normalizers), every parameter and the eigenvalue within \
         rel {REL_TOL:.0e} / abs {ABS_FLOOR:.0e}; worst rel {worst_rel:.2e}, \
         worst abs {worst_abs:.2e}"
    );
}

// ---------------------------------------------------------------------------
// 2. Spectral reference vs independent oracles
// ---------------------------------------------------------------------------

#[test]
fn a2_spectral_reference_matches_oracles() {
    const EIG_TOL: f64 = 1e-9;
    const WELL_TOL: f64 = 2e-3;
    const RESIDUAL_TOL: f64 = 1e-12;

    // (a) Implicit-shift tridiagonal solver vs the dense Jacobi oracle on
    // random symmetric tridiagonal 50x50 matrices.
    let meta = RunRng::new(0xACC2);
    let mut worst_eig = 0.0f64;
    for case in 0..5u64 {
        let mut draw = meta.stream(StreamKind::Validation, case, 0);
        let n = 50;
        let diag: Vec<f64> = (0..n).map(|_| draw.gen_range(-5.0..5.0)).collect();
        let off: Vec<f64> = (0..n - 1).map(|_| draw.gen_range(-2.0..2.0)).collect();
        let (mut lib, _vecs) = eigenfk::reference::tridiag_eigensolve(&diag, &off).unwrap();
        lib.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = jacobi_eigenvalues(&dense_tridiagonal(&diag, &off));
        for (l, o) in lib.iter().zip(&oracle) {
            let d = (l - o).abs();
            assert!(
                d <= EIG_TOL,
                "acceptance 2 FAIL: eigenvalue {l} vs Jacobi oracle {o}, |diff| {d:.3e} > {EIG_TOL:.0e} (case {case})"
            );
            worst_eig = worst_eig.max(d);
        }
    }

    // (b) The two lowest eigenvalues of the 1-d double well with amplitude 5.
    let pairs = solve_1d_all(FourierProblem1d { c: 5.0, freq: 2, nbasis: 64 }).unwrap();
    let (l1, l2) = (pairs[0].lambda, pairs[1].lambda);
    assert!(
        (l1 - -2.153).abs() <= WELL_TOL && (l2 - -2.076).abs() <= WELL_TOL,
        "acceptance 2 FAIL: double-well pair ({l1}, {l2}) vs (-2.153, -2.076) beyond {WELL_TOL}"
    );

    // (c) Galerkin residual of the solved eigenpairs in their own basis:
    // the assembled matrix applied to the coefficient vector must return
    // 2*lambda times the vector (the matrix eigenproblem is M a = 2 lambda a).
    let mut worst_res = 0.0f64;
    for prob in [
        FourierProblem1d { c: 5.0, freq: 2, nbasis: 32 },
        FourierProblem1d { c: 0.2, freq: 1, nbasis: 32 },
    ] {
        let dense = build_matrix(prob).dense();
        let n = dense.rows();
        for pair in solve_1d_all(prob).unwrap().iter().take(4) {
            assert_eq!(pair.coeffs.len(), n);
            for part in 0..2 {
                let a: Vec<f64> = pair
                    .coeffs
                    .iter()
                    .map(|&(re, im)| if part == 0 { re } else { im })
                    .collect();
                let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if scale == 0.0 {
                    continue;
                }
                for i in 0..n {
                    let mv: f64 = (0..n).map(|j| dense.get(i, j) * a[j]).sum();
                    let r = (mv - 2.0 * pair.lambda * a[i]).abs() / scale;
                    assert!(
                        r <= RESIDUAL_TOL,
                        "acceptance 2 FAIL: Galerkin residual {r:.3e} > {RESIDUAL_TOL:.0e} \
                         (lambda {}, row {i})",
                        pair.lambda
                    );
                    worst_res = worst_res.max(r);
                }
            }
        }
    }

    println!(
        "acceptance 2 PASS: tridiagonal eigenvalues within {EIG_TOL:.0e} of the dense Jacobi \
         oracle on five random 50x50 matrices (worst {worst_eig:.2e}); double-well pair \
         ({l1:.4}, {l2:.4}) within {WELL_TOL} of (-2.153, -2.076); Galerkin residual at \
         nbasis=32 within {RESIDUAL_TOL:.0e} (worst {worst_res:.2e})"
    );
}

// ---------------------------------------------------------------------------
// 3. Feynman-Kac fixed point under grid refinement, with oracle heads
// ---------------------------------------------------------------------------

/// Mean terminal residual E|U_T - psi(X_T)| when the exact eigenpair drives
/// the propagation, over `paths` paths at `n` time steps.
/// Mean absolute terminal mismatch of the propagated value against the
/// exact eigenfunction, measured on nested time grids driven by the SAME
/// Brownian paths: one fine simulation, coarser grids formed by taking
/// every `stride`-th level and summing the increments in between (exact,
/// because the state dynamics are additive in the noise). Coupling the
/// noise across resolutions is the standard way to estimate an empirical
/// strong order — with independent draws per grid, the Monte-Carlo error
/// of each estimate (about 1% at 10^4 paths) swamps the order fit.
fn oracle_terminal_residuals(
    problem: &Problem,
    pair: &RefPair,
    fine_n: usize,
    strides: &[usize],
    paths: usize,
) -> Vec<f64> {
    let rng = RunRng::new(0xACC3);
    let fine_grid = TimeGrid::uniform(0.2, fine_n).unwrap();
    let heads = RefHeads { pair, sigma: problem.sigma() };
    let clip = ClipBounds::symmetric(5.0).unwrap();
    let shard = 500;
    let mut totals = vec![0.0; strides.len()];
    let mut off = 0;
    while off < paths {
        let k = shard.min(paths - off);
        let x0 = sample_initial(
            k,
            problem.dim(),
            &rng,
            StreamKind::InitialPoints,
            fine_n as u64,
            off as u64,
        );
        let fine =
            simulate_forward(&x0, &fine_grid, problem.sigma(), &rng, fine_n as u64, off as u64)
                .unwrap();
        for (si, &stride) in strides.iter().enumerate() {
            assert_eq!(fine_n % stride, 0, "stride must divide the fine grid");
            let n = fine_n / stride;
            let x: Vec<Mat> = (0..=n).map(|i| fine.x[i * stride].clone()).collect();
            let dw: Vec<Mat> = (0..n)
                .map(|j| {
                    let mut acc = fine.dw[j * stride].clone();
                    for r in 1..stride {
                        let extra = &fine.dw[j * stride + r];
                        for (a, b) in
                            acc.as_mut_slice().iter_mut().zip(extra.as_slice())
                        {
                            *a += b;
                        }
                    }
                    acc
                })
                .collect();
            let batch = PathBatch::new(TimeGrid::uniform(0.2, n).unwrap(), x, dw).unwrap();
            let mut tape = Tape::new();
            let prop = match problem.reaction() {
                eigenfk::problems::Reaction::Linear => {
                    propagate_linear(&mut tape, &heads, problem, &batch, Normalizer::Detached(1.0))
                        .unwrap()
                }
                eigenfk::problems::Reaction::Cubic { .. } => propagate_semilinear(
                    &mut tape,
                    &heads,
                    problem,
                    &batch,
                    Normalizer::Detached(1.0),
                    clip,
                )
                .unwrap(),
            };
            let u_t = tape.value(*prop.u.last().unwrap());
            let term = batch.terminal();
            for p in 0..k {
                totals[si] += (u_t[p] - pair.psi(term.row(p))).abs();
            }
        }
        off += k;
    }
    totals.iter().map(|t| t / paths as f64).collect()
}

#[test]
fn a3_terminal_residual_refines_with_the_time_grid() {
    const PATHS: usize = 10_000;
    const MIN_ORDER: f64 = 0.5;

    let mut report = Vec::new();
    for (problem, label) in [
        (Problem::nonlinear_schrodinger(2, 1.0).unwrap(), "nonlinear Schrödinger d=2"),
        (Problem::fokker_planck(2, None).unwrap(), "Fokker-Planck d=2"),
    ] {
        let pair = reference_for(&problem, 0, 1).unwrap();
        // Strides 4/2/1 of one N=160 simulation give N=40/80/160 on shared
        // Brownian paths.
        let res = oracle_terminal_residuals(&problem, &pair, 160, &[4, 2, 1], PATHS);
        assert!(
            res[1] < res[0] && res[2] < res[1],
            "acceptance 3 FAIL: {label} residuals {res:?} do not decrease as N doubles"
        );
        let order = (res[0] / res[2]).log2() / 2.0;
        assert!(
            order >= MIN_ORDER,
            "acceptance 3 FAIL: {label} empirical order {order:.3} < {MIN_ORDER} \
             (residuals {res:?})"
        );
        report.push(format!(
            "{label}: {:.3e} -> {:.3e} -> {:.3e} (order {order:.2})",
            res[0], res[1], res[2]
        ));
    }

    println!(
        "acceptance 3 PASS: oracle-heads terminal residual over {PATHS} paths decreases \
         monotonically at N=40/80/160 with empirical order >= {MIN_ORDER}; {}",
        report.join("; ")
    );
}

// ---------------------------------------------------------------------------
// 4. Desk-scale training accuracy, 1-d linear Schrödinger
// ---------------------------------------------------------------------------

#[test]
fn a4_desk_training_reaches_the_spectral_eigenvalue() {
    const LAMBDA_TOL: f64 = 5e-3;
    const PSI_TOL: f64 = 5e-2;

    let problem = Problem::linear_schrodinger(1, Some(vec![0.2])).unwrap();
    let reference = reference_for(&problem, 40, 1).unwrap();
    let spec = NetworkSpec { dim: 1, harmonics: 5, hidden: vec![40, 40], lambda_init: 0.0 };
    let config = TrainConfig {
        horizon: 0.2,
        time_steps: 40,
        batch: 512,
        iterations: 6000,
        seed: 1,
        lr: Schedule::new(vec![5e-4, 1e-4, 1e-5], vec![2000, 4000]).unwrap(),
        gamma: Schedule::new(vec![0.1, 0.2, 0.9], vec![2000, 4000]).unwrap(),
        validation_every: 500,
        validation_size: 512,
        summary_window: 1000,
        shard_size: 256,
        ..TrainConfig::default()
    };
    let trainer = Trainer {
        problem: &problem,
        spec,
        config,
        reference: Some(reference.clone()),
        supervised: None,
        initial_params: None,
    };
    let outcome = trainer.run().unwrap();
    let err_lambda = (outcome.lambda - reference.lambda()).abs();
    let summary = outcome.summary.expect("summary over the trailing window");
    let err_psi = summary.err_psi_l2.expect("psi error against the reference");

    assert!(
        err_lambda <= LAMBDA_TOL,
        "acceptance 4 FAIL: final eigenvalue {} vs spectral {} — err {err_lambda:.3e} > {LAMBDA_TOL}",
        outcome.lambda,
        reference.lambda()
    );
    assert!(
        err_psi <= PSI_TOL,
        "acceptance 4 FAIL: trailing-window err_psi {err_psi:.3e} > {PSI_TOL}"
    );
    println!(
        "acceptance 4 PASS: 1-d linear Schrödinger (c=0.2, net [40,40], K=512, 6000 \
         iterations): |lambda - spectral| = {err_lambda:.2e} (tol {LAMBDA_TOL}), \
         err_psi = {err_psi:.2e} (tol {PSI_TOL})"
    );
}

// ---------------------------------------------------------------------------
// 5. Desk-scale degenerate double well: recovering the second eigenfunction
// ---------------------------------------------------------------------------

#[test]
fn a5_degenerate_double_well_recovers_the_second_eigenfunction() {
    const PSI_TOL: f64 = 0.2;
    const MIX: f64 = 0.3;

    let problem = Problem::double_well(1, Some(vec![5.0])).unwrap();
    let second = reference_for(&problem, 40, 2).unwrap();
    let first = reference_for(&problem, 40, 1).unwrap();
    let spec = NetworkSpec { dim: 1, harmonics: 5, hidden: vec![40, 40], lambda_init: 0.0 };

    let iterations = 2000;
    let config = TrainConfig {
        horizon: 0.2,
        time_steps: 40,
        batch: 256,
        iterations,
        seed: 1,
        lr: Schedule::new(vec![5e-4, 1e-4], vec![1000]).unwrap(),
        gamma: Schedule::new(vec![0.1, 0.5, 0.9], vec![500, 1200]).unwrap(),
        validation_every: 200,
        validation_size: 512,
        summary_window: 400,
        shard_size: 256,
        // The eigenvalue is pinned to the spectral second eigenvalue for the
        // whole run; only the eigenfunction is learned.
        lambda_freeze_steps: iterations,
        lambda_bar: Some(second.lambda()),
        ..TrainConfig::default()
    };
    // Start from a deliberately contaminated state: the second eigenfunction
    // plus a 0.3 admixture of the first. Training against the fixed-point
    // loss with the pinned eigenvalue must strip the admixture.
    let supervised = SupervisedInit::perturbed_pair(
        second.clone(),
        first,
        MIX,
        problem.sigma(),
        800,
        256,
        1e-3,
    );
    let trainer = Trainer {
        problem: &problem,
        spec,
        config,
        reference: Some(second.clone()),
        supervised: Some(supervised),
        initial_params: None,
    };
    let outcome = trainer.run().unwrap();
    let summary = outcome.summary.expect("summary over the trailing window");
    let err_psi = summary.err_psi_l2.expect("psi error against the second eigenfunction");

    // The admixed initial state alone sits at ~0.29; passing requires the
    // training to have actually cleaned it up.
    let initial_contamination = MIX / (1.0 + MIX * MIX).sqrt();
    assert!(
        err_psi <= PSI_TOL,
        "acceptance 5 FAIL: err_psi vs second eigenfunction {err_psi:.3e} > {PSI_TOL} \
         (supervised init alone would sit at {initial_contamination:.3})"
    );
    assert_eq!(outcome.lambda, second.lambda(), "pinned eigenvalue must not move");
    println!(
        "acceptance 5 PASS: 1-d double well (amplitude 5), supervised init psi_2 + \
         {MIX} psi_1 with the eigenvalue pinned at the spectral second eigenvalue \
         {:.4}: err_psi = {err_psi:.2e} (tol {PSI_TOL}; init alone sits at \
         {initial_contamination:.2})",
        second.lambda()
    );
}

// ---------------------------------------------------------------------------
// 6. Normalization properties, exact
// ---------------------------------------------------------------------------

#[test]
fn a6_normalization_properties_hold_exactly() {
    const Z0: f64 = 2.0;
    const ETA3: f64 = 100.0;

    // Scale covariance Zhat(c psi) = c Zhat(psi), bitwise for dyadic c.
    let psi = [0.75, -1.5, 2.25, 0.125, -3.0, 0.5];
    let zhat = batch_normalizer(&psi);
    for c in [2.0, -4.0, 0.5, -0.25] {
        let scaled: Vec<f64> = psi.iter().map(|v| c * v).collect();
        assert_eq!(
            batch_normalizer(&scaled),
            c * zhat,
            "acceptance 6 FAIL: scale covariance broken for c = {c}"
        );
    }
    // The sign convention follows the batch mean.
    let flipped: Vec<f64> = psi.iter().map(|v| -v).collect();
    assert_eq!(batch_normalizer(&flipped), -zhat, "acceptance 6 FAIL: sign convention");

    // Moving-average fixed point: ema(z, gamma, z) = z, bitwise for dyadic
    // inputs and to one ulp otherwise.
    for gamma in [0.25, 0.5, 0.75] {
        assert_eq!(ema(1.5, gamma, 1.5), 1.5, "acceptance 6 FAIL: EMA fixed point (dyadic)");
    }
    for (z, gamma) in [(1.3, 0.9), (0.7, 0.123), (2.0, 0.999)] {
        let e = ema(z, gamma, z);
        assert!(
            (e - z).abs() <= f64::EPSILON * z.abs(),
            "acceptance 6 FAIL: EMA fixed point off by {} at z={z}, gamma={gamma}",
            (e - z).abs()
        );
    }
    // New estimates move the average toward them from either side.
    assert!(ema(1.0, 0.5, 2.0) > 1.0 && ema(1.0, 0.5, 2.0) < 2.0);
    assert!(ema(2.0, 0.5, 1.0) < 2.0 && ema(2.0, 0.5, 1.0) > 1.0);

    // Hinge threshold at Z0 = 2 with weight eta3 = 100: zero at and above
    // the threshold, slope -1 below it (so the weighted penalty rises by
    // eta3 per unit of shortfall).
    assert_eq!(hinge(Z0, 2.0), 0.0, "acceptance 6 FAIL: hinge at the threshold");
    assert_eq!(hinge(Z0, 2.5), 0.0, "acceptance 6 FAIL: hinge above the threshold");
    assert_eq!(hinge(Z0, 1.75), 0.25, "acceptance 6 FAIL: hinge below the threshold");
    assert_eq!(ETA3 * hinge(Z0, 1.75), 25.0, "acceptance 6 FAIL: weighted hinge");
    assert_eq!(ETA3 * hinge(Z0, -1.0), 300.0, "acceptance 6 FAIL: hinge for negative z");

    println!(
        "acceptance 6 PASS: normalizer scale covariance and sign convention bitwise for \
         dyadic scales, EMA fixed point exact, hinge activates strictly below Z0 = {Z0} \
         with weight {ETA3} (all exact equalities)"
    );
}

// ---------------------------------------------------------------------------
// 7. End-to-end determinism of the history CSV
// ---------------------------------------------------------------------------

#[test]
fn a7_identical_seeds_give_byte_identical_history() {
    let history_csv = |seed: u64| -> String {
        let mut cfg = RunConfig::preset("ls_d5").unwrap();
        cfg.apply_scale(Scale::Desk);
        cfg.training.iterations = 25;
        cfg.training.validation_every = 5;
        cfg.training.seed = seed;
        cfg.fill_defaults();
        let run = cfg.assemble().unwrap();
        let trainer = Trainer {
            problem: &run.problem,
            spec: run.spec.clone(),
            config: run.train.clone(),
            reference: Some(run.reference.clone()),
            supervised: run.supervised,
            initial_params: None,
        };
        let outcome = trainer.run().unwrap();
        outcome.history.iter().map(|r| r.to_csv_row() + "\n").collect()
    };

    let first = history_csv(3);
    let second = history_csv(3);
    assert_eq!(first, second, "acceptance 7 FAIL: same seed produced different histories");
    assert!(!first.is_empty());
    let other = history_csv(4);
    assert_ne!(first, other, "acceptance 7 FAIL: the seed does not enter the run");

    println!(
        "acceptance 7 PASS: two desk-scale runs of the same preset with the same seed \
         produce byte-identical history CSVs ({} records), and a different seed changes them",
        first.lines().count()
    );
}

// ---------------------------------------------------------------------------
// 8. Full-scale runs are documented presets, not CI targets
// ---------------------------------------------------------------------------

#[test]
fn a8_full_scale_runs_are_documented_long_run_presets() {
    let mut long_runs = Vec::new();
    for name in PRESET_NAMES {
        let mut cfg = RunConfig::preset(name).unwrap();
        cfg.fill_defaults();
        let run = cfg.assemble().unwrap_or_else(|e| {
            panic!("acceptance 8 FAIL: preset {name} does not assemble: {e}")
        });
        if cfg.problem.dim == 10 {
            assert!(
                run.train.iterations >= 50_000,
                "acceptance 8 FAIL: {name} is a 10-d preset but only {} iterations",
                run.train.iterations
            );
            assert!(
                run.spec.hidden.iter().all(|&w| w >= 200),
                "acceptance 8 FAIL: {name} should carry a full-scale (200+-wide) net, got {:?}",
                run.spec.hidden
            );
            long_runs.push(format!(
                "{name} ({} iterations, {}-wide)",
                run.train.iterations, run.spec.hidden[0]
            ));
        }
    }
    assert_eq!(long_runs.len(), 5, "acceptance 8 FAIL: expected five 10-d long-run presets");

    println!(
        "acceptance 8 PASS: the 10-d results are NOT reproduced in CI — they need \
         {}, i.e. hours to days of compute. They are covered by the bundled long-run \
         presets (each assembles and carries its full-scale settings verbatim) together \
         with criteria 1-7, which exercise every mechanism those runs use: gradients (1), \
         the spectral reference (2), the fixed-point propagation (3), end-to-end training \
         on desk-scale instances (4, 5), normalization (6), and determinism (7).",
        long_runs.join(", ")
    );
}
