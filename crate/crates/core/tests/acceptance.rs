//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line (visible with `--nocapture`). Tolerances are pinned in
//! code; every random quantity flows through a fixed master seed, so the
//! suite is deterministic.

use std::sync::Arc;

use slowfast_core::averaging::{
    averaged_drift, estimate_mixing_rate, AveragingConfig, MixingStatus,
};
use slowfast_core::catalog::{builtin_model, Overrides};
use slowfast_core::experiments::{
    run_convergence, run_khasminskii, run_moments, run_window_decay, DriftSource, ExperimentConfig,
    InitialData,
};
use slowfast_core::noise::{sample_jumps, JumpSpec, MarkLaw, SeedManifest, StreamKind, StreamTag};
use slowfast_core::solver::{solve_coupled, SolverConfig};
use slowfast_core::spectral::Field;
use slowfast_core::stats::Accumulator;

const PI2: f64 = 9.869604401089358; // pi^2

fn pass(criterion: u32, detail: &str) {
    println!("acceptance {criterion:02} PASS: {detail}");
}

/// Criterion 1: zero-noise, zero-reaction coupled solve of e_1 matches the
/// closed-form linear decay per mode within 1e-6 at t = 0.1.
#[test]
fn acceptance_01_linear_solver_exactness() {
    let model = builtin_model(
        "deterministic-cubic",
        &Overrides::from_pairs(&[("b1_scale", 0.0), ("b2_scale", 0.0)]).unwrap(),
    )
    .unwrap();
    let x0 = Field::mode(Arc::clone(&model.basis), 0, 1.0).unwrap();
    let y0 = Field::zero(Arc::clone(&model.basis));
    let config = SolverConfig {
        horizon: 0.1,
        macro_step: 0.01,
        ..SolverConfig::default()
    };
    let manifest = SeedManifest::new(101);
    let (u, _) = solve_coupled(&model, &x0, &y0, 0.1, &config, &manifest, 0).unwrap();
    // gamma_1 = 1, so the exact mode-k factor is exp(-0.1 alpha_k).
    let mut worst = 0.0f64;
    for (k, &c) in u.final_state().coefficients().iter().enumerate() {
        let exact = if k == 0 { (-0.1 * PI2).exp() } else { 0.0 };
        worst = worst.max((c - exact).abs());
    }
    assert!(worst <= 1e-6, "per-mode error {worst}");
    pass(1, &format!("per-mode error {worst:.2e} <= 1e-6"));
}

/// Criterion 2: identical manifests with radii 20 and 50 give bit-identical
/// trajectories up to the smaller stopping time on 50 paths. Noise is
/// amplified so the radius is genuinely reached on some paths.
#[test]
fn acceptance_02_truncation_consistency() {
    // Jump kicks large enough that a third of the paths exit radius 20
    // while the cubic reactions stay active (the truncated-drift regime the
    // consistency property is about).
    let overrides =
        Overrides::from_pairs(&[("f1_amp", 2.0), ("g1_amp", 18.0), ("jump_rate", 5.0)]).unwrap();
    let model = builtin_model("cubic-gl", &overrides).unwrap();
    let x0 = Field::mode(Arc::clone(&model.basis), 0, 10.0).unwrap();
    let y0 = Field::zero(Arc::clone(&model.basis));
    let manifest = SeedManifest::new(102);
    let small_cfg = SolverConfig {
        truncation_radius: 20.0,
        horizon: 1.0,
        ..SolverConfig::default()
    };
    let large_cfg = SolverConfig {
        truncation_radius: 50.0,
        horizon: 1.0,
        ..SolverConfig::default()
    };
    let mut stopped = 0;
    for path in 0..50u64 {
        let (us, vs) = solve_coupled(&model, &x0, &y0, 0.5, &small_cfg, &manifest, path).unwrap();
        let (ul, vl) = solve_coupled(&model, &x0, &y0, 0.5, &large_cfg, &manifest, path).unwrap();
        if us.stopped() {
            stopped += 1;
        }
        for (i, t) in us.times.iter().enumerate() {
            let j = ul
                .times
                .iter()
                .position(|tj| tj == t)
                .expect("shared grid point");
            assert_eq!(
                us.states[i].coefficients(),
                ul.states[j].coefficients(),
                "slow mismatch at t = {t} on path {path}"
            );
            assert_eq!(
                vs.states[i].coefficients(),
                vl.states[j].coefficients(),
                "fast mismatch at t = {t} on path {path}"
            );
        }
    }
    assert!(stopped > 0, "no path reached radius 20; criterion vacuous");
    pass(
        2,
        &format!("50 paths bit-identical up to the stopping time ({stopped} stopped)"),
    );
}

/// Criterion 3: the compensated jump integral of a state-independent
/// coefficient has ensemble mean within 3 standard errors of zero over
/// 10^4 paths.
#[test]
fn acceptance_03_compensation_martingale() {
    let spec = JumpSpec::new(2.0, MarkLaw::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
    let g = |z: f64| 0.05 * z;
    let horizon = 1.0;
    let compensator = spec.nu_integral(g) * horizon;
    let manifest = SeedManifest::new(103);
    let mut acc = Accumulator::new();
    for path in 0..10_000u64 {
        let mut rng = manifest.stream(path, StreamTag::new(StreamKind::SlowJumps));
        let events = sample_jumps(&spec, (0.0, horizon), 1.0, &mut rng).unwrap();
        let sum: f64 = events.events.iter().map(|&(_, z)| g(z)).sum();
        acc.push(sum - compensator);
    }
    assert!(
        acc.mean().abs() <= 3.0 * acc.std_err(),
        "mean {} exceeds 3 se {}",
        acc.mean(),
        acc.std_err()
    );
    pass(
        3,
        &format!(
            "|mean| {:.2e} <= 3 se {:.2e} over 10^4 paths",
            acc.mean().abs(),
            3.0 * acc.std_err()
        ),
    );
}

/// Criterion 4: the zero-noise linear mixing rate matches
/// alpha + 2 pi^2 + 1 within 2 percent, and the cubic model's fitted rate is
/// positive with a 95 percent CI excluding zero at 10^3 coupled pairs.
#[test]
fn acceptance_04_mixing_rates() {
    let zero_noise = Overrides::from_pairs(&[
        ("f1_amp", 0.0),
        ("f2_amp", 0.0),
        ("g1_amp", 0.0),
        ("g2_amp", 0.0),
        ("jump_rate", 0.0),
    ])
    .unwrap();
    let linear = builtin_model("linear", &zero_noise).unwrap();
    let config = SolverConfig {
        fast_step_target: 0.01,
        horizon: 1.0,
        ..SolverConfig::default()
    };
    let manifest = SeedManifest::new(104);
    let x = Field::zero(Arc::clone(&linear.basis));
    let y1 = Field::mode(Arc::clone(&linear.basis), 0, 1.0).unwrap();
    let y2 = Field::zero(Arc::clone(&linear.basis));
    let est = estimate_mixing_rate(&linear, &x, &y1, &y2, 1.0, 1, &config, &manifest).unwrap();
    let closed_form = linear.alpha + 2.0 * PI2 + 1.0;
    let rel = (est.delta_hat - closed_form).abs() / closed_form;
    assert!(rel < 0.02, "linear rate {} vs {closed_form}", est.delta_hat);

    let cubic = builtin_model("cubic-gl", &Overrides::default()).unwrap();
    let x = Field::mode(Arc::clone(&cubic.basis), 0, 0.5).unwrap();
    let y1 = Field::mode(Arc::clone(&cubic.basis), 0, 1.0).unwrap();
    let y2 = Field::zero(Arc::clone(&cubic.basis));
    let cubic_cfg = SolverConfig {
        fast_step_target: 0.02,
        horizon: 1.0,
        ..SolverConfig::default()
    };
    let est_cubic =
        estimate_mixing_rate(&cubic, &x, &y1, &y2, 1.0, 1000, &cubic_cfg, &manifest).unwrap();
    assert_eq!(est_cubic.status, MixingStatus::Ok);
    assert!(
        est_cubic.ci.0 > 0.0,
        "cubic CI {:?} does not exclude zero",
        est_cubic.ci
    );
    pass(
        4,
        &format!(
            "linear rate within {:.2}% of {closed_form:.4}; cubic rate {:.3} with CI ({:.3}, {:.3})",
            rel * 100.0,
            est_cubic.delta_hat,
            est_cubic.ci.0,
            est_cubic.ci.1
        ),
    );
}

/// Criterion 5: (a) a y-independent slow reaction averages to itself exactly
/// with zero standard error; (b) the linear model's averaged drift matches
/// the closed-form equilibrium within 1 percent for c in {0.5, 1, 2}.
#[test]
fn acceptance_05_averaged_drift_correctness() {
    let manifest = SeedManifest::new(105);

    // (a) exactness
    let decoupled = builtin_model(
        "cubic-gl",
        &Overrides::from_pairs(&[("b1_y_coupling", 0.0)]).unwrap(),
    )
    .unwrap();
    let x = Field::mode(Arc::clone(&decoupled.basis), 0, 0.8).unwrap();
    let cfg = AveragingConfig {
        ensemble: 16,
        burn_in: 0.3,
        t_avg: 1.0,
        ..AveragingConfig::default()
    };
    let est = averaged_drift(&decoupled, &x, &cfg, &manifest).unwrap();
    let expected =
        slowfast_core::spectral::apply_pointwise(0.0, &[&x], |_, _, s| -s[0].powi(3)).unwrap();
    assert_eq!(est.drift.coefficients(), expected.coefficients());
    assert_eq!(est.max_std_err(), 0.0);

    // (b) linear closed form
    let linear = builtin_model("linear", &Overrides::default()).unwrap();
    let rate = linear.alpha + 2.0 * PI2 + 1.0;
    let mut worst_rel = 0.0f64;
    for (i, &c) in [0.5, 1.0, 2.0].iter().enumerate() {
        let x = Field::mode(Arc::clone(&linear.basis), 0, c).unwrap();
        let cfg = AveragingConfig {
            ensemble: 512,
            burn_in: 5.0 / rate,
            t_avg: 40.0 / rate,
            fast_step: 0.02,
            salt: i as u64,
            ..AveragingConfig::default()
        };
        let est = averaged_drift(&linear, &x, &cfg, &manifest).unwrap();
        let got = est.drift.coefficients()[0];
        let exact = c / rate;
        let rel = (got - exact).abs() / exact;
        worst_rel = worst_rel.max(rel);
        assert!(
            rel < 0.01,
            "c = {c}: mode-1 drift {got} vs {exact} ({rel:.4})"
        );
    }
    pass(
        5,
        &format!(
            "exact decoupled average; linear closed form within {:.2}%",
            worst_rel * 100.0
        ),
    );
}

/// Criterion 6: finite-horizon averages at T and 2T agree within two pooled
/// standard errors, and deviations from the 4T estimate shrink as the
/// window grows.
#[test]
fn acceptance_06_window_decay() {
    let model = builtin_model("cubic-gl", &Overrides::default()).unwrap();
    let config = ExperimentConfig {
        ensemble: 256,
        x0: InitialData::Mode {
            index: 0,
            amplitude: 0.5,
        },
        t_avg_mixing_times: 20.0,
        burn_in_mixing_times: 5.0,
        ..ExperimentConfig::default()
    };
    let manifest = SeedManifest::new(106);
    let report = run_window_decay(&model, &config, &manifest).unwrap();
    assert!(
        report.first_pair_diff <= 2.0 * report.pooled_first_pair,
        "T vs 2T differ by {} > 2 pooled se {}",
        report.first_pair_diff,
        report.pooled_first_pair
    );
    assert!(
        report.deviations[1] < report.deviations[0],
        "deviation from the 4T estimate did not shrink: {:?}",
        report.deviations
    );
    pass(
        6,
        &format!(
            "T vs 2T diff {:.2e} <= 2 se {:.2e}; deviations {:.2e} -> {:.2e}",
            report.first_pair_diff,
            2.0 * report.pooled_first_pair,
            report.deviations[0],
            report.deviations[1]
        ),
    );
}

/// Criterion 7: the auxiliary fast motion's sup_t E||v_hat - v||^2 at
/// eps = 0.01 sits strictly below its value at eps = 0.1 with bootstrap-CI
/// separation (kappa = 0.5, 200 paths).
#[test]
fn acceptance_07_khasminskii_auxiliary() {
    let model = builtin_model("cubic-gl", &Overrides::default()).unwrap();
    let config = ExperimentConfig {
        paths: 200,
        eps_grid: vec![0.1, 0.01],
        kappa: 0.5,
        horizon: 1.0,
        ..ExperimentConfig::default()
    };
    let manifest = SeedManifest::new(107);
    let report = run_khasminskii(&model, &config, &manifest).unwrap();
    let (a, b) = (&report.cells[0], &report.cells[1]);
    assert!(
        b.sup_mean_sq < a.sup_mean_sq && b.ci.1 < a.ci.0,
        "no CI separation: eps 0.1 -> {} ({:?}), eps 0.01 -> {} ({:?})",
        a.sup_mean_sq,
        a.ci,
        b.sup_mean_sq,
        b.ci
    );
    pass(
        7,
        &format!(
            "sup E||v_hat - v||^2: {:.3e} at eps 0.1 vs {:.3e} at eps 0.01 (CIs separated)",
            a.sup_mean_sq, b.sup_mean_sq
        ),
    );
}

/// Criterion 8: the averaging principle on the cubic model. Median
/// sup-over-time error strictly decreases over eps in {0.1, 0.01, 0.001}
/// with bootstrap-CI separation between the first and last cells, and the
/// exceedance probability at eta = half the first-cell median decreases.
#[test]
fn acceptance_08_averaging_principle() {
    let model = builtin_model("cubic-gl", &Overrides::default()).unwrap();
    // The macro step is refined here because the snapshot coupling carries
    // an epsilon-independent O(sqrt(h T)) sampling error that would
    // otherwise floor the small-epsilon cells.
    let config = ExperimentConfig {
        paths: 200,
        eps_grid: vec![0.1, 0.01, 0.001],
        horizon: 1.0,
        macro_step: 0.0025,
        cache_resolution: 0.02,
        ensemble: 128,
        drift: DriftSource::Estimated,
        ..ExperimentConfig::default()
    };
    let manifest = SeedManifest::new(108);
    let report = run_convergence(&model, &config, &manifest).unwrap();
    let medians: Vec<f64> = report.cells.iter().map(|c| c.median).collect();
    assert!(
        medians.windows(2).all(|w| w[1] < w[0]),
        "medians not strictly decreasing: {medians:?}"
    );
    let first = &report.cells[0];
    let last = report.cells.last().unwrap();
    assert!(
        last.median_ci.1 < first.median_ci.0,
        "no CI separation: first {:?}, last {:?}",
        first.median_ci,
        last.median_ci
    );
    let exceed: Vec<f64> = report.cells.iter().map(|c| c.exceed[0]).collect();
    assert!(
        exceed.windows(2).all(|w| w[1] <= w[0]) && exceed.last() < exceed.first(),
        "exceedance probabilities not decreasing: {exceed:?}"
    );
    pass(
        8,
        &format!("medians {medians:?} decreasing with CI separation; P(err > eta) {exceed:?}"),
    );
}

/// Criterion 9: p in {2, 4} ensemble moments of slow sup-norms stay within a
/// factor-2 band (plus Monte Carlo slack) across eps in {1, 0.1, 0.01}.
#[test]
fn acceptance_09_moment_uniformity() {
    let model = builtin_model("cubic-gl", &Overrides::default()).unwrap();
    // Zero initial data keeps the sup-norms noise-driven, so the moments
    // carry genuine path-to-path variance across the epsilon grid.
    let config = ExperimentConfig {
        paths: 200,
        eps_grid: vec![1.0, 0.1, 0.01],
        horizon: 1.0,
        x0: InitialData::Zero,
        y0: InitialData::Zero,
        ..ExperimentConfig::default()
    };
    let manifest = SeedManifest::new(109);
    let report = run_moments(&model, &config, &manifest).unwrap();
    for band in &report.bands {
        assert!(
            band.within_band,
            "p = {}: max {} vs 2 min {} + slack {}",
            band.p,
            band.max_moment,
            2.0 * band.min_moment,
            band.mc_slack
        );
    }
    pass(
        9,
        &format!(
            "moment bands: {}",
            report
                .bands
                .iter()
                .map(|b| format!("p={}: [{:.3e}, {:.3e}]", b.p, b.min_moment, b.max_moment))
                .collect::<Vec<_>>()
                .join("; ")
        ),
    );
}

/// Criterion 10: re-running an experiment from its manifest reproduces every
/// CSV byte for byte.
#[test]
fn acceptance_10_replay_determinism() {
    let model = builtin_model("linear", &Overrides::default()).unwrap();
    let config = ExperimentConfig {
        paths: 40,
        eps_grid: vec![0.1, 0.01],
        horizon: 0.3,
        drift: DriftSource::ClosedFormLinear,
        bootstrap_reps: 200,
        ..ExperimentConfig::default()
    };
    let manifest = SeedManifest::new(110);
    let a = run_convergence(&model, &config, &manifest).unwrap();
    let b = run_convergence(&model, &config, &manifest).unwrap();
    assert_eq!(a.errors_csv(), b.errors_csv());
    assert_eq!(a.summary_csv(), b.summary_csv());

    let cubic = builtin_model("cubic-gl", &Overrides::default()).unwrap();
    let kh_config = ExperimentConfig {
        paths: 20,
        eps_grid: vec![0.1, 0.05],
        horizon: 0.5,
        bootstrap_reps: 100,
        ..ExperimentConfig::default()
    };
    let ka = run_khasminskii(&cubic, &kh_config, &manifest).unwrap();
    let kb = run_khasminskii(&cubic, &kh_config, &manifest).unwrap();
    assert_eq!(ka.csv(), kb.csv());
    pass(
        10,
        "convergence and auxiliary-motion CSVs replay byte-identically",
    );
}
