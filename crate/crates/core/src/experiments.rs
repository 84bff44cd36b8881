//! Named experiment runners: averaging-principle convergence, mixing rates,
//! moment bounds, almost periodicity, and the windowed auxiliary-motion
//! comparison, each producing a structured report and deterministic CSV
//! tables.
//!
//! Determinism contract: every runner is a pure function of (model, config,
//! master seed). Paths are distributed over a worker pool but reduced in
//! path order, and all Monte Carlo draws flow through manifest-derived
//! substreams, so re-running from the embedded manifest reproduces every CSV
//! byte for byte. Wall-clock timings are reported in the JSON report only,
//! never in CSV.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{
    auxiliary_fast, averaged_drift_windows, closed_form_linear_drift, estimate_mixing_rate,
    AveragedDriftCache, AveragingConfig, KhasminskiiSchedule, MixingStatus, WindowSnapshots,
};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::noise::{SeedManifest, StreamKind, StreamTag};
use crate::solver::{solve_averaged, solve_coupled, SolverConfig, TrajectoryRecord};
use crate::spectral::{apply_pointwise, Field, SpectralBasis};
use crate::stats::{bootstrap_ci, quantile_sorted, Accumulator};
use crate::validate::validate_assumptions;

/// Initial data selector for configuration files.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialData {
    Zero,
    Mode { index: usize, amplitude: f64 },
    Coefficients { values: Vec<f64> },
}

impl InitialData {
    pub fn realize(&self, basis: &Arc<SpectralBasis>) -> Result<Field> {
        match self {
            InitialData::Zero => Ok(Field::zero(Arc::clone(basis))),
            InitialData::Mode { index, amplitude } => {
                Field::mode(Arc::clone(basis), *index, *amplitude)
            }
            InitialData::Coefficients { values } => {
                Field::from_coefficients(Arc::clone(basis), values.clone())
            }
        }
    }
}

/// Source of the averaged drift for the averaged-equation solves.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DriftSource {
    /// Per-mode equilibrium closed form; exact for the linear catalog model.
    ClosedFormLinear,
    /// Ergodic estimation through the quantized-state cache.
    Estimated,
}

/// Shared experiment configuration (serialized into every report).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub paths: usize,
    pub eps_grid: Vec<f64>,
    pub horizon: f64,
    pub macro_step: f64,
    pub fast_step_target: f64,
    pub truncation_radius: f64,
    pub x0: InitialData,
    pub y0: InitialData,
    /// Exceedance thresholds; empty means "half the first cell's median".
    pub thresholds: Vec<f64>,
    /// Ensemble size for averaged-drift estimation.
    pub ensemble: usize,
    /// Coupled pairs for mixing-rate fits.
    pub mixing_pairs: usize,
    /// Averaging window in units of the fitted mixing time 1/delta.
    pub t_avg_mixing_times: f64,
    /// Burn-in in units of the fitted mixing time.
    pub burn_in_mixing_times: f64,
    pub cache_resolution: f64,
    pub kappa: f64,
    pub bootstrap_reps: usize,
    pub drift: DriftSource,
    /// Sample times for the almost-periodicity comparison.
    pub ap_times: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: 200,
            eps_grid: vec![0.1, 0.01, 0.001],
            horizon: 1.0,
            macro_step: 0.01,
            fast_step_target: 0.05,
            truncation_radius: 50.0,
            x0: InitialData::Mode {
                index: 0,
                amplitude: 0.5,
            },
            y0: InitialData::Zero,
            thresholds: vec![],
            ensemble: 64,
            mixing_pairs: 200,
            t_avg_mixing_times: 20.0,
            burn_in_mixing_times: 5.0,
            cache_resolution: 0.05,
            kappa: 0.5,
            bootstrap_reps: 500,
            drift: DriftSource::Estimated,
            ap_times: vec![0.25, 0.75],
        }
    }
}

impl ExperimentConfig {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            macro_step: self.macro_step,
            fast_step_target: self.fast_step_target,
            truncation_radius: self.truncation_radius,
            horizon: self.horizon,
            record_stride: 1,
        }
    }
}

/// Replay information embedded in every report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayInfo {
    pub master_seed: u64,
    pub model: String,
    pub config: ExperimentConfig,
}

fn replay_info(
    model: &ModelSpec,
    config: &ExperimentConfig,
    manifest: &SeedManifest,
) -> ReplayInfo {
    ReplayInfo {
        master_seed: manifest.master_seed,
        model: model.name.clone(),
        config: config.clone(),
    }
}

// ---------------------------------------------------------------------------
// CSV rendering
// ---------------------------------------------------------------------------

/// RFC-4180-style field quoting (applied only when needed; values here are
/// numbers and plain tokens).
fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

fn csv_line(fields: &[String]) -> String {
    fields
        .iter()
        .map(|f| csv_field(f))
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------------
// Mixing-time calibration shared by the runners
// ---------------------------------------------------------------------------

/// Fits the forgetting rate on a small coupled-pair ensemble and converts
/// the mixing-time-denominated windows into absolute times. Returns the
/// resolved averaging parameters together with the fitted rate.
pub fn resolve_averaging_config(
    model: &ModelSpec,
    config: &ExperimentConfig,
    manifest: &SeedManifest,
) -> Result<(AveragingConfig, f64)> {
    let basis = &model.basis;
    let x = config.x0.realize(basis)?;
    let y1 = Field::mode(Arc::clone(basis), 0, 1.0)?;
    let y2 = Field::zero(Arc::clone(basis));
    let solver_cfg = SolverConfig {
        macro_step: config.fast_step_target,
        fast_step_target: config.fast_step_target,
        truncation_radius: config.truncation_radius,
        horizon: 1.0,
        record_stride: 1,
    };
    let calib = estimate_mixing_rate(model, &x, &y1, &y2, 1.0, 32, &solver_cfg, manifest)?;
    let delta = if calib.status == MixingStatus::Ok {
        calib.delta_hat
    } else {
        // Conservative fallback: the linear decay floor of the fast part.
        model.alpha + model.fast_operator.gamma_bounds.0 * basis.eigenvalue(0)
    };
    let mixing_time = delta.recip();
    Ok((
        AveragingConfig {
            ensemble: config.ensemble,
            burn_in: config.burn_in_mixing_times * mixing_time,
            t_avg: config.t_avg_mixing_times * mixing_time,
            fast_step: config.fast_step_target,
            truncation_radius: config.truncation_radius,
            salt: 0,
        },
        delta,
    ))
}

// ---------------------------------------------------------------------------
// Convergence experiment
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceCell {
    pub epsilon: f64,
    /// Per-path sup-over-time sup-norm errors (valid paths only, path order).
    pub errors: Vec<f64>,
    pub blowups: usize,
    pub unreliable: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub median_ci: (f64, f64),
    /// P(error > eta) per threshold.
    pub exceed: Vec<f64>,
    /// Aggregate worker seconds per arm (diagnostic; not in CSV).
    pub wall_coupled_s: f64,
    pub wall_averaged_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub cells: Vec<ConvergenceCell>,
    pub thresholds: Vec<f64>,
    pub mixing_rate: f64,
    pub replay: ReplayInfo,
}

impl ConvergenceReport {
    /// Per-path error table.
    pub fn errors_csv(&self) -> String {
        let mut out = String::from("epsilon,path,sup_error\n");
        for cell in &self.cells {
            for (path, err) in cell.errors.iter().enumerate() {
                out.push_str(&csv_line(&[fmt(cell.epsilon), path.to_string(), fmt(*err)]));
                out.push('\n');
            }
        }
        out
    }

    /// Cell summary table.
    pub fn summary_csv(&self) -> String {
        let mut header = vec![
            "epsilon".to_string(),
            "paths".to_string(),
            "blowups".to_string(),
            "unreliable".to_string(),
            "median".to_string(),
            "q25".to_string(),
            "q75".to_string(),
            "median_ci_lo".to_string(),
            "median_ci_hi".to_string(),
        ];
        for eta in &self.thresholds {
            header.push(format!("p_gt_{eta}"));
        }
        let mut out = csv_line(&header);
        out.push('\n');
        for cell in &self.cells {
            let mut row = vec![
                fmt(cell.epsilon),
                cell.errors.len().to_string(),
                cell.blowups.to_string(),
                cell.unreliable.to_string(),
                fmt(cell.median),
                fmt(cell.q25),
                fmt(cell.q75),
                fmt(cell.median_ci.0),
                fmt(cell.median_ci.1),
            ];
            for p in &cell.exceed {
                row.push(fmt(*p));
            }
            out.push_str(&csv_line(&row));
            out.push('\n');
        }
        out
    }
}

enum PathOutcome {
    Error(f64),
    BlowUp,
    Unreliable,
}

/// Pathwise sup-over-time sup-norm distance between two records on their
/// shared recorded prefix.
fn sup_distance(a: &TrajectoryRecord, b: &TrajectoryRecord) -> Result<f64> {
    let shared = a.len().min(b.len());
    let mut sup = 0.0f64;
    for i in 0..shared {
        let d = a.states[i].lin_comb(1.0, &b.states[i], -1.0)?.sup_norm()?;
        sup = sup.max(d);
    }
    Ok(sup)
}

/// Runs the averaging-principle comparison: for each epsilon, coupled and
/// averaged paths share slow-noise substreams pathwise, so the per-path
/// error isolates the averaging error.
pub fn run_convergence(
    model: &ModelSpec,
    config: &ExperimentConfig,
    manifest: &SeedManifest,
) -> Result<ConvergenceReport> {
    if config.eps_grid.is_empty() || config.eps_grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidParameter(
            "epsilon grid must be strictly decreasing and nonempty".into(),
        ));
    }
    let basis = &model.basis;
    let x0 = config.x0.realize(basis)?;
    let y0 = config.y0.realize(basis)?;
    let solver_cfg = config.solver_config();

    let (avg_cfg, mixing_rate) = match config.drift {
        DriftSource::Estimated => resolve_averaging_config(model, config, manifest)?,
        DriftSource::ClosedFormLinear => (AveragingConfig::default(), 0.0),
    };
    let cache = AveragedDriftCache::new(config.cache_resolution)?;

    let mut cells = Vec::with_capacity(config.eps_grid.len());
    for &epsilon in &config.eps_grid {
        let outcomes: Vec<(PathOutcome, f64, f64)> = (0..config.paths)
            .into_par_iter()
            .map(|path| -> Result<(PathOutcome, f64, f64)> {
                let clock = Instant::now();
                let coupled =
                    solve_coupled(model, &x0, &y0, epsilon, &solver_cfg, manifest, path as u64);
                let wall_coupled = clock.elapsed().as_secs_f64();
                let coupled = match coupled {
                    Ok((u, _)) => u,
                    Err(Error::BlowUp { .. }) => {
                        return Ok((PathOutcome::BlowUp, wall_coupled, 0.0))
                    }
                    Err(e) => return Err(e),
                };
                let clock = Instant::now();
                let averaged = match config.drift {
                    DriftSource::ClosedFormLinear => {
                        let drift_fn = closed_form_linear_drift(model);
                        let mut drift = |x: &Field| drift_fn(x);
                        solve_averaged(model, &mut drift, &x0, &solver_cfg, manifest, path as u64)
                    }
                    DriftSource::Estimated => {
                        let mut drift = |x: &Field| {
                            cache.get_or_compute(
                                model,
                                x,
                                config.cache_resolution,
                                &avg_cfg,
                                manifest,
                            )
                        };
                        solve_averaged(model, &mut drift, &x0, &solver_cfg, manifest, path as u64)
                    }
                };
                let wall_averaged = clock.elapsed().as_secs_f64();
                let averaged = match averaged {
                    Ok(u) => u,
                    Err(Error::BlowUp { .. }) => {
                        return Ok((PathOutcome::BlowUp, wall_coupled, wall_averaged))
                    }
                    Err(Error::UnreliableEstimate { .. }) => {
                        return Ok((PathOutcome::Unreliable, wall_coupled, wall_averaged))
                    }
                    Err(e) => return Err(e),
                };
                let err = sup_distance(&coupled, &averaged)?;
                Ok((PathOutcome::Error(err), wall_coupled, wall_averaged))
            })
            .collect::<Result<_>>()?;

        let mut errors = Vec::with_capacity(config.paths);
        let mut blowups = 0;
        let mut unreliable = 0;
        let mut wall_coupled = 0.0;
        let mut wall_averaged = 0.0;
        for (outcome, wc, wa) in outcomes {
            wall_coupled += wc;
            wall_averaged += wa;
            match outcome {
                PathOutcome::Error(e) => errors.push(e),
                PathOutcome::BlowUp => blowups += 1,
                PathOutcome::Unreliable => unreliable += 1,
            }
        }
        if errors.is_empty() {
            return Err(Error::BlowUp {
                last_valid_time: 0.0,
            });
        }
        let mut sorted = errors.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
        let mut rng = manifest.stream(
            (epsilon * 1e9) as u64,
            StreamTag::with_salt(StreamKind::Bootstrap, 0x434F4E56),
        );
        let median_ci = bootstrap_ci(
            &errors,
            crate::stats::median,
            config.bootstrap_reps,
            0.95,
            &mut rng,
        );
        cells.push(ConvergenceCell {
            epsilon,
            median: quantile_sorted(&sorted, 0.5),
            q25: quantile_sorted(&sorted, 0.25),
            q75: quantile_sorted(&sorted, 0.75),
            median_ci,
            exceed: vec![],
            errors,
            blowups,
            unreliable,
            wall_coupled_s: wall_coupled,
            wall_averaged_s: wall_averaged,
        });
    }

    // Thresholds: configured, or half the first cell's median.
    let thresholds = if config.thresholds.is_empty() {
        vec![cells[0].median / 2.0]
    } else {
        config.thresholds.clone()
    };
    for cell in &mut cells {
        cell.exceed = thresholds
            .iter()
            .map(|&eta| {
                cell.errors.iter().filter(|&&e| e > eta).count() as f64 / cell.errors.len() as f64
            })
            .collect();
    }

    Ok(ConvergenceReport {
        cells,
        thresholds,
        mixing_rate,
        replay: replay_info(model, config, manifest),
    })
}

// ---------------------------------------------------------------------------
// Mixing experiment
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingReport {
    pub delta_hat: f64,
    pub ci: (f64, f64),
    pub status: MixingStatus,
    /// alpha + gamma_avg alpha_1 + fitted dissipativity margin; exact for
    /// linear fast reactions with state-independent noise.
    pub reference_rate: f64,
    pub rel_err_vs_reference: f64,
    pub pairs: usize,
    pub replay: ReplayInfo,
}

impl MixingReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(
            "delta_hat,ci_lo,ci_hi,status,reference_rate,rel_err_vs_reference,pairs\n",
        );
        out.push_str(&csv_line(&[
            fmt(self.delta_hat),
            fmt(self.ci.0),
            fmt(self.ci.1),
            format!("{:?}", self.status).to_lowercase(),
            fmt(self.reference_rate),
            fmt(self.rel_err_vs_reference),
            self.pairs.to_string(),
        ]));
        out.push('\n');
        out
    }
}

/// Fits the forgetting rate of the frozen-fast equation on coupled pairs
/// started from e_1 and 0.
pub fn run_mixing(
    model: &ModelSpec,
    config: &ExperimentConfig,
    manifest: &SeedManifest,
) -> Result<MixingReport> {
    let basis = &model.basis;
    let x = config.x0.realize(basis)?;
    let y1 = Field::mode(Arc::clone(basis), 0, 1.0)?;
    let y2 = Field::zero(Arc::clone(basis));
    let solver_cfg = SolverConfig {
        macro_step: config.fast_step_target,
        fast_step_target: config.fast_step_target,
        truncation_radius: config.truncation_radius,
        horizon: 1.0,
        record_stride: 1,
    };
    let est = estimate_mixing_rate(
        model,
        &x,
        &y1,
        &y2,
        1.0,
        config.mixing_pairs,
        &solver_cfg,
        manifest,
    )?;
    let report = validate_assumptions(model, 2000, manifest.master_seed);
    let margin = report
        .get("A4d")
        .and_then(|c| c.fitted_value("dissipativity_margin"))
        .unwrap_or(0.0);
    let reference = model.alpha + model.fast_gamma_average() * basis.eigenvalue(0) + margin;
    Ok(MixingReport {
        delta_hat: est.delta_hat,
        ci: est.ci,
        status: est.status,
        reference_rate: reference,
        rel_err_vs_reference: (est.delta_hat - reference).abs() / reference.abs().max(1e-300),
        pairs: config.mixing_pairs,
        replay: replay_info(model, config, manifest),
    })
}

// ---------------------------------------------------------------------------
// Moment experiment
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentCell {
    pub epsilon: f64,
    pub p: f64,
    /// Ensemble mean of sup_t ||u||^p with its standard error.
    pub slow_sup_moment: f64,
    pub slow_se: f64,
    /// Time-averaged ensemble mean of ||v||^p with its standard error.
    pub fast_int_moment: f64,
    pub fast_se: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentBand {
    pub p: f64,
    pub max_moment: f64,
    pub min_moment: f64,
    /// Monte Carlo slack 2 (se_max + 2 se_min) added to the factor-2 band.
    pub mc_slack: f64,
    pub within_band: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderDiagnostic {
    pub lag: f64,
    pub mean_increment_sq: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentReport {
    pub cells: Vec<MomentCell>,
    pub bands: Vec<MomentBand>,
    /// Mean ||u(t + lag) - u(t)||^2 per lag with the fitted log-log slope.
    pub holder: Vec<HolderDiagnostic>,
    pub holder_exponent: f64,
    pub replay: ReplayInfo,
}

impl MomentReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("epsilon,p,slow_sup_moment,slow_se,fast_int_moment,fast_se\n");
        for c in &self.cells {
            out.push_str(&csv_line(&[
                fmt(c.epsilon),
                fmt(c.p),
                fmt(c.slow_sup_moment),
                fmt(c.slow_se),
                fmt(c.fast_int_moment),
                fmt(c.fast_se),
            ]));
            out.push('\n');
        }
        out
    }

    pub fn all_within_band(&self) -> bool {
        self.bands.iter().all(|b| b.within_band)
    }
}

/// Ensemble moments of sup-norms across the epsilon grid, the factor-2
/// uniformity band, and time-increment diagnostics.
pub fn run_moments(
    model: &ModelSpec,
    config: &ExperimentConfig,
    manifest: &SeedManifest,
) -> Result<MomentReport> {
    let basis = &model.basis;
    let x0 = config.x0.realize(basis)?;
    let y0 = config.y0.realize(basis)?;
    let solver_cfg = config.solver_config();
    let ps = [2.0, 4.0];

    let mut cells = Vec::new();
    let mut holder_acc: Vec<(f64, Accumulator)> = [1.0, 2.0, 4.0, 8.0]
        .iter()
        .map(|&k| (k * config.macro_step, Accumulator::new()))
        .collect();

    for &epsilon in &config.eps_grid {
        let stats: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..config.paths)
            .into_par_iter()
            .map(|path| -> Result<(f64, Vec<f64>, Vec<f64>)> {
                let (u, v) =
                    solve_coupled(model, &x0, &y0, epsilon, &solver_cfg, manifest, path as u64)?;
                let mut sup_u = 0.0f64;
                for s in &u.states {
                    sup_u = sup_u.max(s.sup_norm()?);
                }
                // Time means of ||v||^p per path (the time-integrated
                // moments, up to the 1/T normalization).
                let mut v_time_means: Vec<Accumulator> =
                    ps.iter().map(|_| Accumulator::new()).collect();
                for s in &v.states {
                    let norm = s.sup_norm()?;
                    for (acc, &p) in v_time_means.iter_mut().zip(&ps) {
                        acc.push(norm.powf(p));
                    }
                }
                let v_means: Vec<f64> = v_time_means.iter().map(|a| a.mean()).collect();
                // Increment norms for the time-regularity diagnostic
                // (epsilon-independent estimate; every cell contributes).
                let mut increments = Vec::new();
                for lag_steps in [1usize, 2, 4, 8] {
                    let mut acc = Accumulator::new();
                    for i in lag_steps..u.len() {
                        let d = u.states[i]
                            .lin_comb(1.0, &u.states[i - lag_steps], -1.0)?
                            .sup_norm()?;
                        acc.push(d * d);
                    }
                    increments.push(acc.mean());
                }
                Ok((sup_u, v_means, increments))
            })
            .collect::<Result<_>>()?;

        for (pi, &p) in ps.iter().enumerate() {
            let mut slow = Accumulator::new();
            let mut fast = Accumulator::new();
            for (sup_u, v_means, _) in &stats {
                slow.push(sup_u.powf(p));
                fast.push(v_means[pi]);
            }
            cells.push(MomentCell {
                epsilon,
                p,
                slow_sup_moment: slow.mean(),
                slow_se: slow.std_err(),
                fast_int_moment: fast.mean(),
                fast_se: fast.std_err(),
            });
        }
        for (_, _, increments) in &stats {
            for (slot, inc) in holder_acc.iter_mut().zip(increments) {
                slot.1.push(*inc);
            }
        }
    }

    let bands = ps
        .iter()
        .map(|&p| {
            let in_band: Vec<&MomentCell> = cells.iter().filter(|c| c.p == p).collect();
            let max_cell = in_band
                .iter()
                .max_by(|a, b| a.slow_sup_moment.partial_cmp(&b.slow_sup_moment).unwrap())
                .expect("cells nonempty");
            let min_cell = in_band
                .iter()
                .min_by(|a, b| a.slow_sup_moment.partial_cmp(&b.slow_sup_moment).unwrap())
                .expect("cells nonempty");
            let mc_slack = 2.0 * (max_cell.slow_se + 2.0 * min_cell.slow_se);
            MomentBand {
                p,
                max_moment: max_cell.slow_sup_moment,
                min_moment: min_cell.slow_sup_moment,
                mc_slack,
                within_band: max_cell.slow_sup_moment <= 2.0 * min_cell.slow_sup_moment + mc_slack,
            }
        })
        .collect();

    let holder: Vec<HolderDiagnostic> = holder_acc
        .iter()
        .map(|(lag, acc)| HolderDiagnostic {
            lag: *lag,
            mean_increment_sq: acc.mean(),
        })
        .collect();
    let lags: Vec<f64> = holder.iter().map(|h| h.lag.ln()).collect();
    let vals: Vec<f64> = holder
        .iter()
        .map(|h| h.mean_increment_sq.max(1e-300).ln())
        .collect();
    let (holder_exponent, _) = crate::stats::linear_fit(&lags, &vals);

    Ok(MomentReport {
        cells,
        bands,
        holder,
        holder_exponent,
        replay: replay_info(model, config, manifest),
    })
}

// ---------------------------------------------------------------------------
// Almost-periodicity experiment
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct APRow {
    pub t: f64,
    /// sup-node |mean B1(t) - mean B1(t + period)|.
    pub sup_diff: f64,
    /// sup-node pooled standard error of the difference.
    pub pooled_se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct APReport {
    pub period: f64,
    pub rows: Vec<APRow>,
    pub replay: ReplayInfo,
}

impl APReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("t,sup_diff,pooled_se,pass\n");
        for r in &self.rows {
            out.push_str(&csv_line(&[
                fmt(r.t),
                fmt(r.sup_diff),
                fmt(r.pooled_se),
                r.pass.to_string(),
            ]));
            out.push('\n');
        }
        out
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Ensemble mean of the slow reaction against the fast long-run state at a
/// set of times and one period later; periodic models must agree within two
/// pooled standard errors.
pub fn run_almost_periodic(
    model: &ModelSpec,
    config: &ExperimentConfig,
    manifest: &SeedManifest,
) -> Result<APReport> {
    let Some(period) = model.period() else {
        return Err(Error::InvalidParameter(
            "almost-periodicity comparison needs a declared period".into(),
        ));
    };
    let basis = &model.basis;
    let x = config.x0.realize(basis)?;
    let (avg_cfg, rate) = resolve_averaging_config(model, config, manifest)?;
    let b1 = model.slow_reaction.b.clone();

    // Node-level mean and SE of B1(t, x, eta(t)) against the sampled
    // long-run law of the fast equation.
    let sample_at = |t: f64, salt: u64| -> Result<(Vec<f64>, Vec<f64>)> {
        let cfg = crate::averaging::AveragingConfig {
            salt,
            ..avg_cfg.clone()
        };
        let family =
            crate::averaging::estimate_evolution_family(model, &x, t, rate, &cfg, manifest)?;
        family.observable_stats(|v| {
            apply_pointwise(family.t, &[&x, v], |tt, xi, s| b1(tt, xi, s[0], s[1]))
        })
    };

    let mut rows = Vec::new();
    for (i, &t) in config.ap_times.iter().enumerate() {
        let (mean_a, se_a) = sample_at(t, 0x4150_0000 + i as u64)?;
        let (mean_b, se_b) = sample_at(t + period, 0x4150_8000 + i as u64)?;
        let mut sup_diff = 0.0f64;
        let mut pooled = 0.0f64;
        for k in 0..mean_a.len() {
            sup_diff = sup_diff.max((mean_a[k] - mean_b[k]).abs());
            pooled = pooled.max((se_a[k] * se_a[k] + se_b[k] * se_b[k]).sqrt());
        }
        rows.push(APRow {
            t,
            sup_diff,
            pooled_se: pooled,
            pass: sup_diff <= 2.0 * pooled,
        });
    }
    Ok(APReport {
        period,
        rows,
        replay: replay_info(model, config, manifest),
    })
}

// ---------------------------------------------------------------------------
// Khasminskii auxiliary-motion experiment
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KhasminskiiCell {
    pub epsilon: f64,
    pub delta_raw: f64,
    pub delta: f64,
    pub steps_per_window: usize,
    /// sup over grid times of the ensemble mean of ||v_hat - v||^2.
    pub sup_mean_sq: f64,
    pub ci: (f64, f64),
    pub blowups: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KhasminskiiReport {
    pub cells: Vec<KhasminskiiCell>,
    /// Strict decrease with CI separation between consecutive cells.
    pub decreasing_with_separation: bool,
    pub replay: ReplayInfo,
}

impl KhasminskiiReport {
    pub fn csv(&self) -> String {
        let mut out =
            String::from("epsilon,delta_raw,delta,steps_per_window,sup_mean_sq,ci_lo,ci_hi\n");
        for c in &self.cells {
            out.push_str(&csv_line(&[
                fmt(c.epsilon),
                fmt(c.delta_raw),
                fmt(c.delta),
                c.steps_per_window.to_string(),
                fmt(c.sup_mean_sq),
                fmt(c.ci.0),
                fmt(c.ci.1),
            ]));
            out.push('\n');
        }
        out
    }
}

/// Shadows coupled solves with the windowed auxiliary fast motion and
/// measures sup_t E||v_hat - v||^2 across the epsilon grid.
pub fn run_khasminskii(
    model: &ModelSpec,
    config: &ExperimentConfig,
    manifest: &SeedManifest,
) -> Result<KhasminskiiReport> {
    let basis = &model.basis;
    let x0 = config.x0.realize(basis)?;
    let y0 = config.y0.realize(basis)?;
    let solver_cfg = config.solver_config();

    let mut cells = Vec::new();
    for &epsilon in &config.eps_grid {
        let schedule = KhasminskiiSchedule::new(epsilon, config.kappa, &solver_cfg)?;
        let curves: Vec<Option<Vec<f64>>> = (0..config.paths)
            .into_par_iter()
            .map(|path| -> Result<Option<Vec<f64>>> {
                let coupled =
                    solve_coupled(model, &x0, &y0, epsilon, &solver_cfg, manifest, path as u64);
                let (u, v) = match coupled {
                    Ok(pair) => pair,
                    Err(Error::BlowUp { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                if u.stopped() {
                    return Ok(None);
                }
                let snapshots = WindowSnapshots::from_records(&u, &v, &schedule, &solver_cfg)?;
                let aux = auxiliary_fast(
                    model,
                    &snapshots,
                    epsilon,
                    &solver_cfg,
                    manifest,
                    path as u64,
                )?;
                let shared = aux.len().min(v.len());
                let mut curve = Vec::with_capacity(shared);
                for i in 0..shared {
                    let d = aux.states[i]
                        .lin_comb(1.0, &v.states[i], -1.0)?
                        .sup_norm()?;
                    curve.push(d * d);
                }
                Ok(Some(curve))
            })
            .collect::<Result<_>>()?;

        let kept: Vec<&Vec<f64>> = curves.iter().flatten().collect();
        let blowups = curves.len() - kept.len();
        if kept.is_empty() {
            return Err(Error::BlowUp {
                last_valid_time: 0.0,
            });
        }
        let steps = kept.iter().map(|c| c.len()).min().expect("nonempty");
        let sup_of_mean = |paths: &[&Vec<f64>]| -> f64 {
            let mut sup = 0.0f64;
            for i in 0..steps {
                let mean: f64 = paths.iter().map(|c| c[i]).sum::<f64>() / paths.len() as f64;
                sup = sup.max(mean);
            }
            sup
        };
        let point = sup_of_mean(&kept);
        let mut rng = manifest.stream(
            (epsilon * 1e9) as u64,
            StreamTag::with_salt(StreamKind::Bootstrap, 0x4B48_4153),
        );
        let mut boots = Vec::with_capacity(config.bootstrap_reps);
        for _ in 0..config.bootstrap_reps {
            let resample: Vec<&Vec<f64>> = (0..kept.len())
                .map(|_| kept[rand::Rng::gen_range(&mut rng, 0..kept.len())])
                .collect();
            boots.push(sup_of_mean(&resample));
        }
        boots.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        cells.push(KhasminskiiCell {
            epsilon,
            delta_raw: schedule.delta_raw,
            delta: schedule.delta,
            steps_per_window: schedule.steps_per_window,
            sup_mean_sq: point,
            ci: (
                quantile_sorted(&boots, 0.025),
                quantile_sorted(&boots, 0.975),
            ),
            blowups,
        });
    }

    let decreasing = cells
        .windows(2)
        .all(|w| w[1].sup_mean_sq < w[0].sup_mean_sq && w[1].ci.1 < w[0].ci.0);
    Ok(KhasminskiiReport {
        cells,
        decreasing_with_separation: decreasing,
        replay: replay_info(model, config, manifest),
    })
}

// ---------------------------------------------------------------------------
// Averaged-drift window decay (finite-horizon bias diagnostic)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowDecayReport {
    /// Window lengths (absolute time).
    pub windows: Vec<f64>,
    /// sup-node |estimate(T) - estimate(4T)| per window below the longest.
    pub deviations: Vec<f64>,
    /// sup-node pooled SE between consecutive windows.
    pub pooled_first_pair: f64,
    pub first_pair_diff: f64,
    pub replay: ReplayInfo,
}

/// Nested-window averaged-drift estimates from shared paths: the deviation
/// from the longest-window estimate must shrink as the window grows.
pub fn run_window_decay(
    model: &ModelSpec,
    config: &ExperimentConfig,
    manifest: &SeedManifest,
) -> Result<WindowDecayReport> {
    let basis = &model.basis;
    let x = config.x0.realize(basis)?;
    let (avg_cfg, _) = resolve_averaging_config(model, config, manifest)?;
    let base = avg_cfg.t_avg;
    let windows = vec![base, 2.0 * base, 4.0 * base];
    let estimates = averaged_drift_windows(model, &x, &windows, &avg_cfg, manifest)?;
    let longest = estimates.last().expect("three windows");
    let mut deviations = Vec::new();
    for est in &estimates[..estimates.len() - 1] {
        let d = est.drift.lin_comb(1.0, &longest.drift, -1.0)?.sup_norm()?;
        deviations.push(d);
    }
    let first_pair_diff = estimates[0]
        .drift
        .lin_comb(1.0, &estimates[1].drift, -1.0)?
        .sup_norm()?;
    let pooled = estimates[0]
        .std_err_nodal
        .iter()
        .zip(&estimates[1].std_err_nodal)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .fold(0.0f64, f64::max);
    Ok(WindowDecayReport {
        windows,
        deviations,
        pooled_first_pair: pooled,
        first_pair_diff,
        replay: replay_info(model, config, manifest),
    })
}
