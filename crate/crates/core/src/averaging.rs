//! Ergodic machinery for the fast equation: mixing-rate estimation, the
//! averaged drift as a burn-in ensemble/time average against the evolution
//! family of measures, a quantized-state drift cache, and the windowed
//! auxiliary fast motion used by the averaging analysis.
//!
//! The long-run law of the frozen-fast process is realized empirically:
//! exponential forgetting of the initial condition justifies discarding a
//! burn-in prefix, after which the time average of the slow reaction against
//! the fast state estimates the averaged drift, with per-node standard
//! errors from the independent ensemble members.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::noise::{PathNoise, SeedManifest};
use crate::solver::{solve_frozen_fast, SolverConfig};
use crate::spectral::{apply_pointwise, Field};
use crate::stats::{linear_fit, Accumulator};

/// Outcome classification of a mixing-rate fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingStatus {
    Ok,
    /// Coupled pair started from identical states; the fit is rejected.
    Degenerate,
    /// Fitted slope was nonnegative; reported as data, not an error.
    NotContracting,
}

/// Exponential forgetting rate estimate with a bootstrap confidence
/// interval.
#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct MixingEstimate {
    pub delta_hat: f64,
    pub ci: (f64, f64),
    pub status: MixingStatus,
    /// (t, log mean distance) points used by the fit.
    pub log_means: Vec<(f64, f64)>,
    pub ensemble: usize,
}

/// Couples pairs of frozen-fast solves from `y1` and `y2` on shared noise
/// and fits the decay rate of log E||v1 - v2|| by least squares.
#[allow(clippy::too_many_arguments)]
pub fn estimate_mixing_rate(
    model: &ModelSpec,
    x: &Field,
    y1: &Field,
    y2: &Field,
    t_horizon: f64,
    ensemble: usize,
    config: &SolverConfig,
    manifest: &SeedManifest,
) -> Result<MixingEstimate> {
    if ensemble == 0 {
        return Err(Error::InvalidParameter(
            "mixing ensemble must be >= 1".into(),
        ));
    }
    let init_dist = y1.lin_comb(1.0, y2, -1.0)?.sup_norm()?;
    if init_dist == 0.0 {
        return Ok(MixingEstimate {
            delta_hat: 0.0,
            ci: (0.0, 0.0),
            status: MixingStatus::Degenerate,
            log_means: vec![],
            ensemble,
        });
    }

    let curves: Vec<Vec<f64>> = (0..ensemble)
        .into_par_iter()
        .map(|member| -> Result<Vec<f64>> {
            let salt = 0x4D49_5849_4E47 ^ member as u64; // distinct stream family per member
            let mut noise_a = PathNoise::with_salt(manifest, member as u64, salt);
            let mut noise_b = PathNoise::with_salt(manifest, member as u64, salt);
            let ra = solve_frozen_fast(
                model,
                x,
                y1,
                0.0,
                t_horizon,
                config,
                &mut noise_a,
                manifest,
                member as u64,
            )?;
            let rb = solve_frozen_fast(
                model,
                x,
                y2,
                0.0,
                t_horizon,
                config,
                &mut noise_b,
                manifest,
                member as u64,
            )?;
            let mut dists = Vec::with_capacity(ra.len());
            for (a, b) in ra.states.iter().zip(&rb.states) {
                dists.push(a.lin_comb(1.0, b, -1.0)?.sup_norm()?);
            }
            Ok(dists)
        })
        .collect::<Result<_>>()?;

    let times: Vec<f64> = {
        let steps = curves[0].len();
        (0..steps)
            .map(|i| i as f64 * t_horizon / (steps - 1).max(1) as f64)
            .collect()
    };

    let fit_slope = |member_curves: &[&Vec<f64>]| -> Option<(f64, Vec<(f64, f64)>)> {
        let steps = member_curves[0].len();
        let mut ts = Vec::new();
        let mut logs = Vec::new();
        let floor = init_dist * 1e-13;
        for i in 0..steps {
            let mean: f64 =
                member_curves.iter().map(|c| c[i]).sum::<f64>() / member_curves.len() as f64;
            if mean > floor {
                ts.push(times[i]);
                logs.push(mean.ln());
            }
        }
        if ts.len() < 2 {
            return None;
        }
        let (slope, _) = linear_fit(&ts, &logs);
        Some((slope, ts.into_iter().zip(logs).collect()))
    };

    let refs: Vec<&Vec<f64>> = curves.iter().collect();
    let Some((slope, log_means)) = fit_slope(&refs) else {
        return Ok(MixingEstimate {
            delta_hat: 0.0,
            ci: (0.0, 0.0),
            status: MixingStatus::Degenerate,
            log_means: vec![],
            ensemble,
        });
    };
    let delta_hat = -slope;

    // Bootstrap over ensemble members (degenerate for a single member).
    let ci = if ensemble == 1 {
        (delta_hat, delta_hat)
    } else {
        let mut rng = manifest.stream(
            0,
            crate::noise::StreamTag::new(crate::noise::StreamKind::Bootstrap),
        );
        let reps = 200;
        let mut slopes = Vec::with_capacity(reps);
        for _ in 0..reps {
            let resample: Vec<&Vec<f64>> = (0..ensemble)
                .map(|_| &curves[rand::Rng::gen_range(&mut rng, 0..ensemble)])
                .collect();
            if let Some((s, _)) = fit_slope(&resample) {
                slopes.push(-s);
            }
        }
        slopes.sort_by(|a, b| a.partial_cmp(b).expect("finite slopes"));
        (
            crate::stats::quantile_sorted(&slopes, 0.025),
            crate::stats::quantile_sorted(&slopes, 0.975),
        )
    };

    Ok(MixingEstimate {
        delta_hat,
        ci,
        status: if delta_hat > 0.0 {
            MixingStatus::Ok
        } else {
            MixingStatus::NotContracting
        },
        log_means,
        ensemble,
    })
}

/// Parameters of one averaged-drift estimation.
#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct AveragingConfig {
    /// Independent frozen-fast ensemble members.
    pub ensemble: usize,
    /// Discarded prefix; exponential forgetting makes the initialization
    /// bias of order exp(-delta * burn_in).
    pub burn_in: f64,
    /// Averaging window after burn-in. Rounded up to whole periods for
    /// periodic models.
    pub t_avg: f64,
    /// Micro step of the frozen-fast integrator (natural time units).
    pub fast_step: f64,
    pub truncation_radius: f64,
    /// Substream salt; derived from the cache key by the cached front end.
    pub salt: u64,
}

impl Default for AveragingConfig {
    fn default() -> Self {
        Self {
            ensemble: 64,
            burn_in: 0.5,
            t_avg: 2.0,
            fast_step: 0.05,
            truncation_radius: 50.0,
            salt: 0,
        }
    }
}

/// Averaged-drift estimate with per-node standard errors.
#[derive(Clone, Debug)]
pub struct AvgDriftEstimate {
    pub drift: Field,
    /// Ensemble standard error of the drift at each collocation node.
    pub std_err_nodal: Vec<f64>,
    pub dropped: usize,
    pub total: usize,
    /// Set when more than 10 percent of the paths hit the stopping radius.
    pub unreliable: bool,
}

impl AvgDriftEstimate {
    pub fn max_std_err(&self) -> f64 {
        self.std_err_nodal.iter().fold(0.0f64, |m, &v| m.max(v))
    }
}

fn rounded_t_avg(model: &ModelSpec, t_avg: f64) -> f64 {
    match model.period() {
        Some(p) if p > 0.0 => (t_avg / p).ceil() * p,
        _ => t_avg,
    }
}

/// Estimates the averaged drift at frozen slow state `x` as the ensemble and
/// time average of the slow reaction against the fast state over
/// [burn_in, burn_in + t_avg].
pub fn averaged_drift(
    model: &ModelSpec,
    x: &Field,
    config: &AveragingConfig,
    manifest: &SeedManifest,
) -> Result<AvgDriftEstimate> {
    let estimates = averaged_drift_windows(model, x, &[config.t_avg], config, manifest)?;
    Ok(estimates.into_iter().next().expect("one window requested"))
}

/// Multi-window variant: estimates over several nested averaging windows
/// from the same frozen-fast paths (windows share the burn-in). Used by
/// finite-horizon decay diagnostics.
pub fn averaged_drift_windows(
    model: &ModelSpec,
    x: &Field,
    windows: &[f64],
    config: &AveragingConfig,
    manifest: &SeedManifest,
) -> Result<Vec<AvgDriftEstimate>> {
    if windows.is_empty() || windows.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "averaging windows must be nonempty and strictly increasing".into(),
        ));
    }
    if config.ensemble == 0 {
        return Err(Error::InvalidParameter(
            "averaging ensemble must be >= 1".into(),
        ));
    }
    if !(config.burn_in > 0.0) || !(config.t_avg > 0.0) {
        return Err(Error::InvalidParameter(
            "burn_in and t_avg must be positive".into(),
        ));
    }
    let basis = &model.basis;
    let windows: Vec<f64> = windows.iter().map(|&w| rounded_t_avg(model, w)).collect();
    let horizon = config.burn_in + windows.last().copied().expect("nonempty");
    let solver_cfg = SolverConfig {
        macro_step: config.fast_step,
        fast_step_target: config.fast_step,
        truncation_radius: config.truncation_radius,
        horizon,
        record_stride: 1,
    };
    let b1 = model.slow_reaction.b.clone();

    // Per member: the time-averaged reaction field for each window, or None
    // when the path hit the stopping radius.
    let members: Vec<Option<Vec<Vec<f64>>>> = (0..config.ensemble)
        .into_par_iter()
        .map(|member| -> Result<Option<Vec<Vec<f64>>>> {
            let salt = 0x41564744_u64 ^ config.salt.rotate_left(1);
            let mut noise = PathNoise::with_salt(manifest, member as u64, salt);
            let y0 = Field::zero(Arc::clone(basis));
            let rec = solve_frozen_fast(
                model,
                x,
                &y0,
                0.0,
                horizon,
                &solver_cfg,
                &mut noise,
                manifest,
                member as u64,
            )?;
            if rec.stopped() {
                return Ok(None);
            }
            // Incremental means per (window, coefficient): time averaging
            // commutes with the (linear) analysis, and the incremental form
            // is exact on constant integrands, which the y-independent
            // exactness contract needs.
            let mut means = vec![vec![0.0; basis.mode_count()]; windows.len()];
            let mut counts = vec![0u64; windows.len()];
            for (i, t) in rec.times.iter().enumerate() {
                if *t < config.burn_in - 1e-12 {
                    continue;
                }
                let offset = t - config.burn_in;
                let reaction =
                    apply_pointwise(*t, &[x, &rec.states[i]], |tt, xi, s| b1(tt, xi, s[0], s[1]))?;
                let coeffs = reaction.coefficients();
                for (w, &win) in windows.iter().enumerate() {
                    if offset < win - 1e-12 {
                        counts[w] += 1;
                        let n = counts[w] as f64;
                        for (mean, &v) in means[w].iter_mut().zip(coeffs) {
                            *mean += (v - *mean) / n;
                        }
                    }
                }
            }
            Ok(Some(means))
        })
        .collect::<Result<_>>()?;

    let dropped = members.iter().filter(|m| m.is_none()).count();
    let kept: Vec<&Vec<Vec<f64>>> = members.iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::UnreliableEstimate {
            dropped,
            total: config.ensemble,
        });
    }
    let unreliable = dropped * 10 > config.ensemble;

    let mut out = Vec::with_capacity(windows.len());
    let mut member_nodal = vec![0.0; basis.node_count()];
    for w in 0..windows.len() {
        let mut coeff_accs = vec![Accumulator::new(); basis.mode_count()];
        let mut node_accs = vec![Accumulator::new(); basis.node_count()];
        for member in &kept {
            for (acc, &v) in coeff_accs.iter_mut().zip(&member[w]) {
                acc.push(v);
            }
            basis.synthesize_into(&member[w], &mut member_nodal);
            for (acc, &v) in node_accs.iter_mut().zip(&member_nodal) {
                acc.push(v);
            }
        }
        let mean_coeffs: Vec<f64> = coeff_accs.iter().map(|a| a.mean()).collect();
        let std_err_nodal: Vec<f64> = node_accs.iter().map(|a| a.std_err()).collect();
        out.push(AvgDriftEstimate {
            drift: Field::from_coefficients(Arc::clone(basis), mean_coeffs)?,
            std_err_nodal,
            dropped,
            total: config.ensemble,
            unreliable,
        });
    }
    Ok(out)
}

/// Empirical realization of the fast equation's long-run law at a time
/// anchor: an ensemble of fast states launched far enough in the past that
/// the initial condition is forgotten.
#[derive(Clone, Debug)]
pub struct EvolutionFamilyEstimate {
    /// Frozen slow input.
    pub x: Field,
    /// Time anchor at which the samples are taken.
    pub t: f64,
    /// Fast-state samples, one per ensemble member.
    pub samples: Vec<Field>,
    /// Burn-in length used (launch time was t - burn_in).
    pub burn_in: f64,
    /// Forgetting rate the burn-in was sized against.
    pub forgetting_rate: f64,
}

impl EvolutionFamilyEstimate {
    /// Node-level ensemble mean and standard error of a field-valued
    /// observable of the samples.
    pub fn observable_stats<F>(&self, observable: F) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: Fn(&Field) -> Result<Field>,
    {
        let nodes = self.x.basis().node_count();
        let mut accs = vec![Accumulator::new(); nodes];
        for sample in &self.samples {
            let value = observable(sample)?;
            for (acc, &v) in accs.iter_mut().zip(value.nodal()) {
                acc.push(v);
            }
        }
        Ok((
            accs.iter().map(|a| a.mean()).collect(),
            accs.iter().map(|a| a.std_err()).collect(),
        ))
    }
}

/// Samples the long-run law of the frozen-fast equation at time `t` by
/// launching `config.ensemble` members from zero data at `t - burn_in`.
/// Requires at least two members and a burn-in of at least one mixing time
/// (1 / forgetting_rate), which bounds the initialization bias by exp(-1)
/// per mixing time of burn-in.
pub fn estimate_evolution_family(
    model: &ModelSpec,
    x: &Field,
    t: f64,
    forgetting_rate: f64,
    config: &AveragingConfig,
    manifest: &SeedManifest,
) -> Result<EvolutionFamilyEstimate> {
    if config.ensemble < 2 {
        return Err(Error::InvalidParameter(
            "evolution-family ensembles need at least two members".into(),
        ));
    }
    if !(forgetting_rate > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "forgetting rate must be positive, got {forgetting_rate}"
        )));
    }
    if config.burn_in * forgetting_rate < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "burn-in {} is shorter than one mixing time {}",
            config.burn_in,
            forgetting_rate.recip()
        )));
    }
    let solver_cfg = SolverConfig {
        macro_step: config.fast_step,
        fast_step_target: config.fast_step,
        truncation_radius: config.truncation_radius,
        horizon: config.burn_in.max(config.fast_step),
        record_stride: 1,
    };
    let basis = &model.basis;
    let samples: Vec<Field> = (0..config.ensemble)
        .into_par_iter()
        .map(|member| -> Result<Field> {
            let salt = 0x4546_414D ^ config.salt.rotate_left(3);
            let mut noise = PathNoise::with_salt(manifest, member as u64, salt);
            let y0 = Field::zero(Arc::clone(basis));
            let rec = solve_frozen_fast(
                model,
                x,
                &y0,
                t - config.burn_in,
                t,
                &solver_cfg,
                &mut noise,
                manifest,
                member as u64,
            )?;
            Ok(rec.final_state().clone())
        })
        .collect::<Result<_>>()?;
    Ok(EvolutionFamilyEstimate {
        x: x.clone(),
        t,
        samples,
        burn_in: config.burn_in,
        forgetting_rate,
    })
}

/// Closed-form averaged drift for the linear catalog model: the fast
/// equilibrium solves (gamma_avg A - alpha - 1) v = -x per mode, and the
/// averaged drift is the slow reaction evaluated against it. Exact when the
/// fast reaction is x - y and the fast noise is centered.
pub fn closed_form_linear_drift(model: &ModelSpec) -> impl Fn(&Field) -> Result<Field> + '_ {
    let gamma_avg = model.fast_gamma_average();
    move |x: &Field| {
        let basis = x.basis();
        let coeffs: Vec<f64> = x
            .coefficients()
            .iter()
            .enumerate()
            .map(|(k, &c)| c / (model.alpha + gamma_avg * basis.eigenvalue(k) + 1.0))
            .collect();
        let v_star = Field::from_coefficients(Arc::clone(basis), coeffs)?;
        let b1 = &model.slow_reaction.b;
        apply_pointwise(0.0, &[x, &v_star], |t, xi, s| b1(t, xi, s[0], s[1]))
    }
}

fn hash_key(key: &[i64]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &limb in key {
        h ^= limb as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Number of leading coefficients entering the map key.
const KEY_MODES: usize = 8;

struct CacheEntry {
    representative: Field,
    drift: Field,
    std_err_nodal: Vec<f64>,
    /// Ensemble members that contributed (after drops).
    members: usize,
    unreliable: bool,
}

struct CacheInner {
    by_key: HashMap<Vec<i64>, usize>,
    entries: Vec<CacheEntry>,
}

/// Quantized-state-keyed store of averaged-drift estimates.
///
/// Keys are the leading spectral coefficients rounded to the resolution; the
/// stored value is always the estimate at the fully rounded representative
/// state, derived from substreams salted by the key. Entry values are
/// therefore pure functions of (key, manifest): concurrent queries can race
/// on insertion, first writer wins, and every writer would have written the
/// same bits.
pub struct AveragedDriftCache {
    resolution: f64,
    inner: Mutex<CacheInner>,
}

impl AveragedDriftCache {
    pub fn new(resolution: f64) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cache resolution must be positive, got {resolution}"
            )));
        }
        Ok(Self {
            resolution,
            inner: Mutex::new(CacheInner {
                by_key: HashMap::new(),
                entries: Vec::new(),
            }),
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn map_key(&self, x: &Field) -> Vec<i64> {
        x.coefficients()
            .iter()
            .take(KEY_MODES)
            .map(|&c| (c / self.resolution).round() as i64)
            .collect()
    }

    /// Fully rounded representative state: a pure function of the query up
    /// to the resolution.
    fn representative(&self, x: &Field) -> Result<Field> {
        let coeffs: Vec<f64> = x
            .coefficients()
            .iter()
            .map(|&c| (c / self.resolution).round() * self.resolution)
            .collect();
        Field::from_coefficients(Arc::clone(x.basis()), coeffs)
    }

    /// Read-only lookup: the entry nearest to `x` within `tolerance` in
    /// sup-norm (ties broken by smallest distance, then insertion index).
    pub fn lookup_within(&self, x: &Field, tolerance: f64) -> Option<Field> {
        let inner = self.inner.lock().expect("cache lock");
        if let Some(&idx) = inner.by_key.get(&self.map_key(x)) {
            return Some(inner.entries[idx].drift.clone());
        }
        let mut best: Option<(f64, usize)> = None;
        for (idx, entry) in inner.entries.iter().enumerate() {
            let dist = entry
                .representative
                .lin_comb(1.0, x, -1.0)
                .ok()?
                .sup_norm()
                .ok()?;
            if dist <= tolerance && best.is_none_or(|(d, _)| dist < d) {
                best = Some((dist, idx));
            }
        }
        best.map(|(_, idx)| inner.entries[idx].drift.clone())
    }

    /// Returns the drift for the quantization cell of `x`, computing and
    /// inserting it on first use. The returned value depends only on the
    /// rounded state and the manifest, never on cache history, which keeps
    /// ensemble experiments replay-deterministic under any interleaving.
    pub fn get_or_compute(
        &self,
        model: &ModelSpec,
        x: &Field,
        tolerance: f64,
        config: &AveragingConfig,
        manifest: &SeedManifest,
    ) -> Result<Field> {
        if tolerance < self.resolution {
            return Err(Error::InvalidParameter(format!(
                "tolerance {tolerance} below cache resolution {}",
                self.resolution
            )));
        }
        let key = self.map_key(x);
        {
            let inner = self.inner.lock().expect("cache lock");
            if let Some(&idx) = inner.by_key.get(&key) {
                let entry = &inner.entries[idx];
                if entry.unreliable {
                    return Err(Error::UnreliableEstimate {
                        dropped: 1,
                        total: 1,
                    });
                }
                return Ok(entry.drift.clone());
            }
        }
        // Estimate outside the lock at the rounded representative with
        // key-salted substreams.
        let rep = self.representative(x)?;
        let salted = AveragingConfig {
            salt: hash_key(&key),
            ..config.clone()
        };
        let estimate = averaged_drift(model, &rep, &salted, manifest)?;
        let mut inner = self.inner.lock().expect("cache lock");
        let idx = match inner.by_key.get(&key) {
            Some(&existing) => existing, // first writer already landed
            None => {
                inner.entries.push(CacheEntry {
                    representative: rep,
                    drift: estimate.drift.clone(),
                    std_err_nodal: estimate.std_err_nodal.clone(),
                    members: estimate.total - estimate.dropped,
                    unreliable: estimate.unreliable,
                });
                let idx = inner.entries.len() - 1;
                inner.by_key.insert(key, idx);
                idx
            }
        };
        let entry = &inner.entries[idx];
        if entry.unreliable {
            return Err(Error::UnreliableEstimate {
                dropped: 1,
                total: 1,
            });
        }
        Ok(entry.drift.clone())
    }

    /// Largest stored per-node standard error, for reporting.
    pub fn max_std_err(&self) -> f64 {
        let inner = self.inner.lock().expect("cache lock");
        inner
            .entries
            .iter()
            .flat_map(|e| e.std_err_nodal.iter().copied())
            .fold(0.0f64, f64::max)
    }

    /// Smallest contributing ensemble across entries, for reporting.
    pub fn min_members(&self) -> usize {
        let inner = self.inner.lock().expect("cache lock");
        inner.entries.iter().map(|e| e.members).min().unwrap_or(0)
    }
}

/// Cached front end of [`averaged_drift`]: returns the stored drift when the
/// quantization cell of `x` is present, otherwise estimates at the rounded
/// representative, inserts, and returns.
pub fn averaged_drift_cached(
    cache: &AveragedDriftCache,
    model: &ModelSpec,
    x: &Field,
    tolerance: f64,
    config: &AveragingConfig,
    manifest: &SeedManifest,
) -> Result<Field> {
    cache.get_or_compute(model, x, tolerance, config, manifest)
}

/// delta_eps = kappa * eps * ln(1/eps); positive for eps in (0, 1).
pub fn khasminskii_delta(epsilon: f64, kappa: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1) for a positive window, got {epsilon}"
        )));
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    Ok(kappa * epsilon * (1.0 / epsilon).ln())
}

/// Window partition of [0, T] with length delta_eps, aligned to the macro
/// grid of the coupled solver so window starts land on recorded states.
#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct KhasminskiiSchedule {
    pub epsilon: f64,
    pub kappa: f64,
    /// kappa eps ln(1/eps) before grid alignment.
    pub delta_raw: f64,
    /// Actual window length: an integer number of macro steps.
    pub delta: f64,
    pub steps_per_window: usize,
    pub window_count: usize,
}

impl KhasminskiiSchedule {
    pub fn new(epsilon: f64, kappa: f64, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let delta_raw = khasminskii_delta(epsilon, kappa)?;
        let steps_per_window = ((delta_raw / config.macro_step).round() as usize).max(1);
        let delta = steps_per_window as f64 * config.macro_step;
        let window_count = config.macro_steps().div_ceil(steps_per_window);
        Ok(Self {
            epsilon,
            kappa,
            delta_raw,
            delta,
            steps_per_window,
            window_count,
        })
    }
}

/// Checks the limiting behaviour of delta_eps on a decreasing epsilon grid:
/// the window length shrinks while the windows-per-epsilon ratio grows.
pub fn check_delta_grid(eps_grid: &[f64], kappa: f64) -> Result<()> {
    if eps_grid.len() < 2 || eps_grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidParameter(
            "epsilon grid must be strictly decreasing with at least two entries".into(),
        ));
    }
    let mut prev: Option<(f64, f64)> = None;
    for &eps in eps_grid {
        let delta = khasminskii_delta(eps, kappa)?;
        if let Some((d_prev, ratio_prev)) = prev {
            if !(delta < d_prev) || !(delta / eps > ratio_prev) {
                return Err(Error::InvalidParameter(format!(
                    "delta grid not admissible at eps = {eps}: delta = {delta}"
                )));
            }
        }
        prev = Some((delta, delta / eps));
    }
    Ok(())
}

/// Window-start snapshots of a coupled solve: the slow and fast states at
/// times k * delta.
#[derive(Clone, Debug)]
pub struct WindowSnapshots {
    pub slow: Vec<Field>,
    pub fast: Vec<Field>,
    pub schedule: KhasminskiiSchedule,
}

impl WindowSnapshots {
    /// Extracts window-start states from coupled trajectory records. The
    /// records must cover every window start (record_stride 1 and no early
    /// stopping).
    pub fn from_records(
        slow: &crate::solver::TrajectoryRecord,
        fast: &crate::solver::TrajectoryRecord,
        schedule: &KhasminskiiSchedule,
        config: &SolverConfig,
    ) -> Result<Self> {
        let mut slow_states = Vec::with_capacity(schedule.window_count);
        let mut fast_states = Vec::with_capacity(schedule.window_count);
        for k in 0..schedule.window_count {
            let t = (k * schedule.steps_per_window) as f64 * config.macro_step;
            let (Some(u), Some(v)) = (slow.state_at(t), fast.state_at(t)) else {
                return Err(Error::WindowMismatch {
                    expected: schedule.window_count,
                    got: k,
                });
            };
            slow_states.push(u.clone());
            fast_states.push(v.clone());
        }
        Ok(Self {
            slow: slow_states,
            fast: fast_states,
            schedule: schedule.clone(),
        })
    }
}

/// Integrates the auxiliary fast motion: within each window
/// [k delta, (k+1) delta] the fast equation runs with the slow input frozen
/// at u(k delta) and restarts from the shadowed fast state v(k delta),
/// consuming the identical fast-noise substreams as the coupled solve with
/// the same (manifest, path). Records land on the coupled macro grid.
pub fn auxiliary_fast(
    model: &ModelSpec,
    snapshots: &WindowSnapshots,
    epsilon: f64,
    config: &SolverConfig,
    manifest: &SeedManifest,
    path_index: u64,
) -> Result<crate::solver::TrajectoryRecord> {
    let schedule = &snapshots.schedule;
    if snapshots.slow.len() < schedule.window_count || snapshots.fast.len() < schedule.window_count
    {
        return Err(Error::WindowMismatch {
            expected: schedule.window_count,
            got: snapshots.slow.len(),
        });
    }
    crate::solver::drive_windowed_fast(
        model,
        &snapshots.slow,
        &snapshots.fast,
        schedule.steps_per_window,
        epsilon,
        config,
        manifest,
        path_index,
    )
}
