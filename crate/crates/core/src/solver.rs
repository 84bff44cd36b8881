//! Mild-solution time steppers: the coupled slow-fast system, the fast
//! equation with frozen slow input, and the averaged slow equation, all with
//! truncation-radius stopping guards.
//!
//! Scheme: stochastic exponential Euler on spectral coefficients. The stiff
//! linear part is applied exactly through the evolution family; the reaction
//! drift enters with the variation-of-constants weight (1 - E)/r, so
//! equilibria of the zero-noise drift are numerically stationary; Wiener
//! increments, jump kicks and the jump compensator are propagated with the
//! full-step decay factor, which keeps the compensated pair exactly
//! conditionally centered. Jumps are aggregated per substep (finite
//! activity keeps the grid deterministic).
//!
//! Reactions are evaluated with the state pair truncated to the closed ball
//! of the configured radius, so two runs differing only in radius agree bit
//! for bit until the smaller radius is hit. Noise substreams are consumed on
//! a state-independent schedule for the same reason.

use std::sync::Arc;

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{transport_values, EvolutionStep};
use crate::model::ModelSpec;
use crate::noise::{sample_jumps, PathNoise, SeedManifest};
use crate::spectral::{Field, SpectralBasis};

/// Time-stepping configuration.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SolverConfig {
    /// Macro step of the slow component; must divide the horizon.
    pub macro_step: f64,
    /// Target micro-step size in fast time units; the fast component takes
    /// ceil(h / (eps * fast_step_target)) substeps per macro step.
    pub fast_step_target: f64,
    /// Stopping radius n of the truncation guard (product sup-norm).
    pub truncation_radius: f64,
    /// Final time T.
    pub horizon: f64,
    /// Record every k-th macro step (the initial state is always recorded).
    pub record_stride: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            macro_step: 0.01,
            fast_step_target: 0.05,
            truncation_radius: 50.0,
            horizon: 1.0,
            record_stride: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.macro_step > 0.0) || !self.macro_step.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "macro_step must be positive, got {}",
                self.macro_step
            )));
        }
        if self.macro_step > self.horizon {
            return Err(Error::InvalidConfig(format!(
                "macro_step {} exceeds horizon {}",
                self.macro_step, self.horizon
            )));
        }
        if !(self.fast_step_target > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "fast_step_target must be positive, got {}",
                self.fast_step_target
            )));
        }
        if !(self.truncation_radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "truncation_radius must be positive, got {}",
                self.truncation_radius
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidConfig("record_stride must be >= 1".into()));
        }
        let steps = self.horizon / self.macro_step;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon {} is not an integer multiple of macro_step {}",
                self.horizon, self.macro_step
            )));
        }
        Ok(())
    }

    pub fn macro_steps(&self) -> usize {
        (self.horizon / self.macro_step).round() as usize
    }

    /// Micro substeps per macro step at time-scale separation `epsilon`.
    pub fn micro_substeps(&self, epsilon: f64) -> usize {
        ((self.macro_step / (epsilon * self.fast_step_target)).ceil() as usize).max(1)
    }
}

/// Time-indexed states of one simulated component with stopping metadata.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    /// First grid time at which the truncation radius was reached;
    /// `f64::INFINITY` when never hit.
    pub stopping_time: f64,
    pub master_seed: u64,
    pub path_index: u64,
}

impl TrajectoryRecord {
    pub fn stopped(&self) -> bool {
        self.stopping_time.is_finite()
    }

    pub fn final_state(&self) -> &Field {
        self.states.last().expect("record never empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// State at the recorded index closest to `t` (exact grid hits only).
    pub fn state_at(&self, t: f64) -> Option<&Field> {
        let tol = 1e-9 * self.times.last().copied().unwrap_or(1.0).max(1.0);
        self.times
            .iter()
            .position(|&ti| (ti - t).abs() <= tol)
            .map(|i| &self.states[i])
    }
}

/// Truncates the state pair to the closed Euclidean ball of radius n.
#[inline]
fn truncate_pair(x: f64, y: f64, radius: f64) -> (f64, f64) {
    let r = x.hypot(y);
    if r <= radius {
        (x, y)
    } else {
        let s = radius / r;
        (x * s, y * s)
    }
}

fn sup_of(nodal: &[f64]) -> f64 {
    nodal.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Reusable per-component scratch space.
struct Scratch {
    drift_nodal: Vec<f64>,
    drift_coeffs: Vec<f64>,
    noise_coeffs: Vec<f64>,
    aux_nodal: Vec<f64>,
    aux_coeffs: Vec<f64>,
    decays: Vec<f64>,
    weights: Vec<f64>,
}

impl Scratch {
    fn new(basis: &SpectralBasis) -> Self {
        let n = basis.mode_count();
        let m = basis.node_count();
        Self {
            drift_nodal: vec![0.0; m],
            drift_coeffs: vec![0.0; n],
            noise_coeffs: vec![0.0; n],
            aux_nodal: vec![0.0; m],
            aux_coeffs: vec![0.0; n],
            decays: vec![0.0; n],
            weights: vec![0.0; n],
        }
    }
}

/// One exponential-Euler substep of the fast component over [s, s + dt].
///
/// `u_nodal` is the frozen slow input; `epsilon` scales drift (1/eps), Wiener
/// (1/sqrt(eps)) and jump intensity (1/eps). `v_coeffs` / `v_nodal` are
/// advanced in place.
#[allow(clippy::too_many_arguments)]
fn fast_substep(
    model: &ModelSpec,
    fast_ev: &EvolutionStep,
    s: f64,
    dt: f64,
    epsilon: f64,
    u_nodal: &[f64],
    v_coeffs: &mut [f64],
    v_nodal: &mut [f64],
    wiener_rng: &mut ChaCha12Rng,
    jump_rng: &mut ChaCha12Rng,
    radius: f64,
    scratch: &mut Scratch,
) -> Result<()> {
    let basis = &model.basis;
    let b2 = &model.fast_reaction.b;
    let nodes = basis.node_positions();

    // Reaction drift at the left point with jointly truncated arguments.
    for m in 0..nodes.len() {
        let (xu, yv) = truncate_pair(u_nodal[m], v_nodal[m], radius);
        scratch.drift_nodal[m] = b2(s, nodes[m], xu, yv);
    }
    // First-order term of the fast operator, explicit in the drift.
    if model.fast_operator.has_transport() {
        let v_field = Field::from_coefficients(Arc::clone(basis), v_coeffs.to_vec())?;
        if let Some(tv) = transport_values(&model.fast_operator, &v_field, s)? {
            for (d, t) in scratch.drift_nodal.iter_mut().zip(tv) {
                *d += t;
            }
        }
    }
    basis.analyze_into(&scratch.drift_nodal, &mut scratch.drift_coeffs);

    // Wiener increment: (1/sqrt(eps)) F_2(s, v) dW over [s, s + dt].
    crate::noise::wiener_increment_into(
        &model.wiener_fast,
        dt,
        wiener_rng,
        &mut scratch.noise_coeffs,
    )?;
    let any_wiener = scratch.noise_coeffs.iter().any(|&c| c != 0.0);
    if any_wiener {
        basis.synthesize_into(&scratch.noise_coeffs, &mut scratch.aux_nodal);
        let f2 = &model.fast_noise.f;
        let inv_sqrt_eps = epsilon.sqrt().recip();
        for m in 0..nodes.len() {
            scratch.aux_nodal[m] *= inv_sqrt_eps * f2(s, nodes[m], v_nodal[m]);
        }
        basis.analyze_into(&scratch.aux_nodal, &mut scratch.noise_coeffs);
    }

    // Jumps at intensity nu(Z)/eps, aggregated at the substep end, plus the
    // compensator drift; both are propagated with the decay factor so the
    // compensated pair stays conditionally centered.
    if model.jump_spec.total_rate() > 0.0 {
        let events = sample_jumps(&model.jump_spec, (s, s + dt), 1.0 / epsilon, jump_rng)?;
        let g2 = &model.fast_noise.g;
        scratch.aux_nodal.fill(0.0);
        for &(_, z) in &events.events {
            for m in 0..nodes.len() {
                scratch.aux_nodal[m] += g2(s, nodes[m], v_nodal[m], z);
            }
        }
        // Compensator: -(1/eps) int g nu(dz), integrated over dt.
        let mark_scale = model.jump_spec.total_rate() * model.jump_spec.mark_mean();
        let comp_factor = dt / epsilon;
        if model.fast_noise.g_linear_in_z {
            for m in 0..nodes.len() {
                scratch.aux_nodal[m] -= comp_factor * g2(s, nodes[m], v_nodal[m], 1.0) * mark_scale;
            }
        } else {
            for m in 0..nodes.len() {
                scratch.aux_nodal[m] -= comp_factor
                    * model
                        .jump_spec
                        .nu_integral(|z| g2(s, nodes[m], v_nodal[m], z));
            }
        }
        basis.analyze_into(&scratch.aux_nodal, &mut scratch.aux_coeffs);
        for (n, a) in scratch.noise_coeffs.iter_mut().zip(&scratch.aux_coeffs) {
            *n += a;
        }
    }

    fast_ev.step_factors_into(basis, s, s + dt, &mut scratch.decays, &mut scratch.weights)?;
    let inv_eps = epsilon.recip();
    for (k, v) in v_coeffs.iter_mut().enumerate() {
        *v = scratch.decays[k] * (*v + scratch.noise_coeffs[k])
            + scratch.weights[k] * scratch.drift_coeffs[k] * inv_eps;
    }
    basis.synthesize_into(v_coeffs, v_nodal);
    if !all_finite(v_nodal) || !all_finite(v_coeffs) {
        return Err(Error::BlowUp { last_valid_time: s });
    }
    Ok(())
}

/// Slow drift evaluations used by the macro step.
enum SlowDrift<'a> {
    /// Coupled drift b1(t, xi, u, v) with the fast state frozen at the macro
    /// step start.
    Coupled { v_nodal: &'a [f64] },
    /// Averaged drift field (already band-limited).
    Averaged { drift: &'a Field },
}

/// One exponential-Euler macro step of the slow component over [t, t + h].
#[allow(clippy::too_many_arguments)]
fn slow_macro_step(
    model: &ModelSpec,
    slow_ev: &EvolutionStep,
    t: f64,
    h: f64,
    drift: SlowDrift<'_>,
    u_coeffs: &mut [f64],
    u_nodal: &mut [f64],
    wiener_rng: &mut ChaCha12Rng,
    jump_rng: &mut ChaCha12Rng,
    radius: f64,
    scratch: &mut Scratch,
) -> Result<()> {
    let basis = &model.basis;
    let nodes = basis.node_positions();

    match drift {
        SlowDrift::Coupled { v_nodal } => {
            let b1 = &model.slow_reaction.b;
            for m in 0..nodes.len() {
                let (xu, yv) = truncate_pair(u_nodal[m], v_nodal[m], radius);
                scratch.drift_nodal[m] = b1(t, nodes[m], xu, yv);
            }
            basis.analyze_into(&scratch.drift_nodal, &mut scratch.drift_coeffs);
        }
        SlowDrift::Averaged { drift } => {
            scratch.drift_coeffs.copy_from_slice(drift.coefficients());
        }
    }
    if model.slow_operator.has_transport() {
        let u_field = Field::from_coefficients(Arc::clone(basis), u_coeffs.to_vec())?;
        if let Some(tv) = transport_values(&model.slow_operator, &u_field, t)? {
            basis.analyze_into(&tv, &mut scratch.aux_coeffs);
            for (d, a) in scratch.drift_coeffs.iter_mut().zip(&scratch.aux_coeffs) {
                *d += a;
            }
        }
    }

    crate::noise::wiener_increment_into(
        &model.wiener_slow,
        h,
        wiener_rng,
        &mut scratch.noise_coeffs,
    )?;
    if scratch.noise_coeffs.iter().any(|&c| c != 0.0) {
        basis.synthesize_into(&scratch.noise_coeffs, &mut scratch.aux_nodal);
        let f1 = &model.slow_noise.f;
        for m in 0..nodes.len() {
            scratch.aux_nodal[m] *= f1(t, nodes[m], u_nodal[m]);
        }
        basis.analyze_into(&scratch.aux_nodal, &mut scratch.noise_coeffs);
    }

    if model.jump_spec.total_rate() > 0.0 {
        let events = sample_jumps(&model.jump_spec, (t, t + h), 1.0, jump_rng)?;
        let g1 = &model.slow_noise.g;
        scratch.aux_nodal.fill(0.0);
        for &(_, z) in &events.events {
            for m in 0..nodes.len() {
                scratch.aux_nodal[m] += g1(t, nodes[m], u_nodal[m], z);
            }
        }
        let mark_scale = model.jump_spec.total_rate() * model.jump_spec.mark_mean();
        if model.slow_noise.g_linear_in_z {
            for m in 0..nodes.len() {
                scratch.aux_nodal[m] -= h * g1(t, nodes[m], u_nodal[m], 1.0) * mark_scale;
            }
        } else {
            for m in 0..nodes.len() {
                scratch.aux_nodal[m] -= h * model
                    .jump_spec
                    .nu_integral(|z| g1(t, nodes[m], u_nodal[m], z));
            }
        }
        basis.analyze_into(&scratch.aux_nodal, &mut scratch.aux_coeffs);
        for (n, a) in scratch.noise_coeffs.iter_mut().zip(&scratch.aux_coeffs) {
            *n += a;
        }
    }

    slow_ev.step_factors_into(basis, t, t + h, &mut scratch.decays, &mut scratch.weights)?;
    for (k, u) in u_coeffs.iter_mut().enumerate() {
        *u = scratch.decays[k] * (*u + scratch.noise_coeffs[k])
            + scratch.weights[k] * scratch.drift_coeffs[k];
    }
    basis.synthesize_into(u_coeffs, u_nodal);
    if !all_finite(u_nodal) || !all_finite(u_coeffs) {
        return Err(Error::BlowUp { last_valid_time: t });
    }
    Ok(())
}

fn macro_grid(config: &SolverConfig) -> Vec<f64> {
    (0..=config.macro_steps())
        .map(|i| i as f64 * config.macro_step)
        .collect()
}

fn micro_grid(config: &SolverConfig, epsilon: f64) -> Vec<f64> {
    let k = config.micro_substeps(epsilon);
    let dt = config.macro_step / k as f64;
    let mut grid = Vec::with_capacity(config.macro_steps() * k + 1);
    for i in 0..config.macro_steps() {
        let base = i as f64 * config.macro_step;
        for j in 0..k {
            grid.push(base + j as f64 * dt);
        }
    }
    grid.push(config.horizon);
    grid
}

struct Recorder {
    times: Vec<f64>,
    states: Vec<Field>,
    stride: usize,
}

impl Recorder {
    fn new(stride: usize) -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            stride,
        }
    }

    fn push(&mut self, index: usize, t: f64, basis: &Arc<SpectralBasis>, coeffs: &[f64]) {
        if index.is_multiple_of(self.stride) {
            self.times.push(t);
            self.states
                .push(Field::from_coefficients(Arc::clone(basis), coeffs.to_vec()).expect("len"));
        }
    }

    fn into_record(
        self,
        stopping_time: f64,
        manifest: &SeedManifest,
        path: u64,
    ) -> TrajectoryRecord {
        TrajectoryRecord {
            times: self.times,
            states: self.states,
            stopping_time,
            master_seed: manifest.master_seed,
            path_index: path,
        }
    }
}

/// Integrates the coupled slow-fast system from (x0, y0) over [0, T].
///
/// Per macro step the fast component advances through its micro substeps
/// with the slow input frozen at the step start, then the slow component
/// advances once seeing the fast state from the step start. The stopping
/// guard checks the product sup-norm after every micro substep and macro
/// update; a breach halts the simulation and records the stopping time
/// (post-stop states are absent from the records).
pub fn solve_coupled(
    model: &ModelSpec,
    x0: &Field,
    y0: &Field,
    epsilon: f64,
    config: &SolverConfig,
    manifest: &SeedManifest,
    path_index: u64,
) -> Result<(TrajectoryRecord, TrajectoryRecord)> {
    config.validate()?;
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    let basis = &model.basis;
    if !Arc::ptr_eq(x0.basis(), basis) || !Arc::ptr_eq(y0.basis(), basis) {
        return Err(Error::BasisMismatch);
    }
    let radius = config.truncation_radius;
    let initial_norm = x0.sup_norm()?.hypot(y0.sup_norm()?);
    if initial_norm >= radius {
        return Err(Error::InvalidConfig(format!(
            "initial product norm {initial_norm} reaches the truncation radius {radius}"
        )));
    }

    let slow_ev =
        EvolutionStep::with_grid(model.slow_operator.clone(), 0.0, 1.0, &macro_grid(config))?;
    let fast_ev = EvolutionStep::with_grid(
        model.fast_operator.clone(),
        model.alpha,
        epsilon,
        &micro_grid(config, epsilon),
    )?;

    let mut noise = PathNoise::for_path(manifest, path_index);
    let mut scratch_u = Scratch::new(basis);
    let mut scratch_v = Scratch::new(basis);

    let mut u_coeffs = x0.coefficients().to_vec();
    let mut v_coeffs = y0.coefficients().to_vec();
    let mut u_nodal = basis.synthesize(&u_coeffs)?;
    let mut v_nodal = basis.synthesize(&v_coeffs)?;

    let mut rec_u = Recorder::new(config.record_stride);
    let mut rec_v = Recorder::new(config.record_stride);
    rec_u.push(0, 0.0, basis, &u_coeffs);
    rec_v.push(0, 0.0, basis, &v_coeffs);

    let k_micro = config.micro_substeps(epsilon);
    let dt_micro = config.macro_step / k_micro as f64;
    let mut stopping_time = f64::INFINITY;

    'time: for step in 0..config.macro_steps() {
        let t = step as f64 * config.macro_step;
        // Fast state seen by the slow equation: sampled at macro-step start.
        let v_snapshot = v_nodal.clone();
        let sup_u_frozen = sup_of(&u_nodal);

        for j in 0..k_micro {
            let s = t + j as f64 * dt_micro;
            fast_substep(
                model,
                &fast_ev,
                s,
                dt_micro,
                epsilon,
                &u_nodal,
                &mut v_coeffs,
                &mut v_nodal,
                &mut noise.fast_wiener,
                &mut noise.fast_jumps,
                radius,
                &mut scratch_v,
            )?;
            if sup_u_frozen.hypot(sup_of(&v_nodal)) >= radius {
                stopping_time = s + dt_micro;
                break 'time;
            }
        }

        slow_macro_step(
            model,
            &slow_ev,
            t,
            config.macro_step,
            SlowDrift::Coupled {
                v_nodal: &v_snapshot,
            },
            &mut u_coeffs,
            &mut u_nodal,
            &mut noise.slow_wiener,
            &mut noise.slow_jumps,
            radius,
            &mut scratch_u,
        )?;
        let t_next = t + config.macro_step;
        if sup_of(&u_nodal).hypot(sup_of(&v_nodal)) >= radius {
            stopping_time = t_next;
            break;
        }
        rec_u.push(step + 1, t_next, basis, &u_coeffs);
        rec_v.push(step + 1, t_next, basis, &v_coeffs);
    }

    Ok((
        rec_u.into_record(stopping_time, manifest, path_index),
        rec_v.into_record(stopping_time, manifest, path_index),
    ))
}

/// Integrates the fast equation with the slow input frozen at `x_frozen`
/// from time `s` to `t_end`, at natural speed (epsilon = 1) and with the
/// spectral shift active. Noise is drawn from the provided substreams so
/// callers control coupling across ensemble members.
#[allow(clippy::too_many_arguments)]
pub fn solve_frozen_fast(
    model: &ModelSpec,
    x_frozen: &Field,
    y0: &Field,
    s: f64,
    t_end: f64,
    config: &SolverConfig,
    noise: &mut PathNoise,
    manifest: &SeedManifest,
    path_index: u64,
) -> Result<TrajectoryRecord> {
    if s > t_end {
        return Err(Error::ReversedInterval { s, t: t_end });
    }
    let basis = &model.basis;
    if !Arc::ptr_eq(x_frozen.basis(), basis) || !Arc::ptr_eq(y0.basis(), basis) {
        return Err(Error::BasisMismatch);
    }
    let radius = config.truncation_radius;
    let steps = (((t_end - s) / config.fast_step_target).ceil() as usize).max(1);
    let dt = (t_end - s) / steps as f64;
    let grid: Vec<f64> = (0..=steps).map(|i| s + i as f64 * dt).collect();
    let fast_ev = EvolutionStep::with_grid(model.fast_operator.clone(), model.alpha, 1.0, &grid)?;

    let x_nodal = x_frozen.nodal().to_vec();
    let mut v_coeffs = y0.coefficients().to_vec();
    let mut v_nodal = basis.synthesize(&v_coeffs)?;
    let mut scratch = Scratch::new(basis);

    let mut rec = Recorder::new(config.record_stride);
    rec.push(0, s, basis, &v_coeffs);
    let mut stopping_time = f64::INFINITY;

    for (i, window) in grid.windows(2).enumerate() {
        fast_substep(
            model,
            &fast_ev,
            window[0],
            window[1] - window[0],
            1.0,
            &x_nodal,
            &mut v_coeffs,
            &mut v_nodal,
            &mut noise.fast_wiener,
            &mut noise.fast_jumps,
            radius,
            &mut scratch,
        )?;
        if sup_of(&v_nodal) >= radius {
            stopping_time = window[1];
            break;
        }
        rec.push(i + 1, window[1], basis, &v_coeffs);
    }
    Ok(rec.into_record(stopping_time, manifest, path_index))
}

/// Integrates the averaged slow equation with drift `avg_drift` in place of
/// the coupled reaction; slow noise substreams are identical to the ones a
/// coupled solve with the same (manifest, path) would consume, so the two
/// trajectories are pathwise comparable.
pub fn solve_averaged(
    model: &ModelSpec,
    avg_drift: &mut dyn FnMut(&Field) -> Result<Field>,
    x0: &Field,
    config: &SolverConfig,
    manifest: &SeedManifest,
    path_index: u64,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    let basis = &model.basis;
    if !Arc::ptr_eq(x0.basis(), basis) {
        return Err(Error::BasisMismatch);
    }
    let radius = config.truncation_radius;
    if x0.sup_norm()? >= radius {
        return Err(Error::InvalidConfig(
            "initial norm reaches the truncation radius".into(),
        ));
    }
    let slow_ev =
        EvolutionStep::with_grid(model.slow_operator.clone(), 0.0, 1.0, &macro_grid(config))?;
    let mut noise = PathNoise::for_path(manifest, path_index);
    let mut scratch = Scratch::new(basis);

    let mut u_coeffs = x0.coefficients().to_vec();
    let mut u_nodal = basis.synthesize(&u_coeffs)?;
    let mut rec = Recorder::new(config.record_stride);
    rec.push(0, 0.0, basis, &u_coeffs);
    let mut stopping_time = f64::INFINITY;

    for step in 0..config.macro_steps() {
        let t = step as f64 * config.macro_step;
        let u_field = Field::from_coefficients(Arc::clone(basis), u_coeffs.clone())?;
        let drift = avg_drift(&u_field)?;
        if !Arc::ptr_eq(drift.basis(), basis) {
            return Err(Error::BasisMismatch);
        }
        slow_macro_step(
            model,
            &slow_ev,
            t,
            config.macro_step,
            SlowDrift::Averaged { drift: &drift },
            &mut u_coeffs,
            &mut u_nodal,
            &mut noise.slow_wiener,
            &mut noise.slow_jumps,
            radius,
            &mut scratch,
        )?;
        let t_next = t + config.macro_step;
        if sup_of(&u_nodal) >= radius {
            stopping_time = t_next;
            break;
        }
        rec.push(step + 1, t_next, basis, &u_coeffs);
    }
    Ok(rec.into_record(stopping_time, manifest, path_index))
}

/// Drives the fast component over the full coupled grid with the slow input
/// frozen per window and the state reset to the shadowed fast snapshot at
/// each window start. Consumes the identical fast-noise substreams as a
/// coupled solve with the same (manifest, path), walking the same micro
/// grid; records land on the macro grid (pre-reset at window boundaries).
#[allow(clippy::too_many_arguments)]
pub(crate) fn drive_windowed_fast(
    model: &ModelSpec,
    slow_snapshots: &[Field],
    fast_snapshots: &[Field],
    steps_per_window: usize,
    epsilon: f64,
    config: &SolverConfig,
    manifest: &SeedManifest,
    path_index: u64,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    if slow_snapshots.is_empty() || fast_snapshots.is_empty() {
        return Err(Error::WindowMismatch {
            expected: 1,
            got: 0,
        });
    }
    let basis = &model.basis;
    let fast_ev = EvolutionStep::with_grid(
        model.fast_operator.clone(),
        model.alpha,
        epsilon,
        &micro_grid(config, epsilon),
    )?;
    let mut noise = PathNoise::for_path(manifest, path_index);
    let mut scratch = Scratch::new(basis);
    let k_micro = config.micro_substeps(epsilon);
    let dt_micro = config.macro_step / k_micro as f64;
    let radius = config.truncation_radius;

    let mut v_coeffs = fast_snapshots[0].coefficients().to_vec();
    let mut v_nodal = basis.synthesize(&v_coeffs)?;
    let mut u_nodal = slow_snapshots[0].nodal().to_vec();

    let mut rec = Recorder::new(config.record_stride);
    rec.push(0, 0.0, basis, &v_coeffs);
    let mut stopping_time = f64::INFINITY;

    'time: for step in 0..config.macro_steps() {
        if step % steps_per_window == 0 {
            let w = step / steps_per_window;
            if w < slow_snapshots.len() {
                u_nodal.copy_from_slice(slow_snapshots[w].nodal());
                v_coeffs.copy_from_slice(fast_snapshots[w].coefficients());
                basis.synthesize_into(&v_coeffs, &mut v_nodal);
            }
        }
        let sup_u = sup_of(&u_nodal);
        let t = step as f64 * config.macro_step;
        for j in 0..k_micro {
            let s = t + j as f64 * dt_micro;
            fast_substep(
                model,
                &fast_ev,
                s,
                dt_micro,
                epsilon,
                &u_nodal,
                &mut v_coeffs,
                &mut v_nodal,
                &mut noise.fast_wiener,
                &mut noise.fast_jumps,
                radius,
                &mut scratch,
            )?;
            if sup_u.hypot(sup_of(&v_nodal)) >= radius {
                stopping_time = s + dt_micro;
                break 'time;
            }
        }
        rec.push(step + 1, t + config.macro_step, basis, &v_coeffs);
    }
    Ok(rec.into_record(stopping_time, manifest, path_index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{builtin_model, Overrides};
    use approx::assert_relative_eq;

    fn pure_linear_model() -> ModelSpec {
        builtin_model(
            "deterministic-cubic",
            &Overrides::from_pairs(&[("b1_scale", 0.0), ("b2_scale", 0.0)]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        c.validate().unwrap();
        c.macro_step = 0.013; // does not divide horizon 1.0
        assert!(c.validate().is_err());
        c = SolverConfig {
            horizon: 0.005,
            ..SolverConfig::default()
        };
        assert!(c.validate().is_err()); // macro_step > horizon
    }

    #[test]
    fn micro_substep_counts_scale_with_epsilon() {
        let c = SolverConfig::default();
        assert_eq!(c.micro_substeps(1.0), 1);
        assert_eq!(c.micro_substeps(0.01), 20);
        assert_eq!(c.micro_substeps(0.001), 200);
    }

    #[test]
    fn zero_noise_zero_reaction_is_pure_linear_evolution() {
        let model = pure_linear_model();
        let x0 = Field::mode(Arc::clone(&model.basis), 0, 1.0).unwrap();
        let y0 = Field::zero(Arc::clone(&model.basis));
        let config = SolverConfig {
            horizon: 0.1,
            macro_step: 0.01,
            ..SolverConfig::default()
        };
        let manifest = SeedManifest::new(1);
        let (u, _v) = solve_coupled(&model, &x0, &y0, 0.5, &config, &manifest, 0).unwrap();
        let expected = (-0.1 * std::f64::consts::PI.powi(2)).exp();
        let got = u.final_state().coefficients()[0];
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        // All other modes stay exactly zero.
        assert!(u.final_state().coefficients()[1..]
            .iter()
            .all(|&c| c == 0.0));
        assert_eq!(u.stopping_time, f64::INFINITY);
    }

    #[test]
    fn zero_initial_data_is_an_equilibrium() {
        let model = builtin_model("deterministic-cubic", &Overrides::default()).unwrap();
        let x0 = Field::zero(Arc::clone(&model.basis));
        let y0 = Field::zero(Arc::clone(&model.basis));
        let config = SolverConfig {
            horizon: 0.2,
            ..SolverConfig::default()
        };
        let manifest = SeedManifest::new(2);
        let (u, v) = solve_coupled(&model, &x0, &y0, 0.1, &config, &manifest, 0).unwrap();
        for state in u.states.iter().chain(&v.states) {
            assert!(state.coefficients().iter().all(|&c| c == 0.0));
        }
        assert!(!u.stopped());
    }

    #[test]
    fn deterministic_runs_are_bit_reproducible() {
        let model = builtin_model("cubic-gl", &Overrides::default()).unwrap();
        let x0 = Field::mode(Arc::clone(&model.basis), 0, 0.5).unwrap();
        let y0 = Field::zero(Arc::clone(&model.basis));
        let config = SolverConfig {
            horizon: 0.1,
            ..SolverConfig::default()
        };
        let manifest = SeedManifest::new(33);
        let (u1, v1) = solve_coupled(&model, &x0, &y0, 0.1, &config, &manifest, 7).unwrap();
        let (u2, v2) = solve_coupled(&model, &x0, &y0, 0.1, &config, &manifest, 7).unwrap();
        assert_eq!(
            u1.final_state().coefficients(),
            u2.final_state().coefficients()
        );
        assert_eq!(
            v1.final_state().coefficients(),
            v2.final_state().coefficients()
        );
    }

    #[test]
    fn truncation_radii_agree_until_smaller_radius() {
        // Amplified noise so the radius actually gets hit.
        let overrides = Overrides::from_pairs(&[
            ("b1_scale", 0.0),
            ("b2_scale", 0.0),
            ("f1_amp", 40.0),
            ("g1_amp", 20.0),
        ])
        .unwrap();
        let model = builtin_model("cubic-gl", &overrides).unwrap();
        let x0 = Field::mode(Arc::clone(&model.basis), 0, 2.0).unwrap();
        let y0 = Field::zero(Arc::clone(&model.basis));
        let manifest = SeedManifest::new(91);
        let mut hit = 0;
        for path in 0..10u64 {
            let small = SolverConfig {
                truncation_radius: 8.0,
                horizon: 0.5,
                ..SolverConfig::default()
            };
            let large = SolverConfig {
                truncation_radius: 25.0,
                horizon: 0.5,
                ..SolverConfig::default()
            };
            let (us, vs) = solve_coupled(&model, &x0, &y0, 0.5, &small, &manifest, path).unwrap();
            let (ul, vl) = solve_coupled(&model, &x0, &y0, 0.5, &large, &manifest, path).unwrap();
            if us.stopped() {
                hit += 1;
            }
            // Identical (bitwise) on the shared prefix.
            for (i, t) in us.times.iter().enumerate() {
                let j = ul.times.iter().position(|tj| tj == t).unwrap();
                assert_eq!(us.states[i].coefficients(), ul.states[j].coefficients());
                assert_eq!(vs.states[i].coefficients(), vl.states[j].coefficients());
            }
        }
        assert!(hit > 0, "no path hit the small radius; test is vacuous");
    }

    #[test]
    fn fine_step_self_oracle_deterministic_cubic() {
        let model = builtin_model("deterministic-cubic", &Overrides::default()).unwrap();
        let x0 = Field::mode(Arc::clone(&model.basis), 0, 1.0).unwrap();
        let y0 = Field::zero(Arc::clone(&model.basis));
        let manifest = SeedManifest::new(3);
        let coarse_cfg = SolverConfig {
            macro_step: 0.001,
            horizon: 0.5,
            record_stride: 100,
            ..SolverConfig::default()
        };
        let fine_cfg = SolverConfig {
            macro_step: 0.001 / 100.0,
            fast_step_target: 0.005,
            horizon: 0.5,
            record_stride: 10_000,
            ..SolverConfig::default()
        };
        let eps = 0.01;
        let (coarse, _) = solve_coupled(&model, &x0, &y0, eps, &coarse_cfg, &manifest, 0).unwrap();
        let (fine, _) = solve_coupled(&model, &x0, &y0, eps, &fine_cfg, &manifest, 0).unwrap();
        assert_eq!(coarse.times.len(), fine.times.len());
        let mut sup_err = 0.0f64;
        for (i, t) in coarse.times.iter().enumerate() {
            assert_relative_eq!(*t, fine.times[i], epsilon = 1e-9);
            let diff = coarse.states[i]
                .lin_comb(1.0, &fine.states[i], -1.0)
                .unwrap()
                .sup_norm()
                .unwrap();
            sup_err = sup_err.max(diff);
        }
        assert!(sup_err <= 1e-3, "sup error {sup_err}");
    }

    #[test]
    fn halving_the_step_reduces_error_first_order() {
        let model = builtin_model("deterministic-cubic", &Overrides::default()).unwrap();
        let x0 = Field::mode(Arc::clone(&model.basis), 0, 1.0).unwrap();
        let y0 = Field::mode(Arc::clone(&model.basis), 1, 0.3).unwrap();
        let manifest = SeedManifest::new(4);
        let eps = 0.1;
        let run = |h: f64, stride: usize| {
            let cfg = SolverConfig {
                macro_step: h,
                horizon: 0.4,
                record_stride: stride,
                ..SolverConfig::default()
            };
            solve_coupled(&model, &x0, &y0, eps, &cfg, &manifest, 0)
                .unwrap()
                .0
        };
        let reference = run(0.0005, 800);
        let coarse = run(0.02, 20);
        let half = run(0.01, 40);
        let err = |traj: &TrajectoryRecord| {
            let mut e = 0.0f64;
            for (i, t) in traj.times.iter().enumerate() {
                let r = reference.state_at(*t).unwrap();
                e = e.max(
                    traj.states[i]
                        .lin_comb(1.0, r, -1.0)
                        .unwrap()
                        .sup_norm()
                        .unwrap(),
                );
            }
            e
        };
        let e_coarse = err(&coarse);
        let e_half = err(&half);
        assert!(
            e_coarse / e_half >= 1.8,
            "error ratio {} (coarse {e_coarse}, half {e_half})",
            e_coarse / e_half
        );
    }

    #[test]
    fn ensemble_mean_equals_linear_evolution_without_drift() {
        // b1 = 0, f1 constant, g1 state-independent: the slow mean follows
        // the linear evolution of x0.
        let overrides = Overrides::from_pairs(&[
            ("b1_scale", 0.0),
            ("b2_scale", 0.0),
            ("f1_amp", 0.3),
            ("g1_amp", 0.2),
        ])
        .unwrap();
        let model = builtin_model("cubic-gl", &overrides).unwrap();
        let x0 = Field::mode(Arc::clone(&model.basis), 0, 1.0).unwrap();
        let y0 = Field::zero(Arc::clone(&model.basis));
        let config = SolverConfig {
            horizon: 0.2,
            macro_step: 0.02,
            record_stride: 10,
            ..SolverConfig::default()
        };
        let manifest = SeedManifest::new(5);
        let mut acc = crate::stats::Accumulator::new();
        let paths = 10_000u64;
        for path in 0..paths {
            let (u, _) = solve_coupled(&model, &x0, &y0, 1.0, &config, &manifest, path).unwrap();
            acc.push(u.final_state().coefficients()[0]);
        }
        let ev = EvolutionStep::new(model.slow_operator.clone(), 0.0, 1.0).unwrap();
        let expected = ev.evolve_linear(&x0, 0.0, 0.2).unwrap().coefficients()[0];
        assert!(
            (acc.mean() - expected).abs() <= 3.0 * acc.std_err(),
            "mean {} vs {} (se {})",
            acc.mean(),
            expected,
            acc.std_err()
        );
    }

    #[test]
    fn averaged_solver_with_zero_drift_is_linear() {
        let model = pure_linear_model();
        let x0 = Field::mode(Arc::clone(&model.basis), 0, 1.0).unwrap();
        let config = SolverConfig {
            horizon: 0.1,
            ..SolverConfig::default()
        };
        let manifest = SeedManifest::new(6);
        let basis = Arc::clone(&model.basis);
        let mut drift = move |_: &Field| Ok(Field::zero(Arc::clone(&basis)));
        let u = solve_averaged(&model, &mut drift, &x0, &config, &manifest, 0).unwrap();
        let expected = (-0.1 * std::f64::consts::PI.powi(2)).exp();
        assert!((u.final_state().coefficients()[0] - expected).abs() < 1e-6);
    }

    #[test]
    fn averaged_matches_decoupled_cubic_ode() {
        // y-independent override b1 = -x^3: the averaged equation with
        // drift apply_pointwise(-x^3) coincides with the decoupled slow
        // equation; with zero noise both match a dense-step oracle.
        let overrides = Overrides::from_pairs(&[("b1_y_coupling", 0.0)]).unwrap();
        let model = builtin_model("deterministic-cubic", &overrides).unwrap();
        let x0 = Field::mode(Arc::clone(&model.basis), 0, 1.0).unwrap();
        let manifest = SeedManifest::new(7);
        let mut drift =
            |x: &Field| crate::spectral::apply_pointwise(0.0, &[x], |_, _, s| -s[0].powi(3));
        let coarse_cfg = SolverConfig {
            macro_step: 0.005,
            horizon: 0.5,
            record_stride: 100,
            ..SolverConfig::default()
        };
        let fine_cfg = SolverConfig {
            macro_step: 0.00005,
            horizon: 0.5,
            record_stride: 10_000,
            ..SolverConfig::default()
        };
        let coarse = solve_averaged(&model, &mut drift, &x0, &coarse_cfg, &manifest, 0).unwrap();
        let fine = solve_averaged(&model, &mut drift, &x0, &fine_cfg, &manifest, 0).unwrap();
        let mut sup_err = 0.0f64;
        for (i, t) in coarse.times.iter().enumerate() {
            let f = fine.state_at(*t).unwrap();
            sup_err = sup_err.max(
                coarse.states[i]
                    .lin_comb(1.0, f, -1.0)
                    .unwrap()
                    .sup_norm()
                    .unwrap(),
            );
        }
        assert!(sup_err <= 1e-3, "sup error {sup_err}");
    }

    #[test]
    fn averaged_with_linearized_drift_matches_scalar_odes() {
        // avg_drift = -c x: each mode follows the closed-form scalar ODE
        // u_k(t) = x_k exp(-(gamma(0,t) alpha_k + c t)) with zero noise.
        let model = pure_linear_model();
        let c = 1.0 / (1.0 + 2.0 * std::f64::consts::PI.powi(2) + 1.0);
        let x0 = Field::from_coefficients(
            Arc::clone(&model.basis),
            vec![1.0, -0.5, 0.25, 0.1, 0.0, 0.3, -0.2, 0.05],
        )
        .unwrap();
        let config = SolverConfig {
            macro_step: 0.005,
            horizon: 0.1,
            record_stride: 20,
            ..SolverConfig::default()
        };
        let manifest = SeedManifest::new(20);
        let mut drift = move |x: &Field| Ok(x.scale(-c));
        let u = solve_averaged(&model, &mut drift, &x0, &config, &manifest, 0).unwrap();
        for (k, &got) in u.final_state().coefficients().iter().enumerate() {
            let exact = x0.coefficients()[k] * (-(0.1 * model.basis.eigenvalue(k) + c * 0.1)).exp();
            assert!((got - exact).abs() < 1e-4, "mode {k}: {got} vs {exact}");
        }
    }

    #[test]
    fn blow_up_is_reported_with_last_valid_time() {
        // A state large enough that the cubic drift overflows f64; the
        // guard radius is set beyond it so the overflow is what bites.
        let model = builtin_model("cubic-gl", &Overrides::default()).unwrap();
        let x0 = Field::mode(Arc::clone(&model.basis), 0, 1e200).unwrap();
        let y0 = Field::zero(Arc::clone(&model.basis));
        let config = SolverConfig {
            truncation_radius: 1e210,
            horizon: 0.1,
            ..SolverConfig::default()
        };
        let manifest = SeedManifest::new(21);
        match solve_coupled(&model, &x0, &y0, 0.5, &config, &manifest, 0) {
            Err(Error::BlowUp { last_valid_time }) => {
                assert!(last_valid_time < 0.1);
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn frozen_fast_linear_decay_rate() {
        // Zero-noise linear model from e_1: the log-slope over [0, 1]
        // matches alpha + gamma_avg pi^2 + 1 within 2 percent.
        let overrides = Overrides::from_pairs(&[
            ("f1_amp", 0.0),
            ("f2_amp", 0.0),
            ("g1_amp", 0.0),
            ("g2_amp", 0.0),
            ("jump_rate", 0.0),
        ])
        .unwrap();
        let model = builtin_model("linear", &overrides).unwrap();
        let x = Field::zero(Arc::clone(&model.basis));
        let y0 = Field::mode(Arc::clone(&model.basis), 0, 1.0).unwrap();
        let config = SolverConfig {
            fast_step_target: 0.02,
            horizon: 1.0,
            ..SolverConfig::default()
        };
        let manifest = SeedManifest::new(8);
        let mut noise = PathNoise::for_path(&manifest, 0);
        let rec = solve_frozen_fast(&model, &x, &y0, 0.0, 1.0, &config, &mut noise, &manifest, 0)
            .unwrap();
        let mut ts = Vec::new();
        let mut logs = Vec::new();
        for (i, t) in rec.times.iter().enumerate() {
            let norm = rec.states[i].sup_norm().unwrap();
            if norm > 0.0 {
                ts.push(*t);
                logs.push(norm.ln());
            }
        }
        let (slope, _) = crate::stats::linear_fit(&ts, &logs);
        let expected = model.alpha + 2.0 * std::f64::consts::PI.powi(2) + 1.0;
        assert!(
            (-slope - expected).abs() / expected < 0.02,
            "rate {} vs {expected}",
            -slope
        );
    }

    #[test]
    fn frozen_fast_equilibrium_is_stationary() {
        // Autonomous zero-noise fast drift: the equilibrium from damped
        // fixed-point iteration stays put over [0, 1].
        let overrides = Overrides::from_pairs(&[("gamma2_mod", 0.0)]).unwrap();
        let model = builtin_model("deterministic-cubic", &overrides).unwrap();
        let basis = Arc::clone(&model.basis);
        let x = Field::mode(Arc::clone(&basis), 0, 1.0).unwrap();
        // Fixed point of v = (2 A + alpha)^{-1} P(x - v^3) in coefficients.
        let mut v = Field::zero(Arc::clone(&basis));
        for _ in 0..400 {
            let rhs =
                crate::spectral::apply_pointwise(0.0, &[&x, &v], |_, _, s| s[0] - s[1].powi(3))
                    .unwrap();
            let coeffs: Vec<f64> = rhs
                .coefficients()
                .iter()
                .enumerate()
                .map(|(k, &c)| c / (2.0 * basis.eigenvalue(k) + model.alpha))
                .collect();
            let next = Field::from_coefficients(Arc::clone(&basis), coeffs).unwrap();
            v = v.lin_comb(0.5, &next, 0.5).unwrap();
        }
        let config = SolverConfig {
            fast_step_target: 0.01,
            horizon: 1.0,
            ..SolverConfig::default()
        };
        let manifest = SeedManifest::new(9);
        let mut noise = PathNoise::for_path(&manifest, 0);
        let rec =
            solve_frozen_fast(&model, &x, &v, 0.0, 1.0, &config, &mut noise, &manifest, 0).unwrap();
        for state in &rec.states {
            let drift = state.lin_comb(1.0, &v, -1.0).unwrap().sup_norm().unwrap();
            assert!(drift <= 1e-6, "drifted {drift}");
        }
    }

    #[test]
    fn frozen_fast_accepts_negative_launch_times() {
        // Long-run constructions launch from the past; the periodic
        // coefficients are defined on all of the real line.
        let model = builtin_model("cubic-gl", &Overrides::default()).unwrap();
        let x = Field::mode(Arc::clone(&model.basis), 0, 0.5).unwrap();
        let y0 = Field::zero(Arc::clone(&model.basis));
        let config = SolverConfig {
            fast_step_target: 0.02,
            ..SolverConfig::default()
        };
        let manifest = SeedManifest::new(22);
        let mut noise = PathNoise::for_path(&manifest, 0);
        let rec = solve_frozen_fast(
            &model, &x, &y0, -1.5, 0.25, &config, &mut noise, &manifest, 0,
        )
        .unwrap();
        assert!(!rec.stopped());
        assert_eq!(rec.times[0], -1.5);
        assert!((rec.times.last().unwrap() - 0.25).abs() < 1e-12);
        assert!(rec.final_state().is_finite());
    }

    #[test]
    fn frozen_fast_pathwise_contraction_under_shared_noise() {
        let model = builtin_model("cubic-gl", &Overrides::default()).unwrap();
        let x = Field::mode(Arc::clone(&model.basis), 0, 0.5).unwrap();
        let y1 = Field::mode(Arc::clone(&model.basis), 0, 1.0).unwrap();
        let y2 = Field::mode(Arc::clone(&model.basis), 1, -0.5).unwrap();
        let config = SolverConfig {
            fast_step_target: 0.02,
            horizon: 1.0,
            ..SolverConfig::default()
        };
        let manifest = SeedManifest::new(10);
        let mut n1 = PathNoise::for_path(&manifest, 0);
        let mut n2 = PathNoise::for_path(&manifest, 0);
        let r1 =
            solve_frozen_fast(&model, &x, &y1, 0.0, 1.0, &config, &mut n1, &manifest, 0).unwrap();
        let r2 =
            solve_frozen_fast(&model, &x, &y2, 0.0, 1.0, &config, &mut n2, &manifest, 0).unwrap();
        let mut last = f64::INFINITY;
        for (a, b) in r1.states.iter().zip(&r2.states) {
            let d = a.lin_comb(1.0, b, -1.0).unwrap().sup_norm().unwrap();
            assert!(d <= last * (1.0 + 1e-12), "distance grew: {d} after {last}");
            last = d;
        }
    }
}
