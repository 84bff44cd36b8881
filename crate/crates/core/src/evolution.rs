//! Action of the two-parameter linear evolution families in the eigenbasis.
//!
//! The elliptic part is diagonal, so evolving a field from s to t multiplies
//! coefficient k by exp(-(1/eps) gamma(t,s) alpha_k - (beta/eps)(t-s)).
//! Integrals of gamma are precomputed as prefix sums over the active time
//! grid, which makes the evolution-family composition law hold to rounding
//! and avoids re-quadrature in inner loops. Off-grid requests fall back to
//! fresh adaptive quadrature.
//!
//! The first-order term L(t) is not part of the semigroup (the basis only
//! diagonalizes the elliptic part); it is evaluated here and consumed by the
//! time stepper as an explicit drift contribution.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::OperatorSpec;
use crate::spectral::{Field, SpectralBasis};

/// Linear evolution of one component: operator data, spectral shift and time
/// scale, with cached gamma integrals on the active grid.
#[derive(Clone, Debug)]
pub struct EvolutionStep {
    op: OperatorSpec,
    shift: f64,
    epsilon: f64,
    grid: Vec<f64>,
    /// gamma_prefix[i] = integral of gamma over [grid[0], grid[i]].
    gamma_prefix: Vec<f64>,
}

impl EvolutionStep {
    /// Evolution data without a grid; every request quadratures afresh.
    pub fn new(op: OperatorSpec, shift: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || epsilon > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1], got {epsilon}"
            )));
        }
        if shift < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "spectral shift must be nonnegative, got {shift}"
            )));
        }
        Ok(Self {
            op,
            shift,
            epsilon,
            grid: Vec::new(),
            gamma_prefix: Vec::new(),
        })
    }

    /// Precomputes gamma integrals over a strictly increasing time grid.
    pub fn with_grid(op: OperatorSpec, shift: f64, epsilon: f64, grid: &[f64]) -> Result<Self> {
        let mut step = Self::new(op, shift, epsilon)?;
        if grid.len() < 2 {
            return Err(Error::InvalidParameter(
                "grid needs at least two points".into(),
            ));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "grid must be strictly increasing".into(),
            ));
        }
        let mut prefix = Vec::with_capacity(grid.len());
        prefix.push(0.0);
        for w in grid.windows(2) {
            let cell = step.op.gamma_integral(w[0], w[1])?;
            let last = *prefix.last().expect("nonempty");
            prefix.push(last + cell);
        }
        step.grid = grid.to_vec();
        step.gamma_prefix = prefix;
        Ok(step)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn operator(&self) -> &OperatorSpec {
        &self.op
    }

    fn grid_index(&self, t: f64) -> Option<usize> {
        if self.grid.is_empty() {
            return None;
        }
        let span = self.grid.last().unwrap() - self.grid[0];
        let tol = 1e-12 * span.max(1.0);
        match self
            .grid
            .binary_search_by(|probe| probe.partial_cmp(&t).expect("finite grid"))
        {
            Ok(i) => Some(i),
            Err(i) => {
                if i < self.grid.len() && (self.grid[i] - t).abs() <= tol {
                    Some(i)
                } else if i > 0 && (self.grid[i - 1] - t).abs() <= tol {
                    Some(i - 1)
                } else {
                    None
                }
            }
        }
    }

    /// Integral of gamma over [s, t], from the prefix table when both
    /// endpoints lie on the grid.
    pub fn gamma_between(&self, s: f64, t: f64) -> Result<f64> {
        if s > t {
            return Err(Error::ReversedInterval { s, t });
        }
        match (self.grid_index(s), self.grid_index(t)) {
            (Some(i), Some(j)) => Ok(self.gamma_prefix[j] - self.gamma_prefix[i]),
            _ => self.op.gamma_integral(s, t),
        }
    }

    /// Per-mode decay multipliers exp(-(1/eps) gamma(t,s) alpha_k
    /// - (shift/eps)(t-s)). All multipliers lie in (0, 1] for shift >= 0.
    pub fn multipliers_into(
        &self,
        basis: &SpectralBasis,
        s: f64,
        t: f64,
        out: &mut [f64],
    ) -> Result<()> {
        let gamma = self.gamma_between(s, t)?;
        let dt = t - s;
        for (k, m) in out.iter_mut().enumerate() {
            let exponent = (gamma * basis.eigenvalue(k) + self.shift * dt) / self.epsilon;
            *m = (-exponent).exp();
        }
        Ok(())
    }

    /// Decay multipliers together with the exponential-integrator drift
    /// weights w_k = (1 - E_k) / r_k, where r_k is the per-unit-time decay
    /// rate. A drift coefficient c contributes w_k * c to the step, which is
    /// the exact variation-of-constants response to a constant drift.
    pub fn step_factors_into(
        &self,
        basis: &SpectralBasis,
        s: f64,
        t: f64,
        decays: &mut [f64],
        drift_weights: &mut [f64],
    ) -> Result<()> {
        let gamma = self.gamma_between(s, t)?;
        let dt = t - s;
        for k in 0..decays.len() {
            let exponent = (gamma * basis.eigenvalue(k) + self.shift * dt) / self.epsilon;
            let decay = (-exponent).exp();
            decays[k] = decay;
            drift_weights[k] = if exponent < 1e-8 {
                // phi_1 expansion for small exponents
                dt * (1.0 - 0.5 * exponent)
            } else {
                let rate = exponent / dt;
                (1.0 - decay) / rate
            };
        }
        Ok(())
    }

    /// Applies the evolution family to a field: `U(t, s) field`.
    pub fn evolve_linear(&self, field: &Field, s: f64, t: f64) -> Result<Field> {
        if s > t {
            return Err(Error::ReversedInterval { s, t });
        }
        let basis = field.basis();
        let mut mult = vec![0.0; basis.mode_count()];
        self.multipliers_into(basis, s, t, &mut mult)?;
        let coeffs = field
            .coefficients()
            .iter()
            .zip(&mult)
            .map(|(&c, &m)| c * m)
            .collect();
        Field::from_coefficients(Arc::clone(basis), coeffs)
    }
}

/// Pre-projection nodal values of the first-order term: the exact spectral
/// derivative of the band-limited field at each node, multiplied by the
/// transport coefficient. Returns `None` when the operator has no transport.
pub fn transport_values(op: &OperatorSpec, field: &Field, t: f64) -> Result<Option<Vec<f64>>> {
    let basis = field.basis();
    let Some(transport) = &op.transport else {
        return Ok(None);
    };
    let mut deriv = vec![0.0; basis.node_count()];
    basis.differentiate_into(field.coefficients(), &mut deriv);
    for (node, (d, &xi)) in deriv.iter_mut().zip(basis.node_positions()).enumerate() {
        let l = transport(t, xi);
        if !l.is_finite() {
            return Err(Error::NonFiniteAtNode { node, xi });
        }
        *d *= l;
    }
    Ok(Some(deriv))
}

/// First-order drift term L(t) u: spectral differentiation of the field,
/// pointwise multiplication by the transport coefficient at the nodes, and
/// re-analysis onto the basis. Zero transport short-circuits to the zero
/// field.
pub fn first_order_drift_term(op: &OperatorSpec, field: &Field, t: f64) -> Result<Field> {
    let basis = field.basis();
    match transport_values(op, field, t)? {
        None => Ok(Field::zero(Arc::clone(basis))),
        Some(nodal) => Field::from_nodal(Arc::clone(basis), &nodal),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::BoundaryKind;
    use approx::assert_relative_eq;

    fn basis() -> Arc<SpectralBasis> {
        SpectralBasis::new(1.0, BoundaryKind::Dirichlet, 4, 9).unwrap()
    }

    fn unit_op() -> OperatorSpec {
        OperatorSpec::constant(1.0).unwrap()
    }

    fn periodic_op() -> OperatorSpec {
        OperatorSpec {
            gamma: Arc::new(|t: f64| 2.0 + (2.0 * std::f64::consts::PI * t).sin()),
            gamma_bounds: (1.0, 3.0),
            transport: None,
            period: Some(1.0),
        }
    }

    #[test]
    fn identity_at_equal_times() {
        let basis = basis();
        let step = EvolutionStep::new(unit_op(), 0.0, 1.0).unwrap();
        let field = Field::mode(Arc::clone(&basis), 1, 2.5).unwrap();
        let out = step.evolve_linear(&field, 0.3, 0.3).unwrap();
        assert_eq!(out.coefficients(), field.coefficients());
    }

    #[test]
    fn closed_form_decay_of_first_mode() {
        let basis = basis();
        let step = EvolutionStep::new(unit_op(), 0.0, 1.0).unwrap();
        let field = Field::mode(Arc::clone(&basis), 0, 1.0).unwrap();
        let out = step.evolve_linear(&field, 0.0, 0.1).unwrap();
        let expected = (-0.1 * std::f64::consts::PI.powi(2)).exp();
        assert_relative_eq!(out.coefficients()[0], expected, epsilon = 1e-10);
        assert_relative_eq!(expected, 0.372708, epsilon = 1e-6);
    }

    #[test]
    fn small_epsilon_speeds_decay() {
        let basis = basis();
        let step = EvolutionStep::new(unit_op(), 0.0, 0.1).unwrap();
        let field = Field::mode(Arc::clone(&basis), 0, 1.0).unwrap();
        let out = step.evolve_linear(&field, 0.0, 0.1).unwrap();
        let expected = (-std::f64::consts::PI.powi(2)).exp();
        assert_relative_eq!(out.coefficients()[0], expected, epsilon = 1e-12);
        assert_relative_eq!(expected, 5.172318620381e-5, epsilon = 1e-12);
    }

    #[test]
    fn rejects_reversed_interval() {
        let basis = basis();
        let step = EvolutionStep::new(unit_op(), 0.0, 1.0).unwrap();
        let field = Field::zero(basis);
        assert!(matches!(
            step.evolve_linear(&field, 1.0, 0.5),
            Err(Error::ReversedInterval { .. })
        ));
    }

    #[test]
    fn composition_law_on_grid() {
        let basis = basis();
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        let step = EvolutionStep::with_grid(periodic_op(), 0.5, 1.0, &grid).unwrap();
        let field =
            Field::from_coefficients(Arc::clone(&basis), vec![1.0, -0.5, 0.25, 0.7]).unwrap();
        let direct = step.evolve_linear(&field, 0.0, 0.9).unwrap();
        let mid = step.evolve_linear(&field, 0.0, 0.37).unwrap();
        let composed = step.evolve_linear(&mid, 0.37, 0.9).unwrap();
        for (a, b) in direct.coefficients().iter().zip(composed.coefficients()) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn grid_cache_matches_fresh_quadrature() {
        let op = periodic_op();
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.05).collect();
        let step = EvolutionStep::with_grid(op.clone(), 0.0, 1.0, &grid).unwrap();
        for (s, t) in [(0.0, 0.05), (0.1, 1.35), (0.3, 1.95), (0.0, 2.0)] {
            let cached = step.gamma_between(s, t).unwrap();
            let fresh = op.gamma_integral(s, t).unwrap();
            assert!(
                (cached - fresh).abs() < 1e-10,
                "({s},{t}): {cached} vs {fresh}"
            );
        }
        // Off-grid endpoints fall back to quadrature.
        let off = step.gamma_between(0.013, 0.77).unwrap();
        assert!((off - op.gamma_integral(0.013, 0.77).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn contraction_in_sup_norm() {
        let basis = basis();
        let step = EvolutionStep::new(periodic_op(), 1.0, 1.0).unwrap();
        let field =
            Field::from_coefficients(Arc::clone(&basis), vec![1.0, 1.0, -1.0, 0.3]).unwrap();
        let out = step.evolve_linear(&field, 0.0, 0.2).unwrap();
        assert!(out.sup_norm().unwrap() <= field.sup_norm().unwrap());
        // multiplier bound exp(-(gamma_0 alpha_1 + shift) dt / eps)
        let mut mult = vec![0.0; 4];
        step.multipliers_into(&basis, 0.0, 0.2, &mut mult).unwrap();
        let bound = (-(1.0 * basis.eigenvalue(0) + 1.0) * 0.2).exp();
        assert!(mult.iter().all(|&m| m <= bound + 1e-12));
    }

    #[test]
    fn epsilon_rescaling_identity() {
        let basis = basis();
        let fast = EvolutionStep::new(unit_op(), 0.7, 0.1).unwrap();
        let slow = EvolutionStep::new(unit_op(), 0.7, 1.0).unwrap();
        let field =
            Field::from_coefficients(Arc::clone(&basis), vec![0.2, -1.0, 0.5, 0.1]).unwrap();
        let a = fast.evolve_linear(&field, 0.0, 0.05).unwrap();
        let b = slow.evolve_linear(&field, 0.0, 0.5).unwrap();
        for (x, y) in a.coefficients().iter().zip(b.coefficients()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_transport_gives_zero_term() {
        let basis = basis();
        let field = Field::mode(Arc::clone(&basis), 0, 1.0).unwrap();
        let out = first_order_drift_term(&unit_op(), &field, 0.0).unwrap();
        assert!(out.coefficients().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn constant_transport_derivative_norm() {
        // l = 1, field = e_1: derivative sqrt(2) pi cos(pi xi) with L2 norm
        // pi, measured on a dense grid of the band-limited interpolant.
        let basis = basis();
        let op = OperatorSpec {
            gamma: Arc::new(|_| 1.0),
            gamma_bounds: (1.0, 1.0),
            transport: Some(Arc::new(|_, _| 1.0)),
            period: None,
        };
        let field = Field::mode(Arc::clone(&basis), 0, 1.0).unwrap();
        let dense = 100_000usize;
        let mut acc = 0.0;
        for j in 0..dense {
            let xi = (j as f64 + 0.5) / dense as f64;
            let d = field.eval_derivative_at(xi);
            acc += d * d / dense as f64;
        }
        assert_relative_eq!(acc.sqrt(), std::f64::consts::PI, epsilon = 1e-6);
        // Pre-projection nodal values equal the analytic derivative.
        let nodal = transport_values(&op, &field, 0.0).unwrap().unwrap();
        for (&v, &xi) in nodal.iter().zip(basis.node_positions()) {
            let d = 2.0f64.sqrt() * std::f64::consts::PI * (std::f64::consts::PI * xi).cos();
            assert_relative_eq!(v, d, epsilon = 1e-10);
        }
    }

    #[test]
    fn variable_transport_matches_finite_differences() {
        let basis = basis();
        let op = OperatorSpec {
            gamma: Arc::new(|_| 1.0),
            gamma_bounds: (1.0, 1.0),
            transport: Some(Arc::new(|_, xi| xi)),
            period: None,
        };
        let field = Field::mode(Arc::clone(&basis), 0, 1.0).unwrap();
        // Finite-difference oracle on a 10^4-point grid, evaluated at the
        // collocation nodes (pre-projection comparison).
        let h = 1.0 / 10_000.0;
        let nodal = transport_values(&op, &field, 0.0).unwrap().unwrap();
        for (&v, &xi) in nodal.iter().zip(basis.node_positions()) {
            let fd = (field.eval_at(xi + 0.5 * h) - field.eval_at(xi - 0.5 * h)) / h;
            assert!((v - xi * fd).abs() < 1e-6, "node {xi}: {v} vs {}", xi * fd);
        }
        // Projection keeps the output band-limited and finite.
        let out = first_order_drift_term(&op, &field, 0.0).unwrap();
        assert!(out.is_finite());
        assert_eq!(out.coefficients().len(), 4);
    }

    #[test]
    fn phi1_weights_recover_constant_drift_response() {
        // For du/dt = -r u + c the exact step is E u + c (1 - E)/r.
        let basis = basis();
        let step = EvolutionStep::new(unit_op(), 2.0, 1.0).unwrap();
        let mut decays = vec![0.0; 4];
        let mut weights = vec![0.0; 4];
        step.step_factors_into(&basis, 0.0, 0.05, &mut decays, &mut weights)
            .unwrap();
        for k in 0..4 {
            let r = basis.eigenvalue(k) + 2.0;
            let exact = (1.0 - (-r * 0.05f64).exp()) / r;
            assert_relative_eq!(weights[k], exact, epsilon = 1e-12);
            assert_relative_eq!(decays[k], (-r * 0.05f64).exp(), epsilon = 1e-12);
        }
    }
}
