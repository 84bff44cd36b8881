//! Problem description: time-dependent operator data, reaction / diffusion /
//! jump coefficients with their growth exponents, and the assembled model.
//!
//! Coefficient functions are plain scalar closures shared behind `Arc`; the
//! solver applies them pointwise at collocation nodes. Validation of the
//! analytic hypotheses lives in [`crate::validate`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::noise::JumpSpec;
use crate::spectral::{NoiseSpectrum, SpectralBasis};

/// Scalar function of time, e.g. the ellipticity modulation gamma(t).
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// First-order drift coefficient l(t, xi).
pub type TransportFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Reaction coefficient b(t, xi, x, y).
pub type ReactionFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// Wiener coefficient f(t, xi, x).
pub type WienerFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Jump coefficient g(t, xi, x, z).
pub type JumpFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

/// Time-dependent second-order operator gamma(t) A + L(t), with A the fixed
/// elliptic part diagonalized by the basis and L(t) a first-order term with
/// coefficient `transport`.
#[derive(Clone)]
pub struct OperatorSpec {
    pub gamma: TimeFn,
    /// Declared bounds (gamma_0, gamma_bar) with 0 < gamma_0 <= gamma_bar.
    pub gamma_bounds: (f64, f64),
    /// Coefficient of the gradient term; `None` means identically zero.
    pub transport: Option<TransportFn>,
    /// Declared period of gamma and transport, if any.
    pub period: Option<f64>,
}

impl OperatorSpec {
    pub fn constant(gamma_value: f64) -> Result<Self> {
        if !(gamma_value > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive, got {gamma_value}"
            )));
        }
        Ok(Self {
            gamma: Arc::new(move |_| gamma_value),
            gamma_bounds: (gamma_value, gamma_value),
            transport: None,
            period: None,
        })
    }

    /// Integral of gamma over [s, t] by adaptive quadrature to relative
    /// tolerance 1e-10. Errors on reversed intervals.
    pub fn gamma_integral(&self, s: f64, t: f64) -> Result<f64> {
        if s > t {
            return Err(Error::ReversedInterval { s, t });
        }
        if s == t {
            return Ok(0.0);
        }
        let value = adaptive_simpson(self.gamma.as_ref(), s, t, 1e-10)?;
        Ok(value)
    }

    pub fn has_transport(&self) -> bool {
        self.transport.is_some()
    }
}

impl std::fmt::Debug for OperatorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorSpec")
            .field("gamma_bounds", &self.gamma_bounds)
            .field("has_transport", &self.has_transport())
            .field("period", &self.period)
            .finish()
    }
}

/// Reaction coefficient with declared growth data.
#[derive(Clone)]
pub struct ReactionSpec {
    pub b: ReactionFn,
    /// Polynomial growth exponent m >= 1 in the dominant variable.
    pub growth_exponent: f64,
    /// Exponent theta in the local Lipschitz estimate (slow reaction only).
    pub lipschitz_exponent: f64,
    /// Declared sign condition in the fast variable (fast reaction only).
    pub dissipative_in_y: bool,
}

impl std::fmt::Debug for ReactionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReactionSpec")
            .field("growth_exponent", &self.growth_exponent)
            .field("lipschitz_exponent", &self.lipschitz_exponent)
            .field("dissipative_in_y", &self.dissipative_in_y)
            .finish()
    }
}

/// Wiener and jump coefficients of one component.
#[derive(Clone)]
pub struct NoiseCoeffSpec {
    pub f: WienerFn,
    pub g: JumpFn,
    /// Declared Lipschitz bound of f and g in the state variable.
    pub lipschitz_bound: f64,
    /// Growth-cap exponent divisor: |f|^p + int |g|^p nu <= c (1 + |x|^{p/m}).
    pub growth_cap_m: f64,
    /// Declares g(t, xi, x, z) = g(t, xi, x, 1) * z, enabling the
    /// moment-based compensator fast path.
    pub g_linear_in_z: bool,
}

impl std::fmt::Debug for NoiseCoeffSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NoiseCoeffSpec")
            .field("lipschitz_bound", &self.lipschitz_bound)
            .field("growth_cap_m", &self.growth_cap_m)
            .field("g_linear_in_z", &self.g_linear_in_z)
            .finish()
    }
}

/// Full problem description for the coupled slow-fast system.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub basis: Arc<SpectralBasis>,
    pub slow_operator: OperatorSpec,
    pub fast_operator: OperatorSpec,
    /// Spectral shift on the fast equation; must make the fast linear decay
    /// rate exceed the one-sided Lipschitz constant of the fast reaction.
    pub alpha: f64,
    pub slow_reaction: ReactionSpec,
    pub fast_reaction: ReactionSpec,
    pub slow_noise: NoiseCoeffSpec,
    pub fast_noise: NoiseCoeffSpec,
    pub wiener_slow: NoiseSpectrum,
    pub wiener_fast: NoiseSpectrum,
    pub jump_spec: JumpSpec,
}

impl ModelSpec {
    /// Declared period of the fast operator, if periodic.
    pub fn period(&self) -> Option<f64> {
        self.fast_operator.period
    }

    /// Time average of the fast gamma over one declared period (falls back
    /// to the midpoint of the declared bounds when aperiodic).
    pub fn fast_gamma_average(&self) -> f64 {
        match self.fast_operator.period {
            Some(p) if p > 0.0 => self
                .fast_operator
                .gamma_integral(0.0, p)
                .map(|v| v / p)
                .unwrap_or(self.fast_operator.gamma_bounds.0),
            _ => 0.5 * (self.fast_operator.gamma_bounds.0 + self.fast_operator.gamma_bounds.1),
        }
    }
}

/// Adaptive Simpson quadrature with absolute-scaled relative tolerance.
pub(crate) fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<f64> {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        if !flm.is_finite() || !frm.is_finite() {
            return Err(Error::Quadrature(format!("integrand not finite near {m}")));
        }
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        let delta = left + right - whole;
        if depth == 0 {
            return Err(Error::Quadrature("max recursion depth reached".into()));
        }
        if delta.abs() <= 15.0 * tol {
            Ok(left + right + delta / 15.0)
        } else {
            let half = 0.5 * tol;
            Ok(recurse(f, a, fa, m, fm, flm, left, half, depth - 1)?
                + recurse(f, m, fm, b, fb, frm, right, half, depth - 1)?)
        }
    }

    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    if !fa.is_finite() || !fb.is_finite() || !fm.is_finite() {
        return Err(Error::Quadrature(
            "integrand not finite at endpoints".into(),
        ));
    }
    let whole = simpson(a, fa, b, fb, fm);
    let scale = whole.abs().max((b - a).abs()).max(1e-300);
    recurse(f, a, fa, b, fb, fm, whole, rel_tol * scale, 48)
}
