//! Spatial discretization: orthonormal eigenbasis of the time-independent
//! elliptic part on a 1-d interval, field representation, norms, and
//! pointwise (Nemytskii) application of coefficient functions.
//!
//! Nonlinearities are treated pseudo-spectrally: coefficient functions are
//! evaluated at collocation nodes and the result re-analyzed onto the first
//! `N` modes. The node count must satisfy `M >= 2N + 1` so that cubic
//! products of band-limited fields are integrated without aliasing. The
//! sup-norm over the collocation nodes stands in for the continuum sup-norm.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};

/// Boundary condition selecting the eigenbasis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    /// Sine modes sqrt(2/L) sin(k pi xi / L), eigenvalues (k pi / L)^2, k >= 1.
    Dirichlet,
    /// Cosine modes including the constant; first eigenvalue is zero.
    Neumann,
}

/// Orthonormal eigenbasis of the negative second-derivative operator on
/// (0, L), tabulated at exact quadrature nodes.
///
/// Immutable after construction; share via `Arc` across threads.
#[derive(Debug)]
pub struct SpectralBasis {
    boundary: BoundaryKind,
    domain_length: f64,
    eigenvalues: Vec<f64>,
    node_positions: Vec<f64>,
    /// Row-major N x M table of e_k(xi_m).
    eigenfunction_values: Vec<f64>,
    /// Row-major N x M table of e_k'(xi_m).
    eigenfunction_derivs: Vec<f64>,
    /// Uniform quadrature weight making the nodal inner product exact for
    /// products of basis functions.
    quad_weight: f64,
    /// Sup-norms of the eigenfunctions over the domain.
    mode_sup_norms: Vec<f64>,
}

impl SpectralBasis {
    /// Builds the basis with `modes` eigenfunctions tabulated at `nodes`
    /// collocation points.
    ///
    /// Rejects `nodes < 2 * modes + 1` (aliasing risk for cubic
    /// nonlinearities) and non-positive domain lengths.
    pub fn new(
        domain_length: f64,
        boundary: BoundaryKind,
        modes: usize,
        nodes: usize,
    ) -> Result<Arc<Self>> {
        if !(domain_length > 0.0) || !domain_length.is_finite() {
            return Err(Error::InvalidDomain(domain_length));
        }
        if modes == 0 {
            return Err(Error::InvalidParameter("mode count must be >= 1".into()));
        }
        if nodes < 2 * modes + 1 {
            return Err(Error::AliasingRisk { modes, nodes });
        }
        let length = domain_length;
        let pi = std::f64::consts::PI;
        let (node_positions, quad_weight): (Vec<f64>, f64) = match boundary {
            // Equispaced interior nodes are exact quadrature nodes for the
            // sine basis.
            BoundaryKind::Dirichlet => (
                (1..=nodes)
                    .map(|m| m as f64 * length / (nodes + 1) as f64)
                    .collect(),
                length / (nodes + 1) as f64,
            ),
            // Midpoint nodes are exact for the cosine basis.
            BoundaryKind::Neumann => (
                (0..nodes)
                    .map(|m| (m as f64 + 0.5) * length / nodes as f64)
                    .collect(),
                length / nodes as f64,
            ),
        };
        let mut eigenvalues = Vec::with_capacity(modes);
        let mut values = Vec::with_capacity(modes * nodes);
        let mut derivs = Vec::with_capacity(modes * nodes);
        let mut sup_norms = Vec::with_capacity(modes);
        for k in 0..modes {
            match boundary {
                BoundaryKind::Dirichlet => {
                    let wave = (k + 1) as f64 * pi / length;
                    let amp = (2.0 / length).sqrt();
                    eigenvalues.push(wave * wave);
                    sup_norms.push(amp);
                    for &xi in &node_positions {
                        values.push(amp * (wave * xi).sin());
                        derivs.push(amp * wave * (wave * xi).cos());
                    }
                }
                BoundaryKind::Neumann => {
                    let wave = k as f64 * pi / length;
                    let amp = if k == 0 {
                        (1.0 / length).sqrt()
                    } else {
                        (2.0 / length).sqrt()
                    };
                    eigenvalues.push(wave * wave);
                    sup_norms.push(amp);
                    for &xi in &node_positions {
                        values.push(amp * (wave * xi).cos());
                        derivs.push(-amp * wave * (wave * xi).sin());
                    }
                }
            }
        }
        Ok(Arc::new(Self {
            boundary,
            domain_length,
            eigenvalues,
            node_positions,
            eigenfunction_values: values,
            eigenfunction_derivs: derivs,
            quad_weight,
            mode_sup_norms: sup_norms,
        }))
    }

    pub fn boundary(&self) -> BoundaryKind {
        self.boundary
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_positions.len()
    }

    /// Eigenvalue of mode `k` (zero-based).
    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.eigenvalues[k]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn node_positions(&self) -> &[f64] {
        &self.node_positions
    }

    pub fn quad_weight(&self) -> f64 {
        self.quad_weight
    }

    /// Nodal values of eigenfunction `k`.
    pub fn eigenfunction(&self, k: usize) -> &[f64] {
        let m = self.node_count();
        &self.eigenfunction_values[k * m..(k + 1) * m]
    }

    fn eigenfunction_deriv(&self, k: usize) -> &[f64] {
        let m = self.node_count();
        &self.eigenfunction_derivs[k * m..(k + 1) * m]
    }

    pub fn mode_sup_norm(&self, k: usize) -> f64 {
        self.mode_sup_norms[k]
    }

    /// Evaluates mode `k` at an arbitrary point of the closed domain.
    pub fn eval_mode(&self, k: usize, xi: f64) -> f64 {
        let pi = std::f64::consts::PI;
        match self.boundary {
            BoundaryKind::Dirichlet => {
                let wave = (k + 1) as f64 * pi / self.domain_length;
                (2.0 / self.domain_length).sqrt() * (wave * xi).sin()
            }
            BoundaryKind::Neumann => {
                let wave = k as f64 * pi / self.domain_length;
                let amp = if k == 0 {
                    (1.0 / self.domain_length).sqrt()
                } else {
                    (2.0 / self.domain_length).sqrt()
                };
                amp * (wave * xi).cos()
            }
        }
    }

    pub fn eval_mode_deriv(&self, k: usize, xi: f64) -> f64 {
        let pi = std::f64::consts::PI;
        match self.boundary {
            BoundaryKind::Dirichlet => {
                let wave = (k + 1) as f64 * pi / self.domain_length;
                (2.0 / self.domain_length).sqrt() * wave * (wave * xi).cos()
            }
            BoundaryKind::Neumann => {
                let wave = k as f64 * pi / self.domain_length;
                let amp = if k == 0 {
                    (1.0 / self.domain_length).sqrt()
                } else {
                    (2.0 / self.domain_length).sqrt()
                };
                -amp * wave * (wave * xi).sin()
            }
        }
    }

    /// Synthesis: nodal values of the field with the given coefficients.
    pub fn synthesize_into(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.mode_count());
        debug_assert_eq!(out.len(), self.node_count());
        out.fill(0.0);
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, &e) in out.iter_mut().zip(self.eigenfunction(k)) {
                *o += c * e;
            }
        }
    }

    /// Analysis: quadrature inner products of nodal values with each mode.
    pub fn analyze_into(&self, nodal: &[f64], out: &mut [f64]) {
        debug_assert_eq!(nodal.len(), self.node_count());
        debug_assert_eq!(out.len(), self.mode_count());
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (&f, &e) in nodal.iter().zip(self.eigenfunction(k)) {
                acc += f * e;
            }
            *o = acc * self.quad_weight;
        }
    }

    pub fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.mode_count() {
            return Err(Error::DimensionMismatch {
                expected: self.mode_count(),
                got: coeffs.len(),
            });
        }
        let mut out = vec![0.0; self.node_count()];
        self.synthesize_into(coeffs, &mut out);
        Ok(out)
    }

    pub fn analyze(&self, nodal: &[f64]) -> Result<Vec<f64>> {
        if nodal.len() != self.node_count() {
            return Err(Error::DimensionMismatch {
                expected: self.node_count(),
                got: nodal.len(),
            });
        }
        let mut out = vec![0.0; self.mode_count()];
        self.analyze_into(nodal, &mut out);
        Ok(out)
    }

    /// Nodal values of the spatial derivative of a band-limited field.
    pub fn differentiate_into(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.mode_count());
        debug_assert_eq!(out.len(), self.node_count());
        out.fill(0.0);
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, &e) in out.iter_mut().zip(self.eigenfunction_deriv(k)) {
                *o += c * e;
            }
        }
    }
}

/// A spatial function represented by spectral coefficients, with a lazily
/// synthesized nodal cache. The cached nodal values always equal the
/// synthesis of the coefficients, so analysis losses never leak in.
#[derive(Debug)]
pub struct Field {
    basis: Arc<SpectralBasis>,
    coefficients: Vec<f64>,
    nodal: OnceLock<Vec<f64>>,
}

impl Clone for Field {
    fn clone(&self) -> Self {
        Self {
            basis: Arc::clone(&self.basis),
            coefficients: self.coefficients.clone(),
            nodal: self.nodal.clone(),
        }
    }
}

impl Field {
    pub fn from_coefficients(basis: Arc<SpectralBasis>, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != basis.mode_count() {
            return Err(Error::DimensionMismatch {
                expected: basis.mode_count(),
                got: coefficients.len(),
            });
        }
        Ok(Self {
            basis,
            coefficients,
            nodal: OnceLock::new(),
        })
    }

    pub fn zero(basis: Arc<SpectralBasis>) -> Self {
        let n = basis.mode_count();
        Self {
            basis,
            coefficients: vec![0.0; n],
            nodal: OnceLock::new(),
        }
    }

    /// Single-mode field `amplitude * e_k` (zero-based mode index).
    pub fn mode(basis: Arc<SpectralBasis>, k: usize, amplitude: f64) -> Result<Self> {
        if k >= basis.mode_count() {
            return Err(Error::InvalidParameter(format!(
                "mode index {k} out of range (basis has {} modes)",
                basis.mode_count()
            )));
        }
        let mut coeffs = vec![0.0; basis.mode_count()];
        coeffs[k] = amplitude;
        Self::from_coefficients(basis, coeffs)
    }

    /// Projects nodal values onto the basis (band-limiting analysis).
    pub fn from_nodal(basis: Arc<SpectralBasis>, nodal: &[f64]) -> Result<Self> {
        let coeffs = basis.analyze(nodal)?;
        Self::from_coefficients(basis, coeffs)
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn shares_basis(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis)
    }

    /// Nodal values, synthesized on first use and cached.
    pub fn nodal(&self) -> &[f64] {
        self.nodal.get_or_init(|| {
            let mut out = vec![0.0; self.basis.node_count()];
            self.basis.synthesize_into(&self.coefficients, &mut out);
            out
        })
    }

    pub fn is_finite(&self) -> bool {
        self.coefficients.iter().all(|c| c.is_finite())
    }

    /// Max of |values| over the collocation nodes; the working surrogate for
    /// the continuum sup-norm. A non-finite entry signals blow-up.
    pub fn sup_norm(&self) -> Result<f64> {
        if !self.is_finite() {
            return Err(Error::NonFiniteField);
        }
        Ok(self.nodal().iter().fold(0.0f64, |acc, &v| acc.max(v.abs())))
    }

    /// L^p norm by collocation quadrature (exact for p = 2 on band-limited
    /// fields).
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !self.is_finite() {
            return Err(Error::NonFiniteField);
        }
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lp_norm needs p >= 1, got {p}"
            )));
        }
        let w = self.basis.quad_weight();
        let sum: f64 = self.nodal().iter().map(|&v| v.abs().powf(p) * w).sum();
        Ok(sum.powf(1.0 / p))
    }

    /// Evaluates the band-limited interpolant anywhere in the closed domain.
    pub fn eval_at(&self, xi: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(k, &c)| c * self.basis.eval_mode(k, xi))
            .sum()
    }

    /// Evaluates its spatial derivative anywhere in the closed domain.
    pub fn eval_derivative_at(&self, xi: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(k, &c)| c * self.basis.eval_mode_deriv(k, xi))
            .sum()
    }

    /// Componentwise linear combination `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        if !self.shares_basis(other) {
            return Err(Error::BasisMismatch);
        }
        let coeffs = self
            .coefficients
            .iter()
            .zip(&other.coefficients)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        Field::from_coefficients(Arc::clone(&self.basis), coeffs)
    }

    pub fn scale(&self, a: f64) -> Field {
        let coeffs = self.coefficients.iter().map(|&c| a * c).collect();
        Field {
            basis: Arc::clone(&self.basis),
            coefficients: coeffs,
            nodal: OnceLock::new(),
        }
    }
}

/// Evaluates a scalar function at every node on raw nodal input slices.
///
/// This is the pre-projection kernel behind [`apply_pointwise`]; the output
/// at node `m` depends only on the inputs at node `m`. Returns the offending
/// node on a non-finite result.
pub fn apply_at_nodes<F>(
    t: f64,
    node_positions: &[f64],
    inputs: &[&[f64]],
    f: F,
) -> Result<Vec<f64>>
where
    F: Fn(f64, f64, &[f64]) -> f64,
{
    for input in inputs {
        if input.len() != node_positions.len() {
            return Err(Error::DimensionMismatch {
                expected: node_positions.len(),
                got: input.len(),
            });
        }
    }
    let mut out = vec![0.0; node_positions.len()];
    let mut states = vec![0.0; inputs.len()];
    for (m, (&xi, o)) in node_positions.iter().zip(out.iter_mut()).enumerate() {
        for (s, input) in states.iter_mut().zip(inputs) {
            *s = input[m];
        }
        let v = f(t, xi, &states);
        if !v.is_finite() {
            return Err(Error::NonFiniteAtNode { node: m, xi });
        }
        *o = v;
    }
    Ok(out)
}

/// Nemytskii (composition) operator: evaluates `f(t, xi, states...)` at every
/// collocation node on the synthesized field values, then re-analyzes. The
/// result is band-limited to the basis modes.
pub fn apply_pointwise<F>(t: f64, fields: &[&Field], f: F) -> Result<Field>
where
    F: Fn(f64, f64, &[f64]) -> f64,
{
    let first = fields.first().ok_or_else(|| {
        Error::InvalidParameter("apply_pointwise needs at least one field".into())
    })?;
    for field in &fields[1..] {
        if !first.shares_basis(field) {
            return Err(Error::BasisMismatch);
        }
    }
    let basis = first.basis();
    let nodal_inputs: Vec<&[f64]> = fields.iter().map(|fld| fld.nodal()).collect();
    let nodal = apply_at_nodes(t, basis.node_positions(), &nodal_inputs, f)?;
    Field::from_nodal(Arc::clone(basis), &nodal)
}

/// Spectrum of a Q-Wiener process: per-mode amplitudes `lambda_k` with decay
/// diagnostics `rho` and `beta`.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpectrum {
    lambda: Vec<f64>,
    rho: f64,
    beta: f64,
}

impl NoiseSpectrum {
    /// Requires `lambda_k >= 0`, `rho > 2` (possibly infinite), `beta > 0`
    /// and `beta (rho - 2) / rho < 1`.
    pub fn new(lambda: Vec<f64>, rho: f64, beta: f64) -> Result<Self> {
        if lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidSpectrum(
                "mode amplitudes must be finite and nonnegative".into(),
            ));
        }
        if !(rho > 2.0) {
            return Err(Error::InvalidSpectrum(format!(
                "rho must exceed 2, got {rho}"
            )));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidSpectrum(format!(
                "beta must be positive, got {beta}"
            )));
        }
        // beta (rho - 2) / rho, written to stay finite for rho = infinity.
        let decay_index = beta * (1.0 - 2.0 / rho);
        if !(decay_index < 1.0) {
            return Err(Error::InvalidSpectrum(format!(
                "beta (rho - 2) / rho = {decay_index} must be < 1"
            )));
        }
        Ok(Self { lambda, rho, beta })
    }

    pub fn zero() -> Self {
        Self {
            lambda: Vec::new(),
            rho: 4.0,
            beta: 0.5,
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Amplitude of mode `k`; zero beyond the tabulated range.
    pub fn mode_amplitude(&self, k: usize) -> f64 {
        self.lambda.get(k).copied().unwrap_or(0.0)
    }

    /// kappa = sum lambda_k^rho ||e_k||_inf^2 at the truncation level.
    pub fn kappa(&self, basis: &SpectralBasis) -> f64 {
        self.lambda
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                let sup = basis.mode_sup_norm(k.min(basis.mode_count() - 1));
                if l == 0.0 {
                    0.0
                } else {
                    l.powf(self.rho) * sup * sup
                }
            })
            .sum()
    }

    /// zeta = sum alpha_k^{-beta} ||e_k||_inf^2 at the truncation level.
    /// Zero eigenvalues (Neumann constant mode) are skipped.
    pub fn zeta(&self, basis: &SpectralBasis) -> f64 {
        (0..basis.mode_count())
            .filter(|&k| basis.eigenvalue(k) > 0.0)
            .map(|k| {
                let sup = basis.mode_sup_norm(k);
                basis.eigenvalue(k).powf(-self.beta) * sup * sup
            })
            .sum()
    }

    /// Checks the truncation-level summability diagnostics against a basis.
    pub fn validate_against(&self, basis: &SpectralBasis) -> Result<()> {
        if self.lambda.len() > basis.mode_count() {
            return Err(Error::InvalidSpectrum(format!(
                "spectrum has {} modes but basis only {}",
                self.lambda.len(),
                basis.mode_count()
            )));
        }
        let kappa = self.kappa(basis);
        let zeta = self.zeta(basis);
        if !kappa.is_finite() || !zeta.is_finite() {
            return Err(Error::InvalidSpectrum(format!(
                "summability diagnostics diverge: kappa = {kappa}, zeta = {zeta}"
            )));
        }
        Ok(())
    }
}
