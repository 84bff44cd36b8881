//! Numeric falsification of the model hypotheses: growth bounds, one-sided
//! increment estimates, local Lipschitz continuity, dissipativity of the
//! fast reaction, noise-coefficient regularity, periodicity, and the
//! sufficient mixing margin.
//!
//! The checks sample coefficient functions quasi-randomly over configured
//! ranges and can only falsify: a "pass" means no witness was found at the
//! given budget. Growth inequalities with a free constant are checked by
//! fitting the constant on an inner ball and testing the outer region
//! against a fixed multiple of it, which catches exponent mismatches (the
//! standard failure mode) without needing the unknown constant.

use serde::Serialize;

use crate::model::ModelSpec;

/// Sampling half-width for the state variables.
const STATE_RANGE: f64 = 10.0;
/// Outer/inner fitted-constant ratio treated as a growth violation.
const GROWTH_MARGIN: f64 = 4.0;

/// Concrete point at which an inequality failed, with both sides.
#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub t: f64,
    pub xi: f64,
    pub x: f64,
    pub y: f64,
    /// Second sample point for pairwise checks.
    pub x2: Option<f64>,
    pub y2: Option<f64>,
    pub z: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub inequality: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Unchecked,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    /// Fitted constants by name (growth constants, Lipschitz constants,
    /// dissipativity margin, ...).
    pub fitted: Vec<(String, f64)>,
    pub witness: Option<Witness>,
}

impl CheckResult {
    fn pass(name: &str, fitted: Vec<(String, f64)>) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::Pass,
            fitted,
            witness: None,
        }
    }

    fn fail(name: &str, fitted: Vec<(String, f64)>, witness: Witness) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::Fail,
            fitted,
            witness: Some(witness),
        }
    }

    fn unchecked(name: &str, reason: &str) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::Unchecked,
            fitted: vec![],
            witness: Some(Witness {
                t: 0.0,
                xi: 0.0,
                x: 0.0,
                y: 0.0,
                x2: None,
                y2: None,
                z: None,
                lhs: 0.0,
                rhs: 0.0,
                inequality: reason.into(),
            }),
        }
    }

    pub fn fitted_value(&self, key: &str) -> Option<f64> {
        self.fitted
            .iter()
            .find(|(name, _)| name == key)
            .map(|&(_, v)| v)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<CheckResult>,
    pub sample_budget: usize,
    pub seed: u64,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One-line summary of the first failure, for error messages.
    pub fn first_failure_summary(&self) -> Option<String> {
        self.failures().next().map(|c| {
            let w = c.witness.as_ref();
            match w {
                Some(w) => format!(
                    "{}: {} (lhs = {:.6e}, rhs = {:.6e} at t = {:.3}, xi = {:.3}, x = {:.3}, y = {:.3})",
                    c.name, w.inequality, w.lhs, w.rhs, w.t, w.xi, w.x, w.y
                ),
                None => c.name.clone(),
            }
        })
    }
}

/// Additive-recurrence quasi-random sequence (generalized golden ratio),
/// offset by the seed. Well spread in up to 8 dimensions and trivially
/// reproducible.
struct QuasiSampler {
    alphas: Vec<f64>,
    state: Vec<f64>,
}

impl QuasiSampler {
    fn new(dims: usize, seed: u64) -> Self {
        // Root of x^{d+1} = x + 1 by fixed-point iteration.
        let d = dims as f64;
        let mut phi = 1.5f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (d + 1.0));
        }
        let alphas: Vec<f64> = (1..=dims)
            .map(|k| (1.0 / phi.powi(k as i32)) % 1.0)
            .collect();
        let mut state = vec![0.0; dims];
        let mut s = seed;
        for slot in state.iter_mut() {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            *slot = (s >> 11) as f64 / (1u64 << 53) as f64;
        }
        Self { alphas, state }
    }

    /// Next point in [0, 1)^dims.
    fn next_point(&mut self) -> Vec<f64> {
        for (s, a) in self.state.iter_mut().zip(&self.alphas) {
            *s = (*s + a) % 1.0;
        }
        self.state.clone()
    }
}

#[derive(Clone, Copy)]
struct Sample {
    t: f64,
    xi: f64,
    x: f64,
    y: f64,
    h1: f64,
    h2: f64,
    z: f64,
}

fn draw_samples(model: &ModelSpec, budget: usize, seed: u64) -> Vec<Sample> {
    let mut sampler = QuasiSampler::new(7, seed);
    let t_span = 10.0 * model.period().unwrap_or(1.0);
    let length = model.basis.domain_length();
    let mut out = Vec::with_capacity(budget);
    let mut mark_rng = crate::noise::SeedManifest::new(seed).stream(
        0,
        crate::noise::StreamTag::new(crate::noise::StreamKind::Validation),
    );
    for _ in 0..budget {
        let p = sampler.next_point();
        out.push(Sample {
            t: p[0] * t_span,
            xi: p[1] * length,
            x: (2.0 * p[2] - 1.0) * STATE_RANGE,
            y: (2.0 * p[3] - 1.0) * STATE_RANGE,
            h1: (2.0 * p[4] - 1.0) * 0.5 * STATE_RANGE,
            h2: (2.0 * p[5] - 1.0) * 0.5 * STATE_RANGE,
            z: model.jump_spec.sample_mark(&mut mark_rng),
        });
    }
    out
}

/// Growth check with a free constant: fit the constant on the inner state
/// ball, then require the outer region to stay within `GROWTH_MARGIN` times
/// the fitted value. `lhs` and `cap` see the full sample.
fn growth_check<L, C>(
    name: &str,
    samples: &[Sample],
    inequality: &str,
    lhs: L,
    cap: C,
) -> CheckResult
where
    L: Fn(&Sample) -> f64,
    C: Fn(&Sample) -> f64,
{
    let inner_radius = 0.5 * STATE_RANGE;
    let mut c_inner = 0.0f64;
    let mut c_outer = 0.0f64;
    let mut worst: Option<&Sample> = None;
    for s in samples {
        let value = lhs(s);
        let bound = cap(s).max(1e-300);
        if !value.is_finite() {
            return CheckResult::fail(name, vec![], point_witness(s, f64::NAN, bound, inequality));
        }
        let ratio = value / bound;
        if s.x.abs() <= inner_radius && s.y.abs() <= inner_radius {
            c_inner = c_inner.max(ratio);
        } else if ratio > c_outer {
            c_outer = ratio;
            worst = Some(s);
        }
    }
    let fitted = vec![("c".to_string(), c_inner.max(c_outer))];
    let threshold = GROWTH_MARGIN * c_inner.max(1e-12);
    match worst {
        Some(s) if c_outer > threshold => {
            let mut w = point_witness(s, lhs(s), threshold * cap(s), inequality);
            w.inequality = format!(
                "{inequality} (outer/inner fitted ratio {:.2} exceeds {GROWTH_MARGIN})",
                c_outer / c_inner.max(1e-12)
            );
            CheckResult::fail(name, fitted, w)
        }
        _ => CheckResult::pass(name, fitted),
    }
}

fn point_witness(s: &Sample, lhs: f64, rhs: f64, inequality: &str) -> Witness {
    Witness {
        t: s.t,
        xi: s.xi,
        x: s.x,
        y: s.y,
        x2: None,
        y2: None,
        z: Some(s.z),
        lhs,
        rhs,
        inequality: inequality.into(),
    }
}

/// Runs every check against the model. Failures are data, not errors.
pub fn validate_assumptions(
    model: &ModelSpec,
    sample_budget: usize,
    seed: u64,
) -> AssumptionReport {
    let budget = sample_budget.max(1000);
    let samples = draw_samples(model, budget, seed);
    let mut checks = Vec::new();

    // (A1)(a): gamma within declared bounds on a dense time grid.
    for (label, op) in [
        ("A1a-slow", &model.slow_operator),
        ("A1a-fast", &model.fast_operator),
    ] {
        let t_span = 10.0 * model.period().unwrap_or(1.0);
        let (lo, hi) = op.gamma_bounds;
        let mut observed_min = f64::INFINITY;
        let mut observed_max = f64::NEG_INFINITY;
        let mut witness = None;
        for i in 0..=4096 {
            let t = i as f64 / 4096.0 * t_span;
            let g = (op.gamma)(t);
            observed_min = observed_min.min(g);
            observed_max = observed_max.max(g);
            let tol = 1e-9 * (1.0 + hi.abs());
            if !(g >= lo - tol && g <= hi + tol) || !g.is_finite() {
                witness = Some(Witness {
                    t,
                    xi: 0.0,
                    x: 0.0,
                    y: 0.0,
                    x2: None,
                    y2: None,
                    z: None,
                    lhs: g,
                    rhs: hi,
                    inequality: format!(
                        "gamma_0 <= gamma(t) <= gamma_bar with bounds ({lo}, {hi})"
                    ),
                });
                break;
            }
        }
        let fitted = vec![
            ("gamma_min".to_string(), observed_min),
            ("gamma_max".to_string(), observed_max),
        ];
        checks.push(match witness {
            Some(w) => CheckResult::fail(label, fitted, w),
            None => CheckResult::pass(label, fitted),
        });
    }

    // (A1)(b): transport coefficient bounded on samples.
    for (label, op) in [
        ("A1b-slow", &model.slow_operator),
        ("A1b-fast", &model.fast_operator),
    ] {
        match &op.transport {
            None => checks.push(CheckResult::pass(label, vec![("sup_l".to_string(), 0.0)])),
            Some(l) => {
                let mut sup = 0.0f64;
                let mut witness = None;
                for s in &samples {
                    let v = l(s.t, s.xi);
                    if !v.is_finite() {
                        witness = Some(point_witness(s, v, f64::INFINITY, "l(t, xi) bounded"));
                        break;
                    }
                    sup = sup.max(v.abs());
                }
                let fitted = vec![("sup_l".to_string(), sup)];
                checks.push(match witness {
                    Some(w) => CheckResult::fail(label, fitted, w),
                    None => CheckResult::pass(label, fitted),
                });
            }
        }
    }

    // (A2): spectrum summability diagnostics at the truncation level.
    for (label, spectrum) in [
        ("A2-slow", &model.wiener_slow),
        ("A2-fast", &model.wiener_fast),
    ] {
        let kappa = spectrum.kappa(&model.basis);
        let zeta = spectrum.zeta(&model.basis);
        let fitted = vec![("kappa".to_string(), kappa), ("zeta".to_string(), zeta)];
        checks.push(match spectrum.validate_against(&model.basis) {
            Ok(()) => CheckResult::pass(label, fitted),
            Err(e) => CheckResult::fail(
                label,
                fitted,
                Witness {
                    t: 0.0,
                    xi: 0.0,
                    x: 0.0,
                    y: 0.0,
                    x2: None,
                    y2: None,
                    z: None,
                    lhs: kappa,
                    rhs: zeta,
                    inequality: e.to_string(),
                },
            ),
        });
    }

    // (A3)(a): slow-reaction growth |b1| <= c (1 + |x|^m1 + |y|).
    let b1 = model.slow_reaction.b.clone();
    let m1 = model.slow_reaction.growth_exponent;
    checks.push(growth_check(
        "A3a",
        &samples,
        "|b1(t,xi,x,y)| <= c (1 + |x|^m1 + |y|)",
        |s| b1(s.t, s.xi, s.x, s.y).abs(),
        |s| 1.0 + s.x.abs().powf(m1) + s.y.abs(),
    ));

    // (A3)(b): one-sided increment bound in the slow variable.
    checks.push(growth_check(
        "A3b",
        &samples,
        "(b1(t,xi,x+h1,y+h2) - b1(t,xi,x,y)) h1 <= c |h1| (1 + |(x,y)| + |h|)",
        |s| (b1(s.t, s.xi, s.x + s.h1, s.y + s.h2) - b1(s.t, s.xi, s.x, s.y)) * s.h1,
        |s| s.h1.abs() * (1.0 + s.x.hypot(s.y) + s.h1.hypot(s.h2)),
    ));

    // (A3)(c): local Lipschitz with exponent theta.
    let theta = model.slow_reaction.lipschitz_exponent;
    checks.push(growth_check(
        "A3c",
        &samples,
        "|b1(sigma1) - b1(sigma2)| <= c (1 + |sigma1|^theta + |sigma2|^theta) |sigma1 - sigma2|",
        |s| (b1(s.t, s.xi, s.x, s.y) - b1(s.t, s.xi, s.x + s.h1, s.y + s.h2)).abs(),
        |s| {
            let n1 = s.x.hypot(s.y);
            let n2 = (s.x + s.h1).hypot(s.y + s.h2);
            (1.0 + n1.powf(theta) + n2.powf(theta)) * s.h1.hypot(s.h2).max(1e-12)
        },
    ));

    // (A4)(a): fast-reaction growth |b2| <= c (1 + |x| + |y|^m2).
    let b2 = model.fast_reaction.b.clone();
    let m2 = model.fast_reaction.growth_exponent;
    checks.push(growth_check(
        "A4a",
        &samples,
        "|b2(t,xi,x,y)| <= c (1 + |x| + |y|^m2)",
        |s| b2(s.t, s.xi, s.x, s.y).abs(),
        |s| 1.0 + s.x.abs() + s.y.abs().powf(m2),
    ));

    // (A4)(b): one-sided increment bound in the fast variable.
    checks.push(growth_check(
        "A4b",
        &samples,
        "(b2(t,xi,x+h1,y+h2) - b2(t,xi,x,y)) h2 <= c |h2| (1 + |(x,y)| + |h|)",
        |s| (b2(s.t, s.xi, s.x + s.h1, s.y + s.h2) - b2(s.t, s.xi, s.x, s.y)) * s.h2,
        |s| s.h2.abs() * (1.0 + s.x.hypot(s.y) + s.h1.hypot(s.h2)),
    ));

    // (A4)(c): local Lipschitz of b2 on the sample ball (fitted only).
    {
        let mut quotient = 0.0f64;
        for s in &samples {
            let d = (b2(s.t, s.xi, s.x, s.y) - b2(s.t, s.xi, s.x + s.h1, s.y + s.h2)).abs();
            let dist = s.h1.hypot(s.h2).max(1e-12);
            quotient = quotient.max(d / dist);
        }
        checks.push(if quotient.is_finite() {
            CheckResult::pass("A4c", vec![("local_lipschitz".to_string(), quotient)])
        } else {
            CheckResult::fail(
                "A4c",
                vec![],
                point_witness(
                    &samples[0],
                    quotient,
                    f64::INFINITY,
                    "local Lipschitz quotient finite",
                ),
            )
        });
    }

    // (A4)(d): dissipativity sign condition and the one-sided constant in y.
    {
        // One-sided quotient (b2(y1) - b2(y2))(y1 - y2)/|y1 - y2|^2; its
        // negative is the dissipativity margin, and it feeds the mixing
        // condition below even for non-dissipative reactions.
        let mut one_sided = f64::NEG_INFINITY;
        let mut witness = None;
        for s in &samples {
            let y1 = s.y;
            let y2 = s.y + s.h2;
            if (y1 - y2).abs() < 1e-9 {
                continue;
            }
            let num = (b2(s.t, s.xi, s.x, y1) - b2(s.t, s.xi, s.x, y2)) * (y1 - y2);
            let quotient = num / ((y1 - y2) * (y1 - y2));
            one_sided = one_sided.max(quotient);
            if model.fast_reaction.dissipative_in_y && num > 1e-10 && witness.is_none() {
                witness = Some(Witness {
                    t: s.t,
                    xi: s.xi,
                    x: s.x,
                    y: y1,
                    x2: None,
                    y2: Some(y2),
                    z: None,
                    lhs: num,
                    rhs: 0.0,
                    inequality: "(b2(t,xi,x,y1) - b2(t,xi,x,y2)) (y1 - y2) <= 0".into(),
                });
            }
        }
        let fitted = vec![
            ("one_sided_y".to_string(), one_sided),
            ("dissipativity_margin".to_string(), -one_sided),
        ];
        checks.push(if !model.fast_reaction.dissipative_in_y {
            let mut c = CheckResult::pass("A4d", fitted);
            c.status = CheckStatus::Unchecked;
            c
        } else {
            match witness {
                Some(w) => CheckResult::fail("A4d", fitted, w),
                None => CheckResult::pass("A4d", fitted),
            }
        });
    }

    // (A5): Lipschitz continuity of the noise coefficients in the state.
    for (label, coeff) in [
        ("A5-slow", &model.slow_noise),
        ("A5-fast", &model.fast_noise),
    ] {
        let bound = coeff.lipschitz_bound;
        let f = coeff.f.clone();
        let g = coeff.g.clone();
        let jump = &model.jump_spec;
        let mut max_quotient = 0.0f64;
        let mut witness = None;
        for s in &samples {
            if s.h1.abs() < 1e-9 {
                continue;
            }
            let x2 = s.x + s.h1;
            let qf = (f(s.t, s.xi, s.x) - f(s.t, s.xi, x2)).abs() / s.h1.abs();
            let mut q = qf;
            for p in [1.0, 2.0, 4.0] {
                let integral = jump
                    .nu_integral(|z| (g(s.t, s.xi, s.x, z) - g(s.t, s.xi, x2, z)).abs().powf(p));
                q = q.max(integral.powf(1.0 / p) / s.h1.abs());
            }
            max_quotient = max_quotient.max(q);
            if q > bound * (1.0 + 1e-9) + 1e-12 && witness.is_none() {
                witness = Some(Witness {
                    t: s.t,
                    xi: s.xi,
                    x: s.x,
                    y: s.y,
                    x2: Some(x2),
                    y2: None,
                    z: Some(s.z),
                    lhs: q,
                    rhs: bound,
                    inequality: "Lipschitz quotient of f (and nu-integrals of g) <= declared bound"
                        .into(),
                });
            }
        }
        let fitted = vec![("lipschitz".to_string(), max_quotient)];
        checks.push(match witness {
            Some(w) => CheckResult::fail(label, fitted, w),
            None => CheckResult::pass(label, fitted),
        });
    }

    // (A6): growth cap |f|^p + int |g|^p nu <= c (1 + |x|^{p/m}) for p in {1,2,4}.
    for (label, coeff) in [
        ("A6-slow", &model.slow_noise),
        ("A6-fast", &model.fast_noise),
    ] {
        let f = coeff.f.clone();
        let g = coeff.g.clone();
        let m = coeff.growth_cap_m;
        let jump = &model.jump_spec;
        let mut result = None;
        for p in [1.0, 2.0, 4.0] {
            let check = growth_check(
                label,
                &samples,
                &format!("|f|^p + int |g|^p nu <= c (1 + |x|^(p/m)) at p = {p}"),
                |s| {
                    f(s.t, s.xi, s.x).abs().powf(p)
                        + jump.nu_integral(|z| g(s.t, s.xi, s.x, z).abs().powf(p))
                },
                |s| 1.0 + s.x.abs().powf(p / m),
            );
            if check.status == CheckStatus::Fail {
                result = Some(check);
                break;
            }
            result = Some(check);
        }
        checks.push(result.expect("at least one p"));
    }

    // (A7)(a): periodicity of the fast gamma and transport.
    match model.fast_operator.period {
        None => checks.push(CheckResult::unchecked("A7a", "no period declared")),
        Some(period) => {
            let gamma = model.fast_operator.gamma.clone();
            let mut defect = 0.0f64;
            let mut witness = None;
            for i in 0..=512 {
                let t = i as f64 / 512.0 * 3.0 * period;
                let d = (gamma(t + period) - gamma(t)).abs();
                defect = defect.max(d);
                if d > 1e-9 && witness.is_none() {
                    witness = Some(Witness {
                        t,
                        xi: 0.0,
                        x: 0.0,
                        y: 0.0,
                        x2: None,
                        y2: None,
                        z: None,
                        lhs: d,
                        rhs: 1e-9,
                        inequality: format!("gamma_2(t + {period}) = gamma_2(t)"),
                    });
                }
            }
            if witness.is_none() {
                if let Some(l) = &model.fast_operator.transport {
                    for s in &samples {
                        let d = (l(s.t + period, s.xi) - l(s.t, s.xi)).abs();
                        defect = defect.max(d);
                        if d > 1e-9 {
                            witness = Some(point_witness(
                                s,
                                d,
                                1e-9,
                                "l_2 periodic with declared period",
                            ));
                            break;
                        }
                    }
                }
            }
            let fitted = vec![("period_defect".to_string(), defect)];
            checks.push(match witness {
                Some(w) => CheckResult::fail("A7a", fitted, w),
                None => CheckResult::pass("A7a", fitted),
            });
        }
    }

    // (A7)(b): uniform almost periodicity of b2, f2, g2 on bounded balls,
    // validated in the periodic special case by an almost-period search over
    // one period grid. Aperiodic models are accepted but marked unchecked.
    match model.fast_operator.period {
        None => checks.push(CheckResult::unchecked(
            "A7b",
            "no period declared; almost periodicity not validated",
        )),
        Some(period) => {
            let f2 = model.fast_noise.f.clone();
            let g2 = model.fast_noise.g.clone();
            let mut best_defect = f64::INFINITY;
            for j in 1..=16 {
                let tau = j as f64 / 16.0 * period;
                let mut defect = 0.0f64;
                for s in samples.iter().take(budget.min(2000)) {
                    defect =
                        defect.max((b2(s.t + tau, s.xi, s.x, s.y) - b2(s.t, s.xi, s.x, s.y)).abs());
                    defect = defect.max((f2(s.t + tau, s.xi, s.y) - f2(s.t, s.xi, s.y)).abs());
                    defect =
                        defect.max((g2(s.t + tau, s.xi, s.y, s.z) - g2(s.t, s.xi, s.y, s.z)).abs());
                }
                best_defect = best_defect.min(defect);
            }
            let fitted = vec![("ap_defect".to_string(), best_defect)];
            checks.push(if best_defect <= 1e-9 {
                CheckResult::pass("A7b", fitted)
            } else {
                CheckResult::fail(
                    "A7b",
                    fitted,
                    Witness {
                        t: 0.0,
                        xi: 0.0,
                        x: 0.0,
                        y: 0.0,
                        x2: None,
                        y2: None,
                        z: None,
                        lhs: best_defect,
                        rhs: 1e-9,
                        inequality: "no almost-period found on the declared period grid".into(),
                    },
                )
            });
        }
    }

    // Sufficient mixing condition: alpha + gamma_0 alpha_1 must exceed the
    // sampled one-sided Lipschitz constant of b2 in y.
    {
        let one_sided = checks
            .iter()
            .find(|c| c.name == "A4d")
            .and_then(|c| c.fitted_value("one_sided_y"))
            .unwrap_or(f64::INFINITY);
        let decay = model.alpha + model.fast_operator.gamma_bounds.0 * model.basis.eigenvalue(0);
        let margin = decay - one_sided;
        let fitted = vec![
            ("fast_decay".to_string(), decay),
            ("mixing_margin".to_string(), margin),
        ];
        checks.push(if margin > 0.0 {
            CheckResult::pass("mixing-margin", fitted)
        } else {
            CheckResult::fail(
                "mixing-margin",
                fitted,
                Witness {
                    t: 0.0,
                    xi: 0.0,
                    x: 0.0,
                    y: 0.0,
                    x2: None,
                    y2: None,
                    z: None,
                    lhs: one_sided,
                    rhs: decay,
                    inequality: "alpha + gamma_0 alpha_1 > one-sided Lipschitz constant of b2 in y"
                        .into(),
                },
            )
        });
    }

    AssumptionReport {
        checks,
        sample_budget: budget,
        seed,
    }
}
