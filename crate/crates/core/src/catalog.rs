//! Built-in model catalog and scalar override knobs.
//!
//! Three reaction-diffusion setups cover the test surface:
//!
//! * `cubic-gl` — cubic bistable coupling: b1 = -x^3 + y, b2 = x - y^3,
//!   periodically modulated fast ellipticity, weak multiplicative-free noise.
//! * `linear` — fully linear coupling b1 = y, b2 = x - y with constant fast
//!   ellipticity, so mixing rates and averaged drifts have closed forms.
//! * `deterministic-cubic` — the cubic model with all noise removed; used by
//!   fine-step self-oracles.
//!
//! Overrides touch declared scalar knobs only; anything else is rejected.
//! The constructed spec is run through the assumption validator before being
//! handed out, so an override that breaks a hypothesis is rejected with the
//! validator's witness.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, NoiseCoeffSpec, OperatorSpec, ReactionSpec};
use crate::noise::{JumpSpec, MarkLaw};
use crate::spectral::{BoundaryKind, NoiseSpectrum, SpectralBasis};
use crate::validate::validate_assumptions;

/// Budget used for the construction-time validation pass.
const BUILD_VALIDATION_BUDGET: usize = 1000;
const BUILD_VALIDATION_SEED: u64 = 0xC0FFEE;

/// Scalar override knobs accepted by [`builtin_model`].
pub const KNOWN_KNOBS: &[&str] = &[
    "mode_count",
    "node_count",
    "alpha",
    "f1_amp",
    "f2_amp",
    "g1_amp",
    "g2_amp",
    "b1_scale",
    "b2_scale",
    "b1_y_coupling",
    "b2_dissipativity",
    "f1_power",
    "jump_rate",
    "lambda_decay",
    "gamma2_mod",
];

/// Validated scalar overrides for catalog models.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Overrides(pub BTreeMap<String, f64>);

impl Overrides {
    pub fn from_pairs(pairs: &[(&str, f64)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for &(k, v) in pairs {
            if !KNOWN_KNOBS.contains(&k) {
                return Err(Error::UnknownOverride(k.into()));
            }
            map.insert(k.to_string(), v);
        }
        Ok(Self(map))
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !KNOWN_KNOBS.contains(&key) {
            return Err(Error::UnknownOverride(key.into()));
        }
        self.0.insert(key.into(), value);
        Ok(())
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        self.0.get(key).copied().unwrap_or(default)
    }

    fn check_known(&self) -> Result<()> {
        for key in self.0.keys() {
            if !KNOWN_KNOBS.contains(&key.as_str()) {
                return Err(Error::UnknownOverride(key.clone()));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

struct Knobs {
    mode_count: usize,
    node_count: usize,
    alpha: f64,
    f1_amp: f64,
    f2_amp: f64,
    g1_amp: f64,
    g2_amp: f64,
    b1_scale: f64,
    b2_scale: f64,
    b1_y_coupling: f64,
    b2_dissipativity: f64,
    f1_power: f64,
    jump_rate: f64,
    lambda_decay: f64,
    gamma2_mod: f64,
}

fn resolve_knobs(name: &str, overrides: &Overrides) -> Result<Knobs> {
    overrides.check_known()?;
    let (noise_amp, jump_amp, gamma2_mod) = match name {
        "cubic-gl" | "linear" => (0.1, 0.05, if name == "linear" { 0.0 } else { 1.0 }),
        "deterministic-cubic" => (0.0, 0.0, 1.0),
        other => return Err(Error::UnknownModel(other.into())),
    };
    let mode_count = overrides.get("mode_count", 8.0);
    if mode_count < 1.0 || mode_count.fract() != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "mode_count must be a positive integer, got {mode_count}"
        )));
    }
    let mode_count = mode_count as usize;
    let node_count = overrides.get("node_count", (2 * mode_count + 1) as f64);
    if node_count < 1.0 || node_count.fract() != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "node_count must be a positive integer, got {node_count}"
        )));
    }
    Ok(Knobs {
        mode_count,
        node_count: node_count as usize,
        alpha: overrides.get("alpha", 1.0),
        f1_amp: overrides.get("f1_amp", noise_amp),
        f2_amp: overrides.get("f2_amp", noise_amp),
        g1_amp: overrides.get("g1_amp", jump_amp),
        g2_amp: overrides.get("g2_amp", jump_amp),
        b1_scale: overrides.get("b1_scale", 1.0),
        b2_scale: overrides.get("b2_scale", 1.0),
        b1_y_coupling: overrides.get("b1_y_coupling", 1.0),
        b2_dissipativity: overrides.get("b2_dissipativity", 1.0),
        f1_power: overrides.get("f1_power", 0.0),
        jump_rate: overrides.get(
            "jump_rate",
            if name == "deterministic-cubic" {
                0.0
            } else {
                1.0
            },
        ),
        lambda_decay: overrides.get("lambda_decay", 1.0),
        gamma2_mod: overrides.get("gamma2_mod", gamma2_mod),
    })
}

fn spectrum(knobs: &Knobs) -> Result<NoiseSpectrum> {
    let lambda: Vec<f64> = (1..=knobs.mode_count)
        .map(|k| (k as f64).powf(-knobs.lambda_decay))
        .collect();
    NoiseSpectrum::new(lambda, 4.0, 0.6)
}

fn noise_coeff(amp_f: f64, amp_g: f64, power: f64, growth_cap_m: f64) -> NoiseCoeffSpec {
    let f: crate::model::WienerFn = if power == 0.0 {
        Arc::new(move |_, _, _| amp_f)
    } else {
        Arc::new(move |_, _, x: f64| amp_f * x.abs().powf(power))
    };
    // Local Lipschitz bound of f on the sampled state ball |x| <= 10.
    let lipschitz = if power == 0.0 {
        0.0
    } else {
        amp_f * power * 10.0f64.powf(power - 1.0)
    };
    NoiseCoeffSpec {
        f,
        g: Arc::new(move |_, _, _, z| amp_g * z),
        lipschitz_bound: lipschitz,
        growth_cap_m,
        g_linear_in_z: true,
    }
}

/// Builds a catalog model without the construction-time validation pass.
/// Used by validator tests that need deliberately broken specs; everything
/// else should go through [`builtin_model`].
pub fn build_unchecked(name: &str, overrides: &Overrides) -> Result<ModelSpec> {
    let knobs = resolve_knobs(name, overrides)?;
    let basis = SpectralBasis::new(
        1.0,
        BoundaryKind::Dirichlet,
        knobs.mode_count,
        knobs.node_count,
    )?;

    let slow_operator = OperatorSpec {
        gamma: Arc::new(|_| 1.0),
        gamma_bounds: (1.0, 1.0),
        transport: None,
        period: Some(1.0),
    };
    let modulation = knobs.gamma2_mod;
    let fast_operator = OperatorSpec {
        gamma: Arc::new(move |t: f64| 2.0 + modulation * (2.0 * std::f64::consts::PI * t).sin()),
        gamma_bounds: (2.0 - modulation.abs(), 2.0 + modulation.abs()),
        transport: None,
        period: Some(1.0),
    };

    let (slow_reaction, fast_reaction) = match name {
        "cubic-gl" | "deterministic-cubic" => {
            let (s1, cy) = (knobs.b1_scale, knobs.b1_y_coupling);
            let (s2, diss) = (knobs.b2_scale, knobs.b2_dissipativity);
            (
                ReactionSpec {
                    b: Arc::new(move |_, _, x: f64, y: f64| s1 * (-x * x * x + cy * y)),
                    growth_exponent: 3.0,
                    lipschitz_exponent: 2.0,
                    dissipative_in_y: false,
                },
                ReactionSpec {
                    b: Arc::new(move |_, _, x: f64, y: f64| s2 * (x - diss * y * y * y)),
                    growth_exponent: 3.0,
                    lipschitz_exponent: 2.0,
                    dissipative_in_y: true,
                },
            )
        }
        "linear" => {
            let (s1, cy) = (knobs.b1_scale, knobs.b1_y_coupling);
            let s2 = knobs.b2_scale;
            (
                ReactionSpec {
                    b: Arc::new(move |_, _, _x: f64, y: f64| s1 * cy * y),
                    growth_exponent: 1.0,
                    lipschitz_exponent: 0.0,
                    dissipative_in_y: false,
                },
                ReactionSpec {
                    b: Arc::new(move |_, _, x: f64, y: f64| s2 * (x - y)),
                    growth_exponent: 1.0,
                    lipschitz_exponent: 0.0,
                    dissipative_in_y: true,
                },
            )
        }
        other => return Err(Error::UnknownModel(other.into())),
    };

    let growth_m = fast_reaction.growth_exponent;
    let jump_spec = JumpSpec::new(knobs.jump_rate, MarkLaw::Uniform { lo: -1.0, hi: 1.0 })?;

    Ok(ModelSpec {
        name: name.to_string(),
        basis,
        slow_operator,
        fast_operator,
        alpha: knobs.alpha,
        slow_noise: noise_coeff(
            knobs.f1_amp,
            knobs.g1_amp,
            knobs.f1_power,
            slow_reaction.growth_exponent,
        ),
        fast_noise: noise_coeff(knobs.f2_amp, knobs.g2_amp, 0.0, growth_m),
        slow_reaction,
        fast_reaction,
        wiener_slow: spectrum(&knobs)?,
        wiener_fast: spectrum(&knobs)?,
        jump_spec,
    })
}

/// Builds a named catalog model, applies the overrides, and validates the
/// result. An override that produces an invalid spec is rejected with the
/// validator's witness.
pub fn builtin_model(name: &str, overrides: &Overrides) -> Result<ModelSpec> {
    let model = build_unchecked(name, overrides)?;
    let report = validate_assumptions(&model, BUILD_VALIDATION_BUDGET, BUILD_VALIDATION_SEED);
    if let Some(summary) = report.first_failure_summary() {
        return Err(Error::InvalidModel(summary));
    }
    Ok(model)
}
