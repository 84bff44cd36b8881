//! Configuration file schema (TOML with nested blocks) and its resolution
//! into core types. Unknown keys anywhere are errors.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use slowfast_core::catalog::Overrides;
use slowfast_core::experiments::{DriftSource, ExperimentConfig, InitialData};
use slowfast_core::solver::SolverConfig;

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub model: ModelBlock,
    pub solver: SolverBlock,
    pub noise: NoiseBlock,
    pub experiment: ExperimentBlock,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBlock {
    pub name: String,
    pub overrides: BTreeMap<String, f64>,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            name: "cubic-gl".into(),
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub macro_step: f64,
    pub fast_step_target: f64,
    pub truncation_radius: f64,
    pub horizon: f64,
    pub record_stride: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            macro_step: d.macro_step,
            fast_step_target: d.fast_step_target,
            truncation_radius: d.truncation_radius,
            horizon: d.horizon,
            record_stride: d.record_stride,
        }
    }
}

/// Noise amplitudes and jump intensity; merged into the model overrides.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseBlock {
    pub f1_amp: Option<f64>,
    pub f2_amp: Option<f64>,
    pub g1_amp: Option<f64>,
    pub g2_amp: Option<f64>,
    pub jump_rate: Option<f64>,
    pub lambda_decay: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentBlock {
    pub paths: usize,
    pub eps_grid: Vec<f64>,
    /// Time-scale separation for single-run subcommands.
    pub epsilon: f64,
    pub thresholds: Vec<f64>,
    pub ensemble: usize,
    pub mixing_pairs: usize,
    pub t_avg_mixing_times: f64,
    pub burn_in_mixing_times: f64,
    pub cache_resolution: f64,
    pub kappa: f64,
    pub bootstrap_reps: usize,
    /// "estimated" or "closed_form_linear".
    pub drift: String,
    pub ap_times: Vec<f64>,
    pub x0: String,
    pub y0: String,
    /// Validator sample budget.
    pub budget: usize,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self {
            paths: d.paths,
            eps_grid: d.eps_grid,
            epsilon: 0.1,
            thresholds: d.thresholds,
            ensemble: d.ensemble,
            mixing_pairs: d.mixing_pairs,
            t_avg_mixing_times: d.t_avg_mixing_times,
            burn_in_mixing_times: d.burn_in_mixing_times,
            cache_resolution: d.cache_resolution,
            kappa: d.kappa,
            bootstrap_reps: d.bootstrap_reps,
            drift: "estimated".into(),
            ap_times: d.ap_times,
            x0: "e1:0.5".into(),
            y0: "zero".into(),
            budget: 10_000,
        }
    }
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let config: FileConfig = toml::from_str(&text)
            .with_context(|| format!("malformed config file {}", path.display()))?;
        Ok(config)
    }

    /// Canonical serialization used for the manifest digest.
    pub fn canonical_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Model overrides with the noise-block shorthands folded in. A knob
    /// set in both places is a conflict.
    pub fn resolved_overrides(&self) -> Result<Overrides> {
        let mut overrides = Overrides::default();
        for (key, value) in &self.model.overrides {
            overrides
                .set(key, *value)
                .with_context(|| format!("model.overrides.{key}"))?;
        }
        let noise_pairs = [
            ("f1_amp", self.noise.f1_amp),
            ("f2_amp", self.noise.f2_amp),
            ("g1_amp", self.noise.g1_amp),
            ("g2_amp", self.noise.g2_amp),
            ("jump_rate", self.noise.jump_rate),
            ("lambda_decay", self.noise.lambda_decay),
        ];
        for (key, value) in noise_pairs {
            if let Some(v) = value {
                if self.model.overrides.contains_key(key) {
                    bail!("knob {key} set in both [model.overrides] and [noise]");
                }
                overrides.set(key, v)?;
            }
        }
        Ok(overrides)
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            macro_step: self.solver.macro_step,
            fast_step_target: self.solver.fast_step_target,
            truncation_radius: self.solver.truncation_radius,
            horizon: self.solver.horizon,
            record_stride: self.solver.record_stride,
        }
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let drift = match self.experiment.drift.as_str() {
            "estimated" => DriftSource::Estimated,
            "closed_form_linear" => DriftSource::ClosedFormLinear,
            other => bail!("unknown drift source \"{other}\" (expected \"estimated\" or \"closed_form_linear\")"),
        };
        Ok(ExperimentConfig {
            paths: self.experiment.paths,
            eps_grid: self.experiment.eps_grid.clone(),
            horizon: self.solver.horizon,
            macro_step: self.solver.macro_step,
            fast_step_target: self.solver.fast_step_target,
            truncation_radius: self.solver.truncation_radius,
            x0: parse_initial_data(&self.experiment.x0)?,
            y0: parse_initial_data(&self.experiment.y0)?,
            thresholds: self.experiment.thresholds.clone(),
            ensemble: self.experiment.ensemble,
            mixing_pairs: self.experiment.mixing_pairs,
            t_avg_mixing_times: self.experiment.t_avg_mixing_times,
            burn_in_mixing_times: self.experiment.burn_in_mixing_times,
            cache_resolution: self.experiment.cache_resolution,
            kappa: self.experiment.kappa,
            bootstrap_reps: self.experiment.bootstrap_reps,
            drift,
            ap_times: self.experiment.ap_times.clone(),
        })
    }
}

/// Initial-data strings: "zero", "eK" (unit mode K, one-based),
/// "eK:amplitude", or "coeffs:c1,c2,...".
pub fn parse_initial_data(spec: &str) -> Result<InitialData> {
    let spec = spec.trim();
    if spec == "zero" {
        return Ok(InitialData::Zero);
    }
    if let Some(rest) = spec.strip_prefix("coeffs:") {
        let values: Vec<f64> = rest
            .split(',')
            .map(|tok| tok.trim().parse::<f64>().context("bad coefficient"))
            .collect::<Result<_>>()?;
        return Ok(InitialData::Coefficients { values });
    }
    if let Some(rest) = spec.strip_prefix('e') {
        let (mode, amp) = match rest.split_once(':') {
            Some((m, a)) => (m, a.parse::<f64>().context("bad amplitude")?),
            None => (rest, 1.0),
        };
        let index: usize = mode.parse().context("bad mode index")?;
        if index == 0 {
            bail!("mode indices are one-based; use e1 for the first mode");
        }
        return Ok(InitialData::Mode {
            index: index - 1,
            amplitude: amp,
        });
    }
    bail!("cannot parse initial data \"{spec}\" (expected zero | eK[:amp] | coeffs:...)")
}
