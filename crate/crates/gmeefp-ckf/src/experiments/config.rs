//! Experiment configuration: the benchmark scenario, the filter roster, and
//! optional parameter sweeps. Serialized as TOML.

use serde::{Deserialize, Serialize};

use crate::criterion::{GmeefpParams, ResidualCovSign, WeightingForm};
use crate::error::{Error, Result};
use crate::filter::preset;
use crate::state_space::NoiseSpec;

/// How per-run squared errors are folded into the reported MSD curve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    /// Average squared errors across runs at each step, then convert to dB.
    /// Avoids `-inf` poisoning from single perfect steps.
    #[default]
    SqThenDb,
    /// Convert each run to dB first, then average the dB values.
    DbThenMean,
}

/// Which recursion a configured filter runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// The robust update (parameters from preset plus overrides).
    #[default]
    Gmeefp,
    /// The plain cubature filter baseline.
    Ckf,
}

/// Field-by-field criterion-parameter overrides applied on top of a preset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub alpha1: Option<f64>,
    pub beta1: Option<f64>,
    pub alpha2: Option<f64>,
    pub beta2: Option<f64>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub max_iter: Option<usize>,
    pub weighting_form: Option<WeightingForm>,
    pub residual_cov_sign: Option<ResidualCovSign>,
}

impl ParamOverrides {
    pub fn apply(&self, mut p: GmeefpParams) -> GmeefpParams {
        if let Some(v) = self.alpha1 {
            p.alpha1 = v;
        }
        if let Some(v) = self.beta1 {
            p.beta1 = v;
        }
        if let Some(v) = self.alpha2 {
            p.alpha2 = v;
        }
        if let Some(v) = self.beta2 {
            p.beta2 = v;
        }
        if let Some(v) = self.lambda {
            p.lambda = v;
        }
        if let Some(v) = self.tau {
            p.tau = v;
        }
        if let Some(v) = self.max_iter {
            p.max_iter = v;
        }
        if let Some(v) = self.weighting_form {
            p.weighting_form = v;
        }
        if let Some(v) = self.residual_cov_sign {
            p.residual_cov_sign = v;
        }
        p
    }
}

/// One filter entry of the benchmark roster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Label used in outputs.
    pub name: String,
    #[serde(default)]
    pub algorithm: Algorithm,
    /// Preset the parameters start from; defaults to `gmeefp`.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub overrides: Option<ParamOverrides>,
}

/// A fully resolved filter ready to run.
#[derive(Clone, Debug)]
pub enum ResolvedFilter {
    PlainCkf,
    Gmeefp(GmeefpParams),
}

impl FilterConfig {
    pub fn resolve(&self) -> Result<ResolvedFilter> {
        match self.algorithm {
            Algorithm::Ckf => Ok(ResolvedFilter::PlainCkf),
            Algorithm::Gmeefp => {
                let base = match &self.preset {
                    Some(name) => preset(name)?,
                    None => GmeefpParams::default(),
                };
                let params = match &self.overrides {
                    Some(o) => o.apply(base),
                    None => base,
                };
                params
                    .validate()
                    .map_err(|e| Error::config(format!("filter `{}`: {e}", self.name)))?;
                Ok(ResolvedFilter::Gmeefp(params))
            }
        }
    }
}

/// Parameter grid for sweeps. Axes left empty inherit the base preset's
/// value; the grid is the cartesian product of the axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Preset the swept parameters are grafted onto.
    #[serde(default = "default_sweep_base")]
    pub base: String,
    #[serde(default)]
    pub alpha2: Vec<f64>,
    #[serde(default)]
    pub beta2: Vec<f64>,
    #[serde(default)]
    pub lambda: Vec<f64>,
}

fn default_sweep_base() -> String {
    "gmeefp".to_string()
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            base: default_sweep_base(),
            alpha2: Vec::new(),
            beta2: Vec::new(),
            lambda: Vec::new(),
        }
    }
}

impl SweepSpec {
    /// Concrete `(alpha2, beta2, lambda)` cells of the grid.
    pub fn cells(&self) -> Result<Vec<(f64, f64, f64)>> {
        let base = preset(&self.base)?;
        let alpha2 = if self.alpha2.is_empty() {
            vec![base.alpha2]
        } else {
            self.alpha2.clone()
        };
        let beta2 = if self.beta2.is_empty() {
            vec![base.beta2]
        } else {
            self.beta2.clone()
        };
        let lambda = if self.lambda.is_empty() {
            vec![base.lambda]
        } else {
            self.lambda.clone()
        };
        let mut out = Vec::with_capacity(alpha2.len() * beta2.len() * lambda.len());
        for &a in &alpha2 {
            for &b in &beta2 {
                for &l in &lambda {
                    out.push((a, b, l));
                }
            }
        }
        Ok(out)
    }
}

/// The whole benchmark description. The default reproduces the planar
/// vehicle-tracking scenario: constant-velocity motion with `ΔT = 0.5 s`,
/// range-bearing measurements, Gaussian process noise of variance 0.1, and
/// impulsive measurement noise `0.96·N(0,1) + 0.04·N(0,100)` per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dt: f64,
    pub q_var: f64,
    /// Measurement-noise variance the filters assume (the dominant mixture
    /// component), not necessarily what the simulator draws.
    pub r_nominal: f64,
    pub x0: Vec<f64>,
    pub steps: usize,
    pub runs: usize,
    pub master_seed: u64,
    /// Trailing steps averaged into the steady-state MSD.
    pub steady_window: usize,
    pub aggregate: Aggregate,
    pub process_noise: NoiseSpec,
    pub measurement_noise: NoiseSpec,
    pub filters: Vec<FilterConfig>,
    pub sweep: Option<SweepSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let preset_filter = |name: &str| FilterConfig {
            name: name.to_string(),
            algorithm: Algorithm::Gmeefp,
            preset: Some(name.to_string()),
            overrides: None,
        };
        ExperimentConfig {
            dt: 0.5,
            q_var: 0.1,
            r_nominal: 1.0,
            x0: vec![1.0, 1.0, 10.0, 20.0],
            steps: 200,
            runs: 200,
            master_seed: 2024,
            steady_window: 50,
            aggregate: Aggregate::default(),
            process_noise: NoiseSpec::gaussian(4, 0.1).expect("valid default"),
            measurement_noise: NoiseSpec::mixture(2, &[(0.96, 1.0), (0.04, 100.0)])
                .expect("valid default"),
            filters: vec![
                FilterConfig {
                    name: "ckf".to_string(),
                    algorithm: Algorithm::Ckf,
                    preset: None,
                    overrides: None,
                },
                preset_filter("mcc"),
                preset_filter("meef"),
                preset_filter("gmee"),
                preset_filter("gmeefp"),
            ],
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.q_var > 0.0) || !(self.r_nominal > 0.0) {
            return Err(Error::config("dt, q_var and r_nominal must be positive"));
        }
        if self.x0.len() != 4 {
            return Err(Error::config("x0 must have four components"));
        }
        if self.steps == 0 || self.runs == 0 {
            return Err(Error::config("steps and runs must be at least 1"));
        }
        if self.steady_window == 0 || self.steady_window > self.steps {
            return Err(Error::config("steady_window must lie in 1..=steps"));
        }
        self.process_noise
            .validate()
            .map_err(|e| Error::config(format!("process_noise: {e}")))?;
        self.measurement_noise
            .validate()
            .map_err(|e| Error::config(format!("measurement_noise: {e}")))?;
        if self.process_noise.dim != 4 || self.measurement_noise.dim != 2 {
            return Err(Error::config("noise dimensions must be 4 (process) and 2 (measurement)"));
        }
        if self.filters.is_empty() {
            return Err(Error::config("at least one filter is required"));
        }
        for f in &self.filters {
            f.resolve()
                .map_err(|e| Error::config(format!("filter `{}`: {e}", f.name)))?;
        }
        if let Some(sweep) = &self.sweep {
            sweep
                .cells()
                .map_err(|e| Error::config(format!("sweep: {e}")))?;
        }
        Ok(())
    }
}
