//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use maxmargin::labelmodel::LabelModel;
use maxmargin::measures::{Activation, ActivationCoeffs};
use maxmargin::quadrature::CompositeSpec;
use serde::{Deserialize, Serialize};

use crate::error::{config, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    IsotropicCurve,
    MisspecifiedCurve,
    RfSurface,
    WideLimitCheck,
    SoftMarginCheck,
    CoordinateLawCheck,
    MarginBoundCompare,
}

impl ExperimentKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::IsotropicCurve => "isotropic_curve",
            ExperimentKind::MisspecifiedCurve => "misspecified_curve",
            ExperimentKind::RfSurface => "rf_surface",
            ExperimentKind::WideLimitCheck => "wide_limit_check",
            ExperimentKind::SoftMarginCheck => "soft_margin_check",
            ExperimentKind::CoordinateLawCheck => "coordinate_law_check",
            ExperimentKind::MarginBoundCompare => "margin_bound_compare",
        }
    }

    pub fn has_simulation(self) -> bool {
        !matches!(self, ExperimentKind::WideLimitCheck | ExperimentKind::MarginBoundCompare)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Relu,
    /// `0.5x₊ + a0 x₊² + a1 x₊/(1+x₊)` with `(γ1, γ*)` matched to ReLU.
    Sigma2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Logistic inverse temperatures; every grid point is run for each.
    pub betas: Vec<f64>,
    /// Latent-to-sample ratio of the misspecified model.
    pub psi0: Option<f64>,
    pub activation: ActivationName,
    /// Overrides of the activation's `γ1`; with both overrides set the
    /// simulations use noisy linear features.
    pub gamma1: Option<f64>,
    pub gamma_star: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            betas: vec![1.0],
            psi0: None,
            activation: ActivationName::Relu,
            gamma1: None,
            gamma_star: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub psi: Vec<f64>,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Feature dimension for the isotropic and misspecified experiments.
    pub p: usize,
    /// Latent dimension for the random-features experiments.
    pub d: usize,
    pub replicates: usize,
    /// Explicit seeds, one per replicate.
    pub seeds: Option<Vec<u64>>,
    /// Replicate `k` uses `base_seed + k` when `seeds` is absent.
    pub base_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            p: 800,
            d: 200,
            replicates: 20,
            seeds: None,
            base_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.replicates as u64).map(|k| self.base_seed + k).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    /// Gauss–Legendre points per panel of the Gaussian rule.
    pub quad_order: usize,
    /// Nodes of the Marchenko–Pastur rule.
    pub mp_order: usize,
    /// Draws from the limiting coordinate law.
    pub coordinate_samples: usize,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            quad_order: CompositeSpec::default().points_per_panel,
            mp_order: maxmargin::measures::DEFAULT_MP_ORDER,
            coordinate_samples: 200_000,
        }
    }
}

impl NumericsConfig {
    pub fn composite(&self) -> CompositeSpec {
        CompositeSpec {
            points_per_panel: self.quad_order,
            ..CompositeSpec::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub kappa: f64,
    pub err: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { kappa: 0.05, err: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Output directory; `--out` and `MAXMARGIN_OUT` take precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn models(&self) -> Result<Vec<(f64, LabelModel)>> {
        self.model
            .betas
            .iter()
            .map(|&b| Ok((b, LabelModel::logistic(b)?)))
            .collect()
    }

    pub fn activation(&self) -> Result<Activation> {
        Ok(match self.model.activation {
            ActivationName::Relu => Activation::Relu,
            ActivationName::Sigma2 => Activation::sigma2_matched_to_relu()?,
        })
    }

    /// Activation coefficients with the configured overrides applied.
    pub fn coeffs(&self) -> Result<ActivationCoeffs> {
        let mut c = self.activation()?.coeffs()?;
        if let Some(g) = self.model.gamma1 {
            c.gamma1 = g;
        }
        if let Some(g) = self.model.gamma_star {
            c.gamma_star = g;
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.experiment;
        if self.model.betas.is_empty() {
            return Err(config("model.betas is empty"));
        }
        if self.model.betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(config("model.betas must be positive and finite"));
        }
        let positive = |name: &str, v: &[f64]| -> Result<()> {
            if v.is_empty() {
                return Err(config(format!("grid.{name} is empty for {}", kind.tag())));
            }
            if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(config(format!("grid.{name} must be positive")));
            }
            Ok(())
        };
        match kind {
            ExperimentKind::IsotropicCurve
            | ExperimentKind::MisspecifiedCurve
            | ExperimentKind::CoordinateLawCheck
            | ExperimentKind::MarginBoundCompare => positive("psi", &self.grid.psi)?,
            ExperimentKind::RfSurface | ExperimentKind::WideLimitCheck => {
                positive("psi1", &self.grid.psi1)?;
                positive("psi2", &self.grid.psi2)?;
            }
            ExperimentKind::SoftMarginCheck => positive("psi2", &self.grid.psi2)?,
        }
        if kind == ExperimentKind::MisspecifiedCurve && !self.model.psi0.is_some_and(|v| v > 0.0) {
            return Err(config("misspecified_curve needs model.psi0 > 0"));
        }
        for g in [self.model.gamma1, self.model.gamma_star].into_iter().flatten() {
            if !(g > 0.0) {
                return Err(config("gamma overrides must be positive"));
            }
        }
        if self.sim.replicates == 0 {
            return Err(config("sim.replicates must be at least 1"));
        }
        if let Some(s) = &self.sim.seeds {
            if s.len() != self.sim.replicates {
                return Err(config(format!(
                    "sim.seeds has {} entries but sim.replicates = {}",
                    s.len(),
                    self.sim.replicates
                )));
            }
        }
        if self.numerics.quad_order == 0 || self.numerics.mp_order == 0 {
            return Err(config("quadrature orders must be positive"));
        }
        if kind.has_simulation() {
            for (n, p) in self.sample_sizes() {
                if n < 2 || p == 0 {
                    return Err(config(format!("grid point implies n = {n}, p = {p}; need n >= 2")));
                }
            }
        }
        Ok(())
    }

    /// `(n, p)` of every simulated grid point, in grid order.
    pub fn sample_sizes(&self) -> Vec<(usize, usize)> {
        let (p, d) = (self.sim.p as f64, self.sim.d as f64);
        let round = |x: f64| x.round() as usize;
        match self.experiment {
            ExperimentKind::IsotropicCurve | ExperimentKind::MisspecifiedCurve | ExperimentKind::CoordinateLawCheck => {
                self.grid.psi.iter().map(|psi| (round(p / psi), self.sim.p)).collect()
            }
            ExperimentKind::RfSurface => self
                .grid
                .psi1
                .iter()
                .flat_map(|a| self.grid.psi2.iter().map(move |b| (round(b * d), round(a * d))))
                .collect(),
            ExperimentKind::SoftMarginCheck => self.grid.psi2.iter().map(|b| (round(b * d), self.sim.d)).collect(),
            _ => Vec::new(),
        }
    }
}
