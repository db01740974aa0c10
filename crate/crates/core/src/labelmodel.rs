//! Conditional label laws `P(Y = +1 | G = g)` and the classification error
//! function `Q(r, ν)`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::quadrature::{gaussian_composite, CompositeSpec, QuadratureRule};

/// How the label depends on the (standardized) signal coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkKind {
    /// `f(x) = 1 / (1 + e^{-βx})`.
    Logistic { beta: f64 },
    /// `f ≡ 1/2`.
    PureNoise,
    /// Labels driven by a signal of which only a fraction `γ` of the variance
    /// is observed: `f(x) = E f_base(√γ x + √(1-γ) G')`.
    Misspecified { base: Box<LabelModel>, gamma: f64 },
    /// Effective link of the Gaussian-equivalent random-features model:
    /// `f(x) = E f_base(√(1-τ²) x + τ G')`.
    RfEffective { base: Box<LabelModel>, tau: f64 },
}

/// A label model: link kind plus signal strength `ρ`; `flip(g) = f(ρ g)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    #[serde(flatten)]
    kind: LinkKind,
    #[serde(default = "unit_rho")]
    rho: f64,
}

fn unit_rho() -> f64 {
    1.0
}

/// The shared rule used for Gaussian mixtures inside links and for
/// [`LabelModel::q_error`].
pub fn default_gaussian_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| gaussian_composite(CompositeSpec::default()).expect("default layout is valid"))
}

impl LabelModel {
    pub fn logistic(beta: f64) -> Result<Self> {
        Self::new(LinkKind::Logistic { beta }, 1.0)
    }

    pub fn pure_noise() -> Self {
        Self {
            kind: LinkKind::PureNoise,
            rho: 1.0,
        }
    }

    pub fn misspecified(base: LabelModel, gamma: f64) -> Result<Self> {
        Self::new(
            LinkKind::Misspecified {
                base: Box::new(base),
                gamma,
            },
            1.0,
        )
    }

    pub fn rf_effective(base: LabelModel, tau: f64) -> Result<Self> {
        Self::new(
            LinkKind::RfEffective {
                base: Box::new(base),
                tau,
            },
            1.0,
        )
    }

    pub fn new(kind: LinkKind, rho: f64) -> Result<Self> {
        let model = Self { kind, rho };
        model.validate()?;
        Ok(model)
    }

    pub fn with_rho(self, rho: f64) -> Result<Self> {
        Self::new(self.kind, rho)
    }

    pub fn kind(&self) -> &LinkKind {
        &self.kind
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Checks parameter ranges. Every accepted model has `flip(g) ∈ (0, 1)`
    /// for all finite `g`, which implies the non-degeneracy condition on `YG`.
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::invalid(format!("rho must be finite and >= 0, got {}", self.rho)));
        }
        match &self.kind {
            LinkKind::Logistic { beta } => {
                if !(beta.is_finite() && *beta > 0.0) {
                    return Err(Error::invalid(format!(
                        "logistic beta must be finite and > 0, got {beta}"
                    )));
                }
            }
            LinkKind::PureNoise => {}
            LinkKind::Misspecified { base, gamma } => {
                if !(0.0..=1.0).contains(gamma) {
                    return Err(Error::invalid(format!("gamma must lie in [0, 1], got {gamma}")));
                }
                base.validate()?;
            }
            LinkKind::RfEffective { base, tau } => {
                if !(0.0..=1.0).contains(tau) {
                    return Err(Error::invalid(format!("tau must lie in [0, 1], got {tau}")));
                }
                base.validate()?;
            }
        }
        Ok(())
    }

    /// True when `flip(-g) = 1 - flip(g)` holds by construction.
    pub fn is_sign_symmetric(&self) -> bool {
        match &self.kind {
            LinkKind::Logistic { .. } | LinkKind::PureNoise => true,
            LinkKind::Misspecified { base, .. } | LinkKind::RfEffective { base, .. } => {
                base.is_sign_symmetric()
            }
        }
    }

    /// `P(Y = +1 | G = g)`.
    pub fn flip_probability(&self, g: f64) -> f64 {
        self.flip_with(default_gaussian_rule(), g)
    }

    /// As [`flip_probability`](Self::flip_probability) with an explicit rule
    /// for the inner Gaussian mixtures.
    pub fn flip_with(&self, rule: &QuadratureRule, g: f64) -> f64 {
        let x = self.rho * g;
        match &self.kind {
            LinkKind::Logistic { beta } => logistic(beta * x),
            LinkKind::PureNoise => 0.5,
            LinkKind::Misspecified { base, gamma } => {
                mixture(base, rule, gamma.sqrt() * x, (1.0 - gamma).max(0.0).sqrt())
            }
            LinkKind::RfEffective { base, tau } => {
                mixture(base, rule, (1.0 - tau * tau).max(0.0).sqrt() * x, *tau)
            }
        }
    }

    /// `flip` evaluated at every node of `rule`.
    pub fn tabulate(&self, rule: &QuadratureRule) -> Vec<f64> {
        rule.nodes().iter().map(|&g| self.flip_with(rule, g)).collect()
    }

    /// `Q(ν) = P(ν Y G + √(1-ν²) Z ≤ 0)` with `Z ⊥ (Y, G)`.
    pub fn q_error(&self, nu: f64) -> Result<f64> {
        let rule = default_gaussian_rule();
        let flips = self.tabulate(rule);
        q_error_tabulated(rule, &flips, nu)
    }
}

/// [`LabelModel::q_error`] against precomputed flip values on `rule`'s nodes.
pub fn q_error_tabulated(rule: &QuadratureRule, flips: &[f64], nu: f64) -> Result<f64> {
    if !(nu.abs() <= 1.0) {
        return Err(Error::invalid(format!("nu must lie in [-1, 1], got {nu}")));
    }
    let s2 = 1.0 - nu * nu;
    let q: f64 = if s2 < 1e-12 {
        // P(YG ≤ 0) for ν → 1, P(YG ≥ 0) for ν → -1. No node sits at 0.
        let positive = nu > 0.0;
        rule.iter()
            .zip(flips)
            .map(|((g, w), &f)| {
                let wrong = if (g > 0.0) == positive { 1.0 - f } else { f };
                w * wrong
            })
            .sum()
    } else {
        let s = s2.sqrt();
        rule.iter()
            .zip(flips)
            .map(|((g, w), &f)| {
                let t = nu * g / s;
                w * (f * normal::cdf(-t) + (1.0 - f) * normal::cdf(t))
            })
            .sum()
    };
    Ok(q.clamp(0.0, 1.0))
}

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn mixture(base: &LabelModel, rule: &QuadratureRule, shift: f64, noise: f64) -> f64 {
    if noise == 0.0 {
        return base.flip_with(rule, shift);
    }
    rule.integrate(|gp| base.flip_with(rule, shift + noise * gp))
}
