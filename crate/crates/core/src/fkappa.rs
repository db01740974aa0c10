//! The functional `F_κ(c1, c2) = (E[(κ - c1·YG - c2·Z)₊²])^{1/2}` and its
//! derivatives.
//!
//! The inner expectation over `Z` is done in closed form,
//! `I(a, c) = E_Z[(a - cZ)₊²] = (a² + c²)Φ(a/c) + ac·φ(a/c)`, so only the
//! expectation over `G` is numerical.

use crate::error::{Error, Result};
use crate::labelmodel::{default_gaussian_rule, LabelModel};
use crate::normal;
use crate::quadrature::{gaussian_composite_split, CompositeSpec, QuadratureRule};

/// Below this ratio `c2/|c1|` the integrand in `g` is close to a kink at
/// `g = ±κ/c1`, and a rule with breakpoints there is built on the fly.
const SPLIT_RATIO: f64 = 0.2;

/// `F_κ(c1, c2)` with its first partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkEvaluation {
    pub value: f64,
    pub d_c1: f64,
    pub d_c2: f64,
    /// `∂F/∂κ`.
    pub d_kappa: f64,
    pub kappa: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Second partials of `F_κ` in `(c1, c2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkHessian {
    pub d11: f64,
    pub d12: f64,
    pub d22: f64,
}

/// `E_Z[(a - cZ)₊²]` for `Z ~ N(0,1)`, `c ≥ 0`.
pub fn inner_positive_part_sq(a: f64, c: f64) -> f64 {
    Inner::new(a, c, false).i
}

/// `I` and its partials in `(a, c)`.
struct Inner {
    i: f64,
    ia: f64,
    ic: f64,
    iaa: f64,
    iac: f64,
    icc: f64,
}

impl Inner {
    fn new(a: f64, c: f64, second: bool) -> Self {
        if c <= 0.0 {
            let pos = if a > 0.0 { 1.0 } else { 0.0 };
            return Self {
                i: pos * a * a,
                ia: 2.0 * pos * a,
                ic: 0.0,
                iaa: 2.0 * pos,
                iac: 0.0,
                icc: 2.0 * pos,
            };
        }
        let u = a / c;
        let big_phi = normal::cdf(u);
        let phi = normal::pdf(u);
        let i = ((a * a + c * c) * big_phi + a * c * phi).max(0.0);
        let ia = (2.0 * (a * big_phi + c * phi)).max(0.0);
        let ic = 2.0 * c * big_phi;
        if !second {
            return Self {
                i,
                ia,
                ic,
                iaa: 0.0,
                iac: 0.0,
                icc: 0.0,
            };
        }
        Self {
            i,
            ia,
            ic,
            iaa: 2.0 * big_phi,
            iac: 2.0 * phi,
            icc: (2.0 * big_phi - 2.0 * u * phi).max(0.0),
        }
    }
}

/// Evaluator of `F_κ` for a fixed label model; flip probabilities are
/// tabulated once on the quadrature nodes.
#[derive(Debug, Clone)]
pub struct FKappa {
    model: LabelModel,
    spec: Option<CompositeSpec>,
    nodes: Vec<f64>,
    w_pos: Vec<f64>,
    w_neg: Vec<f64>,
}

/// Weighted sums of `I` and its partials over the `G` expectation.
#[derive(Default)]
struct Sums {
    s: f64,
    s1: f64,
    s2: f64,
    sk: f64,
    s11: f64,
    s12: f64,
    s22: f64,
}

impl FKappa {
    /// Uses the default composite Gaussian rule.
    pub fn new(model: &LabelModel) -> Self {
        Self::build(model, default_gaussian_rule(), Some(CompositeSpec::default()))
    }

    /// Uses the given composite layout for both the tabulated rule and the
    /// on-the-fly split rules.
    pub fn with_spec(model: &LabelModel, spec: CompositeSpec) -> Result<Self> {
        let rule = crate::quadrature::gaussian_composite(spec)?;
        Ok(Self::build(model, &rule, Some(spec)))
    }

    /// Uses an arbitrary rule (e.g. Gauss–Hermite). No kink splitting is done.
    pub fn with_rule(model: &LabelModel, rule: &QuadratureRule) -> Self {
        Self::build(model, rule, None)
    }

    fn build(model: &LabelModel, rule: &QuadratureRule, spec: Option<CompositeSpec>) -> Self {
        let flips = model.tabulate(rule);
        let (w_pos, w_neg) = rule
            .weights()
            .iter()
            .zip(&flips)
            .map(|(&w, &f)| (w * f, w * (1.0 - f)))
            .unzip();
        Self {
            model: model.clone(),
            spec,
            nodes: rule.nodes().to_vec(),
            w_pos,
            w_neg,
        }
    }

    pub fn model(&self) -> &LabelModel {
        &self.model
    }

    /// `F_κ(c1, c2)` and its first partials.
    pub fn eval(&self, kappa: f64, c1: f64, c2: f64) -> Result<FkEvaluation> {
        let s = self.sums(kappa, c1, c2, false)?;
        let f = s.s.sqrt();
        Ok(FkEvaluation {
            value: f,
            d_c1: s.s1 / (2.0 * f),
            d_c2: s.s2 / (2.0 * f),
            d_kappa: s.sk / (2.0 * f),
            kappa,
            c1,
            c2,
        })
    }

    /// `F_κ(c1, c2)` only.
    pub fn value(&self, kappa: f64, c1: f64, c2: f64) -> Result<f64> {
        Ok(self.eval(kappa, c1, c2)?.value)
    }

    /// First and second partials together.
    pub fn eval_with_hessian(&self, kappa: f64, c1: f64, c2: f64) -> Result<(FkEvaluation, FkHessian)> {
        let s = self.sums(kappa, c1, c2, true)?;
        let f = s.s.sqrt();
        let f3 = 4.0 * f * f * f;
        let ev = FkEvaluation {
            value: f,
            d_c1: s.s1 / (2.0 * f),
            d_c2: s.s2 / (2.0 * f),
            d_kappa: s.sk / (2.0 * f),
            kappa,
            c1,
            c2,
        };
        let h = FkHessian {
            d11: s.s11 / (2.0 * f) - s.s1 * s.s1 / f3,
            d12: s.s12 / (2.0 * f) - s.s1 * s.s2 / f3,
            d22: s.s22 / (2.0 * f) - s.s2 * s.s2 / f3,
        };
        Ok((ev, h))
    }

    fn sums(&self, kappa: f64, c1: f64, c2: f64, second: bool) -> Result<Sums> {
        if !(c2 >= 0.0) || !c1.is_finite() || !c2.is_finite() || !kappa.is_finite() {
            return Err(Error::invalid(format!(
                "F_kappa needs finite arguments with c2 >= 0, got kappa={kappa} c1={c1} c2={c2}"
            )));
        }
        let sums = match self.split_points(kappa, c1, c2) {
            Some(kinks) => {
                let spec = self.spec.expect("split only with a composite layout");
                let rule = gaussian_composite_split(spec, &kinks)?;
                let flips = self.model.tabulate(&rule);
                let (w_pos, w_neg): (Vec<f64>, Vec<f64>) = rule
                    .weights()
                    .iter()
                    .zip(&flips)
                    .map(|(&w, &f)| (w * f, w * (1.0 - f)))
                    .unzip();
                accumulate(rule.nodes(), &w_pos, &w_neg, kappa, c1, c2, second)
            }
            None => accumulate(&self.nodes, &self.w_pos, &self.w_neg, kappa, c1, c2, second),
        };
        if !(sums.s.sqrt() >= 1e-14) {
            return Err(Error::DegenerateModel(sums.s.sqrt()));
        }
        Ok(sums)
    }

    fn split_points(&self, kappa: f64, c1: f64, c2: f64) -> Option<Vec<f64>> {
        self.spec?;
        if kappa == 0.0 || c1 == 0.0 || c2 >= SPLIT_RATIO * c1.abs() {
            return None;
        }
        let g0 = kappa / c1;
        Some(vec![g0, -g0])
    }
}

fn accumulate(
    nodes: &[f64],
    w_pos: &[f64],
    w_neg: &[f64],
    kappa: f64,
    c1: f64,
    c2: f64,
    second: bool,
) -> Sums {
    let mut s = Sums::default();
    for ((&g, &wp), &wn) in nodes.iter().zip(w_pos).zip(w_neg) {
        // Y = +1: a = κ - c1 g ; Y = -1: a = κ + c1 g.
        let p = Inner::new(kappa - c1 * g, c2, second);
        let m = Inner::new(kappa + c1 * g, c2, second);
        s.s += wp * p.i + wn * m.i;
        s.s1 += g * (wn * m.ia - wp * p.ia);
        s.s2 += wp * p.ic + wn * m.ic;
        s.sk += wp * p.ia + wn * m.ia;
        if second {
            s.s11 += g * g * (wp * p.iaa + wn * m.iaa);
            s.s12 += g * (wn * m.iac - wp * p.iac);
            s.s22 += wp * p.icc + wn * m.icc;
        }
    }
    s
}
