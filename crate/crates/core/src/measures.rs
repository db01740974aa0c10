//! Limit spectral measures `μ = Law(X, W)` and activation coefficients for the
//! random-features construction.
//!
//! All expectations used by the fixed-point equations are affine in `W²`, so a
//! measure is stored as a list of points `(x, E[W² | X = x], mass)`; the law of
//! `W` itself is only needed for sampling and for [`SpectralMeasure::expect_2d`].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmodel::default_gaussian_rule;
use crate::quadrature::{mp_edges, mp_rule, QuadratureRule};

/// Default order of the Marchenko–Pastur bulk rule.
pub const DEFAULT_MP_ORDER: usize = 200;

/// Knots of the tabulated inverse CDF used to sample the MP bulk.
const SAMPLER_KNOTS: usize = 10_000;

/// One atom `(λ, w̄, mass)` of a discrete measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub lambda: f64,
    pub wbar: f64,
    pub mass: f64,
}

/// Serializable description of a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureSpec {
    /// `Σ = I` with the signal in generic position: `X = 1`, `W ~ N(0,1)`.
    Isotropic,
    Discrete { atoms: Vec<Atom> },
    /// Gaussian-equivalent random-features measure.
    RfGaussianEquiv {
        psi1: f64,
        gamma1: f64,
        gamma_star: f64,
    },
}

/// `(x, E[W² | X = x], mass)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurePoint {
    pub x: f64,
    pub w2: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct RfParts {
    psi1: f64,
    gamma1: f64,
    gamma_star: f64,
    c0: f64,
    /// Points of `X̃` with their masses (atom at zero included when `ψ1 > 1`).
    xtilde: Vec<(f64, f64)>,
    sampler: MpSampler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    spec: MeasureSpec,
    points: Vec<MeasurePoint>,
    rf: Option<RfParts>,
    zeta: f64,
    omega: f64,
}

impl SpectralMeasure {
    pub fn isotropic() -> Self {
        Self::finish(
            MeasureSpec::Isotropic,
            vec![MeasurePoint {
                x: 1.0,
                w2: 1.0,
                mass: 1.0,
            }],
            None,
        )
    }

    pub fn discrete(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("discrete measure needs at least one atom"));
        }
        for a in &atoms {
            if !(a.lambda > 0.0 && a.lambda.is_finite() && a.mass > 0.0 && a.wbar.is_finite()) {
                return Err(Error::invalid(format!("bad atom {a:?}")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.mass).sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!("atom masses sum to {total}, expected 1")));
        }
        let w2: f64 = atoms.iter().map(|a| a.mass * a.wbar * a.wbar).sum();
        if (w2 - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!("E[W^2] = {w2}, expected 1")));
        }
        let points = atoms
            .iter()
            .map(|a| MeasurePoint {
                x: a.lambda,
                w2: a.wbar * a.wbar,
                mass: a.mass,
            })
            .collect();
        Ok(Self::finish(MeasureSpec::Discrete { atoms }, points, None))
    }

    pub fn rf_gaussian_equiv(psi1: f64, gamma1: f64, gamma_star: f64) -> Result<Self> {
        Self::rf_gaussian_equiv_with_order(psi1, gamma1, gamma_star, DEFAULT_MP_ORDER)
    }

    pub fn rf_gaussian_equiv_with_order(
        psi1: f64,
        gamma1: f64,
        gamma_star: f64,
        mp_order: usize,
    ) -> Result<Self> {
        if !(psi1 > 0.0 && psi1.is_finite() && gamma1 > 0.0 && gamma_star > 0.0) {
            return Err(Error::invalid(format!(
                "random-features measure needs psi1, gamma1, gamma_star > 0, got {psi1}, {gamma1}, {gamma_star}"
            )));
        }
        let xtilde = mp_points(psi1, mp_order)?;
        let g1sq = gamma1 * gamma1;
        let gs2 = gamma_star * gamma_star;
        let c0_sq: f64 = psi1
            * xtilde
                .iter()
                .map(|&(xt, m)| m * g1sq * xt / (g1sq * xt + gs2))
                .sum::<f64>();
        let c0 = c0_sq.sqrt();
        let points = xtilde
            .iter()
            .map(|&(xt, m)| {
                let x = g1sq * xt + gs2;
                MeasurePoint {
                    x,
                    w2: g1sq * psi1 * xt / (c0_sq * x),
                    mass: m,
                }
            })
            .collect();
        let lambda = if psi1 > 1.0 { 1.0 / psi1 } else { psi1 };
        let rf = RfParts {
            psi1,
            gamma1,
            gamma_star,
            c0,
            xtilde,
            sampler: MpSampler::new(lambda),
        };
        Ok(Self::finish(
            MeasureSpec::RfGaussianEquiv {
                psi1,
                gamma1,
                gamma_star,
            },
            points,
            Some(rf),
        ))
    }

    pub fn from_spec(spec: &MeasureSpec, mp_order: usize) -> Result<Self> {
        match spec {
            MeasureSpec::Isotropic => Ok(Self::isotropic()),
            MeasureSpec::Discrete { atoms } => Self::discrete(atoms.clone()),
            MeasureSpec::RfGaussianEquiv {
                psi1,
                gamma1,
                gamma_star,
            } => Self::rf_gaussian_equiv_with_order(*psi1, *gamma1, *gamma_star, mp_order),
        }
    }

    fn finish(spec: MeasureSpec, points: Vec<MeasurePoint>, rf: Option<RfParts>) -> Self {
        let inv: f64 = points.iter().map(|p| p.mass * p.w2 / p.x).sum();
        let zeta = inv.powf(-0.5);
        let omega2: f64 = points
            .iter()
            .map(|p| p.mass * (1.0 - zeta * zeta / p.x).powi(2) * p.w2)
            .sum();
        Self {
            spec,
            points,
            rf,
            zeta,
            omega: omega2.max(0.0).sqrt(),
        }
    }

    pub fn spec(&self) -> &MeasureSpec {
        &self.spec
    }

    pub fn points(&self) -> &[MeasurePoint] {
        &self.points
    }

    /// `ζ = (E[W²/X])^{-1/2}`.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// `ω = (E[(1 - ζ²/X)² W²])^{1/2}`.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Signal strength, `1/ρ² = E[W²/X]`; equal to `ζ`.
    pub fn rho(&self) -> f64 {
        self.zeta
    }

    /// `C0` of the random-features construction.
    pub fn c0(&self) -> Option<f64> {
        self.rf.as_ref().map(|r| r.c0)
    }

    /// Smallest and largest `x` carrying mass.
    pub fn x_support(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)))
    }

    /// `E[g(X, W²)]`. Exact (up to quadrature) for integrands affine in `W²`,
    /// which covers every expectation in the fixed-point system.
    pub fn expect<F: FnMut(f64, f64) -> f64>(&self, mut g: F) -> f64 {
        self.points.iter().map(|p| p.mass * g(p.x, p.w2)).sum()
    }

    /// `E[g(X, W)]` for general integrands, with the Gaussian factor of `W`
    /// integrated by `rule` (isotropic and random-features kinds).
    pub fn expect_2d<F: FnMut(f64, f64) -> f64>(&self, rule: &QuadratureRule, mut g: F) -> f64 {
        match (&self.spec, &self.rf) {
            (MeasureSpec::Isotropic, _) => rule.integrate(|w| g(1.0, w)),
            (MeasureSpec::Discrete { atoms }, _) => atoms.iter().map(|a| a.mass * g(a.lambda, a.wbar)).sum(),
            (MeasureSpec::RfGaussianEquiv { .. }, Some(rf)) => rf
                .xtilde
                .iter()
                .map(|&(xt, m)| {
                    let (x, scale) = rf.map(xt);
                    m * rule.integrate(|gt| g(x, scale * gt))
                })
                .sum(),
            (MeasureSpec::RfGaussianEquiv { .. }, None) => unreachable!("rf parts are always built"),
        }
    }

    /// `E[g(X, W)]` with the default Gaussian rule.
    pub fn expect_2d_default<F: FnMut(f64, f64) -> f64>(&self, g: F) -> f64 {
        self.expect_2d(default_gaussian_rule(), g)
    }

    /// Draws one `(X, W)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match (&self.spec, &self.rf) {
            (MeasureSpec::Isotropic, _) => (1.0, rng.sample(StandardNormal)),
            (MeasureSpec::Discrete { atoms }, _) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.mass;
                    if u < acc {
                        return (a.lambda, a.wbar);
                    }
                }
                let last = atoms.last().expect("non-empty");
                (last.lambda, last.wbar)
            }
            (MeasureSpec::RfGaussianEquiv { .. }, Some(rf)) => {
                let xt = if rf.psi1 > 1.0 {
                    if rng.random::<f64>() < 1.0 - 1.0 / rf.psi1 {
                        0.0
                    } else {
                        rf.psi1 * rf.sampler.sample(rng)
                    }
                } else {
                    rf.sampler.sample(rng)
                };
                let (x, scale) = rf.map(xt);
                let gt: f64 = rng.sample(StandardNormal);
                (x, scale * gt)
            }
            (MeasureSpec::RfGaussianEquiv { .. }, None) => unreachable!("rf parts are always built"),
        }
    }
}

impl RfParts {
    /// `X̃ ↦ (X, W/G̃)`.
    fn map(&self, xt: f64) -> (f64, f64) {
        let x = self.gamma1 * self.gamma1 * xt + self.gamma_star * self.gamma_star;
        let scale = self.gamma1 * (self.psi1 * xt).sqrt() / (self.c0 * x.sqrt());
        (x, scale)
    }
}

/// Points of the law of `X̃`: the MP bulk of ratio `ψ1` for `ψ1 ≤ 1`, and for
/// `ψ1 > 1` an atom at zero of mass `1 - 1/ψ1` plus `ψ1·V`, `V ~ ν_{1/ψ1}`,
/// carrying mass `1/ψ1`.
fn mp_points(psi1: f64, order: usize) -> Result<Vec<(f64, f64)>> {
    if psi1 <= 1.0 {
        let rule = mp_rule(psi1, order)?;
        return Ok(rule.iter().collect());
    }
    let rule = mp_rule(1.0 / psi1, order)?;
    let mut pts = vec![(0.0, 1.0 - 1.0 / psi1)];
    pts.extend(rule.iter().map(|(v, w)| (psi1 * v, w / psi1)));
    Ok(pts)
}

/// Inverse-CDF sampler for the MP bulk `ν_λ`, tabulated in the angle
/// `x = m - r cos θ` where the density is bounded even at `λ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpSampler {
    lambda: f64,
    cdf: Vec<f64>,
}

impl MpSampler {
    pub fn new(lambda: f64) -> Self {
        let (m, r) = Self::center_radius(lambda);
        let h = std::f64::consts::PI / SAMPLER_KNOTS as f64;
        let dens = |theta: f64| {
            let c = theta.cos();
            if lambda >= 1.0 {
                r * (1.0 + c)
            } else {
                r * r * (1.0 - c * c) / (lambda * (m - r * c))
            }
        };
        let mut cdf = Vec::with_capacity(SAMPLER_KNOTS + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for k in 0..SAMPLER_KNOTS {
            let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
            // Simpson on each knot interval.
            acc += h / 6.0 * (dens(a) + 4.0 * dens(0.5 * (a + b)) + dens(b));
            cdf.push(acc);
        }
        for v in cdf.iter_mut() {
            *v /= acc;
        }
        Self { lambda, cdf }
    }

    fn center_radius(lambda: f64) -> (f64, f64) {
        let (lo, hi) = mp_edges(lambda);
        (0.5 * (lo + hi), 0.5 * (hi - lo))
    }

    /// Quantile function of `ν_λ`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, SAMPLER_KNOTS);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        let theta = std::f64::consts::PI * ((k - 1) as f64 + t) / SAMPLER_KNOTS as f64;
        let (m, r) = Self::center_radius(self.lambda);
        m - r * theta.cos()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random())
    }
}

/// `(γ0, γ1, γ*)` of an activation in Gaussian `L²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationCoeffs {
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma_star: f64,
}

/// `γ0 = E σ(G)`, `γ1 = E Gσ(G)`, `γ*² = E σ(G)² - γ1² - γ0²`.
pub fn activation_coeffs<F: Fn(f64) -> f64>(sigma: F) -> Result<ActivationCoeffs> {
    let rule = default_gaussian_rule();
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (g, w) in rule.iter() {
        let s = sigma(g);
        m0 += w * s;
        m1 += w * g * s;
        m2 += w * s * s;
    }
    if !(m0.is_finite() && m1.is_finite() && m2.is_finite()) {
        return Err(Error::invalid("activation is not square integrable"));
    }
    let star2 = m2 - m1 * m1 - m0 * m0;
    if star2 <= 1e-12 {
        return Err(Error::PurelyLinearActivation(star2));
    }
    Ok(ActivationCoeffs {
        gamma0: m0,
        gamma1: m1,
        gamma_star: star2.sqrt(),
    })
}

/// `τ² = 1 - ψ1·E[γ1²X̃ / (γ1²X̃ + γ*²)]`.
pub fn rf_tau(psi1: f64, coeffs: &ActivationCoeffs) -> Result<f64> {
    rf_tau_with_order(psi1, coeffs, DEFAULT_MP_ORDER)
}

pub fn rf_tau_with_order(psi1: f64, coeffs: &ActivationCoeffs, mp_order: usize) -> Result<f64> {
    if !(psi1 > 0.0 && psi1.is_finite()) {
        return Err(Error::invalid(format!("psi1 must be positive, got {psi1}")));
    }
    let g1sq = coeffs.gamma1 * coeffs.gamma1;
    let gs2 = coeffs.gamma_star * coeffs.gamma_star;
    let e: f64 = mp_points(psi1, mp_order)?
        .iter()
        .map(|&(xt, m)| m * g1sq * xt / (g1sq * xt + gs2))
        .sum();
    let tau2 = 1.0 - psi1 * e;
    if tau2 <= 0.0 {
        return Err(Error::NumericConsistency(format!("tau^2 = {tau2} is not positive")));
    }
    Ok(tau2.sqrt())
}

/// Activations available to the random-features experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `ReLU - 1/√(2π)`.
    CenteredRelu,
    /// `0.5 x₊ + a0 x₊² + a1 x₊/(1 + x₊)`.
    Sigma2 { a0: f64, a1: f64 },
    Identity,
}

impl Activation {
    pub fn eval(&self, x: f64) -> f64 {
        let xp = x.max(0.0);
        match *self {
            Activation::Relu => xp,
            Activation::CenteredRelu => xp - crate::normal::INV_SQRT_2PI,
            Activation::Sigma2 { a0, a1 } => 0.5 * xp + a0 * xp * xp + a1 * xp / (1.0 + xp),
            Activation::Identity => x,
        }
    }

    pub fn coeffs(&self) -> Result<ActivationCoeffs> {
        activation_coeffs(|x| self.eval(x))
    }

    /// The `σ2` activation whose `(γ1, γ*)` match ReLU.
    ///
    /// `γ1` is affine in `(a0, a1)` and `γ*²` quadratic, so the system has at
    /// most two roots; Newton from `(0, 1)` selects the one with `a1 > 0`.
    pub fn sigma2_matched_to_relu() -> Result<Self> {
        let target = Activation::Relu.coeffs()?;
        let rule = default_gaussian_rule();
        let basis = |x: f64| {
            let xp = x.max(0.0);
            [0.5 * xp, xp * xp, xp / (1.0 + xp)]
        };
        // Moments of the three basis functions.
        let mut mean = [0.0; 3];
        let mut lin = [0.0; 3];
        let mut gram = [[0.0; 3]; 3];
        for (g, w) in rule.iter() {
            let b = basis(g);
            for i in 0..3 {
                mean[i] += w * b[i];
                lin[i] += w * g * b[i];
                for j in 0..3 {
                    gram[i][j] += w * b[i] * b[j];
                }
            }
        }
        let residual = |a: [f64; 2]| {
            let c = [1.0, a[0], a[1]];
            let dot = |v: &[f64; 3]| v.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>();
            let m0 = dot(&mean);
            let m1 = dot(&lin);
            let mut m2 = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    m2 += c[i] * c[j] * gram[i][j];
                }
            }
            [
                m1 - target.gamma1,
                m2 - m1 * m1 - m0 * m0 - target.gamma_star * target.gamma_star,
            ]
        };
        let mut a = [0.0, 1.0];
        for _ in 0..100 {
            let r = residual(a);
            if r[0].abs().max(r[1].abs()) < 1e-14 {
                return Ok(Activation::Sigma2 { a0: a[0], a1: a[1] });
            }
            let h = 1e-7;
            let r0 = residual([a[0] + h, a[1]]);
            let r1 = residual([a[0], a[1] + h]);
            let j = [
                [(r0[0] - r[0]) / h, (r1[0] - r[0]) / h],
                [(r0[1] - r[1]) / h, (r1[1] - r[1]) / h],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.abs() < 1e-300 {
                break;
            }
            let d0 = (r[0] * j[1][1] - r[1] * j[0][1]) / det;
            let d1 = (j[0][0] * r[1] - j[1][0] * r[0]) / det;
            a = [a[0] - d0, a[1] - d1];
        }
        let r = residual(a);
        if r[0].abs().max(r[1].abs()) < 1e-10 {
            Ok(Activation::Sigma2 { a0: a[0], a1: a[1] })
        } else {
            Err(Error::SolverFailure(format!(
                "could not match sigma2 coefficients to ReLU, residual {r:?}"
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal;

    #[test]
    fn isotropic_constants() {
        let m = SpectralMeasure::isotropic();
        assert_eq!(m.expect(|_, w2| w2), 1.0);
        assert_eq!(m.zeta(), 1.0);
        assert_eq!(m.omega(), 0.0);
        assert!((m.expect_2d_default(|_, w| w * w) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn discrete_validation() {
        let bad = vec![Atom {
            lambda: 1.0,
            wbar: 2.0,
            mass: 1.0,
        }];
        assert!(SpectralMeasure::discrete(bad).is_err());
        let ok = vec![
            Atom {
                lambda: 1.0,
                wbar: 2f64.sqrt(),
                mass: 0.5,
            },
            Atom {
                lambda: 4.0,
                wbar: 0.0,
                mass: 0.5,
            },
        ];
        let m = SpectralMeasure::discrete(ok).unwrap();
        assert!((m.zeta() - 1.0).abs() < 1e-15);
        assert_eq!(m.x_support(), (1.0, 4.0));
    }

    #[test]
    fn relu_coefficients() {
        let c = Activation::Relu.coeffs().unwrap();
        assert!((c.gamma0 - normal::INV_SQRT_2PI).abs() < 1e-14);
        assert!((c.gamma1 - 0.5).abs() < 1e-14);
        let star2 = 0.25 - 0.5 / std::f64::consts::PI;
        assert!((c.gamma_star * c.gamma_star - star2).abs() < 1e-14);
        let cc = Activation::CenteredRelu.coeffs().unwrap();
        assert!(cc.gamma0.abs() < 1e-14);
        assert!((cc.gamma1 - c.gamma1).abs() < 1e-14);
        assert!((cc.gamma_star - c.gamma_star).abs() < 1e-14);
        assert!(matches!(
            Activation::Identity.coeffs(),
            Err(Error::PurelyLinearActivation(_))
        ));
    }

    #[test]
    fn sigma2_matches_relu() {
        let s = Activation::sigma2_matched_to_relu().unwrap();
        let a = s.coeffs().unwrap();
        let b = Activation::Relu.coeffs().unwrap();
        assert!((a.gamma1 - b.gamma1).abs() < 1e-10);
        assert!((a.gamma_star - b.gamma_star).abs() < 1e-10);
        assert!(matches!(s, Activation::Sigma2 { .. }));
    }

    #[test]
    fn rf_measure_is_normalized_on_both_branches() {
        for &psi1 in &[0.3, 1.0, 2.0, 8.0] {
            let m = SpectralMeasure::rf_gaussian_equiv(psi1, 0.5, 0.3014).unwrap();
            assert!((m.expect(|_, _| 1.0) - 1.0).abs() < 1e-12);
            assert!((m.expect(|_, w2| w2) - 1.0).abs() < 1e-12);
            let (lo, hi) = m.x_support();
            assert!(lo >= 0.3014f64.powi(2) - 1e-15);
            let edge = 0.25 * psi1 * (1.0 + psi1.powf(-0.5)).powi(2) + 0.3014f64.powi(2);
            assert!(hi <= edge + 1e-12);
        }
    }

    #[test]
    fn mp_sampler_quantiles_are_monotone_and_in_bulk() {
        for &l in &[0.1, 0.5, 1.0] {
            let s = MpSampler::new(l);
            let (lo, hi) = mp_edges(l);
            let mut last = lo;
            for i in 0..=100 {
                let q = s.quantile(i as f64 / 100.0);
                assert!(q >= last - 1e-15 && q <= hi + 1e-12);
                last = q;
            }
        }
    }
}
