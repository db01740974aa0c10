//! Deterministic quadrature rules.
//!
//! Three families are provided:
//!
//! * [`gauss_hermite`]: probabilist Gauss–Hermite, i.e. weights against the
//!   standard normal density `e^{-x²/2}/√(2π)`, summing to one.
//! * [`gaussian_composite`]: composite Gauss–Legendre panels weighted by the
//!   standard normal density on a truncated line, with a breakpoint at the
//!   origin and geometric grading towards it. This is the workhorse for
//!   expectations over `G ~ N(0,1)` whose integrands are steep or kinked at
//!   zero (sharp logistic links, ReLU activations).
//! * [`mp_rule`]: the absolutely continuous Marchenko–Pastur bulk of ratio
//!   `λ ∈ (0, 1]`, a Gauss rule built from its Jacobi matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    GaussHermiteProbabilist,
    GaussianComposite,
    GaussLegendre,
    MarchenkoPasturBulk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    kind: RuleKind,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `Σ wᵢ g(xᵢ)`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.iter().map(|(x, w)| w * g(x)).sum()
    }
}

/// Probabilist Gauss–Hermite rule with `order` nodes.
///
/// Nodes come from the eigenvalues of the Jacobi matrix of the orthonormal
/// Hermite polynomials (Golub–Welsch), are polished by Newton steps on the
/// three-term recurrence, and are then symmetrized so that `±x` pairs are
/// exact. Weights use the Christoffel formula `1 / Σ_k p_k(x)²`.
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if order < 2 {
        return Err(Error::invalid(format!(
            "Gauss-Hermite order must be at least 2, got {order}"
        )));
    }
    let n = order;
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    for x in nodes.iter_mut() {
        for _ in 0..8 {
            let (pn, pn1, _) = hermite_orthonormal(n, *x);
            let step = pn / ((n as f64).sqrt() * pn1);
            *x -= step;
            if step.abs() < 1e-16 * (1.0 + x.abs()) {
                break;
            }
        }
    }
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let m = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -m;
        nodes[j] = m;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| 1.0 / hermite_orthonormal(n, x).2)
        .collect();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let m = 0.5 * (weights[i] + weights[j]);
        weights[i] = m;
        weights[j] = m;
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        kind: RuleKind::GaussHermiteProbabilist,
    })
}

/// Returns `(p_n(x), p_{n-1}(x), Σ_{k<n} p_k(x)²)` for the orthonormal
/// probabilist Hermite polynomials.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}

/// Gauss–Legendre rule on `[-1, 1]` (weights sum to 2).
pub fn gauss_legendre(order: usize) -> Result<QuadratureRule> {
    if order < 1 {
        return Err(Error::invalid("Gauss-Legendre order must be positive"));
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        kind: RuleKind::GaussLegendre,
    })
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Layout of the composite Gaussian rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositeSpec {
    /// Integration is truncated to `[-half_width, half_width]`.
    pub half_width: f64,
    /// Width of the uniform panels away from the origin.
    pub panel_width: f64,
    /// Gauss–Legendre points per panel.
    pub points_per_panel: usize,
}

impl Default for CompositeSpec {
    fn default() -> Self {
        Self {
            half_width: 10.0,
            panel_width: 0.25,
            points_per_panel: 10,
        }
    }
}

impl CompositeSpec {
    /// Same layout with the uniform panel width halved.
    pub fn refined(self) -> Self {
        Self {
            panel_width: 0.5 * self.panel_width,
            ..self
        }
    }
}

/// Composite rule for expectations over `G ~ N(0,1)`.
pub fn gaussian_composite(spec: CompositeSpec) -> Result<QuadratureRule> {
    if !(spec.half_width > 1.0 && spec.panel_width > 0.0 && spec.panel_width <= 1.0) {
        return Err(Error::invalid(format!("bad composite layout {spec:?}")));
    }
    let gl = gauss_legendre(spec.points_per_panel)?;

    let mut breaks = vec![0.0];
    let mut b = 1e-8;
    while b < 0.5 * spec.panel_width {
        breaks.push(b);
        b *= 10.0;
    }
    let mut b = 0.5 * spec.panel_width;
    while b < spec.half_width - 1e-12 {
        breaks.push(b);
        b += spec.panel_width;
    }
    breaks.push(spec.half_width);

    let mut pos_nodes = Vec::new();
    let mut pos_weights = Vec::new();
    for win in breaks.windows(2) {
        let (a, b) = (win[0], win[1]);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for (t, w) in gl.iter() {
            let x = mid + half * t;
            pos_nodes.push(x);
            pos_weights.push(w * half * normal::pdf(x));
        }
    }
    let mut nodes: Vec<f64> = pos_nodes.iter().rev().map(|x| -x).collect();
    let mut weights: Vec<f64> = pos_weights.iter().rev().copied().collect();
    nodes.extend_from_slice(&pos_nodes);
    weights.extend_from_slice(&pos_weights);
    Ok(QuadratureRule {
        nodes,
        weights,
        kind: RuleKind::GaussianComposite,
    })
}

/// Composite rule with additional breakpoints at `extra`, each surrounded by
/// the same geometric grading as the origin. Used when an integrand has a kink
/// or a sharp transition away from zero.
pub fn gaussian_composite_split(spec: CompositeSpec, extra: &[f64]) -> Result<QuadratureRule> {
    if !(spec.half_width > 1.0 && spec.panel_width > 0.0 && spec.panel_width <= 1.0) {
        return Err(Error::invalid(format!("bad composite layout {spec:?}")));
    }
    let gl = gauss_legendre(spec.points_per_panel)?;
    let hw = spec.half_width;
    let mut breaks = Vec::new();
    let mut centers = vec![0.0];
    centers.extend(extra.iter().copied().filter(|e| e.is_finite() && e.abs() < hw));
    for &c in &centers {
        breaks.push(c);
        let mut d = 1e-8;
        while d < 0.5 * spec.panel_width {
            breaks.push(c - d);
            breaks.push(c + d);
            d *= 10.0;
        }
    }
    let mut b = 0.5 * spec.panel_width;
    while b < hw - 1e-12 {
        breaks.push(b);
        breaks.push(-b);
        b += spec.panel_width;
    }
    breaks.push(hw);
    breaks.push(-hw);
    breaks.retain(|x| x.abs() <= hw);
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + b.abs()));

    let mut nodes = Vec::with_capacity(breaks.len() * gl.len());
    let mut weights = Vec::with_capacity(breaks.len() * gl.len());
    for win in breaks.windows(2) {
        let (a, b) = (win[0], win[1]);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for (t, w) in gl.iter() {
            let x = mid + half * t;
            nodes.push(x);
            weights.push(w * half * normal::pdf(x));
        }
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        kind: RuleKind::GaussianComposite,
    })
}

/// Edges `(λ₋, λ₊) = ((1-√λ)², (1+√λ)²)` of the Marchenko–Pastur bulk.
pub fn mp_edges(lambda: f64) -> (f64, f64) {
    let s = lambda.sqrt();
    ((1.0 - s).powi(2), (1.0 + s).powi(2))
}

/// Marchenko–Pastur density `√((λ₊-x)(x-λ₋)) / (2πλx)` on its bulk.
pub fn mp_density(lambda: f64, x: f64) -> f64 {
    let (lo, hi) = mp_edges(lambda);
    if x <= lo || x >= hi || x <= 0.0 {
        return 0.0;
    }
    ((hi - x) * (x - lo)).sqrt() / (2.0 * std::f64::consts::PI * lambda * x)
}

/// Gauss quadrature for the Marchenko–Pastur bulk `ν_λ`, `0 < λ ≤ 1`.
///
/// The monic orthogonal polynomials of `ν_λ` have constant recurrence
/// coefficients after the first step: diagonal `1, 1+λ, 1+λ, …` and squared
/// off-diagonal `λ`. Golub–Welsch on that Jacobi matrix gives the exact
/// Gauss rule, so convergence depends only on the integrand's analyticity
/// around the bulk, not on the square-root (or, at `λ = 1`, inverse
/// square-root) behaviour of the density at the edges. Weights are
/// renormalized to sum to one.
pub fn mp_rule(lambda_ratio: f64, order: usize) -> Result<QuadratureRule> {
    if !(lambda_ratio > 0.0 && lambda_ratio <= 1.0) {
        return Err(Error::invalid(format!(
            "Marchenko-Pastur ratio must lie in (0, 1], got {lambda_ratio}"
        )));
    }
    if order < 2 {
        return Err(Error::invalid("Marchenko-Pastur rule order must be at least 2"));
    }
    let n = order;
    let off = lambda_ratio.sqrt();
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            if i == 0 {
                1.0
            } else {
                1.0 + lambda_ratio
            }
        } else if i + 1 == j || j + 1 == i {
            off
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let (lo, hi) = mp_edges(lambda_ratio);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k].clamp(lo, hi), v * v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Ok(QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1 / total).collect(),
        kind: RuleKind::MarchenkoPasturBulk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_moment(k: u32) -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            (1..k).step_by(2).map(|j| j as f64).product()
        }
    }

    #[test]
    fn gauss_hermite_rejects_small_orders() {
        assert!(matches!(gauss_hermite(1), Err(Error::InvalidArgument(_))));
        assert!(matches!(gauss_hermite(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gauss_hermite_spec_examples() {
        let r20 = gauss_hermite(20).unwrap();
        assert!((r20.integrate(|x| x * x) - 1.0).abs() < 1e-12);
        assert!(r20.integrate(|x| x).abs() < 1e-12);
        let r40 = gauss_hermite(40).unwrap();
        assert!((r40.integrate(|x| x.max(0.0).powi(2)) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn gauss_hermite_is_exact_to_degree_2n_minus_1() {
        for &n in &[2usize, 3, 7, 16, 64] {
            let rule = gauss_hermite(n).unwrap();
            assert!(rule.weights().iter().all(|&w| w > 0.0));
            assert!((rule.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..(2 * n as u32).min(24) {
                let got = rule.integrate(|x| x.powi(k as i32));
                let want = gaussian_moment(k);
                // Odd moments cancel large terms; round-off scales with E|x|^k.
                let scale = rule.integrate(|x| x.abs().powi(k as i32));
                assert!(
                    (got - want).abs() <= 1e-10 * want.max(1.0) + 1e-14 * scale,
                    "n={n} k={k} got={got} want={want}"
                );
            }
        }
    }

    #[test]
    fn gauss_hermite_nodes_are_paired() {
        let rule = gauss_hermite(33).unwrap();
        let n = rule.len();
        for i in 0..n {
            assert_eq!(rule.nodes()[i], -rule.nodes()[n - 1 - i]);
            assert_eq!(rule.weights()[i], rule.weights()[n - 1 - i]);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(10).unwrap();
        for k in 0..20 {
            let want = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((rule.integrate(|x| x.powi(k)) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn composite_rule_moments_and_steps() {
        let rule = gaussian_composite(CompositeSpec::default()).unwrap();
        assert!((rule.integrate(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!((rule.integrate(|x| x * x) - 1.0).abs() < 1e-13);
        assert!((rule.integrate(|x| x.powi(4)) - 3.0).abs() < 1e-12);
        // Kinks at the origin are handled exactly.
        let relu_mean = rule.integrate(|x| x.max(0.0));
        assert!((relu_mean - normal::INV_SQRT_2PI).abs() < 1e-14);
        let step = rule.integrate(|x| if x > 0.0 { 1.0 } else { 0.0 });
        assert!((step - 0.5).abs() < 1e-14);
    }

    #[test]
    fn split_rule_handles_off_origin_kinks() {
        let rule = gaussian_composite_split(CompositeSpec::default(), &[0.3141, -1.7]).unwrap();
        assert!((rule.integrate(|_| 1.0) - 1.0).abs() < 1e-14);
        // E[(G - a)_+] = φ(a) - a Φ(-a)
        for a in [0.3141, -1.7] {
            let got = rule.integrate(|x| (x - a).max(0.0));
            let want = normal::pdf(a) - a * normal::cdf(-a);
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn mp_rule_rejects_bad_ratio() {
        assert!(mp_rule(0.0, 10).is_err());
        assert!(mp_rule(1.5, 10).is_err());
        assert!(mp_rule(-0.2, 10).is_err());
    }

    #[test]
    fn mp_rule_spec_examples() {
        let r = mp_rule(0.5, 200).unwrap();
        assert!((r.integrate(|_| 1.0) - 1.0).abs() < 1e-8);
        assert!((r.integrate(|x| x) - 1.0).abs() < 1e-6);
        let r = mp_rule(0.25, 200).unwrap();
        assert!((r.integrate(|x| x * x) - 1.25).abs() < 1e-5);
    }

    #[test]
    fn mp_rule_nodes_inside_bulk() {
        for &lambda in &[0.01, 0.3, 1.0] {
            let (lo, hi) = mp_edges(lambda);
            let r = mp_rule(lambda, 64).unwrap();
            assert!(r.nodes().iter().all(|&x| x >= lo && x <= hi));
            assert!(r.weights().iter().all(|&w| w > 0.0));
            // third moment of MP: 1 + 3λ + λ²
            let m3 = r.integrate(|x| x.powi(3));
            assert!((m3 - (1.0 + 3.0 * lambda + lambda * lambda)).abs() < 1e-10);
        }
    }

    #[test]
    fn mp_rule_matches_direct_density_integration() {
        // Independent route: composite Gauss–Legendre on the density itself,
        // after the substitution x = λ₋ + (λ₊-λ₋) sin²(t), t ∈ [0, π/2].
        let lambda = 0.4;
        let (lo, hi) = mp_edges(lambda);
        let gl = gauss_legendre(20).unwrap();
        let panels = 200;
        let mut direct = 0.0;
        let h = std::f64::consts::FRAC_PI_2 / panels as f64;
        for p in 0..panels {
            let a = p as f64 * h;
            for (t, w) in gl.iter() {
                let s = a + 0.5 * h * (t + 1.0);
                let x = lo + (hi - lo) * s.sin().powi(2);
                let jac = (hi - lo) * 2.0 * s.sin() * s.cos();
                direct += 0.5 * h * w * mp_density(lambda, x) * jac * (1.0 / (1.0 + x));
            }
        }
        let rule = mp_rule(lambda, 200).unwrap();
        let via_rule = rule.integrate(|x| 1.0 / (1.0 + x));
        assert!((direct - via_rule).abs() < 1e-10, "{direct} vs {via_rule}");
    }

    #[test]
    fn refinement_converges() {
        let battery: [fn(f64) -> f64; 4] = [
            |x| (1.0 + x).recip(),
            |x| x.sin(),
            |x| (-x).exp(),
            |x| 1.0 / (0.3 + x * x),
        ];
        for &lambda in &[0.2, 0.7, 1.0] {
            for g in battery {
                let a = mp_rule(lambda, 64).unwrap().integrate(g);
                let b = mp_rule(lambda, 128).unwrap().integrate(g);
                assert!((a - b).abs() < 1e-8, "lambda={lambda}: {a} vs {b}");
            }
        }
        // Entire integrands with closed-form Gaussian expectations.
        #[allow(clippy::type_complexity)]
        let gauss_battery: [(fn(f64) -> f64, f64); 3] = [
            (|x| x.cos(), (-0.5f64).exp()),
            (|x| (0.5 * x).exp(), 0.125f64.exp()),
            (|x| x * x.sin(), (-0.5f64).exp()),
        ];
        for (g, want) in gauss_battery {
            let a = gauss_hermite(64).unwrap().integrate(g);
            let b = gauss_hermite(128).unwrap().integrate(g);
            assert!((a - b).abs() < 1e-12);
            assert!((a - want).abs() < 1e-12, "{a} vs {want}");
        }
    }

    #[test]
    fn rules_are_deterministic() {
        assert_eq!(gauss_hermite(64).unwrap(), gauss_hermite(64).unwrap());
        assert_eq!(mp_rule(0.3, 200).unwrap(), mp_rule(0.3, 200).unwrap());
    }
}
