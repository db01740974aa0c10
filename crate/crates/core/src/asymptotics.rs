//! Asymptotic margin and prediction error from the `(c1, c2, s)` fixed-point
//! system, plus the isotropic, misspecified and wide-network routes.

use std::cell::Cell;
use std::sync::OnceLock;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fkappa::FKappa;
use crate::labelmodel::LabelModel;
use crate::measures::{rf_tau_with_order, ActivationCoeffs, SpectralMeasure, DEFAULT_MP_ORDER};
use crate::quadrature::CompositeSpec;
use crate::roots::{bracket_root, golden_section};

/// Tolerances of the fixed-point and root-finding layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Max absolute residual of the fixed-point system.
    pub residual_tol: f64,
    /// Newton step size (in `(c1, ln c2, ln s)`) below which polishing stops.
    pub step_tol: f64,
    pub max_iter: usize,
    /// Final width of the `κ` bracket.
    pub bisection_width: f64,
    /// Iterates with `c2` below this are rejected.
    pub c2_guard: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-9,
            step_tol: 1e-10,
            max_iter: 500,
            bisection_width: 1e-8,
            c2_guard: 1e-10,
        }
    }
}

/// Solution `(c1, c2, s)` of the fixed-point system at `(ψ, κ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub c1: f64,
    pub c2: f64,
    pub s: f64,
    pub residuals: [f64; 3],
    pub psi: f64,
    pub kappa: f64,
}

impl FixedPoint {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `c1 / √(c1² + c2²)`.
    pub fn nu(&self) -> f64 {
        self.c1 / self.c1.hypot(self.c2)
    }
}

/// `κ*`, `ν*`, `Err*` and the thresholds at one `ψ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticPrediction {
    pub psi: f64,
    pub psi_star0: f64,
    /// `ψ↓(κ*)`.
    pub psi_down: f64,
    pub kappa_star: f64,
    pub nu_star: f64,
    pub err_star: f64,
    pub fixed_point: FixedPoint,
}

impl AsymptoticPrediction {
    pub const CSV_HEADER: [&'static str; 10] = [
        "psi",
        "psi_star0",
        "psi_down_at_kstar",
        "kappa_star",
        "nu_star",
        "err_star",
        "c1",
        "c2",
        "s",
        "margin_bound",
    ];

    pub fn csv_record(&self, margin_bound: f64) -> Vec<String> {
        let fp = &self.fixed_point;
        [
            self.psi,
            self.psi_star0,
            self.psi_down,
            self.kappa_star,
            self.nu_star,
            self.err_star,
            fp.c1,
            fp.c2,
            fp.s,
            margin_bound,
        ]
        .iter()
        .map(|v| format!("{v:.12e}"))
        .collect()
    }
}

/// One draw `(X, W, H)` from the limiting coordinate law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateSample {
    pub x: f64,
    pub w: f64,
    pub h: f64,
}

/// Fixed-point solver for one label model and spectral measure.
#[derive(Debug)]
pub struct Asymptotics {
    fk: FKappa,
    measure: SpectralMeasure,
    options: SolverOptions,
    psi_star0: OnceLock<Result<f64>>,
}

/// Coefficients `a = ∂₁F - (c1/c2)∂₂F`, `b = ∂₂F/c2` entering every
/// expectation of the system.
#[derive(Debug, Clone, Copy)]
struct Coefs {
    a: f64,
    b: f64,
}

impl Asymptotics {
    pub fn new(model: &LabelModel, measure: SpectralMeasure) -> Self {
        Self::with_fkappa(FKappa::new(model), measure)
    }

    pub fn with_fkappa(fk: FKappa, measure: SpectralMeasure) -> Self {
        Self {
            fk,
            measure,
            options: SolverOptions::default(),
            psi_star0: OnceLock::new(),
        }
    }

    /// Quadrature layout for `F_κ` chosen explicitly.
    pub fn with_spec(model: &LabelModel, measure: SpectralMeasure, spec: CompositeSpec) -> Result<Self> {
        Ok(Self::with_fkappa(FKappa::with_spec(model, spec)?, measure))
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn fkappa(&self) -> &FKappa {
        &self.fk
    }

    pub fn model(&self) -> &LabelModel {
        self.fk.model()
    }

    pub fn measure(&self) -> &SpectralMeasure {
        &self.measure
    }

    /// `ψ*(0) = min_c F₀(c, 1)²`, cached.
    pub fn psi_star_0(&self) -> Result<f64> {
        self.psi_star0.get_or_init(|| psi_star_0_with(&self.fk)).clone()
    }

    /// `(ψ₊(κ), ψ₋(κ))`.
    ///
    /// Each is zero when `∂₁F_κ(±ζ, 0)` is positive (non-negative for `ψ₋`)
    /// and `(∂₂F_κ)² - ω²(∂₁F_κ)²` at `(±ζ, 0)` otherwise.
    pub fn psi_plus_minus(&self, kappa: f64) -> Result<(f64, f64)> {
        let zeta = self.measure.zeta();
        let omega = self.measure.omega();
        let branch = |c1: f64, strict: bool| -> Result<f64> {
            let e = self.fk.eval(kappa, c1, 0.0)?;
            let zero = if strict { e.d_c1 > 0.0 } else { e.d_c1 >= 0.0 };
            Ok(if zero {
                0.0
            } else {
                e.d_c2 * e.d_c2 - omega * omega * e.d_c1 * e.d_c1
            })
        };
        Ok((branch(zeta, true)?, branch(-zeta, false)?))
    }

    /// `ψ↓(κ) = max{ψ*(0), ψ₊(κ), ψ₋(κ)}`.
    pub fn psi_down(&self, kappa: f64) -> Result<f64> {
        let (plus, minus) = self.psi_plus_minus(kappa)?;
        Ok(self.psi_star_0()?.max(plus).max(minus))
    }

    fn coefs(&self, kappa: f64, c1: f64, c2: f64) -> Result<(Coefs, crate::fkappa::FkEvaluation)> {
        let e = self.fk.eval(kappa, c1, c2)?;
        let b = e.d_c2 / c2;
        Ok((Coefs { a: e.d_c1 - c1 * b, b }, e))
    }

    /// Residuals of the three equations (left side minus right side).
    pub fn residuals(&self, psi: f64, kappa: f64, c1: f64, c2: f64, s: f64) -> Result<[f64; 3]> {
        let (k, _) = self.coefs(kappa, c1, c2)?;
        Ok(self.residuals_with(psi, k, c1, c2, s))
    }

    fn residuals_with(&self, psi: f64, k: Coefs, c1: f64, c2: f64, s: f64) -> [f64; 3] {
        let sp = psi.sqrt();
        let mut r = [c1, c1 * c1 + c2 * c2, 1.0];
        for p in self.measure.points() {
            // Zero eigenvalues carry no signal and drop out of every term.
            if p.x <= 0.0 {
                continue;
            }
            let sx = p.x.sqrt();
            let d = k.b * sx + sp * s / sx;
            let d2 = d * d;
            let aw = k.a * k.a * p.w2;
            r[0] += p.mass * k.a * p.w2 * sx / d;
            r[1] -= p.mass * (psi * p.x + aw * p.x) / d2;
            r[2] -= p.mass * (psi + aw) / d2;
        }
        r
    }

    fn residuals_log(&self, psi: f64, kappa: f64, u: &Vector3<f64>) -> Result<Vector3<f64>> {
        let c2 = u[1].exp();
        let s = u[2].exp();
        if !(c2 >= self.options.c2_guard) || !s.is_finite() || !c2.is_finite() || s <= 0.0 {
            return Err(Error::SolverFailure(format!("iterate left the domain: c2={c2}, s={s}")));
        }
        let r = self.residuals(psi, kappa, u[0], c2, s)?;
        Ok(Vector3::from(r))
    }

    /// Solves the system at `(ψ, κ)` from the default and grid starts.
    pub fn solve_fixed_point(&self, psi: f64, kappa: f64) -> Result<FixedPoint> {
        self.solve_fixed_point_from(psi, kappa, None)
    }

    /// As [`Self::solve_fixed_point`], trying `start = (c1, c2, s)` first.
    pub fn solve_fixed_point_from(&self, psi: f64, kappa: f64, start: Option<[f64; 3]>) -> Result<FixedPoint> {
        if !(psi > 0.0 && psi.is_finite()) || !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::invalid(format!("need psi > 0 and kappa >= 0, got psi={psi} kappa={kappa}")));
        }
        let psi_down = self.psi_down(kappa)?;
        if psi <= psi_down + 1e-6 {
            return Err(Error::Domain { psi, psi_down });
        }
        let zeta = self.measure.zeta();
        let mut starts: Vec<[f64; 3]> = Vec::with_capacity(10);
        starts.extend(start);
        starts.push([0.5 * zeta, 0.5, 0.5]);
        for &c1 in &[0.0, zeta] {
            for &c2 in &[0.25, 1.5] {
                for &s in &[0.25, 2.0] {
                    starts.push([c1, c2, s]);
                }
            }
        }
        let mut last_err = String::new();
        for st in &starts {
            let newton_err = match self.newton(psi, kappa, *st) {
                Ok(fp) => return Ok(fp),
                Err(e) => e,
            };
            match self.picard(psi, kappa, *st).and_then(|p| self.newton(psi, kappa, p)) {
                Ok(fp) => return Ok(fp),
                Err(e) => last_err = format!("Newton: {newton_err}; Picard: {e}"),
            }
        }
        Err(Error::SolverFailure(format!(
            "fixed point at psi={psi}, kappa={kappa} not found from {} starts; last: {last_err}",
            starts.len()
        )))
    }

    fn newton(&self, psi: f64, kappa: f64, start: [f64; 3]) -> Result<FixedPoint> {
        let tol = self.options.residual_tol;
        let mut u = Vector3::new(start[0], start[1].max(1e-6).ln(), start[2].max(1e-6).ln());
        let mut r = self.residuals_log(psi, kappa, &u)?;
        let mut converged_at: Option<usize> = None;
        for iter in 0..self.options.max_iter {
            let rmax = r.amax();
            if rmax <= tol && converged_at.is_none() {
                converged_at = Some(iter);
            }
            let jac = self.jacobian(psi, kappa, &u, &r)?;
            let mut step = match jac.lu().solve(&(-r)) {
                Some(d) if d.iter().all(|v| v.is_finite()) => d,
                _ => -(jac.transpose() * r),
            };
            // Keep log-scale moves bounded so exp() stays in range.
            let big = step.amax();
            if big > 2.0 {
                step *= 2.0 / big;
            }
            let norm0 = r.norm();
            let mut t = 1.0;
            let mut accepted = None;
            while t >= 1.0 / 1024.0 {
                let trial = u + step * t;
                if let Ok(rt) = self.residuals_log(psi, kappa, &trial) {
                    if rt.norm() < (1.0 - 1e-4 * t) * norm0 {
                        accepted = Some((trial, rt));
                        break;
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some((nu, nr)) => {
                    let moved = (nu - u).amax();
                    u = nu;
                    r = nr;
                    if let Some(at) = converged_at {
                        if moved <= self.options.step_tol || iter >= at + 3 {
                            break;
                        }
                    }
                }
                None => {
                    if converged_at.is_some() || rmax <= tol {
                        break;
                    }
                    return Err(Error::SolverFailure(format!(
                        "Newton stalled at residual {rmax:e}"
                    )));
                }
            }
        }
        if r.amax() > tol {
            return Err(Error::SolverFailure(format!(
                "Newton did not converge: residual {:e}",
                r.amax()
            )));
        }
        Ok(FixedPoint {
            c1: u[0],
            c2: u[1].exp(),
            s: u[2].exp(),
            residuals: [r[0], r[1], r[2]],
            psi,
            kappa,
        })
    }

    fn jacobian(&self, psi: f64, kappa: f64, u: &Vector3<f64>, r: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let mut jac = Matrix3::zeros();
        for j in 0..3 {
            let h = 1e-7 * (1.0 + u[j].abs());
            let mut up = *u;
            up[j] += h;
            let mut dn = *u;
            dn[j] -= h;
            let col = match (self.residuals_log(psi, kappa, &up), self.residuals_log(psi, kappa, &dn)) {
                (Ok(a), Ok(b)) => (a - b) / (2.0 * h),
                (Ok(a), Err(_)) => (a - r) / h,
                (Err(_), Ok(b)) => (r - b) / h,
                (Err(e), Err(_)) => return Err(e),
            };
            jac.set_column(j, &col);
        }
        Ok(jac)
    }

    /// Damped Picard sweeps: `s` from the (monotone) third equation, then
    /// `(c1, c2)` from the first two. Used to move a stalled start into
    /// Newton's basin.
    fn picard(&self, psi: f64, kappa: f64, start: [f64; 3]) -> Result<[f64; 3]> {
        let [mut c1, mut c2, mut s] = start;
        let sp = psi.sqrt();
        for _ in 0..200 {
            let (k, _) = self.coefs(kappa, c1, c2)?;
            let third = |s: f64| -> Result<f64> {
                let v: f64 = self
                    .measure
                    .points()
                    .iter()
                    .filter(|p| p.x > 0.0)
                    .map(|p| {
                        let sx = p.x.sqrt();
                        let d = k.b * sx + sp * s / sx;
                        p.mass * (psi + k.a * k.a * p.w2) / (d * d)
                    })
                    .sum();
                // Decreasing in s; negated so the root is bracketed low-to-high.
                Ok(1.0 - v)
            };
            let (mut lo, mut hi) = (1e-8, 1.0);
            while third(hi)? <= 0.0 && hi < 1e8 {
                lo = hi;
                hi *= 4.0;
            }
            if third(lo)? >= 0.0 {
                return Err(Error::SolverFailure("Picard: third equation has no positive root".into()));
            }
            let (s_new, _) = bracket_root(third, lo, hi, 1e-12, 0.0)?;
            let r = self.residuals_with(psi, k, c1, c2, s_new);
            let c1_new = c1 - r[0];
            let c2sq = (c1 * c1 + c2 * c2 - r[1]) - c1_new * c1_new;
            let c2_new = if c2sq > 0.0 { c2sq.sqrt() } else { 0.5 * c2 };
            let delta = (c1_new - c1).abs().max((c2_new - c2).abs()).max((s_new - s).abs());
            c1 = 0.5 * (c1 + c1_new);
            c2 = 0.5 * (c2 + c2_new);
            s = 0.5 * (s + s_new);
            if c2 < self.options.c2_guard {
                return Err(Error::SolverFailure("Picard: c2 collapsed".into()));
            }
            if delta < 1e-6 {
                break;
            }
        }
        Ok([c1, c2, s])
    }

    fn t_of(&self, psi: f64, fp: &FixedPoint) -> Result<f64> {
        let e = self.fk.eval(fp.kappa, fp.c1, fp.c2)?;
        Ok((e.value - fp.c1 * e.d_c1 - fp.c2 * e.d_c2) / psi.sqrt() - fp.s)
    }

    /// `T(ψ, κ)`.
    pub fn t_value(&self, psi: f64, kappa: f64) -> Result<f64> {
        let fp = self.solve_fixed_point(psi, kappa)?;
        self.t_of(psi, &fp)
    }

    /// `T(ψ, κ)` together with the fixed point it was assembled from.
    pub fn t_value_from(&self, psi: f64, kappa: f64, start: Option<[f64; 3]>) -> Result<(f64, FixedPoint)> {
        let fp = self.solve_fixed_point_from(psi, kappa, start)?;
        Ok((self.t_of(psi, &fp)?, fp))
    }

    /// `κ*(ψ)`, the zero of `T(ψ, ·)`, with `ν*` and `Err*`.
    pub fn kappa_star(&self, psi: f64) -> Result<AsymptoticPrediction> {
        let psi_star0 = self.psi_star_0()?;
        if !(psi > psi_star0) {
            return Err(Error::BelowThreshold { psi, psi_star0 });
        }
        let warm: Cell<Option<[f64; 3]>> = Cell::new(None);
        // Outside the domain T is on its positive side (T → +∞ as ψ ↓ ψ↓).
        let t = |kappa: f64| -> Result<f64> {
            if psi <= self.psi_down(kappa)? + 1e-6 {
                return Ok(1.0);
            }
            let (t, fp) = self.t_value_from(psi, kappa, warm.get())?;
            warm.set(Some([fp.c1, fp.c2, fp.s]));
            Ok(t)
        };
        let mut lo = 1e-4;
        if t(lo)? >= 0.0 {
            lo = 0.0;
        }
        let mut hi = 1.0f64.max(2.0 * lo);
        let mut grown = 0;
        while t(hi)? <= 0.0 {
            lo = hi;
            hi *= 2.0;
            grown += 1;
            if grown > 60 {
                return Err(Error::SolverFailure(format!("no upper bracket for kappa at psi={psi}")));
            }
        }
        let (kappa, _) = bracket_root(&t, lo, hi, self.options.bisection_width, 1e-11)?;
        let fp = self.solve_fixed_point_from(psi, kappa, warm.get())?;
        let nu = fp.nu();
        Ok(AsymptoticPrediction {
            psi,
            psi_star0,
            psi_down: self.psi_down(kappa)?,
            kappa_star: kappa,
            nu_star: nu,
            err_star: self.model().q_error(nu)?,
            fixed_point: fp,
        })
    }

    /// `4 r √ψ / κ*` with `r² = E_μ[X]`.
    pub fn margin_bound(&self, prediction: &AsymptoticPrediction) -> f64 {
        margin_bound(prediction, &self.measure)
    }

    /// Samples of `(X, W, H_{ψ,κ}(G, X, W))` at the prediction's fixed point.
    pub fn limit_coordinate_law(
        &self,
        prediction: &AsymptoticPrediction,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<CoordinateSample>> {
        let fp = &prediction.fixed_point;
        let (k, _) = self.coefs(fp.kappa, fp.c1, fp.c2)?;
        let sp = fp.psi.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n_samples)
            .map(|_| {
                let (x, w) = self.measure.sample(&mut rng);
                let g: f64 = StandardNormal.sample(&mut rng);
                let h = if x > 0.0 {
                    let sx = x.sqrt();
                    -(sp * g + k.a * w) / (k.b * sx + sp * fp.s / sx)
                } else {
                    0.0
                };
                CoordinateSample { x, w, h }
            })
            .collect())
    }
}

/// `4 r √ψ / κ*` with `r² = E_μ[X]`; vacuous whenever it is at least 1.
pub fn margin_bound(prediction: &AsymptoticPrediction, measure: &SpectralMeasure) -> f64 {
    let r = measure.expect(|x, _| x).sqrt();
    4.0 * r * prediction.psi.sqrt() / prediction.kappa_star
}

/// `ψ*(0) = min_c F₀(c, 1)²`.
pub fn psi_star_0(model: &LabelModel) -> Result<f64> {
    psi_star_0_with(&FKappa::new(model))
}

fn psi_star_0_with(fk: &FKappa) -> Result<f64> {
    let slope = |c: f64| -> Result<f64> { Ok(fk.eval(0.0, c, 1.0)?.d_c1) };
    let (mut a, mut b) = (-10.0f64, 10.0f64);
    while slope(b)? < 0.0 {
        a = a.max(0.5 * b);
        b *= 2.0;
        if b > 1e6 {
            return Err(Error::NoInteriorMinimum(format!("F_0(c,1) still decreasing at c={b}")));
        }
    }
    while slope(a)? > 0.0 {
        b = b.min(0.5 * a);
        a *= 2.0;
        if a < -1e6 {
            return Err(Error::NoInteriorMinimum(format!("F_0(c,1) still increasing at c={a}")));
        }
    }
    let tol = 1e-10 * (b - a).max(1.0);
    let (_, v) = golden_section(|c| Ok(fk.value(0.0, c, 1.0)?.powi(2)), a, b, tol)?;
    Ok(v)
}

/// Result of the closed isotropic route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicDirect {
    pub psi: f64,
    pub kappa_star: f64,
    /// Minimizing `c`, which is also `ν*`.
    pub c_star: f64,
    pub err_star: f64,
}

const DIRECT_GRID: usize = 2001;

/// `min_c F_κ(c, √(1-c²)) - √(ψ(1-c²))` over `c ∈ [-1, 1]` by a dense grid
/// followed by golden-section refinement around the best grid point.
fn direct_minimum(fk: &FKappa, psi: f64, kappa: f64, grid: usize) -> Result<(f64, f64)> {
    let h = |c: f64| -> Result<f64> {
        let c = c.clamp(-1.0, 1.0);
        let s = (1.0 - c * c).max(0.0).sqrt();
        Ok(fk.value(kappa, c, s)? - (psi * (1.0 - c * c)).max(0.0).sqrt())
    };
    let step = 2.0 / (grid - 1) as f64;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..grid {
        let v = h(-1.0 + step * i as f64)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let center = -1.0 + step * best.0 as f64;
    let (lo, hi) = ((center - step).max(-1.0), (center + step).min(1.0));
    let (c, v) = golden_section(h, lo, hi, 1e-12)?;
    Ok(if v <= best.1 { (c, v) } else { (center, best.1) })
}

/// Isotropic `κ*` from the one-dimensional characterization: the smallest
/// `κ` at which `F_κ(c, √(1-c²)) - √(ψ(1-c²))` is positive for every `c`.
pub fn kappa_star_isotropic_direct(model: &LabelModel, psi: f64) -> Result<IsotropicDirect> {
    kappa_star_isotropic_direct_with(&FKappa::new(model), psi, DIRECT_GRID)
}

/// As [`kappa_star_isotropic_direct`] with an explicit evaluator and grid size.
pub fn kappa_star_isotropic_direct_with(fk: &FKappa, psi: f64, grid: usize) -> Result<IsotropicDirect> {
    if grid < 3 {
        return Err(Error::invalid("direct route needs at least 3 grid points"));
    }
    let m = |kappa: f64| -> Result<f64> { Ok(direct_minimum(fk, psi, kappa, grid)?.1) };
    if m(0.0)? >= 0.0 {
        return Err(Error::BelowThreshold {
            psi,
            psi_star0: psi_star_0_with(fk)?,
        });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while m(hi)? <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::SolverFailure(format!("no upper bracket for kappa at psi={psi}")));
        }
    }
    let (kappa, _) = bracket_root(m, lo, hi, 1e-10, 1e-13)?;
    let (c, _) = direct_minimum(fk, psi, kappa, grid)?;
    Ok(IsotropicDirect {
        psi,
        kappa_star: kappa,
        c_star: c,
        err_star: fk.model().q_error(c)?,
    })
}

/// `γ(ψ) = min(ψ/ψ0, 1)`: squared norm of the observed part of `β*`.
pub fn misspecified_gamma(psi0: f64, psi: f64) -> f64 {
    (psi / psi0).min(1.0)
}

fn misspecified_model(base: &LabelModel, psi0: f64, psi: f64) -> Result<LabelModel> {
    if !(psi0 > 0.0 && psi > 0.0) {
        return Err(Error::invalid(format!("need psi0 > 0 and psi > 0, got {psi0}, {psi}")));
    }
    let gamma = misspecified_gamma(psi0, psi);
    if gamma >= 1.0 {
        Ok(base.clone())
    } else {
        LabelModel::misspecified(base.clone(), gamma)
    }
}

/// Prediction for the misspecified isotropic model at `ψ`.
pub fn misspecified_prediction(base: &LabelModel, psi0: f64, psi: f64) -> Result<AsymptoticPrediction> {
    let model = misspecified_model(base, psi0, psi)?;
    Asymptotics::new(&model, SpectralMeasure::isotropic()).kappa_star(psi)
}

/// `ψ*_miss = inf{ψ : ψ > ψ*(0; γ(ψ))}`.
pub fn misspecified_threshold(base: &LabelModel, psi0: f64) -> Result<f64> {
    let gap = |psi: f64| -> Result<f64> { Ok(psi - psi_star_0(&misspecified_model(base, psi0, psi)?)?) };
    let mut lo = 1e-3 * psi0;
    while gap(lo)? >= 0.0 {
        lo *= 0.5;
        if lo < 1e-12 {
            return Err(Error::SolverFailure("misspecified threshold below 1e-12".into()));
        }
    }
    let mut hi = psi0;
    while gap(hi)? <= 0.0 {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::SolverFailure("misspecified threshold not bracketed".into()));
        }
    }
    Ok(bracket_root(gap, lo, hi, 1e-10, 0.0)?.0)
}

/// Gaussian-equivalent random-features prediction at `(ψ1, ψ2)`.
pub fn rf_prediction(
    base: &LabelModel,
    coeffs: &ActivationCoeffs,
    psi1: f64,
    psi2: f64,
) -> Result<AsymptoticPrediction> {
    rf_asymptotics(base, coeffs, psi1, DEFAULT_MP_ORDER, CompositeSpec::default())?.kappa_star(psi1 / psi2)
}

/// The solver for the random-features measure at `ψ1`, with its effective
/// label model `E f0(√(1-τ²) G + τ G')`.
pub fn rf_asymptotics(
    base: &LabelModel,
    coeffs: &ActivationCoeffs,
    psi1: f64,
    mp_order: usize,
    spec: CompositeSpec,
) -> Result<Asymptotics> {
    let tau = rf_tau_with_order(psi1, coeffs, mp_order)?;
    let model = LabelModel::rf_effective(base.clone(), tau)?;
    let measure = SpectralMeasure::rf_gaussian_equiv_with_order(psi1, coeffs.gamma1, coeffs.gamma_star, mp_order)?;
    Asymptotics::with_spec(&model, measure, spec)
}

/// Wide-network (`ψ1 → ∞`) margin and error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WideLimit {
    pub kappa_bar_wide: f64,
    pub d1: f64,
    pub d2: f64,
    pub nu_wide: f64,
    pub err_wide: f64,
    pub psi2: f64,
    pub gamma1: f64,
    pub gamma_star: f64,
}

/// `R(κ̄, d1, d2) = F_κ̄(√ψ2 γ1 d1, √ψ2 γ1 d2) - γ1 d2 - γ* √(1 - d1² - d2²)`.
#[derive(Debug, Clone)]
pub struct WideProblem {
    fk: FKappa,
    psi2: f64,
    gamma1: f64,
    gamma_star: f64,
}

impl WideProblem {
    pub fn new(psi2: f64, coeffs: &ActivationCoeffs, base: &LabelModel) -> Result<Self> {
        if !(psi2 > 0.0 && coeffs.gamma1 > 0.0 && coeffs.gamma_star > 0.0) {
            return Err(Error::invalid(format!(
                "need psi2, gamma1, gamma_star > 0, got {psi2}, {}, {}",
                coeffs.gamma1, coeffs.gamma_star
            )));
        }
        Ok(Self {
            fk: FKappa::new(base),
            psi2,
            gamma1: coeffs.gamma1,
            gamma_star: coeffs.gamma_star,
        })
    }

    fn scale(&self) -> f64 {
        self.psi2.sqrt() * self.gamma1
    }

    pub fn objective(&self, kbar: f64, d1: f64, d2: f64) -> Result<f64> {
        let q = self.scale();
        let rest = (1.0 - d1 * d1 - d2 * d2).max(0.0).sqrt();
        Ok(self.fk.value(kbar, q * d1, q * d2)? - self.gamma1 * d2 - self.gamma_star * rest)
    }

    /// `∇R` in `(d1, d2)`; requires `d1² + d2² < 1`.
    pub fn gradient(&self, kbar: f64, d1: f64, d2: f64) -> Result<[f64; 2]> {
        let q = self.scale();
        let e = self.fk.eval(kbar, q * d1, q * d2)?;
        let rest = (1.0 - d1 * d1 - d2 * d2).sqrt();
        Ok([
            q * e.d_c1 + self.gamma_star * d1 / rest,
            q * e.d_c2 - self.gamma1 + self.gamma_star * d2 / rest,
        ])
    }

    fn grad_hess(&self, kbar: f64, d: &Vector2<f64>) -> Result<(Vector2<f64>, Matrix2<f64>)> {
        let q = self.scale();
        let (e, h) = self.fk.eval_with_hessian(kbar, q * d[0], q * d[1])?;
        let r2 = d.norm_squared();
        let rest = (1.0 - r2).sqrt();
        let gs = self.gamma_star;
        let g = Vector2::new(
            q * e.d_c1 + gs * d[0] / rest,
            q * e.d_c2 - self.gamma1 + gs * d[1] / rest,
        );
        let cap = gs / (rest * rest * rest);
        let hess = Matrix2::new(h.d11, h.d12, h.d12, h.d22) * (q * q)
            + (Matrix2::identity() * (1.0 - r2) + d * d.transpose()) * cap;
        Ok((g, hess))
    }

    /// Minimizer of `R(κ̄, ·, ·)` over `{d1² + d2² < 1, d2 > 0}` by damped
    /// Newton kept strictly inside the set. Returns `(d1, d2, R)`.
    pub fn minimize(&self, kbar: f64) -> Result<(f64, f64, f64)> {
        self.minimize_from(kbar, [0.0, 0.5])
    }

    pub fn minimize_from(&self, kbar: f64, start: [f64; 2]) -> Result<(f64, f64, f64)> {
        let inside = |d: &Vector2<f64>| d.norm_squared() < 1.0 && d[1] > 0.0;
        let mut d = Vector2::new(start[0], start[1]);
        if !inside(&d) {
            d = Vector2::new(0.0, 0.5);
        }
        let mut val = self.objective(kbar, d[0], d[1])?;
        for _ in 0..500 {
            let (g, hess) = self.grad_hess(kbar, &d)?;
            if g.norm() <= 1e-11 {
                break;
            }
            let mut step = match hess.cholesky() {
                Some(ch) => ch.solve(&(-g)),
                None => -g,
            };
            if step.dot(&g) >= 0.0 {
                step = -g;
            }
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-14 {
                let trial = d + step * t;
                if inside(&trial) {
                    let v = self.objective(kbar, trial[0], trial[1])?;
                    if v <= val + 1e-4 * t * step.dot(&g) {
                        d = trial;
                        val = v;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let gap = 1.0 - d.norm_squared();
        if gap < 1e-9 {
            return Err(Error::BoundaryDegeneracy(gap));
        }
        let g = self.gradient(kbar, d[0], d[1])?;
        let gnorm = g[0].hypot(g[1]);
        if gnorm > 1e-7 {
            return Err(Error::SolverFailure(format!("wide-limit inner problem: gradient norm {gnorm:e}")));
        }
        Ok((d[0], d[1], val))
    }

    /// `T∞(κ̄) = min R(κ̄, ·, ·)`.
    pub fn t_infinity(&self, kbar: f64) -> Result<f64> {
        Ok(self.minimize(kbar)?.2)
    }

    pub fn solve(&self, base: &LabelModel) -> Result<WideLimit> {
        let warm = Cell::new([0.0, 0.5]);
        let t = |kbar: f64| -> Result<f64> {
            // R(0, 0, 0) = -γ* already shows T∞(0) < 0.
            if kbar == 0.0 {
                return Ok(-self.gamma_star);
            }
            let (d1, d2, v) = self.minimize_from(kbar, warm.get())?;
            warm.set([d1, d2]);
            Ok(v)
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while t(hi)? <= 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e8 {
                return Err(Error::SolverFailure("T_infinity has no positive bracket".into()));
            }
        }
        let (kbar, _) = bracket_root(&t, lo, hi, 1e-12, 1e-10)?;
        let (d1, d2, _) = self.minimize_from(kbar, warm.get())?;
        let nu = d1 / d1.hypot(d2);
        Ok(WideLimit {
            kappa_bar_wide: kbar,
            d1,
            d2,
            nu_wide: nu,
            err_wide: base.q_error(nu)?,
            psi2: self.psi2,
            gamma1: self.gamma1,
            gamma_star: self.gamma_star,
        })
    }
}

/// Wide-network limit for base label model `f0` (`τ = 0`).
pub fn wide_limit(psi2: f64, coeffs: &ActivationCoeffs, base: &LabelModel) -> Result<WideLimit> {
    WideProblem::new(psi2, coeffs, base)?.solve(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_noise_isotropic_closed_form() {
        // With flip ≡ 1/2 and X = 1 the solution is c1 = 0, c2 = 1 and
        // s = 1 - ∂₂F(0,1)/√ψ; T = F(0,1)/√ψ - 1 by Euler's identity.
        let ast = Asymptotics::new(&LabelModel::pure_noise(), SpectralMeasure::isotropic());
        let (psi, kappa) = (2.0, 0.3);
        let fp = ast.solve_fixed_point(psi, kappa).unwrap();
        let g = ast.fkappa().eval(kappa, 0.0, 1.0).unwrap();
        assert!(fp.c1.abs() < 1e-9, "{fp:?}");
        assert!((fp.c2 - 1.0).abs() < 1e-9, "{fp:?}");
        assert!((fp.s - (1.0 - g.d_c2 / psi.sqrt())).abs() < 1e-9, "{fp:?}");
        assert!(fp.max_residual() <= 1e-9);
        let t = ast.t_value(psi, kappa).unwrap();
        assert!((t - (g.value / psi.sqrt() - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn pure_noise_threshold() {
        let v = psi_star_0(&LabelModel::pure_noise()).unwrap();
        assert!((v - 0.5).abs() < 1e-10, "{v}");
    }

    #[test]
    fn wide_gradient_matches_differences() {
        let base = LabelModel::logistic(2.0).unwrap();
        let coeffs = ActivationCoeffs {
            gamma0: 0.0,
            gamma1: 0.5,
            gamma_star: 0.3,
        };
        let p = WideProblem::new(2.0, &coeffs, &base).unwrap();
        let (k, d1, d2) = (0.4, 0.3, 0.5);
        let g = p.gradient(k, d1, d2).unwrap();
        let h = 1e-6;
        let f1 = (p.objective(k, d1 + h, d2).unwrap() - p.objective(k, d1 - h, d2).unwrap()) / (2.0 * h);
        let f2 = (p.objective(k, d1, d2 + h).unwrap() - p.objective(k, d1, d2 - h).unwrap()) / (2.0 * h);
        assert!((g[0] - f1).abs() < 1e-8 && (g[1] - f2).abs() < 1e-8, "{g:?} vs {f1} {f2}");
    }
}
