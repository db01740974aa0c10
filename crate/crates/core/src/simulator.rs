//! Finite-sample engine: data generators, the hard-margin solver, exact test
//! error, the soft-margin classifier and logistic gradient descent.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asymptotics::CoordinateSample;
use crate::error::{Error, Result};
use crate::labelmodel::LabelModel;
use crate::measures::Activation;
use crate::roots::bracket_root;

/// How features and labels are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// `x ~ N(0, I_p)`, `P(y = 1 | x) = f(⟨θ*, x⟩)` with `θ*` uniform on the sphere.
    Isotropic,
    /// Labels from `p0` latent Gaussian features with equal-magnitude weights;
    /// the first `p` of them are observed.
    Misspecified { p0: usize },
    /// `x = σ(Wz) - γ0` with unit rows `w_j`, labels from `⟨β*, z⟩`.
    RfNonlinear { d: usize, activation: Activation },
    /// `x = γ1 W z + γ* ξ`, labels from `⟨β*, z⟩`.
    RfNoisyLinear { d: usize, gamma1: f64, gamma_star: f64 },
}

impl GeneratorSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            GeneratorSpec::Isotropic => "isotropic",
            GeneratorSpec::Misspecified { .. } => "misspecified",
            GeneratorSpec::RfNonlinear { .. } => "rf_nonlinear",
            GeneratorSpec::RfNoisyLinear { .. } => "rf_noisy_linear",
        }
    }

    pub fn latent_dim(&self) -> Option<usize> {
        match *self {
            GeneratorSpec::RfNonlinear { d, .. } | GeneratorSpec::RfNoisyLinear { d, .. } => Some(d),
            _ => None,
        }
    }
}

/// Feature covariance in a form that allows exact `Σ`-inner products.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Identity,
    /// `γ1² W Wᵀ + γ*² I` with `W` of shape `p × d`.
    LowRank { w: DMatrix<f64>, gamma1: f64, gamma_star: f64 },
}

impl Covariance {
    /// `⟨a, b⟩_Σ`.
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        match self {
            Covariance::Identity => a.dot(b),
            Covariance::LowRank { w, gamma1, gamma_star } => {
                let wa = w.tr_mul(a);
                let wb = w.tr_mul(b);
                gamma1 * gamma1 * wa.dot(&wb) + gamma_star * gamma_star * a.dot(b)
            }
        }
    }

    pub fn dense(&self, p: usize) -> DMatrix<f64> {
        match self {
            Covariance::Identity => DMatrix::identity(p, p),
            Covariance::LowRank { w, gamma1, gamma_star } => {
                let mut s = w * w.transpose() * (gamma1 * gamma1);
                for i in 0..p {
                    s[(i, i)] += gamma_star * gamma_star;
                }
                s
            }
        }
    }
}

/// Latent quantities of the random-features generators.
#[derive(Debug, Clone, PartialEq)]
pub struct RfLatent {
    /// `n × d` latent inputs.
    pub z: DMatrix<f64>,
    /// `p × d` first-layer weights with unit rows.
    pub w: DMatrix<f64>,
    pub beta_star: DVector<f64>,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma_star: f64,
    pub alpha_n: f64,
    pub tau_n: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `n × p`, one sample per row.
    pub features: DMatrix<f64>,
    /// Entries in `{-1, +1}`.
    pub labels: Vec<f64>,
    pub generator: GeneratorSpec,
    pub base: LabelModel,
    pub covariance: Covariance,
    /// Unit vector `θ*` such that labels depend on `x` through `⟨θ*, x⟩`.
    pub theta_star: DVector<f64>,
    /// `‖θ*‖_Σ`.
    pub rho_n: f64,
    /// Label model at the standardized signal `⟨θ*, x⟩ / ρ_n`.
    pub effective_model: LabelModel,
    pub rf: Option<RfLatent>,
    pub seed: u64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Filled row by row so the draw order does not depend on storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    let v = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let norm = v.norm();
    v / norm
}

fn draw_labels(rng: &mut ChaCha8Rng, base: &LabelModel, signal: &DVector<f64>) -> Vec<f64> {
    signal
        .iter()
        .map(|&g| if rng.random::<f64>() < base.flip_probability(g) { 1.0 } else { -1.0 })
        .collect()
}

/// Draws `n` samples in dimension `p` from `spec` with link `base`.
pub fn sample_dataset(spec: &GeneratorSpec, base: &LabelModel, n: usize, p: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || p == 0 {
        return Err(Error::invalid(format!("dimensions must be positive, got n={n}, p={p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec {
        GeneratorSpec::Isotropic => {
            let theta = unit_vector(&mut rng, p);
            let x = gaussian_matrix(&mut rng, n, p);
            let labels = draw_labels(&mut rng, base, &(&x * &theta));
            Ok(Dataset {
                features: x,
                labels,
                generator: spec.clone(),
                base: base.clone(),
                covariance: Covariance::Identity,
                theta_star: theta,
                rho_n: 1.0,
                effective_model: base.clone(),
                rf: None,
                seed,
            })
        }
        GeneratorSpec::Misspecified { p0 } => {
            let p0 = *p0;
            if p0 == 0 {
                return Err(Error::invalid("p0 must be positive"));
            }
            let full = p.max(p0);
            let signs: Vec<f64> = (0..p0).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let z = gaussian_matrix(&mut rng, n, full);
            let mut beta = DVector::zeros(full);
            for (i, s) in signs.iter().enumerate() {
                beta[i] = s / (p0 as f64).sqrt();
            }
            let labels = draw_labels(&mut rng, base, &(&z * &beta));
            let x = z.columns(0, p).into_owned();
            let observed = beta.rows(0, p).into_owned();
            let gamma_n = observed.norm_squared();
            let effective_model = if gamma_n >= 1.0 {
                base.clone()
            } else {
                LabelModel::misspecified(base.clone(), gamma_n)?
            };
            Ok(Dataset {
                features: x,
                labels,
                generator: spec.clone(),
                base: base.clone(),
                covariance: Covariance::Identity,
                theta_star: &observed / observed.norm(),
                rho_n: 1.0,
                effective_model,
                rf: None,
                seed,
            })
        }
        GeneratorSpec::RfNonlinear { d, activation } => {
            let c = activation.coeffs()?;
            let (w, z, beta, labels) = rf_latent(&mut rng, base, n, p, *d)?;
            let pre = &z * w.transpose();
            let x = pre.map(|u| activation.eval(u) - c.gamma0);
            finish_rf(spec, base, x, labels, w, z, beta, c.gamma0, c.gamma1, c.gamma_star, seed)
        }
        GeneratorSpec::RfNoisyLinear { d, gamma1, gamma_star } => {
            if !(*gamma1 > 0.0 && *gamma_star > 0.0) {
                return Err(Error::invalid("gamma1 and gamma_star must be positive"));
            }
            let (w, z, beta, labels) = rf_latent(&mut rng, base, n, p, *d)?;
            let xi = gaussian_matrix(&mut rng, n, p);
            let x = &z * w.transpose() * *gamma1 + xi * *gamma_star;
            finish_rf(spec, base, x, labels, w, z, beta, 0.0, *gamma1, *gamma_star, seed)
        }
    }
}

type Latent = (DMatrix<f64>, DMatrix<f64>, DVector<f64>, Vec<f64>);

fn rf_latent(rng: &mut ChaCha8Rng, base: &LabelModel, n: usize, p: usize, d: usize) -> Result<Latent> {
    if d == 0 {
        return Err(Error::invalid("d must be positive"));
    }
    let mut w = gaussian_matrix(rng, p, d);
    for mut row in w.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    let beta = unit_vector(rng, d);
    let z = gaussian_matrix(rng, n, d);
    let labels = draw_labels(rng, base, &(&z * &beta));
    Ok((w, z, beta, labels))
}

#[allow(clippy::too_many_arguments)]
fn finish_rf(
    spec: &GeneratorSpec,
    base: &LabelModel,
    x: DMatrix<f64>,
    labels: Vec<f64>,
    w: DMatrix<f64>,
    z: DMatrix<f64>,
    beta: DVector<f64>,
    gamma0: f64,
    gamma1: f64,
    gamma_star: f64,
    seed: u64,
) -> Result<Dataset> {
    let d = w.ncols();
    // Push-through: (γ1²WWᵀ + γ*²I)⁻¹W = W(γ1²WᵀW + γ*²I)⁻¹, a d × d solve.
    let mut m = w.tr_mul(&w) * (gamma1 * gamma1);
    for i in 0..d {
        m[(i, i)] += gamma_star * gamma_star;
    }
    let u = m
        .cholesky()
        .ok_or_else(|| Error::NumericConsistency("gamma1^2 W'W + gamma_star^2 I is not positive definite".into()))?
        .solve(&beta);
    let wu = &w * &u;
    let wb = &w * &beta;
    let alpha_n = gamma1 * wu.norm();
    let tau2 = 1.0 - gamma1 * gamma1 * wb.dot(&wu);
    if !(tau2 > 0.0) || alpha_n <= 0.0 {
        return Err(Error::NumericConsistency(format!("tau_n^2 = {tau2}, alpha_n = {alpha_n}")));
    }
    let tau_n = tau2.sqrt();
    let theta = &wu * (gamma1 / alpha_n);
    let covariance = Covariance::LowRank {
        w: w.clone(),
        gamma1,
        gamma_star,
    };
    let rho_n = covariance.inner(&theta, &theta).sqrt();
    Ok(Dataset {
        features: x,
        labels,
        generator: spec.clone(),
        base: base.clone(),
        covariance,
        theta_star: theta,
        rho_n,
        effective_model: LabelModel::rf_effective(base.clone(), tau_n)?,
        rf: Some(RfLatent {
            z,
            w,
            beta_star: beta,
            gamma0,
            gamma1,
            gamma_star,
            alpha_n,
            tau_n,
        }),
        seed,
    })
}

/// Hard-margin solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxMarginOptions {
    /// Max projected-gradient violation of the dual, `|y_i⟨θ̃, x_i⟩ - 1|` on the support.
    pub kkt_tol: f64,
    pub max_epochs: usize,
    /// Epochs between exact solves on the current support.
    pub polish_every: usize,
    /// Seeds the sweep permutations.
    pub seed: u64,
}

impl Default for MaxMarginOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_epochs: 100_000,
            polish_every: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxMarginSolution {
    /// Unit vector `θ̂`.
    pub direction: DVector<f64>,
    /// `min_i y_i⟨θ̂, x_i⟩`.
    pub margin: f64,
    pub dual: Vec<f64>,
    /// Unnormalized primal `θ̃ = Σ α_i y_i x_i`.
    pub theta_tilde: DVector<f64>,
    /// Duality bound `‖θ̃‖ / ‖α‖₁ ≥ κ_n`.
    pub margin_upper: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MaxMarginSolution {
    /// `(upper - margin) / upper`.
    pub fn relative_gap(&self) -> f64 {
        (self.margin_upper - self.margin) / self.margin_upper
    }
}

pub fn max_margin(dataset: &Dataset) -> Result<MaxMarginSolution> {
    max_margin_with(&dataset.features, &dataset.labels, MaxMarginOptions {
        seed: dataset.seed,
        ..Default::default()
    })
}

fn kkt_violation(alpha: &[f64], grad: &DVector<f64>) -> f64 {
    alpha
        .iter()
        .zip(grad.iter())
        .map(|(&a, &g)| if a > 0.0 { g.abs() } else { (-g).max(0.0) })
        .fold(0.0, f64::max)
}

/// Dual coordinate descent for `min ½‖θ‖²` s.t. `y_i⟨θ, x_i⟩ ≥ 1`, run on the
/// label-signed Gram matrix, with periodic exact solves on the support.
pub fn max_margin_with(x: &DMatrix<f64>, y: &[f64], opts: MaxMarginOptions) -> Result<MaxMarginSolution> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::invalid(format!("{} rows but {} labels", n, y.len())));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid("labels must be +1 or -1"));
    }
    let mut k = x * x.transpose();
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] *= y[i] * y[j];
        }
    }
    if (0..n).any(|i| k[(i, i)] <= 0.0) {
        return Err(Error::NonSeparable(0.0));
    }
    let scale = (0..n).map(|i| k[(i, i)]).fold(0.0, f64::max).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = DVector::from_element(n, -1.0);
    let mut epochs = 0;
    let mut converged = false;
    while epochs < opts.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let new = (alpha[i] - grad[i] / k[(i, i)]).max(0.0);
            let delta = new - alpha[i];
            if delta != 0.0 {
                alpha[i] = new;
                grad.axpy(delta, &k.column(i), 1.0);
            }
        }
        epochs += 1;
        if epochs % 50 == 0 {
            grad = &k * DVector::from_column_slice(&alpha) - DVector::from_element(n, 1.0);
        }
        let mut viol = kkt_violation(&alpha, &grad);
        if epochs % opts.polish_every == 0 && viol > opts.kkt_tol {
            if let Some((a, g)) = polish(&k, &alpha) {
                let v = kkt_violation(&a, &g);
                if v < viol {
                    alpha = a;
                    grad = g;
                    viol = v;
                }
            }
        }
        if viol <= opts.kkt_tol {
            converged = true;
            break;
        }
        let l1: f64 = alpha.iter().sum();
        if l1 > 1e10 {
            return Err(Error::NonSeparable(upper_bound(x, y, &alpha)));
        }
        // Duality bound: once it is negligible against the feature scale
        // no positive margin can exist.
        if epochs % 100 == 0 && upper_bound(x, y, &alpha) < 1e-9 * scale {
            return Err(Error::NonSeparable(upper_bound(x, y, &alpha)));
        }
    }
    let ay = DVector::from_iterator(n, alpha.iter().zip(y).map(|(a, y)| a * y));
    let theta = x.tr_mul(&ay);
    let norm = theta.norm();
    if norm == 0.0 {
        return Err(Error::NonSeparable(0.0));
    }
    let direction = &theta / norm;
    let margins = x * &direction;
    let margin = margins.iter().zip(y).map(|(m, y)| m * y).fold(f64::INFINITY, f64::min);
    if !converged && margin <= 0.0 {
        return Err(Error::NonSeparable(upper_bound(x, y, &alpha)));
    }
    let l1: f64 = alpha.iter().sum();
    Ok(MaxMarginSolution {
        direction,
        margin,
        dual: alpha,
        theta_tilde: theta,
        margin_upper: norm / l1,
        iterations: epochs,
        converged,
    })
}

fn upper_bound(x: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let l1: f64 = alpha.iter().sum();
    if l1 == 0.0 {
        return f64::INFINITY;
    }
    let ay = DVector::from_iterator(alpha.len(), alpha.iter().zip(y).map(|(a, y)| a * y));
    x.tr_mul(&ay).norm() / l1
}

/// Solves `K_SS α_S = 1` on the current support; accepted only when the
/// result stays nonnegative.
fn polish(k: &DMatrix<f64>, alpha: &[f64]) -> Option<(Vec<f64>, DVector<f64>)> {
    let support: Vec<usize> = (0..alpha.len()).filter(|&i| alpha[i] > 0.0).collect();
    if support.is_empty() {
        return None;
    }
    let m = support.len();
    let sub = DMatrix::from_fn(m, m, |a, b| k[(support[a], support[b])]);
    let sol = sub.cholesky()?.solve(&DVector::from_element(m, 1.0));
    if sol.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let mut a = vec![0.0; alpha.len()];
    for (idx, &i) in support.iter().enumerate() {
        a[i] = sol[idx];
    }
    let g = k * DVector::from_column_slice(&a) - DVector::from_element(alpha.len(), 1.0);
    Some((a, g))
}

/// Output of [`logistic_descent`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRun {
    pub direction: DVector<f64>,
    /// Loss after each accepted step.
    pub losses: Vec<f64>,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn logistic_loss(x: &DMatrix<f64>, y: &[f64], theta: &DVector<f64>) -> f64 {
    let m = x * theta;
    m.iter().zip(y).map(|(m, y)| softplus(-y * m)).sum::<f64>() / y.len() as f64
}

/// Gradient descent on the mean logistic loss from `θ = 0`; a step that
/// would increase the loss is halved until it does not.
pub fn logistic_descent(dataset: &Dataset, steps: usize, step_size: f64) -> Result<LogisticRun> {
    let (x, y) = (&dataset.features, &dataset.labels);
    let n = y.len() as f64;
    let mut theta = DVector::zeros(x.ncols());
    let mut loss = logistic_loss(x, y, &theta);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let m = x * &theta;
        // d/dm softplus(-y m) = -y σ(-y m).
        let coef = DVector::from_iterator(
            y.len(),
            m.iter().zip(y).map(|(m, y)| {
                let t = -y * m;
                let s = if t >= 0.0 { 1.0 / (1.0 + (-t).exp()) } else { t.exp() / (1.0 + t.exp()) };
                -y * s / n
            }),
        );
        let grad = x.tr_mul(&coef);
        let mut eta = step_size;
        loop {
            let trial = &theta - &grad * eta;
            let l = logistic_loss(x, y, &trial);
            if l <= loss || eta < 1e-12 {
                if l <= loss {
                    theta = trial;
                    loss = l;
                }
                break;
            }
            eta *= 0.5;
        }
        losses.push(loss);
    }
    let norm = theta.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(LogisticRun {
        direction: theta / norm,
        losses,
    })
}

/// Direction of [`logistic_descent`].
pub fn logistic_direction(dataset: &Dataset, steps: usize, step_size: f64) -> Result<DVector<f64>> {
    Ok(logistic_descent(dataset, steps, step_size)?.direction)
}

/// Test points for the Monte Carlo error of nonlinear random features.
pub const MC_TEST_POINTS: usize = 20_000;

/// Classification error of the linear rule `sign⟨θ, x⟩`.
///
/// Exact for the Gaussian generators: `Q(ν)` under the effective label model
/// with `ν = ⟨θ, θ*⟩_Σ / (‖θ*‖_Σ ‖θ‖_Σ)`. For nonlinear random features
/// the error is averaged over [`MC_TEST_POINTS`] fresh inputs with the label
/// noise integrated exactly.
pub fn exact_test_error(dataset: &Dataset, direction: &DVector<f64>) -> Result<f64> {
    let norm_sigma = dataset.covariance.inner(direction, direction).sqrt();
    if !(norm_sigma > 0.0) {
        return Err(Error::ZeroNorm);
    }
    if let (GeneratorSpec::RfNonlinear { activation, .. }, Some(rf)) = (&dataset.generator, &dataset.rf) {
        return Ok(mc_test_error(dataset, rf, activation, direction, MC_TEST_POINTS));
    }
    let nu = dataset.covariance.inner(direction, &dataset.theta_star) / (dataset.rho_n * norm_sigma);
    dataset.effective_model.q_error(nu.clamp(-1.0, 1.0))
}

fn mc_test_error(dataset: &Dataset, rf: &RfLatent, activation: &Activation, theta: &DVector<f64>, points: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(dataset.seed);
    rng.set_stream(1);
    let d = rf.w.ncols();
    let z = gaussian_matrix(&mut rng, points, d);
    let pre = &z * rf.w.transpose();
    let scores = pre.map(|u| activation.eval(u) - rf.gamma0) * theta;
    let signal = &z * &rf.beta_star;
    let total: f64 = scores
        .iter()
        .zip(signal.iter())
        .map(|(&s, &g)| {
            let f = dataset.base.flip_probability(g);
            if s > 0.0 {
                1.0 - f
            } else {
                f
            }
        })
        .sum();
    total / points as f64
}

/// Soft-margin classifier in the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMarginSolution {
    pub kappa_sm: f64,
    /// Unit vector in `R^d`.
    pub direction: DVector<f64>,
    /// Optimal `θ` with `‖θ‖ < 1`; `u` carries the rest of the unit budget.
    pub theta: DVector<f64>,
}

/// `(1/√d)‖(m·1 - γ1 y⊙Zθ)₊‖ - γ*√(1 - ‖θ‖²)`, whose minimum over the unit
/// ball is non-positive exactly when soft margin `m` is attainable.
#[derive(Debug, Clone)]
pub struct SoftMarginObjective {
    /// Rows `γ1 y_i z_i`.
    a: DMatrix<f64>,
    gamma_star: f64,
    sqrt_d: f64,
}

impl SoftMarginObjective {
    pub fn new(z: &DMatrix<f64>, y: &[f64], gamma1: f64, gamma_star: f64) -> Result<Self> {
        if z.nrows() != y.len() || y.is_empty() {
            return Err(Error::invalid("soft margin needs one label per row"));
        }
        if !(gamma1 > 0.0 && gamma_star > 0.0) {
            return Err(Error::invalid("gamma1 and gamma_star must be positive"));
        }
        let mut a = z * gamma1;
        for (i, &yi) in y.iter().enumerate() {
            a.row_mut(i).scale_mut(yi);
        }
        Ok(Self {
            a,
            gamma_star,
            sqrt_d: (z.ncols() as f64).sqrt(),
        })
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn value(&self, m: f64, theta: &DVector<f64>) -> f64 {
        let r2 = theta.norm_squared();
        if r2 > 1.0 {
            return f64::INFINITY;
        }
        let v = (&self.a * theta).map(|t| (m - t).max(0.0));
        v.norm() / self.sqrt_d - self.gamma_star * (1.0 - r2).sqrt()
    }

    /// Gradient and (generalized) Hessian at an interior point.
    fn grad_hess(&self, m: f64, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let dim = self.dim();
        let r2 = theta.norm_squared();
        let rest = (1.0 - r2).sqrt();
        let v = (&self.a * theta).map(|t| (m - t).max(0.0));
        let vn = v.norm();
        let mut grad = theta * (self.gamma_star / rest);
        let mut hess = (DMatrix::identity(dim, dim) * (1.0 - r2) + theta * theta.transpose())
            * (self.gamma_star / (rest * rest * rest));
        if vn > 0.0 {
            grad -= self.a.tr_mul(&v) / (self.sqrt_d * vn);
            let active: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
            let a_s = DMatrix::from_fn(active.len(), dim, |r, c| self.a[(active[r], c)]);
            let v_s = DVector::from_iterator(active.len(), active.iter().map(|&i| v[i] / vn));
            let av = a_s.tr_mul(&v_s);
            hess += (a_s.tr_mul(&a_s) - &av * av.transpose()) / (self.sqrt_d * vn);
        }
        (grad, hess)
    }

    /// Minimizes over the open unit ball by damped (semismooth) Newton with
    /// backtracking that stays inside the ball. Returns `(θ, value)`.
    pub fn minimize(&self, m: f64, start: Option<&DVector<f64>>) -> Result<(DVector<f64>, f64)> {
        let dim = self.dim();
        let mut theta = match start {
            Some(s) if s.norm_squared() < 1.0 => s.clone(),
            _ => DVector::zeros(dim),
        };
        let mut val = self.value(m, &theta);
        for _ in 0..200 {
            let (g, h) = self.grad_hess(m, &theta);
            let gnorm = g.norm();
            if gnorm <= 1e-12 {
                return Ok((theta, val));
            }
            let mut step = match h.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => -&g,
            };
            if step.dot(&g) >= 0.0 {
                step = -&g;
            }
            let slope = step.dot(&g);
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-16 {
                let trial = &theta + &step * t;
                if trial.norm_squared() < 1.0 {
                    let v = self.value(m, &trial);
                    if v <= val + 1e-4 * t * slope {
                        let decrease = val - v;
                        theta = trial;
                        val = v;
                        accepted = true;
                        if decrease <= 1e-15 * (1.0 + val.abs()) && gnorm < 1e-7 {
                            return Ok((theta, val));
                        }
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                if gnorm < 1e-7 {
                    return Ok((theta, val));
                }
                return Err(Error::SolverFailure(format!(
                    "soft-margin inner problem stalled with gradient norm {gnorm:e}"
                )));
            }
        }
        let (g, _) = self.grad_hess(m, &theta);
        if g.norm() < 1e-7 {
            Ok((theta, val))
        } else {
            Err(Error::SolverFailure(format!(
                "soft-margin inner problem did not converge (gradient norm {:e})",
                g.norm()
            )))
        }
    }
}

/// Soft margin `κ^SM` of `(Z, y)` and its direction, via the sign of the
/// minimal objective as a function of the margin level.
pub fn soft_margin(z: &DMatrix<f64>, y: &[f64], gamma1: f64, gamma_star: f64) -> Result<SoftMarginSolution> {
    let obj = SoftMarginObjective::new(z, y, gamma1, gamma_star)?;
    let warm = std::cell::RefCell::new(DVector::zeros(obj.dim()));
    let f = |m: f64| -> Result<f64> {
        let (theta, v) = obj.minimize(m, Some(&warm.borrow()))?;
        *warm.borrow_mut() = theta;
        Ok(v)
    };
    // m = 0 is always attainable (θ = 0 gives -γ*).
    let mut hi = 1.0;
    while f(hi)? <= 0.0 {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::SolverFailure("soft margin unbounded".into()));
        }
    }
    let (m, _) = bracket_root(&f, 0.0, hi, 1e-9, 1e-13)?;
    let (theta, _) = obj.minimize(m, Some(&warm.borrow()))?;
    let norm = theta.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(SoftMarginSolution {
        kappa_sm: m,
        direction: &theta / norm,
        theta,
    })
}

/// One triple `(λ_i, w̄_i, √p⟨θ̂, v_i⟩)` of the empirical coordinate law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalCoordinate {
    pub lambda: f64,
    pub wbar: f64,
    pub coord: f64,
}

/// Coordinates of `θ̂` in the eigenbasis of `Σ`, with the signal weights
/// `w̄_i = √p λ_i^{1/2}⟨v_i, θ*⟩ / ρ_n`.
pub fn empirical_coordinate_law(dataset: &Dataset, direction: &DVector<f64>) -> Vec<EmpiricalCoordinate> {
    let p = dataset.p();
    let sp = (p as f64).sqrt();
    match &dataset.covariance {
        Covariance::Identity => (0..p)
            .map(|i| EmpiricalCoordinate {
                lambda: 1.0,
                wbar: sp * dataset.theta_star[i] / dataset.rho_n,
                coord: sp * direction[i],
            })
            .collect(),
        cov => {
            let eig = cov.dense(p).symmetric_eigen();
            (0..p)
                .map(|i| {
                    let v = eig.eigenvectors.column(i);
                    let lambda = eig.eigenvalues[i];
                    EmpiricalCoordinate {
                        lambda,
                        wbar: sp * lambda.max(0.0).sqrt() * v.dot(&dataset.theta_star) / dataset.rho_n,
                        coord: sp * v.dot(direction),
                    }
                })
                .collect()
        }
    }
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut best) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Largest two-sample KS distance over `slices` projections
/// `cos(a)·√p θ̂ + sin(a)·w̄`, `a = kπ/slices`, of empirical and limiting pairs.
pub fn sliced_ks_distance(empirical: &[EmpiricalCoordinate], limit: &[CoordinateSample], slices: usize) -> f64 {
    (0..slices.max(1))
        .map(|k| {
            let a = k as f64 * std::f64::consts::PI / slices.max(1) as f64;
            let (c, s) = (a.cos(), a.sin());
            let e: Vec<f64> = empirical.iter().map(|v| c * v.coord + s * v.wbar).collect();
            let l: Vec<f64> = limit.iter().map(|v| c * v.h + s * v.w).collect();
            ks_distance(&e, &l)
        })
        .fold(0.0, f64::max)
}

/// One simulated replicate, as written to CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub tag: String,
    pub n: usize,
    pub p: usize,
    pub d: Option<usize>,
    pub psi: f64,
    pub psi1: Option<f64>,
    pub psi2: Option<f64>,
    pub seed: u64,
    pub kappa_n: Option<f64>,
    pub err_n: Option<f64>,
    pub separable: bool,
    pub iterations: usize,
}

impl Replicate {
    pub const CSV_HEADER: [&'static str; 12] = [
        "model", "n", "p", "d", "psi", "psi1", "psi2", "seed", "kappa_n", "err_n", "separable", "iterations",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.12e}")).unwrap_or_default();
        vec![
            self.tag.clone(),
            self.n.to_string(),
            self.p.to_string(),
            self.d.map(|d| d.to_string()).unwrap_or_default(),
            format!("{:.12e}", self.psi),
            opt(self.psi1),
            opt(self.psi2),
            self.seed.to_string(),
            opt(self.kappa_n),
            opt(self.err_n),
            self.separable.to_string(),
            self.iterations.to_string(),
        ]
    }
}

/// Samples a dataset, fits the max-margin classifier and scores it.
/// Non-separable draws are reported with `separable = false`.
pub fn run_replicate(spec: &GeneratorSpec, base: &LabelModel, n: usize, p: usize, seed: u64) -> Result<Replicate> {
    let ds = sample_dataset(spec, base, n, p, seed)?;
    let d = spec.latent_dim();
    let mut rep = Replicate {
        tag: spec.tag().to_string(),
        n,
        p,
        d,
        psi: p as f64 / n as f64,
        psi1: d.map(|d| p as f64 / d as f64),
        psi2: d.map(|d| n as f64 / d as f64),
        seed,
        kappa_n: None,
        err_n: None,
        separable: false,
        iterations: 0,
    };
    match max_margin(&ds) {
        Ok(sol) => {
            rep.kappa_n = Some(sol.margin);
            rep.err_n = Some(exact_test_error(&ds, &sol.direction)?);
            rep.separable = true;
            rep.iterations = sol.iterations;
        }
        Err(Error::NonSeparable(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(rep)
}
