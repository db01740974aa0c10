use maxmargin::asymptotics::*;
use maxmargin::fkappa::{inner_positive_part_sq, FKappa};
use maxmargin::labelmodel::LabelModel;
use maxmargin::measures::*;
use maxmargin::quadrature::CompositeSpec;
use maxmargin::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logistic(beta: f64) -> LabelModel {
    LabelModel::logistic(beta).unwrap()
}

fn iso(model: &LabelModel) -> Asymptotics {
    Asymptotics::new(model, SpectralMeasure::isotropic())
}

fn relu() -> ActivationCoeffs {
    Activation::Relu.coeffs().unwrap()
}

fn rf(beta: f64, psi1: f64) -> Asymptotics {
    rf_asymptotics(&logistic(beta), &relu(), psi1, DEFAULT_MP_ORDER, CompositeSpec::default()).unwrap()
}

/// Dense-grid minimum of `F₀(c,1)²` over `[lo, hi]` at spacing `h`.
fn grid_min(fk: &FKappa, lo: f64, hi: f64, h: f64) -> f64 {
    let n = ((hi - lo) / h).ceil() as usize;
    (0..=n)
        .map(|i| fk.value(0.0, lo + h * i as f64, 1.0).unwrap().powi(2))
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn threshold_matches_dense_grid() {
    assert!((psi_star_0(&LabelModel::pure_noise()).unwrap() - 0.5).abs() < 1e-10);

    let m = logistic(1.0);
    let want = grid_min(&FKappa::new(&m), -5.0, 5.0, 1e-4);
    let got = psi_star_0(&m).unwrap();
    assert!(got <= want + 1e-12 && want - got < 1e-8, "{got} vs grid {want}");

    // Near-noiseless labels: the threshold approaches the separable limit 0.
    let m = logistic(1e6);
    let fk = FKappa::new(&m);
    // Locate the minimizer on a log grid, then refine at spacing 1e-4 relative.
    let coarse: Vec<f64> = (0..=700).map(|k| 10f64.powf(k as f64 / 100.0)).collect();
    let vals: Vec<f64> = coarse.iter().map(|&c| fk.value(0.0, c, 1.0).unwrap().powi(2)).collect();
    let k = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let (lo, hi) = (coarse[k.saturating_sub(1)], coarse[(k + 1).min(coarse.len() - 1)]);
    let want = grid_min(&fk, lo, hi, 1e-4 * coarse[k]);
    let got = psi_star_0(&m).unwrap();
    assert!(got <= want * (1.0 + 1e-9) && (want - got) / want < 1e-6, "{got} vs grid {want}");
    assert!(got < 1e-3, "{got}");
}

#[test]
fn psi_down_assembles_from_first_partials() {
    let noise = iso(&LabelModel::pure_noise());
    assert!((noise.psi_down(0.0).unwrap() - 0.5).abs() < 1e-10);

    // Non-isotropic measure so ω ≠ 0; formula assembled by hand from
    // finite differences of F at two step sizes.
    let ast = rf(2.0, 2.0);
    let fk = ast.fkappa();
    let (zeta, omega) = (ast.measure().zeta(), ast.measure().omega());
    assert!(omega > 0.1);
    for &kappa in &[0.0, 0.5, 2.0] {
        let by_hand = |h: f64| {
            let branch = |c: f64| {
                let d1 = (fk.value(kappa, c + h, 0.0).unwrap() - fk.value(kappa, c - h, 0.0).unwrap()) / (2.0 * h);
                let d2 = (fk.value(kappa, c, h).unwrap() - fk.value(kappa, c, 0.0).unwrap()) / h;
                if d1 > 0.0 {
                    0.0
                } else {
                    d2 * d2 - omega * omega * d1 * d1
                }
            };
            (branch(zeta), branch(-zeta))
        };
        let (a, b) = by_hand(1e-4);
        let (c, d) = by_hand(1e-5);
        assert!((a - c).abs() < 1e-4 && (b - d).abs() < 1e-4);
        let (plus, minus) = ast.psi_plus_minus(kappa).unwrap();
        assert!((plus - c).abs() < 1e-4 && (minus - d).abs() < 1e-4, "{plus} {minus} vs {c} {d}");
        let down = ast.psi_down(kappa).unwrap();
        assert!(down >= ast.psi_star_0().unwrap());
    }
    let two = iso(&logistic(2.0));
    for i in 0..20 {
        let kappa = 0.25 * i as f64;
        assert!(two.psi_down(kappa).unwrap() >= two.psi_star_0().unwrap());
    }
}

#[test]
fn fixed_point_residuals_and_bounds() {
    let noise = iso(&LabelModel::pure_noise());
    let fp = noise.solve_fixed_point(2.0, 0.3).unwrap();
    assert!(fp.max_residual() <= 1e-9, "{fp:?}");

    for ast in [iso(&logistic(1.0)), rf(4.0, 2.0), rf(1.0, 0.5)] {
        let xmax = ast.measure().x_support().1;
        for &(psi, kappa) in &[(2.0, 0.2), (4.0, 1.0), (1.5, 0.0)] {
            let fp = ast.solve_fixed_point(psi, kappa).unwrap();
            assert!(fp.max_residual() <= 1e-9);
            assert!(fp.c1.abs() <= xmax.sqrt() && fp.c2 <= xmax.sqrt() && fp.c2 > 0.0 && fp.s > 0.0, "{fp:?}");
        }
    }
}

#[test]
fn second_equation_holds_at_finer_quadrature() {
    let m = logistic(1.0);
    let pred = iso(&m).kappa_star(4.0).unwrap();
    let fp = pred.fixed_point;
    let fine = Asymptotics::with_spec(&m, SpectralMeasure::isotropic(), CompositeSpec::default().refined().refined()).unwrap();
    let r = fine.residuals(4.0, fp.kappa, fp.c1, fp.c2, fp.s).unwrap();
    assert!(r.iter().all(|v| v.abs() <= 1e-8), "{r:?}");

    // Same check for a measure with a spread spectrum and doubled MP order.
    let base = logistic(4.0);
    let coarse = rf_asymptotics(&base, &relu(), 2.0, 200, CompositeSpec::default()).unwrap();
    let fp = coarse.kappa_star(1.0).unwrap().fixed_point;
    let fine = rf_asymptotics(&base, &relu(), 2.0, 400, CompositeSpec::default().refined()).unwrap();
    let r = fine.residuals(1.0, fp.kappa, fp.c1, fp.c2, fp.s).unwrap();
    assert!(r.iter().all(|v| v.abs() <= 1e-8), "{r:?}");
}

#[test]
fn multi_start_uniqueness() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (ast, psi, kappa) in [(iso(&logistic(2.0)), 3.0, 1.0), (rf(4.0, 4.0), 2.0, 0.5)] {
        let reference = ast.solve_fixed_point(psi, kappa).unwrap();
        for _ in 0..8 {
            let start = [rng.random_range(-1.0..1.0), rng.random_range(0.05..3.0), rng.random_range(0.05..3.0)];
            let fp = ast.solve_fixed_point_from(psi, kappa, Some(start)).unwrap();
            let spread = (fp.c1 - reference.c1).abs().max((fp.c2 - reference.c2).abs()).max((fp.s - reference.s).abs());
            assert!(spread <= 1e-6, "start {start:?}: {fp:?} vs {reference:?}");
        }
    }
}

#[test]
fn t_is_monotone_in_both_arguments() {
    for ast in [iso(&logistic(1.0)), rf(4.0, 2.0)] {
        let psi = 2.0;
        let mut last = f64::NEG_INFINITY;
        for i in 0..10 {
            let t = ast.t_value(psi, 0.1 * i as f64).unwrap();
            assert!(t > last + 1e-10, "kappa step {i}: {t} after {last}");
            last = t;
        }
        let kappa = 0.5;
        let mut last = f64::INFINITY;
        for i in 0..10 {
            let t = ast.t_value(1.2 + 0.1 * i as f64, kappa).unwrap();
            assert!(t < last - 1e-10, "psi step {i}: {t} after {last}");
            last = t;
        }
    }
}

#[test]
fn kappa_star_limits_and_root() {
    let m = logistic(1.0);
    let ast = iso(&m);
    let p = ast.kappa_star(100.0).unwrap();
    assert!((p.kappa_star / 10.0 - 1.0).abs() <= 0.02, "{p:?}");
    assert!((p.err_star - 0.5).abs() <= 0.02, "{p:?}");

    let near = ast.kappa_star(ast.psi_star_0().unwrap() + 1e-3).unwrap();
    assert!(near.kappa_star > 0.0 && near.kappa_star < 0.05, "{near:?}");

    let p = ast.kappa_star(3.0).unwrap();
    assert!(ast.t_value(3.0, p.kappa_star).unwrap().abs() <= 2e-8);
    assert_eq!(p.nu_star, p.fixed_point.c1 / p.fixed_point.c1.hypot(p.fixed_point.c2));
    assert!((p.err_star - m.q_error(p.nu_star).unwrap()).abs() <= 1e-10);

    assert!(matches!(ast.kappa_star(0.4), Err(Error::BelowThreshold { .. })));
    assert!(matches!(ast.solve_fixed_point(0.3, 0.5), Err(Error::Domain { .. })));
}

#[test]
fn kappa_star_increases_with_psi() {
    for ast in [iso(&logistic(8.0)), rf(1.0, 2.0)] {
        let mut last = 0.0;
        for &psi in &[0.9, 1.2, 1.5, 2.0, 3.0, 5.0] {
            let k = ast.kappa_star(psi).unwrap().kappa_star;
            assert!(k > last, "psi={psi}: {k} after {last}");
            last = k;
        }
    }
}

#[test]
fn routes_agree_and_pure_noise_matches_gardner() {
    let m = logistic(1.0);
    let fixed = iso(&m).kappa_star(4.0).unwrap();
    let direct = kappa_star_isotropic_direct(&m, 4.0).unwrap();
    assert!((fixed.kappa_star - direct.kappa_star).abs() <= 1e-4);
    assert!((fixed.err_star - direct.err_star).abs() <= 1e-4);

    // Pure noise: κ* solves E[(κ - Z)₊²] = ψ.
    let psi = 2.0;
    let (mut lo, mut hi) = (0.0, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if inner_positive_part_sq(mid, 1.0) < psi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let noise = LabelModel::pure_noise();
    let direct = kappa_star_isotropic_direct(&noise, psi).unwrap();
    let doubled = kappa_star_isotropic_direct_with(&FKappa::new(&noise), psi, 4001).unwrap();
    let fixed = iso(&noise).kappa_star(psi).unwrap();
    for k in [direct.kappa_star, doubled.kappa_star, fixed.kappa_star] {
        assert!((k - lo).abs() < 1e-7, "{k} vs {lo}");
    }
    assert!(direct.c_star.abs() < 1e-6, "{}", direct.c_star);
    assert!(fixed.fixed_point.c1.abs() < 1e-9);
}

#[test]
fn misspecified_shape() {
    let base = logistic(8.0);
    let psi0 = 2.0;
    for &psi in &[2.0, 3.5] {
        let a = misspecified_prediction(&base, psi0, psi).unwrap();
        let b = iso(&base).kappa_star(psi).unwrap();
        assert!((a.kappa_star - b.kappa_star).abs() <= 1e-10 && (a.err_star - b.err_star).abs() <= 1e-10);
    }
    let threshold = misspecified_threshold(&base, psi0).unwrap();
    assert!(threshold > 0.0 && threshold < psi0, "{threshold}");
    let below: Vec<f64> = (1..=6).map(|i| threshold + (psi0 - threshold) * i as f64 / 6.0).collect();
    let above: Vec<f64> = (1..=6).map(|i| psi0 + 3.0 * psi0 * i as f64 / 6.0).collect();
    let errs: Vec<f64> = below
        .iter()
        .chain(&above)
        .map(|&psi| {
            let p = misspecified_prediction(&base, psi0, psi).unwrap();
            assert!(p.kappa_star / psi.sqrt() < 1.0);
            p.err_star
        })
        .collect();
    for w in errs[..6].windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{errs:?}");
    }
    for w in errs[5..].windows(2) {
        assert!(w[1] >= w[0] - 1e-6, "{errs:?}");
    }
}

#[test]
fn margin_bound_is_vacuous() {
    let ast = iso(&logistic(1.0));
    let p = ast.kappa_star(4.0).unwrap();
    let bound = ast.margin_bound(&p);
    assert!((bound - 4.0 * 2.0 / p.kappa_star).abs() < 1e-12);
    assert!(bound / 4.0 > 1.0);

    // E[X] = γ1²·(mean eigenvalue 1 of the unit-row Gram matrix) + γ*².
    let c = relu();
    let ast = rf(1.0, 2.0);
    let p = ast.kappa_star(1.0).unwrap();
    let r = (c.gamma1 * c.gamma1 + c.gamma_star * c.gamma_star).sqrt();
    assert!((ast.margin_bound(&p) - 4.0 * r / p.kappa_star).abs() < 1e-8);
}

#[test]
fn coordinate_law_moments() {
    for (ast, psi) in [(iso(&logistic(1.0)), 4.0), (rf(4.0, 2.0), 1.0)] {
        let p = ast.kappa_star(psi).unwrap();
        let n = 200_000;
        let samples = ast.limit_coordinate_law(&p, n, 11).unwrap();
        let mean_se = |v: Vec<f64>| {
            let m = v.iter().sum::<f64>() / n as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            (m, (var / n as f64).sqrt())
        };
        let (h2, se) = mean_se(samples.iter().map(|s| s.h * s.h).collect());
        assert!((h2 - 1.0).abs() <= 3.0 * se, "E[H²] = {h2} ± {se}");
        let (cw, se) = mean_se(samples.iter().map(|s| s.x.sqrt() * s.w * s.h).collect());
        assert!((cw - p.fixed_point.c1).abs() <= 3.0 * se, "{cw} ± {se} vs {}", p.fixed_point.c1);
    }
}

#[test]
fn wide_limit_stationarity_and_consistency() {
    let c = relu();
    for beta in [1.0, 4.0] {
        let base = logistic(beta);
        let w = wide_limit(2.0, &c, &base).unwrap();
        assert!(w.d1 * w.d1 + w.d2 * w.d2 < 1.0 && w.d2 > 0.0);
        let problem = WideProblem::new(2.0, &c, &base).unwrap();
        let g = problem.gradient(w.kappa_bar_wide, w.d1, w.d2).unwrap();
        assert!(g[0].hypot(g[1]) <= 1e-7, "{g:?}");
        assert!(problem.t_infinity(w.kappa_bar_wide).unwrap().abs() <= 1e-8);
        assert!((w.err_wide - base.q_error(w.nu_wide).unwrap()).abs() < 1e-12);

        let p = rf_prediction(&base, &c, 50.0, 2.0).unwrap();
        assert!((p.kappa_star / 25f64.sqrt() - w.kappa_bar_wide).abs() <= 0.02, "{p:?} vs {w:?}");
        assert!((p.err_star - w.err_wide).abs() <= 0.02, "{p:?} vs {w:?}");
    }
}

#[test]
fn quadrature_order_robustness() {
    let m = logistic(2.0);
    let coarse = iso(&m).kappa_star(3.0).unwrap();
    let fine = Asymptotics::with_spec(&m, SpectralMeasure::isotropic(), CompositeSpec::default().refined())
        .unwrap()
        .kappa_star(3.0)
        .unwrap();
    assert!((coarse.kappa_star - fine.kappa_star).abs() <= 1e-6);
    assert!((coarse.err_star - fine.err_star).abs() <= 1e-6);

    let base = logistic(4.0);
    let coarse = rf_asymptotics(&base, &relu(), 2.0, 200, CompositeSpec::default()).unwrap().kappa_star(1.0).unwrap();
    let fine = rf_asymptotics(&base, &relu(), 2.0, 400, CompositeSpec::default().refined())
        .unwrap()
        .kappa_star(1.0)
        .unwrap();
    assert!((coarse.kappa_star - fine.kappa_star).abs() <= 1e-6, "{} {}", coarse.kappa_star, fine.kappa_star);
    assert!((coarse.err_star - fine.err_star).abs() <= 1e-6, "{} {}", coarse.err_star, fine.err_star);
}

#[test]
fn predictions_ignore_gamma0() {
    let base = logistic(2.0);
    let a = relu();
    let b = ActivationCoeffs { gamma0: -3.0, ..a };
    let pa = rf_prediction(&base, &a, 2.0, 2.0).unwrap();
    let pb = rf_prediction(&base, &b, 2.0, 2.0).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn csv_record_has_header_width() {
    let ast = iso(&logistic(1.0));
    let p = ast.kappa_star(2.0).unwrap();
    let rec = p.csv_record(ast.margin_bound(&p));
    assert_eq!(rec.len(), AsymptoticPrediction::CSV_HEADER.len());
    assert_eq!(rec[0].parse::<f64>().unwrap(), 2.0);
}
