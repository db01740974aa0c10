use maxmargin::labelmodel::LabelModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Sample `Y` given `G = g` directly from the generative description of each model.
fn draw_label(model: &str, g: f64, rng: &mut ChaCha8Rng) -> f64 {
    let p = match model {
        "logistic2" => logistic(2.0 * g),
        "noise" => 0.5,
        "miss" => {
            let gp: f64 = rng.sample(StandardNormal);
            logistic(8.0 * (0.5f64.sqrt() * g + 0.5f64.sqrt() * gp))
        }
        "rf" => {
            let gp: f64 = rng.sample(StandardNormal);
            let tau: f64 = 0.6;
            logistic(4.0 * ((1.0 - tau * tau).sqrt() * g + tau * gp))
        }
        _ => unreachable!(),
    };
    if rng.random::<f64>() < p {
        1.0
    } else {
        -1.0
    }
}

fn model(tag: &str) -> LabelModel {
    match tag {
        "logistic2" => LabelModel::logistic(2.0).unwrap(),
        "noise" => LabelModel::pure_noise(),
        "miss" => LabelModel::misspecified(LabelModel::logistic(8.0).unwrap(), 0.5).unwrap(),
        "rf" => LabelModel::rf_effective(LabelModel::logistic(4.0).unwrap(), 0.6).unwrap(),
        _ => unreachable!(),
    }
}

#[test]
fn misspecified_flip_matches_monte_carlo() {
    // f(1) = E σ(8(√.5 + √.5 G')), estimated from 10⁷ draws of G'.
    let m = model("miss");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let gp: f64 = rng.sample(StandardNormal);
        let v = logistic(8.0 * (0.5f64.sqrt() + 0.5f64.sqrt() * gp));
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    let got = m.flip_probability(1.0);
    assert!((got - mean).abs() < 3.0 * se, "{got} vs {mean} ± {se}");
}

#[test]
fn flip_and_q_error_match_monte_carlo_for_every_kind() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 1_000_000;
    for tag in ["logistic2", "noise", "miss", "rf"] {
        let m = model(tag);
        for &g in &[-1.3, 0.2, 0.9] {
            let hits = (0..n).filter(|_| draw_label(tag, g, &mut rng) > 0.0).count();
            let p_hat = hits as f64 / n as f64;
            let se = (p_hat * (1.0 - p_hat) / n as f64).sqrt().max(1e-9);
            let f = m.flip_probability(g);
            assert!((f - p_hat).abs() < 4.0 * se, "{tag} g={g}: {f} vs {p_hat}");
        }
        for &nu in &[0.3, 0.8, 1.0] {
            let mut errors = 0usize;
            for _ in 0..n {
                let g: f64 = rng.sample(StandardNormal);
                let z: f64 = rng.sample(StandardNormal);
                let y = draw_label(tag, g, &mut rng);
                if nu * y * g + (1.0 - nu * nu).sqrt() * z <= 0.0 {
                    errors += 1;
                }
            }
            let p_hat = errors as f64 / n as f64;
            let se = (p_hat * (1.0 - p_hat) / n as f64).sqrt();
            let q = m.q_error(nu).unwrap();
            assert!((q - p_hat).abs() < 4.0 * se, "{tag} nu={nu}: {q} vs {p_hat}");
        }
    }
}

#[test]
fn q_error_at_one_matches_split_integral() {
    // P(YG ≤ 0) = ∫_{g>0} (1 - f) + ∫_{g<0} f, by a plain composite trapezoid on a fine grid.
    let m = LabelModel::logistic(8.0).unwrap();
    let h: f64 = 1e-4;
    let mut acc = 0.0;
    let mut g: f64 = h / 2.0;
    while g < 12.0 {
        let dens = (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt();
        acc += 2.0 * h * dens * (1.0 - logistic(8.0 * g));
        g += h;
    }
    assert!((m.q_error(1.0).unwrap() - acc).abs() < 1e-9);
}
