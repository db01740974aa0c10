//! Fast invariant battery behind the `selftest` subcommand.

use maxmargin::asymptotics::{kappa_star_isotropic_direct, psi_star_0, Asymptotics};
use maxmargin::fkappa::FKappa;
use maxmargin::labelmodel::LabelModel;
use maxmargin::measures::SpectralMeasure;
use maxmargin::simulator::{max_margin, sample_dataset, GeneratorSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> maxmargin::Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_selftest() -> Vec<Check> {
    vec![
        check("pure-noise threshold is 1/2", || {
            let v = psi_star_0(&LabelModel::pure_noise())?;
            Ok(((v - 0.5).abs() <= 1e-6, format!("psi*(0) = {v:.10}")))
        }),
        check("Euler identity of F", || {
            let fk = FKappa::new(&LabelModel::logistic(2.0)?);
            let e = fk.eval(0.7, 0.4, 0.9)?;
            let r = 0.7 * e.d_kappa + 0.4 * e.d_c1 + 0.9 * e.d_c2;
            Ok(((r - e.value).abs() <= 1e-10, format!("F = {:.12}, sum = {r:.12}", e.value)))
        }),
        check("fixed-point and direct routes agree", || {
            let m = LabelModel::logistic(1.0)?;
            let a = Asymptotics::new(&m, SpectralMeasure::isotropic()).kappa_star(2.0)?.kappa_star;
            let b = kappa_star_isotropic_direct(&m, 2.0)?.kappa_star;
            Ok(((a - b).abs() <= 1e-4, format!("{a:.8} vs {b:.8}")))
        }),
        check("max-margin duality gap", || {
            let ds = sample_dataset(&GeneratorSpec::Isotropic, &LabelModel::logistic(1.0)?, 100, 200, 1)?;
            let s = max_margin(&ds)?;
            Ok((s.converged && s.relative_gap() <= 1e-6, format!("gap {:.3e}", s.relative_gap())))
        }),
        check("seeded sampling is deterministic", || {
            let m = LabelModel::logistic(1.0)?;
            let a = sample_dataset(&GeneratorSpec::Isotropic, &m, 20, 30, 7)?;
            let b = sample_dataset(&GeneratorSpec::Isotropic, &m, 20, 30, 7)?;
            Ok((a.features == b.features && a.labels == b.labels, String::new()))
        }),
    ]
}
