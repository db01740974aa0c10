//! Side-by-side comparison of asymptotic and simulated grids.

use std::collections::HashMap;
use std::path::Path;

use crate::config::Tolerances;
use crate::error::{HarnessError, Result};
use crate::table::{opt, Table};

/// Columns that identify a grid point.
pub const KEY_COLUMNS: [&str; 5] = ["beta", "psi0", "psi", "psi1", "psi2"];

pub const COMPARISON_COLUMNS: [&str; 9] = [
    "kappa_star",
    "kappa_n_mean",
    "kappa_n_sem",
    "err_star",
    "err_n_mean",
    "err_n_sem",
    "dev_kappa",
    "dev_err",
    "flag",
];

fn keys(t: &Table) -> Vec<usize> {
    t.header
        .iter()
        .enumerate()
        .filter(|(_, h)| KEY_COLUMNS.contains(&h.as_str()))
        .map(|(i, _)| i)
        .collect()
}

fn need(t: &Table, name: &str, which: &str) -> Result<usize> {
    t.column(name)
        .ok_or_else(|| HarnessError::KeyMismatch(format!("{which} table has no column {name}")))
}

/// Joins the asymptotic and simulation-summary tables on their grid keys and
/// flags `|κ_n − κ*|` and `|Err_n − Err*|` against `tol`. Points without a
/// separable replicate or below the threshold are flagged `non_separable`.
pub fn compare_tables(asym: &Table, sim: &Table, tol: &Tolerances) -> Result<Table> {
    let ka = keys(asym);
    let ks = keys(sim);
    let names = |t: &Table, k: &[usize]| k.iter().map(|&i| t.header[i].clone()).collect::<Vec<_>>();
    if names(asym, &ka) != names(sim, &ks) || ka.is_empty() {
        return Err(HarnessError::KeyMismatch(format!(
            "key columns {:?} vs {:?}",
            names(asym, &ka),
            names(sim, &ks)
        )));
    }
    let sim_rows: HashMap<Vec<String>, usize> = (0..sim.rows.len())
        .map(|r| (ks.iter().map(|&i| sim.rows[r][i].clone()).collect(), r))
        .collect();
    if sim_rows.len() != sim.rows.len() || sim.rows.len() != asym.rows.len() {
        return Err(HarnessError::KeyMismatch(format!(
            "{} asymptotic rows vs {} simulated rows",
            asym.rows.len(),
            sim.rows.len()
        )));
    }
    let (a_k, a_e, a_s) = (need(asym, "kappa_star", "asymptotic")?, need(asym, "err_star", "asymptotic")?, need(asym, "status", "asymptotic")?);
    let (s_k, s_kse, s_e, s_ese, s_s) = (
        need(sim, "kappa_n_mean", "simulation")?,
        need(sim, "kappa_n_sem", "simulation")?,
        need(sim, "err_n_mean", "simulation")?,
        need(sim, "err_n_sem", "simulation")?,
        need(sim, "status", "simulation")?,
    );
    let mut header = names(asym, &ka);
    header.extend(COMPARISON_COLUMNS.iter().map(|s| s.to_string()));
    let mut out = Table::new(&header);
    for r in 0..asym.rows.len() {
        let key: Vec<String> = ka.iter().map(|&i| asym.rows[r][i].clone()).collect();
        let Some(&q) = sim_rows.get(&key) else {
            return Err(HarnessError::KeyMismatch(format!("no simulated row for {key:?}")));
        };
        let (kstar, estar) = (asym.number(r, a_k), asym.number(r, a_e));
        let (kn, en) = (sim.number(q, s_k), sim.number(q, s_e));
        let a_status = &asym.rows[r][a_s];
        let s_status = &sim.rows[q][s_s];
        let (mut dk, mut de) = (None, None);
        let flag = if a_status == "below_threshold" || s_status == "non_separable" {
            "non_separable"
        } else if a_status != "ok" || s_status != "ok" {
            "error"
        } else {
            match (kstar, kn, estar, en) {
                (Some(a), Some(b), Some(c), Some(d)) => {
                    dk = Some((b - a).abs());
                    de = Some((d - c).abs());
                    if (b - a).abs() <= tol.kappa && (d - c).abs() <= tol.err {
                        "ok"
                    } else {
                        "exceeds"
                    }
                }
                _ => "error",
            }
        };
        let mut row = key;
        row.extend([
            opt(kstar),
            opt(kn),
            opt(sim.number(q, s_kse)),
            opt(estar),
            opt(en),
            opt(sim.number(q, s_ese)),
            opt(dk),
            opt(de),
            flag.to_string(),
        ]);
        out.push(row);
    }
    Ok(out)
}

/// [`compare_tables`] on two CSV files.
pub fn compare_report(asymptotic_csv: &Path, simulation_csv: &Path, tol: &Tolerances) -> Result<Table> {
    compare_tables(&Table::read(asymptotic_csv)?, &Table::read(simulation_csv)?, tol)
}
