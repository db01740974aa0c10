//! Asymptotic and simulation legs of every experiment.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::info;
use maxmargin::asymptotics::{margin_bound, rf_asymptotics, wide_limit, Asymptotics, AsymptoticPrediction, WideLimit};
use maxmargin::labelmodel::LabelModel;
use maxmargin::measures::SpectralMeasure;
use maxmargin::simulator::{
    empirical_coordinate_law, exact_test_error, max_margin, sample_dataset, sliced_ks_distance, soft_margin,
    EmpiricalCoordinate, GeneratorSpec, Replicate,
};
use maxmargin::Error;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::report::compare_tables;
use crate::table::{num, opt, Table};

/// Which legs to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    Predict,
    Simulate,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    /// One message per failed grid point or replicate.
    pub failures: Vec<String>,
    pub comparison: Option<Table>,
}

/// Slices of the sliced Kolmogorov–Smirnov diagnostic.
pub const KS_SLICES: usize = 8;

#[derive(Debug, Clone)]
struct Point {
    keys: Vec<(&'static str, f64)>,
    beta: f64,
    model: LabelModel,
    psi: f64,
    psi1: f64,
    psi2: f64,
}

fn points(cfg: &ExperimentConfig) -> Result<Vec<Point>> {
    let mut out = Vec::new();
    for (beta, model) in cfg.models()? {
        let mk = |keys: Vec<(&'static str, f64)>, psi: f64, psi1: f64, psi2: f64| Point {
            keys,
            beta,
            model: model.clone(),
            psi,
            psi1,
            psi2,
        };
        match cfg.experiment {
            ExperimentKind::IsotropicCurve | ExperimentKind::CoordinateLawCheck | ExperimentKind::MarginBoundCompare => {
                for &psi in &cfg.grid.psi {
                    out.push(mk(vec![("beta", beta), ("psi", psi)], psi, f64::NAN, f64::NAN));
                }
            }
            ExperimentKind::MisspecifiedCurve => {
                let psi0 = cfg.model.psi0.unwrap_or(f64::NAN);
                for &psi in &cfg.grid.psi {
                    out.push(mk(vec![("beta", beta), ("psi0", psi0), ("psi", psi)], psi, f64::NAN, f64::NAN));
                }
            }
            ExperimentKind::RfSurface => {
                for &a in &cfg.grid.psi1 {
                    for &b in &cfg.grid.psi2 {
                        out.push(mk(vec![("beta", beta), ("psi1", a), ("psi2", b)], a / b, a, b));
                    }
                }
            }
            ExperimentKind::WideLimitCheck => {
                for &b in &cfg.grid.psi2 {
                    for &a in &cfg.grid.psi1 {
                        out.push(mk(vec![("beta", beta), ("psi2", b), ("psi1", a)], a / b, a, b));
                    }
                }
            }
            ExperimentKind::SoftMarginCheck => {
                for &b in &cfg.grid.psi2 {
                    out.push(mk(vec![("beta", beta), ("psi2", b)], f64::NAN, f64::NAN, b));
                }
            }
        }
    }
    Ok(out)
}

fn key_header(p: &Point) -> Vec<String> {
    p.keys.iter().map(|(k, _)| k.to_string()).collect()
}

fn key_cells(p: &Point) -> Vec<String> {
    p.keys.iter().map(|(_, v)| num(*v)).collect()
}

fn status_of(e: &Error) -> String {
    match e {
        Error::BelowThreshold { .. } | Error::Domain { .. } => "below_threshold".into(),
        other => format!("error: {other}"),
    }
}

fn prediction_columns(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::IsotropicCurve | ExperimentKind::MisspecifiedCurve | ExperimentKind::CoordinateLawCheck => {
            &["kappa_star", "err_star", "nu_star", "psi_star0"]
        }
        ExperimentKind::RfSurface => &["kappa_star", "err_star", "nu_star", "kappa_over_sqrt_psi"],
        ExperimentKind::MarginBoundCompare => &["kappa_star", "err_star", "margin_bound", "bound_over_4"],
        ExperimentKind::WideLimitCheck => &[
            "kappa_over_sqrt_psi",
            "err_star",
            "kappa_bar_wide",
            "err_wide",
            "dev_kappa",
            "dev_err",
        ],
        ExperimentKind::SoftMarginCheck => &["kappa_star", "err_star"],
    }
}

fn isotropic(cfg: &ExperimentConfig, model: &LabelModel) -> Result<Asymptotics> {
    Ok(Asymptotics::with_spec(model, SpectralMeasure::isotropic(), cfg.numerics.composite())?)
}

fn basic(pred: &AsymptoticPrediction) -> Vec<String> {
    vec![num(pred.kappa_star), num(pred.err_star), num(pred.nu_star), num(pred.psi_star0)]
}

fn predict_point(cfg: &ExperimentConfig, p: &Point, wide: &HashMap<(u64, u64), WideLimit>) -> Result<Vec<String>> {
    Ok(match cfg.experiment {
        ExperimentKind::IsotropicCurve | ExperimentKind::CoordinateLawCheck => basic(&isotropic(cfg, &p.model)?.kappa_star(p.psi)?),
        ExperimentKind::MisspecifiedCurve => {
            let psi0 = cfg.model.psi0.unwrap_or(f64::NAN);
            let gamma = maxmargin::asymptotics::misspecified_gamma(psi0, p.psi);
            let model = if gamma >= 1.0 {
                p.model.clone()
            } else {
                LabelModel::misspecified(p.model.clone(), gamma)?
            };
            basic(&isotropic(cfg, &model)?.kappa_star(p.psi)?)
        }
        ExperimentKind::RfSurface => {
            let ast = rf_asymptotics(&p.model, &cfg.coeffs()?, p.psi1, cfg.numerics.mp_order, cfg.numerics.composite())?;
            let pred = ast.kappa_star(p.psi)?;
            let mut row = basic(&pred);
            row[3] = num(pred.kappa_star / p.psi.sqrt());
            row
        }
        ExperimentKind::MarginBoundCompare => {
            let measure = SpectralMeasure::isotropic();
            let pred = isotropic(cfg, &p.model)?.kappa_star(p.psi)?;
            let bound = margin_bound(&pred, &measure);
            vec![num(pred.kappa_star), num(pred.err_star), num(bound), num(bound / 4.0)]
        }
        ExperimentKind::WideLimitCheck => {
            let w = &wide[&(p.beta.to_bits(), p.psi2.to_bits())];
            let ast = rf_asymptotics(&p.model, &cfg.coeffs()?, p.psi1, cfg.numerics.mp_order, cfg.numerics.composite())?;
            let pred = ast.kappa_star(p.psi)?;
            let k = pred.kappa_star / p.psi.sqrt();
            vec![
                num(k),
                num(pred.err_star),
                num(w.kappa_bar_wide),
                num(w.err_wide),
                num((k - w.kappa_bar_wide).abs()),
                num((pred.err_star - w.err_wide).abs()),
            ]
        }
        ExperimentKind::SoftMarginCheck => {
            let w = &wide[&(p.beta.to_bits(), p.psi2.to_bits())];
            vec![num(w.kappa_bar_wide / p.psi2.sqrt()), num(w.err_wide)]
        }
    })
}

fn wide_limits(cfg: &ExperimentConfig, pts: &[Point]) -> Result<HashMap<(u64, u64), WideLimit>> {
    if !matches!(cfg.experiment, ExperimentKind::WideLimitCheck | ExperimentKind::SoftMarginCheck) {
        return Ok(HashMap::new());
    }
    let coeffs = cfg.coeffs()?;
    let mut keys: Vec<(f64, f64, LabelModel)> = Vec::new();
    for p in pts {
        if !keys.iter().any(|(b, q, _)| *b == p.beta && *q == p.psi2) {
            keys.push((p.beta, p.psi2, p.model.clone()));
        }
    }
    let solved: Vec<_> = keys
        .par_iter()
        .map(|(b, q, m)| wide_limit(*q, &coeffs, m).map(|w| ((b.to_bits(), q.to_bits()), w)))
        .collect::<std::result::Result<_, _>>()?;
    Ok(solved.into_iter().collect())
}

/// Asymptotic leg: one row per grid point.
pub fn predict_table(cfg: &ExperimentConfig) -> Result<(Table, Vec<String>)> {
    let pts = points(cfg)?;
    let cols = prediction_columns(cfg.experiment);
    let mut header = key_header(&pts[0]);
    header.extend(cols.iter().map(|s| s.to_string()));
    header.push("status".into());
    let wide = wide_limits(cfg, &pts)?;
    let rows: Vec<(Vec<String>, Option<String>)> = pts
        .par_iter()
        .map(|p| {
            let mut row = key_cells(p);
            match predict_point(cfg, p, &wide) {
                Ok(vals) => {
                    row.extend(vals);
                    row.push("ok".into());
                    (row, None)
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n(String::new(), cols.len()));
                    let (status, failure) = match &e {
                        HarnessError::Library(le) => {
                            let s = status_of(le);
                            let failed = s.starts_with("error");
                            (s, failed.then(|| format!("{:?}: {e}", p.keys)))
                        }
                        other => (format!("error: {other}"), Some(format!("{:?}: {other}", p.keys))),
                    };
                    row.push(status);
                    (row, failure)
                }
            }
        })
        .collect();
    let mut table = Table::new(&header);
    let mut failures = Vec::new();
    for (row, f) in rows {
        table.push(row);
        failures.extend(f);
    }
    Ok((table, failures))
}

struct Job<'a> {
    point: &'a Point,
    index: usize,
    seed: u64,
}

struct JobOut {
    rep: Replicate,
    coords: Vec<EmpiricalCoordinate>,
}

fn generator(cfg: &ExperimentConfig, n: usize) -> Result<GeneratorSpec> {
    Ok(match cfg.experiment {
        ExperimentKind::MisspecifiedCurve => GeneratorSpec::Misspecified {
            p0: (cfg.model.psi0.unwrap_or(1.0) * n as f64).round() as usize,
        },
        ExperimentKind::RfSurface => match (cfg.model.gamma1, cfg.model.gamma_star) {
            (Some(gamma1), Some(gamma_star)) => GeneratorSpec::RfNoisyLinear {
                d: cfg.sim.d,
                gamma1,
                gamma_star,
            },
            _ => GeneratorSpec::RfNonlinear {
                d: cfg.sim.d,
                activation: cfg.activation()?,
            },
        },
        _ => GeneratorSpec::Isotropic,
    })
}

fn run_job(cfg: &ExperimentConfig, job: &Job, sizes: &[(usize, usize)]) -> Result<JobOut> {
    let (n, p) = sizes[job.index];
    let point = job.point;
    let spec = generator(cfg, n)?;
    let ds = sample_dataset(&spec, &point.model, n, p, job.seed)?;
    let d = spec.latent_dim();
    let mut rep = Replicate {
        tag: spec.tag().to_string(),
        n,
        p,
        d,
        psi: p as f64 / n as f64,
        psi1: d.map(|d| p as f64 / d as f64),
        psi2: d.map(|d| n as f64 / d as f64),
        seed: job.seed,
        kappa_n: None,
        err_n: None,
        separable: false,
        iterations: 0,
    };
    let mut coords = Vec::new();
    if cfg.experiment == ExperimentKind::SoftMarginCheck {
        let c = cfg.coeffs()?;
        let sm = soft_margin(&ds.features, &ds.labels, c.gamma1, c.gamma_star)?;
        rep.tag = "soft_margin".into();
        rep.d = Some(p);
        rep.psi2 = Some(n as f64 / p as f64);
        rep.kappa_n = Some(sm.kappa_sm);
        rep.err_n = Some(exact_test_error(&ds, &sm.direction)?);
        rep.separable = true;
        return Ok(JobOut { rep, coords });
    }
    match max_margin(&ds) {
        Ok(sol) => {
            rep.kappa_n = Some(sol.margin);
            rep.err_n = Some(exact_test_error(&ds, &sol.direction)?);
            rep.separable = true;
            rep.iterations = sol.iterations;
            if cfg.experiment == ExperimentKind::CoordinateLawCheck {
                coords = empirical_coordinate_law(&ds, &sol.direction);
            }
        }
        Err(Error::NonSeparable(_)) => {}
        Err(e) => return Err(e.into()),
    }
    Ok(JobOut { rep, coords })
}

fn mean_sem(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (Some(m), None);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(m), Some((var / n).sqrt()))
}

/// Simulation leg: per-replicate rows and a per-point summary.
pub fn simulate_tables(cfg: &ExperimentConfig) -> Result<(Table, Table, Vec<String>)> {
    if !cfg.experiment.has_simulation() {
        return Err(HarnessError::NoSimulation(cfg.experiment.tag()));
    }
    let pts = points(cfg)?;
    let base_sizes = cfg.sample_sizes();
    let per_beta = base_sizes.len();
    let sizes: Vec<(usize, usize)> = (0..pts.len()).map(|i| base_sizes[i % per_beta]).collect();
    let seeds = cfg.sim.seed_list();
    let jobs: Vec<Job> = pts
        .iter()
        .enumerate()
        .flat_map(|(index, point)| seeds.iter().map(move |&seed| Job { point, index, seed }))
        .collect();
    info!("{}: {} simulation jobs", cfg.experiment.tag(), jobs.len());
    let outs: Vec<Result<JobOut>> = jobs.par_iter().map(|j| run_job(cfg, j, &sizes)).collect();

    let mut rep_header = key_header(&pts[0]);
    rep_header.extend(Replicate::CSV_HEADER.iter().map(|s| s.to_string()));
    rep_header.push("status".into());
    let mut reps = Table::new(&rep_header);
    let mut sum_header = key_header(&pts[0]);
    sum_header.extend(
        [
            "n",
            "p",
            "replicates",
            "separable",
            "kappa_n_mean",
            "kappa_n_sem",
            "err_n_mean",
            "err_n_sem",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let with_ks = cfg.experiment == ExperimentKind::CoordinateLawCheck;
    if with_ks {
        sum_header.push("sliced_ks".into());
    }
    sum_header.push("status".into());
    let mut summary = Table::new(&sum_header);
    let mut failures = Vec::new();

    for (index, point) in pts.iter().enumerate() {
        let chunk = &outs[index * seeds.len()..(index + 1) * seeds.len()];
        let (mut ks, mut es, mut coords, mut errors) = (vec![], vec![], vec![], 0usize);
        for (out, &seed) in chunk.iter().zip(&seeds) {
            let mut row = key_cells(point);
            match out {
                Ok(o) => {
                    row.extend(o.rep.csv_record());
                    row.push("ok".into());
                    ks.extend(o.rep.kappa_n);
                    es.extend(o.rep.err_n);
                    coords.extend_from_slice(&o.coords);
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n(String::new(), Replicate::CSV_HEADER.len()));
                    let pos = Replicate::CSV_HEADER.iter().position(|h| *h == "seed").unwrap_or(0);
                    row[point.keys.len() + pos] = seed.to_string();
                    row.push(format!("error: {e}"));
                    errors += 1;
                    failures.push(format!("{:?} seed {seed}: {e}", point.keys));
                }
            }
            reps.push(row);
        }
        let (n, p) = sizes[index];
        let (km, kse) = mean_sem(&ks);
        let (em, ese) = mean_sem(&es);
        let mut row = key_cells(point);
        row.extend([
            n.to_string(),
            p.to_string(),
            seeds.len().to_string(),
            ks.len().to_string(),
            opt(km),
            opt(kse),
            opt(em),
            opt(ese),
        ]);
        if with_ks {
            row.push(opt(coordinate_ks(cfg, point, &coords)));
        }
        row.push(if errors > 0 {
            format!("error: {errors} replicates failed")
        } else if ks.is_empty() {
            "non_separable".into()
        } else {
            "ok".into()
        });
        summary.push(row);
    }
    Ok((reps, summary, failures))
}

fn coordinate_ks(cfg: &ExperimentConfig, p: &Point, coords: &[EmpiricalCoordinate]) -> Option<f64> {
    if coords.is_empty() {
        return None;
    }
    let ast = isotropic(cfg, &p.model).ok()?;
    let pred = ast.kappa_star(p.psi).ok()?;
    let limit = ast
        .limit_coordinate_law(&pred, cfg.numerics.coordinate_samples, cfg.sim.base_seed)
        .ok()?;
    Some(sliced_ks_distance(coords, &limit, KS_SLICES))
}

fn metadata(cfg: &ExperimentConfig, leg: &str) -> Vec<String> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    vec![
        format!("maxmargin-harness {}", env!("CARGO_PKG_VERSION")),
        format!("experiment: {}", cfg.experiment.tag()),
        format!("leg: {leg}"),
        format!(
            "quad_order: {} per panel; mp_order: {}",
            cfg.numerics.quad_order, cfg.numerics.mp_order
        ),
        format!("{TIMESTAMP_PREFIX}{stamp}"),
        "config:".into(),
        cfg.to_toml(),
    ]
}

/// First characters of the only header line that varies between identical runs.
pub const TIMESTAMP_PREFIX: &str = "generated_unix: ";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Runs the requested legs on a pool of `workers` threads (0 = all cores)
/// and writes `<experiment>_<leg>.csv` files into `out_dir`.
pub fn run(cfg: &ExperimentConfig, leg: Leg, out_dir: &Path, workers: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| crate::error::config(format!("worker pool: {e}")))?;
    pool.install(|| run_inner(cfg, leg, out_dir))
}

fn run_inner(cfg: &ExperimentConfig, leg: Leg, out_dir: &Path) -> Result<RunOutcome> {
    ensure_dir(out_dir)?;
    let tag = cfg.experiment.tag();
    let mut outcome = RunOutcome {
        files: Vec::new(),
        failures: Vec::new(),
        comparison: None,
    };
    let mut asym = None;
    if leg != Leg::Simulate {
        let (table, failures) = predict_table(cfg)?;
        let path = out_dir.join(format!("{tag}_asymptotic.csv"));
        table.write(&path, &metadata(cfg, "asymptotic"))?;
        outcome.files.push(path);
        outcome.failures.extend(failures);
        asym = Some(table);
    }
    let simulate = leg == Leg::Simulate || (leg == Leg::Both && cfg.experiment.has_simulation());
    if simulate {
        let (reps, summary, failures) = simulate_tables(cfg)?;
        let path = out_dir.join(format!("{tag}_replicates.csv"));
        reps.write(&path, &metadata(cfg, "replicates"))?;
        outcome.files.push(path);
        let path = out_dir.join(format!("{tag}_simulation.csv"));
        summary.write(&path, &metadata(cfg, "simulation"))?;
        outcome.files.push(path);
        outcome.failures.extend(failures);
        if let Some(asym) = &asym {
            let cmp = compare_tables(asym, &summary, &cfg.tolerances)?;
            let path = out_dir.join(format!("{tag}_comparison.csv"));
            cmp.write(&path, &metadata(cfg, "comparison"))?;
            outcome.files.push(path);
            outcome.comparison = Some(cmp);
        }
    }
    Ok(outcome)
}
