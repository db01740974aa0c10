use std::path::Path;
use std::process::Command;

use maxmargin_harness::config::Tolerances;
use maxmargin_harness::experiment::TIMESTAMP_PREFIX;
use maxmargin_harness::table::Table;
use maxmargin_harness::{compare_report, compare_tables, run, ExperimentConfig, HarnessError, Leg};

const SMALL: &str = r#"
experiment = "isotropic_curve"
[model]
betas = [1.0, 8.0]
[grid]
psi = [2.0, 4.0]
[sim]
p = 120
replicates = 4
base_seed = 3
"#;

fn without_timestamp(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with(&format!("# {TIMESTAMP_PREFIX}")))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn empty_grid_is_rejected_before_running() {
    let err = ExperimentConfig::from_toml("experiment = \"isotropic_curve\"\n[grid]\npsi = []\n").unwrap_err();
    assert!(matches!(err, HarnessError::Config(ref m) if m.contains("grid.psi")), "{err}");
    let err = ExperimentConfig::from_toml("experiment = \"rf_surface\"\n[grid]\npsi1 = [1.0]\n").unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)));
}

#[test]
fn invalid_configurations_are_rejected() {
    for text in [
        "experiment = \"no_such_experiment\"\n[grid]\npsi = [1.0]\n",
        "experiment = \"isotropic_curve\"\n[grid]\npsi = [-1.0]\n",
        "experiment = \"isotropic_curve\"\n[grid]\npsi = [100.0]\n[sim]\np = 100\n",
        "experiment = \"isotropic_curve\"\n[grid]\npsi = [2.0]\n[sim]\nreplicates = 2\nseeds = [1]\n",
        "experiment = \"isotropic_curve\"\n[grid]\npsi = [2.0]\n[sim]\nreplicates = 0\n",
        "experiment = \"misspecified_curve\"\n[grid]\npsi = [2.0]\n",
        "experiment = \"isotropic_curve\"\n[grid]\npsi = [2.0]\nunknown_field = 1\n",
    ] {
        assert!(matches!(ExperimentConfig::from_toml(text), Err(HarnessError::Config(_))), "{text}");
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert_eq!(count, 7);
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(&cfg, Leg::Both, a.path(), 1).unwrap();
    let rb = run(&cfg, Leg::Both, b.path(), 3).unwrap();
    assert!(ra.failures.is_empty());
    assert_eq!(ra.files.len(), 4);
    for (fa, fb) in ra.files.iter().zip(&rb.files) {
        assert_eq!(fa.file_name(), fb.file_name());
        assert_eq!(without_timestamp(fa), without_timestamp(fb));
    }
    let cmp = ra.comparison.unwrap();
    assert_eq!(
        cmp.header,
        [
            "beta", "psi", "kappa_star", "kappa_n_mean", "kappa_n_sem", "err_star", "err_n_mean", "err_n_sem",
            "dev_kappa", "dev_err", "flag"
        ]
    );
    assert_eq!(cmp.rows.len(), 4);
    let reps = Table::read(&ra.files[1]).unwrap();
    assert_eq!(reps.rows.len(), 16);
}

#[test]
fn self_comparison_has_zero_deviation() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cfg, Leg::Predict, dir.path(), 1).unwrap();
    let asym = Table::read(&out.files[0]).unwrap();
    let mut sim = Table::new(&["beta", "psi", "kappa_n_mean", "kappa_n_sem", "err_n_mean", "err_n_sem", "status"]);
    let (k, e) = (asym.column("kappa_star").unwrap(), asym.column("err_star").unwrap());
    for r in &asym.rows {
        sim.push(vec![r[0].clone(), r[1].clone(), r[k].clone(), "0".into(), r[e].clone(), "0".into(), "ok".into()]);
    }
    let sim_path = dir.path().join("sim.csv");
    sim.write(&sim_path, &["self".into()]).unwrap();
    let cmp = compare_report(&out.files[0], &sim_path, &Tolerances::default()).unwrap();
    let (dk, de, fl) = (cmp.column("dev_kappa").unwrap(), cmp.column("dev_err").unwrap(), cmp.column("flag").unwrap());
    for r in 0..cmp.rows.len() {
        assert_eq!(cmp.number(r, dk), Some(0.0));
        assert_eq!(cmp.number(r, de), Some(0.0));
        assert_eq!(cmp.rows[r][fl], "ok");
    }
    // Mismatched keys.
    sim.rows[0][1] = "2.5".into();
    assert!(matches!(compare_tables(&asym, &sim, &Tolerances::default()), Err(HarnessError::KeyMismatch(_))));
    sim.rows.pop();
    assert!(matches!(compare_tables(&asym, &sim, &Tolerances::default()), Err(HarnessError::KeyMismatch(_))));
}

#[test]
fn below_threshold_points_are_marked() {
    let text = "experiment = \"isotropic_curve\"\n[grid]\npsi = [0.2, 2.0]\n[sim]\np = 40\nreplicates = 2\n";
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cfg, Leg::Both, dir.path(), 1).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    let cmp = out.comparison.unwrap();
    let (fl, dk) = (cmp.column("flag").unwrap(), cmp.column("dev_kappa").unwrap());
    assert_eq!(cmp.rows[0][fl], "non_separable");
    assert_eq!(cmp.rows[0][dk], "");
    assert_ne!(cmp.rows[1][fl], "non_separable");
}

#[test]
fn prediction_only_experiments_have_no_simulation_leg() {
    let text = "experiment = \"margin_bound_compare\"\n[grid]\npsi = [2.0]\n";
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run(&cfg, Leg::Simulate, dir.path(), 1), Err(HarnessError::NoSimulation(_))));
    let out = run(&cfg, Leg::Both, dir.path(), 1).unwrap();
    assert_eq!(out.files.len(), 1);
    let t = Table::read(&out.files[0]).unwrap();
    let b = t.column("bound_over_4").unwrap();
    assert!(t.number(0, b).unwrap() >= 1.0);
}

#[test]
fn table_round_trip_skips_comments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let mut t = Table::new(&["a", "b"]);
    t.push(vec!["1".into(), "x,y".into()]);
    t.push(vec!["".into(), "2.5e-3".into()]);
    t.write(&path, &["first\nsecond".into()]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# first\n# second\na,b\n"));
    let back = Table::read(&path).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.number(1, 0), None);
    assert_eq!(back.number(1, 1), Some(2.5e-3));
}

#[test]
fn cli_selftest_and_predict() {
    let exe = env!("CARGO_BIN_EXE_maxmargin");
    let st = Command::new(exe).arg("selftest").output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stdout));
    let text = String::from_utf8_lossy(&st.stdout);
    assert!(text.lines().all(|l| l.starts_with("PASS")));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "experiment = \"isotropic_curve\"\n[grid]\npsi = [3.0]\n").unwrap();
    let out = Command::new(exe)
        .args(["predict", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .args(["--quad-order", "12", "--workers", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("isotropic_curve_asymptotic.csv")).unwrap();
    assert!(csv.contains("quad_order: 12"));
    let bad = Command::new(exe).args(["predict", "--config", "/nonexistent.toml"]).output().unwrap();
    assert!(!bad.status.success());
}
