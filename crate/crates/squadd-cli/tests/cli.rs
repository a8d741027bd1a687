use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn squadd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_squadd"))
        .args(args)
        .current_dir(dir)
        .env_remove("SQUADD_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn transfer_writes_report_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    let o = squadd(&["transfer", "--g-t2-star", "0.1", "--n-p", "40", "--output-dir", "out"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&d.path().join("out/transfer.json"));
    // scipy quad of the single-period closed form, frozen.
    let e = r["exact_error"].as_f64().unwrap();
    assert!((e - 0.008_123_273_878_455).abs() < 1e-10, "{e}");
    assert!((r["master_error"].as_f64().unwrap() - e).abs() < 1e-10);
    let m = read_json(&d.path().join("out/manifest.json"));
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["command"], "transfer");
    assert!((m["resolved"]["delta_xi"].as_f64().unwrap() - 10.0 * 2f64.sqrt()).abs() < 1e-12);
    assert!(stderr(&o).contains("default physics.g = 1"));
}

#[test]
fn conflicting_dephasing_keys_exit_2() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.toml"), "[physics]\ndelta_xi = 1.0\ng_t2_star = 0.1\n").unwrap();
    let o = squadd(&["transfer", "--config", "c.toml"], d.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("physics.delta_xi") && e.contains("physics.g_t2_star"), "{e}");
}

#[test]
fn unknown_key_and_bad_values_exit_2() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.toml"), "[physics]\ng_t2_star = 0.1\nwidth = 3\n").unwrap();
    assert_eq!(squadd(&["transfer", "--config", "c.toml"], d.path()).status.code(), Some(2));
    let o = squadd(&["transfer", "--g-t2-star", "0.1", "--kappa", "-1"], d.path());
    assert_eq!(o.status.code(), Some(2));
    let o = squadd(&["transfer", "--g-t2-star", "0.1", "--g", "3 ns"], d.path());
    assert_eq!(o.status.code(), Some(2));
    let o = squadd(&["transfer", "--g-t2-star", "0.1", "--n-p", "7"], d.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_file_values() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.toml"), "output_dir = \"o\"\n[physics]\ng_t2_star = 0.1\n[schedule]\nn_p = 40\n")
        .unwrap();
    let o = squadd(&["transfer", "--config", "c.toml", "--n-p", "100", "--delta-xi", "2"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&d.path().join("o/transfer.json"));
    assert!((r["tau"].as_f64().unwrap() - std::f64::consts::PI / 100.0).abs() < 1e-15);
    let m = read_json(&d.path().join("o/manifest.json"));
    assert_eq!(m["resolved"]["delta_xi"].as_f64(), Some(2.0));
    assert_eq!(m["config"]["physics"]["g_t2_star"], Value::Null);
}

#[test]
fn output_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_squadd"))
        .args(["transfer", "--g-t2-star", "0.1"])
        .current_dir(d.path())
        .env("SQUADD_OUTPUT_DIR", "from_env")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.path().join("from_env/transfer.json").exists());
}

#[test]
fn missing_experiment_prints_usage() {
    let d = tempfile::tempdir().unwrap();
    let o = squadd(&["reproduce-figure"], d.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("Usage") && e.contains("fig2_error_vs_np"), "{e}");
    assert_eq!(squadd(&["reproduce-figure", "fig9"], d.path()).status.code(), Some(2));
    assert_eq!(squadd(&["reproduce-figure", "fig2", "--grid", "width=1"], d.path()).status.code(), Some(2));
}

#[test]
fn reproduce_and_verify_golden() {
    let d = tempfile::tempdir().unwrap();
    let args = ["fig2", "--grid", "n_p=8,16", "--grid", "kappa_over_g=0,0.01", "--output-dir", "run"];
    let mut full = vec!["reproduce-figure"];
    full.extend(args);
    let o = squadd(&full, d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = d.path().join("run/fig2_error_vs_np.csv");
    let summary = read_json(&d.path().join("run/fig2_error_vs_np.json"));
    assert_eq!(summary["rows"], 4);
    assert!(d.path().join("run/manifest.json").exists());

    // Rerun is bit-identical.
    let first = std::fs::read_to_string(&csv).unwrap();
    let mut again = full.clone();
    *again.last_mut().unwrap() = "run2";
    assert!(squadd(&again, d.path()).status.success());
    assert_eq!(first, std::fs::read_to_string(d.path().join("run2/fig2_error_vs_np.csv")).unwrap());

    let verify = |golden: &str, table: Option<&str>| {
        let mut v = vec!["verify-golden"];
        v.extend(args);
        v.extend(["--golden", golden]);
        if let Some(t) = table {
            v.extend(["--table", t]);
        }
        squadd(&v, d.path())
    };
    let o = verify("run/fig2_error_vs_np.csv", None);
    assert!(o.status.success(), "{}", stderr(&o));

    // Change one digit of one error value.
    let mut lines: Vec<String> = first.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[2].split(',').map(String::from).collect();
    let v: f64 = cells[2].parse().unwrap();
    cells[2] = format!("{:?}", v * 1.001);
    lines[2] = cells.join(",");
    std::fs::write(d.path().join("tampered.csv"), lines.join("\n") + "\n").unwrap();
    let o = verify("tampered.csv", Some("run/fig2_error_vs_np.csv"));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = verify("run/fig2_error_vs_np.csv", Some("run/fig2_error_vs_np.csv"));
    assert!(o.status.success());
}

#[test]
fn readout_outside_convergence_domain_warns() {
    let d = tempfile::tempdir().unwrap();
    let o = squadd(&["readout", "--g", "0.1", "--kappa", "10", "--kappa-tau", "2.0", "--t-f", "100"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("exceeds the convergence domain"));
    let r = read_json(&d.path().join("squadd-out/readout.json"));
    assert!(r["analytic"].is_null());
    assert!(r["numeric"]["xi"].as_f64().unwrap() > 0.0);
    assert!(d.path().join("squadd-out/readout_curve.csv").exists());
}

#[test]
fn readout_in_domain_with_monte_carlo() {
    let d = tempfile::tempdir().unwrap();
    let o = squadd(
        &["readout", "--g", "0.1", "--kappa", "1", "--kappa-tau", "0.2", "--n-traj", "2000", "--seed", "5"],
        d.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&d.path().join("squadd-out/readout.json"));
    let snr = r["optimal"]["snr"].as_f64().unwrap();
    assert!((snr - 2.0 * 3f64.sqrt() / 0.2f64.sqrt()).abs() < 1e-9);
    let f = r["monte_carlo"]["fidelity"].as_f64().unwrap();
    assert!(f > 0.5 && f <= 1.0);
    assert!(d.path().join("squadd-out/readout_histogram.csv").exists());
}

#[test]
fn ensemble_reports_bright_and_dark_modes() {
    let d = tempfile::tempdir().unwrap();
    let o = squadd(&["ensemble", "--delta-xi", "1", "--n", "300", "--dxi-tau", "0.5", "--seed", "3"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&d.path().join("squadd-out/ensemble.json"));
    let bound = 10.0 / 300f64.sqrt() * r["g_ens"].as_f64().unwrap();
    assert!(r["max_doublet_deviation"].as_f64().unwrap() < bound);
    assert_eq!(r["n_dark_below_threshold"], 297);
    // The written ensemble can be read back.
    let o = squadd(&["ensemble", "--delta-xi", "1", "--ensemble-file", "squadd-out/ensemble.txt", "--output-dir", "b"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r2 = read_json(&d.path().join("b/ensemble.json"));
    assert_eq!(r["overlaps"], r2["overlaps"]);
}

#[test]
fn controls_finite_pulses() {
    let d = tempfile::tempdir().unwrap();
    let o = squadd(
        &["controls", "--g-t2-star", "1", "--n-p", "20", "--t-p", "0.01", "--variant", "finite_duration", "--phase-pattern", "alternate_pairs"],
        d.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&d.path().join("squadd-out/controls.json"));
    let e = r["error"].as_f64().unwrap();
    assert!(e > 0.0 && e < 0.05, "{e}");
    let o = squadd(&["controls", "--g-t2-star", "1", "--variant", "counter_rotating"], d.path());
    assert_eq!(o.status.code(), Some(2));
}
