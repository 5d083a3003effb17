use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use zfmaser::units::{TimeTrace, Unit};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_zfmaser"));
    c.env_remove(zfmaser::cli::OUT_DIR_ENV);
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn assert_valid(doc: &Value) {
    let schema: Value = serde_json::from_str(zfmaser::cli::OUTPUT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "schema errors: {errors:?}\n{doc:#}");
}

fn dir_arg(d: &Path) -> String {
    d.display().to_string()
}

#[test]
fn cooperativity_reference() {
    let o = run(&[
        "cooperativity",
        "--ge-hz",
        "2.3e6",
        "--ge-angular",
        "--kappa-c",
        "2.517e6",
        "--kappa-s-hz",
        "0.29e6",
        "--kappa-s-angular",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c: f64 = stdout(&o).trim().parse().unwrap();
    assert!((c - 182.0).abs() <= 1.0, "C = {c}");
}

#[test]
fn angular_flag_changes_the_rate() {
    let o = run(&["cooperativity", "--ge-hz", "2.3e6", "--kappa-c", "2.517e6", "--kappa-s-hz", "0.29e6"]);
    let c: f64 = stdout(&o).trim().parse().unwrap();
    // without the flags both rates lose their 2π: C scales by 2π
    assert!((c * std::f64::consts::TAU - 182.14).abs() < 0.1, "C = {c}");
}

#[test]
fn thermal_photons_reference() {
    let o = run(&["thermal-photons", "--f", "1.4745e9", "--temp", "290"]);
    assert!(o.status.success());
    let n: f64 = stdout(&o).trim().parse().unwrap();
    assert!((n / 4097.0 - 1.0).abs() < 5e-3, "n = {n}");
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let o = run(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn help_and_version_succeed() {
    let o = run(&["--version"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains(zfmaser::cli::VERSION));
    for sub in [
        "simulate-triplet",
        "fit-trepr",
        "qcircle",
        "thermal-photons",
        "convert-power",
        "simulate-maser",
        "fit-maser",
        "cooperativity",
        "rabi",
        "svd-tas",
        "fit-tcspc",
        "quantum-yield",
        "gen-synthetic",
    ] {
        let o = run(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
}

#[test]
fn unknown_subcommand_is_one_line_user_error() {
    let o = run(&["teleport"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim().lines().count(), 1, "{}", stderr(&o));
}

#[test]
fn malformed_csv_is_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "time,value\n0,1\n").unwrap();
    let o = run(&["fit-trepr", "--input", p.to_str().unwrap(), "--out-dir", &dir_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim().lines().count(), 1, "{}", stderr(&o));
}

#[test]
fn schema_invalid_param_file_is_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.json");
    std::fs::write(&p, r#"{"k_x": "fast"}"#).unwrap();
    let o = run(&["simulate-triplet", "--params", p.to_str().unwrap(), "--out-dir", &dir_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim().lines().count(), 1);
}

#[test]
fn inconsistent_lifetimes_are_user_error() {
    let o = run(&["quantum-yield", "--tau-f", "1", "--tau-isc", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("flat.csv");
    let t: Vec<f64> = (0..200).map(|i| i as f64 * 1e-8).collect();
    let tr = TimeTrace::new(t, vec![5.0; 200], Unit::Photons).unwrap();
    tr.write_csv(std::fs::File::create(&p).unwrap()).unwrap();
    let o = run(&["rabi", "--input", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn env_var_sets_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["gen-synthetic", "--kind", "tcspc", "--seed", "3"])
        .env(zfmaser::cli::OUT_DIR_ENV, dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("tcspc.csv").exists());
    let doc = read_json(&dir.path().join("tcspc.json"));
    assert_valid(&doc);
    assert_eq!(doc["manifest"]["seed"], 3);
    assert_eq!(doc["manifest"]["output_dir"], dir_arg(dir.path()));
}

#[test]
fn gen_synthetic_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for kind in ["biexp-trepr", "maser-burst", "rank2-tas", "tcspc"] {
        for d in [&a, &b] {
            let o = run(&["gen-synthetic", "--kind", kind, "--seed", "42", "--out-dir", &dir_arg(d.path())]);
            assert!(o.status.success(), "{kind}: {}", stderr(&o));
        }
        let fa = std::fs::read(a.path().join(format!("{kind}.csv"))).unwrap();
        let fb = std::fs::read(b.path().join(format!("{kind}.csv"))).unwrap();
        assert_eq!(fa, fb, "{kind}");
        let doc = read_json(&a.path().join(format!("{kind}.json")));
        assert_valid(&doc);
        assert_eq!(doc["results"]["kind"], kind);
    }
}

#[test]
fn unknown_kind_is_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gen-synthetic", "--kind", "rank3-tas", "--out-dir", &dir_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

/// Runs a subcommand into `dir` and returns its validated JSON document.
fn run_json(dir: &Path, args: &[&str], stem: &str) -> Value {
    let mut all: Vec<&str> = args.to_vec();
    let d = dir_arg(dir);
    all.extend(["--out-dir", &d]);
    let o = run(&all);
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    let doc = read_json(&dir.join(format!("{stem}.json")));
    assert_valid(&doc);
    assert_eq!(doc["manifest"]["subcommand"], args[0]);
    assert_eq!(doc["manifest"]["tool_version"], zfmaser::cli::VERSION);
    doc
}

#[test]
fn every_subcommand_emits_valid_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ds = dir_arg(d);
    for kind in ["biexp-trepr", "maser-burst", "rank2-tas", "tcspc"] {
        run_json(d, &["gen-synthetic", "--kind", kind, "--seed", "1"], kind);
    }
    let path = |n: &str| format!("{ds}/{n}");

    let triplet = d.join("triplet.json");
    std::fs::write(&triplet, r#"{"k_x": 3.6e5, "k_z": 0.35e5, "w_xz": 0.24e5}"#).unwrap();
    let doc = run_json(d, &["simulate-triplet", "--params", triplet.to_str().unwrap()], "simulate-triplet");
    assert_eq!(doc["manifest"]["param_file"], triplet.to_str().unwrap());
    let csv = std::fs::read_to_string(d.join("simulate-triplet.csv")).unwrap();
    assert!(csv.starts_with("t_us,n_x,n_z,difference"));

    let doc = run_json(d, &["fit-trepr", "--input", &path("biexp-trepr.csv")], "fit-trepr");
    let am = doc["results"]["params"]["alpha_minus"].as_f64().unwrap();
    assert!((am / -3.93e5 - 1.0).abs() < 0.05, "α₋ = {am}");
    assert_eq!(doc["manifest"]["input_paths"][0], path("biexp-trepr.csv"));

    let doc = run_json(d, &["qcircle", "--d", "0.16", "--d2", "1.81", "--f0", "1.476e9", "--f-low", "1.4758e9", "--f-high", "1.4762e9"], "qcircle");
    assert!((doc["results"]["coupling"].as_f64().unwrap() - 0.1975).abs() < 1e-3);
    assert!((doc["results"]["loaded_q"].as_f64().unwrap() - 3690.0).abs() < 0.5);

    run_json(d, &["thermal-photons", "--f", "1.476e9", "--temp", "290"], "thermal-photons");
    let doc = run_json(d, &["convert-power", "--value", "-10", "--from", "dbm", "--to", "photons", "--coupling", "0.2", "--kappa-c", "2.517e6", "--f", "1.4745e9"], "convert-power");
    let photons = doc["results"]["output"].as_f64().unwrap();
    assert!((photons / 2.44e14 - 1.0).abs() < 0.01, "{photons}");

    let doc = run_json(d, &["simulate-maser"], "simulate-maser");
    let peak = doc["results"]["peak_photon_number"].as_f64().unwrap();
    assert!(peak > 0.8e14 && peak < 7.2e14);
    let csv = std::fs::read_to_string(d.join("simulate-maser.csv")).unwrap();
    assert!(csv.starts_with("t_us,photon_number,re_coherence,im_coherence,inversion,spin_correlation_per_N"));

    let doc = run_json(d, &["fit-maser", "--input", &path("maser-burst.csv"), "--init-ge-hz", "2.0e6", "--init-ge-angular"], "fit-maser");
    let c = doc["results"]["cooperativity"].as_f64().unwrap();
    assert!((c - 182.17).abs() < 1.0, "C = {c}");
    for k in ["g_e", "kappa_s", "n_spins"] {
        assert!(doc["results"]["uncertainties"][k].is_number(), "{k}");
    }

    run_json(d, &["cooperativity", "--ge-hz", "2.3e6", "--ge-angular", "--kappa-c", "2.517e6", "--kappa-s-hz", "0.29e6", "--kappa-s-angular"], "cooperativity");
    let doc = run_json(d, &["rabi", "--input", &path("maser-burst.csv"), "--from-us", "1", "--to-us", "8"], "rabi");
    assert!(doc["results"]["rabi_frequency_hz"].as_f64().unwrap() > 1e5);

    let doc = run_json(d, &["svd-tas", "--input", &path("rank2-tas.csv")], "svd-tas");
    assert_eq!(doc["results"]["significant_count"], 2);
    assert!(d.join("svd-tas-spectra.csv").exists() && d.join("svd-tas-profiles.csv").exists());

    let doc = run_json(d, &["fit-tcspc", "--input", &path("tcspc.csv"), "--components", "2"], "fit-tcspc");
    let amps = doc["results"]["amplitudes"].as_array().unwrap();
    let total: f64 = amps.iter().map(|a| a.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let doc = run_json(d, &["quantum-yield", "--tau-f", "0.46", "--tau-isc", "0.685"], "quantum-yield");
    assert!((doc["results"]["theta_t"].as_f64().unwrap() - 0.67).abs() < 0.01);
}

#[test]
fn plot_script_accompanies_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate-maser", "--plot-script", "--name", "burst", "--out-dir", &dir_arg(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let gp = std::fs::read_to_string(dir.path().join("burst.gp")).unwrap();
    assert!(gp.contains("set datafile separator ','"));
    assert!(gp.contains("burst.csv"));
}

#[test]
fn convert_power_trace_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("p.csv");
    let t: Vec<f64> = (0..20).map(|i| i as f64 * 1e-7).collect();
    let y: Vec<f64> = (0..20).map(|i| -30.0 + i as f64 * 0.731).collect();
    TimeTrace::new(t, y.clone(), Unit::Dbm)
        .unwrap()
        .write_csv(std::fs::File::create(&src).unwrap())
        .unwrap();
    let d = dir_arg(dir.path());
    let o = run(&["convert-power", "--input", src.to_str().unwrap(), "--from", "dbm", "--to", "watts", "--name", "w", "--out-dir", &d]);
    assert!(o.status.success(), "{}", stderr(&o));
    let w = dir.path().join("w.csv");
    let o = run(&["convert-power", "--input", w.to_str().unwrap(), "--from", "watts", "--to", "dbm", "--name", "back", "--out-dir", &d]);
    assert!(o.status.success(), "{}", stderr(&o));
    let back = TimeTrace::read_csv(std::fs::File::open(dir.path().join("back.csv")).unwrap(), Unit::Dbm).unwrap();
    for (a, b) in back.y().iter().zip(&y) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}
