//! The `kamlab` binary driven as a subprocess.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use kam_core::cli::read_artifact_json;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn kamlab(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_kamlab"))
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn cfg(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn freq_writes_fifty_monotone_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("freq");
    let o = out.to_str().unwrap();
    assert_eq!(
        kamlab(&[
            "freq",
            "--omega",
            &cfg("golden.json"),
            "--qmax",
            "50",
            "--out",
            o
        ]),
        0
    );
    let text = fs::read_to_string(out.join("psi.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# kamlab "));
    assert_eq!(lines.next(), Some("Q,psi,kmin"));
    let psi: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(psi.len(), 50);
    assert!(psi.windows(2).all(|w| w[1] >= w[0]));
    let profile = fs::read_to_string(out.join("profile.csv")).unwrap();
    assert_eq!(profile.lines().nth(1), Some("eps,Delta,mu,nu"));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    // A copy of the spec under another name must not change the hash.
    let copy = tmp.path().join("renamed.json");
    fs::copy(configs().join("single_harmonic.json"), &copy).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let args = |spec: &str, out: &Path| -> i32 {
        kamlab(&[
            "nf",
            "--spec",
            spec,
            "--eps",
            "1e-3",
            "--c",
            "1",
            "--out",
            out.to_str().unwrap(),
        ])
    };
    assert_eq!(args(&cfg("single_harmonic.json"), &a), 0);
    assert_eq!(args(copy.to_str().unwrap(), &b), 0);
    assert_eq!(
        listing(&a),
        vec!["estimates.json", "h_tilde.json", "nf.json", "phi_grid.csv"]
    );
    for f in listing(&a) {
        assert_eq!(
            fs::read(a.join(&f)).unwrap(),
            fs::read(b.join(&f)).unwrap(),
            "{f}"
        );
    }
    let first = |f: &str| {
        fs::read_to_string(a.join(f))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(first("nf.json"), first("phi_grid.csv"));
    let est = read_artifact_json(&fs::read_to_string(a.join("estimates.json")).unwrap()).unwrap();
    assert_eq!(est["passed"], true);
}

#[test]
fn resonant_frequency_fails_with_an_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let code = kamlab(&[
        "torus",
        "--spec",
        &cfg("resonant.json"),
        "--i0",
        "0,0",
        "--gamma",
        "1",
        "--tau",
        "1",
        "--tol",
        "1e-10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert_eq!(listing(&out), vec!["error.json"]);
    let err: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["kind"], "ResonanceDetected");
    assert_eq!(err["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn failed_rerun_leaves_only_the_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let o = out.to_str().unwrap();
    let spec = cfg("direct_mu1e-4.json");
    let ok = [
        "torus",
        "--spec",
        &spec,
        "--i0",
        "0.7896948635714887,0.8412205457140455",
        "--gamma",
        "1",
        "--tau",
        "1",
    ];
    let mut args = ok.to_vec();
    args.extend(["--tol", "1e-10", "--t", "5", "--out", o]);
    assert_eq!(kamlab(&args), 0);
    assert_eq!(
        listing(&out),
        vec!["torus.json", "torus_surface.csv", "verify.json"]
    );
    let rec = read_artifact_json(&fs::read_to_string(out.join("torus.json")).unwrap()).unwrap();
    assert!(rec["defect_norm"].as_f64().unwrap() < 1e-10);
    assert!(rec["iterations"].as_u64().unwrap() <= 6);
    // Unreachable tolerance in one pass: NonConvergence, earlier artifacts go.
    let mut bad = ok.to_vec();
    bad.extend(["--tol", "1e-30", "--max-iter", "1", "--out", o]);
    assert_eq!(kamlab(&bad), 1);
    let err = read_artifact_json(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["kind"], "NonConvergence");
    assert_eq!(listing(&out), vec!["error.json"]);
    // A successful run clears the error record.
    assert_eq!(kamlab(&args), 0);
    assert!(!out.join("error.json").exists());
}

#[test]
fn torus_through_the_normal_form_is_pulled_back() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("nt");
    let code = kamlab(&[
        "torus",
        "--spec",
        &cfg("single_harmonic.json"),
        "--eps",
        "1e-3",
        "--i0",
        "0.2,-0.3",
        "--gamma",
        "0.01",
        "--tau",
        "1.5",
        "--tol",
        "1e-10",
        "--t",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let pb = read_artifact_json(&fs::read_to_string(out.join("pullback.json")).unwrap()).unwrap();
    assert!(pb["original_defect"].as_f64().unwrap() < 1e-12);
    let v = read_artifact_json(&fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    assert!(v["max_deviation"].as_f64().unwrap() < 1e-9);
}

#[test]
fn scan_writes_reports_and_a_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = tmp.path().join("plan.json");
    fs::write(
        &plan,
        r#"{"spec": {"family": "single_harmonic", "b": 0.5},
            "epsilon": {"from": 1e-2, "to": 1e-6, "points": 5},
            "samples": 128}"#,
    )
    .unwrap();
    let out = tmp.path().join("scan");
    assert_eq!(
        kamlab(&[
            "--threads",
            "2",
            "scan",
            "--plan",
            plan.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    let reports = fs::read_to_string(out.join("reports.csv")).unwrap();
    assert_eq!(
        reports.lines().nth(1),
        Some("eps,mu,gamma,tau,samples,selected,converged,complement_fraction,wall_time")
    );
    assert_eq!(reports.lines().count(), 2 + 5);
    let fit = read_artifact_json(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert!(fit["exponent"].is_number());
    // No Gevrey data in this plan.
    assert!(!out.join("gevrey.csv").exists());
}

#[test]
fn probe_reports_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let code = kamlab(&[
        "probe",
        "--spec",
        &cfg("single_harmonic.json"),
        "--t",
        "2",
        "--h",
        "0.01",
        "--i0",
        "0.1,-0.2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let s = read_artifact_json(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["steps"], 200);
    assert!(s["max_energy_error"].as_f64().unwrap() < 1e-4);
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 2 + 201);
}

#[test]
fn malformed_command_lines_exit_with_usage_status() {
    assert_eq!(kamlab(&["freq", "--qmax", "5", "--out", "/tmp/x"]), 2);
    assert_eq!(kamlab(&["warp"]), 2);
    assert_eq!(kamlab(&["--version"]), 0);
}
