use std::process::Command;

fn subfins(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_subfins")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn heisenberg_distance() {
    let (code, out, _) = subfins(&["distance", "--system", "heisenberg", "--from", "0,0,0", "--to", "1,0,0"]);
    assert_eq!(code, 0);
    assert_eq!(out.trim(), "1.000000");
}

#[test]
fn validate_curvature_weighted_unicycle() {
    let (code, out, _) = subfins(&["validate", "--system", "unicycle", "--metric", "curvature_weighted", "--samples", "500"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["convexity_ok"], true);
    assert_eq!(v["samples"], 500);
}

#[test]
fn malformed_config_exits_2_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"system\": \"heisenberg\",").unwrap();
    let (code, _, err) = subfins(&["shoot", "--config", cfg.to_str().unwrap(), "--from", "0,0,0", "--to", "1,0,0"]);
    assert_eq!(code, 2);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "SyntaxError");
}

#[test]
fn usage_and_lookup_errors() {
    assert_eq!(subfins(&["distance", "--system", "noSuch", "--from", "0", "--to", "1"]).0, 2);
    assert_eq!(subfins(&["flow", "--system", "heisenberg", "--from", "0,0", "--p0", "1,0,0"]).0, 2);
    let (code, _, err) = subfins(&["frobnicate"]);
    assert_eq!(code, 2);
    assert!(err.contains("UsageError"));
    let (code, out, _) = subfins(&["systems", "list"]);
    assert_eq!(code, 0);
    for name in ["heisenberg", "martinet", "unicycle", "unicycle_reduced", "euclidean"] {
        assert!(out.contains(name));
    }
}

#[test]
fn computational_failure_exits_1() {
    // zero momentum for a non-quadratic metric
    let (code, _, err) = subfins(&["flow", "--system", "unicycle", "--metric", "curvature_weighted", "--from", "0,0,0,0", "--p0", "0,0,1,0"]);
    assert_eq!(code, 1);
    assert!(err.contains("DomainError"));
}

#[test]
fn inline_config_flow_writes_round_trippable_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sys.json");
    std::fs::write(
        &cfg,
        r#"{"system": {"name": "contact", "dim": 3, "coordinates": ["x", "y", "z"],
                       "frame": [[1, 0, "-y/2"], [0, 1, "x/2"]],
                       "metric": {"type": "custom", "F2": "u1^2 + u2^2 + sqrt(u1^4 + u2^4)"}},
            "solver": {"dt": 0.01}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let (code, _, err) = subfins(&[
        "flow", "--config", cfg.to_str().unwrap(), "--from", "0,0,0", "--p0", "1,0.5,0.2", "--time", "2",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let csv = out_dir.join("flow.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,x1,x2,x3,p1,p2,p3,u1,u2,eta,F_speed,horiz_residual\n"));
    let traj = subfins::io::read_trajectory_csv(text.as_bytes()).unwrap();
    assert_eq!(traj.len(), 201);
    let mut again = Vec::new();
    subfins::io::write_trajectory_csv(&mut again, &traj).unwrap();
    assert_eq!(String::from_utf8(again).unwrap(), text);
    assert!(traj.eta_drift() < 1e-8);
    let gp = std::fs::read_to_string(out_dir.join("flow.gp")).unwrap();
    assert!(gp.contains("splot 'flow.csv'"));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, threads: &str| {
        let d = dir.path().join(sub);
        let (code, out, _) = subfins(&[
            "shoot", "--system", "heisenberg", "--from", "0,0,0", "--to", "0.3,-0.2,0.1", "--restarts", "6",
            "--seed", "42", "--threads", threads, "--out", d.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        (out, std::fs::read(d.join("geodesic.csv")).unwrap(), std::fs::read(d.join("summary.json")).unwrap())
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "2");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let summary: serde_json::Value = serde_json::from_slice(&a.2).unwrap();
    for key in ["distance", "p0", "converged", "endpoint_error", "length", "restarts_used"] {
        assert!(summary.get(key).is_some(), "{key}");
    }
}

#[test]
fn martinet_pipeline_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(subfins(&["flow", "--system", "martinet", "--from", "0,0,0", "--p0", "0,1,0", "--out", d]).0, 0);
    let traj = dir.path().join("flow.csv");
    let (code, out, _) = subfins(&["classify", "--system", "martinet", "--trajectory", traj.to_str().unwrap(), "--out", d]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["abnormal"], true);
    let file = std::fs::File::open(dir.path().join("certificate.csv")).unwrap();
    let (header, sec) = subfins::io::read_certificate_csv(std::io::BufReader::new(file)).unwrap();
    assert_eq!(header.kind, "abnormal");
    assert!(header.residual <= 1e-8);
    assert_eq!(sec.gammas[0], vec![0.0, 0.0, 1.0]);
    // wrong shape for the system
    assert_eq!(subfins(&["classify", "--system", "unicycle", "--trajectory", traj.to_str().unwrap()]).0, 2);
}

#[test]
fn laplacian_and_invariance_commands() {
    let (code, out, _) = subfins(&["laplacian", "--system", "heisenberg", "--field", "x^2 + y^2", "--at", "0,0,0"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((v["value"].as_f64().unwrap() - 4.0).abs() < 1e-12);
    let (code, out, _) = subfins(&["laplacian", "--system", "euclidean(3)", "--scan", "--fields", "linear", "--samples", "10"]);
    assert_eq!(code, 0);
    assert!(out.contains("verdict: flat"));
    let (code, out, _) = subfins(&["invariance", "--system", "heisenberg", "--from", "0.1,0.2,0", "--v0", "1,0,-0.1", "--time", "1"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["max_residual"].as_f64().unwrap() < 1e-6);
    let (code, out, _) = subfins(&["brackets", "--system", "martinet", "--at", "1,0,0"]);
    assert_eq!(code, 0);
    assert!(out.contains("\"step\": 2"));
}
