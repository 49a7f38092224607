use std::process::{Command, Output};

use nvis_reliability::cli::output::{read_csv, read_mesh_json};

const BIN: &str = env!("CARGO_BIN_EXE_nvis-reliability");

fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

#[test]
fn validate_passes() {
    let out = cli(&["validate"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 8);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "sim.pb0 = 0.05\nno.such.key = 1\n").unwrap();
    let out = cli(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no.such.key"));

    let missing = dir.path().join("missing.conf");
    assert_eq!(cli(&["simulate", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(cli(&["sweep", "--sub-grid", "clusters=9"]).status.code(), Some(1));
}

#[test]
fn off_axis_pb0_single_run_only() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    std::fs::write(&conf, "sim.pb0 = 0.05\n").unwrap();
    let c = conf.to_str().unwrap();
    let out = cli(&["simulate", "--config", c]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["transactions"]["total"].as_u64().unwrap() > 0);
    let out = cli(&["sweep", "--config", c, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn event_budget_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    std::fs::write(&conf, "sim.event_budget = 10\n").unwrap();
    let out = cli(&["simulate", "--config", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn reference_parses_back() {
    let out = cli(&["config-reference"]);
    assert_eq!(out.status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("ref.conf");
    std::fs::write(&conf, &out.stdout).unwrap();
    assert_eq!(cli(&["simulate", "--config", conf.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn sweep_mesh_domain_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let conf = dir.path().join("c.conf");
    std::fs::write(&conf, "experiment.rounds = 3\n").unwrap();
    let out = cli(&[
        "sweep",
        "--config",
        conf.to_str().unwrap(),
        "--sub-grid",
        "clusters=8,16;redundancy=1;pb0=1e-3,4e-2",
        "--modes",
        "none,social",
        "--protocols",
        "eaatp,cubic",
        "--out",
        d,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("results.csv");
    let rows = read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2 * 2);
    assert!(rows.iter().all(|r| r.runs == 3));

    let mesh_dir = dir.path().join("m");
    let out = cli(&["mesh", csv.to_str().unwrap(), "--out", mesh_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let from_csv = read_mesh_json(std::fs::File::open(mesh_dir.join("meshes.json")).unwrap()).unwrap();
    assert_eq!(from_csv.len(), 4);
    assert!(from_csv.iter().all(|m| m.partial && m.points.len() == 4));

    let swept = read_mesh_json(std::fs::File::open(dir.path().join("meshes.json")).unwrap()).unwrap();
    for (a, b) in swept.iter().zip(&from_csv) {
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!((p.cell, p.mode, p.protocol, p.str.n), (q.cell, q.mode, q.protocol, q.str.n));
            assert!((p.str.mean - q.str.mean).abs() < 5e-7);
        }
    }

    for input in [csv.clone(), mesh_dir.join("meshes.json")] {
        let map_dir = dir.path().join(format!("map-{}", input.extension().unwrap().to_str().unwrap()));
        let out = cli(&[
            "domain-map",
            input.to_str().unwrap(),
            "--domain-modes",
            "none",
            "--out",
            map_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        let svg = std::fs::read_to_string(map_dir.join("domain.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("modes none"));
    }
}
