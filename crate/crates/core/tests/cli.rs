use std::fs;
use std::path::Path;
use std::process::Command;

use dumbbell_core::cli::output::{field_vtk, verify_manifest, MANIFEST};
use dumbbell_core::cli::run::FieldDump;
use dumbbell_core::cli::{
    parse_config, report, run_experiment, write_results, ExperimentConfig, ExperimentKind, RunRecord,
};
use dumbbell_core::Error;

fn quick_cross_section() -> ExperimentConfig {
    ExperimentConfig::defaults(ExperimentKind::CrossSection)
        .unwrap()
        .with_overrides(&[("cross_section.h", "0.03125"), ("section.disk.radius", "1.0")])
        .unwrap()
}

#[test]
fn empty_record_writes_config_and_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::defaults(ExperimentKind::Rate).unwrap();
    let rec = RunRecord::empty(&cfg);
    let m = write_results(&rec, dir.path()).unwrap();
    let paths: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
    assert_eq!(paths, ["config.toml", "record.json"]);
    let text = fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert_eq!(parse_config(&text, &|_| None).unwrap(), cfg);
    assert!(dir.path().join(MANIFEST).exists());
}

#[test]
fn vtk_is_structured_points() {
    let f = FieldDump::sample("u", [0.0, 0.0, 0.0], [1.0, 0.5, 0.0], 0.25, &|p| {
        Some(p[0] + 10.0 * p[1])
    });
    assert_eq!(f.dims, [5, 3, 1]);
    let text = field_vtk(&f);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# vtk DataFile Version 3.0"));
    assert!(text.contains("\nDATASET STRUCTURED_POINTS\n"));
    assert!(text.contains("\nDIMENSIONS 5 3 1\n"));
    assert!(text.contains("\nPOINT_DATA 15\n"));
    let body = text.split("LOOKUP_TABLE default\n").nth(1).unwrap();
    let vals: Vec<f64> = body.split_whitespace().map(|s| s.parse().unwrap()).collect();
    assert_eq!(vals.len(), 15);
    // x fastest
    assert_eq!(vals[1], 0.25);
    assert_eq!(vals[5], 2.5);
}

#[test]
fn deterministic_reruns_are_byte_identical() {
    let cfg = quick_cross_section();
    assert!(cfg.deterministic);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&cfg).unwrap();
    let rb = run_experiment(&cfg).unwrap();
    assert!(ra.passed);
    assert!(ra.stages.iter().all(|s| s.seconds.is_none()));
    let ma = write_results(&ra, a.path()).unwrap();
    let mb = write_results(&rb, b.path()).unwrap();
    assert_eq!(ma, mb);
    assert!(ma.files.iter().any(|f| f.path == "fields/psi1.vtk"));
}

#[test]
fn report_flags_modified_files() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_experiment(&quick_cross_section()).unwrap();
    write_results(&rec, dir.path()).unwrap();
    let (_, ok) = report(dir.path()).unwrap();
    assert!(ok);
    fs::write(dir.path().join("config.toml"), "kind = \"rate\"\n").unwrap();
    let (_, bad) = verify_manifest(dir.path()).unwrap();
    assert_eq!(bad, ["config.toml"]);
    let (text, ok) = report(dir.path()).unwrap();
    assert!(!ok);
    assert!(text.contains("modified: config.toml"));
}

#[test]
fn stage_context_on_errors() {
    let cfg = quick_cross_section()
        .with_overrides(&[("cross_section.h", "0.9")])
        .unwrap();
    match run_experiment(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "ground mode"),
        other => panic!("{:?}", other.map(|r| r.passed)),
    }
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dumbbell"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("c.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn exit_status_follows_assertions() {
    let dir = tempfile::tempdir().unwrap();
    let base = "kind = \"cross-section\"\nsection.disk.radius = 1.0\ncross_section.h = 0.03125\n";
    let ok = write_config(dir.path(), base);
    let out = binary()
        .args(["run", ok.to_str().unwrap(), "--out"])
        .arg(dir.path().join("ok"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[PASS] closed_form_error"));

    let strict = write_config(dir.path(), &format!("{base}tol.bessel = 1e-12\n"));
    let out = binary()
        .args(["run", strict.to_str().unwrap(), "--out"])
        .arg(dir.path().join("strict"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let status = binary().arg("report").arg(dir.path().join("ok")).status().unwrap();
    assert!(status.success());
}

#[test]
fn bad_key_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "kind = \"rate\"\nsweeps.eps = [0.2, 0.1, 0.05]\n");
    let out = binary().args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep.eps"));

    let p = write_config(
        dir.path(),
        "kind = \"cross-section\"\nsection.disk.radius = 1.0\ncross_section.h = 0.03125\n",
    );
    let out = binary()
        .args(["run", p.to_str().unwrap(), "--out"])
        .arg(dir.path().join("env"))
        .env("DUMBBELL_TOL__BESSEL", "1e-12")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let cfg = fs::read_to_string(dir.path().join("env/config.toml")).unwrap();
    assert_eq!(parse_config(&cfg, &|_| None).unwrap().tol.bessel, 1e-12);
}
