//! Acceptance criteria: one line per criterion, driven by the checked-in configs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dumbbell_core::cli::{load_config, run_experiment, write_results, Assertion, Manifest, RunRecord};

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

struct Run {
    record: RunRecord,
    manifest: Manifest,
    elapsed: Duration,
}

fn run(name: &str, dir: &Path) -> Result<Run, String> {
    let cfg = load_config(&config_path(name)).map_err(|e| format!("{name}: {e}"))?;
    let t = Instant::now();
    let record = run_experiment(&cfg).map_err(|e| format!("{name}: {e}"))?;
    let elapsed = t.elapsed();
    let manifest = write_results(&record, dir).map_err(|e| format!("{name}: {e}"))?;
    Ok(Run {
        record,
        manifest,
        elapsed,
    })
}

struct Line {
    ok: bool,
    detail: String,
}

fn check(run: &Run, names: &[&str]) -> Line {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in names {
        match run.record.assertions.iter().find(|a| a.name == *n) {
            Some(Assertion {
                value,
                relation,
                threshold,
                passed,
                ..
            }) => {
                ok &= passed;
                parts.push(format!("{n}={value:.4e}{relation}{threshold:.3e}"));
            }
            None => {
                ok = false;
                parts.push(format!("{n}=missing"));
            }
        }
    }
    Line {
        ok,
        detail: parts.join(" "),
    }
}

fn within(line: Line, elapsed: Duration, limit: Duration) -> Line {
    let ok = elapsed <= limit;
    Line {
        ok: line.ok && ok,
        detail: format!(
            "{} runtime={:.1}s<={}s",
            line.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test -- --list` and friends
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut lines: Vec<(u32, &str, Line)> = Vec::new();
    let fail = |e: String| Line { ok: false, detail: e };

    match run("oracle-check.toml", &tmp.path().join("oracle")) {
        Ok(r) => {
            lines.push((
                1,
                "radial law",
                within(check(&r, &["radial_law"]), r.elapsed, Duration::from_secs(120)),
            ));
            lines.push((2, "z_R linearity", check(&r, &["zr_linearity"])));
            lines.push((3, "flux law", check(&r, &["flux_law", "chi_ratio"])));
            lines.push((
                11,
                "solver oracles",
                check(
                    &r,
                    &[
                        "dense_vs_sparse",
                        "unit_disk_lambda1",
                        "unit_square_lambda1",
                        "harmonic_residual",
                    ],
                ),
            ));
        }
        Err(e) => {
            for (n, name) in [
                (1, "radial law"),
                (2, "z_R linearity"),
                (3, "flux law"),
                (11, "solver oracles"),
            ] {
                lines.push((n, name, fail(e.clone())));
            }
        }
    }

    lines.push((
        4,
        "compliance routes",
        match run("compliance.toml", &tmp.path().join("compliance")) {
            Ok(r) => check(
                &r,
                &[
                    "route_spread_baseline",
                    "route_spread_extrapolated",
                    "compliance_positive",
                    "m_is_minus_half_c",
                    "energy_minimum_identity",
                ],
            ),
            Err(e) => fail(e),
        },
    ));

    lines.push((
        5,
        "Steiner ordering",
        match run("steiner.toml", &tmp.path().join("steiner")) {
            Ok(r) => within(
                check(&r, &["disk_beyond_error_bars"]),
                r.elapsed,
                Duration::from_secs(1800),
            ),
            Err(e) => fail(e),
        },
    ));

    let rate = run("rate.toml", &tmp.path().join("rate-a"));
    match &rate {
        Ok(r) => {
            lines.push((
                6,
                "eigenvalue gap law",
                within(
                    check(
                        r,
                        &["gap_positive", "gap_slope", "gap_prefactor", "sphere_route_agreement"],
                    ),
                    r.elapsed,
                    Duration::from_secs(1800),
                ),
            ));
            lines.push((
                7,
                "eigenfunction rate",
                check(r, &["eigfun_slope", "eigfun_prefactor_vs_gap"]),
            ));
            lines.push((
                8,
                "channel decay",
                check(r, &["decay_above_bound", "decay_near_sharp_rate"]),
            ));
            lines.push((9, "blow-up profile", check(r, &["blowup_decreasing"])));
        }
        Err(e) => {
            for (n, name) in [
                (6, "eigenvalue gap law"),
                (7, "eigenfunction rate"),
                (8, "channel decay"),
                (9, "blow-up profile"),
            ] {
                lines.push((n, name, fail(e.clone())));
            }
        }
    }

    lines.push((
        10,
        "resonant case",
        match run("resonant.toml", &tmp.path().join("resonant")) {
            Ok(r) => check(
                &r,
                &[
                    "splitting_slope",
                    "plus_branch_prefactor",
                    "minus_branch_prefactor",
                    "localization",
                    "stub_ordering",
                    "tilde_vs_splitting",
                ],
            ),
            Err(e) => fail(e),
        },
    ));

    lines.push((
        12,
        "determinism",
        match (&rate, run("rate.toml", &tmp.path().join("rate-b"))) {
            (Ok(a), Ok(b)) => {
                let same = a.manifest == b.manifest;
                let differing: Vec<&str> = a
                    .manifest
                    .files
                    .iter()
                    .zip(&b.manifest.files)
                    .filter(|(x, y)| x != y)
                    .map(|(x, _)| x.path.as_str())
                    .collect();
                Line {
                    ok: same,
                    detail: if same {
                        format!("{} files byte-identical", a.manifest.files.len())
                    } else {
                        format!("differing: {}", differing.join(", "))
                    },
                }
            }
            (Err(e), _) => fail(e.clone()),
            (_, Err(e)) => fail(e),
        },
    ));

    lines.sort_by_key(|l| l.0);
    let mut all = true;
    for (n, name, l) in &lines {
        all &= l.ok;
        println!(
            "criterion {n:>2} [{}] {name}: {}",
            if l.ok { "PASS" } else { "FAIL" },
            l.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
