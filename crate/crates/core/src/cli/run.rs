//! Experiment pipelines and their assertions.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::asymptotics::{resonant_sweep, section_lambda1, simple_sweep, ResonantSweep, SimpleSweep};
use crate::compliance::{compliance, steiner_compare};
use crate::discretize::{assemble_stiffness, build_grid, weighted_mass_diagonal, Grid, GridMode, Metric, Resolution};
use crate::eig::{dense_oracle, section_ground_mode, solve_pencil, EigenOptions};
use crate::error::{Error, Result};
use crate::geometry::{make_domain, make_section, DomainKind, SectionKind, SectionShape, Truncation, WeightSpec};
use crate::harmonic::{
    flux_law_check, harmonic_resolution, linearity_check, radial_law_check, solve_phi, solve_v_r, solve_z_r, upsilon,
    HarmonicField, HarmonicOptions,
};
use crate::linalg::CsrMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    pub relation: String,
    pub threshold: f64,
    pub passed: bool,
}

impl Assertion {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, "<=", threshold, value <= threshold)
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, ">=", threshold, value >= threshold)
    }

    pub fn above(name: &str, value: f64, threshold: f64) -> Self {
        Self::new(name, value, ">", threshold, value > threshold)
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, "==", 1.0, ok)
    }

    fn new(name: &str, value: f64, relation: &str, threshold: f64, passed: bool) -> Self {
        Self {
            name: name.into(),
            value,
            relation: relation.into(),
            threshold,
            // NaN never passes
            passed: passed && !value.is_nan(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push_nums(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|&v| Cell::Num(v)).collect());
    }
}

/// A field resampled on a uniform lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub name: String,
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    /// x fastest.
    pub values: Vec<f64>,
}

impl FieldDump {
    /// Samples `f` on `lo + spacing·k`; points where `f` is undefined get 0.
    pub fn sample(name: &str, lo: [f64; 3], hi: [f64; 3], h: f64, f: &dyn Fn(&[f64; 3]) -> Option<f64>) -> Self {
        let mut dims = [1usize; 3];
        let mut spacing = [h; 3];
        for a in 0..3 {
            if hi[a] > lo[a] {
                dims[a] = ((hi[a] - lo[a]) / h).round() as usize + 1;
            } else {
                spacing[a] = 1.0;
            }
        }
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = [
                        lo[0] + i as f64 * spacing[0],
                        lo[1] + j as f64 * spacing[1],
                        lo[2] + k as f64 * spacing[2],
                    ];
                    values.push(f(&p).unwrap_or(0.0));
                }
            }
        }
        Self {
            name: name.into(),
            dims,
            origin: lo,
            spacing,
            values,
        }
    }

    /// A grid field on the `(x₁, s)` half plane or the first octant.
    pub fn of_grid(name: &str, grid: &Grid, values: &[f64], lo: [f64; 3], hi: [f64; 3], h: f64) -> Self {
        let tensor = grid.ambient(values, None);
        let planar = matches!(grid.metric(), Metric::Axisym | Metric::Planar);
        let hi = if planar { [hi[0], hi[1], lo[2]] } else { hi };
        Self::sample(name, lo, hi, h, &|p| grid.interpolate(&tensor, p))
    }

    fn of_harmonic(name: &str, field: &HarmonicField, lo: [f64; 3], hi: [f64; 3], h: f64) -> Self {
        let planar = matches!(field.grid.metric(), Metric::Axisym | Metric::Planar);
        let hi = if planar { [hi[0], hi[1], lo[2]] } else { hi };
        Self::sample(name, lo, hi, h, &|p| field.eval(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    /// Omitted in deterministic mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: String,
    pub config: Json,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageTime>,
    pub results: Json,
    pub assertions: Vec<Assertion>,
    pub passed: bool,
    #[serde(skip)]
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub fields: Vec<FieldDump>,
    #[serde(skip)]
    pub config_text: String,
}

impl RunRecord {
    /// Record with no results yet.
    pub fn empty(cfg: &ExperimentConfig) -> Self {
        Self {
            kind: cfg.kind.as_str().into(),
            config: serde_json::to_value(&cfg.resolved).unwrap_or(Json::Null),
            versions: versions(),
            stages: Vec::new(),
            results: json!({}),
            assertions: Vec::new(),
            passed: true,
            tables: Vec::new(),
            fields: Vec::new(),
            config_text: cfg.to_flat_text(),
        }
    }

    pub fn failed(&self) -> Vec<&Assertion> {
        self.assertions.iter().filter(|a| !a.passed).collect()
    }

    fn finish(&mut self) {
        self.passed = self.assertions.iter().all(|a| a.passed);
    }
}

fn versions() -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("dumbbell-core".into(), env!("CARGO_PKG_VERSION").into());
    m.insert("record-format".into(), "1".into());
    m
}

struct Stages {
    deterministic: bool,
    out: Vec<StageTime>,
}

impl Stages {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f().map_err(|e| e.in_stage(name))?;
        let secs = t.elapsed().as_secs_f64();
        if self.deterministic {
            eprintln!("stage {name}: {secs:.2} s");
        }
        self.out.push(StageTime {
            stage: name.into(),
            seconds: (!self.deterministic).then_some(secs),
        });
        Ok(r)
    }
}

/// Runs the pipeline of the config's kind on a pool of `threads` workers.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(cfg))
}

fn run_inner(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut rec = RunRecord::empty(cfg);
    let mut st = Stages {
        deterministic: cfg.deterministic,
        out: Vec::new(),
    };
    match cfg.kind {
        ExperimentKind::CrossSection => cross_section(cfg, &mut rec, &mut st)?,
        ExperimentKind::Compliance => compliance_run(cfg, &mut rec, &mut st)?,
        ExperimentKind::Steiner => steiner_run(cfg, &mut rec, &mut st)?,
        ExperimentKind::Rate | ExperimentKind::EigenfunctionRate => rate_run(cfg, &mut rec, &mut st)?,
        ExperimentKind::Resonant => resonant_run(cfg, &mut rec, &mut st)?,
        ExperimentKind::OracleCheck => oracle_run(cfg, &mut rec, &mut st)?,
    }
    rec.stages = st.out;
    rec.finish();
    Ok(rec)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Ground eigenvalue of disks and rectangles in closed form.
pub fn section_closed_form(shape: &SectionShape, measure: f64) -> Option<f64> {
    let (lambda, natural_area) = match &shape.kind {
        SectionKind::Disk { radius } => (
            (crate::asymptotics::BESSEL_J0_ZERO / radius).powi(2),
            std::f64::consts::PI * radius * radius,
        ),
        SectionKind::Rectangle { half_widths: [a, b] } => {
            let pi2 = std::f64::consts::PI.powi(2);
            (pi2 / (4.0 * a * a) + pi2 / (4.0 * b * b), 4.0 * a * b)
        }
        SectionKind::PolarStar { .. } => return None,
    };
    Some(lambda * natural_area / measure)
}

fn cross_section(cfg: &ExperimentConfig, rec: &mut RunRecord, st: &mut Stages) -> Result<()> {
    let sec = st.run("section", || make_section(&cfg.section))?;
    let mode = st.run("ground mode", || section_ground_mode(&sec, cfg.cross_section_h))?;
    let exact = section_closed_form(&cfg.section, sec.measure());
    let err = exact.map(|e| rel(mode.lambda1, e));
    rec.results = json!({
        "lambda1": mode.lambda1,
        "closed_form": exact,
        "rel_error": err,
        "residual": mode.residual,
        "positive": mode.positive,
        "n_unknowns": mode.grid.n_unknowns(),
        "h": cfg.cross_section_h,
        "measure": sec.measure(),
    });
    if let Some(e) = err {
        rec.assertions
            .push(Assertion::at_most("closed_form_error", e, cfg.tol.bessel));
    }
    rec.assertions
        .push(Assertion::holds("ground_mode_positive", mode.positive));
    if cfg.dump_fields {
        let r = sec.outer_radius();
        rec.fields.push(FieldDump::of_grid(
            "psi1",
            &mode.grid,
            &mode.psi1,
            [-r, -r, 0.0],
            [r, r, 0.0],
            cfg.cross_section_h,
        ));
    }
    Ok(())
}

fn harmonic_opts(cg_tol: f64) -> HarmonicOptions {
    HarmonicOptions { backend: None, cg_tol }
}

fn compliance_run(cfg: &ExperimentConfig, rec: &mut RunRecord, st: &mut Stages) -> Result<()> {
    let c = &cfg.compliance;
    let sec = Arc::new(st.run("section", || make_section(&cfg.section))?);
    let res = harmonic_resolution(c.mode, c.h);
    let opts = harmonic_opts(c.cg_tol);
    let r = st.run("compliance", || compliance(&sec, c.radius, c.tube_length, &res, &opts))?;
    let mut t = Table::new("compliance", &["route", "at_R", "at_2R", "extrapolated", "error_bar"]);
    for (name, v) in [("trace", r.trace), ("flux", r.flux), ("energy", r.energy)] {
        t.rows.push(vec![
            Cell::Text(name.into()),
            Cell::Num(v.at_r),
            Cell::Num(v.at_2r),
            Cell::Num(v.extrapolated),
            Cell::Num(v.error_bar),
        ]);
    }
    rec.tables.push(t);
    let c_val = r.value();
    rec.assertions.push(Assertion::at_most(
        "route_spread_baseline",
        r.spread(false),
        cfg.tol.route_baseline,
    ));
    rec.assertions.push(Assertion::at_most(
        "route_spread_extrapolated",
        r.spread(true),
        cfg.tol.route_extrapolated,
    ));
    rec.assertions.push(Assertion::above("compliance_positive", c_val, 0.0));
    rec.assertions
        .push(Assertion::holds("m_is_minus_half_c", r.m < 0.0 && r.m == -0.5 * c_val));
    rec.assertions.push(Assertion::at_most(
        "energy_minimum_identity",
        r.min_identity_error,
        cfg.tol.residual,
    ));
    rec.assertions.push(Assertion::at_most(
        "harmonic_residual",
        r.harmonic_residual,
        cfg.tol.residual,
    ));
    rec.assertions.push(Assertion::at_most(
        "euler_lagrange_residual",
        r.euler_lagrange_residual,
        cfg.tol.residual,
    ));
    rec.results = serde_json::to_value(&r)?;
    if cfg.dump_fields {
        let phi = st.run("field dump", || solve_v_r(&sec, c.radius, c.tube_length, &res, &opts))?;
        rec.fields.push(FieldDump::of_harmonic(
            "phi",
            &phi,
            [-2.0, 0.0, 0.0],
            [1.0 + c.radius, c.radius, c.radius],
            0.0625,
        ));
    }
    Ok(())
}

fn steiner_run(cfg: &ExperimentConfig, rec: &mut RunRecord, st: &mut Stages) -> Result<()> {
    let s = &cfg.steiner;
    let resolutions: Vec<Resolution> = s.h.iter().map(|&h| harmonic_resolution(s.mode, h)).collect();
    let rep = st.run("steiner", || {
        steiner_compare(
            &s.shapes,
            s.radius,
            s.tube_length,
            &resolutions,
            &harmonic_opts(s.cg_tol),
        )
    })?;
    let mut header: Vec<String> = vec!["shape".into(), "measure".into(), "admissible".into()];
    header.extend(s.h.iter().map(|h| format!("C_h{h}")));
    header.extend(["value".to_string(), "error_bar".to_string()]);
    let mut t = Table {
        name: "steiner".into(),
        header,
        rows: Vec::new(),
    };
    for (name, e) in s.names.iter().zip(&rep.entries) {
        let mut row = vec![
            Cell::Text(name.clone()),
            Cell::Num(e.measure),
            Cell::Text(e.admissible.to_string()),
        ];
        row.extend(e.values.iter().map(|&v| Cell::Num(v)));
        row.push(Cell::Num(e.value));
        row.push(Cell::Num(e.error_bar));
        t.rows.push(row);
    }
    rec.tables.push(t);
    let disk = rep.entries.iter().find(|e| e.is_disk).unwrap();
    let margin = rep
        .entries
        .iter()
        .filter(|e| !e.is_disk)
        .map(|e| (disk.value - disk.error_bar) - (e.value + e.error_bar))
        .fold(f64::INFINITY, f64::min);
    rec.assertions
        .push(Assertion::above("disk_beyond_error_bars", margin, 0.0));
    rec.results = serde_json::to_value(&rep)?;
    Ok(())
}

fn sweep_table(s: &SimpleSweep) -> Table {
    let n = s.config.dim as i32;
    let mut t = Table::new(
        "sweep",
        &[
            "eps",
            "h_fine",
            "n_unknowns",
            "lambda0",
            "lambda_eps",
            "gap",
            "gap_over_epsN",
            "distance_over_epsN",
            "overlap",
            "junction_derivative",
            "blowup_error",
            "decay_rate",
            "decay_ratio_to_sharp",
        ],
    );
    for (p, d) in s.points.iter().zip(&s.decay) {
        t.push_nums(&[
            p.eps,
            p.h_fine,
            p.n_unknowns as f64,
            p.lambda0,
            p.lambda_eps,
            p.gap,
            p.gap / p.eps.powi(n),
            p.distance / p.eps.powi(n),
            p.overlap,
            p.junction.signed(),
            p.blowup_error,
            d.rate,
            d.ratio_to_sharp,
        ]);
    }
    t
}

fn rate_run(cfg: &ExperimentConfig, rec: &mut RunRecord, st: &mut Stages) -> Result<()> {
    let s = st.run("sweep", || simple_sweep(&cfg.sweep))?;
    let tol = &cfg.tol;
    let n = cfg.sweep.dim as f64;
    let gap = &s.gap_fit;
    let fun = &s.eigfun_fit;
    let pred = gap.predicted.map(|p| p.value).unwrap_or(f64::NAN);
    if cfg.kind == ExperimentKind::Rate {
        let min_gap = s.points.iter().map(|p| p.gap).fold(f64::INFINITY, f64::min);
        rec.assertions.push(Assertion::above("gap_positive", min_gap, 0.0));
        rec.assertions.push(Assertion::holds("gap_monotone", s.monotone_gap));
        rec.assertions
            .push(Assertion::at_most("gap_slope", (gap.slope - n).abs(), tol.gap_slope));
        rec.assertions.push(Assertion::at_most(
            "gap_prefactor",
            rel(gap.prefactor, pred),
            tol.gap_prefactor,
        ));
        rec.assertions.push(Assertion::at_most(
            "sphere_route_agreement",
            s.route_gap,
            tol.route_extrapolated,
        ));
        if let Some(w) = gap.slope_without_largest {
            rec.assertions.push(Assertion::at_most(
                "gap_slope_robustness",
                (gap.slope - w).abs(),
                tol.slope_robustness,
            ));
        }
        let bound = s.decay.iter().map(|d| d.rate - d.bound).fold(f64::INFINITY, f64::min);
        let sharp = s
            .decay
            .iter()
            .map(|d| (d.ratio_to_sharp - 1.0).abs())
            .fold(0.0, f64::max);
        let mid = s.decay.iter().all(|d| d.mid_channel_sup <= d.mid_channel_bound);
        rec.assertions
            .push(Assertion::at_least("decay_above_bound", bound, 0.0));
        rec.assertions
            .push(Assertion::at_most("decay_near_sharp_rate", sharp, tol.decay_sharp));
        rec.assertions.push(Assertion::holds("mid_channel_small", mid));
        rec.assertions
            .push(Assertion::holds("blowup_decreasing", s.blowup_decreasing));
    }
    rec.assertions.push(Assertion::at_most(
        "eigfun_slope",
        (fun.slope - n).abs(),
        tol.eigfun_slope,
    ));
    rec.assertions.push(Assertion::at_most(
        "eigfun_prefactor_vs_gap",
        rel(fun.prefactor, gap.prefactor),
        tol.eigfun_prefactor,
    ));
    rec.assertions.push(Assertion::at_most(
        "eigfun_prefactor",
        rel(fun.prefactor, pred),
        tol.eigfun_prefactor,
    ));
    rec.tables.push(sweep_table(&s));
    if cfg.dump_fields {
        if let Some(f) = &s.finest {
            let e = cfg.sweep.eps.last().copied().unwrap_or(0.1);
            rec.fields.push(FieldDump::of_grid(
                "u_eps",
                &f.grid,
                &f.values,
                [-1.0, 0.0, 0.0],
                [2.0, 1.5, 1.5],
                e / 8.0,
            ));
        }
    }
    rec.results = serde_json::to_value(&s)?;
    Ok(())
}

fn resonant_table(r: &ResonantSweep) -> Table {
    let n = r.config.dim as i32;
    let mut t = Table::new(
        "resonant",
        &[
            "eps",
            "lambda0",
            "calibration",
            "lambda_plus_branch",
            "lambda_minus_branch",
            "splitting",
            "splitting_over_epsN",
            "stub_plus",
            "stub_minus",
            "localization_plus",
            "localization_minus",
            "tilde_difference",
        ],
    );
    for p in &r.points {
        t.push_nums(&[
            p.eps,
            p.lambda0,
            p.calibration,
            p.lambda_plus_branch,
            p.lambda_minus_branch,
            p.splitting,
            p.splitting / p.eps.powi(n),
            p.stub_plus,
            p.stub_minus,
            p.localization_plus,
            p.localization_minus,
            p.tilde_difference,
        ]);
    }
    t
}

fn resonant_run(cfg: &ExperimentConfig, rec: &mut RunRecord, st: &mut Stages) -> Result<()> {
    let r = st.run("resonant sweep", || resonant_sweep(&cfg.sweep))?;
    let tol = &cfg.tol;
    let n = cfg.sweep.dim as f64;
    let perr = |f: &crate::asymptotics::RateFit| f.prefactor_error().unwrap_or(f64::NAN);
    rec.assertions.push(Assertion::at_most(
        "splitting_slope",
        (r.splitting_fit.slope - n).abs(),
        tol.split_slope,
    ));
    rec.assertions.push(Assertion::at_most(
        "splitting_prefactor",
        perr(&r.splitting_fit),
        tol.branch_prefactor,
    ));
    rec.assertions.push(Assertion::at_most(
        "plus_branch_prefactor",
        perr(&r.plus_fit),
        tol.branch_prefactor,
    ));
    rec.assertions.push(Assertion::at_most(
        "minus_branch_prefactor",
        perr(&r.minus_fit),
        tol.branch_prefactor,
    ));
    rec.assertions.push(Assertion::at_most(
        "branch_sum_consistency",
        r.sum_consistency,
        tol.sum_consistency,
    ));
    let near = r
        .points
        .iter()
        .min_by(|a, b| {
            (a.eps - tol.localization_eps)
                .abs()
                .total_cmp(&(b.eps - tol.localization_eps).abs())
        })
        .unwrap();
    rec.assertions.push(Assertion::at_most(
        "localization",
        near.localization_plus.max(near.localization_minus),
        tol.localization,
    ));
    rec.assertions
        .push(Assertion::holds("stub_ordering", r.stub.ordering_holds));
    let tilde = r
        .points
        .iter()
        .map(|p| p.tilde_difference / p.splitting.abs())
        .fold(0.0, f64::max);
    rec.assertions
        .push(Assertion::at_most("tilde_vs_splitting", tilde, tol.tilde_ratio));
    let mismatch = r.points.iter().map(|p| p.resonance_mismatch).fold(0.0, f64::max);
    rec.assertions
        .push(Assertion::at_most("resonance_mismatch", mismatch, 1e-8));
    rec.tables.push(resonant_table(&r));
    rec.results = serde_json::to_value(&r)?;
    Ok(())
}

/// Sparse pencil eigenvalues against the dense oracle on a coarse dumbbell.
pub fn dense_vs_sparse(max_n: usize, k: usize) -> Result<(usize, f64)> {
    let sec = Arc::new(make_section(&SectionShape::disk(0.75))?);
    let eps = 0.8;
    let domain = make_domain(
        DomainKind::Dumbbell,
        sec,
        eps,
        Truncation {
            chamber_radius: 8.0,
            tube_length: 6.0,
        },
        3,
    )?;
    let weight = WeightSpec::default_simple();
    // coarsest graded grid that still resolves the channel
    let mut res = Resolution {
        h_fine: eps * 0.75 / 8.0,
        h_weight: 1.0,
        h_max: 4.0,
        growth: 2.0,
        fine_pad: 0.1,
        ..Resolution::default()
    };
    let grid = loop {
        let g = build_grid(&domain, &res, Some(&weight))?;
        if g.n_unknowns() <= max_n {
            break g;
        }
        if res.growth > 4.0 {
            return Err(Error::Resolution(format!(
                "no graded dumbbell grid with at most {max_n} unknowns"
            )));
        }
        res.growth *= 1.15;
    };
    let a = assemble_stiffness(&grid).matrix;
    let b = CsrMatrix::diagonal_matrix(&weighted_mass_diagonal(&grid, &weight));
    let dense = dense_oracle(&a, &b)?;
    let sparse = solve_pencil(&a, &b, k, &EigenOptions::default())?;
    let err = sparse
        .iter()
        .zip(&dense)
        .map(|(s, d)| rel(s.lambda, d.lambda))
        .fold(0.0, f64::max);
    Ok((grid.n_unknowns(), err))
}

fn oracle_run(cfg: &ExperimentConfig, rec: &mut RunRecord, st: &mut Stages) -> Result<()> {
    let o = &cfg.oracle;
    let tol = &cfg.tol;
    let sec = Arc::new(make_section(&SectionShape::disk(0.75).admissible())?);
    let res = harmonic_resolution(GridMode::Axisym, o.h);
    let opts = HarmonicOptions::default();
    let phi = st.run("transition function", || {
        solve_phi(&sec, o.radius, o.tube_length, &res, &opts)
    })?;
    let radii: Vec<f64> = std::iter::successors(Some(1.5), |r| Some(r + 0.25))
        .take_while(|r| *r <= o.radius / 2.0 + 1e-12)
        .collect();
    let law = radial_law_check(&phi.at_r, &radii)?;
    rec.assertions
        .push(Assertion::at_most("radial_law", law.max_rel_error, tol.radial_law));
    let z = st.run("z_R", || solve_z_r(o.radius, &res, &phi.at_2r, &opts))?;
    let zr: Vec<f64> = std::iter::successors(Some(0.5), |r| Some(r + 0.25))
        .take_while(|r| *r <= o.radius + 1e-12)
        .collect();
    let lin = linearity_check(&z, &zr)?;
    rec.assertions
        .push(Assertion::at_most("zr_linearity", lin.max_rel_error, tol.zr_linearity));
    let flux = flux_law_check(&phi.at_r, 1.0 / 16.0)?;
    rec.assertions
        .push(Assertion::at_most("flux_law", flux.rel_error, tol.flux_law));
    rec.assertions.push(Assertion::at_most(
        "chi_ratio",
        (flux.chi_ratio - 1.0).abs(),
        tol.flux_law,
    ));
    let c_trace = phi.trace_r;
    let c_flux = crate::compliance::compliance_flux(&phi.at_r, 1.0)?;
    rec.assertions.push(Assertion::at_most(
        "sphere_identity",
        rel(c_flux, c_trace),
        tol.route_baseline,
    ));
    let upsilon_err = (upsilon(3) - (2.0 * std::f64::consts::PI / 3.0).sqrt()).abs();
    rec.assertions
        .push(Assertion::at_most("upsilon_closed_form", upsilon_err, 1e-14));
    let (dense_n, dense_err) = st.run("dense oracle", || dense_vs_sparse(o.dense_max_n, 4))?;
    rec.assertions
        .push(Assertion::at_most("dense_vs_sparse", dense_err, tol.dense));
    let mut sections = Vec::new();
    for (name, shape) in [
        ("unit_disk", SectionShape::disk(1.0)),
        ("unit_square", SectionShape::square(1.0)),
    ] {
        let s = make_section(&shape)?;
        let m = st.run(name, || section_ground_mode(&s, o.section_h))?;
        let exact = section_closed_form(&shape, s.measure()).unwrap();
        let e = rel(m.lambda1, exact);
        rec.assertions
            .push(Assertion::at_most(&format!("{name}_lambda1"), e, tol.bessel));
        sections.push(json!({"section": name, "lambda1": m.lambda1, "closed_form": exact, "rel_error": e}));
    }
    let lam = section_lambda1(&sec)?;
    let residual = [phi.at_r.residual, phi.at_2r.residual, z.residual]
        .into_iter()
        .fold(0.0, f64::max);
    rec.assertions
        .push(Assertion::at_most("harmonic_residual", residual, tol.residual));
    let mut t = Table::new("radial_law", &["r", "measured", "predicted"]);
    for i in 0..law.radii.len() {
        t.push_nums(&[law.radii[i], law.measured[i], law.predicted[i]]);
    }
    rec.tables.push(t);
    let mut t = Table::new("zr_linearity", &["r", "measured", "predicted"]);
    for i in 0..lin.radii.len() {
        t.push_nums(&[lin.radii[i], lin.measured[i], lin.predicted[i]]);
    }
    rec.tables.push(t);
    rec.results = json!({
        "radial_law": law,
        "zr_linearity": {"max_rel_error": lin.max_rel_error},
        "flux_law": flux,
        "compliance": {"trace": c_trace, "flux": c_flux, "trace_extrapolated": phi.trace_extrapolated},
        "dense": {"n": dense_n, "max_rel_error": dense_err},
        "sections": sections,
        "disk_lambda1_closed_form": lam,
        "harmonic_residual": residual,
    });
    if cfg.dump_fields {
        rec.fields.push(FieldDump::of_harmonic(
            "phi",
            &phi.at_r,
            [-2.0, 0.0, 0.0],
            [1.0 + o.radius, o.radius, 0.0],
            0.0625,
        ));
    }
    Ok(())
}
