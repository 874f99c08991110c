//! Flat `key = value` experiment configs with dotted sections.
//!
//! Files are TOML restricted to scalars and arrays; every key is checked
//! against a fixed schema. Any key can be overridden from the environment
//! as `DUMBBELL_<KEY>` with dots written as `__` (`DUMBBELL_SWEEP__EPS`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::asymptotics::{CompliancePlan, SweepConfig, SweepMode};
use crate::discretize::GridMode;
use crate::eig::EigenOptions;
use crate::error::{Error, Result};
use crate::geometry::{Bump, SectionShape, Truncation, WeightSpec};
use crate::linalg::Backend;

pub const ENV_PREFIX: &str = "DUMBBELL_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CrossSection,
    Compliance,
    Steiner,
    Rate,
    EigenfunctionRate,
    Resonant,
    OracleCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::CrossSection,
        ExperimentKind::Compliance,
        ExperimentKind::Steiner,
        ExperimentKind::Rate,
        ExperimentKind::EigenfunctionRate,
        ExperimentKind::Resonant,
        ExperimentKind::OracleCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::CrossSection => "cross-section",
            ExperimentKind::Compliance => "compliance",
            ExperimentKind::Steiner => "steiner",
            ExperimentKind::Rate => "rate",
            ExperimentKind::EigenfunctionRate => "eigenfunction-rate",
            ExperimentKind::Resonant => "resonant",
            ExperimentKind::OracleCheck => "oracle-check",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    fn is_sweep(self) -> bool {
        matches!(
            self,
            ExperimentKind::Rate | ExperimentKind::EigenfunctionRate | ExperimentKind::Resonant
        )
    }

    /// Key groups read by this kind.
    fn groups(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::CrossSection => &["section", "cross_section"],
            ExperimentKind::Compliance => &["section", "compliance"],
            ExperimentKind::Steiner => &["steiner"],
            ExperimentKind::Rate | ExperimentKind::EigenfunctionRate | ExperimentKind::Resonant => {
                &["section", "sweep", "weight", "eigen", "compliance"]
            }
            ExperimentKind::OracleCheck => &["oracle"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ty {
    Str,
    Float,
    Int,
    Bool,
    FloatList,
    StrList,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::Str => "a string",
            Ty::Float => "a number",
            Ty::Int => "a non-negative integer",
            Ty::Bool => "a boolean",
            Ty::FloatList => "an array of numbers",
            Ty::StrList => "an array of strings",
        }
    }
}

const SHAPE_KEYS: [(&str, &[&str]); 4] = [
    ("disk", &["section.disk.radius"]),
    ("square", &["section.square.side"]),
    ("rectangle", &["section.rectangle.half_widths"]),
    (
        "star",
        &[
            "section.star.base",
            "section.star.amplitude",
            "section.star.petals",
            "section.star.samples",
        ],
    ),
];

/// Every accepted key with its type.
const SCHEMA: &[(&str, Ty)] = &[
    ("kind", Ty::Str),
    ("threads", Ty::Int),
    ("deterministic", Ty::Bool),
    ("seed", Ty::Int),
    ("output.dir", Ty::Str),
    ("output.fields", Ty::Bool),
    ("section.shape", Ty::Str),
    ("section.disk.radius", Ty::Float),
    ("section.square.side", Ty::Float),
    ("section.rectangle.half_widths", Ty::FloatList),
    ("section.star.base", Ty::Float),
    ("section.star.amplitude", Ty::Float),
    ("section.star.petals", Ty::Int),
    ("section.star.samples", Ty::Int),
    ("section.area", Ty::Float),
    ("section.admissible", Ty::Bool),
    ("cross_section.h", Ty::Float),
    ("compliance.radius", Ty::Float),
    ("compliance.tube_length", Ty::Float),
    ("compliance.h", Ty::Float),
    ("compliance.refine", Ty::Bool),
    ("compliance.mode", Ty::Str),
    ("compliance.cg_tol", Ty::Float),
    ("steiner.shapes", Ty::StrList),
    ("steiner.area", Ty::Float),
    ("steiner.radius", Ty::Float),
    ("steiner.tube_length", Ty::Float),
    ("steiner.h", Ty::FloatList),
    ("steiner.mode", Ty::Str),
    ("steiner.cg_tol", Ty::Float),
    ("sweep.eps", Ty::FloatList),
    ("sweep.dim", Ty::Int),
    ("sweep.grid_mode", Ty::Str),
    ("sweep.cells_per_eps", Ty::Float),
    ("sweep.h_weight", Ty::Float),
    ("sweep.h_max", Ty::Float),
    ("sweep.growth", Ty::Float),
    ("sweep.chamber_radius", Ty::Float),
    ("sweep.k_bar", Ty::Int),
    ("sweep.overlap_threshold", Ty::Float),
    ("sweep.blowup_annulus", Ty::FloatList),
    ("sweep.decay_window", Ty::FloatList),
    ("sweep.asymmetry_tol", Ty::Float),
    ("weight.plus.center", Ty::FloatList),
    ("weight.plus.radius", Ty::Float),
    ("weight.plus.amplitude", Ty::Float),
    ("weight.minus.center", Ty::FloatList),
    ("weight.minus.radius", Ty::Float),
    ("weight.minus.amplitude", Ty::Float),
    ("eigen.tol", Ty::Float),
    ("eigen.max_basis", Ty::Int),
    ("eigen.max_restarts", Ty::Int),
    ("eigen.backend", Ty::Str),
    ("eigen.cg_tol", Ty::Float),
    ("oracle.h", Ty::Float),
    ("oracle.radius", Ty::Float),
    ("oracle.tube_length", Ty::Float),
    ("oracle.section_h", Ty::Float),
    ("oracle.dense_max_n", Ty::Int),
    ("tol.radial_law", Ty::Float),
    ("tol.zr_linearity", Ty::Float),
    ("tol.flux_law", Ty::Float),
    ("tol.route_baseline", Ty::Float),
    ("tol.route_extrapolated", Ty::Float),
    ("tol.gap_slope", Ty::Float),
    ("tol.gap_prefactor", Ty::Float),
    ("tol.eigfun_slope", Ty::Float),
    ("tol.eigfun_prefactor", Ty::Float),
    ("tol.slope_robustness", Ty::Float),
    ("tol.decay_sharp", Ty::Float),
    ("tol.split_slope", Ty::Float),
    ("tol.branch_prefactor", Ty::Float),
    ("tol.sum_consistency", Ty::Float),
    ("tol.localization", Ty::Float),
    ("tol.localization_eps", Ty::Float),
    ("tol.tilde_ratio", Ty::Float),
    ("tol.bessel", Ty::Float),
    ("tol.dense", Ty::Float),
    ("tol.residual", Ty::Float),
];

fn ty_of(key: &str) -> Option<Ty> {
    SCHEMA.iter().find(|(k, _)| *k == key).map(|(_, t)| *t)
}

fn group_of(key: &str) -> &str {
    key.split('.').next().unwrap_or(key)
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Float(x)).collect())
}

fn defaults(kind: ExperimentKind) -> BTreeMap<String, Value> {
    let resonant = kind == ExperimentKind::Resonant;
    let t = Tolerances::default();
    let mut m: Vec<(&str, Value)> = vec![
        ("kind", Value::String(kind.as_str().into())),
        ("threads", Value::Integer(0)),
        ("deterministic", Value::Boolean(true)),
        ("seed", Value::Integer(0x5eed)),
        ("output.dir", Value::String(format!("runs/{}", kind.as_str()))),
        ("output.fields", Value::Boolean(true)),
        ("section.shape", Value::String("disk".into())),
        ("section.disk.radius", Value::Float(0.75)),
        ("section.square.side", Value::Float(1.0)),
        ("section.rectangle.half_widths", floats(&[0.6, 0.6])),
        ("section.star.base", Value::Float(0.75)),
        ("section.star.amplitude", Value::Float(0.1)),
        ("section.star.petals", Value::Integer(5)),
        ("section.star.samples", Value::Integer(256)),
        ("section.area", Value::Float(0.0)),
        (
            "section.admissible",
            Value::Boolean(kind != ExperimentKind::CrossSection),
        ),
        ("cross_section.h", Value::Float(1.0 / 128.0)),
        ("compliance.radius", Value::Float(12.0)),
        ("compliance.tube_length", Value::Float(6.0)),
        ("compliance.h", Value::Float(1.0 / 64.0)),
        ("compliance.refine", Value::Boolean(true)),
        ("compliance.mode", Value::String("axisym".into())),
        ("compliance.cg_tol", Value::Float(1e-11)),
        (
            "steiner.shapes",
            Value::Array(vec![Value::String("disk".into()), Value::String("square".into())]),
        ),
        ("steiner.area", Value::Float(1.0)),
        ("steiner.radius", Value::Float(8.0)),
        ("steiner.tube_length", Value::Float(4.0)),
        ("steiner.h", floats(&[1.0 / 16.0, 1.0 / 32.0])),
        ("steiner.mode", Value::String("quarter".into())),
        ("steiner.cg_tol", Value::Float(1e-11)),
        ("sweep.eps", floats(&[0.2, 0.15, 0.1, 0.075])),
        ("sweep.dim", Value::Integer(3)),
        ("sweep.grid_mode", Value::String("axisym".into())),
        ("sweep.cells_per_eps", Value::Float(16.0)),
        ("sweep.h_weight", Value::Float(0.05)),
        ("sweep.h_max", Value::Float(0.5)),
        ("sweep.growth", Value::Float(1.08)),
        ("sweep.chamber_radius", Value::Float(12.0)),
        ("sweep.k_bar", Value::Integer(0)),
        ("sweep.overlap_threshold", Value::Float(0.5)),
        ("sweep.blowup_annulus", floats(&[1.5, 3.0])),
        ("sweep.decay_window", floats(&[0.2, 0.5])),
        ("sweep.asymmetry_tol", Value::Float(0.05)),
        ("weight.plus.center", floats(&[5.0, 0.0, 0.0])),
        ("weight.plus.radius", Value::Float(0.9)),
        ("weight.plus.amplitude", Value::Float(1.0)),
        (
            "weight.minus.center",
            floats(&[if resonant { -5.0 } else { -4.0 }, 0.0, 0.0]),
        ),
        ("weight.minus.radius", Value::Float(0.9)),
        ("weight.minus.amplitude", Value::Float(if resonant { 1.0 } else { 0.5 })),
        ("eigen.tol", Value::Float(1e-11)),
        ("eigen.max_basis", Value::Integer(80)),
        ("eigen.max_restarts", Value::Integer(60)),
        ("eigen.backend", Value::String("direct".into())),
        ("eigen.cg_tol", Value::Float(1e-12)),
        ("oracle.h", Value::Float(1.0 / 64.0)),
        ("oracle.radius", Value::Float(12.0)),
        ("oracle.tube_length", Value::Float(6.0)),
        ("oracle.section_h", Value::Float(1.0 / 128.0)),
        ("oracle.dense_max_n", Value::Integer(400)),
    ];
    let tol: [(&str, f64); 20] = [
        ("tol.radial_law", t.radial_law),
        ("tol.zr_linearity", t.zr_linearity),
        ("tol.flux_law", t.flux_law),
        ("tol.route_baseline", t.route_baseline),
        ("tol.route_extrapolated", t.route_extrapolated),
        ("tol.gap_slope", t.gap_slope),
        ("tol.gap_prefactor", t.gap_prefactor),
        ("tol.eigfun_slope", t.eigfun_slope),
        ("tol.eigfun_prefactor", t.eigfun_prefactor),
        ("tol.slope_robustness", t.slope_robustness),
        ("tol.decay_sharp", t.decay_sharp),
        ("tol.split_slope", t.split_slope),
        ("tol.branch_prefactor", t.branch_prefactor),
        ("tol.sum_consistency", t.sum_consistency),
        ("tol.localization", t.localization),
        ("tol.localization_eps", t.localization_eps),
        ("tol.tilde_ratio", t.tilde_ratio),
        ("tol.bessel", t.bessel),
        ("tol.dense", t.dense),
        ("tol.residual", t.residual),
    ];
    m.extend(tol.iter().map(|(k, v)| (*k, Value::Float(*v))));
    m.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub radial_law: f64,
    pub zr_linearity: f64,
    pub flux_law: f64,
    pub route_baseline: f64,
    pub route_extrapolated: f64,
    pub gap_slope: f64,
    pub gap_prefactor: f64,
    pub eigfun_slope: f64,
    pub eigfun_prefactor: f64,
    pub slope_robustness: f64,
    pub decay_sharp: f64,
    pub split_slope: f64,
    pub branch_prefactor: f64,
    pub sum_consistency: f64,
    pub localization: f64,
    /// ε at which the localization bound is asserted.
    pub localization_eps: f64,
    pub tilde_ratio: f64,
    pub bessel: f64,
    pub dense: f64,
    pub residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            radial_law: 0.02,
            zr_linearity: 0.01,
            flux_law: 0.02,
            route_baseline: 0.03,
            route_extrapolated: 0.01,
            gap_slope: 0.3,
            gap_prefactor: 0.15,
            eigfun_slope: 0.35,
            eigfun_prefactor: 0.2,
            slope_robustness: 0.15,
            decay_sharp: 0.25,
            split_slope: 0.35,
            branch_prefactor: 0.2,
            sum_consistency: 0.25,
            localization: 1e-6,
            localization_eps: 0.1,
            tilde_ratio: 0.1,
            bessel: 0.005,
            dense: 1e-10,
            residual: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSettings {
    pub radius: f64,
    pub tube_length: f64,
    pub h: f64,
    pub refine: bool,
    pub mode: GridMode,
    pub cg_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteinerSettings {
    pub names: Vec<String>,
    pub shapes: Vec<SectionShape>,
    pub area: f64,
    pub radius: f64,
    pub tube_length: f64,
    pub h: Vec<f64>,
    pub mode: GridMode,
    pub cg_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    pub h: f64,
    pub radius: f64,
    pub tube_length: f64,
    pub section_h: f64,
    pub dense_max_n: usize,
}

/// A validated experiment description; `resolved` holds every key with its
/// effective value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub threads: usize,
    pub deterministic: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dump_fields: bool,
    pub section: SectionShape,
    pub cross_section_h: f64,
    pub compliance: HarmonicSettings,
    pub steiner: SteinerSettings,
    pub sweep: SweepConfig,
    pub oracle: OracleSettings,
    pub tol: Tolerances,
    pub resolved: BTreeMap<String, Value>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            _ => out.push((key, v.clone())),
        }
    }
}

fn suggest(key: &str) -> Option<&'static str> {
    SCHEMA
        .iter()
        .map(|(k, _)| (*k, strsim::levenshtein(key, k)))
        .filter(|(_, d)| *d <= 3)
        .min_by_key(|(_, d)| *d)
        .map(|(k, _)| k)
}

fn unknown_key(key: &str) -> Error {
    let message = match suggest(key) {
        Some(s) => format!("unknown key; did you mean `{s}`?"),
        None => "unknown key".into(),
    };
    Error::ConfigKey {
        key: key.into(),
        message,
    }
}

fn parse_value(text: &str) -> Value {
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.into())),
        Err(_) => Value::String(text.into()),
    }
}

/// Checks a value against its declared type, widening integers to floats.
fn coerce(key: &str, v: Value) -> Result<Value> {
    let ty = ty_of(key).ok_or_else(|| unknown_key(key))?;
    let bad = || Error::ConfigKey {
        key: key.into(),
        message: format!("expected {}", ty.name()),
    };
    let as_float = |v: &Value| match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    };
    Ok(match (ty, v) {
        (Ty::Str, v @ Value::String(_)) => v,
        (Ty::Bool, v @ Value::Boolean(_)) => v,
        (Ty::Int, Value::Integer(i)) if i >= 0 => Value::Integer(i),
        (Ty::Float, v) => Value::Float(as_float(&v).ok_or_else(bad)?),
        (Ty::FloatList, Value::Array(a)) => Value::Array(
            a.iter()
                .map(|x| as_float(x).map(Value::Float).ok_or_else(bad))
                .collect::<Result<_>>()?,
        ),
        (Ty::StrList, Value::Array(a)) if a.iter().all(|x| x.is_str()) => Value::Array(a),
        _ => return Err(bad()),
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, &|k| std::env::var(k).ok())
}

/// Parses config text; `env` looks up override variables.
pub fn parse_config(text: &str, env: &dyn Fn(&str) -> Option<String>) -> Result<ExperimentConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::ConfigParse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().trim().to_string(),
    })?;
    let mut flat = Vec::new();
    flatten("", &table, &mut flat);
    let mut given: BTreeMap<String, Value> = BTreeMap::new();
    for (k, v) in flat {
        let v = coerce(&k, v)?;
        given.insert(k, v);
    }
    for (k, _) in SCHEMA {
        let var = format!("{ENV_PREFIX}{}", k.replace('.', "__").to_uppercase());
        if let Some(s) = env(&var) {
            given.insert(k.to_string(), coerce(k, parse_value(&s))?);
        }
    }
    resolve(given)
}

/// Fills defaults for the chosen kind and builds the typed config.
pub fn resolve(given: BTreeMap<String, Value>) -> Result<ExperimentConfig> {
    let kind = match given.get("kind") {
        Some(Value::String(s)) => ExperimentKind::parse(s).ok_or_else(|| Error::ConfigKey {
            key: "kind".into(),
            message: format!(
                "unknown experiment kind `{s}` (expected one of {})",
                ExperimentKind::ALL.map(|k| k.as_str()).join(", ")
            ),
        })?,
        _ => ExperimentKind::Rate,
    };
    let groups = kind.groups();
    let relevant = |k: &str| {
        let g = group_of(k);
        matches!(g, "kind" | "threads" | "deterministic" | "seed" | "output" | "tol") || groups.contains(&g)
    };
    for k in given.keys() {
        if !relevant(k) {
            return Err(Error::ConfigKey {
                key: k.clone(),
                message: format!("not used by experiment kind `{}`", kind.as_str()),
            });
        }
    }
    // the section shape is named explicitly or implied by its keys
    let mut implied: Vec<&str> = SHAPE_KEYS
        .iter()
        .filter(|(_, keys)| keys.iter().any(|k| given.contains_key(*k)))
        .map(|(s, _)| *s)
        .collect();
    implied.dedup();
    let shape = match (given.get("section.shape"), implied.as_slice()) {
        (_, [a, b, ..]) => {
            return Err(Error::ConfigKey {
                key: "section.shape".into(),
                message: format!("keys for two shapes given (`{a}` and `{b}`)"),
            })
        }
        (Some(Value::String(s)), imp) => {
            if !SHAPE_KEYS.iter().any(|(n, _)| n == s) {
                return Err(Error::ConfigKey {
                    key: "section.shape".into(),
                    message: format!("unknown shape `{s}` (expected disk, square, rectangle or star)"),
                });
            }
            if let Some(i) = imp.first() {
                if i != s {
                    return Err(Error::ConfigKey {
                        key: "section.shape".into(),
                        message: format!("shape `{s}` conflicts with `section.{i}.*` keys"),
                    });
                }
            }
            s.clone()
        }
        (_, [a]) => a.to_string(),
        _ => "disk".into(),
    };
    let mut resolved = BTreeMap::new();
    for (k, v) in defaults(kind) {
        if !relevant(&k) {
            continue;
        }
        if let Some(rest) = k.strip_prefix("section.") {
            let sub = rest.split('.').next().unwrap();
            if SHAPE_KEYS.iter().any(|(n, _)| *n == sub) && sub != shape {
                continue;
            }
        }
        resolved.insert(k.clone(), given.get(&k).cloned().unwrap_or(v));
    }
    if resolved.contains_key("section.shape") {
        resolved.insert("section.shape".into(), Value::String(shape));
    }
    build(kind, resolved)
}

struct Reader<'a>(&'a BTreeMap<String, Value>);

impl Reader<'_> {
    fn get(&self, k: &str) -> &Value {
        self.0.get(k).unwrap_or_else(|| panic!("resolved config lacks `{k}`"))
    }
    fn f(&self, k: &str) -> f64 {
        self.get(k).as_float().unwrap()
    }
    fn i(&self, k: &str) -> u64 {
        self.get(k).as_integer().unwrap() as u64
    }
    fn b(&self, k: &str) -> bool {
        self.get(k).as_bool().unwrap()
    }
    fn s(&self, k: &str) -> &str {
        self.get(k).as_str().unwrap()
    }
    fn fl(&self, k: &str) -> Vec<f64> {
        self.get(k)
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_float().unwrap())
            .collect()
    }
    fn sl(&self, k: &str) -> Vec<String> {
        self.get(k)
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_string())
            .collect()
    }
    fn has(&self, k: &str) -> bool {
        self.0.contains_key(k)
    }
}

fn invalid(key: &str, message: impl Into<String>) -> Error {
    Error::ConfigKey {
        key: key.into(),
        message: message.into(),
    }
}

fn positive(r: &Reader, k: &str) -> Result<f64> {
    let v = r.f(k);
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(k, format!("must be positive (got {v})")))
    }
}

fn grid_mode(r: &Reader, k: &str) -> Result<GridMode> {
    match r.s(k) {
        "axisym" => Ok(GridMode::Axisym),
        "cartesian" => Ok(GridMode::Cartesian),
        "quarter" => Ok(GridMode::CartesianQuarter),
        s => Err(invalid(
            k,
            format!("unknown grid mode `{s}` (expected axisym, cartesian or quarter)"),
        )),
    }
}

fn read_section(r: &Reader) -> Result<SectionShape> {
    let shape = match r.s("section.shape") {
        "disk" => SectionShape::disk(positive(r, "section.disk.radius")?),
        "square" => SectionShape::square(positive(r, "section.square.side")?),
        "rectangle" => {
            let hw = r.fl("section.rectangle.half_widths");
            if hw.len() != 2 || hw.iter().any(|v| !(*v > 0.0)) {
                return Err(invalid(
                    "section.rectangle.half_widths",
                    "expected two positive half-widths",
                ));
            }
            SectionShape::rectangle(hw[0], hw[1])
        }
        "star" => SectionShape::star(
            positive(r, "section.star.base")?,
            r.f("section.star.amplitude"),
            r.i("section.star.petals") as u32,
            r.i("section.star.samples") as usize,
        ),
        s => return Err(invalid("section.shape", format!("unknown shape `{s}`"))),
    };
    let area = r.f("section.area");
    let shape = if area > 0.0 {
        shape.with_area(area)
    } else if area < 0.0 {
        return Err(invalid(
            "section.area",
            "must be positive, or 0 to keep the shape's own area",
        ));
    } else {
        shape
    };
    Ok(if r.b("section.admissible") {
        shape.admissible()
    } else {
        shape
    })
}

/// Named shape for Steiner runs, rescaled to `area`.
pub fn steiner_shape(name: &str, area: f64) -> Result<SectionShape> {
    let parts: Vec<&str> = name.split(':').collect();
    let num = |i: usize, default: f64| -> Result<f64> {
        match parts.get(i) {
            Some(s) => s
                .parse::<f64>()
                .map_err(|_| invalid("steiner.shapes", format!("bad parameter in `{name}`"))),
            None => Ok(default),
        }
    };
    let shape = match parts[0] {
        "disk" => SectionShape::disk(1.0),
        "square" => SectionShape::square(1.0),
        "rectangle" => SectionShape::rectangle(num(1, 2.0)?, 1.0),
        "star" => SectionShape::star(1.0, num(1, 0.15)?, num(2, 5.0)? as u32, 256),
        _ => {
            return Err(invalid(
                "steiner.shapes",
                format!("unknown shape `{name}` (expected disk, square, rectangle[:aspect] or star[:amp:petals])"),
            ))
        }
    };
    Ok(shape.with_area(area))
}

fn bump(r: &Reader, side: &str) -> Result<Bump> {
    let key = format!("weight.{side}.center");
    let c = r.fl(&key);
    if c.len() != 3 {
        return Err(invalid(&key, "expected three coordinates"));
    }
    Ok(Bump::new(
        [c[0], c[1], c[2]],
        positive(r, &format!("weight.{side}.radius"))?,
        positive(r, &format!("weight.{side}.amplitude"))?,
    ))
}

fn build(kind: ExperimentKind, resolved: BTreeMap<String, Value>) -> Result<ExperimentConfig> {
    let r = Reader(&resolved);
    let tol = Tolerances {
        radial_law: positive(&r, "tol.radial_law")?,
        zr_linearity: positive(&r, "tol.zr_linearity")?,
        flux_law: positive(&r, "tol.flux_law")?,
        route_baseline: positive(&r, "tol.route_baseline")?,
        route_extrapolated: positive(&r, "tol.route_extrapolated")?,
        gap_slope: positive(&r, "tol.gap_slope")?,
        gap_prefactor: positive(&r, "tol.gap_prefactor")?,
        eigfun_slope: positive(&r, "tol.eigfun_slope")?,
        eigfun_prefactor: positive(&r, "tol.eigfun_prefactor")?,
        slope_robustness: positive(&r, "tol.slope_robustness")?,
        decay_sharp: positive(&r, "tol.decay_sharp")?,
        split_slope: positive(&r, "tol.split_slope")?,
        branch_prefactor: positive(&r, "tol.branch_prefactor")?,
        sum_consistency: positive(&r, "tol.sum_consistency")?,
        localization: positive(&r, "tol.localization")?,
        localization_eps: positive(&r, "tol.localization_eps")?,
        tilde_ratio: positive(&r, "tol.tilde_ratio")?,
        bessel: positive(&r, "tol.bessel")?,
        dense: positive(&r, "tol.dense")?,
        residual: positive(&r, "tol.residual")?,
    };
    let section = if r.has("section.shape") {
        read_section(&r)?
    } else {
        SectionShape::disk(0.75)
    };
    let compliance = if r.has("compliance.h") {
        HarmonicSettings {
            radius: positive(&r, "compliance.radius")?,
            tube_length: positive(&r, "compliance.tube_length")?,
            h: positive(&r, "compliance.h")?,
            refine: r.b("compliance.refine"),
            mode: grid_mode(&r, "compliance.mode")?,
            cg_tol: positive(&r, "compliance.cg_tol")?,
        }
    } else {
        HarmonicSettings {
            radius: 12.0,
            tube_length: 6.0,
            h: 1.0 / 64.0,
            refine: true,
            mode: GridMode::Axisym,
            cg_tol: 1e-11,
        }
    };
    let steiner = if r.has("steiner.shapes") {
        let names = r.sl("steiner.shapes");
        let area = positive(&r, "steiner.area")?;
        let shapes = names
            .iter()
            .map(|n| steiner_shape(n, area))
            .collect::<Result<Vec<_>>>()?;
        let h = r.fl("steiner.h");
        if h.is_empty() || h.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("steiner.h", "expected at least one positive spacing"));
        }
        SteinerSettings {
            names,
            shapes,
            area,
            radius: positive(&r, "steiner.radius")?,
            tube_length: positive(&r, "steiner.tube_length")?,
            h,
            mode: grid_mode(&r, "steiner.mode")?,
            cg_tol: positive(&r, "steiner.cg_tol")?,
        }
    } else {
        SteinerSettings {
            names: vec![],
            shapes: vec![],
            area: 1.0,
            radius: 8.0,
            tube_length: 4.0,
            h: vec![],
            mode: GridMode::CartesianQuarter,
            cg_tol: 1e-11,
        }
    };
    let seed = r.i("seed");
    let sweep = if kind.is_sweep() {
        let eps = r.fl("sweep.eps");
        if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(invalid("sweep.eps", format!("ε = {e} must lie in (0, 1)")));
        }
        let two = |k: &str| -> Result<[f64; 2]> {
            let v = r.fl(k);
            if v.len() != 2 || !(v[0] < v[1]) {
                return Err(invalid(k, "expected an increasing pair"));
            }
            Ok([v[0], v[1]])
        };
        let backend = Backend::parse(r.s("eigen.backend"))
            .ok_or_else(|| invalid("eigen.backend", "expected `direct` or `cg`"))?;
        let cfg = SweepConfig {
            eps,
            section: section.clone(),
            weight: WeightSpec {
                bumps: vec![bump(&r, "plus")?, bump(&r, "minus")?],
            },
            dim: r.i("sweep.dim") as usize,
            mode: if kind == ExperimentKind::Resonant {
                SweepMode::Resonant
            } else {
                SweepMode::Simple
            },
            grid_mode: grid_mode(&r, "sweep.grid_mode")?,
            cells_per_eps: positive(&r, "sweep.cells_per_eps")?,
            h_weight: positive(&r, "sweep.h_weight")?,
            h_max: positive(&r, "sweep.h_max")?,
            growth: positive(&r, "sweep.growth")?,
            truncation: Truncation {
                chamber_radius: positive(&r, "sweep.chamber_radius")?,
                ..Truncation::default()
            },
            k_bar: r.i("sweep.k_bar") as usize,
            overlap_threshold: positive(&r, "sweep.overlap_threshold")?,
            eigen: EigenOptions {
                tol: positive(&r, "eigen.tol")?,
                max_basis: r.i("eigen.max_basis") as usize,
                max_restarts: r.i("eigen.max_restarts") as usize,
                backend,
                cg_tol: positive(&r, "eigen.cg_tol")?,
                seed,
            },
            compliance: CompliancePlan {
                radius: compliance.radius,
                tube_length: compliance.tube_length,
                h_fine: compliance.h,
                refine: compliance.refine,
            },
            blowup_annulus: two("sweep.blowup_annulus")?,
            decay_window: two("sweep.decay_window")?,
            asymmetry_tol: positive(&r, "sweep.asymmetry_tol")?,
        };
        cfg.validate().map_err(|e| match e {
            Error::Precondition(m) | Error::InvalidWeight(m) => invalid("sweep", m),
            e => e,
        })?;
        cfg
    } else {
        SweepConfig::default()
    };
    let oracle = if r.has("oracle.h") {
        OracleSettings {
            h: positive(&r, "oracle.h")?,
            radius: positive(&r, "oracle.radius")?,
            tube_length: positive(&r, "oracle.tube_length")?,
            section_h: positive(&r, "oracle.section_h")?,
            dense_max_n: r.i("oracle.dense_max_n") as usize,
        }
    } else {
        OracleSettings {
            h: 1.0 / 64.0,
            radius: 12.0,
            tube_length: 6.0,
            section_h: 1.0 / 128.0,
            dense_max_n: 400,
        }
    };
    Ok(ExperimentConfig {
        kind,
        threads: r.i("threads") as usize,
        deterministic: r.b("deterministic"),
        seed,
        output_dir: PathBuf::from(r.s("output.dir")),
        dump_fields: r.b("output.fields"),
        section,
        cross_section_h: if r.has("cross_section.h") {
            positive(&r, "cross_section.h")?
        } else {
            1.0 / 128.0
        },
        compliance,
        steiner,
        sweep,
        oracle,
        tol,
        resolved,
    })
}

impl ExperimentConfig {
    /// Default config of a kind.
    pub fn defaults(kind: ExperimentKind) -> Result<Self> {
        let mut m = BTreeMap::new();
        m.insert("kind".to_string(), Value::String(kind.as_str().into()));
        resolve(m)
    }

    /// Every resolved key as `key = value`, sorted; parses back to an equal config.
    pub fn to_flat_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.resolved {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Applies `key = value` overrides (values in config syntax).
    pub fn with_overrides(&self, overrides: &[(&str, &str)]) -> Result<Self> {
        let mut m = self.resolved.clone();
        for (k, v) in overrides {
            m.insert(k.to_string(), coerce(k, parse_value(v))?);
        }
        resolve(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config(text, &|_| None)
    }

    #[test]
    fn minimal_rate_config_gets_defaults() {
        let c = parse("section.disk.radius = 0.75\nsweep.eps = [0.2, 0.15, 0.1]\n").unwrap();
        assert_eq!(c.kind, ExperimentKind::Rate);
        assert_eq!(c.sweep.truncation.chamber_radius, 12.0);
        assert_eq!(c.sweep.eps, vec![0.2, 0.15, 0.1]);
        assert_eq!(c.sweep.cells_per_eps, 16.0);
        assert!(c.resolved.contains_key("tol.gap_slope"));
        assert!(!c.resolved.contains_key("section.square.side"));
    }

    #[test]
    fn unknown_key_suggests_neighbour() {
        let e = parse("sweeps.eps = [0.2, 0.1, 0.05]\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("sweeps.eps"), "{msg}");
        assert!(msg.contains("`sweep.eps`"), "{msg}");
    }

    #[test]
    fn eps_out_of_range() {
        let e = parse("sweep.eps = [1.5, 0.1, 0.05]\n").unwrap_err();
        assert!(e.to_string().contains("sweep.eps"), "{e}");
    }

    #[test]
    fn parse_error_has_line() {
        match parse("kind = \"rate\"\nsweep.eps = [0.2,\nthreads = = 2\n").unwrap_err() {
            Error::ConfigParse { line, .. } => assert!(line >= 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn round_trip() {
        let c = parse("kind = \"resonant\"\nsweep.eps = [0.2, 0.1, 0.05]\nweight.minus.center = [-6, 0, 0]\n").unwrap();
        let again = parse(&c.to_flat_text()).unwrap();
        assert_eq!(c, again);
        for k in ExperimentKind::ALL {
            let d = ExperimentConfig::defaults(k).unwrap();
            assert_eq!(parse(&d.to_flat_text()).unwrap(), d);
        }
    }

    #[test]
    fn environment_overrides() {
        let env = |k: &str| (k == "DUMBBELL_SWEEP__EPS").then(|| "[0.3, 0.2, 0.1]".to_string());
        let c = parse_config("kind = \"rate\"\n", &env).unwrap();
        assert_eq!(c.sweep.eps, vec![0.3, 0.2, 0.1]);
    }

    #[test]
    fn type_and_kind_errors() {
        assert!(parse("threads = \"many\"\n").is_err());
        assert!(parse("kind = \"bogus\"\n").is_err());
        assert!(parse("kind = \"steiner\"\nsweep.eps = [0.2, 0.1, 0.05]\n").is_err());
        assert!(parse("section.disk.radius = 0.7\nsection.square.side = 1.0\n").is_err());
        assert!(parse("kind = \"compliance\"\nsection.shape = \"square\"\nsection.admissible = false\n").is_ok());
    }
}
