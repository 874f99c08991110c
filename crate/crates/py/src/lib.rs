//! Python bindings: sections, compliance, rate fits, sweeps and the config runner.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dumbbell_core::asymptotics::{self, RatePoint, SweepConfig};
use dumbbell_core::cli::{self, ExperimentConfig};
use dumbbell_core::compliance as comp;
use dumbbell_core::discretize::GridMode;
use dumbbell_core::eig::section_ground_mode;
use dumbbell_core::geometry::{make_section, SectionGeometry, SectionShape};
use dumbbell_core::harmonic::{self, HarmonicOptions};
use dumbbell_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Solver(_) | Error::Eigen(_) | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Serializable result as a plain Python object (dicts, lists, floats).
fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Channel cross-section Σ.
#[pyclass(frozen, module = "dumbbell")]
struct Section {
    inner: Arc<SectionGeometry>,
}

impl Section {
    fn build(shape: SectionShape, area: Option<f64>, admissible: bool) -> PyResult<Self> {
        let mut shape = shape;
        if let Some(a) = area {
            shape = shape.with_area(a);
        }
        if admissible {
            shape = shape.admissible();
        }
        Ok(Self {
            inner: Arc::new(make_section(&shape).map_err(py_err)?),
        })
    }
}

#[pymethods]
impl Section {
    #[staticmethod]
    #[pyo3(signature = (radius, area=None, admissible=false))]
    fn disk(radius: f64, area: Option<f64>, admissible: bool) -> PyResult<Self> {
        Self::build(SectionShape::disk(radius), area, admissible)
    }

    #[staticmethod]
    #[pyo3(signature = (side, area=None, admissible=false))]
    fn square(side: f64, area: Option<f64>, admissible: bool) -> PyResult<Self> {
        Self::build(SectionShape::square(side), area, admissible)
    }

    #[staticmethod]
    #[pyo3(signature = (half_width_x2, half_width_x3, area=None, admissible=false))]
    fn rectangle(half_width_x2: f64, half_width_x3: f64, area: Option<f64>, admissible: bool) -> PyResult<Self> {
        Self::build(SectionShape::rectangle(half_width_x2, half_width_x3), area, admissible)
    }

    #[staticmethod]
    #[pyo3(signature = (base, amplitude, petals, samples=256, area=None, admissible=false))]
    fn star(
        base: f64,
        amplitude: f64,
        petals: u32,
        samples: usize,
        area: Option<f64>,
        admissible: bool,
    ) -> PyResult<Self> {
        Self::build(SectionShape::star(base, amplitude, petals, samples), area, admissible)
    }

    #[getter]
    fn measure(&self) -> f64 {
        self.inner.measure()
    }

    #[getter]
    fn is_disk(&self) -> bool {
        self.inner.is_disk()
    }

    #[getter]
    fn is_admissible(&self) -> bool {
        self.inner.is_admissible()
    }

    fn contains(&self, x2: f64, x3: f64) -> bool {
        self.inner.contains([x2, x3])
    }

    /// Dirichlet ground eigenvalue λ₁(Σ) on a grid of spacing `h`.
    #[pyo3(signature = (h=1.0 / 128.0))]
    fn lambda1(&self, py: Python<'_>, h: f64) -> PyResult<f64> {
        let sec = self.inner.clone();
        py.detach(move || section_ground_mode(&sec, h).map(|m| m.lambda1))
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Section(measure={:.6}, disk={})",
            self.inner.measure(),
            self.inner.is_disk()
        )
    }
}

/// Compliance of the section by all three routes, at `R` and `2R`.
#[pyfunction]
#[pyo3(signature = (section, radius=12.0, tube_length=6.0, h=1.0 / 64.0))]
fn compliance(py: Python<'_>, section: &Section, radius: f64, tube_length: f64, h: f64) -> PyResult<Py<PyAny>> {
    let sec = section.inner.clone();
    let mode = if sec.is_disk() {
        GridMode::Axisym
    } else if sec.has_quadrant_symmetry() {
        GridMode::CartesianQuarter
    } else {
        GridMode::Cartesian
    };
    let r = py
        .detach(move || {
            comp::compliance(
                &sec,
                radius,
                tube_length,
                &harmonic::harmonic_resolution(mode, h),
                &HarmonicOptions::default(),
            )
        })
        .map_err(py_err)?;
    to_py(py, &r)
}

/// Least-squares power law through `(eps, values)`.
#[pyfunction]
#[pyo3(signature = (eps, values, exponent=3.0))]
fn fit_rate(py: Python<'_>, eps: Vec<f64>, values: Vec<f64>, exponent: f64) -> PyResult<Py<PyAny>> {
    if eps.len() != values.len() {
        return Err(PyValueError::new_err("eps and values differ in length"));
    }
    let pts: Vec<RatePoint> = eps
        .iter()
        .zip(&values)
        .map(|(&eps, &value)| RatePoint { eps, value })
        .collect();
    let f = asymptotics::fit_rate(&pts, exponent, None).map_err(py_err)?;
    to_py(py, &f)
}

/// Simple-eigenvalue sweep with the default dumbbell (disk 0.75, bumps at ±).
#[pyfunction]
#[pyo3(signature = (eps, radius=0.75))]
fn simple_sweep(py: Python<'_>, eps: Vec<f64>, radius: f64) -> PyResult<Py<PyAny>> {
    let cfg = SweepConfig {
        eps,
        section: SectionShape::disk(radius).admissible(),
        ..SweepConfig::default()
    };
    let s = py.detach(move || asymptotics::simple_sweep(&cfg)).map_err(py_err)?;
    to_py(py, &s)
}

/// `Υ_N = (|S^{N−1}|/(2N))^{1/2}`.
#[pyfunction]
fn upsilon(n: usize) -> f64 {
    harmonic::upsilon(n)
}

#[pyfunction]
fn richardson(at_r: f64, at_2r: f64, exponent: f64) -> f64 {
    harmonic::richardson(at_r, at_2r, exponent)
}

/// Runs a config given as text; returns the record and, with `out`, writes
/// the run directory.
#[pyfunction]
#[pyo3(signature = (text, out=None))]
fn run_config(py: Python<'_>, text: &str, out: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let cfg = cli::parse_config(text, &|_| None).map_err(py_err)?;
    let rec = py
        .detach(move || -> dumbbell_core::Result<_> {
            let rec = cli::run_experiment(&cfg)?;
            if let Some(dir) = out {
                cli::write_results(&rec, &dir)?;
            }
            Ok(rec)
        })
        .map_err(py_err)?;
    to_py(py, &rec)
}

/// Resolved default config of an experiment kind, as config text.
#[pyfunction]
fn default_config(kind: &str) -> PyResult<String> {
    let k = cli::ExperimentKind::parse(kind).ok_or_else(|| PyValueError::new_err(format!("unknown kind `{kind}`")))?;
    Ok(ExperimentConfig::defaults(k).map_err(py_err)?.to_flat_text())
}

#[pymodule]
fn dumbbell(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Section>()?;
    m.add_function(wrap_pyfunction!(compliance, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(simple_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(upsilon, m)?)?;
    m.add_function(wrap_pyfunction!(richardson, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add("BESSEL_J0_ZERO", asymptotics::BESSEL_J0_ZERO)?;
    Ok(())
}
