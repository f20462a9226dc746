//! Python bindings: scenario runs, presets and a few single-atom and beam
//! quantities. Long computations release the interpreter lock.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hhgcoh::propagation::FocusGeometry;
use hhgcoh::runner::{run_scenario, RunOptions, StageStatus};
use hhgcoh::scenario::{list_presets, parse_config, preset};
use hhgcoh::sfa::{harmonic_components, AtomModel, DriveWaveform, SfaNumerics, Species};
use hhgcoh::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Domain { .. } | Error::Range { .. } => PyValueError::new_err(e.to_string()),
        Error::NotFound(_) => PyKeyError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn species(name: &str) -> PyResult<Species> {
    match name.to_ascii_lowercase().as_str() {
        "helium" | "he" => Ok(Species::Helium),
        "neon" | "ne" => Ok(Species::Neon),
        "argon" | "ar" => Ok(Species::Argon),
        _ => Err(PyValueError::new_err(format!(
            "unknown species `{name}` (helium, neon, argon)"
        ))),
    }
}

/// `(id, summary)` for every figure preset.
#[pyfunction]
fn presets() -> Vec<(String, String)> {
    list_presets().iter().map(|p| (p.id.to_string(), p.summary())).collect()
}

/// TOML document of a preset.
#[pyfunction]
fn preset_document(id: &str) -> PyResult<String> {
    preset(id).map(|p| p.document.to_string()).map_err(to_py)
}

/// Parses and validates a scenario; returns it with every default filled in.
#[pyfunction]
fn normalize_config(text: &str) -> PyResult<String> {
    parse_config(text).map(|s| s.to_toml()).map_err(to_py)
}

/// Runs a scenario document under `out_dir` and returns its manifest.
#[pyfunction]
#[pyo3(signature = (config, out_dir, cache_dir=None))]
fn run<'py>(
    py: Python<'py>,
    config: &str,
    out_dir: PathBuf,
    cache_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let scenario = parse_config(config).map_err(to_py)?;
    let mut options = RunOptions::new(out_dir);
    options.cache_dir = cache_dir;
    let dir = options.run_dir(&scenario);
    let manifest = py.detach(|| run_scenario(&scenario, &options)).map_err(to_py)?;

    let stages = PyDict::new(py);
    for s in &manifest.stages {
        let status = match &s.status {
            StageStatus::Ok => "ok".to_string(),
            StageStatus::Failed(msg) => format!("failed: {msg}"),
            StageStatus::Skipped => "skipped".to_string(),
        };
        stages.set_item(&s.name, status)?;
    }
    let out = PyDict::new(py);
    out.set_item("scenario", &manifest.scenario)?;
    out.set_item("pipeline", &manifest.pipeline)?;
    out.set_item("run_dir", dir)?;
    out.set_item("wall_time_s", manifest.wall_time_s)?;
    out.set_item("succeeded", manifest.succeeded())?;
    out.set_item("table_cache_hit", manifest.table.as_ref().map(|t| t.cache_hit))?;
    out.set_item("stages", stages)?;
    out.set_item(
        "files",
        manifest.files.iter().map(|f| f.path.clone()).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// Harmonic component x_q (a.u.) of the single-atom dipole for a
/// monochromatic cosine drive.
#[pyfunction]
#[pyo3(signature = (intensity, order=45, wavelength_nm=825.0, atom="neon"))]
fn harmonic_dipole(
    py: Python<'_>,
    intensity: f64,
    order: usize,
    wavelength_nm: f64,
    atom: &str,
) -> PyResult<Complex64> {
    let model = AtomModel::preset(species(atom)?);
    let drive = DriveWaveform::monochromatic(wavelength_nm, intensity).map_err(to_py)?;
    // The spectrum is computed up to an odd order; even orders read as ~0.
    py.detach(|| harmonic_components(&drive, &model, &SfaNumerics::default(), order | 1))
        .map(|h| h.order(order))
        .map_err(to_py)
}

/// Waist, 1/e² radius and Gouy phase of the focused fundamental at `z_mm`.
#[pyfunction]
#[pyo3(signature = (z_mm, confocal_mm=5.0, wavelength_nm=825.0))]
fn gaussian_beam(py: Python<'_>, z_mm: f64, confocal_mm: f64, wavelength_nm: f64) -> PyResult<Bound<'_, PyDict>> {
    let g = FocusGeometry::new(confocal_mm, wavelength_nm).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("waist_um", g.waist_um())?;
    out.set_item("radius_um", g.radius_um(z_mm))?;
    out.set_item("gouy_phase", g.gouy_phase(z_mm))?;
    Ok(out)
}

#[pymodule]
pub fn hhgcoh_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(preset_document, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_dipole, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_beam, m)?)?;
    Ok(())
}
