//! Python bindings: presets, the acceptance checks and a few analysis
//! helpers. Results come back as plain dicts and lists.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use rydberg_core::atom::{self, AtomParams};
use rydberg_core::blockade::{self, BellRecord};
use rydberg_core::dynamics::{ComplexMatrix, DensityMatrix};
use rydberg_core::experiments::{self, checks, ExperimentConfig};
use rydberg_core::pulse::Preset;
use rydberg_core::Error;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for x in items {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, x) in map {
                dict.set_item(k, to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialized<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Effective two-photon Rabi frequency Omega/2pi in MHz.
#[pyfunction]
#[pyo3(signature = (omega_blue_mhz=60.0, omega_red_mhz=40.0, delta_mhz=600.0))]
fn two_photon_rabi(omega_blue_mhz: f64, omega_red_mhz: f64, delta_mhz: f64) -> PyResult<f64> {
    let p = AtomParams {
        omega_blue_mhz,
        omega_red_mhz,
        delta_intermediate_mhz: delta_mhz,
        ..AtomParams::default()
    };
    atom::two_photon_rabi(&p).map_err(py_err)
}

/// Thermal Doppler width sigma/2pi in kHz.
#[pyfunction]
#[pyo3(signature = (temperature_uk=10.0))]
fn doppler_sigma_khz(temperature_uk: f64) -> f64 {
    atom::doppler_sigma_khz(&AtomParams {
        temperature_uk,
        ..AtomParams::default()
    })
}

#[pyfunction]
fn list_presets(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    serialized(py, &experiments::list_presets())
}

/// Runs a preset in memory. `config` is optional TOML overriding the
/// defaults; `n_shots` and `master_seed` override it in turn.
#[pyfunction]
#[pyo3(signature = (preset, n_shots=None, master_seed=None, config=None))]
fn run_preset<'py>(
    py: Python<'py>,
    preset: &str,
    n_shots: Option<usize>,
    master_seed: Option<u64>,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let p: Preset = preset.parse().map_err(py_err)?;
    let mut cfg = match config {
        Some(text) => {
            let mut c = ExperimentConfig::from_toml(text).map_err(py_err)?;
            c.preset = p.name().to_string();
            c
        }
        None => ExperimentConfig::for_preset(p),
    };
    if n_shots.is_some() {
        cfg.n_shots = n_shots;
    }
    if let Some(s) = master_seed {
        cfg.master_seed = s;
    }
    let run = py.detach(|| experiments::execute(&cfg)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("preset", run.preset.name())?;
    out.set_item("ensemble", serialized(py, &run.ensemble)?)?;
    out.set_item("derived", serialized(py, &run.derived)?)?;
    out.set_item("warnings", run.warnings)?;
    Ok(out.into_any())
}

/// Runs a TOML config file, writes its outputs and returns the manifest.
#[pyfunction]
fn run_config(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    let cfg = ExperimentConfig::load(&path).map_err(py_err)?;
    let manifest = py.detach(|| experiments::run(&cfg)).map_err(py_err)?;
    serialized(py, &manifest)
}

/// Acceptance checks as (id, name, passed, detail) tuples.
#[pyfunction]
#[pyo3(signature = (ids=None))]
fn check(py: Python<'_>, ids: Option<Vec<usize>>) -> PyResult<Vec<(usize, String, bool, String)>> {
    let ids = ids.unwrap_or_else(|| checks::CHECKS.iter().map(|c| c.0).collect());
    py.detach(|| {
        ids.iter()
            .map(|&id| {
                checks::run_check(id)
                    .map(|o| (o.id, o.name.to_string(), o.passed, o.detail))
                    .ok_or_else(|| PyValueError::new_err(format!("no check numbered {id}")))
            })
            .collect()
    })
}

/// Bell fidelity from the measured population sum and coherence amplitude.
#[pyfunction]
fn bell_fidelity(diag_sum: f64, offdiag_amp: f64) -> f64 {
    BellRecord::from_measured(diag_sum, offdiag_amp).fidelity
}

/// Parity-scan fit of a 4x4 density matrix in the gg, gr, rg, rr basis.
/// Returns (alpha, theta, offset).
#[pyfunction]
fn parity_amplitude(rho: Vec<Vec<Complex64>>, delta_mhz: f64, times: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    if rho.len() != 4 || rho.iter().any(|row| row.len() != 4) {
        return Err(PyValueError::new_err("rho must be 4x4"));
    }
    let m = ComplexMatrix::from_fn(4, |i, j| rho[i][j]);
    let state = DensityMatrix::new(m, blockade::two_atom_labels()).map_err(py_err)?;
    let fit = blockade::parity_amplitude(&state, delta_mhz, &times).map_err(py_err)?;
    Ok((fit.alpha, fit.theta, fit.offset))
}

#[pymodule]
fn rydberg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(two_photon_rabi, m)?)?;
    m.add_function(wrap_pyfunction!(doppler_sigma_khz, m)?)?;
    m.add_function(wrap_pyfunction!(list_presets, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(bell_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(parity_amplitude, m)?)?;
    Ok(())
}
