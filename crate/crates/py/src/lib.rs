//! Python module `epdt`: the classifier and the batch commands.
//!
//! Results cross the boundary as plain dicts, tuples and JSON strings so the
//! Python side needs nothing beyond the standard library.

use std::collections::BTreeMap;
use std::path::Path;

use epdt_cli::commands;
use epdt_cli::config::RunConfig;
use epdt_cli::CliError;
use epdt_core::criticality::{self, SystemParams};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

#[allow(clippy::too_many_arguments)]
pub fn params(m: f64, n: u32, mu1: f64, mu2: f64, nu1sq: f64, nu2sq: f64, p: f64, q: f64, sigma: f64) -> SystemParams {
    SystemParams {
        m,
        n,
        mu1,
        mu2,
        nu1sq,
        nu2sq,
        p,
        q,
        sigma,
    }
}

/// Derived constants by name; booleans become 0 or 1.
pub fn constants_map(params: &SystemParams) -> epdt_core::Result<BTreeMap<String, f64>> {
    params.validate()?;
    let c = criticality::derive_constants(params)?;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    Ok([
        ("delta1", c.delta1),
        ("delta2", c.delta2),
        ("beta1", c.beta1),
        ("beta2", c.beta2),
        ("gamma_m", c.gamma_m),
        ("p_tilde", c.p_tilde),
        ("q_tilde", c.q_tilde),
        ("alpha1", c.alpha1),
        ("alpha2", c.alpha2),
        ("sigma_threshold", c.sigma_threshold1),
        ("log_flag1", flag(c.log_flag1)),
        ("log_flag2", flag(c.log_flag2)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect())
}

/// Run one batch command on a JSON config; returns the JSON summary.
pub fn run_json(command: &str, config: &str, out: Option<&str>) -> Result<String, CliError> {
    let mut cfg = RunConfig::from_json(config)?;
    if let Some(dir) = out {
        cfg.outputs.directory = dir.to_string();
    }
    let text = |v: serde_json::Result<String>| v.map_err(|e| CliError::runtime("write json", e));
    match command {
        "classify" => text(serde_json::to_string(&commands::classify(&cfg)?)),
        "map" => text(serde_json::to_string(&commands::map(&cfg, None)?)),
        "simulate" => text(serde_json::to_string(&commands::simulate(&cfg, false)?.summary)),
        "decay-fit" => text(serde_json::to_string(&commands::decay_fit(&cfg)?)),
        "verify-linear" => text(serde_json::to_string(&commands::verify_linear(&cfg)?)),
        "certify" => text(serde_json::to_string(&commands::certify(&cfg, None)?)),
        other => Err(CliError::Config(format!("unknown command `{other}`"))),
    }
}

fn to_py(e: CliError) -> PyErr {
    match e {
        CliError::Config(m) => PyValueError::new_err(m),
        e @ CliError::Runtime { .. } => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyfunction(name = "derive_constants")]
#[pyo3(signature = (m, n, mu1, mu2, nu1sq, nu2sq, p, q, sigma=1.0))]
#[allow(clippy::too_many_arguments)]
fn py_derive_constants(
    m: f64,
    n: u32,
    mu1: f64,
    mu2: f64,
    nu1sq: f64,
    nu2sq: f64,
    p: f64,
    q: f64,
    sigma: f64,
) -> PyResult<BTreeMap<String, f64>> {
    constants_map(&params(m, n, mu1, mu2, nu1sq, nu2sq, p, q, sigma))
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// `(verdict, regime label or None, gamma_m, margin)`.
#[pyfunction(name = "classify")]
#[pyo3(signature = (m, n, mu1, mu2, nu1sq, nu2sq, p, q, sigma=1.0))]
#[allow(clippy::too_many_arguments)]
fn py_classify(
    m: f64,
    n: u32,
    mu1: f64,
    mu2: f64,
    nu1sq: f64,
    nu2sq: f64,
    p: f64,
    q: f64,
    sigma: f64,
) -> PyResult<(String, Option<String>, f64, f64)> {
    let params = params(m, n, mu1, mu2, nu1sq, nu2sq, p, q, sigma);
    let c = params
        .validate()
        .and_then(|()| criticality::classify(&params))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((
        format!("{:?}", c.verdict),
        c.satisfied_theorem.map(|r| r.label().to_string()),
        c.gamma_m,
        c.margin,
    ))
}

#[pyfunction(name = "run")]
#[pyo3(signature = (command, config, out=None))]
fn py_run(py: Python<'_>, command: &str, config: &str, out: Option<&str>) -> PyResult<String> {
    let (command, config, out) = (command.to_string(), config.to_string(), out.map(str::to_string));
    py.detach(move || run_json(&command, &config, out.as_deref())).map_err(to_py)
}

/// Read a snapshot file written by `simulate`; returns the snapshot times.
#[pyfunction]
fn snapshot_times(path: &str) -> PyResult<Vec<f64>> {
    let snaps = commands::read_snapshots(Path::new(path)).map_err(to_py)?;
    Ok(snaps.iter().map(|s| s.t).collect())
}

#[pymodule]
fn epdt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(py_derive_constants, m)?)?;
    m.add_function(wrap_pyfunction!(py_classify, m)?)?;
    m.add_function(wrap_pyfunction!(py_run, m)?)?;
    m.add_function(wrap_pyfunction!(snapshot_times, m)?)?;
    Ok(())
}
