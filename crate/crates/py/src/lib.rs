//! Python bindings for the `optipur` simulator.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use optipur::analysis::{estimate as run_estimate, EstimateOptions};
use optipur::channels::NoiseParams;
use optipur::config::Config;
use optipur::linkmodel::{attempt_success_prob, LinkConfig};
use optipur::protocols::{Protocol, ProtocolKind, Scheme, Setup};
use optipur::purify::bell_recurrence_oracle;
use optipur::states::BellCoeffs;
use optipur::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        Error::ImpossibleOutcome(_) | Error::Csv(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn link(kind: &str, d_km: f64, h_km: f64, mu_hz: f64) -> PyResult<LinkConfig> {
    match kind {
        "ground" => Ok(LinkConfig::ground(d_km, mu_hz)),
        "satellite" => Ok(LinkConfig::satellite(d_km, h_km, mu_hz)),
        other => Err(PyValueError::new_err(format!(
            "kind must be 'ground' or 'satellite', got '{other}'"
        ))),
    }
}

/// Estimate fidelity, rate and secret-key rate of one protocol.
#[pyfunction]
#[pyo3(signature = (
    protocol, n_steps, d_km, mu_hz, f0, t2_s, *,
    kind = "ground", h_km = 400.0, t1_s = 360.0, p_g = 0.99, p_m = 0.99,
    measure_before_confirm = false, trials_min = 10_000, ci_target = 0.03, max_trials = 200_000, seed = 1,
))]
#[allow(clippy::too_many_arguments)]
fn estimate<'py>(
    py: Python<'py>,
    protocol: &str,
    n_steps: usize,
    d_km: f64,
    mu_hz: f64,
    f0: f64,
    t2_s: f64,
    kind: &str,
    h_km: f64,
    t1_s: f64,
    p_g: f64,
    p_m: f64,
    measure_before_confirm: bool,
    trials_min: usize,
    ci_target: f64,
    max_trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let protocol: Protocol = protocol.parse().map_err(to_py)?;
    let np = NoiseParams::new(p_g, p_m, t1_s, t2_s).map_err(to_py)?;
    let setup = Setup::new(
        ProtocolKind {
            protocol,
            measure_before_confirm,
        },
        Scheme::Pumping(n_steps),
        link(kind, d_km, h_km, mu_hz)?,
        np,
        f0,
    );
    let opts = EstimateOptions {
        n_min: trials_min,
        ci_target,
        max_trials,
        ..EstimateOptions::default()
    };
    let e = py.detach(|| run_estimate(&setup, &opts, seed)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("fidelity", e.mean_fidelity)?;
    d.set_item("fidelity_ci", e.ci_halfwidth_fidelity)?;
    d.set_item("rate", e.rate)?;
    d.set_item("rate_ci", e.ci_halfwidth_rate)?;
    d.set_item("skf", e.skf)?;
    d.set_item("skr", e.skr)?;
    d.set_item("n_trials", e.n_trials)?;
    d.set_item("n_delivered", e.n_delivered)?;
    d.set_item("converged", e.converged)?;
    Ok(d)
}

/// Run `optipur simulate` on a config file and return the report.
#[pyfunction]
fn simulate_config(py: Python<'_>, path: &str) -> PyResult<String> {
    let cfg = Config::from_file(path).map_err(to_py)?;
    py.detach(|| optipur::cli::simulate(&cfg, None)).map_err(to_py)
}

/// Per-attempt success probability of a link.
#[pyfunction]
#[pyo3(signature = (kind, d_km, mu_hz = 1e9, h_km = 400.0))]
fn success_probability(kind: &str, d_km: f64, mu_hz: f64, h_km: f64) -> PyResult<f64> {
    let cfg = link(kind, d_km, h_km, mu_hz)?;
    cfg.validate().map_err(to_py)?;
    Ok(attempt_success_prob(&cfg))
}

/// Noiseless DEJMPS map on Bell coefficients `(φ+, ψ−, ψ+, φ−)`;
/// returns the kept coefficients and the success probability.
#[pyfunction]
fn dejmps_recurrence(main: [f64; 4], sac: [f64; 4]) -> PyResult<([f64; 4], f64)> {
    let b = |c: [f64; 4]| BellCoeffs::new(c[0], c[1], c[2], c[3]);
    let (post, p) = bell_recurrence_oracle(&b(main), &b(sac)).map_err(to_py)?;
    Ok((post.as_array(), p))
}

#[pymodule]
fn optipur_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_config, m)?)?;
    m.add_function(wrap_pyfunction!(success_probability, m)?)?;
    m.add_function(wrap_pyfunction!(dejmps_recurrence, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_functions() {
        let p = success_probability("ground", 20.0, 1e9, 400.0).unwrap();
        assert!((p - 0.398_107).abs() < 1e-6);
        let w = [0.9, 0.1 / 3.0, 0.1 / 3.0, 0.1 / 3.0];
        let (post, p) = dejmps_recurrence(w, w).unwrap();
        assert!((post[0] - 0.926_396).abs() < 5e-7);
        assert!((p - 0.875_556).abs() < 5e-7);
    }
}
