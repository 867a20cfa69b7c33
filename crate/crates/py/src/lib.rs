use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Deserialize;

use pssmp::entrance::ssel_estimate;
use pssmp::exp_functional::{ExpSampler, SampleControl};
use pssmp::lamperti::{lamperti_forward_with, ClockRule};
use pssmp::{excursion, runner, CramerClass, Error, JumpLaw, LevyTriplet, Streams};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_) | Error::Domain(_) | Error::Precondition(_) | Error::Config(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[derive(Deserialize)]
struct Inline {
    v: JumpLaw,
}

/// Killed Lévy triplet `(q, b, σ², λ, jump law)`. The jump law is a TOML
/// inline table such as `{ name = "gaussian", params = { mean = 0.0, sd = 1.0 } }`.
#[pyclass(name = "Triplet", from_py_object)]
#[derive(Clone)]
struct PyTriplet {
    inner: LevyTriplet,
}

#[pymethods]
impl PyTriplet {
    #[new]
    #[pyo3(signature = (q=0.0, b=0.0, sigma2=0.0, jump_rate=0.0, jump_law=None))]
    fn new(q: f64, b: f64, sigma2: f64, jump_rate: f64, jump_law: Option<&str>) -> PyResult<Self> {
        let mut inner = LevyTriplet::new(q, b, sigma2);
        if let Some(s) = jump_law {
            let law = toml::from_str::<Inline>(&format!("v = {s}"))
                .map_err(|e| PyValueError::new_err(format!("jump law: {e}")))?
                .v;
            inner = inner.with_jumps(jump_rate, law);
        }
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    fn laplace_exponent(&self, z: f64) -> PyResult<f64> {
        self.inner.laplace_exponent(z).map_err(to_py)
    }

    /// `("strict", θ*)`, `("sub", sup)` or `("none", nan)`.
    #[pyo3(signature = (z_max=10.0))]
    fn cramer_index(&self, z_max: f64) -> PyResult<(String, f64)> {
        Ok(match self.inner.cramer_index(z_max).map_err(to_py)? {
            CramerClass::Strict(t) => ("strict".into(), t),
            CramerClass::Sub(t) => ("sub".into(), t),
            CramerClass::None => ("none".into(), f64::NAN),
        })
    }

    fn esscher_tilt(&self, theta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.esscher_tilt(theta).map_err(to_py)?,
        })
    }

    fn dual(&self) -> Self {
        Self { inner: self.inner.dual() }
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyfunction]
fn rho_formula(alpha: f64, beta: f64, q: f64) -> PyResult<f64> {
    excursion::rho_formula(alpha, beta, q).map_err(to_py)
}

/// Draws of `∫_0^ζ e^{αξ_s} ds`.
#[pyfunction]
#[pyo3(signature = (triplet, alpha, n, seed=1, step=1e-3))]
fn sample_exp_functional(triplet: &PyTriplet, alpha: f64, n: usize, seed: u64, step: f64) -> PyResult<Vec<f64>> {
    let sampler = ExpSampler::new(&triplet.inner, alpha, SampleControl::with_step(step)).map_err(to_py)?;
    let draws = sampler.sample_batch(Streams::new(seed), n).map_err(to_py)?;
    Ok(draws.iter().map(|d| d.value).collect())
}

/// `(times, values, absorption)` of the Lamperti image of one path over
/// the Lévy-time `horizon`.
#[pyfunction]
#[pyo3(signature = (triplet, x, alpha, horizon, step=1e-3, seed=1, linear_clock=false))]
fn simulate_pssmp(
    triplet: &PyTriplet,
    x: f64,
    alpha: f64,
    horizon: f64,
    step: f64,
    seed: u64,
    linear_clock: bool,
) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let path = triplet
        .inner
        .sample_path(horizon, step, &mut Streams::new(seed).replica(0))
        .map_err(to_py)?;
    let rule = if linear_clock { ClockRule::ExactLinear } else { ClockRule::LeftPoint };
    let p = lamperti_forward_with(&path, x, alpha, rule).map_err(to_py)?;
    Ok((p.times, p.values, p.absorption))
}

/// `(points, weights)` of the weighted estimate of `μ^γ_s`.
#[pyfunction]
#[pyo3(signature = (triplet, gamma, alpha, s, n, seed=1, step=1e-3))]
fn entrance_law(
    triplet: &PyTriplet,
    gamma: f64,
    alpha: f64,
    s: f64,
    n: usize,
    seed: u64,
    step: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let mu = ssel_estimate(&triplet.inner, gamma, alpha, s, n, Streams::new(seed), SampleControl::with_step(step))
        .map_err(to_py)?;
    Ok((mu.points(), mu.weights()))
}

/// Runs an experiment config and returns its exit code.
#[pyfunction]
#[pyo3(signature = (path, out_dir=None))]
fn run_config(path: &str, out_dir: Option<&str>) -> i32 {
    runner::run(Path::new(path), out_dir.map(Path::new))
}

#[pymodule]
fn pssmp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTriplet>()?;
    m.add_function(wrap_pyfunction!(rho_formula, m)?)?;
    m.add_function(wrap_pyfunction!(sample_exp_functional, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_pssmp, m)?)?;
    m.add_function(wrap_pyfunction!(entrance_law, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
