//! Python bindings for the pgkit samplers, oracles and minorization tools.

use pyo3::exceptions::{PyTypeError, PyValueError};
use pyo3::prelude::*;

use pgkit::csmc::{run_pg_chain_keyed, PgChainConfig, ReferenceTrajectory};
use pgkit::minorization as mz;
use pgkit::models::{FiniteHmm, Lgss, LgssParams, StochVolModel, SvParams};
use pgkit::smc::{extract_path, resample_multinomial, run_smc as smc};
use pgkit::ssm::{make_proposal, ProposalKind, Scalar, StateSpaceModel};
use pgkit::StreamKey;

fn err(e: pgkit::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kind(name: &str) -> PyResult<ProposalKind> {
    name.parse().map_err(err)
}

/// Finite hidden Markov model with row-stochastic transition and emission matrices.
#[pyclass(name = "FiniteHmm", module = "pgkit_py")]
struct PyFiniteHmm {
    inner: FiniteHmm,
}

#[pymethods]
impl PyFiniteHmm {
    #[new]
    fn new(transition: Vec<Vec<f64>>, emission: Vec<Vec<f64>>, initial: Vec<f64>) -> PyResult<Self> {
        Ok(PyFiniteHmm { inner: FiniteHmm::new(transition, emission, initial).map_err(err)? })
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn num_symbols(&self) -> usize {
        self.inner.num_symbols()
    }

    /// Hidden path and observations of length `len`.
    #[pyo3(signature = (len, seed = 0))]
    fn simulate(&self, len: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
        self.inner.simulate(len, &mut StreamKey::new(seed).rng(0, 0))
    }

    /// Exact log-likelihood from the forward recursion.
    fn log_likelihood(&self, ys: Vec<usize>) -> PyResult<f64> {
        self.inner.log_likelihood(&ys).map_err(err)
    }

    fn smoothing_marginals(&self, ys: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
        self.inner.smoothing_marginals(&ys).map_err(err)
    }

    /// `(sigma_minus, sigma_plus)` of the transition matrix.
    fn strong_mixing_constants(&self) -> (f64, f64) {
        self.inner.strong_mixing_constants()
    }

    fn likelihood_ratio_bound(&self) -> f64 {
        self.inner.likelihood_ratio_bound()
    }

    /// Exact `B_{t,T}` for `t = 0..T`.
    #[pyo3(signature = (ys, proposal = "bootstrap"))]
    fn exact_b(&self, ys: Vec<usize>, proposal: &str) -> PyResult<Vec<f64>> {
        mz::exact_b_tT(&self.inner, kind(proposal)?, &ys).map_err(err)
    }

    /// Exact minorization constant of the PG kernel with `n` particles.
    #[pyo3(signature = (ys, n, proposal = "bootstrap"))]
    fn exact_epsilon(&self, ys: Vec<usize>, n: usize, proposal: &str) -> PyResult<f64> {
        let b = mz::exact_b_tT(&self.inner, kind(proposal)?, &ys).map_err(err)?;
        mz::epsilon(&b, n).map_err(err)
    }
}

/// Linear-Gaussian state-space model `x' = a x + N(0, q)`, `y = c x + N(0, r)`.
#[pyclass(name = "Lgss", module = "pgkit_py")]
struct PyLgss {
    inner: Lgss,
}

#[pymethods]
impl PyLgss {
    #[new]
    #[pyo3(signature = (a, c, q, r, m0 = 0.0, p0 = 1.0))]
    fn new(a: f64, c: f64, q: f64, r: f64, m0: f64, p0: f64) -> PyResult<Self> {
        Ok(PyLgss { inner: Lgss::new(LgssParams { a, c, q, r, m0, p0 }).map_err(err)? })
    }

    #[pyo3(signature = (len, seed = 0))]
    fn simulate(&self, len: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        self.inner.simulate(len, &mut StreamKey::new(seed).rng(0, 0))
    }

    /// Exact log-likelihood from the Kalman filter.
    fn log_likelihood(&self, ys: Vec<f64>) -> PyResult<f64> {
        Ok(self.inner.kalman(&ys).map_err(err)?.log_likelihood)
    }

    /// Smoothed means and variances.
    fn smoother(&self, ys: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        self.inner.rts_smoother(&ys).map_err(err)
    }

    /// One exact draw from the smoothing distribution.
    #[pyo3(signature = (ys, seed = 0))]
    fn sample_smoothing(&self, ys: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
        self.inner.ffbs_sample(&ys, &mut StreamKey::new(seed).rng(0, 0)).map_err(err)
    }
}

/// Stochastic volatility model `y = beta exp(x / 2) N(0, 1)` with AR(1) log-volatility.
#[pyclass(name = "StochVol", module = "pgkit_py")]
struct PyStochVol {
    inner: StochVolModel,
}

#[pymethods]
impl PyStochVol {
    #[new]
    fn new(phi: f64, sigma: f64, beta: f64) -> PyResult<Self> {
        let p = SvParams { phi, sigma, beta, m0: None, p0: None };
        Ok(PyStochVol { inner: StochVolModel::new(p).map_err(err)? })
    }

    #[pyo3(signature = (len, seed = 0))]
    fn simulate(&self, len: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        self.inner.simulate(len, &mut StreamKey::new(seed).rng(0, 0))
    }
}

/// Result of one SMC run.
#[pyclass(name = "SmcResult", module = "pgkit_py", get_all)]
struct PySmcResult {
    log_likelihood: f64,
    ess: Vec<f64>,
    /// `states[t][i]` as floats.
    states: Vec<Vec<f64>>,
    /// `ancestors[t][i]`; empty at `t = 0`.
    ancestors: Vec<Vec<usize>>,
}

/// Output of one particle Gibbs chain.
#[pyclass(name = "PgChain", module = "pgkit_py", get_all)]
struct PyPgChain {
    /// Kept trajectories as floats.
    samples: Vec<Vec<f64>>,
    update_fraction: Vec<f64>,
    atom_mass: f64,
}

fn smc_generic<M: StateSpaceModel>(m: &M, ys: &[M::Obs], n: usize, seed: u64, proposal: &str) -> PyResult<PySmcResult> {
    let prop = make_proposal(m, kind(proposal)?).map_err(err)?;
    let r = smc(&prop, ys, n, StreamKey::new(seed)).map_err(err)?;
    Ok(PySmcResult {
        log_likelihood: r.log_likelihood_estimate,
        ess: r.ess,
        states: r.system.states.iter().map(|row| row.iter().map(Scalar::to_f64).collect()).collect(),
        ancestors: r.system.ancestors,
    })
}

#[allow(clippy::too_many_arguments)]
fn pg_generic<M: StateSpaceModel>(
    m: &M,
    ys: &[M::Obs],
    n: usize,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
    proposal: &str,
) -> PyResult<PyPgChain> {
    let kind = kind(proposal)?;
    let prop = make_proposal(m, kind).map_err(err)?;
    let cfg = PgChainConfig { n, iterations, burn_in, seed, proposal: kind, thin };
    cfg.validate().map_err(err)?;
    // same keying as the command-line tool's chain 0
    let ck = StreamKey::new(seed).child(0);
    let init = smc(&prop, ys, n, ck.child(0)).map_err(err)?;
    let last = init.system.last_time();
    let k = resample_multinomial(&init.system.log_weights[last], 1, &mut ck.rng(0, 0)).map_err(err)?[0];
    let start = ReferenceTrajectory::from(extract_path(&init.system, k).map_err(err)?);
    let chain = run_pg_chain_keyed(&prop, ys, &cfg, &start, ck.child(1), 0).map_err(err)?;
    Ok(PyPgChain {
        samples: chain.samples.iter().map(|s| s.states.iter().map(Scalar::to_f64).collect()).collect(),
        update_fraction: chain.diagnostics.update_fraction,
        atom_mass: chain.diagnostics.atom_mass,
    })
}

/// Calls `$body` with `$m` bound to the Rust model inside a Python model object
/// and `$ys` to the observations converted to that model's type.
macro_rules! dispatch {
    ($model:expr, $ys:expr, |$m:ident, $y:ident| $body:expr) => {{
        if let Ok(h) = $model.extract::<PyRef<PyFiniteHmm>>() {
            let $y: Vec<usize> = $ys.extract()?;
            let $m = &h.inner;
            $body
        } else if let Ok(l) = $model.extract::<PyRef<PyLgss>>() {
            let $y: Vec<f64> = $ys.extract()?;
            let $m = &l.inner;
            $body
        } else if let Ok(s) = $model.extract::<PyRef<PyStochVol>>() {
            let $y: Vec<f64> = $ys.extract()?;
            let $m = &s.inner;
            $body
        } else {
            Err(PyTypeError::new_err("model must be FiniteHmm, Lgss or StochVol"))
        }
    }};
}

/// Run the SMC sampler with `n` particles.
#[pyfunction]
#[pyo3(signature = (model, ys, n, seed = 0, proposal = "bootstrap"))]
fn run_smc(model: &Bound<'_, PyAny>, ys: &Bound<'_, PyAny>, n: usize, seed: u64, proposal: &str) -> PyResult<PySmcResult> {
    dispatch!(model, ys, |m, y| smc_generic(m, &y, n, seed, proposal))
}

/// Run one particle Gibbs chain started from a filter draw.
#[pyfunction]
#[pyo3(signature = (model, ys, n, iterations, seed = 0, burn_in = 0, thin = 1, proposal = "bootstrap"))]
#[allow(clippy::too_many_arguments)]
fn run_pg(
    model: &Bound<'_, PyAny>,
    ys: &Bound<'_, PyAny>,
    n: usize,
    iterations: usize,
    seed: u64,
    burn_in: usize,
    thin: usize,
    proposal: &str,
) -> PyResult<PyPgChain> {
    dispatch!(model, ys, |m, y| pg_generic(m, &y, n, iterations, burn_in, thin, seed, proposal))
}

/// Minorization constant from the per-time bounds `b` and `n` particles.
#[pyfunction]
fn epsilon(b: Vec<f64>, n: usize) -> PyResult<f64> {
    mz::epsilon(&b, n).map_err(err)
}

/// Asymptotic floor on the minorization constant when `N` grows like `lambda * T`.
#[pyfunction]
#[pyo3(signature = (sigma_minus, sigma_plus, lam, proposal = "bootstrap", delta = 1.0, m = 1))]
fn strong_mixing_bound(sigma_minus: f64, sigma_plus: f64, lam: f64, proposal: &str, delta: f64, m: u32) -> PyResult<f64> {
    mz::strong_mixing_bound(kind(proposal)?, sigma_minus, sigma_plus, delta, m, lam).map_err(err)
}

/// Two-sample Kolmogorov-Smirnov test; returns `(statistic, p_value)`.
#[pyfunction]
fn ks_two_sample(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64)> {
    let r = pgkit::stats::ks_two_sample(&a, &b).map_err(err)?;
    Ok((r.statistic, r.p_value))
}

#[pymodule]
fn pgkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFiniteHmm>()?;
    m.add_class::<PyLgss>()?;
    m.add_class::<PyStochVol>()?;
    m.add_class::<PySmcResult>()?;
    m.add_class::<PyPgChain>()?;
    m.add_function(wrap_pyfunction!(run_smc, m)?)?;
    m.add_function(wrap_pyfunction!(run_pg, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(strong_mixing_bound, m)?)?;
    m.add_function(wrap_pyfunction!(ks_two_sample, m)?)?;
    Ok(())
}
