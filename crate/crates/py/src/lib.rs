//! Python bindings: the main types (spectrum, scenario, nonlinearity,
//! manifold graph) and the operations the experiments are built from.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use levy_manifold::dynamics;
use levy_manifold::manifold;
use levy_manifold::metrics;
use levy_manifold::noise;
use levy_manifold::ou;
use levy_manifold::spectral;
use levy_manifold::state::StateVec;

fn err(e: levy_manifold::Error) -> PyErr {
    use levy_manifold::Error as E;
    match e {
        E::GapViolation(_) | E::Numerical(_) | E::Divergence { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// `C(alpha)`, the intensity-measure constant of the driving jump measure.
#[pyfunction]
fn levy_intensity_constant(alpha: f64) -> PyResult<f64> {
    noise::levy_intensity_constant(alpha).map_err(err)
}

/// `C(alpha) / (2 - alpha)`, which tends to 1 as `alpha -> 2`.
#[pyfunction]
fn intensity_ratio(alpha: f64) -> PyResult<f64> {
    noise::intensity_ratio(alpha).map_err(err)
}

/// The Henry series `E_sigma(x) = sum x^{n(1-sigma)} / Gamma(n(1-sigma)+1)`.
#[pyfunction]
fn e_sigma(sigma: f64, x: f64) -> PyResult<f64> {
    spectral::e_sigma_series(sigma, x).map_err(err)
}

/// Eigenvalues of the diagonal operator with the split index and sigma.
#[pyclass(name = "Spectrum")]
#[derive(Clone)]
struct PySpectrum {
    inner: spectral::Spectrum,
}

#[pymethods]
impl PySpectrum {
    /// Power family `lambda_k = k^power`, `k = 1..=count`.
    #[new]
    #[pyo3(signature = (power=2.0, count=8, split=2, sigma=0.0))]
    fn new(power: f64, count: usize, split: usize, sigma: f64) -> PyResult<Self> {
        Ok(Self {
            inner: spectral::Spectrum::power_family(power, count, split, sigma).map_err(err)?,
        })
    }

    #[staticmethod]
    fn explicit(eigenvalues: Vec<f64>, split: usize, sigma: f64) -> PyResult<Self> {
        Ok(Self {
            inner: spectral::Spectrum::new(eigenvalues, split, sigma).map_err(err)?,
        })
    }

    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.inner.lambdas().to_vec()
    }

    #[getter]
    fn split(&self) -> usize {
        self.inner.split()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    fn sigma_norm(&self, coeffs: Vec<f64>) -> f64 {
        self.inner.sigma_norm(&StateVec::new(coeffs))
    }

    /// Spectral gap check; returns a GapReport.
    fn check_gap(&self, lipschitz: f64, mu: f64) -> PyResult<PyGapReport> {
        Ok(PyGapReport {
            inner: self.inner.check_gap(lipschitz, mu).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Spectrum(K={}, N={}, sigma={})",
            self.inner.count(),
            self.inner.split(),
            self.inner.sigma()
        )
    }
}

#[pyclass(name = "GapReport")]
struct PyGapReport {
    inner: spectral::GapReport,
}

#[pymethods]
impl PyGapReport {
    #[getter]
    fn lhs(&self) -> f64 {
        self.inner.lhs
    }
    #[getter]
    fn rhs(&self) -> f64 {
        self.inner.rhs
    }
    #[getter]
    fn satisfied(&self) -> bool {
        self.inner.satisfied
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }
    #[getter]
    fn margin(&self) -> f64 {
        self.inner.margin
    }
    #[getter]
    fn contraction_bound(&self) -> f64 {
        self.inner.contraction_bound
    }

    fn __repr__(&self) -> String {
        format!(
            "GapReport(satisfied={}, margin={}, beta={})",
            self.inner.satisfied, self.inner.margin, self.inner.beta
        )
    }
}

/// Nonlinearity presets with certified Lipschitz constants.
#[pyclass(name = "Nonlinearity")]
#[derive(Clone)]
struct PyNonlinearity {
    inner: dynamics::Nonlinearity,
}

#[pymethods]
impl PyNonlinearity {
    #[staticmethod]
    fn zero() -> Self {
        Self {
            inner: dynamics::Nonlinearity::Zero,
        }
    }

    #[staticmethod]
    fn linear_diagonal(eps: f64) -> Self {
        Self {
            inner: dynamics::Nonlinearity::LinearDiagonal { eps },
        }
    }

    /// `F(u) = eps u_from e_to` with 1-based mode indices.
    #[staticmethod]
    fn cross_couple(eps: f64, from: usize, to: usize) -> PyResult<Self> {
        if from == 0 || to == 0 {
            return Err(PyValueError::new_err("mode indices are 1-based"));
        }
        Ok(Self {
            inner: dynamics::Nonlinearity::CrossCouple {
                eps,
                from: from - 1,
                to: to - 1,
            },
        })
    }

    #[staticmethod]
    fn saturating(eps: f64) -> Self {
        Self {
            inner: dynamics::Nonlinearity::Saturating { eps },
        }
    }

    fn lipschitz(&self, spectrum: &PySpectrum) -> f64 {
        self.inner.lipschitz(&spectrum.inner)
    }

    fn eval(&self, u: Vec<f64>) -> Vec<f64> {
        self.inner.eval(&StateVec::new(u)).coeffs().to_vec()
    }
}

/// One coupled noise realization `(W, S, L = W(S))`.
#[pyclass(name = "Scenario")]
#[derive(Clone)]
struct PyScenario {
    inner: noise::NoiseScenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (alpha, seed, t_min=-50.0, t_max=10.0, mesh=0.0009765625))]
    fn new(alpha: f64, seed: u64, t_min: f64, t_max: f64, mesh: f64) -> PyResult<Self> {
        Ok(Self {
            inner: noise::NoiseScenario::generate(alpha, seed, t_min, t_max, mesh).map_err(err)?,
        })
    }

    /// Deterministic zero-noise scenario.
    #[staticmethod]
    fn zero(t_min: f64, t_max: f64, mesh: f64) -> PyResult<Self> {
        Ok(Self {
            inner: noise::NoiseScenario::zero(t_min, t_max, mesh).map_err(err)?,
        })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn brownian(&self, t: f64) -> PyResult<f64> {
        self.inner.brownian.try_value_at(t).map_err(err)
    }

    fn subordinator(&self, t: f64) -> PyResult<f64> {
        match &self.inner.subordinator {
            Some(s) => s.try_value_at(t).map_err(err),
            None => Ok(t), // identity time change at alpha = 2
        }
    }

    fn subordinated(&self, t: f64) -> PyResult<f64> {
        self.inner.subordinated.try_value_at(t).map_err(err)
    }

    /// Stationary OU value `z(theta_t w)` with its tail bound.
    #[pyo3(signature = (t, tail=40.0))]
    fn stationary_z(&self, t: f64, tail: f64) -> PyResult<(f64, f64)> {
        let z = ou::stationary_z(self.inner.driving_path(), t, tail).map_err(err)?;
        Ok((z.value, z.tail_bound))
    }

    /// `sup_{[lo, hi]} |L - W|` of this scenario's coupled pair.
    fn coupling_distance(&self, lo: f64, hi: f64) -> PyResult<f64> {
        metrics::uniform_distance(&self.inner.subordinated, &self.inner.brownian, lo, hi)
            .map_err(err)
    }

    /// J1 upper bound against the Brownian path on a window.
    #[pyo3(signature = (lo, hi, budget=256))]
    fn j1_upper(&self, lo: f64, hi: f64, budget: usize) -> PyResult<(f64, f64)> {
        let rep = metrics::j1_distance_upper(
            &self.inner.subordinated,
            &self.inner.brownian,
            lo,
            hi,
            budget,
        )
        .map_err(err)?;
        Ok((rep.d_uniform, rep.d_j1_upper))
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(alpha={}, seed={}, horizon=[{}, {}])",
            self.inner.alpha, self.inner.seed, self.inner.t_min, self.inner.t_max
        )
    }
}

/// Integrate the conjugated equation; returns `(times, states)` with
/// `states[i]` the coefficient list at `times[i]`.
#[pyfunction]
#[pyo3(signature = (scenario, spectrum, nonlinearity, x, t_final, dt, tail=40.0))]
fn integrate(
    scenario: &PyScenario,
    spectrum: &PySpectrum,
    nonlinearity: &PyNonlinearity,
    x: Vec<f64>,
    t_final: f64,
    dt: f64,
    tail: f64,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let traj = dynamics::integrate(
        &scenario.inner,
        &spectrum.inner,
        &nonlinearity.inner,
        &StateVec::new(x),
        t_final,
        dt,
        tail,
    )
    .map_err(err)?;
    Ok((
        traj.times,
        traj.states.iter().map(|s| s.coeffs().to_vec()).collect(),
    ))
}

/// The Lyapunov-Perron graph evaluator bound to one scenario.
#[pyclass(name = "ManifoldGraph")]
struct PyManifoldGraph {
    inner: manifold::ManifoldGraph,
}

#[pymethods]
impl PyManifoldGraph {
    #[new]
    #[pyo3(signature = (scenario, spectrum, nonlinearity, mu=0.9, t_minus=0.0, tol_fp=1e-10))]
    fn new(
        scenario: &PyScenario,
        spectrum: &PySpectrum,
        nonlinearity: &PyNonlinearity,
        mu: f64,
        t_minus: f64,
        tol_fp: f64,
    ) -> PyResult<Self> {
        let params = manifold::SolverParams {
            mu,
            t_minus,
            tol_fp,
            ..manifold::SolverParams::default()
        };
        Ok(Self {
            inner: manifold::ManifoldGraph::new(
                scenario.inner.clone(),
                spectrum.inner.clone(),
                nonlinearity.inner.clone(),
                params,
            )
            .map_err(err)?,
        })
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta()
    }

    #[getter]
    fn t_minus(&self) -> f64 {
        self.inner.t_minus()
    }

    /// `psi(w, xi)`: full coefficient vector with the Q block filled in.
    fn psi(&self, xi: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .psi(&StateVec::new(xi))
            .map_err(err)?
            .coeffs()
            .to_vec())
    }

    /// Graph of the original equation: `e^{z} psi(e^{-z} xi)`.
    fn psi_original(&self, xi: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .psi_original(0.0, &StateVec::new(xi))
            .map_err(err)?
            .coeffs()
            .to_vec())
    }

    /// Columns of `D_xi psi` (one per P mode).
    fn d_psi(&self, xi: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self
            .inner
            .d_psi(&StateVec::new(xi))
            .map_err(err)?
            .cols
            .iter()
            .map(|c| c.coeffs().to_vec())
            .collect())
    }

    /// Defect series `(times, defects, log_slope)` of a forward trajectory.
    #[pyo3(signature = (x, t_final, anchor_step=0.125, dt=0.0009765625))]
    fn tracking_defect(
        &self,
        x: Vec<f64>,
        t_final: f64,
        anchor_step: f64,
        dt: f64,
    ) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
        let series = self
            .inner
            .tracking_defect(&StateVec::new(x), t_final, anchor_step, dt)
            .map_err(err)?;
        Ok((series.times, series.defects, series.log_slope))
    }

    /// Shadow point on the manifold whose trajectory tracks that of `x`.
    fn forward_track(&self, x: Vec<f64>, t_plus: f64) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .forward_track_solve(&StateVec::new(x), t_plus)
            .map_err(err)?
            .shadow
            .coeffs()
            .to_vec())
    }
}

#[pymodule]
fn levy_manifold_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(levy_intensity_constant, m)?)?;
    m.add_function(wrap_pyfunction!(intensity_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(e_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_class::<PySpectrum>()?;
    m.add_class::<PyGapReport>()?;
    m.add_class::<PyNonlinearity>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyManifoldGraph>()?;
    Ok(())
}
