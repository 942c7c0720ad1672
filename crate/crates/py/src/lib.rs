//! Python bindings: coin, states, evolution, dispersion, packets, the
//! Wigner construction, and the identity audits.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use walkphase_core::report::ResidualReport;
use walkphase_core::walk;
use walkphase_core::wigner;

fn err<T>(r: walkphase_core::Result<T>) -> PyResult<T> {
    r.map_err(|e| PyValueError::new_err(e.to_string()))
}

fn report_dict(py: Python<'_>, r: &ResidualReport) -> PyResult<Py<PyDict>> {
    let d = PyDict::new(py);
    let entries = PyDict::new(py);
    for (k, v) in &r.entries {
        entries.set_item(k, *v)?;
    }
    d.set_item("entries", entries)?;
    d.set_item("exact", r.exact.clone())?;
    d.set_item("degenerate", r.degenerate.clone())?;
    d.set_item("notes", r.notes.clone())?;
    Ok(d.into())
}

/// The 2x2 coin mixing the (L, R) components.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Coin {
    inner: walk::CoinMatrix,
}

#[pymethods]
impl Coin {
    #[new]
    fn new(theta: f64) -> Self {
        Self {
            inner: walk::CoinMatrix::new(theta),
        }
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta()
    }

    fn matrix(&self) -> Vec<Vec<Complex64>> {
        self.inner.matrix().0.iter().map(|r| r.to_vec()).collect()
    }

    fn unitarity_defect(&self) -> f64 {
        self.inner.unitarity_defect()
    }

    fn det_defect(&self) -> f64 {
        self.inner.det_defect()
    }
}

/// Two complex components over N periodic sites.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct State {
    inner: walk::SpinorState,
}

#[pymethods]
impl State {
    #[new]
    fn new(l: Vec<Complex64>, r: Vec<Complex64>) -> PyResult<Self> {
        Ok(Self {
            inner: err(walk::SpinorState::new(l, r))?,
        })
    }

    #[getter]
    fn n_sites(&self) -> usize {
        self.inner.n_sites()
    }

    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    fn components(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        (
            self.inner.component(walk::Spin::L).to_vec(),
            self.inner.component(walk::Spin::R).to_vec(),
        )
    }
}

/// A stored trajectory of `steps` instants.
#[pyclass]
struct History {
    inner: walk::SpinorHistory,
}

#[pymethods]
impl History {
    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.n_steps()
    }

    #[getter]
    fn n_sites(&self) -> usize {
        self.inner.n_sites()
    }

    fn state(&self, j: usize) -> State {
        State {
            inner: self.inner.state(j).clone(),
        }
    }
}

/// One walk step `U T`.
#[pyfunction]
fn step(state: &State, coin: &Coin) -> State {
    State {
        inner: walk::step(&state.inner, &coin.inner),
    }
}

/// Iterates the walk for `steps` stored instants.
#[pyfunction]
fn evolve(initial: &State, coin: &Coin, steps: usize) -> PyResult<History> {
    Ok(History {
        inner: err(walk::evolve(&initial.inner, &coin.inner, steps))?,
    })
}

/// `(omega, chi_plus, chi_minus)` at momentum `k`: `cos omega = cos theta cos k`.
#[pyfunction]
fn dispersion(theta: f64, k: f64) -> (f64, Vec<Complex64>, Vec<Complex64>) {
    let d = walk::dispersion(theta, k);
    (d.omega, d.chi_plus.to_vec(), d.chi_minus.to_vec())
}

/// Group velocity of the positive branch.
#[pyfunction]
fn group_velocity(theta: f64, k: f64) -> f64 {
    walk::group_velocity(theta, k)
}

/// Unit-norm Gaussian packet state. `spin_mix = (angle, phase)` requests a
/// constant-spinor packet on both dispersion branches (Gaussian tails at any
/// coin angle); `None` builds a positive-branch packet.
#[pyfunction]
#[pyo3(signature = (n_sites, k0, sigma_k, theta, spin_mix=None, center=None, require_tail_clean=true))]
fn gaussian_packet(
    n_sites: usize,
    k0: f64,
    sigma_k: f64,
    theta: f64,
    spin_mix: Option<(f64, f64)>,
    center: Option<i64>,
    require_tail_clean: bool,
) -> PyResult<State> {
    let coin = walk::CoinMatrix::new(theta);
    let mut params = walk::PacketParams::new(n_sites, k0, sigma_k);
    if let Some((angle, phase)) = spin_mix {
        params.spin_mix = Some(walk::SpinMix { angle, phase });
    }
    if let Some(c) = center {
        params.center = c;
    }
    params.require_tail_clean = require_tail_clean;
    Ok(State {
        inner: err(walk::gaussian_packet(&params, &coin))?.initial_state(),
    })
}

/// Wigner field at base instant `j0` with half-window `m_t`: a dict with
/// `kj`, `kp` grids, `shape` (p, A, B, kj, kp), flat `data`, and the
/// spin-Hermiticity defect.
#[pyfunction]
fn wigner_field(py: Python<'_>, history: &History, j0: usize, m_t: usize) -> PyResult<Py<PyDict>> {
    let omega = err(wigner::build_omega(
        &history.inner,
        j0,
        m_t,
        wigner::Taper::None,
    ))?;
    let w = err(wigner::wigner_transform(&omega))?;
    let d = PyDict::new(py);
    d.set_item("kj", w.kj_grid().values().to_vec())?;
    d.set_item("kp", w.kp_grid().values().to_vec())?;
    d.set_item(
        "shape",
        (w.n_sites(), 2, 2, w.kj_grid().len(), w.kp_grid().len()),
    )?;
    d.set_item("data", w.data().iter().copied().collect::<Vec<Complex64>>())?;
    d.set_item("hermiticity_defect", w.hermiticity_defect())?;
    d.set_item("boundary_max", omega.boundary_max)?;
    d.set_item("wrap_mismatch", omega.wrap_mismatch)?;
    Ok(d.into())
}

/// Equation-of-motion audit of a trajectory (both mass-coefficient variants).
#[pyfunction]
fn eom_audit(py: Python<'_>, history: &History, coin: &Coin) -> PyResult<Py<PyDict>> {
    let r = err(walk::eom_residual(&history.inner, &coin.inner))?;
    report_dict(py, &r)
}

/// Real-space window-identity audit (printed vs corrected candidates).
#[pyfunction]
fn omega_identity_audit(
    py: Python<'_>,
    history: &History,
    j0: usize,
    m_t: usize,
) -> PyResult<Py<PyDict>> {
    let r = err(wigner::omega_derivative_audit(&history.inner, j0, m_t))?;
    report_dict(py, &r)
}

/// Grid-path transport audit over all sign/coefficient variants.
#[pyfunction]
fn transport_audit(
    py: Python<'_>,
    history: &History,
    j0: usize,
    m_t: usize,
    coin: &Coin,
) -> PyResult<Py<PyDict>> {
    let r = err(wigner::transport_audit(
        &history.inner,
        j0,
        m_t,
        &coin.inner,
    ))?;
    report_dict(py, &r)
}

/// Window-commensurate eigenmode: returns `(theta, omega, k, state)` whose
/// grid transport audit is machine-exact.
#[pyfunction]
fn commensurate_mode(
    n_sites: usize,
    m_t: usize,
    q_time: usize,
    q_space: i64,
) -> PyResult<(f64, f64, f64, State)> {
    let mode = err(wigner::commensurate_eigenmode(n_sites, m_t, q_time, q_space))?;
    Ok((
        mode.coin.theta(),
        mode.omega,
        mode.k,
        State {
            inner: mode.packet.initial_state(),
        },
    ))
}

/// Name of the transport variant the audits single out.
#[pyfunction]
fn audited_variant() -> &'static str {
    wigner::AUDIT_VARIANT
}

#[pymodule]
fn walkphase(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Coin>()?;
    m.add_class::<State>()?;
    m.add_class::<History>()?;
    m.add_function(wrap_pyfunction!(step, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(dispersion, m)?)?;
    m.add_function(wrap_pyfunction!(group_velocity, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_packet, m)?)?;
    m.add_function(wrap_pyfunction!(wigner_field, m)?)?;
    m.add_function(wrap_pyfunction!(eom_audit, m)?)?;
    m.add_function(wrap_pyfunction!(omega_identity_audit, m)?)?;
    m.add_function(wrap_pyfunction!(transport_audit, m)?)?;
    m.add_function(wrap_pyfunction!(commensurate_mode, m)?)?;
    m.add_function(wrap_pyfunction!(audited_variant, m)?)?;
    Ok(())
}
