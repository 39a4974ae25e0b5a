//! Python bindings: leg and body simulation, closed-loop MPC, the
//! perturbation suite, trajectory metrics and the QP solver.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use softquad_core::body::whole_body_simulate;
use softquad_core::config::Settings;
use softquad_core::gait::{GaitKind, STATE_DIM};
use softquad_core::harness::{self, PerturbationScenario, ScenarioKind};
use softquad_core::leg::{ForceAngleMap, TendonSchedule};
use softquad_core::mpc::MpcController;
use softquad_core::qp::{self, QuadraticProgram};
use softquad_core::{rod, Error};

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::Dimension(_)
        | Error::IndexOutOfRange { .. }
        | Error::Parse(_) => PyValueError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn settings(config: Option<PathBuf>, gait: Option<&str>) -> PyResult<Settings> {
    let mut s = Settings::load(config.as_deref()).map_err(py_err)?;
    if let Some(g) = gait {
        s.gait = GaitKind::parse(g).map_err(py_err)?;
    }
    Ok(s)
}

fn positive(d: f64) -> PyResult<f64> {
    if d > 0.0 && d.is_finite() {
        Ok(d)
    } else {
        Err(PyValueError::new_err(format!("duration must be positive, got {d}")))
    }
}

/// Single leg on a fixed stand under one tendon pulse.
#[pyfunction]
#[pyo3(signature = (duration=None, stride=10, config=None))]
fn simulate_leg(
    py: Python<'_>,
    duration: Option<f64>,
    stride: usize,
    config: Option<PathBuf>,
) -> PyResult<Py<PyDict>> {
    let s = settings(config, None)?;
    let d = positive(duration.unwrap_or(s.tendon.duration()))?;
    let traj = rod::simulate_leg(&s.leg, &TendonSchedule::single(s.tendon), d, stride).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("t", traj.frames.iter().map(|f| f.t).collect::<Vec<_>>())?;
    out.set_item("tip_z", traj.tip_z().into_iter().map(|p| p.1).collect::<Vec<_>>())?;
    out.set_item("tension", traj.frames.iter().map(|f| f.tension).collect::<Vec<_>>())?;
    out.set_item("reaction_fz", traj.frames.iter().map(|f| f.reaction.fz).collect::<Vec<_>>())?;
    Ok(out.unbind())
}

/// Open-loop whole body driven by the gait tendon schedule.
#[pyfunction]
#[pyo3(signature = (duration=5.0, gait=None, config=None))]
fn simulate_body(
    py: Python<'_>,
    duration: f64,
    gait: Option<&str>,
    config: Option<PathBuf>,
) -> PyResult<Py<PyDict>> {
    let s = settings(config, gait)?;
    let traj = whole_body_simulate(&s.robot, &s.gait_schedule().tendon_schedules(), positive(duration)?)
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("t", traj.samples.iter().map(|x| x.t).collect::<Vec<_>>())?;
    out.set_item("p", traj.samples.iter().map(|x| x.torso.p.to_vec()).collect::<Vec<_>>())?;
    out.set_item("euler", traj.samples.iter().map(|x| x.torso.euler.to_vec()).collect::<Vec<_>>())?;
    out.set_item("normals", traj.samples.iter().map(|x| x.normals.to_vec()).collect::<Vec<_>>())?;
    Ok(out.unbind())
}

/// Closed-loop MPC on the rod plant.
#[pyfunction]
#[pyo3(signature = (duration=5.0, gait=None, config=None))]
fn run_mpc(py: Python<'_>, duration: f64, gait: Option<&str>, config: Option<PathBuf>) -> PyResult<Py<PyDict>> {
    let s = settings(config, gait)?;
    let run = harness::run_closed_loop(&s.robot, &s.gait_schedule(), &s.command(), &s.mpc, positive(duration)?)
        .map_err(py_err)?;
    let out = PyDict::new(py);
    let samples = &run.trajectory.samples;
    out.set_item("t", samples.iter().map(|x| x.t).collect::<Vec<_>>())?;
    out.set_item("p", samples.iter().map(|x| x.torso.p.to_vec()).collect::<Vec<_>>())?;
    out.set_item("v", samples.iter().map(|x| x.torso.v.to_vec()).collect::<Vec<_>>())?;
    out.set_item("cost", run.telemetry.rows.iter().map(|r| r.cost).collect::<Vec<_>>())?;
    out.set_item("forces", run.telemetry.rows.iter().map(|r| r.u.to_vec()).collect::<Vec<_>>())?;
    out.set_item("feasible", run.dcm.total.clone())?;
    out.set_item("infeasible_ticks", run.dcm.infeasible_count())?;
    Ok(out.unbind())
}

/// Perturbation study; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (seed=0, duration=None, config=None))]
fn perturb_suite(seed: u64, duration: Option<f64>, config: Option<PathBuf>) -> PyResult<String> {
    let s = settings(config, None)?;
    let d = positive(duration.unwrap_or(s.suite_duration))?;
    let scenarios: Vec<_> = ScenarioKind::ALL
        .into_iter()
        .map(|k| {
            let mut p = PerturbationScenario::preset(k);
            p.duration = d;
            if k == ScenarioKind::Noise {
                p.noise_sigma = s.noise_sigma;
            }
            p
        })
        .collect();
    let mut suite = s.suite;
    suite.seed = seed;
    let report = harness::run_perturbation_suite(&scenarios, &s.robot, &s.gait_schedule(), &s.command(), &s.mpc, &suite)
        .map_err(py_err)?;
    report.to_json().map_err(py_err)
}

/// RMSE, MAE, NRMSE and accuracy of `measured` against `reference`.
#[pyfunction]
fn compute_metrics(py: Python<'_>, reference: Vec<f64>, measured: Vec<f64>) -> PyResult<Py<PyDict>> {
    let m = harness::compute_metrics(&reference, &measured).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("rmse", m.rmse)?;
    out.set_item("mae", m.mae)?;
    out.set_item("nrmse", m.nrmse)?;
    out.set_item("avg_error", m.avg_error)?;
    out.set_item("error_pct", m.error_pct)?;
    out.set_item("accuracy", m.accuracy)?;
    Ok(out.unbind())
}

/// Servo angle (deg) for a commanded vertical force (N).
#[pyfunction]
fn force_to_angle(f_z: f64) -> PyResult<f64> {
    ForceAngleMap::default().force_to_angle(f_z).map_err(py_err)
}

/// Vertical force (N) for a servo angle (deg).
#[pyfunction]
fn angle_to_force(theta: f64) -> PyResult<f64> {
    ForceAngleMap::default().angle_to_force(theta).map_err(py_err)
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err(format!("{what} rows differ in length")));
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

/// Solves min 1/2 x'Px + q'x subject to l <= Ax <= u.
#[pyfunction]
#[pyo3(signature = (p, q, a, l, u, eps_abs=1e-6, eps_rel=1e-6, max_iter=4000))]
#[allow(clippy::too_many_arguments)]
fn solve_qp(
    py: Python<'_>,
    p: Vec<Vec<f64>>,
    q: Vec<f64>,
    a: Vec<Vec<f64>>,
    l: Vec<f64>,
    u: Vec<f64>,
    eps_abs: f64,
    eps_rel: f64,
    max_iter: usize,
) -> PyResult<Py<PyDict>> {
    let prob = QuadraticProgram::new(
        matrix(&p, "P")?,
        DVector::from_vec(q),
        matrix(&a, "A")?,
        DVector::from_vec(l),
        DVector::from_vec(u),
    )
    .map_err(py_err)?;
    let sol = qp::solve(&prob, eps_abs, eps_rel, max_iter).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("x", sol.x.as_slice().to_vec())?;
    out.set_item("y", sol.y.as_slice().to_vec())?;
    out.set_item("status", format!("{:?}", sol.status))?;
    out.set_item("objective", sol.objective)?;
    out.set_item("iterations", sol.iterations)?;
    Ok(out.unbind())
}

/// Receding-horizon force controller on the rigid torso model.
#[pyclass(name = "Mpc", unsendable)]
struct PyMpc {
    inner: MpcController,
}

#[pymethods]
impl PyMpc {
    #[new]
    #[pyo3(signature = (gait=None, config=None))]
    fn new(gait: Option<&str>, config: Option<PathBuf>) -> PyResult<Self> {
        let s = settings(config, gait)?;
        let inner = MpcController::new(
            s.mpc.clone(),
            s.gait_schedule(),
            s.command(),
            harness::prediction_body(&s.robot),
        )
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    /// One solve from state `x` (13 entries) with feet relative to the CoM.
    fn solve_step(&mut self, py: Python<'_>, t: f64, x: Vec<f64>, feet: Vec<[f64; 3]>) -> PyResult<Py<PyDict>> {
        let x: [f64; STATE_DIM] = x
            .try_into()
            .map_err(|v: Vec<f64>| PyValueError::new_err(format!("state needs {STATE_DIM} entries, got {}", v.len())))?;
        let feet: [[f64; 3]; 4] = feet
            .try_into()
            .map_err(|v: Vec<[f64; 3]>| PyValueError::new_err(format!("need 4 feet, got {}", v.len())))?;
        let sol = self.inner.solve_step(t, &x, &feet).map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("u", sol.u.to_vec())?;
        out.set_item("feasible", sol.feasible.total)?;
        out.set_item("legs", sol.feasible.legs.to_vec())?;
        out.set_item("solved", sol.solved)?;
        out.set_item("cost", sol.cost)?;
        out.set_item("mu", sol.mu.to_vec())?;
        Ok(out.unbind())
    }

    #[getter]
    fn last_feasible(&self) -> Vec<f64> {
        self.inner.last_feasible().to_vec()
    }
}

#[pymodule]
fn softquad(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate_leg, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_body, m)?)?;
    m.add_function(wrap_pyfunction!(run_mpc, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_suite, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(force_to_angle, m)?)?;
    m.add_function(wrap_pyfunction!(angle_to_force, m)?)?;
    m.add_function(wrap_pyfunction!(solve_qp, m)?)?;
    m.add_class::<PyMpc>()?;
    Ok(())
}
