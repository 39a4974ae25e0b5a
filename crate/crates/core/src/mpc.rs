//! Convex MPC over per-leg ground reaction forces.
//!
//! The torso is modelled as a single rigid body with the gravity-augmented
//! 13-entry state `[roll, pitch, yaw, p, omega, v, g_z]`. The prediction
//! is condensed over the horizon so the only decision variables are the
//! twelve force components of each stage.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::{LegId, TorsoBody};
use crate::error::{Error, Result};
use crate::gait::{idx, reference_trajectory, GaitSchedule, ReferenceCommand, STATE_DIM};
use crate::leg::ForceAngleMap;
use crate::qp::{QpSettings, QpSolver, QpStatus, QuadraticProgram};

pub type StateVec = SMatrix<f64, STATE_DIM, 1>;
pub type StateMat = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMat = SMatrix<f64, STATE_DIM, 12>;

/// Number of force components per stage.
pub const INPUT_DIM: usize = 12;
/// Constraint rows per stage: 4 force bounds, 1 equality, 16 friction.
const ROWS_PER_STAGE: usize = 21;
/// Tolerances used when flagging an applied input as feasible.
pub const SUM_TOL: f64 = 1e-4;
pub const BOUND_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    #[default]
    ForwardEuler,
    ZeroOrderHold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Diagonal of Q.
    pub q: [f64; STATE_DIM],
    /// Diagonal value of R.
    pub r: f64,
    pub f_max: f64,
    /// Mass whose weight the legs must carry (kg).
    pub total_mass: f64,
    pub gravity: f64,
    pub discretization: Discretization,
    pub solver: QpSettings,
}

/// Tracking weights, order roll, pitch, yaw, p, omega, v, g_z.
pub const DEFAULT_Q: [f64; STATE_DIM] = [
    0.1e-3, 0.1e-3, 0.1e-3, 0.0, 0.0, 100e-3, 0.01e-3, 0.01e-3, 0.01e-3, 20e-3, 0.1e-3, 0.0, 0.0,
];

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            dt: 0.033,
            q: DEFAULT_Q,
            r: 1e-8,
            f_max: 6.0,
            total_mass: 2.16,
            gravity: crate::rod::GRAVITY,
            discretization: Discretization::ForwardEuler,
            // the weight equality is checked to 1e-4 N on a ~21 N scale
            solver: QpSettings {
                eps_abs: 1e-7,
                eps_rel: 1e-7,
                ..QpSettings::default()
            },
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("MPC dt must be positive".into()));
        }
        if self.q.iter().any(|v| !(*v >= 0.0)) || !(self.r >= 0.0) {
            return Err(Error::Config("Q and R must be nonnegative".into()));
        }
        if !(self.f_max > 0.0 && self.total_mass > 0.0) {
            return Err(Error::Config("f_max and total_mass must be positive".into()));
        }
        Ok(())
    }

    /// Required total vertical force `m g`.
    pub fn weight(&self) -> f64 {
        self.total_mass * self.gravity
    }
}

fn skew(r: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0)
}

/// Continuous-time model about `x`.
fn continuous(x: &StateVec, body: &TorsoBody, feet: &[[f64; 3]; 4]) -> Result<(StateMat, InputMat)> {
    let yaw = x[idx::YAW];
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    let world_i = body.world_inertia(&rz);
    let inv = world_i
        .try_inverse()
        .ok_or_else(|| Error::Config("singular torso inertia".into()))?;
    let mut a = StateMat::zeros();
    a.fixed_view_mut::<3, 3>(0, 6).copy_from(&rz.matrix().transpose());
    a.fixed_view_mut::<3, 3>(3, 9).copy_from(&Matrix3::identity());
    a[(idx::VZ, idx::G)] = 1.0;
    let mut b = InputMat::zeros();
    for (i, r) in feet.iter().enumerate() {
        let rv = Vector3::from(*r);
        b.fixed_view_mut::<3, 3>(6, 3 * i).copy_from(&(inv * skew(&rv)));
        b.fixed_view_mut::<3, 3>(9, 3 * i)
            .copy_from(&(Matrix3::identity() / body.mass));
    }
    Ok((a, b))
}

/// Forward-Euler discretisation `A_d = I + A dt`, `B_d = B dt`. Foot
/// positions are relative to the CoM in world axes.
pub fn linearize(
    x: &StateVec,
    body: &TorsoBody,
    feet: &[[f64; 3]; 4],
    dt: f64,
) -> Result<(StateMat, InputMat)> {
    body.validate()?;
    let (a, b) = continuous(x, body, feet)?;
    Ok((StateMat::identity() + a * dt, b * dt))
}

/// Exact zero-order-hold discretisation.
pub fn linearize_zoh(
    x: &StateVec,
    body: &TorsoBody,
    feet: &[[f64; 3]; 4],
    dt: f64,
) -> Result<(StateMat, InputMat)> {
    body.validate()?;
    let (a, b) = continuous(x, body, feet)?;
    let n = STATE_DIM + INPUT_DIM;
    let mut m = DMatrix::zeros(n, n);
    m.view_mut((0, 0), (STATE_DIM, STATE_DIM)).copy_from(&(a * dt));
    m.view_mut((0, STATE_DIM), (STATE_DIM, INPUT_DIM)).copy_from(&(b * dt));
    let e = m.exp();
    Ok((
        e.fixed_view::<STATE_DIM, STATE_DIM>(0, 0).into_owned(),
        e.fixed_view::<STATE_DIM, INPUT_DIM>(0, STATE_DIM).into_owned(),
    ))
}

/// Per-stage leg data: friction coefficient and force cap per leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageLimits {
    pub mu: [f64; 4],
    pub fz_max: [f64; 4],
}

impl StageLimits {
    pub fn from_gait(gait: &GaitSchedule, t: f64, f_max: f64) -> Self {
        let info = gait.phase_at(t);
        Self {
            mu: info.phase.mu,
            fz_max: LegId::ALL.map(|leg| if info.is_swing(leg) { 0.0 } else { f_max }),
        }
    }
}

/// `(x_ref - x)' Q (x_ref - x)` with diagonal `Q`.
pub fn stage_cost(x: &[f64; STATE_DIM], x_ref: &[f64; STATE_DIM], q: &[f64; STATE_DIM]) -> f64 {
    (0..STATE_DIM).map(|i| q[i] * (x[i] - x_ref[i]).powi(2)).sum()
}

/// Condensed QP over the stacked inputs of all stages.
pub fn build_qp(
    x0: &StateVec,
    refs: &[[f64; STATE_DIM]],
    a: &StateMat,
    b: &InputMat,
    config: &MpcConfig,
    limits: &[StageLimits],
) -> Result<QuadraticProgram> {
    let h = config.horizon;
    if refs.len() != h || limits.len() != h {
        return Err(Error::Dimension(format!(
            "horizon {h} but {} references and {} stage limits",
            refs.len(),
            limits.len()
        )));
    }
    let nu = INPUT_DIM * h;
    let ns = STATE_DIM * h;
    // prediction X = Sx x0 + Su U with X = [x_1 .. x_H]
    let mut powers = Vec::with_capacity(h + 1);
    powers.push(StateMat::identity());
    for k in 1..=h {
        powers.push(a * powers[k - 1]);
    }
    let mut su = DMatrix::zeros(ns, nu);
    let mut free = DVector::zeros(ns);
    for j in 0..h {
        free.rows_mut(j * STATE_DIM, STATE_DIM).copy_from(&(powers[j + 1] * x0));
        for i in 0..=j {
            let blk = powers[j - i] * b;
            su.view_mut((j * STATE_DIM, i * INPUT_DIM), (STATE_DIM, INPUT_DIM))
                .copy_from(&blk);
        }
    }
    let qd = DVector::from_fn(ns, |r, _| config.q[r % STATE_DIM]);
    let r_ref = DVector::from_fn(ns, |r, _| refs[r / STATE_DIM][r % STATE_DIM]);
    let err = &free - &r_ref;
    // Su' Q
    let mut suq = su.transpose();
    for c in 0..ns {
        let w = qd[c];
        suq.column_mut(c).scale_mut(w);
    }
    let mut p = &suq * &su * 2.0;
    for i in 0..nu {
        p[(i, i)] += 2.0 * config.r;
    }
    // symmetrise against rounding
    let p = (&p + p.transpose()) * 0.5;
    let q = &suq * &err * 2.0;

    let m = ROWS_PER_STAGE * h;
    let mut am = DMatrix::zeros(m, nu);
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    let weight = config.weight();
    for (k, lim) in limits.iter().enumerate().take(h) {
        let row0 = k * ROWS_PER_STAGE;
        let col0 = k * INPUT_DIM;
        for leg in 0..4 {
            let (fx, fy, fz) = (col0 + 3 * leg, col0 + 3 * leg + 1, col0 + 3 * leg + 2);
            let r = row0 + leg;
            am[(r, fz)] = 1.0;
            l[r] = 0.0;
            u[r] = lim.fz_max[leg];
            let mu = lim.mu[leg];
            for (j, (col, sign)) in [(fx, 1.0), (fx, -1.0), (fy, 1.0), (fy, -1.0)].into_iter().enumerate() {
                let r = row0 + 5 + 4 * leg + j;
                am[(r, col)] = sign;
                am[(r, fz)] = -mu;
                l[r] = f64::NEG_INFINITY;
                u[r] = 0.0;
            }
        }
        let r = row0 + 4;
        for leg in 0..4 {
            am[(r, col0 + 3 * leg + 2)] = 1.0;
        }
        l[r] = weight;
        u[r] = weight;
    }
    QuadraticProgram::new(p, q, am, l, u)
}

/// Constraint status of one applied input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Feasibility {
    pub legs: [bool; 4],
    pub total: bool,
}

/// Checks the force bounds and friction of each leg and the weight equality.
pub fn check_input(u: &[f64; INPUT_DIM], limits: &StageLimits, weight: f64) -> Feasibility {
    let legs = std::array::from_fn(|i| {
        let (fx, fy, fz) = (u[3 * i], u[3 * i + 1], u[3 * i + 2]);
        let bound = fz * limits.mu[i] + BOUND_TOL;
        fz >= -BOUND_TOL && fz <= limits.fz_max[i] + BOUND_TOL && fx.abs() <= bound && fy.abs() <= bound
    });
    let sum: f64 = (0..4).map(|i| u[3 * i + 2]).sum();
    let total = legs.iter().all(|l| *l) && (sum - weight).abs() <= SUM_TOL;
    Feasibility { legs, total }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcSolution {
    pub u: [f64; INPUT_DIM],
    pub feasible: Feasibility,
    /// Whether the solver produced this input (false: cached input reused).
    pub solved: bool,
    pub status: QpStatus,
    pub iterations: usize,
    /// Stage cost of the current state against the current reference.
    pub cost: f64,
    /// Friction coefficients in force this tick.
    pub mu: [f64; 4],
}

/// Servo angles for the vertical force commands.
pub fn force_commands_to_angles(u: &[f64; INPUT_DIM], map: &ForceAngleMap) -> [f64; 4] {
    std::array::from_fn(|i| {
        map.force_to_angle(u[3 * i + 2].max(0.0))
            .expect("nonnegative force is always accepted")
    })
}

/// Receding-horizon controller with a cached last feasible input.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub config: MpcConfig,
    pub gait: GaitSchedule,
    pub command: ReferenceCommand,
    /// Torso model used for prediction (mass = translational mass).
    pub body: TorsoBody,
    solver: QpSolver,
    last_feasible: [f64; INPUT_DIM],
    plan: Vec<[f64; INPUT_DIM]>,
    warm: Option<(DVector<f64>, DVector<f64>)>,
}

impl MpcController {
    pub fn new(config: MpcConfig, gait: GaitSchedule, command: ReferenceCommand, body: TorsoBody) -> Result<Self> {
        config.validate()?;
        gait.validate()?;
        command.validate()?;
        let solver = QpSolver::new(config.solver);
        // uniform stance distribution to start
        let info = gait.phase_at(0.0);
        let stance: Vec<usize> = LegId::ALL
            .iter()
            .filter(|l| !info.is_swing(**l))
            .map(|l| l.index())
            .collect();
        let mut last = [0.0; INPUT_DIM];
        for &i in &stance {
            last[3 * i + 2] = config.weight() / stance.len().max(1) as f64;
        }
        Ok(Self {
            config,
            gait,
            command,
            body,
            solver,
            last_feasible: last,
            plan: vec![last],
            warm: None,
        })
    }

    pub fn last_feasible(&self) -> [f64; INPUT_DIM] {
        self.last_feasible
    }

    /// Stage inputs of the last successful solve (the cached input
    /// before the first one).
    pub fn plan(&self) -> &[[f64; INPUT_DIM]] {
        &self.plan
    }

    /// Number of KKT factorisations so far.
    pub fn factorizations(&self) -> usize {
        self.solver.factorizations
    }

    pub fn limits(&self, t: f64) -> Vec<StageLimits> {
        (0..self.config.horizon)
            .map(|k| StageLimits::from_gait(&self.gait, t + k as f64 * self.config.dt, self.config.f_max))
            .collect()
    }

    /// Solves the tick at time `t` from state `x` with feet relative to the CoM.
    pub fn solve_step(&mut self, t: f64, x: &[f64; STATE_DIM], feet: &[[f64; 3]; 4]) -> Result<MpcSolution> {
        let cfg = &self.config;
        let xv = StateVec::from_column_slice(x);
        let (a, b) = match cfg.discretization {
            Discretization::ForwardEuler => linearize(&xv, &self.body, feet, cfg.dt)?,
            Discretization::ZeroOrderHold => linearize_zoh(&xv, &self.body, feet, cfg.dt)?,
        };
        let refs = reference_trajectory(&self.command, t + cfg.dt, cfg.horizon, cfg.dt)?;
        let limits = self.limits(t);
        let qp = build_qp(&xv, &refs, &a, &b, cfg, &limits)?;
        let warm = self.warm.take();
        let sol = match &warm {
            Some((x0, y0)) => self.solver.solve_warm(&qp, Some(x0), Some(y0))?,
            None => self.solver.solve(&qp)?,
        };
        let cost = stage_cost(x, &self.command.state_at(t), &cfg.q);
        let weight = cfg.weight();
        let mut solved = false;
        let mut u = self.last_feasible;
        if sol.status == QpStatus::Solved {
            let mut cand = [0.0; INPUT_DIM];
            cand.copy_from_slice(&sol.x.as_slice()[..INPUT_DIM]);
            if check_input(&cand, &limits[0], weight).total {
                u = cand;
                solved = true;
                self.last_feasible = cand;
                self.plan = sol
                    .x
                    .as_slice()
                    .chunks_exact(INPUT_DIM)
                    .map(|c| c.try_into().expect("exact chunk"))
                    .collect();
                self.warm = Some(shift(&sol.x, &sol.y, cfg.horizon));
            }
        }
        let feasible = check_input(&u, &limits[0], weight);
        let feasible = Feasibility {
            legs: feasible.legs,
            total: feasible.total && solved,
        };
        Ok(MpcSolution {
            u,
            feasible,
            solved,
            status: sol.status,
            iterations: sol.iterations,
            cost,
            mu: limits[0].mu,
        })
    }
}

/// Drops the first stage and repeats the last one.
fn shift(x: &DVector<f64>, y: &DVector<f64>, h: usize) -> (DVector<f64>, DVector<f64>) {
    let shift_blocks = |v: &DVector<f64>, blk: usize| {
        let mut out = v.clone();
        if h > 1 {
            let tail = v.rows(blk, blk * (h - 1)).into_owned();
            out.rows_mut(0, blk * (h - 1)).copy_from(&tail);
        }
        out
    };
    (shift_blocks(x, INPUT_DIM), shift_blocks(y, ROWS_PER_STAGE))
}

/// One telemetry row per control tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetryRow {
    pub t: f64,
    pub cost: f64,
    pub feasible: Feasibility,
    pub u: [f64; INPUT_DIM],
    pub angles: [f64; 4],
    pub mu: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Telemetry {
    pub rows: Vec<TelemetryRow>,
}

impl Telemetry {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t,cost,feasible_total")?;
        for k in 1..=4 {
            write!(w, ",feasible_leg{k}")?;
        }
        for k in 1..=4 {
            write!(w, ",fx{k},fy{k},fz{k}")?;
        }
        for k in 1..=4 {
            write!(w, ",theta{k}")?;
        }
        writeln!(w)?;
        for r in &self.rows {
            write!(w, "{},{},{}", r.t, r.cost, r.feasible.total as u8)?;
            for l in r.feasible.legs {
                write!(w, ",{}", l as u8)?;
            }
            for v in r.u {
                write!(w, ",{v}")?;
            }
            for v in r.angles {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
