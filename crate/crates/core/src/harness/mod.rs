//! Closed-loop runs, the perturbation study and validation tooling.

mod dcm;
mod metrics;
pub mod plot;

pub use dcm::DcmGrid;
pub use metrics::{
    compute_metrics, read_external_csv, time_align, AlignedPair, Metrics, TrajectoryRecord,
    TrajectorySource,
};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::{BodySample, BodyStepReport, BodyTrajectory, RobotConfig, TorsoBody, WholeBody};
use crate::error::{Error, Result};
use crate::gait::{idx, GaitSchedule, ReferenceCommand, STATE_DIM};
use crate::leg::ForceAngleMap;
use crate::mpc::{
    check_input, force_commands_to_angles, linearize, stage_cost, MpcConfig, MpcController,
    StageLimits, StateVec, Telemetry, TelemetryRow, INPUT_DIM,
};

/// Default settling threshold on the tracking cost.
pub const SETTLE_THRESHOLD: f64 = 0.01;

/// MPC state of a whole-body robot, feet relative to the CoM.
pub fn observe(body: &WholeBody) -> ([f64; STATE_DIM], [[f64; 3]; 4]) {
    let t = &body.torso;
    let mut x = [0.0; STATE_DIM];
    x[..3].copy_from_slice(&t.euler);
    x[3..6].copy_from_slice(&t.p);
    x[6..9].copy_from_slice(&t.omega);
    x[9..12].copy_from_slice(&t.v);
    x[idx::G] = -body.config.leg.contact.gravity;
    let feet = body
        .tip_positions()
        .map(|tip| [tip[0] - t.p[0], tip[1] - t.p[1], tip[2] - t.p[2]]);
    (x, feet)
}

/// Prediction body for a robot: torso inertia with the full robot mass.
pub fn prediction_body(robot: &RobotConfig) -> TorsoBody {
    TorsoBody {
        mass: robot.total_mass(),
        ..robot.torso.clone()
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub trajectory: BodyTrajectory,
    pub telemetry: Telemetry,
    pub dcm: DcmGrid,
}

/// Tendon tension for a commanded vertical force: the gait pulse scaled by
/// the force the servo angle can deliver relative to its maximum.
pub fn commanded_tension(pulse: f64, f_z: f64, map: &ForceAngleMap) -> f64 {
    let angle = map
        .force_to_angle(f_z.max(0.0))
        .expect("nonnegative force is always accepted");
    let force = map.angle_to_force(angle).expect("clamped angle is in range");
    pulse * force / map.force_at_max_angle()
}

/// MPC on the full rod plant: one solve per control tick, the rod legs
/// advanced at their own step in between.
pub fn run_closed_loop(
    robot: &RobotConfig,
    gait: &GaitSchedule,
    command: &ReferenceCommand,
    config: &MpcConfig,
    duration: f64,
) -> Result<ClosedLoopRun> {
    if !(duration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let mut robot = robot.clone();
    robot.tip_friction = false;
    let mut body = WholeBody::new(robot.clone())?;
    let mut mpc = MpcController::new(config.clone(), gait.clone(), *command, prediction_body(&robot))?;
    let pulses = gait.tendon_schedules();
    let map = ForceAngleMap::default();
    let per_tick = (config.dt / body.dt()).round().max(1.0) as usize;
    let ticks = (duration / config.dt).round() as usize;
    let mut run = ClosedLoopRun {
        trajectory: BodyTrajectory::default(),
        telemetry: Telemetry::default(),
        dcm: DcmGrid::default(),
    };
    let mut last = BodyStepReport::default();
    for tick in 0..ticks {
        let t = body.time();
        run.trajectory.samples.push(BodySample {
            t,
            torso: body.torso,
            legs: last.legs,
            normals: last.normals,
            tips: body.tip_positions(),
        });
        let (x, feet) = observe(&body);
        let sol = mpc
            .solve_step(t, &x, &feet)
            .map_err(|e| Error::Tick { tick, source: Box::new(e) })?;
        let angles = force_commands_to_angles(&sol.u, &map);
        run.telemetry.rows.push(TelemetryRow {
            t,
            cost: sol.cost,
            feasible: sol.feasible,
            u: sol.u,
            angles,
            mu: sol.mu,
        });
        run.dcm.push(t, sol.feasible);
        let traction: [[f64; 2]; 4] = std::array::from_fn(|i| [sol.u[3 * i], sol.u[3 * i + 1]]);
        for _ in 0..per_tick {
            let ts = body.time();
            let tensions =
                std::array::from_fn(|i| commanded_tension(pulses[i].tension(ts), sol.u[3 * i + 2], &map));
            last = body
                .step(tensions, Some((traction, sol.mu)))
                .map_err(|e| Error::Tick { tick, source: Box::new(e) })?;
        }
    }
    run.trajectory.samples.push(BodySample {
        t: body.time(),
        torso: body.torso,
        legs: last.legs,
        normals: last.normals,
        tips: body.tip_positions(),
    });
    Ok(run)
}

/// Earliest time after which every sample stays below `threshold`.
pub fn settling_time(t: &[f64], cost: &[f64], threshold: f64) -> Result<Option<f64>> {
    if cost.is_empty() || t.len() != cost.len() {
        return Err(Error::InvalidArgument(
            "settling time needs a non-empty series with matching times".into(),
        ));
    }
    match cost.iter().rposition(|c| !(*c < threshold)) {
        None => Ok(Some(t[0])),
        Some(k) if k + 1 < cost.len() => Ok(Some(t[k + 1])),
        Some(_) => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    Baseline,
    Roll,
    Pitch,
    Height,
    Velocity,
    Combined,
    Noise,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::Baseline,
        ScenarioKind::Roll,
        ScenarioKind::Pitch,
        ScenarioKind::Height,
        ScenarioKind::Velocity,
        ScenarioKind::Combined,
        ScenarioKind::Noise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Baseline => "Baseline",
            ScenarioKind::Roll => "Roll",
            ScenarioKind::Pitch => "Pitch",
            ScenarioKind::Height => "Height",
            ScenarioKind::Velocity => "Velocity",
            ScenarioKind::Combined => "Combined",
            ScenarioKind::Noise => "Noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationScenario {
    pub name: String,
    /// Initial state entries overriding the reference, as (index, value).
    pub overrides: Vec<(usize, f64)>,
    /// Per-step Gaussian noise on the physical states; 0 disables it.
    pub noise_sigma: f64,
    pub duration: f64,
}

impl PerturbationScenario {
    pub fn preset(kind: ScenarioKind) -> Self {
        let overrides = match kind {
            ScenarioKind::Baseline | ScenarioKind::Noise => vec![],
            ScenarioKind::Roll => vec![(idx::ROLL, 0.1)],
            ScenarioKind::Pitch => vec![(idx::PITCH, 0.1)],
            ScenarioKind::Height => vec![(idx::PZ, 0.01)],
            ScenarioKind::Velocity => vec![(idx::VX, 0.05)],
            ScenarioKind::Combined => vec![
                (idx::ROLL, 0.05),
                (idx::PITCH, 0.05),
                (idx::PZ, 0.02),
                (idx::VX, 0.03),
            ],
        };
        Self {
            name: kind.name().into(),
            overrides,
            noise_sigma: if kind == ScenarioKind::Noise { 0.001 } else { 0.0 },
            duration: 25.0,
        }
    }

    pub fn all() -> Vec<Self> {
        ScenarioKind::ALL.into_iter().map(Self::preset).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteSettings {
    pub n_mpc: usize,
    pub n_rollout: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            n_mpc: 15,
            n_rollout: 5,
            seed: 0,
            threshold: SETTLE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub name: String,
    pub max_cost: f64,
    pub mean_cost: f64,
    pub final_cost: f64,
    pub settling_time: Option<f64>,
    pub infeasible_steps: usize,
    #[serde(skip)]
    pub t: Vec<f64>,
    #[serde(skip)]
    pub cost: Vec<f64>,
    #[serde(skip)]
    pub dcm: DcmGrid,
}

impl ScenarioResult {
    pub fn settled(&self) -> bool {
        self.settling_time.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub seed: u64,
    pub n_mpc: usize,
    pub n_rollout: usize,
    pub scenarios: Vec<ScenarioResult>,
}

impl StabilityReport {
    pub fn get(&self, name: &str) -> Option<&ScenarioResult> {
        self.scenarios.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// `t,<scenario>...` cost table on the shared tick grid.
    pub fn write_costs_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for s in &self.scenarios {
            write!(w, ",{}", s.name)?;
        }
        writeln!(w)?;
        let rows = self.scenarios.iter().map(|s| s.t.len()).max().unwrap_or(0);
        for k in 0..rows {
            let t = self.scenarios.iter().find_map(|s| s.t.get(k)).copied().unwrap_or(f64::NAN);
            write!(w, "{t}")?;
            for s in &self.scenarios {
                match s.cost.get(k) {
                    Some(c) => write!(w, ",{c}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Runs one scenario on the linearised rigid torso: `n_mpc` solved ticks
/// followed by `n_rollout` ticks replaying the last plan.
pub fn run_scenario(
    scenario: &PerturbationScenario,
    robot: &RobotConfig,
    gait: &GaitSchedule,
    command: &ReferenceCommand,
    config: &MpcConfig,
    settings: &SuiteSettings,
    rng: &mut ChaCha8Rng,
) -> Result<ScenarioResult> {
    if settings.n_mpc == 0 {
        return Err(Error::Config("n_mpc must be >= 1".into()));
    }
    let pred = prediction_body(robot);
    let mut mpc = MpcController::new(config.clone(), gait.clone(), *command, pred.clone())?;
    let mut x = command.state_at(0.0);
    for &(i, v) in &scenario.overrides {
        if i >= idx::G {
            return Err(Error::IndexOutOfRange { index: i, len: idx::G });
        }
        x[i] = v;
    }
    // nominal foot offsets: tips at rest under the drooped legs
    let reach = robot.leg.geom.length * robot.droop.cos();
    let feet: [[f64; 3]; 4] = std::array::from_fn(|i| {
        let a = robot.torso.attachments[i];
        let h = robot.headings[i];
        [a[0] + reach * h.cos(), a[1] + reach * h.sin(), -command.pz]
    });
    let noise = if scenario.noise_sigma > 0.0 {
        Some(Normal::new(0.0, scenario.noise_sigma).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let ticks = (scenario.duration / config.dt).round() as usize;
    let cycle = settings.n_mpc + settings.n_rollout;
    let weight = config.weight();
    let mut t_axis = Vec::with_capacity(ticks + 1);
    let mut cost = Vec::with_capacity(ticks + 1);
    let mut dcm = DcmGrid::default();
    let mut plan_start = 0;
    for tick in 0..ticks {
        let t = tick as f64 * config.dt;
        let phase = tick % cycle;
        let u = if phase < settings.n_mpc {
            let sol = mpc
                .solve_step(t, &x, &feet)
                .map_err(|e| Error::Tick { tick, source: Box::new(e) })?;
            plan_start = tick;
            dcm.push(t, sol.feasible);
            sol.u
        } else {
            let plan = mpc.plan();
            let k = (tick - plan_start).min(plan.len() - 1);
            let u = plan[k];
            let lim = StageLimits::from_gait(gait, t, config.f_max);
            dcm.push(t, check_input(&u, &lim, weight));
            u
        };
        t_axis.push(t);
        cost.push(stage_cost(&x, &command.state_at(t), &config.q));
        let xv = StateVec::from_column_slice(&x);
        let (a, b) = linearize(&xv, &pred, &feet, config.dt)?;
        let next = a * xv + b * DVector::from_column_slice(&u).fixed_rows::<INPUT_DIM>(0);
        x.copy_from_slice(next.as_slice());
        if let Some(n) = &noise {
            let clip = 3.0 * scenario.noise_sigma;
            for v in x.iter_mut().take(idx::G) {
                *v += n.sample(rng).clamp(-clip, clip);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "perturbation state", step: tick });
        }
    }
    let t_end = ticks as f64 * config.dt;
    t_axis.push(t_end);
    cost.push(stage_cost(&x, &command.state_at(t_end), &config.q));
    let settling = settling_time(&t_axis, &cost, settings.threshold)?;
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    let mean_cost = cost.iter().sum::<f64>() / cost.len() as f64;
    Ok(ScenarioResult {
        name: scenario.name.clone(),
        max_cost,
        mean_cost,
        final_cost: *cost.last().expect("non-empty"),
        settling_time: settling,
        infeasible_steps: dcm.infeasible_count(),
        t: t_axis,
        cost,
        dcm,
    })
}

/// Runs every scenario from one seeded generator, in order.
pub fn run_perturbation_suite(
    scenarios: &[PerturbationScenario],
    robot: &RobotConfig,
    gait: &GaitSchedule,
    command: &ReferenceCommand,
    config: &MpcConfig,
    settings: &SuiteSettings,
) -> Result<StabilityReport> {
    if scenarios.is_empty() {
        return Err(Error::InvalidArgument("no scenarios given".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let results = scenarios
        .iter()
        .map(|s| run_scenario(s, robot, gait, command, config, settings, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport {
        seed: settings.seed,
        n_mpc: settings.n_mpc,
        n_rollout: settings.n_rollout,
        scenarios: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settling_examples() {
        let t: Vec<f64> = (0..5).map(|k| k as f64).collect();
        assert_eq!(settling_time(&t, &[0.0; 5], 0.01).unwrap(), Some(0.0));
        assert_eq!(
            settling_time(&t, &[0.5, 0.001, 0.001, 0.001, 0.02], 0.01).unwrap(),
            None
        );
        assert_eq!(
            settling_time(&t, &[0.1, 0.05, 0.02, 0.005, 0.001], 0.01).unwrap(),
            Some(3.0)
        );
        assert!(settling_time(&[], &[], 0.01).is_err());
    }

    #[test]
    fn tension_follows_the_force_command() {
        let m = ForceAngleMap::default();
        assert!(commanded_tension(1.5, 0.0, &m).abs() < 1e-12);
        assert!((commanded_tension(1.5, 6.0, &m) - 1.5).abs() < 1e-12);
        let half = commanded_tension(1.0, 0.5 * m.force_at_max_angle(), &m);
        assert!((half - 0.5).abs() < 1e-9);
    }
}
