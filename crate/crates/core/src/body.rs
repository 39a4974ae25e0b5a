//! Rigid torso driven by the attachment wrenches of four independent rod
//! legs.

use std::io::Write;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leg::{LegDefinition, TendonSchedule};
use crate::rod::{ContactSet, LegSimulator, Wrench2};

/// Leg order used everywhere (telemetry columns leg1..leg4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LegId {
    FL,
    FR,
    BL,
    BR,
}

impl LegId {
    pub const ALL: [LegId; 4] = [LegId::FL, LegId::FR, LegId::BL, LegId::BR];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LegId::FL => "FL",
            LegId::FR => "FR",
            LegId::BL => "BL",
            LegId::BR => "BR",
        }
    }

    pub fn is_front(self) -> bool {
        matches!(self, LegId::FL | LegId::FR)
    }

    pub fn is_left(self) -> bool {
        matches!(self, LegId::FL | LegId::BL)
    }

    /// Left/right mirror image.
    pub fn mirrored(self) -> LegId {
        match self {
            LegId::FL => LegId::FR,
            LegId::FR => LegId::FL,
            LegId::BL => LegId::BR,
            LegId::BR => LegId::BL,
        }
    }

    pub fn parse(s: &str) -> Result<LegId> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FL" => Ok(LegId::FL),
            "FR" => Ok(LegId::FR),
            "BL" | "RL" => Ok(LegId::BL),
            "BR" | "RR" => Ok(LegId::BR),
            other => Err(Error::Parse(format!("unknown leg '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TorsoState {
    pub p: [f64; 3],
    pub v: [f64; 3],
    /// Roll, pitch, yaw (rad), each wrapped to (-pi, pi].
    pub euler: [f64; 3],
    /// World-frame angular velocity.
    pub omega: [f64; 3],
}

impl TorsoState {
    pub fn at_height(z: f64) -> Self {
        Self {
            p: [0.0, 0.0, z],
            ..Self::default()
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.euler[0], self.euler[1], self.euler[2])
    }

    pub fn is_finite(&self) -> bool {
        self.p
            .iter()
            .chain(&self.v)
            .chain(&self.euler)
            .chain(&self.omega)
            .all(|v| v.is_finite())
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

pub fn cuboid_inertia(dims: [f64; 3], mass: f64) -> Result<[f64; 3]> {
    if !(mass > 0.0 && dims.iter().all(|d| *d > 0.0)) {
        return Err(Error::Config("cuboid dimensions and mass must be positive".into()));
    }
    let [a, b, c] = dims;
    let k = mass / 12.0;
    Ok([k * (b * b + c * c), k * (a * a + c * c), k * (a * a + b * b)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorsoBody {
    pub mass: f64,
    /// Length, width, height of the torso box (m).
    pub dims: [f64; 3],
    /// Principal inertia about the body axes (kg m^2).
    pub inertia: [f64; 3],
    /// Attachment offsets from the CoM in the body frame, order FL, FR, BL, BR.
    pub attachments: [[f64; 3]; 4],
}

impl Default for TorsoBody {
    fn default() -> Self {
        Self::cuboid(2.0, [0.1255, 0.0855, 0.034]).expect("valid torso")
    }
}

impl TorsoBody {
    /// Box torso with legs at its four bottom corners.
    pub fn cuboid(mass: f64, dims: [f64; 3]) -> Result<Self> {
        let inertia = cuboid_inertia(dims, mass)?;
        let [a, b, c] = dims.map(|d| d / 2.0);
        let attachments = LegId::ALL.map(|leg| {
            let x = if leg.is_front() { a } else { -a };
            let y = if leg.is_left() { b } else { -b };
            [x, y, -c]
        });
        Ok(Self {
            mass,
            dims,
            inertia,
            attachments,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.inertia.iter().all(|i| *i > 0.0)) {
            return Err(Error::Config(
                "torso mass and inertia must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia))
    }

    /// Inertia about world axes for the given attitude.
    pub fn world_inertia(&self, rot: &Rotation3<f64>) -> Matrix3<f64> {
        let r = rot.matrix();
        r * self.inertia_matrix() * r.transpose()
    }
}

/// Force and moment in 3D.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench3 {
    pub force: [f64; 3],
    pub moment: [f64; 3],
}

/// Net force and torque about the CoM from four attachment wrenches.
///
/// `offsets` are the attachment points relative to the CoM, expressed in
/// the same frame as the wrenches.
pub fn aggregate_wrenches(
    wrenches: &[Wrench3; 4],
    offsets: &[[f64; 3]; 4],
    include_couples: bool,
) -> ([f64; 3], [f64; 3]) {
    let mut f = Vector3::zeros();
    let mut tau = Vector3::zeros();
    for (w, r) in wrenches.iter().zip(offsets) {
        let fi = Vector3::from(w.force);
        f += fi;
        tau += Vector3::from(*r).cross(&fi);
        if include_couples {
            tau += Vector3::from(w.moment);
        }
    }
    (f.into(), tau.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EulerRates {
    /// Euler rates = R_z(yaw)^T omega.
    #[default]
    SmallAngle,
    /// Full roll-pitch-yaw rate mapping.
    Exact,
}

/// Semi-implicit Euler step of the torso with the gyroscopic term dropped.
pub fn torso_step(
    state: &TorsoState,
    body: &TorsoBody,
    force: [f64; 3],
    torque: [f64; 3],
    dt: f64,
    gravity: f64,
    rates: EulerRates,
) -> Result<TorsoState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut next = *state;
    let rot = state.rotation();
    let inertia = body.world_inertia(&rot);
    let inv = inertia
        .try_inverse()
        .ok_or_else(|| Error::Config("singular torso inertia".into()))?;

    let acc = Vector3::from(force) / body.mass - Vector3::new(0.0, 0.0, gravity);
    let v = Vector3::from(state.v) + acc * dt;
    let p = Vector3::from(state.p) + v * dt;
    let w = Vector3::from(state.omega) + inv * Vector3::from(torque) * dt;

    let [roll, pitch, yaw] = state.euler;
    let rate = match rates {
        EulerRates::SmallAngle => {
            let (s, c) = yaw.sin_cos();
            Vector3::new(c * w.x + s * w.y, -s * w.x + c * w.y, w.z)
        }
        EulerRates::Exact => {
            let (sr, cr) = roll.sin_cos();
            let (sp, cp) = pitch.sin_cos();
            let (sy, cy) = yaw.sin_cos();
            // world omega -> body omega -> ZYX rates
            let wb = Vector3::new(
                cy * cp * w.x + sy * cp * w.y - sp * w.z,
                (cy * sp * sr - sy * cr) * w.x + (sy * sp * sr + cy * cr) * w.y + cp * sr * w.z,
                (cy * sp * cr + sy * sr) * w.x + (sy * sp * cr - cy * sr) * w.y + cp * cr * w.z,
            );
            let tp = sp / cp;
            Vector3::new(
                wb.x + sr * tp * wb.y + cr * tp * wb.z,
                cr * wb.y - sr * wb.z,
                (sr * wb.y + cr * wb.z) / cp,
            )
        }
    };
    next.v = v.into();
    next.p = p.into();
    next.omega = w.into();
    for k in 0..3 {
        next.euler[k] = wrap_angle(state.euler[k] + rate[k] * dt);
    }
    if !next.is_finite() {
        return Err(Error::NonFinite {
            what: "torso state",
            step: 0,
        });
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub torso: TorsoBody,
    /// Template for all four legs; base position and droop are overwritten.
    pub leg: LegDefinition,
    /// Heading of each leg plane in the body frame (rad), order FL, FR, BL, BR.
    pub headings: [f64; 4],
    /// Angle of the straight reference legs below horizontal (rad).
    pub droop: f64,
    /// Include the clamp couples in the torso torque.
    pub include_couples: bool,
    pub euler_rates: EulerRates,
    /// Coulomb friction at the leg tips (open-loop runs). Closed-loop runs
    /// replace it with commanded traction.
    pub tip_friction: bool,
}

/// Droop that puts the passive stance height at 0.04 m with the default legs.
pub const DEFAULT_DROOP: f64 = 0.1521;

impl Default for RobotConfig {
    fn default() -> Self {
        use std::f64::consts::FRAC_PI_4;
        let leg = LegDefinition {
            contact_set: ContactSet::TipOnly,
            ..LegDefinition::default()
        };
        Self {
            torso: TorsoBody::default(),
            leg,
            headings: [FRAC_PI_4, -FRAC_PI_4, 3.0 * FRAC_PI_4, -3.0 * FRAC_PI_4],
            droop: DEFAULT_DROOP,
            include_couples: true,
            euler_rates: EulerRates::SmallAngle,
            tip_friction: true,
        }
    }
}

impl RobotConfig {
    pub fn validate(&self) -> Result<()> {
        self.torso.validate()?;
        self.leg.validate()
    }

    pub fn total_mass(&self) -> f64 {
        self.torso.mass + 4.0 * self.leg.contact.leg_mass
    }

    /// Torso height at which the unloaded leg tips just touch the ground.
    pub fn touchdown_height(&self) -> f64 {
        -self.torso.attachments[0][2] + self.leg.geom.length * self.droop.sin()
    }
}

/// Loads of one whole-body step, as seen by the torso.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BodyStepReport {
    /// Wrench each leg applies to the torso (world frame, moment about
    /// the attachment point).
    pub legs: [Wrench3; 4],
    /// Normal contact force at each tip.
    pub normals: [f64; 4],
    /// Net force and torque on the torso, excluding torso gravity.
    pub force: [f64; 3],
    pub torque: [f64; 3],
}

/// Four rod legs and a rigid torso advanced in lock step.
#[derive(Debug, Clone)]
pub struct WholeBody {
    pub config: RobotConfig,
    pub torso: TorsoState,
    pub legs: Vec<LegSimulator>,
    step: usize,
}

impl WholeBody {
    /// Torso at the touchdown height with legs in their reference shape.
    pub fn new(config: RobotConfig) -> Result<Self> {
        let height = config.touchdown_height();
        Self::with_torso(config, TorsoState::at_height(height))
    }

    pub fn with_torso(config: RobotConfig, torso: TorsoState) -> Result<Self> {
        config.validate()?;
        let rot = torso.rotation();
        let mut legs = Vec::with_capacity(4);
        for leg in LegId::ALL {
            let r = rot * Vector3::from(config.torso.attachments[leg.index()]);
            let def = LegDefinition {
                name: leg.name().into(),
                base_x: 0.0,
                base_z: torso.p[2] + r.z,
                droop: config.droop,
                contact: crate::rod::ContactParams {
                    friction_mu: if config.tip_friction {
                        config.leg.contact.friction_mu
                    } else {
                        0.0
                    },
                    ..config.leg.contact
                },
                ..config.leg.clone()
            };
            legs.push(LegSimulator::new(def)?);
        }
        Ok(Self {
            config,
            torso,
            legs,
            step: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.config.leg.dt
    }

    pub fn dt(&self) -> f64 {
        self.config.leg.dt
    }

    fn heading(&self, leg: usize) -> Vector3<f64> {
        let h = self.torso.euler[2] + self.config.headings[leg];
        Vector3::new(h.cos(), h.sin(), 0.0)
    }

    /// World position of each leg tip.
    pub fn tip_positions(&self) -> [[f64; 3]; 4] {
        let rot = self.torso.rotation();
        std::array::from_fn(|i| {
            let a = Vector3::from(self.torso.p) + rot * Vector3::from(self.config.torso.attachments[i]);
            let tip = self.legs[i].state.tip();
            let e = self.heading(i);
            [a.x + tip.x * e.x, a.y + tip.x * e.y, tip.z]
        })
    }

    /// Advances one rod step. `traction` adds horizontal tip forces (world
    /// frame, on the robot) capped at `mu_i` times each tip's normal force.
    pub fn step(
        &mut self,
        tensions: [f64; 4],
        traction: Option<([[f64; 2]; 4], [f64; 4])>,
    ) -> Result<BodyStepReport> {
        let rot = self.torso.rotation();
        let p = Vector3::from(self.torso.p);
        let v = Vector3::from(self.torso.v);
        let w = Vector3::from(self.torso.omega);
        let time = self.time();
        let mut report = BodyStepReport::default();
        let mut offsets = [[0.0; 3]; 4];
        for i in 0..4 {
            let r = rot * Vector3::from(self.config.torso.attachments[i]);
            let va = v + w.cross(&r);
            let e = self.heading(i);
            let leg = &mut self.legs[i];
            leg.set_base(0.0, p.z + r.z, 0.0, va.z, [0.0; 3]);
            leg.state.frame_vx = va.dot(&e);
            let out = leg.advance(tensions[i]).map_err(|err| Error::Leg {
                leg: LegId::ALL[i].name().into(),
                time,
                source: Box::new(err),
            })?;
            report.legs[i] = torso_wrench(out.support + out.tendon, &e);
            report.normals[i] = out.normal;
            offsets[i] = r.into();
        }
        let (mut f, mut tau) = aggregate_wrenches(&report.legs, &offsets, self.config.include_couples);
        if let Some((forces, mu)) = traction {
            let tips = self.tip_positions();
            for i in 0..4 {
                let cap = mu[i] * report.normals[i];
                let (fx, fy) = (forces[i][0], forces[i][1]);
                let norm = fx.hypot(fy);
                let s = if norm > cap && norm > 0.0 { cap / norm } else { 1.0 };
                let t = Vector3::new(fx * s, fy * s, 0.0);
                let arm = Vector3::from(tips[i]) - p;
                f[0] += t.x;
                f[1] += t.y;
                let m = arm.cross(&t);
                for k in 0..3 {
                    tau[k] += m[k];
                }
                report.legs[i].force[0] += t.x;
                report.legs[i].force[1] += t.y;
            }
        }
        report.force = f;
        report.torque = tau;
        self.torso = torso_step(
            &self.torso,
            &self.config.torso,
            f,
            tau,
            self.dt(),
            self.config.leg.contact.gravity,
            self.config.euler_rates,
        )
        .map_err(|err| match err {
            Error::NonFinite { what, .. } => Error::NonFinite {
                what,
                step: self.step,
            },
            other => other,
        })?;
        self.step += 1;
        Ok(report)
    }
}

/// Load a leg puts on the torso from the planar support and tendon
/// resultants; `e` is the world heading of the leg plane.
fn torso_wrench(on_leg: Wrench2, e: &Vector3<f64>) -> Wrench3 {
    let y = Vector3::z().cross(e);
    let f = -(e * on_leg.fx + Vector3::z() * on_leg.fz);
    let m = -(y * on_leg.my);
    Wrench3 {
        force: f.into(),
        moment: m.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BodySample {
    pub t: f64,
    pub torso: TorsoState,
    pub legs: [Wrench3; 4],
    pub normals: [f64; 4],
    pub tips: [[f64; 3]; 4],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BodyTrajectory {
    pub samples: Vec<BodySample>,
}

impl BodyTrajectory {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t,px,py,pz,roll,pitch,yaw,vx,vy,vz,wx,wy,wz")?;
        for k in 1..=4 {
            write!(w, ",fx{k},fy{k},fz{k},mx{k},my{k},mz{k},normal{k}")?;
        }
        writeln!(w)?;
        for s in &self.samples {
            let b = &s.torso;
            write!(w, "{}", s.t)?;
            for v in b.p.iter().chain(&b.euler).chain(&b.v).chain(&b.omega) {
                write!(w, ",{v}")?;
            }
            for (leg, n) in s.legs.iter().zip(&s.normals) {
                for v in leg.force.iter().chain(&leg.moment) {
                    write!(w, ",{v}")?;
                }
                write!(w, ",{n}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Recording rate of body trajectories (Hz).
pub const RECORD_RATE: f64 = 30.0;

/// Open-loop run: each leg follows its tendon schedule.
pub fn whole_body_simulate(
    config: &RobotConfig,
    schedules: &[TendonSchedule; 4],
    duration: f64,
) -> Result<BodyTrajectory> {
    if !(duration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let mut body = WholeBody::new(config.clone())?;
    let dt = body.dt();
    let steps = (duration / dt).round() as usize;
    let stride = ((1.0 / RECORD_RATE) / dt).round().max(1.0) as usize;
    let mut traj = BodyTrajectory::default();
    let mut last = BodyStepReport::default();
    for k in 0..=steps {
        if k % stride == 0 {
            traj.samples.push(BodySample {
                t: body.time(),
                torso: body.torso,
                legs: last.legs,
                normals: last.normals,
                tips: body.tip_positions(),
            });
        }
        if k == steps {
            break;
        }
        let t = body.time();
        let tensions = std::array::from_fn(|i| schedules[i].tension(t));
        last = body.step(tensions, None)?;
    }
    Ok(traj)
}

/// Passive-stance torso height after `settle` seconds.
pub fn passive_stance_height(config: &RobotConfig, settle: f64) -> Result<f64> {
    let schedules: [TendonSchedule; 4] = Default::default();
    let traj = whole_body_simulate(config, &schedules, settle)?;
    Ok(traj.samples.last().map_or(f64::NAN, |s| s.torso.p[2]))
}

/// Bisects the leg droop until the passive stance height hits `target`.
pub fn calibrate_droop(config: &RobotConfig, target: f64, settle: f64, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.02, 1.2);
    let mut cfg = config.clone();
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        cfg.droop = mid;
        let h = passive_stance_height(&cfg, settle)?;
        if (h - target).abs() < tol {
            return Ok(mid);
        }
        if h < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cuboid_examples() {
        let i = cuboid_inertia([1.0; 3], 1.0).unwrap();
        for v in i {
            assert_relative_eq!(v, 1.0 / 6.0);
        }
        let t = cuboid_inertia([0.1255, 0.0855, 0.034], 2.0).unwrap();
        assert_relative_eq!(t[1], 2.0 / 12.0 * (0.1255f64.powi(2) + 0.034f64.powi(2)));
        assert_relative_eq!(t[1], 2.818e-3, epsilon = 1e-6);
        let s = cuboid_inertia([0.0855, 0.1255, 0.034], 2.0).unwrap();
        assert_relative_eq!(s[0], t[1]);
        assert_relative_eq!(s[1], t[0]);
    }

    #[test]
    fn aggregate_examples() {
        let body = TorsoBody::default();
        let w = Wrench3 {
            force: [0.0, 0.0, 2.16 * 9.81 / 4.0],
            moment: [0.0; 3],
        };
        let (f, tau) = aggregate_wrenches(&[w; 4], &body.attachments, true);
        assert_relative_eq!(f[2], 2.16 * 9.81, max_relative = 1e-12);
        assert!(tau.iter().all(|t| t.abs() < 1e-12));

        let mut ws = [Wrench3::default(); 4];
        ws[0].force = [0.0, 0.0, 1.0];
        let (_, tau) = aggregate_wrenches(&ws, &body.attachments, true);
        let r = body.attachments[0];
        assert_relative_eq!(tau[0], r[1]);
        assert_relative_eq!(tau[1], -r[0]);

        let (f, tau) = aggregate_wrenches(&[Wrench3::default(); 4], &body.attachments, true);
        assert_eq!((f, tau), ([0.0; 3], [0.0; 3]));
    }

    #[test]
    fn torso_step_examples() {
        let body = TorsoBody::default();
        let s = TorsoState::at_height(0.04);
        let n = torso_step(&s, &body, [0.0; 3], [0.0; 3], 1e-3, 0.0, EulerRates::SmallAngle).unwrap();
        assert_eq!(n, s);
        let n = torso_step(&s, &body, [0.0, 0.0, 2.0 * 9.81], [0.0; 3], 1e-3, 9.81, EulerRates::SmallAngle).unwrap();
        assert!(n.v[2].abs() < 1e-15);

        let tau = 1e-3;
        let mut st = TorsoState::default();
        for _ in 0..1000 {
            st = torso_step(&st, &body, [0.0; 3], [0.0, tau, 0.0], 1e-3, 0.0, EulerRates::SmallAngle).unwrap();
        }
        // pitch stays small, so the world inertia is nearly the body one
        assert_relative_eq!(st.omega[1], tau / body.inertia[1] * 1.0, max_relative = 1e-2);
    }

    #[test]
    fn angle_wrapping() {
        use std::f64::consts::PI;
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0);
    }
}
