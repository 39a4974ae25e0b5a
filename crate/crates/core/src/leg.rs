//! Tendon actuation of a single leg: tension profiles, routing onto rod
//! nodes, the servo force/angle map and the attachment reaction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rod::{
    Accelerations, ContactParams, ContactSet, IntegrationMode, NodalLoads, RodGeometry,
    RodMaterial, RodState, StabilizationParams, Wrench2,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TendonRouting {
    /// Direction of the virtual pulley from the base node (rad, from +x).
    pub pulley_angle: f64,
    /// Distance of the pulley point from the base node (m).
    pub pulley_radius: f64,
    /// Fraction of the leg length the tendon runs along.
    pub routed_fraction: f64,
}

impl Default for TendonRouting {
    fn default() -> Self {
        Self {
            pulley_angle: 168f64.to_radians(),
            pulley_radius: 0.03,
            routed_fraction: 2.0 / 3.0,
        }
    }
}

impl TendonRouting {
    pub fn validate(&self) -> Result<()> {
        if !(self.routed_fraction > 0.0 && self.routed_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "routed_fraction must lie in (0, 1], got {}",
                self.routed_fraction
            )));
        }
        if !(self.pulley_angle > 0.0 && self.pulley_angle < std::f64::consts::TAU) {
            return Err(Error::Config("pulley_angle must lie in (0, 2pi)".into()));
        }
        if !(self.pulley_radius >= 0.0) {
            return Err(Error::Config("pulley radius must be >= 0".into()));
        }
        Ok(())
    }

    /// Nodes `0..count` carry tendon load.
    pub fn routed_node_count(&self, node_count: usize) -> usize {
        // small epsilon keeps 2/3 * 30 from rounding down to 19
        let segs = (self.routed_fraction * (node_count - 1) as f64 + 1e-9).floor() as usize;
        (segs + 1).min(node_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TendonProfile {
    pub t_ramp: f64,
    pub t_hold: f64,
    pub t_decay: f64,
    pub t_max: f64,
}

impl Default for TendonProfile {
    fn default() -> Self {
        Self {
            t_ramp: 0.5,
            t_hold: 0.5,
            t_decay: 0.5,
            t_max: 1.5,
        }
    }
}

impl TendonProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_ramp >= 0.0 && self.t_hold >= 0.0 && self.t_decay >= 0.0) {
            return Err(Error::Config("profile durations must be >= 0".into()));
        }
        if !(self.t_max >= 0.0) {
            return Err(Error::Config("T_max must be >= 0".into()));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.t_ramp + self.t_hold + self.t_decay
    }

    /// Sine ramp, hold, raised-cosine decay; zero outside.
    pub fn tension_at(&self, t: f64) -> f64 {
        use std::f64::consts::PI;
        if t < 0.0 {
            return 0.0;
        }
        if t < self.t_ramp {
            return self.t_max * (0.5 * PI * t / self.t_ramp).sin();
        }
        let t = t - self.t_ramp;
        if t <= self.t_hold {
            return self.t_max;
        }
        let t = t - self.t_hold;
        if t < self.t_decay {
            return self.t_max * 0.5 * (1.0 + (PI * t / self.t_decay).cos());
        }
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledProfile {
    pub start: f64,
    pub profile: TendonProfile,
}

/// Per-leg list of tension pulses. Overlapping pulses take the larger value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TendonSchedule {
    pub entries: Vec<ScheduledProfile>,
    /// Repeat the entries with this period when set.
    #[serde(default)]
    pub period: Option<f64>,
}

impl TendonSchedule {
    pub fn single(profile: TendonProfile) -> Self {
        Self {
            entries: vec![ScheduledProfile { start: 0.0, profile }],
            period: None,
        }
    }

    pub fn tension(&self, t: f64) -> f64 {
        let t = match self.period {
            Some(p) if p > 0.0 => t.rem_euclid(p),
            _ => t,
        };
        self.entries
            .iter()
            .map(|e| e.profile.tension_at(t - e.start))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceAngleMap {
    /// N
    pub offset: f64,
    /// N per degree
    pub slope: f64,
    /// degrees
    pub angle_max: f64,
}

impl Default for ForceAngleMap {
    fn default() -> Self {
        Self {
            offset: 6.91,
            slope: 0.107,
            angle_max: 116.28,
        }
    }
}

impl ForceAngleMap {
    /// Servo pulling angle (degrees) for a commanded vertical force.
    pub fn force_to_angle(&self, f_z: f64) -> Result<f64> {
        if !(f_z >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "vertical force must be >= 0, got {f_z}"
            )));
        }
        Ok(((f_z + self.offset) / self.slope).clamp(0.0, self.angle_max))
    }

    pub fn angle_to_force(&self, theta: f64) -> Result<f64> {
        if !(0.0..=self.angle_max).contains(&theta) {
            return Err(Error::InvalidArgument(format!(
                "servo angle {theta} outside [0, {}]",
                self.angle_max
            )));
        }
        Ok((self.slope * theta - self.offset).max(0.0))
    }

    /// Largest force the servo range can express.
    pub fn force_at_max_angle(&self) -> f64 {
        (self.slope * self.angle_max - self.offset).max(0.0)
    }
}

/// Pulls the routed nodes toward the pulley point with equal-magnitude
/// forces whose resultant has magnitude `tension`.
pub fn apply_tendon(
    state: &RodState,
    routing: &TendonRouting,
    tension: f64,
    loads: &mut NodalLoads,
) -> Result<()> {
    if !(tension >= 0.0) {
        return Err(Error::InvalidArgument(format!("tension must be >= 0, got {tension}")));
    }
    if tension == 0.0 {
        return Ok(());
    }
    let base = state.nodes[0];
    let (s, c) = routing.pulley_angle.sin_cos();
    let (px, pz) = (base.x + routing.pulley_radius * c, base.z + routing.pulley_radius * s);
    let count = routing.routed_node_count(state.len());

    let mut dirs = Vec::with_capacity(count);
    let (mut sx, mut sz) = (0.0, 0.0);
    for node in &state.nodes[..count] {
        let (dx, dz) = (px - node.x, pz - node.z);
        let d = dx.hypot(dz);
        let u = if d > 0.0 { (dx / d, dz / d) } else { (0.0, 0.0) };
        sx += u.0;
        sz += u.1;
        dirs.push(u);
    }
    let resultant = sx.hypot(sz);
    if !(resultant > 0.0) {
        return Ok(());
    }
    let scale = tension / resultant;
    for (i, (ux, uz)) in dirs.into_iter().enumerate() {
        let (fx, fz) = (scale * ux, scale * uz);
        loads.fx[i] += fx;
        loads.fz[i] += fz;
        let node = &state.nodes[i];
        loads.tendon.add_force_at(node.x - base.x, node.z - base.z, fx, fz);
    }
    Ok(())
}

/// Wrench the attachment applies to the leg: the clamp load on the base
/// node plus the stabilizer loads whose other end is fixed to the
/// attachment. Moment is about the base node. The torso receives the
/// negative of this and of the tendon resultant.
pub fn base_reaction(loads: &NodalLoads, acc: &Accelerations) -> Wrench2 {
    acc.clamp + loads.anchored
}

/// Everything needed to build and simulate one leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegDefinition {
    pub name: String,
    pub geom: RodGeometry,
    pub material: RodMaterial,
    pub contact: ContactParams,
    pub stabilization: StabilizationParams,
    pub routing: TendonRouting,
    /// Outer time step (s); stable sub-steps are chosen automatically.
    pub dt: f64,
    pub mode: IntegrationMode,
    pub contact_set: ContactSet,
    /// Base node position.
    pub base_x: f64,
    pub base_z: f64,
    /// Angle of the straight reference rod below horizontal (rad).
    pub droop: f64,
}

impl Default for LegDefinition {
    fn default() -> Self {
        Self {
            name: "leg".into(),
            geom: RodGeometry::default(),
            material: RodMaterial::default(),
            contact: ContactParams::default(),
            stabilization: StabilizationParams::default(),
            routing: TendonRouting::default(),
            dt: 1e-4,
            mode: IntegrationMode::SemiImplicit,
            contact_set: ContactSet::AllNodes,
            base_x: 0.0,
            base_z: 0.05,
            droop: 0.0,
        }
    }
}

impl LegDefinition {
    pub fn validate(&self) -> Result<()> {
        self.geom.validate()?;
        self.material.validate()?;
        self.contact.validate()?;
        self.stabilization.validate()?;
        self.routing.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn reference_state(&self) -> Result<RodState> {
        RodState::straight(&self.geom, self.base_x, self.base_z, self.droop)
    }
}
