//! Discrete planar Cosserat rod for a single tapered soft leg.
//!
//! Each node carries a planar pose `(x, z, theta)` and its rates. Segment
//! `i` joins nodes `i` and `i + 1`; its axial stiffness and bending
//! stiffness use the cross-section of node `i`. Node 0 is clamped to the
//! attachment frame and moves only as prescribed.
//!
//! Forces are accumulated into a [`NodalLoads`] buffer by independent
//! passes (internal, tendon, contact, friction, restoring, damping) and
//! turned into accelerations by [`assemble_accelerations`].

mod sim;

pub use sim::{simulate_leg, LegSimulator, RodFrame, RodTrajectory, StepReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard gravity magnitude, applied downward (-z).
pub const GRAVITY: f64 = 9.81;

/// Serde default for gravity fields.
pub fn default_gravity() -> f64 {
    GRAVITY
}

/// Below this sliding speed (m/s) the Coulomb sign term is zero.
pub const STICTION_BAND: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RodGeometry {
    /// Total length (m).
    pub length: f64,
    pub node_count: usize,
    /// Constant width (m).
    pub width: f64,
    /// Thickness at the clamped base (m).
    pub thickness_base: f64,
    /// Thickness at the free tip (m).
    pub thickness_tip: f64,
}

impl Default for RodGeometry {
    fn default() -> Self {
        Self {
            length: 0.19,
            node_count: 31,
            width: 0.02,
            thickness_base: 0.0135,
            thickness_tip: 0.0035,
        }
    }
}

impl RodGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.node_count < 3 {
            return Err(Error::Config(format!(
                "node_count must be >= 3, got {}",
                self.node_count
            )));
        }
        for (name, v) in [
            ("length", self.length),
            ("width", self.width),
            ("thickness_base", self.thickness_base),
            ("thickness_tip", self.thickness_tip),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Undeformed segment length `L / (N - 1)`.
    pub fn segment_length(&self) -> f64 {
        self.length / (self.node_count - 1) as f64
    }

    /// Linearly tapered thickness at node `i`.
    pub fn node_thickness(&self, i: usize) -> Result<f64> {
        if i >= self.node_count {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.node_count,
            });
        }
        let s = i as f64 / (self.node_count - 1) as f64;
        Ok(self.thickness_base + (self.thickness_tip - self.thickness_base) * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RodMaterial {
    /// Young's modulus (Pa).
    pub youngs_modulus: f64,
    /// Density (kg/m^3).
    pub density: f64,
}

impl Default for RodMaterial {
    fn default() -> Self {
        Self {
            youngs_modulus: 1e7,
            density: 1200.0,
        }
    }
}

impl RodMaterial {
    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0 && self.density > 0.0) {
            return Err(Error::Config(
                "youngs_modulus and density must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Penalty ground contact and Coulomb friction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// N/m
    pub stiffness: f64,
    /// N s/m
    pub damping: f64,
    pub friction_mu: f64,
    /// Mass of one leg (kg), enters the friction magnitude.
    pub leg_mass: f64,
    /// Mass of the whole robot (kg), a quarter of it loads each leg.
    pub robot_mass: f64,
    /// Gravity magnitude (m/s^2), always applied downward.
    pub gravity: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness: 1e5,
            damping: 10.0,
            friction_mu: 0.1,
            leg_mass: 0.04,
            robot_mass: 2.16,
            gravity: GRAVITY,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0) {
            return Err(Error::Config("contact stiffness must be positive".into()));
        }
        if !(self.damping >= 0.0) {
            return Err(Error::Config("contact damping must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.friction_mu) {
            return Err(Error::Config(format!(
                "friction_mu must lie in [0, 1], got {}",
                self.friction_mu
            )));
        }
        if !(self.gravity >= 0.0) {
            return Err(Error::Config(
                "gravity is a magnitude and must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Magnitude of the sliding friction force, `mu (m + M/4) g`.
    pub fn friction_magnitude(&self) -> f64 {
        self.friction_mu * (self.leg_mass + self.robot_mass / 4.0) * self.gravity
    }
}

/// Numerical stabilization: linear damping and restoring springs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilizationParams {
    /// N s/m on translations, N m s/rad on rotations.
    pub damping: f64,
    /// N/m pulling each node back to its reference position.
    pub restoring: f64,
}

impl Default for StabilizationParams {
    fn default() -> Self {
        Self {
            damping: 0.1,
            restoring: 800.0,
        }
    }
}

impl StabilizationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping >= 0.0 && self.restoring >= 0.0) {
            return Err(Error::Config(
                "damping and restoring stiffness must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossSection {
    /// m^2
    pub area: f64,
    /// Second moment of area, m^4.
    pub second_moment: f64,
    /// Lumped node mass, kg.
    pub node_mass: f64,
    /// Rotational inertia of the node, `rho A ds^2 / 2`.
    pub rot_inertia: f64,
}

pub fn cross_section(geom: &RodGeometry, material: &RodMaterial, i: usize) -> Result<CrossSection> {
    let h = geom.node_thickness(i)?;
    let ds = geom.segment_length();
    let area = geom.width * h;
    Ok(CrossSection {
        area,
        second_moment: geom.width * h.powi(3) / 12.0,
        node_mass: material.density * area * ds,
        rot_inertia: 0.5 * material.density * area * ds * ds,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
    pub vx: f64,
    pub vz: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceNode {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
}

/// Configuration and velocity of every node plus the reference pose.
///
/// Reference positions are expressed relative to the reference base node;
/// restoring anchors follow the current base node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RodState {
    pub nodes: Vec<NodeState>,
    pub reference: Vec<ReferenceNode>,
    /// Horizontal velocity of the frame the coordinates are expressed in.
    /// Zero for a leg on a fixed stand.
    pub frame_vx: f64,
}

impl RodState {
    /// Straight rod leaving the base at `(base_x, base_z)` and descending at
    /// `droop` radians below the +x axis; at rest.
    pub fn straight(geom: &RodGeometry, base_x: f64, base_z: f64, droop: f64) -> Result<Self> {
        geom.validate()?;
        let ds = geom.segment_length();
        let (s, c) = droop.sin_cos();
        let reference: Vec<ReferenceNode> = (0..geom.node_count)
            .map(|i| {
                let d = i as f64 * ds;
                ReferenceNode {
                    x: base_x + d * c,
                    z: base_z - d * s,
                    theta: -droop,
                }
            })
            .collect();
        Ok(Self::at_reference(reference))
    }

    pub fn at_reference(reference: Vec<ReferenceNode>) -> Self {
        let nodes = reference
            .iter()
            .map(|r| NodeState {
                x: r.x,
                z: r.z,
                theta: r.theta,
                ..NodeState::default()
            })
            .collect();
        Self {
            nodes,
            reference,
            frame_vx: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tip(&self) -> &NodeState {
        self.nodes.last().expect("rod has nodes")
    }

    /// Restoring anchor of node `i`: its reference offset carried by the base.
    pub fn anchor(&self, i: usize) -> (f64, f64) {
        let b = &self.nodes[0];
        let r0 = &self.reference[0];
        let r = &self.reference[i];
        (b.x + r.x - r0.x, b.z + r.z - r0.z)
    }

    pub fn is_finite(&self) -> bool {
        self.nodes.iter().all(|n| {
            n.x.is_finite()
                && n.z.is_finite()
                && n.theta.is_finite()
                && n.vx.is_finite()
                && n.vz.is_finite()
                && n.omega.is_finite()
        })
    }
}

/// Planar force and moment (about the y axis).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench2 {
    pub fx: f64,
    pub fz: f64,
    pub my: f64,
}

impl Wrench2 {
    pub fn new(fx: f64, fz: f64, my: f64) -> Self {
        Self { fx, fz, my }
    }

    /// Adds force `(fx, fz)` acting at offset `(dx, dz)` from the reference point.
    pub fn add_force_at(&mut self, dx: f64, dz: f64, fx: f64, fz: f64) {
        self.fx += fx;
        self.fz += fz;
        self.my += dz * fx - dx * fz;
    }

    pub fn scaled(self, s: f64) -> Self {
        Self::new(self.fx * s, self.fz * s, self.my * s)
    }
}

impl std::ops::Add for Wrench2 {
    type Output = Wrench2;
    fn add(self, o: Wrench2) -> Wrench2 {
        Wrench2::new(self.fx + o.fx, self.fz + o.fz, self.my + o.my)
    }
}

impl std::ops::AddAssign for Wrench2 {
    fn add_assign(&mut self, o: Wrench2) {
        *self = *self + o;
    }
}

impl std::ops::Neg for Wrench2 {
    type Output = Wrench2;
    fn neg(self) -> Wrench2 {
        Wrench2::new(-self.fx, -self.fz, -self.my)
    }
}

/// Per-node force/moment accumulator plus the totals needed for the base
/// reaction. Resultant moments are taken about the current base node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalLoads {
    pub fx: Vec<f64>,
    pub fz: Vec<f64>,
    pub my: Vec<f64>,
    /// Restoring spring loads, whose other end sits on the attachment.
    pub anchored: Wrench2,
    /// Tendon forces applied to the rod.
    pub tendon: Wrench2,
    /// Ground contact and friction forces applied to the rod.
    pub ground: Wrench2,
    /// Total normal contact force this pass (N).
    pub normal: f64,
}

impl NodalLoads {
    pub fn zeros(n: usize) -> Self {
        Self {
            fx: vec![0.0; n],
            fz: vec![0.0; n],
            my: vec![0.0; n],
            anchored: Wrench2::default(),
            tendon: Wrench2::default(),
            ground: Wrench2::default(),
            normal: 0.0,
        }
    }

    pub fn clear(&mut self) {
        self.fx.iter_mut().for_each(|v| *v = 0.0);
        self.fz.iter_mut().for_each(|v| *v = 0.0);
        self.my.iter_mut().for_each(|v| *v = 0.0);
        self.anchored = Wrench2::default();
        self.tendon = Wrench2::default();
        self.ground = Wrench2::default();
        self.normal = 0.0;
    }
}

/// Which nodes can touch the ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactSet {
    /// Every node (single-leg experiments).
    #[default]
    AllNodes,
    /// Only the free tip (whole-body model).
    TipOnly,
}

impl ContactSet {
    fn range(self, n: usize) -> std::ops::Range<usize> {
        match self {
            ContactSet::AllNodes => 0..n,
            ContactSet::TipOnly => n - 1..n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMode {
    /// Velocity first, then position with the new velocity.
    #[default]
    SemiImplicit,
    /// Position with the old velocity.
    Explicit,
}

/// Precomputed per-node sections and rest measures of a rod.
#[derive(Debug, Clone, PartialEq)]
pub struct RodModel {
    pub geom: RodGeometry,
    pub material: RodMaterial,
    pub sections: Vec<CrossSection>,
    /// Rest length of each segment, taken from the reference pose.
    pub rest_length: Vec<f64>,
    /// Rest orientation difference of each adjacent node pair.
    pub rest_bend: Vec<f64>,
}

impl RodModel {
    pub fn new(geom: RodGeometry, material: RodMaterial, reference: &[ReferenceNode]) -> Result<Self> {
        geom.validate()?;
        material.validate()?;
        if reference.len() != geom.node_count {
            return Err(Error::Dimension(format!(
                "reference has {} nodes, geometry {}",
                reference.len(),
                geom.node_count
            )));
        }
        let sections = (0..geom.node_count)
            .map(|i| cross_section(&geom, &material, i))
            .collect::<Result<Vec<_>>>()?;
        let rest_length: Vec<f64> = reference
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].z - w[0].z))
            .collect();
        if let Some(seg) = rest_length.iter().position(|&l| !(l > 0.0)) {
            return Err(Error::CoincidentNodes { segment: seg });
        }
        let rest_bend = reference.windows(2).map(|w| w[1].theta - w[0].theta).collect();
        Ok(Self {
            geom,
            material,
            sections,
            rest_length,
            rest_bend,
        })
    }

    pub fn axial_stiffness(&self, seg: usize) -> f64 {
        self.material.youngs_modulus * self.sections[seg].area
    }

    /// `E I / ds` of the bending pair `(i, i + 1)`.
    pub fn bending_stiffness(&self, pair: usize) -> f64 {
        self.material.youngs_modulus * self.sections[pair].second_moment / self.geom.segment_length()
    }

    pub fn total_mass(&self) -> f64 {
        self.sections.iter().map(|s| s.node_mass).sum()
    }
}

/// Current length and orientation of segment `i`.
pub fn segment_kinematics(state: &RodState, i: usize) -> Result<(f64, f64)> {
    if i + 1 >= state.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: state.len().saturating_sub(1),
        });
    }
    let a = &state.nodes[i];
    let b = &state.nodes[i + 1];
    let (dx, dz) = (b.x - a.x, b.z - a.z);
    let l = dx.hypot(dz);
    if !(l > 0.0) {
        return Err(Error::CoincidentNodes { segment: i });
    }
    Ok((l, dz.atan2(dx)))
}

/// Axial and bending loads between neighbouring nodes.
///
/// The axial force `E A eps` acts along the segment, pulling the two ends
/// together when stretched. The bending couple `(E I / ds) (dtheta - rest)`
/// is applied with the sign that lowers the bending energy.
pub fn internal_forces(state: &RodState, model: &RodModel, loads: &mut NodalLoads) -> Result<()> {
    let n = state.len();
    for i in 0..n - 1 {
        let (l, angle) = segment_kinematics(state, i)?;
        let l0 = model.rest_length[i];
        let strain = (l - l0) / l0;
        let f = model.axial_stiffness(i) * strain;
        let (s, c) = angle.sin_cos();
        loads.fx[i] += f * c;
        loads.fz[i] += f * s;
        loads.fx[i + 1] -= f * c;
        loads.fz[i + 1] -= f * s;

        let dtheta = state.nodes[i + 1].theta - state.nodes[i].theta - model.rest_bend[i];
        let m = model.bending_stiffness(i) * dtheta;
        loads.my[i] += m;
        loads.my[i + 1] -= m;
        if !(f.is_finite() && m.is_finite()) {
            return Err(Error::NonFinite {
                what: "internal force",
                step: i,
            });
        }
    }
    Ok(())
}

/// Penalty normal force on nodes below the ground plane; never adhesive.
pub fn contact_forces(state: &RodState, params: &ContactParams, set: ContactSet, loads: &mut NodalLoads) {
    let base = state.nodes[0];
    for i in set.range(state.len()) {
        let node = &state.nodes[i];
        if node.z < 0.0 {
            let depth = -node.z;
            let rate = -node.vz;
            let f = (params.stiffness * depth + params.damping * rate).max(0.0);
            loads.fz[i] += f;
            loads.normal += f;
            loads.ground.add_force_at(node.x - base.x, node.z - base.z, 0.0, f);
        }
    }
}

/// Coulomb friction on nodes at or below the ground plane.
pub fn friction_forces(state: &RodState, params: &ContactParams, set: ContactSet, loads: &mut NodalLoads) {
    let base = state.nodes[0];
    let magnitude = params.friction_magnitude();
    for i in set.range(state.len()) {
        let node = &state.nodes[i];
        if node.z <= 0.0 {
            let v = node.vx + state.frame_vx;
            if v.abs() < STICTION_BAND {
                continue;
            }
            let f = -magnitude * v.signum();
            loads.fx[i] += f;
            loads.ground.add_force_at(node.x - base.x, node.z - base.z, f, 0.0);
        }
    }
}

/// Virtual springs pulling each node back to its anchor.
pub fn restoring_forces(state: &RodState, stab: &StabilizationParams, loads: &mut NodalLoads) {
    let base = state.nodes[0];
    for i in 1..state.len() {
        let node = &state.nodes[i];
        let (ax, az) = state.anchor(i);
        let fx = -stab.restoring * (node.x - ax);
        let fz = -stab.restoring * (node.z - az);
        loads.fx[i] += fx;
        loads.fz[i] += fz;
        loads.anchored.add_force_at(node.x - base.x, node.z - base.z, fx, fz);
    }
}

/// Linear damping on every degree of freedom, in the leg's own
/// coordinates.
pub fn damping_forces(state: &RodState, stab: &StabilizationParams, loads: &mut NodalLoads) {
    for i in 1..state.len() {
        let node = &state.nodes[i];
        loads.fx[i] -= stab.damping * node.vx;
        loads.fz[i] -= stab.damping * node.vz;
        loads.my[i] -= stab.damping * node.omega;
    }
}

/// Nodal accelerations and the clamp load that holds the base node.
#[derive(Debug, Clone, PartialEq)]
pub struct Accelerations {
    /// `(ax, az, alpha)` per node.
    pub nodes: Vec<[f64; 3]>,
    /// Load the clamp applies to node 0 to realise the prescribed motion.
    pub clamp: Wrench2,
}

/// Newton-Euler per node with gravity; node 0 follows `base_acc`.
pub fn assemble_accelerations(
    loads: &NodalLoads,
    model: &RodModel,
    gravity: f64,
    base_acc: [f64; 3],
) -> Accelerations {
    let n = model.sections.len();
    let mut nodes = Vec::with_capacity(n);
    nodes.push(base_acc);
    for i in 1..n {
        let s = &model.sections[i];
        nodes.push([
            loads.fx[i] / s.node_mass,
            loads.fz[i] / s.node_mass - gravity,
            loads.my[i] / s.rot_inertia,
        ]);
    }
    let s0 = &model.sections[0];
    let clamp = Wrench2::new(
        s0.node_mass * base_acc[0] - loads.fx[0],
        s0.node_mass * base_acc[1] - (loads.fz[0] - s0.node_mass * gravity),
        s0.rot_inertia * base_acc[2] - loads.my[0],
    );
    Accelerations { nodes, clamp }
}

/// Advances the state by `dt` in place.
pub fn euler_step_in_place(
    state: &mut RodState,
    acc: &Accelerations,
    dt: f64,
    mode: IntegrationMode,
    step: usize,
) -> Result<()> {
    for (node, a) in state.nodes.iter_mut().zip(&acc.nodes) {
        let (vx, vz, w) = (node.vx, node.vz, node.omega);
        node.vx += a[0] * dt;
        node.vz += a[1] * dt;
        node.omega += a[2] * dt;
        match mode {
            IntegrationMode::SemiImplicit => {
                node.x += node.vx * dt;
                node.z += node.vz * dt;
                node.theta += node.omega * dt;
            }
            IntegrationMode::Explicit => {
                node.x += vx * dt;
                node.z += vz * dt;
                node.theta += w * dt;
            }
        }
    }
    if !state.is_finite() {
        return Err(Error::NonFinite { what: "rod state", step });
    }
    Ok(())
}

pub fn euler_step(
    state: &RodState,
    acc: &Accelerations,
    dt: f64,
    mode: IntegrationMode,
) -> Result<RodState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut next = state.clone();
    euler_step_in_place(&mut next, acc, dt, mode, 0)?;
    Ok(next)
}

/// Axial plus bending strain energy.
pub fn elastic_energy(state: &RodState, model: &RodModel) -> Result<f64> {
    let mut e = 0.0;
    for i in 0..state.len() - 1 {
        let (l, _) = segment_kinematics(state, i)?;
        let l0 = model.rest_length[i];
        let strain = (l - l0) / l0;
        e += 0.5 * model.axial_stiffness(i) * strain * strain * l0;
        let d = state.nodes[i + 1].theta - state.nodes[i].theta - model.rest_bend[i];
        e += 0.5 * model.bending_stiffness(i) * d * d;
    }
    Ok(e)
}

/// Kinetic, elastic, gravitational and restoring-spring energy.
pub fn mechanical_energy(
    state: &RodState,
    model: &RodModel,
    stab: &StabilizationParams,
    gravity: f64,
) -> Result<f64> {
    let mut e = elastic_energy(state, model)?;
    for (i, (node, s)) in state.nodes.iter().zip(&model.sections).enumerate() {
        e += 0.5 * s.node_mass * (node.vx * node.vx + node.vz * node.vz);
        e += 0.5 * s.rot_inertia * node.omega * node.omega;
        e += s.node_mass * gravity * node.z;
        let (ax, az) = state.anchor(i);
        let (dx, dz) = (node.x - ax, node.z - az);
        e += 0.5 * stab.restoring * (dx * dx + dz * dz);
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn nominal() -> (RodGeometry, RodMaterial) {
        (RodGeometry::default(), RodMaterial::default())
    }

    #[test]
    fn thickness_taper() {
        let (g, _) = nominal();
        assert_relative_eq!(g.node_thickness(0).unwrap(), 0.0135, epsilon = 1e-15);
        assert_relative_eq!(g.node_thickness(30).unwrap(), 0.0035, epsilon = 1e-15);
        assert_relative_eq!(g.node_thickness(15).unwrap(), 0.0085, epsilon = 1e-15);
        assert!(matches!(
            g.node_thickness(31),
            Err(Error::IndexOutOfRange { index: 31, .. })
        ));
    }

    #[test]
    fn base_cross_section() {
        let (g, m) = nominal();
        let cs = cross_section(&g, &m, 0).unwrap();
        assert_relative_eq!(cs.area, 2.7e-4, max_relative = 1e-12);
        assert_relative_eq!(cs.second_moment, 4.100625e-9, max_relative = 1e-9);
        assert_relative_eq!(cs.node_mass, 1200.0 * 2.7e-4 * 0.19 / 30.0, max_relative = 1e-12);
        assert_relative_eq!(cs.node_mass, 2.052e-3, max_relative = 1e-3);
    }

    #[test]
    fn uniform_rod_has_constant_area() {
        let g = RodGeometry {
            thickness_tip: 0.0135,
            ..RodGeometry::default()
        };
        let m = RodMaterial::default();
        let a0 = cross_section(&g, &m, 0).unwrap().area;
        for i in 0..g.node_count {
            assert_eq!(cross_section(&g, &m, i).unwrap().area, a0);
        }
    }

    #[test]
    fn geometry_rejects_too_few_nodes() {
        let g = RodGeometry {
            node_count: 2,
            ..RodGeometry::default()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn segment_kinematics_cases() {
        let g = RodGeometry::default();
        let ds = g.segment_length();
        let s = RodState::straight(&g, 0.0, 0.0, 0.0).unwrap();
        for i in 0..30 {
            let (l, a) = segment_kinematics(&s, i).unwrap();
            assert_relative_eq!(l, ds, max_relative = 1e-12);
            assert_eq!(a, 0.0);
        }
        let mut v = s.clone();
        v.nodes[1].x = 0.0;
        v.nodes[1].z = ds;
        let (l, a) = segment_kinematics(&v, 0).unwrap();
        assert_relative_eq!(l, ds, max_relative = 1e-12);
        assert_relative_eq!(a, std::f64::consts::FRAC_PI_2);

        let mut w = s.clone();
        w.nodes[1].x = 0.0063333 * 1.1;
        assert_relative_eq!(segment_kinematics(&w, 0).unwrap().0, 0.0063333 * 1.1);

        let mut c = s.clone();
        c.nodes[1].x = 0.0;
        assert!(matches!(
            segment_kinematics(&c, 0),
            Err(Error::CoincidentNodes { segment: 0 })
        ));
        assert!(segment_kinematics(&s, 30).is_err());
    }

    #[test]
    fn reference_configuration_has_no_internal_load() {
        let (g, m) = nominal();
        let s = RodState::straight(&g, 0.0, 0.05, 0.3).unwrap();
        let model = RodModel::new(g, m, &s.reference).unwrap();
        let mut loads = NodalLoads::zeros(s.len());
        internal_forces(&s, &model, &mut loads).unwrap();
        assert!(loads.fx.iter().chain(&loads.fz).chain(&loads.my).all(|&v| v == 0.0));
    }

    #[test]
    fn ten_percent_stretch_at_base() {
        let (g, m) = nominal();
        let mut s = RodState::straight(&g, 0.0, 0.0, 0.0).unwrap();
        let model = RodModel::new(g, m, &s.reference).unwrap();
        let ds = model.rest_length[0];
        // stretch segment 0 only by moving node 0 back
        s.nodes[0].x = -0.1 * ds;
        let mut loads = NodalLoads::zeros(s.len());
        internal_forces(&s, &model, &mut loads).unwrap();
        assert_relative_eq!(loads.fx[0], 270.0, max_relative = 1e-9);
        assert_relative_eq!(loads.fx[1], -270.0, max_relative = 1e-9);
    }

    #[test]
    fn contact_cases() {
        let p = ContactParams::default();
        let g = RodGeometry::default();
        let mut s = RodState::straight(&g, 0.0, 0.05, 0.0).unwrap();
        let n = s.len() - 1;
        let mut loads = NodalLoads::zeros(s.len());

        s.nodes[n].z = 0.001;
        contact_forces(&s, &p, ContactSet::AllNodes, &mut loads);
        assert_eq!(loads.fz[n], 0.0);

        s.nodes[n].z = -0.001;
        s.nodes[n].vz = -0.01;
        contact_forces(&s, &p, ContactSet::AllNodes, &mut loads);
        assert_relative_eq!(loads.fz[n], 100.1, max_relative = 1e-12);

        loads.clear();
        s.nodes[n].vz = 0.2;
        contact_forces(&s, &p, ContactSet::TipOnly, &mut loads);
        assert_relative_eq!(loads.fz[n], 98.0, max_relative = 1e-12);

        loads.clear();
        s.nodes[n].vz = 20.0;
        contact_forces(&s, &p, ContactSet::TipOnly, &mut loads);
        assert_eq!(loads.fz[n], 0.0);
    }

    #[test]
    fn friction_cases() {
        let p = ContactParams::default();
        let g = RodGeometry::default();
        let mut s = RodState::straight(&g, 0.0, 0.05, 0.0).unwrap();
        let n = s.len() - 1;
        let mut loads = NodalLoads::zeros(s.len());
        s.nodes[n].vx = 0.05;
        friction_forces(&s, &p, ContactSet::TipOnly, &mut loads);
        assert_eq!(loads.fx[n], 0.0);

        s.nodes[n].z = 0.0;
        friction_forces(&s, &p, ContactSet::TipOnly, &mut loads);
        assert_relative_eq!(loads.fx[n], -0.1 * (0.04 + 2.16 / 4.0) * 9.81, max_relative = 1e-12);
        assert_relative_eq!(loads.fx[n], -0.5690, epsilon = 1e-4);

        loads.clear();
        s.nodes[n].vx = -0.05;
        friction_forces(&s, &p, ContactSet::TipOnly, &mut loads);
        assert_relative_eq!(loads.fx[n], 0.5690, epsilon = 1e-4);

        loads.clear();
        s.nodes[n].vx = 5e-5;
        friction_forces(&s, &p, ContactSet::TipOnly, &mut loads);
        assert_eq!(loads.fx[n], 0.0);
    }

    #[test]
    fn restoring_and_damping_cases() {
        let g = RodGeometry::default();
        let stab = StabilizationParams::default();
        let mut s = RodState::straight(&g, 0.0, 0.05, 0.0).unwrap();
        let mut loads = NodalLoads::zeros(s.len());
        restoring_forces(&s, &stab, &mut loads);
        damping_forces(&s, &stab, &mut loads);
        assert!(loads.fx.iter().chain(&loads.fz).chain(&loads.my).all(|&v| v == 0.0));

        s.nodes[5].x += 0.01;
        s.nodes[6].z -= 0.005;
        restoring_forces(&s, &stab, &mut loads);
        assert_relative_eq!(loads.fx[5], -8.0, max_relative = 1e-9);
        assert_relative_eq!(loads.fz[6], 4.0, max_relative = 1e-9);

        loads.clear();
        s.nodes[7].vx = 1.0;
        s.nodes[8].omega = 2.0;
        damping_forces(&s, &stab, &mut loads);
        assert_relative_eq!(loads.fx[7], -0.1);
        assert_relative_eq!(loads.my[8], -0.2);
    }

    #[test]
    fn accelerations_and_clamp() {
        let (g, m) = nominal();
        let s = RodState::straight(&g, 0.0, 0.05, 0.0).unwrap();
        let model = RodModel::new(g, m, &s.reference).unwrap();
        let mut loads = NodalLoads::zeros(s.len());
        let acc = assemble_accelerations(&loads, &model, GRAVITY, [0.0; 3]);
        for a in &acc.nodes[1..] {
            assert_eq!(a[1], -9.81);
        }
        loads.fz[4] = model.sections[4].node_mass * GRAVITY;
        loads.fx[0] = 123.0;
        let acc = assemble_accelerations(&loads, &model, GRAVITY, [0.5, 0.25, 0.0]);
        assert!(acc.nodes[4][1].abs() < 1e-12);
        assert_eq!(acc.nodes[0], [0.5, 0.25, 0.0]);
        assert_relative_eq!(acc.clamp.fx, model.sections[0].node_mass * 0.5 - 123.0);
    }

    #[test]
    fn euler_step_cases() {
        let (g, m) = nominal();
        let s = RodState::straight(&g, 0.0, 0.05, 0.0).unwrap();
        let model = RodModel::new(g, m, &s.reference).unwrap();
        let zero = Accelerations {
            nodes: vec![[0.0; 3]; s.len()],
            clamp: Wrench2::default(),
        };
        assert_eq!(euler_step(&s, &zero, 1e-4, IntegrationMode::SemiImplicit).unwrap(), s);

        let loads = NodalLoads::zeros(s.len());
        let acc = assemble_accelerations(&loads, &model, GRAVITY, [0.0; 3]);
        let next = euler_step(&s, &acc, 1e-4, IntegrationMode::SemiImplicit).unwrap();
        assert_relative_eq!(next.nodes[3].vz, -9.81e-4, max_relative = 1e-12);
        assert_relative_eq!(next.nodes[3].z, 0.05 - 9.81e-8, max_relative = 1e-12);
        let explicit = euler_step(&s, &acc, 1e-4, IntegrationMode::Explicit).unwrap();
        assert_eq!(explicit.nodes[3].z, 0.05);
        assert!(euler_step(&s, &acc, 0.0, IntegrationMode::SemiImplicit).is_err());
    }

    #[test]
    fn half_steps_agree_with_full_step_to_second_order() {
        // constant acceleration: x(t) exact is x0 + a t^2 / 2
        let a = -9.81;
        let run = |dt: f64, steps: usize| {
            let (mut v, mut x) = (0.0f64, 0.0f64);
            for _ in 0..steps {
                v += a * dt;
                x += v * dt;
            }
            x
        };
        let h = 1e-3;
        let full = run(h, 1);
        let halves = run(h / 2.0, 2);
        assert!((full - halves).abs() <= 10.0 * h * h);
    }
}
