//! Stepping a single leg forward in time.

use std::io::Write;

use serde::Serialize;

use super::{
    assemble_accelerations, contact_forces, damping_forces, euler_step_in_place,
    friction_forces, internal_forces, restoring_forces, NodalLoads, NodeState, RodModel,
    RodState, Wrench2,
};
use crate::error::{Error, Result};
use crate::leg::{apply_tendon, base_reaction, LegDefinition, TendonSchedule};

/// Fraction of the explicit stability bound used for each sub-step.
const STABILITY_SAFETY: f64 = 0.5;

/// Largest stable step of the damped semi-implicit update for the stiffest
/// node, from a Gershgorin bound on the local stiffness.
fn stable_substep(def: &LegDefinition, model: &RodModel) -> f64 {
    let n = model.sections.len();
    let c = def.stabilization.damping;
    let mut h = f64::INFINITY;
    // h^2 w^2 + 2 h g <= 4 s, solved for h
    let bound = |w2: f64, g: f64| -> f64 {
        let s = 4.0 * STABILITY_SAFETY;
        if w2 <= 0.0 {
            if g > 0.0 { s / (2.0 * g) } else { f64::INFINITY }
        } else {
            (-g + (g * g + s * w2).sqrt()) / w2
        }
    };
    for i in 1..n {
        let sec = &model.sections[i];
        let mut k_ax = 0.0;
        let mut k_b = 0.0;
        if i > 0 {
            k_ax += model.axial_stiffness(i - 1) / model.rest_length[i - 1];
            k_b += model.bending_stiffness(i - 1);
        }
        if i + 1 < n {
            k_ax += model.axial_stiffness(i) / model.rest_length[i];
            k_b += model.bending_stiffness(i);
        }
        let k_t = 2.0 * k_ax + def.stabilization.restoring + def.contact.stiffness;
        let g_t = (c + def.contact.damping) / sec.node_mass;
        h = h.min(bound(k_t / sec.node_mass, g_t));
        h = h.min(bound(2.0 * k_b / sec.rot_inertia, c / sec.rot_inertia));
    }
    h
}

/// Time-averaged loads over one outer step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepReport {
    /// Wrench the attachment applies to the leg (about the base node).
    pub support: Wrench2,
    /// Tendon resultant applied to the leg (about the base node).
    pub tendon: Wrench2,
    /// Contact plus friction resultant (about the base node).
    pub ground: Wrench2,
    /// Total normal contact force.
    pub normal: f64,
}

/// Owns a leg's state and steps it with automatic sub-stepping.
#[derive(Debug, Clone)]
pub struct LegSimulator {
    pub def: LegDefinition,
    pub model: RodModel,
    pub state: RodState,
    loads: NodalLoads,
    substeps: usize,
    step: usize,
    time: f64,
    base_acc: [f64; 3],
}

impl LegSimulator {
    pub fn new(def: LegDefinition) -> Result<Self> {
        def.validate()?;
        let state = def.reference_state()?;
        Self::with_state(def, state)
    }

    pub fn with_state(def: LegDefinition, state: RodState) -> Result<Self> {
        def.validate()?;
        let model = RodModel::new(def.geom, def.material, &state.reference)?;
        let h = stable_substep(&def, &model);
        let substeps = (def.dt / h).ceil().max(1.0) as usize;
        let n = state.len();
        Ok(Self {
            def,
            model,
            state,
            loads: NodalLoads::zeros(n),
            substeps,
            step: 0,
            time: 0.0,
            base_acc: [0.0; 3],
        })
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Prescribes the base node motion for the following steps.
    pub fn set_base(&mut self, x: f64, z: f64, vx: f64, vz: f64, acc: [f64; 3]) {
        let b = &mut self.state.nodes[0];
        b.x = x;
        b.z = z;
        b.vx = vx;
        b.vz = vz;
        self.base_acc = acc;
    }

    /// Loads of one force pass on the current state.
    fn evaluate(&mut self, tension: f64) -> Result<super::Accelerations> {
        let def = &self.def;
        let loads = &mut self.loads;
        loads.clear();
        internal_forces(&self.state, &self.model, loads)?;
        apply_tendon(&self.state, &def.routing, tension, loads)?;
        contact_forces(&self.state, &def.contact, def.contact_set, loads);
        friction_forces(&self.state, &def.contact, def.contact_set, loads);
        restoring_forces(&self.state, &def.stabilization, loads);
        damping_forces(&self.state, &def.stabilization, loads);
        Ok(assemble_accelerations(loads, &self.model, def.contact.gravity, self.base_acc))
    }

    /// Advances one outer step `dt` under constant tendon tension.
    pub fn advance(&mut self, tension: f64) -> Result<StepReport> {
        let h = self.def.dt / self.substeps as f64;
        let mut report = StepReport::default();
        for _ in 0..self.substeps {
            let acc = self.evaluate(tension)?;
            report.support += base_reaction(&self.loads, &acc);
            report.tendon += self.loads.tendon;
            report.ground += self.loads.ground;
            report.normal += self.loads.normal;
            euler_step_in_place(&mut self.state, &acc, h, self.def.mode, self.step)?;
        }
        let inv = 1.0 / self.substeps as f64;
        report.support = report.support.scaled(inv);
        report.tendon = report.tendon.scaled(inv);
        report.ground = report.ground.scaled(inv);
        report.normal *= inv;
        self.step += 1;
        self.time = self.step as f64 * self.def.dt;
        Ok(report)
    }

    /// Loads on the current state without stepping.
    pub fn probe(&mut self, tension: f64) -> Result<StepReport> {
        let acc = self.evaluate(tension)?;
        Ok(StepReport {
            support: base_reaction(&self.loads, &acc),
            tendon: self.loads.tendon,
            ground: self.loads.ground,
            normal: self.loads.normal,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RodFrame {
    pub t: f64,
    pub nodes: Vec<NodeState>,
    /// Support wrench averaged over the step that ended at `t`.
    pub reaction: Wrench2,
    pub tension: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RodTrajectory {
    pub frames: Vec<RodFrame>,
}

impl RodTrajectory {
    pub fn tip_z(&self) -> Vec<(f64, f64)> {
        self.frames
            .iter()
            .map(|f| (f.t, f.nodes.last().map_or(f64::NAN, |n| n.z)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,node,x,z,theta,vx,vz,omega")?;
        for f in &self.frames {
            for (i, n) in f.nodes.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    f.t, i, n.x, n.z, n.theta, n.vx, n.vz, n.omega
                )?;
            }
        }
        Ok(())
    }

    pub fn write_reactions_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,tension,fx,fz,my")?;
        for f in &self.frames {
            writeln!(
                w,
                "{},{},{},{},{}",
                f.t, f.tension, f.reaction.fx, f.reaction.fz, f.reaction.my
            )?;
        }
        Ok(())
    }
}

/// Runs a leg on a fixed stand under a tension schedule, recording every
/// `record_stride` outer steps (and the initial state).
pub fn simulate_leg(
    leg: &LegDefinition,
    schedule: &TendonSchedule,
    duration: f64,
    record_stride: usize,
) -> Result<RodTrajectory> {
    if !(duration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let stride = record_stride.max(1);
    let mut sim = LegSimulator::new(leg.clone())?;
    let steps = (duration / leg.dt).round() as usize;
    let mut traj = RodTrajectory::default();
    let first = sim.probe(schedule.tension(0.0)).map_err(|e| wrap(leg, 0.0, e))?;
    traj.frames.push(RodFrame {
        t: 0.0,
        nodes: sim.state.nodes.clone(),
        reaction: first.support,
        tension: schedule.tension(0.0),
    });
    for k in 0..steps {
        let t = k as f64 * leg.dt;
        let tension = schedule.tension(t);
        let report = sim.advance(tension).map_err(|e| wrap(leg, t, e))?;
        if (k + 1) % stride == 0 {
            traj.frames.push(RodFrame {
                t: sim.time(),
                nodes: sim.state.nodes.clone(),
                reaction: report.support,
                tension,
            });
        }
    }
    Ok(traj)
}

fn wrap(leg: &LegDefinition, time: f64, e: Error) -> Error {
    Error::Leg {
        leg: leg.name.clone(),
        time,
        source: Box::new(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_leg_needs_a_few_substeps() {
        let sim = LegSimulator::new(LegDefinition::default()).unwrap();
        assert!((2..=12).contains(&sim.substeps()), "{}", sim.substeps());
    }

    #[test]
    fn csv_header() {
        let traj = simulate_leg(&LegDefinition::default(), &TendonSchedule::default(), 1e-3, 5).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,node,x,z,theta,vx,vz,omega\n"));
        assert_eq!(traj.frames.len(), 3);
    }
}
