//! Time-switched gait phases and reference trajectories.

use serde::{Deserialize, Serialize};

use crate::body::LegId;
use crate::error::{Error, Result};
use crate::leg::{ScheduledProfile, TendonProfile, TendonSchedule};

/// Friction coefficient of the contracting front leg.
pub const MU_GRIP: f64 = 0.6;
/// Friction coefficient of the relaxing front leg.
pub const MU_FRONT: f64 = 0.2;
/// Friction coefficient of the back legs.
pub const MU_BACK: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitKind {
    Walk,
    Crawl,
    Omni60,
    Stand,
}

impl GaitKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "walk" => Ok(Self::Walk),
            "crawl" => Ok(Self::Crawl),
            "omni60" | "omni" => Ok(Self::Omni60),
            "stand" => Ok(Self::Stand),
            other => Err(Error::Parse(format!("unknown gait '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitPhase {
    pub duration: f64,
    /// Legs whose tendons contract during this phase.
    pub active: Vec<LegId>,
    /// Friction coefficient of each leg, order FL, FR, BL, BR.
    pub mu: [f64; 4],
    /// Legs off the ground (vertical force bound 0). Empty by default.
    #[serde(default)]
    pub swing: Vec<LegId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitSchedule {
    pub name: GaitKind,
    pub phases: Vec<GaitPhase>,
    /// Peak tendon tension of contracting legs.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn default_t_max() -> f64 {
    TendonProfile::default().t_max
}

/// Per-leg friction with `grip` contracting and the other front leg relaxing.
fn walk_mu(grip: LegId) -> [f64; 4] {
    LegId::ALL.map(|leg| {
        if leg == grip {
            MU_GRIP
        } else if leg.is_front() {
            MU_FRONT
        } else {
            MU_BACK
        }
    })
}

impl GaitSchedule {
    /// Two-phase alternation of the front legs over a 5 s cycle.
    pub fn walk() -> Self {
        let phase = |leg| GaitPhase {
            duration: 2.5,
            active: vec![leg],
            mu: walk_mu(leg),
            swing: vec![],
        };
        Self {
            name: GaitKind::Walk,
            phases: vec![phase(LegId::FL), phase(LegId::FR)],
            t_max: default_t_max(),
        }
    }

    /// One leg at a time, FL, BR, FR, BL, 2 s each.
    pub fn crawl() -> Self {
        let phases = [LegId::FL, LegId::BR, LegId::FR, LegId::BL]
            .into_iter()
            .map(|leg| GaitPhase {
                duration: 2.0,
                active: vec![leg],
                mu: walk_mu(leg),
                swing: vec![],
            })
            .collect();
        Self {
            name: GaitKind::Crawl,
            phases,
            t_max: default_t_max(),
        }
    }

    /// Four 1.25 s phases; the heading comes from the reference command.
    pub fn omni60() -> Self {
        let phases = [LegId::FL, LegId::BR, LegId::FR, LegId::BL]
            .into_iter()
            .map(|leg| GaitPhase {
                duration: 1.25,
                active: vec![leg],
                mu: walk_mu(leg),
                swing: vec![],
            })
            .collect();
        Self {
            name: GaitKind::Omni60,
            phases,
            t_max: default_t_max(),
        }
    }

    /// Single phase, no contraction, walk back-leg friction everywhere.
    pub fn stand() -> Self {
        Self {
            name: GaitKind::Stand,
            phases: vec![GaitPhase {
                duration: 1.0,
                active: vec![],
                mu: [MU_FRONT, MU_FRONT, MU_BACK, MU_BACK],
                swing: vec![],
            }],
            t_max: 0.0,
        }
    }

    pub fn preset(kind: GaitKind) -> Self {
        match kind {
            GaitKind::Walk => Self::walk(),
            GaitKind::Crawl => Self::crawl(),
            GaitKind::Omni60 => Self::omni60(),
            GaitKind::Stand => Self::stand(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("gait has no phases".into()));
        }
        for (k, p) in self.phases.iter().enumerate() {
            if !(p.duration > 0.0) {
                return Err(Error::Config(format!("phase {k} duration must be positive")));
            }
            if p.mu.iter().any(|m| !(*m > 0.0 && *m <= 1.0)) {
                return Err(Error::Config(format!("phase {k} friction must lie in (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn cycle_duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Phase containing `t` (taken modulo the cycle).
    pub fn phase_at(&self, t: f64) -> PhaseInfo<'_> {
        let cycle = self.cycle_duration();
        let local = t.max(0.0).rem_euclid(cycle);
        let mut start = 0.0;
        for (index, phase) in self.phases.iter().enumerate() {
            // compare against the running end so float sums cannot skip the last phase
            if local < start + phase.duration || index + 1 == self.phases.len() {
                return PhaseInfo {
                    index,
                    phase,
                    elapsed: local - start,
                };
            }
            start += phase.duration;
        }
        unreachable!("gait has at least one phase")
    }

    /// Tendon pulses for each leg: a ramp/hold/decay pulse spanning every
    /// phase in which the leg contracts, repeating each cycle.
    pub fn tendon_schedules(&self) -> [TendonSchedule; 4] {
        let cycle = self.cycle_duration();
        let mut out: [TendonSchedule; 4] = Default::default();
        let mut start = 0.0;
        for phase in &self.phases {
            let third = phase.duration / 3.0;
            for leg in &phase.active {
                out[leg.index()].entries.push(ScheduledProfile {
                    start,
                    profile: TendonProfile {
                        t_ramp: third,
                        t_hold: third,
                        t_decay: third,
                        t_max: self.t_max,
                    },
                });
            }
            start += phase.duration;
        }
        for s in &mut out {
            s.period = Some(cycle);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseInfo<'a> {
    pub index: usize,
    pub phase: &'a GaitPhase,
    /// Time since the phase started.
    pub elapsed: f64,
}

impl PhaseInfo<'_> {
    pub fn is_swing(&self, leg: LegId) -> bool {
        self.phase.swing.contains(&leg)
    }

    pub fn is_active(&self, leg: LegId) -> bool {
        self.phase.active.contains(&leg)
    }
}

/// Number of entries in the MPC state.
pub const STATE_DIM: usize = 13;

/// Index of each entry in the MPC state vector.
pub mod idx {
    pub const ROLL: usize = 0;
    pub const PITCH: usize = 1;
    pub const YAW: usize = 2;
    pub const PX: usize = 3;
    pub const PY: usize = 4;
    pub const PZ: usize = 5;
    pub const WX: usize = 6;
    pub const WY: usize = 7;
    pub const WZ: usize = 8;
    pub const VX: usize = 9;
    pub const VY: usize = 10;
    pub const VZ: usize = 11;
    pub const G: usize = 12;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCommand {
    pub vx: f64,
    pub vy: f64,
    pub pz: f64,
    /// Reference path position at t = 0.
    #[serde(default)]
    pub origin: [f64; 2],
    /// Gravity magnitude placed in the augmented state.
    #[serde(default = "crate::rod::default_gravity")]
    pub gravity: f64,
}

impl ReferenceCommand {
    pub fn walk() -> Self {
        Self {
            vx: 0.08,
            vy: 0.0,
            pz: 0.04,
            origin: [0.0; 2],
            gravity: crate::rod::GRAVITY,
        }
    }

    pub fn omni60() -> Self {
        Self {
            vx: 0.052,
            vy: 0.09,
            ..Self::walk()
        }
    }

    pub fn stand() -> Self {
        Self {
            vx: 0.0,
            vy: 0.0,
            ..Self::walk()
        }
    }

    pub fn for_gait(kind: GaitKind) -> Self {
        match kind {
            GaitKind::Walk | GaitKind::Crawl => Self::walk(),
            GaitKind::Omni60 => Self::omni60(),
            GaitKind::Stand => Self::stand(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pz > 0.0 && self.vx.is_finite() && self.vy.is_finite()) {
            return Err(Error::Config("reference height must be positive".into()));
        }
        Ok(())
    }

    /// Reference state at time `t`.
    pub fn state_at(&self, t: f64) -> [f64; STATE_DIM] {
        let mut x = [0.0; STATE_DIM];
        x[idx::PX] = self.origin[0] + self.vx * t;
        x[idx::PY] = self.origin[1] + self.vy * t;
        x[idx::PZ] = self.pz;
        x[idx::VX] = self.vx;
        x[idx::VY] = self.vy;
        x[idx::G] = -self.gravity;
        x
    }
}

/// `h` reference states at `t0, t0 + dt, ...`.
pub fn reference_trajectory(
    command: &ReferenceCommand,
    t0: f64,
    h: usize,
    dt: f64,
) -> Result<Vec<[f64; STATE_DIM]>> {
    if h == 0 || !(dt > 0.0) {
        return Err(Error::InvalidArgument(
            "horizon must be >= 1 and dt positive".into(),
        ));
    }
    Ok((0..h).map(|k| command.state_at(t0 + k as f64 * dt)).collect())
}
