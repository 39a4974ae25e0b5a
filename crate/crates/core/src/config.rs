//! TOML run configuration. Every key is optional and falls back to the
//! built-in defaults.
//!
//! ```toml
//! gait = "walk"
//!
//! [rod]
//! length = 0.19
//! nodes = 31
//! h_base = 0.0135
//!
//! [mpc]
//! horizon = 15
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::body::{EulerRates, RobotConfig, TorsoBody};
use crate::error::{Error, Result};
use crate::gait::{GaitKind, GaitSchedule, ReferenceCommand};
use crate::harness::SuiteSettings;
use crate::leg::{ForceAngleMap, LegDefinition, TendonProfile};
use crate::mpc::{Discretization, MpcConfig};
use crate::rod::{ContactSet, IntegrationMode};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RodSection {
    pub length: Option<f64>,
    pub nodes: Option<usize>,
    pub width: Option<f64>,
    pub h_base: Option<f64>,
    pub h_tip: Option<f64>,
    pub youngs_modulus: Option<f64>,
    pub density: Option<f64>,
    pub dt: Option<f64>,
    /// "semi_implicit" or "explicit".
    pub integrator: Option<IntegrationMode>,
    pub base_z: Option<f64>,
    /// Degrees below horizontal of the single-leg reference.
    pub droop_deg: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactSection {
    pub stiffness: Option<f64>,
    pub damping: Option<f64>,
    pub friction_mu: Option<f64>,
    /// "all_nodes" or "tip_only" (single-leg runs).
    pub nodes: Option<ContactSet>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilizationSection {
    pub damping: Option<f64>,
    pub restoring: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TendonSection {
    pub t_max: Option<f64>,
    pub t_ramp: Option<f64>,
    pub t_hold: Option<f64>,
    pub t_decay: Option<f64>,
    pub pulley_angle_deg: Option<f64>,
    pub pulley_radius: Option<f64>,
    pub routed_fraction: Option<f64>,
    pub angle_max_deg: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    pub torso_mass: Option<f64>,
    pub torso_dims: Option<[f64; 3]>,
    pub leg_mass: Option<f64>,
    /// Leg droop in radians.
    pub droop: Option<f64>,
    pub gravity: Option<f64>,
    pub include_couples: Option<bool>,
    pub euler_rates: Option<EulerRates>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: Option<usize>,
    pub dt: Option<f64>,
    pub q: Option<Vec<f64>>,
    pub r: Option<f64>,
    pub f_max: Option<f64>,
    pub discretization: Option<Discretization>,
    pub max_iter: Option<usize>,
    pub eps_abs: Option<f64>,
    pub eps_rel: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSection {
    pub n_mpc: Option<usize>,
    pub n_rollout: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub threshold: Option<f64>,
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub gait: Option<GaitKind>,
    pub rod: RodSection,
    pub contact: ContactSection,
    pub stabilization: StabilizationSection,
    pub tendon: TendonSection,
    pub robot: RobotSection,
    pub mpc: MpcSection,
    pub suite: SuiteSection,
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub gait: GaitKind,
    /// Single-leg runs.
    pub leg: LegDefinition,
    pub tendon: TendonProfile,
    pub robot: RobotConfig,
    pub mpc: MpcConfig,
    pub angle_map: ForceAngleMap,
    pub suite: SuiteSettings,
    pub noise_sigma: f64,
    pub suite_duration: f64,
}

impl Default for Settings {
    fn default() -> Self {
        ConfigFile::default().resolve().expect("defaults are valid")
    }
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(&self) -> Result<Settings> {
        let mut leg = LegDefinition::default();
        let r = &self.rod;
        set(&mut leg.geom.length, r.length);
        set(&mut leg.geom.node_count, r.nodes);
        set(&mut leg.geom.width, r.width);
        set(&mut leg.geom.thickness_base, r.h_base);
        set(&mut leg.geom.thickness_tip, r.h_tip);
        set(&mut leg.material.youngs_modulus, r.youngs_modulus);
        set(&mut leg.material.density, r.density);
        set(&mut leg.dt, r.dt);
        set(&mut leg.mode, r.integrator);
        set(&mut leg.base_z, r.base_z);
        set(&mut leg.droop, r.droop_deg.map(f64::to_radians));
        let c = &self.contact;
        set(&mut leg.contact.stiffness, c.stiffness);
        set(&mut leg.contact.damping, c.damping);
        set(&mut leg.contact.friction_mu, c.friction_mu);
        set(&mut leg.contact_set, c.nodes);
        set(&mut leg.stabilization.damping, self.stabilization.damping);
        set(&mut leg.stabilization.restoring, self.stabilization.restoring);
        let t = &self.tendon;
        set(&mut leg.routing.pulley_angle, t.pulley_angle_deg.map(f64::to_radians));
        set(&mut leg.routing.pulley_radius, t.pulley_radius);
        set(&mut leg.routing.routed_fraction, t.routed_fraction);
        let mut tendon = TendonProfile::default();
        set(&mut tendon.t_max, t.t_max);
        set(&mut tendon.t_ramp, t.t_ramp);
        set(&mut tendon.t_hold, t.t_hold);
        set(&mut tendon.t_decay, t.t_decay);
        let mut angle_map = ForceAngleMap::default();
        set(&mut angle_map.angle_max, t.angle_max_deg);

        let b = &self.robot;
        set(&mut leg.contact.leg_mass, b.leg_mass);
        set(&mut leg.contact.gravity, b.gravity);
        let mut robot = RobotConfig::default();
        let torso_mass = b.torso_mass.unwrap_or(robot.torso.mass);
        let dims = b.torso_dims.unwrap_or(robot.torso.dims);
        robot.torso = TorsoBody::cuboid(torso_mass, dims)?;
        leg.contact.robot_mass = torso_mass + 4.0 * leg.contact.leg_mass;
        robot.leg = LegDefinition {
            contact_set: ContactSet::TipOnly,
            ..leg.clone()
        };
        set(&mut robot.droop, b.droop);
        set(&mut robot.include_couples, b.include_couples);
        set(&mut robot.euler_rates, b.euler_rates);

        let m = &self.mpc;
        let mut mpc = MpcConfig {
            total_mass: robot.total_mass(),
            gravity: leg.contact.gravity,
            ..MpcConfig::default()
        };
        set(&mut mpc.horizon, m.horizon);
        set(&mut mpc.dt, m.dt);
        set(&mut mpc.r, m.r);
        set(&mut mpc.f_max, m.f_max);
        set(&mut mpc.discretization, m.discretization);
        set(&mut mpc.solver.max_iter, m.max_iter);
        set(&mut mpc.solver.eps_abs, m.eps_abs);
        set(&mut mpc.solver.eps_rel, m.eps_rel);
        if let Some(q) = &m.q {
            mpc.q = q.as_slice().try_into().map_err(|_| {
                Error::Config(format!("mpc.q needs {} entries, got {}", mpc.q.len(), q.len()))
            })?;
        }

        let s = &self.suite;
        let mut suite = SuiteSettings::default();
        set(&mut suite.n_mpc, s.n_mpc);
        set(&mut suite.n_rollout, s.n_rollout);
        set(&mut suite.threshold, s.threshold);

        let settings = Settings {
            gait: self.gait.unwrap_or(GaitKind::Walk),
            leg,
            tendon,
            robot,
            mpc,
            angle_map,
            suite,
            noise_sigma: s.noise_sigma.unwrap_or(0.001),
            suite_duration: s.duration.unwrap_or(25.0),
        };
        settings.validate()?;
        Ok(settings)
    }
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => ConfigFile::load(p)?.resolve(),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.leg.validate()?;
        self.tendon.validate()?;
        self.robot.validate()?;
        self.mpc.validate()?;
        if !(self.noise_sigma >= 0.0 && self.suite_duration > 0.0) {
            return Err(Error::Config("noise sigma and suite duration must be valid".into()));
        }
        if self.suite.n_mpc == 0 {
            return Err(Error::Config("n_mpc must be >= 1".into()));
        }
        Ok(())
    }

    pub fn gait_schedule(&self) -> GaitSchedule {
        let mut g = GaitSchedule::preset(self.gait);
        if self.gait != GaitKind::Stand {
            g.t_max = self.tendon.t_max;
        }
        g
    }

    pub fn command(&self) -> ReferenceCommand {
        ReferenceCommand {
            gravity: self.leg.contact.gravity,
            ..ReferenceCommand::for_gait(self.gait)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_nominal_parameters() {
        let s = Settings::default();
        assert_eq!(s.leg.geom.node_count, 31);
        assert_eq!(s.leg.dt, 1e-4);
        assert_eq!(s.tendon.t_max, 1.5);
        assert!((s.mpc.total_mass - 2.16).abs() < 1e-12);
        assert_eq!(s.mpc.horizon, 15);
    }

    #[test]
    fn overrides_and_rejections() {
        let s = ConfigFile::parse("gait = \"omni60\"\n[rod]\nnodes = 21\n[mpc]\nhorizon = 10\n")
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(s.gait, GaitKind::Omni60);
        assert_eq!(s.leg.geom.node_count, 21);
        assert_eq!(s.robot.leg.geom.node_count, 21);
        assert_eq!(s.mpc.horizon, 10);
        assert!(ConfigFile::parse("[rod]\nlenght = 1.0\n").is_err());
        assert!(ConfigFile::parse("[rod]\nlength = -1.0\n").unwrap().resolve().is_err());
        assert!(ConfigFile::parse("[mpc]\nq = [1.0]\n").unwrap().resolve().is_err());
    }
}
