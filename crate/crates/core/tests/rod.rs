mod common;

use proptest::prelude::*;
use softquad_core::leg::{LegDefinition, TendonProfile, TendonSchedule};
use softquad_core::rod::*;

fn default_state(droop: f64) -> (RodState, RodModel) {
    let g = RodGeometry::default();
    let s = RodState::straight(&g, 0.0, 0.1, droop).unwrap();
    let m = RodModel::new(g, RodMaterial::default(), &s.reference).unwrap();
    (s, m)
}

fn perturbed(base: &RodState, offsets: &[f64]) -> RodState {
    let mut s = base.clone();
    for (i, n) in s.nodes.iter_mut().enumerate().skip(1) {
        n.x += offsets[3 * i];
        n.z += offsets[3 * i + 1];
        n.theta += offsets[3 * i + 2] * 20.0;
    }
    s
}

fn offsets() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5e-4..5e-4f64, 93)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn internal_forces_are_reciprocal(off in offsets(), droop in -1.0..1.0f64) {
        let (s0, model) = default_state(droop);
        let s = perturbed(&s0, &off);
        let mut loads = NodalLoads::zeros(s.len());
        internal_forces(&s, &model, &mut loads).unwrap();
        let fx: f64 = loads.fx.iter().sum();
        let fz: f64 = loads.fz.iter().sum();
        let scale = loads.fx.iter().chain(&loads.fz).map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        prop_assert!(fx.abs() < 1e-10 * scale && fz.abs() < 1e-10 * scale);
        // moments about an arbitrary fixed point
        let (ox, oz) = (0.3, -0.2);
        let mut my = 0.0;
        let mut mscale = 0.0f64;
        for (i, n) in s.nodes.iter().enumerate() {
            let t = loads.my[i] + (n.z - oz) * loads.fx[i] - (n.x - ox) * loads.fz[i];
            my += t;
            mscale = mscale.max(t.abs());
        }
        prop_assert!(my.abs() <= 1e-10 * mscale.max(1.0));
    }

    #[test]
    fn contact_never_pulls(z in -0.01..0.01f64, vz in -50.0..50.0f64) {
        let (mut s, _) = default_state(0.0);
        let tip = s.len() - 1;
        s.nodes[tip].z = z;
        s.nodes[tip].vz = vz;
        let mut loads = NodalLoads::zeros(s.len());
        contact_forces(&s, &ContactParams::default(), ContactSet::AllNodes, &mut loads);
        prop_assert!(loads.fz[tip] >= 0.0);
    }

    #[test]
    fn friction_dissipates(vx in -1.0..1.0f64, frame in -0.2..0.2f64) {
        let (mut s, _) = default_state(0.0);
        for n in s.nodes.iter_mut() {
            n.z = 0.0;
            n.vx = vx;
        }
        s.frame_vx = frame;
        let mut loads = NodalLoads::zeros(s.len());
        friction_forces(&s, &ContactParams::default(), ContactSet::AllNodes, &mut loads);
        let power: f64 = loads.fx.iter().map(|f| f * (vx + frame)).sum();
        prop_assert!(power <= 0.0);
    }
}

/// Central differences of the elastic energy against the internal forces.
fn gradient_error(s: &RodState, model: &RodModel) -> f64 {
    let mut loads = NodalLoads::zeros(s.len());
    internal_forces(s, model, &mut loads).unwrap();
    let h = 1e-7;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..s.len() {
        for k in 0..3 {
            let energy_at = |d: f64| {
                let mut p = s.clone();
                match k {
                    0 => p.nodes[i].x += d,
                    1 => p.nodes[i].z += d,
                    _ => p.nodes[i].theta += d,
                }
                elastic_energy(&p, model).unwrap()
            };
            let fd = -(energy_at(h) - energy_at(-h)) / (2.0 * h);
            let an = [loads.fx[i], loads.fz[i], loads.my[i]][k];
            num += (fd - an).powi(2);
            den += an.powi(2);
        }
    }
    (num / den.max(1e-300)).sqrt()
}

#[test]
fn internal_forces_are_energy_gradient() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let (s0, model) = default_state(0.2);
    for _ in 0..20 {
        let off: Vec<f64> = (0..93).map(|_| rng.random_range(-5e-4..5e-4)).collect();
        let s = perturbed(&s0, &off);
        let err = gradient_error(&s, &model);
        assert!(err < 1e-5, "relative gradient error {err}");
    }
}

#[test]
fn zero_gravity_reference_is_fixed_point() {
    let mut def = LegDefinition::default();
    def.contact.gravity = 0.0;
    let mut sim = LegSimulator::new(def).unwrap();
    let start = sim.state.clone();
    for _ in 0..200 {
        sim.advance(0.0).unwrap();
    }
    assert_eq!(sim.state, start);
}

#[test]
fn hanging_rod_reaction_is_its_weight() {
    let def = LegDefinition {
        base_z: 0.5,
        droop: 0.4,
        ..LegDefinition::default()
    };
    let mut sim = LegSimulator::new(def).unwrap();
    let weight = sim.model.total_mass() * GRAVITY;
    let mut last = None;
    for _ in 0..30_000 {
        last = Some(sim.advance(0.0).unwrap());
    }
    let r = last.unwrap();
    assert!((r.support.fz - weight).abs() < 1e-6 * weight, "{} vs {}", r.support.fz, weight);
    assert!(r.support.fx.abs() < 1e-6 * weight);
}

#[test]
fn rod_above_ground_settles_near_reference() {
    let def = LegDefinition::default();
    let traj = simulate_leg(&def, &TendonSchedule::default(), 2.0, 1000).unwrap();
    let reference = def.reference_state().unwrap();
    let last = traj.frames.last().unwrap();
    for (n, r) in last.nodes.iter().zip(&reference.reference) {
        assert!((n.x - r.x).hypot(n.z - r.z) < 1e-3);
    }
}

#[test]
fn tension_lifts_the_tip_then_releases() {
    let def = LegDefinition {
        base_z: 0.3,
        droop: 1.0,
        ..LegDefinition::default()
    };
    let schedule = TendonSchedule::single(TendonProfile::default());
    let pulled = simulate_leg(&def, &schedule, 2.5, 100).unwrap().tip_z();
    let rest = simulate_leg(&def, &TendonSchedule::default(), 2.5, 100).unwrap().tip_z();
    let lift: Vec<(f64, f64)> = pulled.iter().zip(&rest).map(|(p, r)| (p.0, p.1 - r.1)).collect();
    let at = |t: f64| lift.iter().find(|(s, _)| *s >= t - 1e-9).unwrap().1;
    let peak = lift.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    assert!(at(0.5) > 0.0, "tip lift at 0.5 s: {}", at(0.5));
    assert!(peak > 1e-5, "peak lift {peak}");
    assert!(at(2.5).abs() < 0.05 * peak);
}

#[test]
fn doubled_step_stays_bounded() {
    let def = LegDefinition {
        dt: 2e-4,
        ..LegDefinition::default()
    };
    let schedule = TendonSchedule::single(TendonProfile::default());
    let traj = simulate_leg(&def, &schedule, 2.0, 50).unwrap();
    for f in &traj.frames {
        for n in &f.nodes {
            assert!(n.x.abs() < 1.0 && n.z.abs() < 1.0);
        }
    }
}

#[test]
fn free_rod_energy_never_increases() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let def = LegDefinition {
        base_z: 0.5,
        droop: 0.5,
        ..LegDefinition::default()
    };
    let reference = def.reference_state().unwrap();
    let start = common::smooth_deformation(&reference, &mut rng);
    let mut sim = LegSimulator::with_state(def.clone(), start).unwrap();
    let stab = def.stabilization;
    let mut prev = mechanical_energy(&sim.state, &sim.model, &stab, GRAVITY).unwrap();
    let mut worst = f64::MIN;
    for k in 1..=10_000 {
        sim.advance(0.0).unwrap();
        if k % 10 == 0 {
            let e = mechanical_energy(&sim.state, &sim.model, &stab, GRAVITY).unwrap();
            worst = worst.max(e - prev);
            prev = e;
        }
    }
    assert!(worst <= 1e-9, "largest energy increase between frames {worst}");
}
