use proptest::prelude::*;
use softquad_core::body::LegId;
use softquad_core::gait::*;

fn presets() -> [GaitSchedule; 4] {
    [GaitSchedule::walk(), GaitSchedule::crawl(), GaitSchedule::omni60(), GaitSchedule::stand()]
}

#[test]
fn cycle_lengths() {
    let d: Vec<f64> = presets().iter().map(|g| g.cycle_duration()).collect();
    assert_eq!(d, vec![5.0, 8.0, 5.0, 1.0]);
}

#[test]
fn walk_friction_by_phase() {
    let g = GaitSchedule::walk();
    assert_eq!(g.phase_at(1.0).phase.mu, [0.6, 0.2, 0.1, 0.1]);
    assert_eq!(g.phase_at(3.0).phase.mu, [0.2, 0.6, 0.1, 0.1]);
    assert_eq!(g.phase_at(5.0).index, 0);
}

#[test]
fn reference_advances_at_command_speed() {
    let cmd = ReferenceCommand::omni60();
    let refs = reference_trajectory(&cmd, 1.0, 15, 0.033).unwrap();
    for (k, r) in refs.iter().enumerate() {
        let t = 1.0 + k as f64 * 0.033;
        assert!((r[idx::PX] - 0.052 * t).abs() < 1e-15);
        assert!((r[idx::PY] - 0.09 * t).abs() < 1e-15);
        assert_eq!(r[idx::PZ], 0.04);
        assert_eq!(r[idx::G], -9.81);
    }
    assert!(reference_trajectory(&cmd, 0.0, 0, 0.033).is_err());
}

proptest! {
    #[test]
    fn phase_lookup_is_periodic(t in 0.0..200.0f64, which in 0usize..4) {
        let g = &presets()[which];
        let a = g.phase_at(t);
        let b = g.phase_at(t + g.cycle_duration());
        prop_assert_eq!(a.index, b.index);
        prop_assert!(a.elapsed >= 0.0 && a.elapsed <= a.phase.duration + 1e-9);
    }

    #[test]
    fn only_active_legs_pull(t in 0.0..40.0f64, which in 0usize..3) {
        let g = &presets()[which];
        let tendons = g.tendon_schedules();
        let info = g.phase_at(t);
        for leg in LegId::ALL {
            let f = tendons[leg.index()].tension(t);
            prop_assert!((0.0..=g.t_max + 1e-12).contains(&f));
            if !info.is_active(leg) {
                prop_assert!(f.abs() < 1e-9, "{:?} pulls {} at {}", leg, f, t);
            }
        }
    }
}
