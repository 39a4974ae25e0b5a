use proptest::prelude::*;
use softquad_core::body::RobotConfig;
use softquad_core::gait::{GaitSchedule, ReferenceCommand};
use softquad_core::harness::*;
use softquad_core::mpc::{Feasibility, MpcConfig};

proptest! {
    #[test]
    fn settling_time_is_last_crossing(cost in prop::collection::vec(0.0..0.02f64, 1..60)) {
        let t: Vec<f64> = (0..cost.len()).map(|k| k as f64 * 0.1).collect();
        match settling_time(&t, &cost, 0.01).unwrap() {
            Some(ts) => {
                let k = t.iter().position(|v| *v == ts).unwrap();
                prop_assert!(cost[k..].iter().all(|c| *c < 0.01));
                prop_assert!(k == 0 || cost[k - 1] >= 0.01);
            }
            None => prop_assert!(*cost.last().unwrap() >= 0.01),
        }
    }

    #[test]
    fn constant_offset_metrics(r in prop::collection::vec(-1.0..1.0f64, 2..50), c in -0.01..0.01f64) {
        let m: Vec<f64> = r.iter().map(|v| v + c).collect();
        let out = compute_metrics(&r, &m).unwrap();
        prop_assert!((out.rmse - c.abs()).abs() < 1e-12);
        prop_assert!((out.mae - c.abs()).abs() < 1e-12);
        prop_assert!((out.avg_error - c.abs()).abs() < 1e-12);
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            let pct = c.abs() / (hi - lo) * 100.0;
            prop_assert!((out.error_pct.unwrap() - pct).abs() < 1e-9 * pct.max(1.0));
            prop_assert!((out.accuracy.unwrap() - (100.0 - pct)).abs() < 1e-9 * pct.max(1.0));
        }
    }

    #[test]
    fn dcm_csv_round_trip(cells in prop::collection::vec(any::<[bool; 5]>(), 1..40)) {
        let mut g = DcmGrid::default();
        for (k, c) in cells.iter().enumerate() {
            g.push(k as f64 * 0.033, Feasibility { legs: [c[0], c[1], c[2], c[3]], total: c[4] });
        }
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = DcmGrid::read_csv(&buf[..]).unwrap();
        prop_assert_eq!(back.infeasible_count(), cells.iter().filter(|c| !c[4]).count());
        prop_assert_eq!(back, g);
    }
}

#[test]
fn metrics_reject_mismatched_series() {
    assert!(compute_metrics(&[0.0, 1.0], &[0.0]).is_err());
    assert!(compute_metrics(&[], &[]).is_err());
}

fn short_suite(seed: u64) -> StabilityReport {
    let scenarios: Vec<_> = [ScenarioKind::Roll, ScenarioKind::Noise]
        .into_iter()
        .map(|k| PerturbationScenario { duration: 2.0, ..PerturbationScenario::preset(k) })
        .collect();
    run_perturbation_suite(
        &scenarios,
        &RobotConfig::default(),
        &GaitSchedule::walk(),
        &ReferenceCommand::walk(),
        &MpcConfig::default(),
        &SuiteSettings { seed, ..Default::default() },
    )
    .unwrap()
}

#[test]
fn suite_is_seed_deterministic() {
    let a = short_suite(7);
    assert_eq!(a, short_suite(7));
    let b = short_suite(8);
    assert_eq!(a.get("Roll"), b.get("Roll"));
    assert_ne!(a.get("Noise").unwrap().cost, b.get("Noise").unwrap().cost);
    let roll = a.get("Roll").unwrap();
    assert_eq!(roll.t.len(), roll.cost.len());
    assert_eq!(roll.infeasible_steps, 0);
    // the roll offset decays under control
    assert!(roll.final_cost < roll.max_cost);
}

#[test]
fn closed_loop_short_walk() {
    let run = run_closed_loop(
        &RobotConfig::default(),
        &GaitSchedule::walk(),
        &ReferenceCommand::walk(),
        &MpcConfig::default(),
        1.0,
    )
    .unwrap();
    assert_eq!(run.dcm.len(), run.telemetry.rows.len());
    assert_eq!(run.trajectory.samples.len(), run.dcm.len() + 1);
    assert!(run.dcm.all_feasible());
    let com = TrajectoryRecord::com_of(&run.trajectory).unwrap();
    let aligned = time_align(&com, &com).unwrap();
    assert_eq!(aligned.t.len(), com.t.len());
}
