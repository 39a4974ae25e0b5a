mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use softquad_core::qp::*;

#[test]
fn matches_active_set_oracle() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut worst_obj: f64 = 0.0;
    let mut worst_x: f64 = 0.0;
    for case in 0..200 {
        let qp = common::random_qp(&mut rng);
        let (x_ref, f_ref) = common::qp_oracle(&qp).expect("feasible by construction");
        let sol = solve(&qp, 1e-5, 1e-5, 4000).unwrap();
        assert_eq!(sol.status, QpStatus::Solved, "case {case}");
        let dx = (&sol.x - &x_ref).amax();
        let df = (sol.objective - f_ref).abs();
        worst_obj = worst_obj.max(df);
        worst_x = worst_x.max(dx);
        assert!(df < 1e-6 && dx < 1e-5, "case {case}: dobj {df:e}, dx {dx:e}");
        // never better than the oracle's feasible optimum
        assert!(sol.objective >= f_ref - 1e-9 || qp.infeasibility(&sol.x) > 0.0);
    }
    println!("worst objective gap {worst_obj:e}, worst x gap {worst_x:e}");
}

#[test]
fn warm_start_reaches_same_objective() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let qp = common::random_qp(&mut rng);
        let mut solver = QpSolver::new(QpSettings::default());
        let cold = solver.solve(&qp).unwrap();
        let warm = solver.solve_warm(&qp, Some(&cold.x), Some(&cold.y)).unwrap();
        assert!((cold.objective - warm.objective).abs() < 1e-8);
        assert_eq!(solver.factorizations, 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn argmin_is_invariant_to_cost_scaling(seed in any::<u64>(), scale in 0.01..100.0f64) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let qp = common::random_qp(&mut rng);
        let scaled = QuadraticProgram::new(&qp.p * scale, &qp.q * scale, qp.a.clone(), qp.l.clone(), qp.u.clone()).unwrap();
        let a = solve(&qp, 1e-5, 1e-5, 4000).unwrap();
        let b = solve(&scaled, 1e-5, 1e-5, 4000).unwrap();
        prop_assert!((&a.x - &b.x).amax() < 1e-8, "{:e}", (&a.x - &b.x).amax());
    }

    #[test]
    fn kkt_report_of_solution_passes(seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let qp = common::random_qp(&mut rng);
        let s = solve(&qp, 1e-5, 1e-5, 4000).unwrap();
        let r = kkt_check_with_duals(&qp, &s.x, &s.y, 1e-7).unwrap();
        prop_assert!(r.passed, "{:?}", r);
    }
}
