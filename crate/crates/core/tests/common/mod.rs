#![allow(dead_code)]

use rand::Rng;
use softquad_core::rod::RodState;

/// Smooth random deformation of a straight reference rod: a random
/// low-order curvature field, a small uniform stretch and a director
/// offset, plus small random velocities.
pub fn smooth_deformation<R: Rng>(reference: &RodState, rng: &mut R) -> RodState {
    let mut s = reference.clone();
    let n = s.len();
    let r0 = reference.reference[0];
    let r1 = reference.reference[1];
    let ds = (r1.x - r0.x).hypot(r1.z - r0.z);
    let heading = (r1.z - r0.z).atan2(r1.x - r0.x);
    let coeffs: Vec<f64> = (0..3).map(|_| rng.random_range(-0.01..0.01)).collect();
    let stretch = 1.0 + rng.random_range(-0.01..0.01);
    let twist = rng.random_range(-0.02..0.02);
    let (mut x, mut z, mut th) = (r0.x, r0.z, 0.0);
    for i in 0..n {
        let u = i as f64 / (n - 1) as f64;
        if i > 0 {
            th += coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * ((k + 1) as f64 * std::f64::consts::PI * u).sin())
                .sum::<f64>();
            x += stretch * ds * (heading + th).cos();
            z += stretch * ds * (heading + th).sin();
        }
        let node = &mut s.nodes[i];
        node.x = x;
        node.z = z;
        node.theta = reference.reference[i].theta + th + if i > 0 { twist } else { 0.0 };
        if i > 0 {
            node.vx = rng.random_range(-0.01..0.01);
            node.vz = rng.random_range(-0.01..0.01);
        }
    }
    s
}

use nalgebra::{DMatrix, DVector};
use softquad_core::qp::QuadraticProgram;

/// Random strictly convex QP with a known feasible point. Rows are
/// one-sided or equalities, plus up to two two-sided boxes.
pub fn random_qp<R: Rng>(rng: &mut R) -> QuadraticProgram {
    let n = rng.random_range(1..=8);
    let m = rng.random_range(1..=12);
    let mut g = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let mh = g(n, n);
    let p = mh.transpose() * &mh + DMatrix::identity(n, n) * 0.1;
    let q = g(n, 1).column(0).into_owned() * 2.0;
    let a = g(m, n);
    let x0 = g(n, 1).column(0).into_owned();
    let ax0 = &a * &x0;
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    let mut boxes = 0;
    let eq_budget = n.saturating_sub(1).min(2);
    let mut eqs = 0;
    for i in 0..m {
        let kind = rng.random_range(0..10);
        let slack = rng.random_range(0.0..0.5);
        if kind == 0 && eqs < eq_budget {
            eqs += 1;
            l[i] = ax0[i];
            u[i] = ax0[i];
        } else if kind <= 2 && boxes < 2 {
            boxes += 1;
            l[i] = ax0[i] - slack;
            u[i] = ax0[i] + rng.random_range(0.0..0.5);
        } else if kind <= 6 {
            l[i] = ax0[i] - slack;
            u[i] = f64::INFINITY;
        } else {
            l[i] = f64::NEG_INFINITY;
            u[i] = ax0[i] + slack;
        }
    }
    QuadraticProgram::new(p, q, a, l, u).unwrap()
}

/// Exhaustive active-set oracle: solves the KKT system for every
/// assignment of rows to {inactive, lower, upper} and keeps the feasible
/// candidate with the lowest objective.
pub fn qp_oracle(qp: &QuadraticProgram) -> Option<(DVector<f64>, f64)> {
    let n = qp.n();
    let m = qp.m();
    let choices: Vec<Vec<Option<f64>>> = (0..m)
        .map(|i| {
            if qp.l[i] == qp.u[i] {
                vec![Some(qp.l[i])]
            } else {
                let mut c = vec![None];
                if qp.l[i].is_finite() {
                    c.push(Some(qp.l[i]));
                }
                if qp.u[i].is_finite() {
                    c.push(Some(qp.u[i]));
                }
                c
            }
        })
        .collect();
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut pick = vec![0usize; m];
    loop {
        let active: Vec<(usize, f64)> = (0..m)
            .filter_map(|i| choices[i][pick[i]].map(|b| (i, b)))
            .collect();
        if active.len() <= n {
            let k = active.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-&qp.q));
            for (j, (i, b)) in active.iter().enumerate() {
                for c in 0..n {
                    kkt[(n + j, c)] = qp.a[(*i, c)];
                    kkt[(c, n + j)] = qp.a[(*i, c)];
                }
                rhs[n + j] = *b;
            }
            if let Some(sol) = kkt.clone().lu().solve(&rhs) {
                let x = sol.rows(0, n).into_owned();
                let ok = (&kkt * &sol - &rhs).amax() < 1e-9 && qp.infeasibility(&x) < 1e-9;
                if ok {
                    let f = qp.objective(&x);
                    if best.as_ref().is_none_or(|(_, b)| f < *b) {
                        best = Some((x, f));
                    }
                }
            }
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == m {
                return best;
            }
            pick[i] += 1;
            if pick[i] < choices[i].len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}
