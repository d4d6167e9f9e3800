use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use perfl::data::{parse_libsvm, split, Dataset, SplitMode};
use perfl::losses::{LogisticLoss, DEFAULT_PROX_TOL};
use perfl::model::{psi_grad, psi_value};
use perfl::solvers::{solve, Method, Reference, SolverRun};
use perfl::synthetic::random_quadratic;
use perfl::{LocalLoss, Problem, StackedPoint};

fn point(n: usize, d: usize) -> impl Strategy<Value = StackedPoint> {
    prop::collection::vec(-5.0..5.0f64, n * d).prop_map(move |v| StackedPoint::from_flat(n, d, &v).unwrap())
}

fn logistic(seed: u64, m: usize, d: usize) -> LogisticLoss {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(m, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let y = (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    LogisticLoss::new(a, y, 0.05).unwrap()
}

fn losses(seed: u64) -> Vec<Arc<dyn LocalLoss>> {
    let q = random_quadratic(2, 3, 0.2, 3.0, 1.0, seed).unwrap();
    let mut v = q.losses.clone();
    v.push(Arc::new(logistic(seed, 5, 3)));
    v
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn psi_gradient_blocks_sum_to_zero(x in point(4, 3)) {
        let g = psi_grad(&x);
        let total = g.blocks().iter().fold(DVector::zeros(3), |a, b| a + b);
        prop_assert!(total.norm() <= 1e-12 * (1.0 + x.norm_sq().sqrt()));
        prop_assert!(psi_value(&x) >= 0.0);
    }

    #[test]
    fn psi_gradient_is_inverse_n_lipschitz(x in point(5, 2), y in point(5, 2)) {
        let lhs = psi_grad(&x).dist_sq(&psi_grad(&y)).sqrt();
        prop_assert!(lhs <= x.dist_sq(&y).sqrt() / 5.0 + 1e-12);
    }

    #[test]
    fn consensus_has_zero_penalty(v in prop::collection::vec(-3.0..3.0f64, 4), n in 1usize..6) {
        let x = StackedPoint::consensus(n, &DVector::from_vec(v));
        prop_assert!(psi_value(&x).abs() <= 1e-12);
        prop_assert!(psi_grad(&x).norm_sq() <= 1e-24);
    }

    #[test]
    fn bregman_sandwich(seed in 0u64..1000, w in point(3, 4), x in point(3, 4), lambda in 0.0..5.0f64) {
        let p = random_quadratic(3, 4, 0.1, 2.0, lambda, seed).unwrap();
        let d = p.bregman(&w, &x).unwrap();
        let dist = w.dist_sq(&x);
        let (mu, l) = (p.constants.mu / 3.0, (p.constants.l + lambda) / 3.0);
        prop_assert!(d >= 0.5 * mu * dist * (1.0 - 1e-9) - 1e-9);
        prop_assert!(d <= 0.5 * l * dist * (1.0 + 1e-9) + 1e-9);
    }

    #[test]
    fn gradient_is_strongly_monotone(seed in 0u64..1000, x in point(3, 3), y in point(3, 3)) {
        let fs: Vec<Arc<dyn LocalLoss>> = (0..3).map(|i| Arc::new(logistic(seed * 3 + i, 5, 3)) as Arc<dyn LocalLoss>).collect();
        let p = Problem::new(fs, 0.8).unwrap();
        let gx = p.gradient(&x).unwrap();
        let gy = p.gradient(&y).unwrap();
        let inner = (&gx - &gy).dot(&(&x - &y));
        prop_assert!(inner >= p.constants.mu / 3.0 * x.dist_sq(&y) * (1.0 - 1e-9) - 1e-10);
    }

    #[test]
    fn loss_curvature_within_constants(seed in 0u64..1000, z in prop::collection::vec(-4.0..4.0f64, 3), w in prop::collection::vec(-4.0..4.0f64, 3)) {
        let (z, w) = (DVector::from_vec(z), DVector::from_vec(w));
        for f in losses(seed) {
            let c = f.constants();
            let diff = &z - &w;
            let inner = (f.grad(&z) - f.grad(&w)).dot(&diff);
            let sq = diff.norm_squared();
            prop_assert!(inner >= c.mu * sq * (1.0 - 1e-9) - 1e-12);
            prop_assert!(inner <= c.l * sq * (1.0 + 1e-9) + 1e-12);
            for j in 0..f.num_summands() {
                let gj = (f.summand_grad(j, &z).unwrap() - f.summand_grad(j, &w).unwrap()).norm();
                prop_assert!(gj <= c.l_tilde * sq.sqrt() * (1.0 + 1e-9) + 1e-12);
            }
        }
    }

    #[test]
    fn prox_is_nonexpansive(seed in 0u64..1000, u in prop::collection::vec(-4.0..4.0f64, 3), v in prop::collection::vec(-4.0..4.0f64, 3), beta in 0.05..5.0f64) {
        let (u, v) = (DVector::from_vec(u), DVector::from_vec(v));
        for f in losses(seed) {
            let pu = f.prox(beta, &u, DEFAULT_PROX_TOL).unwrap();
            let pv = f.prox(beta, &v, DEFAULT_PROX_TOL).unwrap();
            prop_assert!((&pu - &pv).norm() <= (&u - &v).norm() + 1e-8);
            // optimality of the prox point
            let r = f.grad(&pu) + (&pu - &u) / beta;
            prop_assert!(r.norm() <= 1e-8);
        }
    }

    #[test]
    fn optimum_satisfies_averaging_identity(seed in 0u64..1000, lambda in 0.1..10.0f64) {
        let p = random_quadratic(4, 3, 0.1, 2.0, lambda, seed).unwrap();
        let xs = p.quadratic_optimum().unwrap().unwrap();
        let mean = xs.mean();
        for (i, f) in p.losses.iter().enumerate() {
            let rhs = &mean - f.grad(xs.block(i)) / lambda;
            prop_assert!((xs.block(i) - rhs).norm() <= 1e-8);
        }
        prop_assert!(p.gradient(&xs).unwrap().norm_sq().sqrt() <= 1e-10);
    }

    #[test]
    fn objective_matches_literal_sum(seed in 0u64..1000, x in point(2, 3), lambda in 0.0..4.0f64) {
        let p = Problem::new(losses(seed)[..2].to_vec(), lambda).unwrap();
        let (a, b) = (x.block(0), x.block(1));
        let mean = (a + b) / 2.0;
        let penalty = ((a - &mean).norm_squared() + (b - &mean).norm_squared()) / 4.0;
        let literal = (p.losses[0].value(a) + p.losses[1].value(b)) / 2.0 + lambda * penalty;
        prop_assert!((p.objective(&x).unwrap() - literal).abs() <= 1e-12 * (1.0 + literal.abs()));
    }

    #[test]
    fn splits_are_disjoint(rows in 4usize..200, n in 1usize..8, seed in 0u64..50, hetero in any::<bool>()) {
        prop_assume!(n <= rows);
        let labels: Vec<f64> = (0..rows).map(|i| if (i * 7 + seed as usize).is_multiple_of(3) { 1.0 } else { -1.0 }).collect();
        let data = Dataset::new(vec![vec![(1, 1.0)]; rows], labels, 1).unwrap();
        let mode = if hetero { SplitMode::Heterogeneous } else { SplitMode::Homogeneous };
        let s = split(&data, n, mode, seed).unwrap();
        prop_assert_eq!(s.assignment.len(), n);
        prop_assert!(s.assignment.iter().all(|c| c.len() == rows / n));
        let mut seen: Vec<usize> = s.assignment.concat();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), n * (rows / n));
        prop_assert_eq!(s.dropped, rows % n);
        prop_assert_eq!(split(&data, n, mode, seed).unwrap(), s);
    }

    #[test]
    fn libsvm_round_trip(rows in prop::collection::vec((any::<bool>(), prop::collection::btree_map(1usize..60, -1e6..1e6f64, 0..6)), 1..40)) {
        let mut text = String::new();
        for (pos, feats) in &rows {
            text.push_str(if *pos { "+1" } else { "-1" });
            for (j, v) in feats {
                text.push_str(&format!(" {j}:{v}"));
            }
            text.push('\n');
        }
        let first = parse_libsvm(text.as_bytes()).unwrap();
        let again: Dataset = first.to_libsvm().parse().unwrap();
        prop_assert_eq!(first.rows(), again.rows());
        prop_assert_eq!(first.labels(), again.labels());
        prop_assert_eq!(first.len(), rows.len());
    }

    #[test]
    fn accelerated_traces_respect_envelopes(seed in 0u64..1000, lambda in 0.05..5.0f64, l in 0.5..4.0f64) {
        let (n, mu) = (4, 0.05);
        let p = random_quadratic(n, 6, mu, l, lambda, seed).unwrap();
        let r = Reference::exact(&p).unwrap();
        let x0 = StackedPoint::zeros(n, 6);
        let gap0 = p.objective(&x0).unwrap() - r.f_star;
        let rhs0 = gap0 + mu / (2.0 * n as f64) * x0.dist_sq(r.x_star.as_ref().unwrap());
        for (m, rate) in [(Method::Apgd1, 1.0 - (mu / (lambda + mu)).sqrt()), (Method::Apgd2, 1.0 - (mu / (l + mu)).sqrt())] {
            let t = solve(&p, &SolverRun::new(m, x0.clone(), 60), &r).unwrap();
            for row in &t.rows {
                let envelope = rate.powi(row.k as i32) * rhs0;
                prop_assert!(row.rel_subopt * gap0 <= envelope * (1.0 + 1e-9) + 1e-12, "{} k={}", m, row.k);
            }
        }
    }
}
