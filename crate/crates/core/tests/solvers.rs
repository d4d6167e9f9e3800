use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use perfl::losses::QuadraticLoss;
use perfl::solvers::{
    solve, CommModel, KatyushaSchedule, Method, MethodParams, Reference, SgdParams, SolverRun, StopTarget,
};
use perfl::synthetic::{random_finite_sum_quadratic, random_quadratic};
use perfl::{Error, LocalLoss, Problem, StackedPoint};

fn quad(a: DMatrix<f64>, b: DVector<f64>) -> Arc<dyn LocalLoss> {
    Arc::new(QuadraticLoss::new(a, b, 0.0).unwrap())
}

fn ridge_problem(n: usize, d: usize, mu: f64, lambda: f64) -> Problem {
    let f = quad(DMatrix::identity(d, d) * mu, DVector::zeros(d));
    Problem::new(vec![f; n], lambda).unwrap()
}

#[test]
fn deterministic_ledgers() {
    let p = random_quadratic(4, 6, 0.05, 1.0, 1.0, 2).unwrap();
    let r = Reference::exact(&p).unwrap();
    let x0 = StackedPoint::zeros(4, 6);
    for m in [Method::Pgd1, Method::Apgd1] {
        let t = solve(&p, &SolverRun::new(m, x0.clone(), 17), &r).unwrap();
        assert_eq!((t.ledger.comm_rounds(), t.ledger.prox_calls(), t.ledger.grad_calls()), (17, 17, 0));
        assert_eq!(t.rows.len(), 18);
    }
    for m in [Method::Pgd2, Method::Apgd2] {
        let t = solve(&p, &SolverRun::new(m, x0.clone(), 17), &r).unwrap();
        assert_eq!((t.ledger.comm_rounds(), t.ledger.grad_calls(), t.ledger.prox_calls()), (17, 17, 0));
    }
    let t = solve(&p, &SolverRun::new(Method::IapgdAgd, x0.clone(), 9), &r).unwrap();
    assert_eq!(t.ledger.comm_rounds(), 9);
    assert_eq!(t.inner_iters.len(), 9);
    assert_eq!(t.ledger.grad_calls(), t.inner_iters.iter().map(|&v| v as u64).sum::<u64>());
    assert!(t.inner_iters.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn iapgd_katyusha_ledger_and_progress() {
    let p = random_finite_sum_quadratic(3, 5, 4, 0.05, 5.0, 8).unwrap();
    let r = Reference::exact(&p).unwrap();
    let run = SolverRun::new(Method::IapgdKatyusha, StackedPoint::zeros(3, 4), 30).seed(4);
    let t = solve(&p, &run, &r).unwrap();
    assert_eq!(t.ledger.comm_rounds(), 30);
    let steps: u64 = t.inner_iters.iter().map(|&v| v as u64).sum();
    // every inner step costs one summand, every anchor at least m more
    assert!(t.ledger.summand_grad_calls() >= steps + 30 * 5);
    assert!(t.rows.last().unwrap().rel_subopt < 1e-3);
}

#[test]
fn iapgd_theory_schedule_runs() {
    let p = random_finite_sum_quadratic(2, 4, 3, 0.1, 1.0, 5).unwrap();
    let r = Reference::exact(&p).unwrap();
    let x0 = StackedPoint::zeros(2, 3);
    let gap = p.objective(&x0).unwrap() - r.f_star;
    let params = MethodParams { katyusha_schedule: Some(KatyushaSchedule::Theory { initial_gap: gap }), ..Default::default() };
    let t = solve(&p, &SolverRun::new(Method::IapgdKatyusha, x0, 10).params(params), &r).unwrap();
    assert!(t.inner_iters.iter().all(|&v| v >= 1));
    assert!(t.rows.last().unwrap().rel_subopt < 1e-2);
}

#[test]
fn pgd1_ridge_contracts_at_analytic_ratio() {
    let (mu, lambda) = (0.5, 2.0);
    let p = ridge_problem(3, 2, mu, lambda);
    let x0 = StackedPoint::consensus(3, &DVector::from_vec(vec![3.0, -1.0]));
    let r = Reference { f_star: 0.0, x_star: Some(StackedPoint::zeros(3, 2)) };
    let t = solve(&p, &SolverRun::new(Method::Pgd1, x0, 6).record_iterates(true), &r).unwrap();
    for w in t.iterates.windows(2) {
        let ratio = (w[1].norm_sq() / w[0].norm_sq()).sqrt();
        assert!((ratio - lambda / (mu + lambda)).abs() < 1e-12, "{ratio}");
    }
}

#[test]
fn pgd2_blend_example() {
    let c1 = DVector::from_vec(vec![2.0, 0.0]);
    let p = Problem::new(vec![quad(DMatrix::identity(2, 2), -&c1), quad(DMatrix::identity(2, 2), c1.clone())], 1.0)
        .unwrap();
    let r = Reference::exact(&p).unwrap();
    let t = solve(&p, &SolverRun::new(Method::Pgd2, StackedPoint::zeros(2, 2), 1), &r).unwrap();
    assert!((t.final_point.block(0) - DVector::from_vec(vec![1.0, 0.0])).norm() < 1e-15);
    assert!((t.final_point.block(1) - DVector::from_vec(vec![-1.0, 0.0])).norm() < 1e-15);
}

#[test]
fn identical_losses_keep_consensus() {
    let base = random_quadratic(1, 5, 0.1, 1.0, 1.0, 3).unwrap();
    let p = Problem::new(vec![base.losses[0].clone(); 4], 0.7).unwrap();
    let r = Reference::exact(&p).unwrap();
    for m in [Method::Pgd1, Method::Pgd2, Method::Apgd1, Method::Apgd2, Method::IapgdAgd] {
        let t = solve(&p, &SolverRun::new(m, StackedPoint::zeros(4, 5), 25).record_iterates(true), &r).unwrap();
        for x in &t.iterates {
            for b in x.blocks() {
                assert!((b - x.block(0)).norm() < 1e-12, "{m}");
            }
        }
    }
    let xs = r.x_star.unwrap();
    let (h, lin) = base.losses[0].quadratic_form().unwrap();
    let argmin = -h.clone().cholesky().unwrap().solve(lin);
    assert!((xs.block(2) - argmin).norm() < 1e-10);
}

#[test]
fn apgd2_without_penalty_is_blockwise_agd() {
    let p = random_quadratic(3, 4, 0.05, 1.0, 0.0, 6).unwrap();
    let r = Reference::exact(&p).unwrap();
    let t = solve(&p, &SolverRun::new(Method::Apgd2, StackedPoint::zeros(3, 4), 40), &r).unwrap();
    let (mu, l) = (p.constants.mu, p.constants.l);
    let q = ((l / mu).sqrt() - 1.0) / ((l / mu).sqrt() + 1.0);
    for (i, f) in p.losses.iter().enumerate() {
        let (mut x, mut y) = (DVector::zeros(4), DVector::zeros(4));
        for _ in 0..40 {
            let next = &y - f.grad(&y) / l;
            y = &next + (&next - &x) * q;
            x = next;
        }
        assert!((t.final_point.block(i) - x).norm() < 1e-12);
    }
}

#[test]
fn apgd1_beats_pgd1_at_large_ratio() {
    let p = random_quadratic(5, 6, 1e-2, 1.0, 1.0, 12).unwrap();
    let r = Reference::exact(&p).unwrap();
    let x0 = StackedPoint::zeros(5, 6);
    let target = StopTarget::RelSubopt(1e-6);
    let count = |m| {
        let t = solve(&p, &SolverRun::new(m, x0.clone(), 100_000).target(target), &r).unwrap();
        t.comm_to_target(target, 0.0).unwrap()
    };
    let (plain, accel) = (count(Method::Pgd1), count(Method::Apgd1));
    assert!(accel < plain, "apgd1 {accel}, pgd1 {plain}");
}

#[test]
fn l2sgd_without_penalty_is_gradient_descent() {
    let p = random_quadratic(3, 4, 0.1, 1.0, 0.0, 9).unwrap();
    let params = MethodParams { p: Some(0.3), rho: Some(1.0), max_iters: Some(60), ..Default::default() };
    let resolved = SgdParams::resolve(&p, Some(0.3), Some(1.0), Method::L2sgdPlus).unwrap();
    let r = Reference::exact(&p).unwrap();
    let run = SolverRun::new(Method::L2sgdPlus, StackedPoint::zeros(3, 4), u64::MAX).params(params).seed(2);
    let t = solve(&p, &run, &r).unwrap();
    assert_eq!(t.iterations, 60);
    let step = resolved.plain_step / 3.0;
    for (i, f) in p.losses.iter().enumerate() {
        let mut x = DVector::zeros(4);
        for _ in 0..60 {
            x = &x - f.grad(&x) * step;
        }
        assert!((t.final_point.block(i) - x).norm() < 1e-12);
    }
}

#[test]
fn stochastic_defaults() {
    let f = quad(DMatrix::identity(2, 2), DVector::zeros(2));
    let p = Problem::new(vec![f; 2], 1.0).unwrap();
    let s = SgdParams::resolve(&p, None, None, Method::Al2sgdPlus).unwrap();
    assert_eq!((s.p, s.rho), (0.5, 0.25));
}

#[test]
fn al2sgd_converges_linearly() {
    let p = random_finite_sum_quadratic(4, 6, 3, 0.05, 0.5, 1).unwrap();
    let r = Reference::exact(&p).unwrap();
    for seed in 0..4 {
        for model in [CommModel::Flip, CommModel::PerEvent] {
            let params = MethodParams { comm_model: Some(model), ..Default::default() };
            let run = SolverRun::new(Method::Al2sgdPlus, StackedPoint::zeros(4, 3), 100).params(params).seed(seed);
            let t = solve(&p, &run, &r).unwrap();
            let last = t.rows.last().unwrap();
            let half = t.rows.iter().rev().find(|row| row.k <= last.k / 2).unwrap();
            assert!(last.rel_subopt < half.rel_subopt, "seed {seed} {model:?}: {} at k={} vs {} at k={}, {} rows", last.rel_subopt, last.k, half.rel_subopt, half.k, t.rows.len());
            assert!(last.rel_subopt < 1e-4, "seed {seed}: {}", last.rel_subopt);
        }
    }
}

#[test]
fn threads_do_not_change_traces() {
    let p = random_finite_sum_quadratic(6, 4, 3, 0.05, 1.0, 3).unwrap();
    let r = Reference::exact(&p).unwrap();
    for m in [Method::IapgdKatyusha, Method::Al2sgdPlus, Method::L2sgdPlus] {
        let run = SolverRun::new(m, StackedPoint::zeros(6, 3), 40).seed(11);
        let traces: Vec<_> = [1, 3]
            .iter()
            .map(|&threads| {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
                pool.install(|| solve(&p, &run, &r).unwrap())
            })
            .collect();
        assert_eq!(traces[0].rows, traces[1].rows, "{m}");
        assert_eq!(traces[0].final_point, traces[1].final_point);
    }
}

#[test]
fn zero_budget_logs_the_start_only() {
    let p = random_quadratic(2, 3, 0.1, 1.0, 1.0, 0).unwrap();
    let r = Reference::exact(&p).unwrap();
    for m in Method::ALL {
        let t = solve(&p, &SolverRun::new(m, StackedPoint::zeros(2, 3), 0), &r).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!((t.rows[0].k, t.rows[0].rel_subopt), (0, 1.0));
    }
}

#[test]
fn rejects_bad_parameters() {
    let p = random_quadratic(2, 3, 0.1, 1.0, 1.0, 0).unwrap();
    let r = Reference::exact(&p).unwrap();
    let x0 = StackedPoint::zeros(2, 3);
    let run = |m, params: MethodParams| solve(&p, &SolverRun::new(m, x0.clone(), 5).params(params), &r);
    assert!(matches!(run(Method::Apgd1, MethodParams { p: Some(0.5), ..Default::default() }), Err(Error::InvalidRun(_))));
    assert!(matches!(run(Method::Apgd2, MethodParams { inner_iters: Some(3), ..Default::default() }), Err(Error::InvalidRun(_))));
    assert!(matches!(run(Method::Al2sgdPlus, MethodParams { p: Some(1.0), ..Default::default() }), Err(Error::Precondition { .. })));
    assert!(matches!(run(Method::L2sgdPlus, MethodParams { rho: Some(0.0), ..Default::default() }), Err(Error::Precondition { .. })));
    assert!(matches!(run(Method::IapgdAgd, MethodParams { inner_iters: Some(0), ..Default::default() }), Err(Error::InvalidRun(_))));
    let small = p.with_lambda(0.15).unwrap();
    assert!(matches!(
        solve(&small, &SolverRun::new(Method::IapgdAgd, x0.clone(), 5), &r),
        Err(Error::Precondition { .. })
    ));
    let tiny = p.with_lambda(0.05).unwrap();
    assert!(matches!(solve(&tiny, &SolverRun::new(Method::Apgd1, x0.clone(), 5), &r), Err(Error::Precondition { .. })));
    let unknown = Reference { f_star: 0.0, x_star: None };
    let dist = SolverRun::new(Method::Apgd1, x0.clone(), 5).target(StopTarget::RelDistSq(1e-3));
    assert!(solve(&p, &dist, &unknown).is_err());
    assert!(solve(&p, &SolverRun::new(Method::Apgd1, StackedPoint::zeros(3, 3), 5), &r).is_err());
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
    }
    assert!("fista".parse::<Method>().is_err());
}
