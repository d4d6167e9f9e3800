use perfl::harness::{certify_lowerbound, CertifySpec, KeyValues};
use perfl::lowerbound::{build_instance, nesterov_instance, rate_bound, SUPPORT_TOL};
use perfl::solvers::{solve, Method, Reference, SolverRun};
use perfl::StackedPoint;

#[test]
fn grid_keeps_weight_nonnegative_and_rate_above_bound() {
    for n in [2, 4, 6, 3, 5] {
        for q in [1e-2, 1e-3, 1e-4, 1e-5] {
            for l in [1.0 + q, 2.0, 10.0] {
                let inst = build_instance(n, 8, q, l, 1.0).unwrap_or_else(|e| panic!("n={n} q={q} L={l}: {e}"));
                assert!(inst.b >= 0.0);
                assert!(inst.gamma >= rate_bound(q, 1.0, l) && inst.gamma < 1.0);
                assert_eq!(inst.warnings.is_empty(), n % 2 == 0 || inst.eigen_range.1 <= l * (1.0 + 1e-9));
            }
        }
    }
}

#[test]
fn optimum_decays_through_the_transfer_matrix() {
    let inst = build_instance(4, 25, 1e-4, 1.0001, 1.0).unwrap();
    let (xs, median) = inst.exact_optimum().unwrap();
    assert!((median / inst.gamma - 1.0).abs() < 1e-6);
    assert!(inst.problem.gradient(&xs).unwrap().norm_sq().sqrt() <= 1e-10);
    let w = inst.chain_pairs(&xs);
    let q = inst.transfer_matrix();
    for i in 0..5 {
        assert!((q * w[i] - w[i + 1]).norm() <= 1e-8 * w[i].norm().max(1.0));
    }
    let lambda = inst.lambda;
    let mean = xs.mean();
    for (i, f) in inst.problem.losses.iter().enumerate() {
        let rhs = &mean - f.grad(xs.block(i)) / lambda;
        assert!((xs.block(i) - rhs).norm() <= 1e-8);
    }
}

#[test]
fn starting_point_always_certifies() {
    let inst = build_instance(4, 10, 1e-3, 1.001, 1.0).unwrap();
    let (xs, _) = inst.exact_optimum().unwrap();
    let cert = inst.certify(&xs, &[(StackedPoint::zeros(4, inst.dim()), 0)]).unwrap();
    assert!(cert.passed());
    assert_eq!(cert.rows[0].support, 0);
    let moved = StackedPoint::consensus(4, &nalgebra::DVector::from_element(inst.dim(), 1.0));
    assert!(inst.certify(&xs, &[(moved, 0)]).is_err());
}

#[test]
fn support_grows_one_coordinate_per_round() {
    let inst = build_instance(4, 30, 1e-4, 1.0001, 1.0).unwrap();
    let (xs, _) = inst.exact_optimum().unwrap();
    let r = Reference { f_star: inst.problem.objective(&xs).unwrap(), x_star: Some(xs.clone()) };
    for m in [Method::Apgd1, Method::Apgd2, Method::Pgd1, Method::Pgd2] {
        let run = SolverRun::new(m, StackedPoint::zeros(4, inst.dim()), 40).record_iterates(true);
        let t = solve(&inst.problem, &run, &r).unwrap();
        let pairs: Vec<_> = t.iterates.iter().cloned().zip(t.rows.iter().map(|r| r.comm_rounds)).collect();
        let cert = inst.certify(&xs, &pairs).unwrap();
        cert.check().unwrap();
        for row in &cert.rows {
            assert!(row.support as u64 <= row.comm_rounds + 1, "{m}");
        }
        // exact growth until far coordinates drop under the support threshold
        for row in cert.rows.iter().take(11) {
            assert_eq!(row.support as u64, row.comm_rounds, "{m}");
        }
    }
}

#[test]
fn odd_clients_certify_with_warning() {
    let inst = build_instance(5, 15, 1e-3, 1.001, 1.0).unwrap();
    assert!(!inst.warnings.is_empty());
    let (xs, _) = inst.exact_optimum().unwrap();
    let r = Reference { f_star: inst.problem.objective(&xs).unwrap(), x_star: Some(xs.clone()) };
    let run = SolverRun::new(Method::Apgd1, StackedPoint::zeros(5, inst.dim()), 30).record_iterates(true);
    let t = solve(&inst.problem, &run, &r).unwrap();
    let pairs: Vec<_> = t.iterates.iter().cloned().zip(t.rows.iter().map(|r| r.comm_rounds)).collect();
    assert!(inst.certify(&xs, &pairs).unwrap().passed());
}

#[test]
fn nesterov_instance_stays_in_consensus_with_growing_support() {
    let (d, n) = (30, 3);
    let p = nesterov_instance(d, 1e-3, 1.0, n, 0.5).unwrap();
    let r = Reference::exact(&p).unwrap();
    assert!(p.gradient(r.x_star.as_ref().unwrap()).unwrap().norm_sq().sqrt() <= 1e-10);
    for m in [Method::Apgd2, Method::Pgd2] {
        let t = solve(&p, &SolverRun::new(m, StackedPoint::zeros(n, d), 20).record_iterates(true), &r).unwrap();
        for (x, row) in t.iterates.iter().zip(&t.rows) {
            for b in x.blocks() {
                assert!((b - x.block(0)).norm() <= 1e-12);
            }
            let support = x.block(0).iter().filter(|v| v.abs() > SUPPORT_TOL).count();
            assert!(support as u64 <= row.comm_rounds + 1, "{m}: support {support} at C={}", row.comm_rounds);
        }
    }
}

#[test]
fn harness_certification_default_spec() {
    let spec = CertifySpec::from_key_values(KeyValues::parse_inline("max_comm=60").unwrap()).unwrap();
    assert_eq!((spec.clients, spec.half_dim, spec.methods.len()), (4, 25, 2));
    let report = certify_lowerbound(&spec).unwrap();
    assert!(report.passed());
    for (_, cert) in &report.certificates {
        assert_eq!(cert.rows.len(), 61);
    }
    assert!((report.gamma_check / report.instance.gamma - 1.0).abs() < 1e-6);
}

#[test]
fn rejects_degenerate_instances() {
    assert!(build_instance(1, 10, 1e-3, 1.0, 1.0).is_err());
    assert!(build_instance(4, 1, 1e-3, 1.0, 1.0).is_err());
    assert!(build_instance(4, 10, 1e-3, 2e-3, 1.0).is_err());
    assert!(build_instance(4, 10, 1e-3, 1.0, 1e-4).is_err());
    assert!(build_instance(4, 100_000, 1e-2, 1.01, 1.0).is_err());
    assert!(nesterov_instance(4, 1.0, 0.5, 2, 1.0).is_err());
}
