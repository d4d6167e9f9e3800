use std::fs;

use perfl::harness::{
    gen_quadratic, run_experiment, write_trace_csv, ExperimentConfig, InstanceFile, KeyValues, TRACE_HEADER,
};
use perfl::synthetic::random_quadratic;
use perfl::Error;

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_key_values(KeyValues::parse(text).unwrap()).unwrap()
}

#[test]
fn zero_budget_writes_the_start_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&format!(
        "source = quadratic\nclients = 3\ndim = 4\nlambda = 1\nmethods = apgd1, al2sgd_plus\nmax_comm = 0\noutput = {}\n",
        dir.path().display()
    ));
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.runs.len(), 2);
    let text = fs::read_to_string(dir.path().join("apgd1.csv")).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], TRACE_HEADER.join(","));
    assert_eq!(lines.len(), 2);
    let cols: Vec<_> = lines[1].split(',').collect();
    assert_eq!((cols[0], cols[1], cols[5]), ("0", "0", "1e0"));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.lines().nth(1).unwrap().ends_with(",linear_solve"));
}

#[test]
fn lambda_grid_names_files_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&format!(
        "source = quadratic\nclients = 4\ndim = 5\nmu = 0.01\nlambda = 0.1, 10\nmethods = apgd1, apgd2\n\
         max_comm = 2000\ntarget = 1e-4\ntarget_metric = rel_dist\noutput = {}\n",
        dir.path().display()
    ));
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.runs.len(), 4);
    for name in ["apgd1_lambda_0.1.csv", "apgd2_lambda_10.csv", "summary.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    for run in &report.runs {
        let c = run.comm_to_target.unwrap();
        assert_eq!(c, run.trace.ledger.comm_rounds());
    }
}

#[test]
fn instance_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_quadratic(KeyValues::parse_inline("clients=3,dim=4,mu=0.1,smoothness=2,lambda=0.5,seed=8").unwrap())
        .unwrap();
    let path = dir.path().join("inst.json");
    inst.write(&path).unwrap();
    let back = InstanceFile::read(&path).unwrap();
    assert_eq!(back, inst);
    let direct = random_quadratic(3, 4, 0.1, 2.0, 0.5, 8).unwrap();
    let losses = back.losses().unwrap();
    let z = nalgebra::DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
    for (a, b) in losses.iter().zip(&direct.losses) {
        assert!((a.value(&z) - b.value(&z)).abs() < 1e-12);
    }
    fs::write(dir.path().join("run.cfg"), "source = instance\npath = inst.json\nlambda = 0.5\nmethods = pgd2\nmax_comm = 5\n")
        .unwrap();
    let cfg = ExperimentConfig::read(&dir.path().join("run.cfg")).unwrap();
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.runs[0].trace.rows.len(), 6);
    assert!(gen_quadratic(KeyValues::parse_inline("clients=3").unwrap()).is_err());
}

#[test]
fn logistic_runs_use_an_iterative_reference() {
    let cfg = config(
        "source = synthetic_logistic\nclients = 7\nrows = 100\nlambda = 1/m\nmethods = al2sgd_plus\n\
         al2sgd_plus.p = 1/m\nal2sgd_plus.rho = 1/m\nmax_comm = 50\nseed = 2\n",
    );
    let report = run_experiment(&cfg).unwrap();
    assert!(report.notes.iter().any(|n| n.contains("dropped 2")));
    let run = &report.runs[0];
    assert!((run.lambda - 1.0 / 14.0).abs() < 1e-15);
    assert!(run.reference.to_string().starts_with("apgd1_reference"));
    assert!(run.trace.rows.iter().all(|r| r.rel_subopt >= 0.0));
}

#[test]
fn configuration_errors() {
    let base = "source = quadratic\nclients = 2\ndim = 3\nlambda = 1\nmax_comm = 5\n";
    let bad_p = config(&format!("{base}methods = apgd1\napgd1.p = 0.5\n"));
    assert!(matches!(run_experiment(&bad_p), Err(Error::Config(_))));
    let missing = config(
        "source = libsvm\npath = /nonexistent/data\nclients = 2\nlambda = 1\nmethods = apgd1\nmax_comm = 5\n",
    );
    assert!(run_experiment(&missing).is_err());
    let lb = config("source = lowerbound\nclients = 4\nhalf_dim = 10\nsmoothness = 1.0001\nlambda = 1\nmethods = apgd2\nmax_comm = 10\n");
    assert_eq!(run_experiment(&lb).unwrap().runs[0].trace.rows.len(), 11);
    assert!(ExperimentConfig::from_key_values(KeyValues::parse(&format!("{base}methods = sgd\n")).unwrap()).is_err());
}

#[test]
fn trace_csv_floors_tiny_suboptimality() {
    let p = random_quadratic(2, 3, 0.5, 1.0, 1.0, 1).unwrap();
    let r = perfl::solvers::Reference::exact(&p).unwrap();
    let run = perfl::solvers::SolverRun::new(perfl::solvers::Method::Apgd1, perfl::StackedPoint::zeros(2, 3), 200);
    let t = perfl::solvers::solve(&p, &run, &r).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&t, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let last: Vec<_> = text.lines().last().unwrap().split(',').collect();
    assert_eq!(last[5], "1e-16");
    assert!(!last[6].is_empty());
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let kv = KeyValues::read(&path).unwrap();
        if path.file_name().unwrap() == "certify.cfg" {
            perfl::harness::CertifySpec::from_key_values(kv).unwrap();
        } else {
            ExperimentConfig::from_key_values(kv).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
    }
}
