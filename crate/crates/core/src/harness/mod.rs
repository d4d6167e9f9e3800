//! Experiment driver behind the command-line interface: builds problems from
//! configuration, runs solver comparisons, writes CSV traces and certifies
//! lower bounds.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{normalize, parse_libsvm, split, Dataset};
use crate::error::{Error, Result};
use crate::losses::{LogisticLoss, QuadraticLoss};
use crate::lowerbound::{build_instance, Certificate, LowerBoundInstance};
use crate::model::{LocalLoss, Problem, StackedPoint};
use crate::solvers::{
    solve, KatyushaSchedule, Method, MethodParams, Reference, SolverRun, StopTarget, Trace,
};
use crate::synthetic::{mushroom_like, random_quadratic};

pub use config::{
    ExperimentConfig, KeyValues, LambdaRule, MethodSpec, ProbRule, ProblemSource, ScheduleChoice, TargetMetric,
};

pub const TRACE_HEADER: [&str; 7] =
    ["k", "comm_rounds", "grad_calls", "prox_calls", "summand_grad_calls", "rel_subopt", "dist_sq"];

/// Logged relative suboptimality never drops below this.
pub const REL_SUBOPT_FLOOR: f64 = 1e-16;

/// Writes one row per logged iteration.
pub fn write_trace_csv<W: Write>(trace: &Trace, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(TRACE_HEADER)?;
    for r in &trace.rows {
        wr.write_record([
            r.k.to_string(),
            r.comm_rounds.to_string(),
            r.grad_calls.to_string(),
            r.prox_calls.to_string(),
            r.summand_grad_calls.to_string(),
            format!("{:e}", r.rel_subopt.max(REL_SUBOPT_FLOOR)),
            r.dist_sq.map(|d| format!("{d:e}")).unwrap_or_default(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Quadratic clients `½zᵀHz + bᵀz` in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub clients: Vec<ClientQuadratic>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientQuadratic {
    pub hessian: Vec<Vec<f64>>,
    pub linear: Vec<f64>,
}

impl InstanceFile {
    pub fn from_problem(problem: &Problem) -> Result<Self> {
        let clients = problem
            .losses
            .iter()
            .map(|f| {
                let (h, b) = f
                    .quadratic_form()
                    .ok_or_else(|| Error::InvalidProblem("only quadratic problems can be exported".into()))?;
                Ok(ClientQuadratic {
                    hessian: h.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    linear: b.iter().copied().collect(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { lambda: Some(problem.lambda), clients })
    }

    pub fn losses(&self) -> Result<Vec<Arc<dyn LocalLoss>>> {
        if self.clients.is_empty() {
            return Err(Error::InvalidProblem("instance has no clients".into()));
        }
        self.clients
            .iter()
            .map(|c| {
                let d = c.linear.len();
                if c.hessian.len() != d || c.hessian.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidProblem(format!("hessian must be {d}x{d}")));
                }
                let h = DMatrix::from_fn(d, d, |i, j| c.hessian[i][j]);
                let loss: Arc<dyn LocalLoss> =
                    Arc::new(QuadraticLoss::new(h, DVector::from_column_slice(&c.linear), 0.0)?);
                Ok(loss)
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// `gen-quadratic`: keys clients, dim, mu (1e-4), smoothness (1), lambda
/// (1), seed (0).
pub fn gen_quadratic(mut kv: KeyValues) -> Result<InstanceFile> {
    let clients: usize = kv.require("clients")?;
    let dim: usize = kv.require("dim")?;
    let mu = kv.take_parsed("mu")?.unwrap_or(1e-4);
    let smoothness = kv.take_parsed("smoothness")?.unwrap_or(1.0);
    let lambda = kv.take_parsed("lambda")?.unwrap_or(1.0);
    let seed = kv.take_parsed("seed")?.unwrap_or(0);
    kv.finish()?;
    InstanceFile::from_problem(&random_quadratic(clients, dim, mu, smoothness, lambda, seed)?)
}

fn base_quadratic(cfg: &ExperimentConfig) -> Result<Problem> {
    match &cfg.source {
        ProblemSource::Quadratic { clients, dim, smoothness, instance_seed } => {
            random_quadratic(*clients, *dim, cfg.mu, *smoothness, 0.0, *instance_seed)
        }
        _ => Err(Error::Config("not a quadratic source".into())),
    }
}

/// A problem family: losses fixed, λ chosen per run.
pub struct BuiltProblem {
    pub base: Problem,
    /// summands per client
    pub m: usize,
    pub quadratic: bool,
    pub notes: Vec<String>,
    pub lowerbound: Option<LowerBoundInstance>,
}

fn logistic_problem(data: &Dataset, clients: usize, mode: crate::data::SplitMode, seed: u64, reg: f64, notes: &mut Vec<String>) -> Result<(Problem, usize)> {
    let s = split(data, clients, mode, seed)?;
    if s.dropped > 0 {
        notes.push(format!("dropped {} remainder rows so every client holds {} rows", s.dropped, s.m));
    }
    let losses = s
        .assignment
        .iter()
        .map(|idx| {
            let loss: Arc<dyn LocalLoss> =
                Arc::new(LogisticLoss::new(data.dense_rows(idx), data.labels_of(idx), reg)?);
            Ok(loss)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Problem::new(losses, 0.0)?, s.m))
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<BuiltProblem> {
    let mut notes = Vec::new();
    match &cfg.source {
        ProblemSource::Quadratic { .. } => {
            Ok(BuiltProblem { base: base_quadratic(cfg)?, m: 1, quadratic: true, notes, lowerbound: None })
        }
        ProblemSource::Instance { path } => {
            let inst = InstanceFile::read(path)?;
            let base = Problem::new(inst.losses()?, inst.lambda.unwrap_or(0.0))?;
            Ok(BuiltProblem { base, m: 1, quadratic: true, notes, lowerbound: None })
        }
        ProblemSource::Libsvm { path, clients, split: mode, rows, normalize: norm, synthetic_fallback } => {
            let mut data = if path.exists() {
                parse_libsvm(std::io::BufReader::new(fs::File::open(path)?))?
            } else if *synthetic_fallback {
                notes.push(format!("{} not found; using the synthetic mushroom-like table", path.display()));
                mushroom_like(rows.unwrap_or(500), cfg.seed)
            } else {
                return Err(Error::Config(format!("data file {} does not exist", path.display())));
            };
            if let Some(r) = rows {
                data = data.head(*r);
            }
            if *norm {
                data = normalize(&data);
            }
            let (base, m) = logistic_problem(&data, *clients, *mode, cfg.seed, cfg.mu, &mut notes)?;
            Ok(BuiltProblem { base, m, quadratic: false, notes, lowerbound: None })
        }
        ProblemSource::SyntheticLogistic { clients, split: mode, rows } => {
            let data = normalize(&mushroom_like(*rows, cfg.seed));
            let (base, m) = logistic_problem(&data, *clients, *mode, cfg.seed, cfg.mu, &mut notes)?;
            Ok(BuiltProblem { base, m, quadratic: false, notes, lowerbound: None })
        }
        ProblemSource::LowerBound { clients, half_dim, smoothness } => {
            let lambda = match &cfg.lambda {
                LambdaRule::Values(v) if v.len() == 1 => v[0],
                _ => return Err(Error::Config("lower-bound source takes a single numeric lambda".into())),
            };
            let inst = build_instance(*clients, *half_dim, cfg.mu, *smoothness, lambda)?;
            notes.extend(inst.warnings.iter().cloned());
            Ok(BuiltProblem { base: inst.problem.clone(), m: 1, quadratic: true, notes, lowerbound: Some(inst) })
        }
    }
}

/// How the optimal value was obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceSource {
    LinearSolve,
    /// restarted APGD1 with tight prox solves
    Iterative { comm_rounds: u64, gap_bound: f64 },
}

impl std::fmt::Display for ReferenceSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::LinearSolve => f.write_str("linear_solve"),
            Self::Iterative { comm_rounds, gap_bound } => {
                write!(f, "apgd1_reference(comm={comm_rounds};gap_bound={gap_bound:.3e})")
            }
        }
    }
}

/// Reference optimum for a non-quadratic problem: APGD1 with prox tolerance
/// 1e-12, restarted every 50 rounds, for at most `budget` rounds or until
/// the strong-convexity gap bound `n‖∇F‖²/(2μ)` falls below `1e-13·|F|`.
pub fn iterative_reference(problem: &Problem, budget: u64) -> Result<(Reference, ReferenceSource)> {
    const CHUNK: u64 = 50;
    let n = problem.n() as f64;
    let mu = problem.constants.mu;
    let mut x = StackedPoint::zeros(problem.n(), problem.dim());
    let mut used = 0;
    loop {
        let f = problem.objective(&x)?;
        let gap_bound = problem.gradient(&x)?.norm_sq() * n / (2.0 * mu);
        if gap_bound <= 1e-13 * f.abs() || used >= budget {
            let source = ReferenceSource::Iterative { comm_rounds: used, gap_bound };
            return Ok((Reference { f_star: f, x_star: Some(x) }, source));
        }
        let steps = CHUNK.min(budget - used);
        let params = MethodParams { prox_tol: Some(1e-12), ..Default::default() };
        let run = SolverRun::new(Method::Apgd1, x, steps).params(params);
        let t = solve(problem, &run, &Reference { f_star: f, x_star: None })?;
        used += t.ledger.comm_rounds();
        x = t.final_point;
    }
}

pub fn reference_for(built: &BuiltProblem, problem: &Problem, max_comm: u64) -> Result<(Reference, ReferenceSource)> {
    if built.quadratic {
        Ok((Reference::exact(problem)?, ReferenceSource::LinearSolve))
    } else {
        iterative_reference(problem, 10 * max_comm.max(1))
    }
}

fn resolve_params(spec: &MethodSpec, problem: &Problem, m: usize, initial_gap: f64) -> Result<MethodParams> {
    let inv_m = 1.0 / m as f64;
    let p = match spec.p {
        ProbRule::Auto => None,
        ProbRule::Value(v) => Some(v),
        ProbRule::InverseM => Some(inv_m),
        ProbRule::PTimesOneMinusP => return Err(Error::Config("p(1-p) is only valid for rho".into())),
    };
    let p_eff = p.unwrap_or(problem.lambda / (problem.lambda + problem.constants.l_tilde));
    let rho = match spec.rho {
        ProbRule::Auto => None,
        ProbRule::Value(v) => Some(v),
        ProbRule::InverseM => Some(inv_m),
        ProbRule::PTimesOneMinusP => Some(p_eff * (1.0 - p_eff)),
    };
    let stochastic = matches!(spec.method, Method::Al2sgdPlus | Method::L2sgdPlus);
    if !stochastic && (spec.p != ProbRule::Auto || spec.rho != ProbRule::Auto) {
        return Err(Error::Config(format!("{} takes no p or rho", spec.method)));
    }
    Ok(MethodParams {
        p,
        rho,
        comm_model: spec.comm_model,
        max_iters: spec.max_iters,
        inner_iters: spec.inner_iters,
        katyusha_schedule: spec.schedule.map(|s| match s {
            ScheduleChoice::Practical => KatyushaSchedule::Practical,
            ScheduleChoice::Theory => KatyushaSchedule::Theory { initial_gap },
        }),
        prox_tol: spec.prox_tol,
    })
}

/// One method run at one λ.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub lambda: f64,
    pub method: Method,
    pub trace: Trace,
    pub f_star: f64,
    pub reference: ReferenceSource,
    pub comm_to_target: Option<u64>,
    pub summand_grads_to_target: Option<u64>,
    pub csv_path: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn write_summary<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "lambda",
            "method",
            "iterations",
            "comm_rounds",
            "grad_calls",
            "prox_calls",
            "summand_grad_calls",
            "final_rel_subopt",
            "comm_to_target",
            "summand_grads_to_target",
            "f_star",
            "f_star_source",
        ])?;
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.runs {
            let l = r.trace.ledger;
            let last = r.trace.rows.last().map(|x| x.rel_subopt).unwrap_or(1.0);
            wr.write_record([
                r.lambda.to_string(),
                r.method.to_string(),
                r.trace.iterations.to_string(),
                l.comm_rounds().to_string(),
                l.grad_calls().to_string(),
                l.prox_calls().to_string(),
                l.summand_grad_calls().to_string(),
                format!("{:e}", last.max(REL_SUBOPT_FLOOR)),
                opt(r.comm_to_target),
                opt(r.summand_grads_to_target),
                format!("{:e}", r.f_star),
                r.reference.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Runs every configured method at every λ and, when an output directory is
/// set, writes one trace CSV per run plus `summary.csv`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let built = build_problem(cfg)?;
    let lambdas = match &cfg.lambda {
        LambdaRule::Values(v) => v.clone(),
        LambdaRule::InverseM => vec![1.0 / built.m as f64],
    };
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir)?;
    }
    let n = built.base.n();
    let d = built.base.dim();
    let x0 = StackedPoint::zeros(n, d);
    let mut runs = Vec::new();
    for &lambda in &lambdas {
        let problem = built.base.with_lambda(lambda)?;
        let (reference, source) = reference_for(&built, &problem, cfg.max_comm)?;
        let dist0 = reference.x_star.as_ref().map(|xs| x0.dist_sq(xs)).unwrap_or(0.0);
        let target = cfg.target.map(|t| match cfg.target_metric {
            TargetMetric::RelSubopt => StopTarget::RelSubopt(t),
            TargetMetric::RelDist => StopTarget::RelDistSq(t),
        });
        let gap0 = problem.objective(&x0)? - reference.f_star;
        for spec in &cfg.methods {
            let params = resolve_params(spec, &problem, built.m, gap0)?;
            let mut run = SolverRun::new(spec.method, x0.clone(), cfg.max_comm).seed(cfg.seed).params(params);
            run.target = target;
            let trace = solve(&problem, &run, &reference)?;
            let csv_path = match &cfg.output {
                None => None,
                Some(dir) => {
                    let name = if lambdas.len() == 1 {
                        format!("{}.csv", spec.method)
                    } else {
                        format!("{}_lambda_{}.csv", spec.method, lambda)
                    };
                    let path = dir.join(name);
                    write_trace_csv(&trace, fs::File::create(&path)?)?;
                    Some(path)
                }
            };
            runs.push(RunRecord {
                lambda,
                method: spec.method,
                comm_to_target: target.and_then(|t| trace.comm_to_target(t, dist0)),
                summand_grads_to_target: target.and_then(|t| trace.summand_grads_to_target(t, dist0)),
                trace,
                f_star: reference.f_star,
                reference: source.clone(),
                csv_path,
            });
        }
    }
    let report = ExperimentReport { runs, notes: built.notes };
    if let Some(dir) = &cfg.output {
        report.write_summary(fs::File::create(dir.join("summary.csv"))?)?;
    }
    Ok(report)
}

/// Lower-bound certification settings.
#[derive(Clone, Debug, PartialEq)]
pub struct CertifySpec {
    pub clients: usize,
    pub half_dim: usize,
    pub mu: f64,
    pub lambda: f64,
    pub smoothness: f64,
    pub methods: Vec<Method>,
    pub max_comm: u64,
    pub output: Option<PathBuf>,
}

impl CertifySpec {
    /// Keys (defaults): clients (4), half_dim (25), mu (1e-4), lambda (1),
    /// smoothness (lambda + mu), methods (apgd1, apgd2), max_comm (4·half_dim),
    /// output.
    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let half_dim = kv.take_parsed("half_dim")?.unwrap_or(25);
        let mu = kv.take_parsed("mu")?.unwrap_or(1e-4);
        let lambda = kv.take_parsed("lambda")?.unwrap_or(1.0);
        let methods = match kv.take("methods") {
            None => vec![Method::Apgd1, Method::Apgd2],
            Some(v) => v.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?,
        };
        let spec = Self {
            clients: kv.take_parsed("clients")?.unwrap_or(4),
            half_dim,
            mu,
            lambda,
            smoothness: kv.take_parsed("smoothness")?.unwrap_or(lambda + mu),
            methods,
            max_comm: kv.take_parsed("max_comm")?.unwrap_or(4 * half_dim as u64),
            output: kv.take("output").map(PathBuf::from),
        };
        kv.finish()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug)]
pub struct CertifyReport {
    pub instance: LowerBoundInstance,
    pub gamma_check: f64,
    pub certificates: Vec<(Method, Certificate)>,
}

impl CertifyReport {
    pub fn passed(&self) -> bool {
        self.certificates.iter().all(|(_, c)| c.passed())
    }
}

/// Builds the instance, runs each method from zero and certifies the trace.
pub fn certify_lowerbound(spec: &CertifySpec) -> Result<CertifyReport> {
    let inst = build_instance(spec.clients, spec.half_dim, spec.mu, spec.smoothness, spec.lambda)?;
    let (x_star, gamma_check) = inst.exact_optimum()?;
    let reference = Reference { f_star: inst.problem.objective(&x_star)?, x_star: Some(x_star.clone()) };
    let x0 = StackedPoint::zeros(inst.n, inst.dim());
    if let Some(dir) = &spec.output {
        fs::create_dir_all(dir)?;
    }
    let mut certificates = Vec::new();
    for &method in &spec.methods {
        let run = SolverRun::new(method, x0.clone(), spec.max_comm).record_iterates(true);
        let trace = solve(&inst.problem, &run, &reference)?;
        let pairs: Vec<_> = trace
            .iterates
            .iter()
            .cloned()
            .zip(trace.rows.iter().map(|r| r.comm_rounds))
            .collect();
        let cert = inst.certify(&x_star, &pairs)?;
        if let Some(dir) = &spec.output {
            let mut wr = csv::Writer::from_path(dir.join(format!("certificate_{method}.csv")))?;
            wr.write_record(["k", "comm_rounds", "dist_ratio", "bound", "support", "support_limit", "pass"])?;
            for r in &cert.rows {
                wr.write_record([
                    r.k.to_string(),
                    r.comm_rounds.to_string(),
                    format!("{:e}", r.dist_ratio),
                    format!("{:e}", r.bound),
                    r.support.to_string(),
                    (r.comm_rounds + 1).to_string(),
                    (r.bound_ok && r.support_ok).to_string(),
                ])?;
            }
            wr.flush()?;
        }
        certificates.push((method, cert));
    }
    Ok(CertifyReport { instance: inst, gamma_check, certificates })
}
