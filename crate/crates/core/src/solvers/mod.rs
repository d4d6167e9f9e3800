//! Solver loops for the personalized objective, metered through
//! [`OracleLedger`].
//!
//! Step sizes in the proximal methods use per-client constants (μ, L, λ);
//! the stochastic methods work with constants of F itself, which carry the
//! extra 1/n.

mod proximal;
mod stochastic;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{OracleLedger, Problem, StackedPoint};

pub use proximal::{
    agd_inner_iters, apgd1_momentum, apgd2_momentum, katyusha_practical_iters, katyusha_theory_iters,
};
pub use stochastic::{estimator, expected_smoothness, Anchor, EstimatorDraw, SgdParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Pgd1,
    Pgd2,
    Apgd1,
    Apgd2,
    IapgdAgd,
    IapgdKatyusha,
    L2sgdPlus,
    Al2sgdPlus,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Pgd1,
        Method::Pgd2,
        Method::Apgd1,
        Method::Apgd2,
        Method::IapgdAgd,
        Method::IapgdKatyusha,
        Method::L2sgdPlus,
        Method::Al2sgdPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pgd1 => "pgd1",
            Method::Pgd2 => "pgd2",
            Method::Apgd1 => "apgd1",
            Method::Apgd2 => "apgd2",
            Method::IapgdAgd => "iapgd_agd",
            Method::IapgdKatyusha => "iapgd_katyusha",
            Method::L2sgdPlus => "l2sgd_plus",
            Method::Al2sgdPlus => "al2sgd_plus",
        }
    }

    fn is_stochastic(self) -> bool {
        matches!(self, Method::L2sgdPlus | Method::Al2sgdPlus)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidRun(format!("unknown method `{s}`")))
    }
}

/// Inner iteration schedule for the Katyusha variant of IAPGD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KatyushaSchedule {
    /// `√(m(L+λ)/(μ+λ)) + √(mμ(L+λ)/(λ(μ+λ)))·k`
    Practical,
    /// Constant-factor theory schedule; needs `F(x⁰) − F⋆`.
    Theory { initial_gap: f64 },
}

/// How AL2SGD+ and L2SGD+ charge communication for penalty steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CommModel {
    /// A round whenever the penalty coin differs from the previous one.
    #[default]
    Flip,
    /// A round on every penalty step.
    PerEvent,
}

/// Optional per-method settings. Setting a field the method does not read
/// is an error.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MethodParams {
    /// penalty-step probability (stochastic methods)
    pub p: Option<f64>,
    /// anchor refresh probability (stochastic methods)
    pub rho: Option<f64>,
    pub comm_model: Option<CommModel>,
    /// iteration cap for stochastic methods
    pub max_iters: Option<u64>,
    /// fixed inner iteration count (IAPGD), overrides the schedule
    pub inner_iters: Option<usize>,
    pub katyusha_schedule: Option<KatyushaSchedule>,
    /// prox residual tolerance (PGD1, APGD1)
    pub prox_tol: Option<f64>,
}

impl MethodParams {
    fn validate(&self, method: Method) -> Result<()> {
        let mut bad = Vec::new();
        let stochastic = method.is_stochastic();
        let iapgd = matches!(method, Method::IapgdAgd | Method::IapgdKatyusha);
        let proxy = matches!(method, Method::Pgd1 | Method::Apgd1);
        if !stochastic {
            if self.p.is_some() {
                bad.push("p");
            }
            if self.rho.is_some() {
                bad.push("rho");
            }
            if self.comm_model.is_some() {
                bad.push("comm_model");
            }
            if self.max_iters.is_some() {
                bad.push("max_iters");
            }
        }
        if !iapgd && self.inner_iters.is_some() {
            bad.push("inner_iters");
        }
        if method != Method::IapgdKatyusha && self.katyusha_schedule.is_some() {
            bad.push("katyusha_schedule");
        }
        if !proxy && self.prox_tol.is_some() {
            bad.push("prox_tol");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidRun(format!("{method} does not accept {}", bad.join(", "))))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopTarget {
    /// `(F(x) − F⋆)/(F(x⁰) − F⋆) ≤ value`
    RelSubopt(f64),
    /// `‖x − x⋆‖²/‖x⁰ − x⋆‖² ≤ value`
    RelDistSq(f64),
}

#[derive(Clone, Debug)]
pub struct SolverRun {
    pub method: Method,
    pub x0: StackedPoint,
    pub max_comm: u64,
    pub target: Option<StopTarget>,
    pub seed: u64,
    pub params: MethodParams,
    /// keep every logged iterate, for certification
    pub record_iterates: bool,
}

impl SolverRun {
    pub fn new(method: Method, x0: StackedPoint, max_comm: u64) -> Self {
        Self {
            method,
            x0,
            max_comm,
            target: None,
            seed: 0,
            params: MethodParams::default(),
            record_iterates: false,
        }
    }

    pub fn target(mut self, t: StopTarget) -> Self {
        self.target = Some(t);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn params(mut self, params: MethodParams) -> Self {
        self.params = params;
        self
    }

    pub fn record_iterates(mut self, on: bool) -> Self {
        self.record_iterates = on;
        self
    }
}

/// Optimal value and, when known, the optimum.
#[derive(Clone, Debug)]
pub struct Reference {
    pub f_star: f64,
    pub x_star: Option<StackedPoint>,
}

impl Reference {
    /// Exact reference for quadratic problems.
    pub fn exact(problem: &Problem) -> Result<Self> {
        let x = problem.quadratic_optimum()?.ok_or_else(|| {
            Error::InvalidProblem("exact reference needs quadratic losses".into())
        })?;
        Ok(Self { f_star: problem.objective(&x)?, x_star: Some(x) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    pub comm_rounds: u64,
    pub grad_calls: u64,
    pub prox_calls: u64,
    pub summand_grad_calls: u64,
    pub rel_subopt: f64,
    pub dist_sq: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub method: Method,
    pub rows: Vec<TraceRow>,
    /// iterate of every row, when requested
    pub iterates: Vec<StackedPoint>,
    pub final_point: StackedPoint,
    pub ledger: OracleLedger,
    pub iterations: u64,
    /// inner iteration counts per outer step (IAPGD)
    pub inner_iters: Vec<usize>,
}

impl Trace {
    /// First communication count at which the target holds.
    pub fn comm_to_target(&self, target: StopTarget, dist0: f64) -> Option<u64> {
        self.rows.iter().find(|r| row_meets(r, target, dist0)).map(|r| r.comm_rounds)
    }

    /// Summand gradients spent when the target first holds.
    pub fn summand_grads_to_target(&self, target: StopTarget, dist0: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| row_meets(r, target, dist0))
            .map(|r| r.summand_grad_calls)
    }
}

fn row_meets(r: &TraceRow, target: StopTarget, dist0: f64) -> bool {
    match target {
        StopTarget::RelSubopt(t) => r.rel_subopt <= t,
        StopTarget::RelDistSq(t) => r.dist_sq.is_some_and(|d| d <= t * dist0),
    }
}

/// A solver as a state machine advanced one iteration at a time.
trait SolverState {
    fn step(&mut self, problem: &Problem, ledger: &mut OracleLedger) -> Result<()>;
    /// The iterate tracked in the trace.
    fn current(&self) -> &StackedPoint;
    fn inner_iters(&self) -> Vec<usize> {
        Vec::new()
    }
    /// Oracle work done before the first iteration.
    fn charge_setup(&self, _ledger: &mut OracleLedger) {}
}

/// Independent stream `index` derived from the root seed. Stream 0 is the
/// coordinator, client i uses stream i + 1.
pub fn rng_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

pub(crate) fn client_streams(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n).map(|i| rng_stream(seed, i as u64 + 1)).collect()
}

/// Runs `run.method` on `problem` until the communication budget is spent
/// or the target is met. A trace row is logged at k = 0 and after every
/// iteration that communicated.
pub fn solve(problem: &Problem, run: &SolverRun, reference: &Reference) -> Result<Trace> {
    problem.check_point(&run.x0)?;
    run.params.validate(run.method)?;
    if let (Some(StopTarget::RelDistSq(_)), None) = (run.target, &reference.x_star) {
        return Err(Error::InvalidRun("distance target needs a known optimum".into()));
    }
    let mut state: Box<dyn SolverState> = match run.method {
        Method::Pgd1 | Method::Apgd1 => Box::new(proximal::ProxAveraging::new(problem, run)?),
        Method::Pgd2 | Method::Apgd2 => Box::new(proximal::GradAveraging::new(problem, run)?),
        Method::IapgdAgd | Method::IapgdKatyusha => Box::new(proximal::Inexact::new(problem, run)?),
        Method::Al2sgdPlus => Box::new(stochastic::Accelerated::new(problem, run)?),
        Method::L2sgdPlus => Box::new(stochastic::Plain::new(problem, run)?),
    };
    let max_iters = run.params.max_iters.unwrap_or(u64::MAX);
    let mut ledger = OracleLedger::new();
    state.charge_setup(&mut ledger);
    let f0 = problem.objective(&run.x0)?;
    let gap0 = f0 - reference.f_star;
    let dist0 = reference.x_star.as_ref().map(|xs| run.x0.dist_sq(xs));

    let mut rows = Vec::new();
    let mut iterates = Vec::new();
    let log = |x: &StackedPoint, k: u64, ledger: &OracleLedger| -> Result<TraceRow> {
        let rel = if gap0 > 0.0 { ((problem.objective(x)? - reference.f_star) / gap0).max(0.0) } else { 0.0 };
        Ok(TraceRow {
            k,
            comm_rounds: ledger.comm_rounds(),
            grad_calls: ledger.grad_calls(),
            prox_calls: ledger.prox_calls(),
            summand_grad_calls: ledger.summand_grad_calls(),
            rel_subopt: rel,
            dist_sq: reference.x_star.as_ref().map(|xs| x.dist_sq(xs)),
        })
    };
    let done = |row: &TraceRow| match run.target {
        Some(t) => row_meets(row, t, dist0.unwrap_or(0.0)),
        None => false,
    };

    let first = log(&run.x0, 0, &ledger)?;
    let mut finished = done(&first);
    rows.push(first);
    if run.record_iterates {
        iterates.push(run.x0.clone());
    }
    let mut k = 0u64;
    while !finished && ledger.comm_rounds() < run.max_comm && k < max_iters {
        let before = ledger.comm_rounds();
        state.step(problem, &mut ledger)?;
        k += 1;
        if ledger.comm_rounds() > before {
            let row = log(state.current(), k, &ledger)?;
            finished = done(&row);
            rows.push(row);
            if run.record_iterates {
                iterates.push(state.current().clone());
            }
        }
    }
    Ok(Trace {
        method: run.method,
        rows,
        iterates,
        final_point: state.current().clone(),
        ledger,
        iterations: k,
        inner_iters: state.inner_iters(),
    })
}
