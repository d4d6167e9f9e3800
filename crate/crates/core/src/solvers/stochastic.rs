//! Loopless variance-reduced local SGD, plain and accelerated.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{client_streams, rng_stream, CommModel, Method, SolverRun, SolverState};
use crate::error::{Error, Result};
use crate::model::{OracleLedger, Problem, StackedPoint};
use crate::subsolvers::LKatyushaParams;

/// Control-variate anchor: `w`, its mean and every client's full gradient at `w_i`.
#[derive(Clone, Debug)]
pub struct Anchor {
    pub w: StackedPoint,
    pub wbar: DVector<f64>,
    pub grads: Vec<DVector<f64>>,
}

impl Anchor {
    pub fn new(problem: &Problem, w: StackedPoint) -> Result<Self> {
        problem.check_point(&w)?;
        let grads = problem
            .losses
            .par_iter()
            .zip(w.blocks().par_iter())
            .map(|(f, wi)| f.grad(wi))
            .collect();
        let wbar = w.mean();
        Ok(Self { w, wbar, grads })
    }
}

/// Outcome of the estimator's coins.
#[derive(Clone, Copy, Debug)]
pub enum EstimatorDraw<'a> {
    /// local step, client i samples summand `j[i]`
    Local(&'a [usize]),
    /// penalty step
    Penalty,
}

/// `max{L̃/(n(1−p)), λ/(np)}`
pub fn expected_smoothness(problem: &Problem, p: f64) -> f64 {
    let n = problem.n() as f64;
    (problem.constants.l_tilde / (n * (1.0 - p))).max(problem.lambda / (n * p))
}

/// The variance-reduced gradient estimator for a given coin outcome.
pub fn estimator(
    problem: &Problem,
    x: &StackedPoint,
    anchor: &Anchor,
    p: f64,
    draw: EstimatorDraw,
) -> Result<StackedPoint> {
    let n = problem.n() as f64;
    let lambda = problem.lambda;
    let blocks = match draw {
        EstimatorDraw::Local(js) => {
            if js.len() != problem.n() {
                return Err(Error::DimensionMismatch { expected: problem.n(), got: js.len() });
            }
            let c = 1.0 / (n * (1.0 - p));
            problem
                .losses
                .par_iter()
                .enumerate()
                .map(|(i, f)| {
                    let wi = anchor.w.block(i);
                    let diff = f.summand_grad(js[i], x.block(i))? - f.summand_grad(js[i], wi)?;
                    Ok(diff * c + &anchor.grads[i] / n + (wi - &anchor.wbar) * (lambda / n))
                })
                .collect::<Result<Vec<_>>>()?
        }
        EstimatorDraw::Penalty => {
            let xbar = x.mean();
            let a = lambda / (n * p);
            let b = (1.0 / p - 1.0) * lambda / n;
            x.blocks()
                .iter()
                .enumerate()
                .map(|(i, xi)| {
                    (xi - &xbar) * a - (anchor.w.block(i) - &anchor.wbar) * b + &anchor.grads[i] / n
                })
                .collect()
        }
    };
    StackedPoint::new(blocks)
}

/// Resolved probabilities and step sizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdParams {
    pub p: f64,
    pub rho: f64,
    /// smoothness of F, `(λ + L̃)/n`
    pub smoothness: f64,
    /// expected smoothness of the estimator
    pub expected_smoothness: f64,
    pub accel: LKatyushaParams,
    /// step of the non-accelerated method
    pub plain_step: f64,
}

impl SgdParams {
    /// Defaults: `p = λ/(λ+L̃)`, `ρ = p(1−p)`.
    pub fn resolve(problem: &Problem, p: Option<f64>, rho: Option<f64>, method: Method) -> Result<Self> {
        let lambda = problem.lambda;
        let c = problem.constants;
        let p = p.unwrap_or(lambda / (lambda + c.l_tilde));
        let rho = rho.unwrap_or(p * (1.0 - p));
        let fail = |reason: String| Error::Precondition { method: method.name().into(), reason };
        if !(p > 0.0 && p < 1.0) {
            return Err(fail(format!("p must lie in (0, 1), got {p}")));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(fail(format!("rho must lie in (0, 1], got {rho}")));
        }
        let n = problem.n() as f64;
        let smoothness = (lambda + c.l_tilde) / n;
        let es = expected_smoothness(problem, p);
        let accel = LKatyushaParams::new(c.mu / n, smoothness, es, rho);
        Ok(Self {
            p,
            rho,
            smoothness,
            expected_smoothness: es,
            accel,
            plain_step: 1.0 / (4.0 * smoothness.max(es)),
        })
    }
}

/// Shared coin machinery and bookkeeping.
struct Coins {
    coordinator: ChaCha8Rng,
    clients: Vec<ChaCha8Rng>,
    prev_penalty: bool,
    model: CommModel,
    m: usize,
}

impl Coins {
    fn new(problem: &Problem, run: &SolverRun) -> Self {
        Self {
            coordinator: rng_stream(run.seed, 0),
            clients: client_streams(run.seed, problem.n()),
            prev_penalty: false,
            model: run.params.comm_model.unwrap_or_default(),
            m: problem.constants.m,
        }
    }

    /// Draws the step type, charges the ledger and returns the estimator.
    fn gradient(
        &mut self,
        problem: &Problem,
        x: &StackedPoint,
        anchor: &Anchor,
        p: f64,
        ledger: &mut OracleLedger,
    ) -> Result<StackedPoint> {
        let penalty = self.coordinator.random::<f64>() < p;
        let comm = match self.model {
            CommModel::Flip => penalty != self.prev_penalty,
            CommModel::PerEvent => penalty,
        };
        self.prev_penalty = penalty;
        if comm {
            ledger.communicate(1);
        }
        if penalty {
            estimator(problem, x, anchor, p, EstimatorDraw::Penalty)
        } else {
            let m = self.m;
            let js: Vec<usize> = self.clients.iter_mut().map(|r| r.random_range(0..m)).collect();
            ledger.summand_grads(1);
            estimator(problem, x, anchor, p, EstimatorDraw::Local(&js))
        }
    }

    /// With probability ρ moves the anchor to `y`.
    fn refresh(
        &mut self,
        problem: &Problem,
        anchor: &mut Anchor,
        y: &StackedPoint,
        rho: f64,
        ledger: &mut OracleLedger,
    ) -> Result<()> {
        if self.coordinator.random::<f64>() < rho {
            *anchor = Anchor::new(problem, y.clone())?;
            ledger.summand_grads(self.m as u64);
            ledger.communicate(1);
        }
        Ok(())
    }
}

fn check_finite_sum(problem: &Problem, method: Method) -> Result<()> {
    if problem.losses.iter().any(|f| f.num_summands() != problem.constants.m) {
        return Err(Error::Precondition {
            method: method.name().into(),
            reason: "every client needs the same number of summands".into(),
        });
    }
    Ok(())
}

/// AL2SGD+. The tracked iterate is `y`.
pub(super) struct Accelerated {
    y: StackedPoint,
    z: StackedPoint,
    anchor: Anchor,
    params: SgdParams,
    coins: Coins,
}

impl Accelerated {
    pub(super) fn new(problem: &Problem, run: &SolverRun) -> Result<Self> {
        check_finite_sum(problem, run.method)?;
        let params = SgdParams::resolve(problem, run.params.p, run.params.rho, run.method)?;
        Ok(Self {
            y: run.x0.clone(),
            z: run.x0.clone(),
            anchor: Anchor::new(problem, run.x0.clone())?,
            params,
            coins: Coins::new(problem, run),
        })
    }
}

impl SolverState for Accelerated {
    fn charge_setup(&self, ledger: &mut OracleLedger) {
        ledger.summand_grads(self.coins.m as u64);
    }

    fn step(&mut self, problem: &Problem, ledger: &mut OracleLedger) -> Result<()> {
        let a = self.params.accel;
        let x = StackedPoint::combination(&[
            (a.theta1, &self.z),
            (a.theta2, &self.anchor.w),
            (1.0 - a.theta1 - a.theta2, &self.y),
        ]);
        let g = self.coins.gradient(problem, &x, &self.anchor, self.params.p, ledger)?;
        let mut y_next = x.clone();
        y_next.axpy(-a.eta, &g);
        // z ← βz + (1−β)x − γg, since (y⁺ − x)/η = −g
        let mut z_next = self.z.scale(a.beta);
        z_next.axpy(1.0 - a.beta, &x);
        z_next.axpy(-a.gamma, &g);
        self.z = z_next;
        self.y = y_next;
        self.coins.refresh(problem, &mut self.anchor, &self.y, self.params.rho, ledger)
    }

    fn current(&self) -> &StackedPoint {
        &self.y
    }
}

/// L2SGD+: the same estimator with a plain step.
pub(super) struct Plain {
    x: StackedPoint,
    anchor: Anchor,
    params: SgdParams,
    coins: Coins,
}

impl Plain {
    pub(super) fn new(problem: &Problem, run: &SolverRun) -> Result<Self> {
        check_finite_sum(problem, run.method)?;
        let params = SgdParams::resolve(problem, run.params.p, run.params.rho, run.method)?;
        Ok(Self {
            x: run.x0.clone(),
            anchor: Anchor::new(problem, run.x0.clone())?,
            params,
            coins: Coins::new(problem, run),
        })
    }
}

impl SolverState for Plain {
    fn charge_setup(&self, ledger: &mut OracleLedger) {
        ledger.summand_grads(self.coins.m as u64);
    }

    fn step(&mut self, problem: &Problem, ledger: &mut OracleLedger) -> Result<()> {
        let g = self.coins.gradient(problem, &self.x, &self.anchor, self.params.p, ledger)?;
        self.x.axpy(-self.params.plain_step, &g);
        self.coins.refresh(problem, &mut self.anchor, &self.x, self.params.rho, ledger)
    }

    fn current(&self) -> &StackedPoint {
        &self.x
    }
}
