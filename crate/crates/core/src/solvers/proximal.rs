//! Deterministic proximal methods and the inexact variant with local solvers.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{client_streams, KatyushaSchedule, Method, SolverRun, SolverState};
use crate::error::{Error, Result};
use crate::losses::DEFAULT_PROX_TOL;
use crate::model::{OracleLedger, Problem, SmoothnessInfo, StackedPoint};
use crate::subsolvers::{agd_solve, katyusha_solve, LocalSubproblem};

/// `(√λ − √μ)/(√λ + √μ)`
pub fn apgd1_momentum(lambda: f64, mu: f64) -> f64 {
    (lambda.sqrt() - mu.sqrt()) / (lambda.sqrt() + mu.sqrt())
}

/// `(√(L/μ) − 1)/(√(L/μ) + 1)`
pub fn apgd2_momentum(l: f64, mu: f64) -> f64 {
    let s = (l / mu).sqrt();
    (s - 1.0) / (s + 1.0)
}

fn ceil_at_least_one(t: f64) -> usize {
    if t.is_finite() && t > 1.0 {
        t.ceil() as usize
    } else {
        1
    }
}

/// Inner AGD iterations at outer step `k`:
/// `√((L+λ)/(μ+λ))·log(1152Lλn²(2√(λ/μ)+1)²/μ²) + 4√(μ(L+λ)/(λ(μ+λ)))·k`.
pub fn agd_inner_iters(c: &SmoothnessInfo, lambda: f64, n: usize, k: u64) -> usize {
    let (l, mu) = (c.l, c.mu);
    let n = n as f64;
    let ratio = ((l + lambda) / (mu + lambda)).sqrt();
    let s = 2.0 * (lambda / mu).sqrt() + 1.0;
    let log_term = (1152.0 * l * lambda * n * n * s * s / (mu * mu)).ln();
    let slope = 4.0 * (mu * (l + lambda) / (lambda * (mu + lambda))).sqrt();
    ceil_at_least_one(ratio * log_term + slope * k as f64)
}

/// `√(m(L+λ)/(μ+λ)) + √(mμ(L+λ)/(λ(μ+λ)))·k`
pub fn katyusha_practical_iters(c: &SmoothnessInfo, lambda: f64, k: u64) -> usize {
    let m = c.m as f64;
    let (l, mu) = (c.l, c.mu);
    let base = (m * (l + lambda) / (mu + lambda)).sqrt();
    let slope = (m * mu * (l + lambda) / (lambda * (mu + lambda))).sqrt();
    ceil_at_least_one(base + slope * k as f64)
}

/// `(m + √(m(L̃+λ)/(μ+λ)))·(log(1/R²) + k√(μ/λ))` with
/// `R = √(2·gap)/(2√(λ/μ)(2√(λ/μ)+1))`.
pub fn katyusha_theory_iters(c: &SmoothnessInfo, lambda: f64, k: u64, initial_gap: f64) -> usize {
    let m = c.m as f64;
    let (lt, mu) = (c.l_tilde, c.mu);
    let s = (lambda / mu).sqrt();
    let r = (2.0 * initial_gap).sqrt() / (2.0 * s * (2.0 * s + 1.0));
    let factor = m + (m * (lt + lambda) / (mu + lambda)).sqrt();
    ceil_at_least_one(factor * ((1.0 / (r * r)).ln() + k as f64 * (mu / lambda).sqrt()))
}

fn momentum_step(x: &mut StackedPoint, y: &mut StackedPoint, x_next: Vec<DVector<f64>>, q: f64) -> Result<()> {
    let x_next = StackedPoint::new(x_next)?;
    let mut y_next = x_next.scale(1.0 + q);
    y_next.axpy(-q, x);
    *y = y_next;
    *x = x_next;
    Ok(())
}

fn precondition(method: Method, ok: bool, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Precondition { method: method.name().into(), reason: reason.into() })
    }
}

/// PGD1 and APGD1: average y, then every client takes an exact prox step.
pub(super) struct ProxAveraging {
    x: StackedPoint,
    y: StackedPoint,
    momentum: f64,
    prox_tol: f64,
}

impl ProxAveraging {
    pub(super) fn new(problem: &Problem, run: &SolverRun) -> Result<Self> {
        let lambda = problem.lambda;
        let mu = problem.constants.mu;
        precondition(run.method, lambda > 0.0, "lambda must be positive")?;
        let momentum = if run.method == Method::Apgd1 {
            precondition(run.method, lambda >= mu, format!("needs lambda >= mu ({lambda} < {mu})"))?;
            apgd1_momentum(lambda, mu)
        } else {
            0.0
        };
        Ok(Self {
            x: run.x0.clone(),
            y: run.x0.clone(),
            momentum,
            prox_tol: run.params.prox_tol.unwrap_or(DEFAULT_PROX_TOL),
        })
    }
}

impl SolverState for ProxAveraging {
    fn step(&mut self, problem: &Problem, ledger: &mut OracleLedger) -> Result<()> {
        let ybar = self.y.mean();
        ledger.communicate(1);
        let beta = 1.0 / problem.lambda;
        let tol = self.prox_tol;
        let x_next = problem
            .losses
            .par_iter()
            .map(|f| f.prox(beta, &ybar, tol))
            .collect::<Result<Vec<_>>>()?;
        ledger.proxes(1);
        momentum_step(&mut self.x, &mut self.y, x_next, self.momentum)
    }

    fn current(&self) -> &StackedPoint {
        &self.x
    }
}

/// PGD2 and APGD2: local gradient step, average, then blend toward the mean.
pub(super) struct GradAveraging {
    x: StackedPoint,
    y: StackedPoint,
    momentum: f64,
}

impl GradAveraging {
    pub(super) fn new(problem: &Problem, run: &SolverRun) -> Result<Self> {
        let c = problem.constants;
        let momentum = if run.method == Method::Apgd2 { apgd2_momentum(c.l, c.mu) } else { 0.0 };
        Ok(Self { x: run.x0.clone(), y: run.x0.clone(), momentum })
    }
}

impl SolverState for GradAveraging {
    fn step(&mut self, problem: &Problem, ledger: &mut OracleLedger) -> Result<()> {
        let l = problem.constants.l;
        let lambda = problem.lambda;
        let y_tilde: Vec<DVector<f64>> = problem
            .losses
            .par_iter()
            .zip(self.y.blocks().par_iter())
            .map(|(f, yi)| yi - f.grad(yi) / l)
            .collect();
        ledger.grads(1);
        let y_tilde = StackedPoint::new(y_tilde)?;
        let ybar = y_tilde.mean();
        ledger.communicate(1);
        let x_next = y_tilde
            .blocks()
            .iter()
            .map(|yt| (yt * l + &ybar * lambda) / (l + lambda))
            .collect();
        momentum_step(&mut self.x, &mut self.y, x_next, self.momentum)
    }

    fn current(&self) -> &StackedPoint {
        &self.x
    }
}

/// IAPGD: APGD1 with each prox replaced by a fixed number of inner steps.
pub(super) struct Inexact {
    x: StackedPoint,
    y: StackedPoint,
    momentum: f64,
    katyusha: bool,
    fixed: Option<usize>,
    schedule: KatyushaSchedule,
    rngs: Vec<ChaCha8Rng>,
    outer: u64,
    history: Vec<usize>,
}

impl Inexact {
    pub(super) fn new(problem: &Problem, run: &SolverRun) -> Result<Self> {
        let lambda = problem.lambda;
        let mu = problem.constants.mu;
        precondition(
            run.method,
            lambda >= 2.0 * mu,
            format!("needs lambda >= 2 mu ({lambda} < {})", 2.0 * mu),
        )?;
        if run.params.inner_iters == Some(0) {
            return Err(Error::InvalidRun("inner_iters must be at least 1".into()));
        }
        let schedule = run.params.katyusha_schedule.unwrap_or(KatyushaSchedule::Practical);
        if let KatyushaSchedule::Theory { initial_gap } = schedule {
            if !(initial_gap > 0.0 && initial_gap.is_finite()) {
                return Err(Error::InvalidRun(format!("theory schedule needs a positive initial gap, got {initial_gap}")));
            }
        }
        Ok(Self {
            x: run.x0.clone(),
            y: run.x0.clone(),
            momentum: apgd1_momentum(lambda, mu),
            katyusha: run.method == Method::IapgdKatyusha,
            fixed: run.params.inner_iters,
            schedule,
            rngs: client_streams(run.seed, problem.n()),
            outer: 0,
            history: Vec::new(),
        })
    }

    fn inner_count(&self, problem: &Problem) -> usize {
        if let Some(t) = self.fixed {
            return t;
        }
        let c = &problem.constants;
        let lambda = problem.lambda;
        let k = self.outer;
        match (self.katyusha, self.schedule) {
            (false, _) => agd_inner_iters(c, lambda, problem.n(), k),
            (true, KatyushaSchedule::Practical) => katyusha_practical_iters(c, lambda, k),
            (true, KatyushaSchedule::Theory { initial_gap }) => katyusha_theory_iters(c, lambda, k, initial_gap),
        }
    }
}

impl SolverState for Inexact {
    fn step(&mut self, problem: &Problem, ledger: &mut OracleLedger) -> Result<()> {
        let ybar = self.y.mean();
        ledger.communicate(1);
        let t = self.inner_count(problem);
        let lambda = problem.lambda;
        let c = problem.constants;
        let katyusha = self.katyusha;
        let outer = self.outer as usize;
        let results = problem
            .losses
            .par_iter()
            .zip(self.y.blocks().par_iter())
            .zip(self.rngs.par_iter_mut())
            .enumerate()
            .map(|(i, ((f, yi), rng))| {
                let h = LocalSubproblem::new(f.as_ref(), &ybar, lambda, &c);
                let (z, cost) = if katyusha {
                    katyusha_solve(&h, yi, t, rng)?
                } else {
                    agd_solve(&h, yi, t)
                };
                let (h0, h1) = (h.value(yi), h.value(&z));
                let diverged = !z.iter().all(|v| v.is_finite()) || h1 - h0 > 1.0 + h0.abs();
                if diverged {
                    return Err(Error::SubsolverDiverged {
                        client: i,
                        outer,
                        detail: format!("local objective went from {h0:.6e} to {h1:.6e} in {t} steps"),
                    });
                }
                Ok((z, cost))
            })
            .collect::<Result<Vec<_>>>()?;
        let grads = results.iter().map(|(_, c)| c.grads).max().unwrap_or(0);
        let summands = results.iter().map(|(_, c)| c.summand_grads).max().unwrap_or(0);
        ledger.grads(grads);
        ledger.summand_grads(summands);
        let x_next = results.into_iter().map(|(z, _)| z).collect();
        momentum_step(&mut self.x, &mut self.y, x_next, self.momentum)?;
        self.history.push(t);
        self.outer += 1;
        Ok(())
    }

    fn current(&self) -> &StackedPoint {
        &self.x
    }

    fn inner_iters(&self) -> Vec<usize> {
        self.history.clone()
    }
}
