//! Inner solvers for the local problem `h(z) = f(z) + (λ/2)‖z − anchor‖²`.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{LocalLoss, SmoothnessInfo};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubsolverKind {
    Agd,
    Katyusha,
}

/// Work done by one inner solve, in single-client units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InnerCost {
    pub grads: u64,
    pub summand_grads: u64,
}

/// `f(z) + (λ/2)‖z − anchor‖²` together with its curvature constants.
pub struct LocalSubproblem<'a> {
    loss: &'a dyn LocalLoss,
    anchor: &'a DVector<f64>,
    lambda: f64,
    /// strong convexity μ + λ
    pub strong_convexity: f64,
    /// smoothness L + λ
    pub smoothness: f64,
    /// summand smoothness L̃ + λ
    pub summand_smoothness: f64,
}

impl<'a> LocalSubproblem<'a> {
    pub fn new(
        loss: &'a dyn LocalLoss,
        anchor: &'a DVector<f64>,
        lambda: f64,
        c: &SmoothnessInfo,
    ) -> Self {
        Self {
            loss,
            anchor,
            lambda,
            strong_convexity: c.mu + lambda,
            smoothness: c.l + lambda,
            summand_smoothness: c.l_tilde + lambda,
        }
    }

    pub fn num_summands(&self) -> usize {
        self.loss.num_summands()
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        self.loss.value(z) + 0.5 * self.lambda * (z - self.anchor).norm_squared()
    }

    pub fn grad(&self, z: &DVector<f64>) -> DVector<f64> {
        self.loss.grad(z) + (z - self.anchor) * self.lambda
    }

    pub fn summand_grad(&self, j: usize, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.loss.summand_grad(j, z)? + (z - self.anchor) * self.lambda)
    }
}

/// Nesterov's constant-momentum scheme with step `1/(L+λ)`, started at `z0`.
/// Consumes exactly `iters` gradients.
pub fn agd_solve(h: &LocalSubproblem, z0: &DVector<f64>, iters: usize) -> (DVector<f64>, InnerCost) {
    let kappa = h.smoothness / h.strong_convexity;
    let mom = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
    let mut x = z0.clone();
    let mut y = z0.clone();
    for _ in 0..iters {
        let g = h.grad(&y);
        let x_next = &y - g / h.smoothness;
        y = &x_next + (&x_next - &x) * mom;
        x = x_next;
    }
    (x, InnerCost { grads: iters as u64, summand_grads: 0 })
}

/// Step sizes and mixing weights of loopless Katyusha.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LKatyushaParams {
    pub eta: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl LKatyushaParams {
    /// `strong_convexity`, `smoothness` and `expected_smoothness` describe the
    /// objective being minimized; `rho` is the anchor refresh probability.
    pub fn new(strong_convexity: f64, smoothness: f64, expected_smoothness: f64, rho: f64) -> Self {
        let top = smoothness.max(expected_smoothness);
        let eta = 1.0 / (4.0 * top);
        let theta2 = expected_smoothness / (2.0 * top);
        let theta1 = (eta * strong_convexity * (0.5f64).max(theta2 / rho)).sqrt().min(0.5);
        let gamma = 1.0 / (2.0 * strong_convexity).max(4.0 * theta1 / eta);
        let beta = 1.0 - gamma * strong_convexity;
        Self { eta, theta1, theta2, gamma, beta }
    }
}

/// Loopless Katyusha with uniform summand sampling and anchor refresh
/// probability `1/m`, started at `z0`. Returns the last `y` iterate.
pub fn katyusha_solve<R: Rng>(
    h: &LocalSubproblem,
    z0: &DVector<f64>,
    iters: usize,
    rng: &mut R,
) -> Result<(DVector<f64>, InnerCost)> {
    let m = h.num_summands();
    if m == 0 {
        return Err(Error::InvalidProblem("finite-sum structure required".into()));
    }
    let rho = 1.0 / m as f64;
    let p = LKatyushaParams::new(h.strong_convexity, h.smoothness, h.summand_smoothness, rho);
    let mut cost = InnerCost { grads: 0, summand_grads: m as u64 };
    let mut y = z0.clone();
    let mut z = z0.clone();
    let mut w = z0.clone();
    let mut full = h.grad(&w);
    let rest = 1.0 - p.theta1 - p.theta2;
    for _ in 0..iters {
        let x = &z * p.theta1 + &w * p.theta2 + &y * rest;
        let j = rng.random_range(0..m);
        let g = &full + h.summand_grad(j, &x)? - h.summand_grad(j, &w)?;
        cost.summand_grads += 1;
        let y_next = &x - g * p.eta;
        z = &z * p.beta + &x * (1.0 - p.beta) + (&y_next - &x) * (p.gamma / p.eta);
        y = y_next;
        if rng.random::<f64>() < rho {
            w = y.clone();
            full = h.grad(&w);
            cost.summand_grads += m as u64;
        }
    }
    Ok((y, cost))
}
