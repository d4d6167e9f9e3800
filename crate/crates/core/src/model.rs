//! Problem container, stacked iterates, the dissimilarity penalty and the
//! personalized objective
//!
//! `F(x) = (1/n) Σ f_i(x_i) + λ ψ(x)` with `ψ(x) = (1/2n) Σ ‖x_i − x̄‖²`.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// One d-vector per client.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedPoint {
    blocks: Vec<DVector<f64>>,
}

impl StackedPoint {
    pub fn new(blocks: Vec<DVector<f64>>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidProblem("stacked point needs at least one block".into()))?;
        let d = first.len();
        if d == 0 {
            return Err(Error::InvalidProblem("blocks must have dimension at least 1".into()));
        }
        for b in &blocks {
            if b.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: b.len() });
            }
        }
        Ok(Self { blocks })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        assert!(n >= 1 && d >= 1, "stacked point needs n >= 1 and d >= 1");
        Self { blocks: vec![DVector::zeros(d); n] }
    }

    /// Every block equal to `v`.
    pub fn consensus(n: usize, v: &DVector<f64>) -> Self {
        assert!(n >= 1 && !v.is_empty());
        Self { blocks: vec![v.clone(); n] }
    }

    /// Inverse of [`StackedPoint::flatten`].
    pub fn from_flat(n: usize, d: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: flat.len() });
        }
        Self::new(flat.chunks(d).map(DVector::from_column_slice).collect())
    }

    pub fn flatten(&self) -> DVector<f64> {
        let d = self.dim();
        let mut out = DVector::zeros(self.n() * d);
        for (i, b) in self.blocks.iter().enumerate() {
            out.rows_mut(i * d, d).copy_from(b);
        }
        out
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].len()
    }

    pub fn blocks(&self) -> &[DVector<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.blocks
    }

    pub fn block(&self, i: usize) -> &DVector<f64> {
        &self.blocks[i]
    }

    pub fn into_blocks(self) -> Vec<DVector<f64>> {
        self.blocks
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for b in &self.blocks {
            m += b;
        }
        m / self.n() as f64
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn dist_sq(&self, other: &Self) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).norm_squared())
            .sum()
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (s, b) in self.blocks.iter_mut().zip(&x.blocks) {
            s.axpy(a, b, 1.0);
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { blocks: self.blocks.iter().map(|b| b * a).collect() }
    }

    /// `Σ coeffs[t] * points[t]`
    pub fn combination(terms: &[(f64, &Self)]) -> Self {
        let (c0, p0) = terms[0];
        let mut out = p0.scale(c0);
        for &(c, p) in &terms[1..] {
            out.axpy(c, p);
        }
        out
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.n() != other.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: other.n() });
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        Ok(())
    }
}

impl Add for &StackedPoint {
    type Output = StackedPoint;
    fn add(self, rhs: &StackedPoint) -> StackedPoint {
        StackedPoint { blocks: self.blocks.iter().zip(&rhs.blocks).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &StackedPoint {
    type Output = StackedPoint;
    fn sub(self, rhs: &StackedPoint) -> StackedPoint {
        StackedPoint { blocks: self.blocks.iter().zip(&rhs.blocks).map(|(a, b)| a - b).collect() }
    }
}

impl Mul<&StackedPoint> for f64 {
    type Output = StackedPoint;
    fn mul(self, rhs: &StackedPoint) -> StackedPoint {
        rhs.scale(self)
    }
}

/// Curvature constants shared by all clients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothnessInfo {
    /// strong convexity of every f_i
    pub mu: f64,
    /// smoothness of every f_i
    pub l: f64,
    /// smoothness of every summand
    pub l_tilde: f64,
    /// summands per client, 1 when the loss is not a finite sum
    pub m: usize,
}

impl SmoothnessInfo {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu > 0.0
            && self.mu.is_finite()
            && self.l.is_finite()
            && self.l_tilde.is_finite()
            && self.l >= self.mu * (1.0 - 1e-12)
            && self.l_tilde >= self.l * (1.0 - 1e-12)
            && self.m >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidProblem(format!("inconsistent smoothness constants {self:?}")))
        }
    }
}

/// A client's local loss `f_i`, optionally a finite sum of `m` summands.
pub trait LocalLoss: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn num_summands(&self) -> usize {
        1
    }

    fn value(&self, z: &DVector<f64>) -> f64;

    fn grad(&self, z: &DVector<f64>) -> DVector<f64>;

    /// Gradient of summand `j` (0-based). The mean over `j` equals [`LocalLoss::grad`].
    fn summand_grad(&self, j: usize, z: &DVector<f64>) -> Result<DVector<f64>>;

    /// `argmin_z f(z) + ‖z − v‖² / (2β)`, to stationarity residual `tol`.
    fn prox(&self, beta: f64, v: &DVector<f64>, tol: f64) -> Result<DVector<f64>>;

    fn constants(&self) -> SmoothnessInfo;

    /// `(H, b)` with `f(z) = ½ zᵀHz + bᵀz` when the loss is quadratic.
    fn quadratic_form(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub lambda: f64,
    pub losses: Vec<Arc<dyn LocalLoss>>,
    pub constants: SmoothnessInfo,
}

impl Problem {
    /// Aggregates per-client constants: smallest μ, largest L and L̃.
    pub fn new(losses: Vec<Arc<dyn LocalLoss>>, lambda: f64) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::InvalidProblem("need at least one client".into()));
        }
        let c0 = losses[0].constants();
        let mut c = c0;
        for loss in &losses[1..] {
            let ci = loss.constants();
            if ci.m != c0.m {
                return Err(Error::InvalidProblem(format!(
                    "clients disagree on summand count ({} vs {})",
                    c0.m, ci.m
                )));
            }
            c.mu = c.mu.min(ci.mu);
            c.l = c.l.max(ci.l);
            c.l_tilde = c.l_tilde.max(ci.l_tilde);
        }
        Self::with_constants(losses, lambda, c)
    }

    pub fn with_constants(
        losses: Vec<Arc<dyn LocalLoss>>,
        lambda: f64,
        constants: SmoothnessInfo,
    ) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::InvalidProblem("need at least one client".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidProblem(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let d = losses[0].dim();
        for loss in &losses {
            if loss.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: loss.dim() });
            }
        }
        constants.validate()?;
        Ok(Self { lambda, losses, constants })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::with_constants(self.losses.clone(), lambda, self.constants)
    }

    pub fn n(&self) -> usize {
        self.losses.len()
    }

    pub fn dim(&self) -> usize {
        self.losses[0].dim()
    }

    pub fn check_point(&self, x: &StackedPoint) -> Result<()> {
        if x.n() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: x.n() });
        }
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.dim() });
        }
        Ok(())
    }

    /// `(1/n) Σ f_i(x_i)`
    pub fn loss_value(&self, x: &StackedPoint) -> Result<f64> {
        self.check_point(x)?;
        let s: f64 = self
            .losses
            .par_iter()
            .zip(x.blocks().par_iter())
            .map(|(f, xi)| f.value(xi))
            .collect::<Vec<_>>()
            .iter()
            .sum();
        Ok(s / self.n() as f64)
    }

    pub fn objective(&self, x: &StackedPoint) -> Result<f64> {
        Ok(self.loss_value(x)? + self.lambda * psi_value(x))
    }

    /// Block i is `(1/n)∇f_i(x_i) + (λ/n)(x_i − x̄)`.
    pub fn gradient(&self, x: &StackedPoint) -> Result<StackedPoint> {
        self.check_point(x)?;
        let n = self.n() as f64;
        let xbar = x.mean();
        let lambda = self.lambda;
        let blocks = self
            .losses
            .par_iter()
            .zip(x.blocks().par_iter())
            .map(|(f, xi)| (f.grad(xi) + (xi - &xbar) * lambda) / n)
            .collect();
        Ok(StackedPoint { blocks })
    }

    /// `D_F(w, x) = F(w) − F(x) − ⟨∇F(x), w − x⟩`
    pub fn bregman(&self, w: &StackedPoint, x: &StackedPoint) -> Result<f64> {
        let g = self.gradient(x)?;
        self.check_point(w)?;
        Ok(self.objective(w)? - self.objective(x)? - g.dot(&(w - x)))
    }

    /// Exact minimizer when every client loss is quadratic: solves the
    /// stacked linear system `∇F(x) = 0`.
    pub fn quadratic_optimum(&self) -> Result<Option<StackedPoint>> {
        let n = self.n();
        let d = self.dim();
        let mut forms = Vec::with_capacity(n);
        for f in &self.losses {
            match f.quadratic_form() {
                Some(q) => forms.push(q),
                None => return Ok(None),
            }
        }
        // n·∇F = blockdiag(H_i) x + b + λ (I − 11ᵀ/n) ⊗ I x
        let nd = n * d;
        let mut m = DMatrix::zeros(nd, nd);
        let mut rhs = DVector::zeros(nd);
        for (i, (h, b)) in forms.iter().enumerate() {
            let mut blk = m.view_mut((i * d, i * d), (d, d));
            blk += *h;
            rhs.rows_mut(i * d, d).copy_from(&(-*b));
        }
        let lam = self.lambda;
        for i in 0..n {
            for j in 0..n {
                let w = if i == j { lam * (1.0 - 1.0 / n as f64) } else { -lam / n as f64 };
                for t in 0..d {
                    m[(i * d + t, j * d + t)] += w;
                }
            }
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Numerical("stacked quadratic system is not positive definite".into()))?;
        let sol = chol.solve(&rhs);
        Ok(Some(StackedPoint::from_flat(n, d, sol.as_slice())?))
    }
}

/// `ψ(x) = (1/2n) Σ ‖x_i − x̄‖²`
pub fn psi_value(x: &StackedPoint) -> f64 {
    let xbar = x.mean();
    let s: f64 = x.blocks().iter().map(|b| (b - &xbar).norm_squared()).sum();
    s / (2.0 * x.n() as f64)
}

/// Block i is `(1/n)(x_i − x̄)`.
pub fn psi_grad(x: &StackedPoint) -> StackedPoint {
    let xbar = x.mean();
    let n = x.n() as f64;
    StackedPoint { blocks: x.blocks().iter().map(|b| (b - &xbar) / n).collect() }
}

/// Oracle and communication counters. Counters only ever grow.
///
/// One unit is a simultaneous query by all clients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OracleLedger {
    comm_rounds: u64,
    grad_calls: u64,
    prox_calls: u64,
    summand_grad_calls: u64,
}

impl OracleLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comm_rounds(&self) -> u64 {
        self.comm_rounds
    }
    pub fn grad_calls(&self) -> u64 {
        self.grad_calls
    }
    pub fn prox_calls(&self) -> u64 {
        self.prox_calls
    }
    pub fn summand_grad_calls(&self) -> u64 {
        self.summand_grad_calls
    }

    pub fn communicate(&mut self, rounds: u64) {
        self.comm_rounds += rounds;
    }
    pub fn grads(&mut self, units: u64) {
        self.grad_calls += units;
    }
    pub fn proxes(&mut self, units: u64) {
        self.prox_calls += units;
    }
    pub fn summand_grads(&mut self, units: u64) {
        self.summand_grad_calls += units;
    }
}
