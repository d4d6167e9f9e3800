//! Concrete local losses: (finite-sum) quadratics and ℓ2-regularized logistic
//! regression over dense rows.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{LocalLoss, SmoothnessInfo};

/// Default stationarity tolerance for iterative prox solves.
pub const DEFAULT_PROX_TOL: f64 = 1e-10;

const PROX_MAX_ITERS: usize = 200_000;

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidProblem(format!("matrix is {}x{}, not square", a.nrows(), a.ncols())));
    }
    let scale = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::InvalidProblem(format!("matrix is not symmetric (asymmetry {asym:.2e})")));
    }
    Ok(())
}

/// Largest eigenvalue of a symmetric matrix.
pub fn eigmax(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone()).eigenvalues.max()
}

/// `f(z) = (1/m) Σ_j [½ zᵀA_j z + b_jᵀz] + (μ/2)‖z‖²`
///
/// With a single term this is the plain quadratic `½zᵀAz + bᵀz + (μ/2)‖z‖²`.
#[derive(Clone, Debug)]
pub struct QuadraticLoss {
    terms: Vec<(DMatrix<f64>, DVector<f64>)>,
    ridge: f64,
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
    summand_smoothness: f64,
}

impl QuadraticLoss {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, mu_shift: f64) -> Result<Self> {
        Self::finite_sum(vec![(a, b)], mu_shift)
    }

    pub fn finite_sum(terms: Vec<(DMatrix<f64>, DVector<f64>)>, ridge: f64) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidProblem("quadratic needs at least one term".into()));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidProblem(format!("ridge must be finite and >= 0, got {ridge}")));
        }
        let d = terms[0].0.nrows();
        if d == 0 {
            return Err(Error::InvalidProblem("quadratic needs dimension at least 1".into()));
        }
        let mut hessian = DMatrix::<f64>::zeros(d, d);
        let mut linear = DVector::<f64>::zeros(d);
        let mut summand_smoothness: f64 = 0.0;
        for (a, b) in &terms {
            check_symmetric(a)?;
            if a.nrows() != d {
                return Err(Error::DimensionMismatch { expected: d, got: a.nrows() });
            }
            if b.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: b.len() });
            }
            let e = SymmetricEigen::new(a.clone()).eigenvalues;
            if e.min() + ridge <= 0.0 {
                return Err(Error::InvalidProblem(format!(
                    "summand is not strongly convex (smallest eigenvalue {:.3e})",
                    e.min() + ridge
                )));
            }
            summand_smoothness = summand_smoothness.max(e.max() + ridge);
            hessian += a;
            linear += b;
        }
        let m = terms.len() as f64;
        hessian /= m;
        linear /= m;
        hessian = (&hessian + hessian.transpose()) * 0.5;
        for i in 0..d {
            hessian[(i, i)] += ridge;
        }
        let eig = SymmetricEigen::new(hessian.clone());
        Ok(Self {
            terms,
            ridge,
            hessian,
            linear,
            eigvals: eig.eigenvalues,
            eigvecs: eig.eigenvectors,
            summand_smoothness,
        })
    }

    /// Full Hessian including the ridge term.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    /// Unconstrained minimizer `−H⁻¹b`.
    pub fn minimizer(&self) -> DVector<f64> {
        let vt_b = self.eigvecs.tr_mul(&self.linear);
        let scaled = vt_b.component_div(&self.eigvals);
        -(&self.eigvecs * scaled)
    }
}

impl LocalLoss for QuadraticLoss {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn num_summands(&self) -> usize {
        self.terms.len()
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    fn grad(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.hessian * z + &self.linear
    }

    fn summand_grad(&self, j: usize, z: &DVector<f64>) -> Result<DVector<f64>> {
        let (a, b) = self
            .terms
            .get(j)
            .ok_or(Error::SummandIndex { index: j, count: self.terms.len() })?;
        Ok(a * z + b + z * self.ridge)
    }

    fn prox(&self, beta: f64, v: &DVector<f64>, _tol: f64) -> Result<DVector<f64>> {
        if beta.is_nan() || beta <= 0.0 {
            return Err(Error::InvalidProblem(format!("prox parameter must be positive, got {beta}")));
        }
        // (H + I/β) z = v/β − b
        let rhs = v / beta - &self.linear;
        let vt = self.eigvecs.tr_mul(&rhs);
        let scaled = vt.component_div(&self.eigvals.add_scalar(1.0 / beta));
        Ok(&self.eigvecs * scaled)
    }

    fn constants(&self) -> SmoothnessInfo {
        let l = self.eigvals.max();
        SmoothnessInfo {
            mu: self.eigvals.min(),
            l,
            l_tilde: self.summand_smoothness.max(l),
            m: self.terms.len(),
        }
    }

    fn quadratic_form(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        Some((&self.hessian, &self.linear))
    }
}

/// `log(1 + eᵗ)` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `1 / (1 + e⁻ᵗ)` without overflow.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `f(z) = (1/m) Σ_j log(1 + exp(b_j a_jᵀz)) + (reg/2)‖z‖²`
#[derive(Clone, Debug)]
pub struct LogisticLoss {
    /// m × d, one row per sample
    rows: DMatrix<f64>,
    labels: DVector<f64>,
    reg: f64,
    constants: SmoothnessInfo,
}

impl LogisticLoss {
    pub fn new(rows: DMatrix<f64>, labels: Vec<f64>, reg: f64) -> Result<Self> {
        let m = rows.nrows();
        if m == 0 || rows.ncols() == 0 {
            return Err(Error::InvalidProblem("logistic loss needs at least one row and one feature".into()));
        }
        if labels.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: labels.len() });
        }
        if labels.iter().any(|&b| b != 1.0 && b != -1.0) {
            return Err(Error::InvalidProblem("labels must be +1 or -1".into()));
        }
        if !(reg > 0.0 && reg.is_finite()) {
            return Err(Error::InvalidProblem(format!("ridge weight must be positive, got {reg}")));
        }
        let l_tilde = rows
            .row_iter()
            .map(|r| 0.25 * r.norm_squared())
            .fold(0.0, f64::max)
            + reg;
        let gram = rows.tr_mul(&rows) / (4.0 * m as f64);
        let l = (eigmax(&gram) + reg).min(l_tilde);
        let constants = SmoothnessInfo { mu: reg, l, l_tilde, m };
        Ok(Self { rows, labels: DVector::from_vec(labels), reg, constants })
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    fn margins(&self, z: &DVector<f64>) -> DVector<f64> {
        (&self.rows * z).component_mul(&self.labels)
    }
}

impl LocalLoss for LogisticLoss {
    fn dim(&self) -> usize {
        self.rows.ncols()
    }

    fn num_summands(&self) -> usize {
        self.rows.nrows()
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        let t = self.margins(z);
        t.iter().map(|&ti| softplus(ti)).sum::<f64>() / t.len() as f64
            + 0.5 * self.reg * z.norm_squared()
    }

    fn grad(&self, z: &DVector<f64>) -> DVector<f64> {
        let t = self.margins(z);
        let m = t.len() as f64;
        let s = DVector::from_iterator(
            t.len(),
            t.iter().zip(self.labels.iter()).map(|(&ti, &bi)| bi * sigmoid(ti) / m),
        );
        self.rows.tr_mul(&s) + z * self.reg
    }

    fn summand_grad(&self, j: usize, z: &DVector<f64>) -> Result<DVector<f64>> {
        if j >= self.rows.nrows() {
            return Err(Error::SummandIndex { index: j, count: self.rows.nrows() });
        }
        let a = self.rows.row(j).transpose();
        let b = self.labels[j];
        let t = b * a.dot(z);
        Ok(a * (b * sigmoid(t)) + z * self.reg)
    }

    fn prox(&self, beta: f64, v: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        if beta.is_nan() || beta <= 0.0 {
            return Err(Error::InvalidProblem(format!("prox parameter must be positive, got {beta}")));
        }
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        // constant-momentum AGD on h(z) = f(z) + ‖z − v‖²/(2β), started at v
        let mu_h = self.reg + 1.0 / beta;
        let l_h = self.constants.l + 1.0 / beta;
        let kappa = l_h / mu_h;
        let mom = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
        let mut x = v.clone();
        let mut y = v.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..PROX_MAX_ITERS {
            let g = self.grad(&y) + (&y - v) / beta;
            residual = g.norm();
            if residual <= tol {
                return Ok(y);
            }
            let x_next = &y - g / l_h;
            y = &x_next + (&x_next - &x) * mom;
            x = x_next;
        }
        Err(Error::ProxNotConverged { residual, iters: PROX_MAX_ITERS, tol })
    }

    fn constants(&self) -> SmoothnessInfo {
        self.constants
    }
}
