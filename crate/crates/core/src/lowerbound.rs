//! Adversarial quadratic instances for the communication lower bound, the
//! classical single-function worst case, and certification of solver traces.
//!
//! Clients split into two groups. Group one couples coordinate pairs
//! (2i, 2i+1), carries the linear term `a·y₁` and a boundary weight `b` on
//! the last coordinate; group two couples pairs (2i−1, 2i). Information
//! crosses from one pair to the next only through averaging, so each
//! communication reveals at most one more coordinate of the optimum, whose
//! coordinates decay geometrically at rate γ.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};

use crate::error::{Error, Result};
use crate::losses::QuadraticLoss;
use crate::model::{LocalLoss, Problem, StackedPoint};

/// Nonzero threshold for support counting.
pub const SUPPORT_TOL: f64 = 1e-12;

/// `1 − 10·max{√(μ/λ), √(μ/(L−μ))}`
pub fn rate_bound(mu: f64, lambda: f64, smoothness: f64) -> f64 {
    1.0 - 10.0 * (mu / lambda).sqrt().max((mu / (smoothness - mu)).sqrt())
}

/// Decay rate of the optimum's coordinate pairs for `q = μ/λ`, group
/// fraction `r` and coupling `c`; `delta = cλ/μ`.
pub fn decay_rate(q: f64, r: f64, c: f64, delta: f64) -> f64 {
    if c == 1.0 {
        let s = (q * (q + 2.0 * r) * (q + 2.0) * (q + 2.0 * r + 2.0)).sqrt();
        (q * q + 2.0 * q + 2.0 * r + 2.0 * r * q - s) / (2.0 * r)
    } else {
        let s = ((2.0 * delta + 1.0) * (q + 2.0 * r) * (q + 2.0 * r + 2.0 * delta * q)).sqrt();
        (q + 2.0 * r + 2.0 * delta * r + 2.0 * delta * q - s) / (2.0 * delta * r)
    }
}

/// Pair-to-pair transfer matrix of the optimality conditions.
pub fn transfer_matrix(q: f64, r: f64, c: f64) -> Matrix2<f64> {
    let k = c + q + r;
    Matrix2::new(-r / c, k / c, -k / c, k * k / (c * r) - c / r)
}

/// Boundary weight that makes the first pair an eigenvector of the transfer
/// matrix for eigenvalue `gamma`, so the decay is exactly geometric from the
/// start. `scale` is the group-one curvature multiplier.
pub fn boundary_weight(q: f64, r: f64, c: f64, gamma: f64, scale: f64) -> f64 {
    let ratio = (c + q + r) / (c * gamma + r);
    scale * (r * ratio - q - r)
}

#[derive(Clone, Debug)]
pub struct LowerBoundInstance {
    pub n: usize,
    /// T; the model dimension is 2T
    pub half_dim: usize,
    pub mu: f64,
    pub lambda: f64,
    pub smoothness: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub delta: f64,
    pub r: f64,
    pub gamma: f64,
    /// number of clients in group one
    pub group_one: usize,
    /// curvature multiplier of group one, (M+1)/M for odd n
    pub scale: f64,
    /// smallest and largest eigenvalue over all client Hessians
    pub eigen_range: (f64, f64),
    pub warnings: Vec<String>,
    pub problem: Problem,
}

fn pair_block(h: &mut DMatrix<f64>, i: usize, j: usize, w: f64) {
    h[(i, i)] += w;
    h[(j, j)] += w;
    h[(i, j)] -= w;
    h[(j, i)] -= w;
}

/// Builds the two-group instance with `a = 1` and `c = min{1, (L−μ)/(2λ)}`.
pub fn build_instance(n: usize, half_dim: usize, mu: f64, smoothness: f64, lambda: f64) -> Result<LowerBoundInstance> {
    let bad = |m: String| Err(Error::LowerBound(m));
    if n < 2 {
        return bad(format!("need at least 2 clients, got {n}"));
    }
    if half_dim < 2 {
        return bad(format!("need T >= 2, got {half_dim}"));
    }
    if !(mu > 0.0 && smoothness > mu && lambda >= mu) {
        return bad(format!("need L > mu > 0 and lambda >= mu (mu={mu}, L={smoothness}, lambda={lambda})"));
    }
    let q = mu / lambda;
    // each coupling term contributes 2λc to the curvature
    let c = (0.5 * (smoothness - mu) / lambda).min(1.0);
    let delta = c * lambda / mu;
    if delta < 1.0 {
        return bad(format!(
            "construction needs L >= 3 mu so that c*lambda/mu >= 1 (L={smoothness}, mu={mu})"
        ));
    }
    let even = n.is_multiple_of(2);
    let half = n / 2;
    let (group_one, r, scale) = if even {
        (half, 0.5, 1.0)
    } else {
        (half, half as f64 / n as f64, (half + 1) as f64 / half as f64)
    };
    let gamma = decay_rate(q, r, c, delta);
    let b = boundary_weight(q, r, c, gamma, scale);
    if !(gamma > 0.0 && gamma < 1.0) {
        return bad(format!("decay rate {gamma} outside (0, 1)"));
    }
    if b < 0.0 {
        return bad(format!("boundary weight {b} is negative"));
    }
    let bound = rate_bound(mu, lambda, smoothness);
    if gamma < bound {
        return bad(format!("decay rate {gamma} below the certified rate {bound}"));
    }
    if gamma.powi(2 * half_dim as i32) < 1e-300 {
        return bad(format!("T = {half_dim} underflows: gamma^(2T) < 1e-300 for gamma = {gamma}"));
    }

    let d = 2 * half_dim;
    let a = 1.0;
    let mut h1 = DMatrix::identity(d, d) * (scale * mu);
    for i in 1..half_dim {
        // 1-based pairs (2i, 2i+1)
        pair_block(&mut h1, 2 * i - 1, 2 * i, scale * lambda * c);
    }
    h1[(d - 1, d - 1)] += lambda * b;
    let mut lin1 = DVector::zeros(d);
    lin1[0] = a;
    let mut h2 = DMatrix::identity(d, d) * mu;
    for i in 0..half_dim {
        // 1-based pairs (2i+1, 2i+2)
        pair_block(&mut h2, 2 * i, 2 * i + 1, lambda * c);
    }
    let e1 = SymmetricEigen::new(h1.clone()).eigenvalues;
    let e2 = SymmetricEigen::new(h2.clone()).eigenvalues;
    let lo = e1.min().min(e2.min());
    let hi = e1.max().max(e2.max());
    let mut warnings = Vec::new();
    if lo < mu * (1.0 - 1e-9) || hi > smoothness * (1.0 + 1e-9) {
        let msg = format!("client Hessian spectrum [{lo:.6e}, {hi:.6e}] leaves [mu, L] = [{mu:.6e}, {smoothness:.6e}]");
        if even {
            return Err(Error::LowerBound(msg));
        }
        warnings.push(format!("{msg}; group one is scaled by (M+1)/M = {scale}"));
    }
    let g1: Arc<dyn LocalLoss> = Arc::new(QuadraticLoss::new(h1, lin1, 0.0)?);
    let g2: Arc<dyn LocalLoss> = Arc::new(QuadraticLoss::new(h2, DVector::zeros(d), 0.0)?);
    let losses = (0..n).map(|i| if i < group_one { g1.clone() } else { g2.clone() }).collect();
    let mut problem = Problem::new(losses, lambda)?;
    problem.constants.mu = mu.min(lo);
    problem.constants.l = smoothness.max(hi);
    problem.constants.l_tilde = problem.constants.l;
    Ok(LowerBoundInstance {
        n,
        half_dim,
        mu,
        lambda,
        smoothness,
        a,
        b,
        c,
        delta,
        r,
        gamma,
        group_one,
        scale,
        eigen_range: (lo, hi),
        warnings,
        problem,
    })
}

impl LowerBoundInstance {
    pub fn dim(&self) -> usize {
        2 * self.half_dim
    }

    /// Optimum by a direct linear solve, and the median ratio of successive
    /// pair norms.
    pub fn exact_optimum(&self) -> Result<(StackedPoint, f64)> {
        let x = self
            .problem
            .quadratic_optimum()?
            .ok_or_else(|| Error::LowerBound("instance losses are not quadratic".into()))?;
        let pairs = self.chain_pairs(&x);
        let mut ratios: Vec<f64> = pairs.windows(2).map(|w| w[1].norm() / w[0].norm()).collect();
        ratios.sort_by(f64::total_cmp);
        let median = ratios[ratios.len() / 2];
        Ok((x, median))
    }

    /// Pairs `w_i = (y_i, z_i)` for odd i and `(z_i, y_i)` for even i, with
    /// `y` the first client's block and `z` the last client's.
    pub fn chain_pairs(&self, x: &StackedPoint) -> Vec<Vector2<f64>> {
        let y = x.block(0);
        let z = x.block(x.n() - 1);
        (0..self.dim())
            .map(|i| if i % 2 == 0 { Vector2::new(y[i], z[i]) } else { Vector2::new(z[i], y[i]) })
            .collect()
    }

    pub fn transfer_matrix(&self) -> Matrix2<f64> {
        transfer_matrix(self.mu / self.lambda, self.r, self.c)
    }

    pub fn rate_bound(&self) -> f64 {
        rate_bound(self.mu, self.lambda, self.smoothness)
    }

    /// Checks `‖x^k − x⋆‖² ≥ ¼·max(β,0)^{C+1}·‖x⁰ − x⋆‖²` with
    /// `β = rate_bound()`, and that every client block has at most `C+1`
    /// nonzero coordinates. Iterates are paired with their communication
    /// counts and must start at zero.
    pub fn certify(&self, x_star: &StackedPoint, iterates: &[(StackedPoint, u64)]) -> Result<Certificate> {
        let (x0, _) = iterates
            .first()
            .ok_or_else(|| Error::LowerBound("empty trace".into()))?;
        if x0.norm_sq() != 0.0 {
            return Err(Error::LowerBound("certification needs x0 = 0".into()));
        }
        let base = self.rate_bound().max(0.0);
        let d0 = x0.dist_sq(x_star);
        let rows = iterates
            .iter()
            .enumerate()
            .map(|(k, (x, comm))| {
                let dist_ratio = x.dist_sq(x_star) / d0;
                let bound = 0.25 * base.powi(*comm as i32 + 1);
                let support = x
                    .blocks()
                    .iter()
                    .map(|b| b.iter().filter(|v| v.abs() > SUPPORT_TOL).count())
                    .max()
                    .unwrap_or(0);
                CertificateRow {
                    k,
                    comm_rounds: *comm,
                    dist_ratio,
                    bound,
                    support,
                    bound_ok: dist_ratio >= bound,
                    support_ok: support as u64 <= comm + 1,
                }
            })
            .collect();
        Ok(Certificate { rows })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertificateRow {
    pub k: usize,
    pub comm_rounds: u64,
    /// `‖x^k − x⋆‖²/‖x⁰ − x⋆‖²`
    pub dist_ratio: f64,
    pub bound: f64,
    /// largest per-client count of nonzero coordinates
    pub support: usize,
    pub bound_ok: bool,
    pub support_ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub rows: Vec<CertificateRow>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.bound_ok && r.support_ok)
    }

    pub fn first_violation(&self) -> Option<&CertificateRow> {
        self.rows.iter().find(|r| !(r.bound_ok && r.support_ok))
    }

    /// `Err` naming the first offending iteration.
    pub fn check(&self) -> Result<()> {
        match self.first_violation() {
            None => Ok(()),
            Some(r) => Err(Error::LowerBound(format!(
                "violated at k = {} (C = {}): distance ratio {:.6e} vs bound {:.6e}, support {} vs limit {}",
                r.k,
                r.comm_rounds,
                r.dist_ratio,
                r.bound,
                r.support,
                r.comm_rounds + 1
            ))),
        }
    }
}

/// Every client holds the same tridiagonal worst case
/// `(L−μ)/8·(z₁² + Σ(z_i − z_{i+1})² + z_d² − 2z₁) + (μ/2)‖z‖²`.
pub fn nesterov_instance(d: usize, mu: f64, smoothness: f64, n: usize, lambda: f64) -> Result<Problem> {
    if !(mu > 0.0 && smoothness > mu) {
        return Err(Error::LowerBound(format!("need L > mu > 0 (mu={mu}, L={smoothness})")));
    }
    if d == 0 || n == 0 {
        return Err(Error::LowerBound("need d, n >= 1".into()));
    }
    let w = (smoothness - mu) / 4.0;
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        a[(i, i)] = 2.0 * w;
        if i + 1 < d {
            a[(i, i + 1)] = -w;
            a[(i + 1, i)] = -w;
        }
    }
    let mut lin = DVector::zeros(d);
    lin[0] = -w;
    let f: Arc<dyn LocalLoss> = Arc::new(QuadraticLoss::new(a, lin, mu)?);
    let mut problem = Problem::new(vec![f; n], lambda)?;
    problem.constants.mu = mu;
    problem.constants.l = smoothness;
    problem.constants.l_tilde = smoothness;
    Ok(problem)
}
