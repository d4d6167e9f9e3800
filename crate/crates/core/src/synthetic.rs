//! Seeded synthetic problems and datasets.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::QuadraticLoss;
use crate::model::{LocalLoss, Problem};
use crate::solvers::rng_stream;

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vector<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// Per-client quadratics `½zᵀA_iz + b_iᵀz` whose spectra span exactly
/// `[mu, l]`.
///
/// Every A_i has eigenvalue μ along one shared direction, eigenvalue L along
/// another, and log-uniform eigenvalues in between; the remaining
/// eigenvectors are rotated independently per client. Linear terms are
/// standard Gaussian.
pub fn random_quadratic(n: usize, d: usize, mu: f64, l: f64, lambda: f64, seed: u64) -> Result<Problem> {
    if n == 0 || d < 2 {
        return Err(Error::InvalidProblem("need n >= 1 and d >= 2".into()));
    }
    if !(mu > 0.0 && l >= mu) {
        return Err(Error::InvalidProblem(format!("need 0 < mu <= L, got mu={mu}, L={l}")));
    }
    let mut rng = rng_stream(seed, 0);
    let shared = gaussian_vector(&mut rng, d).normalize();
    let mut losses: Vec<Arc<dyn LocalLoss>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_stream(seed, i as u64 + 1);
        let mut g = gaussian_matrix(&mut rng, d, d);
        g.set_column(0, &shared);
        let q = g.qr().q();
        let mut spec = DVector::zeros(d);
        spec[0] = mu;
        spec[1] = l;
        let (lo, hi) = (mu.ln(), l.ln());
        for k in 2..d {
            spec[k] = (lo + (hi - lo) * rng.random::<f64>()).exp();
        }
        let a = &q * DMatrix::from_diagonal(&spec) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let b = gaussian_vector(&mut rng, d);
        losses.push(Arc::new(QuadraticLoss::new(a, b, 0.0)?));
    }
    let mut problem = Problem::new(losses, lambda)?;
    // exact by construction; the eigensolve is only accurate to round-off
    problem.constants.mu = mu;
    problem.constants.l = l;
    problem.constants.l_tilde = l;
    Ok(problem)
}

/// Clients whose losses average `m` random convex quadratics plus a ridge
/// `mu`.
pub fn random_finite_sum_quadratic(n: usize, m: usize, d: usize, mu: f64, lambda: f64, seed: u64) -> Result<Problem> {
    if n == 0 || m == 0 || d == 0 {
        return Err(Error::InvalidProblem("need n, m, d >= 1".into()));
    }
    let mut losses: Vec<Arc<dyn LocalLoss>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_stream(seed, i as u64 + 1);
        let terms = (0..m)
            .map(|_| {
                let g = gaussian_matrix(&mut rng, d, d) / (d as f64).sqrt();
                (&g * g.transpose(), gaussian_vector(&mut rng, d))
            })
            .collect();
        losses.push(Arc::new(QuadraticLoss::finite_sum(terms, mu)?));
    }
    Problem::new(losses, lambda)
}

/// Attribute cardinalities of a 22-attribute categorical table, 112 one-hot
/// columns in total.
const CARDINALITIES: [usize; 22] = [6, 4, 10, 2, 9, 2, 2, 2, 11, 2, 5, 4, 4, 9, 9, 1, 4, 3, 5, 9, 6, 3];

/// A one-hot categorical dataset with mushroom-like shape: 112 binary
/// features, one active per attribute, labels from a planted linear rule
/// with a few flipped.
pub fn mushroom_like(rows: usize, seed: u64) -> Dataset {
    let mut rng = rng_stream(seed, 0);
    let dim: usize = CARDINALITIES.iter().sum();
    let weights: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    // skewed category frequencies per attribute
    let probs: Vec<Vec<f64>> = CARDINALITIES
        .iter()
        .map(|&c| {
            let raw: Vec<f64> = (0..c).map(|_| -rng.random::<f64>().ln()).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|r| r / s).collect()
        })
        .collect();
    let mut data_rows = Vec::with_capacity(rows);
    let mut scores = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut row = Vec::with_capacity(CARDINALITIES.len());
        let mut offset = 0;
        for (a, &c) in CARDINALITIES.iter().enumerate() {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = c - 1;
            for (k, p) in probs[a].iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            row.push((offset + pick + 1, 1.0));
            offset += c;
        }
        scores.push(row.iter().map(|&(j, _)| weights[j - 1]).sum::<f64>());
        data_rows.push(row);
    }
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[rows / 2];
    let labels = scores
        .iter()
        .map(|&s| {
            let flip = rng.random::<f64>() < 0.03;
            let positive = (s > median) != flip;
            if positive { 1.0 } else { -1.0 }
        })
        .collect();
    Dataset::new(data_rows, labels, dim).expect("generated rows are well formed")
}
