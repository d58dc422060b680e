//! Stationary queue-length distribution of the M/PH/1 queue by the
//! matrix-geometric method.
//!
//! Level `n` counts customers in the system; within a busy level the phase
//! is the current service phase. With arrival rate `lambda` and service
//! `(alpha, S)`, exit vector `s0 = -S 1`, the generator is block tridiagonal:
//!
//! ```text
//! level 0:   B00 = -lambda          B01 = lambda alpha
//! level 1:   B10 = s0               A1  = S - lambda I     A0 = lambda I
//! level n:   A2  = s0 alpha         A1                      A0
//! ```
//!
//! and `pi_{n+1} = pi_n R` for `n >= 1` with `R` the minimal nonnegative
//! solution of `A0 + R A1 + R^2 A2 = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Lu, Matrix};
use crate::phtype::PhaseType;

pub const DEFAULT_LEVELS: usize = 70;
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Successive substitution stops once no entry of `R` moves by more than this.
pub const R_TOLERANCE: f64 = 1e-13;
pub const R_MAX_ITERATIONS: usize = 1_000_000;

/// An M/PH/1 system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueInstance {
    lambda: f64,
    service: PhaseType,
    rho: f64,
}

impl QueueInstance {
    /// Requires `lambda > 0` and `rho = lambda * E[service] < 1`.
    pub fn new(lambda: f64, service: PhaseType) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "arrival rate must be positive and finite, got {lambda}"
            )));
        }
        let rho = lambda * service.mean();
        if !(rho < 1.0) {
            return Err(Error::Unstable { rho });
        }
        Ok(Self { lambda, service, rho })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn service(&self) -> &PhaseType {
        &self.service
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Mean number in system from the first two service moments.
    pub fn pollaczek_khinchine_mean(&self) -> f64 {
        let mo = self.service.moments(2);
        let cv2 = mo[1] / (mo[0] * mo[0]) - 1.0;
        let rho = self.rho;
        rho + rho * rho * (1.0 + cv2) / (2.0 * (1.0 - rho))
    }
}

/// `P(N = 0) .. P(N = l - 1)` plus the exact mass beyond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueLengthDistribution {
    pub probs: Vec<f64>,
    pub tail_mass: f64,
}

impl QueueLengthDistribution {
    pub fn levels(&self) -> usize {
        self.probs.len()
    }

    pub fn covered_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `sum_{n < l} n P(n)`, ignoring the tail.
    pub fn truncated_mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }
}

/// Solved QBD: the rate matrix and boundary vectors, from which any number of
/// levels can be read off.
#[derive(Debug, Clone)]
pub struct QbdSolution {
    pub rate_matrix: Matrix,
    pub pi0: f64,
    pub pi1: Vec<f64>,
    pub iterations: usize,
    // (I - R)^{-1} 1
    level_sums: Vec<f64>,
    i_minus_r: Lu,
}

impl QbdSolution {
    pub fn solve(instance: &QueueInstance) -> Result<Self> {
        if !(instance.rho < 1.0) {
            return Err(Error::Unstable { rho: instance.rho });
        }
        let ph = &instance.service;
        let lambda = instance.lambda;
        let m = ph.phases();
        let alpha = ph.alpha();
        let s0 = ph.exit_rates();

        let mut a1 = ph.generator().clone();
        for i in 0..m {
            a1[(i, i)] -= lambda;
        }
        let (r, iterations) = rate_matrix(lambda, alpha, s0, &a1)?;

        let i_minus_r = Lu::factor(&Matrix::identity(m).sub(&r))
            .map_err(|_| Error::NoConvergence("I - R is singular".into()))?;
        let level_sums = i_minus_r.solve(&vec![1.0; m]);

        // Unknowns x = [pi0, pi1]; x M = e0 with column 0 the normalization and
        // columns 1..=m the level-1 balance equations. The level-0 balance
        // equation is redundant and serves as the residual check.
        let local = a1.add(&Matrix::outer(&r.mul_vec(s0), alpha));
        let mut sys = Matrix::zeros(m + 1, m + 1);
        sys[(0, 0)] = 1.0;
        for j in 0..m {
            sys[(0, j + 1)] = lambda * alpha[j];
        }
        for i in 0..m {
            sys[(i + 1, 0)] = level_sums[i];
            for j in 0..m {
                sys[(i + 1, j + 1)] = local[(i, j)];
            }
        }
        let mut rhs = vec![0.0; m + 1];
        rhs[0] = 1.0;
        let x = Lu::factor(&sys)
            .map_err(|_| Error::NoConvergence("singular boundary system".into()))?
            .solve_left(&rhs);
        let pi0 = x[0];
        let pi1 = x[1..].to_vec();

        let residual = (-lambda * pi0 + linalg::dot(&pi1, s0)).abs();
        if residual > 1e-10 {
            return Err(Error::NoConvergence(format!(
                "boundary balance residual {residual:e}"
            )));
        }

        Ok(Self {
            rate_matrix: r,
            pi0,
            pi1,
            iterations,
            level_sums,
            i_minus_r,
        })
    }

    /// First `l` level probabilities and the closed-form mass beyond them.
    pub fn distribution(&self, l: usize) -> Result<QueueLengthDistribution> {
        assert!(l >= 1, "at least one level is required");
        let mut probs = Vec::with_capacity(l);
        probs.push(self.pi0);
        let mut level = self.pi1.clone();
        for _ in 1..l {
            probs.push(level.iter().sum());
            level = self.rate_matrix.vec_mul(&level);
        }
        // `level` is now pi1 R^{l-1}.
        let tail_mass = linalg::dot(&level, &self.level_sums);
        for p in probs.iter_mut() {
            if *p < 0.0 {
                if *p < -1e-14 {
                    return Err(Error::NoConvergence(format!("negative probability {p:e}")));
                }
                *p = 0.0;
            }
        }
        Ok(QueueLengthDistribution {
            probs,
            tail_mass: tail_mass.max(0.0),
        })
    }

    /// `pi1 R^{n-1}` for `n >= 1`.
    fn level_vector(&self, n: usize) -> Vec<f64> {
        let mut v = self.pi1.clone();
        for _ in 1..n {
            v = self.rate_matrix.vec_mul(&v);
        }
        v
    }

    /// Exact `E[N] = pi1 (I - R)^{-2} 1`.
    pub fn mean_queue_length(&self) -> f64 {
        linalg::dot(&self.pi1, &self.i_minus_r.solve(&self.level_sums))
    }

    /// Spectral radius of `R` by power iteration.
    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius_nonneg(&self.rate_matrix, 1e-10, 1_000_000)
    }
}

/// Mean number in system: the truncated sum over `dist` plus the geometric
/// tail beyond its last level, in closed form,
/// `pi1 R^{l-1} [l (I-R)^{-1} + R (I-R)^{-2}] 1`.
pub fn mean_queue_length(dist: &QueueLengthDistribution, ctx: &QbdSolution) -> f64 {
    let l = dist.levels();
    let head = dist.truncated_mean();
    if l == 0 {
        return ctx.mean_queue_length();
    }
    let v = ctx.level_vector(l);
    // R (I-R)^{-2} 1 = R (I-R)^{-1} h with h = (I-R)^{-1} 1.
    let r_term = ctx.rate_matrix.mul_vec(&ctx.i_minus_r.solve(&ctx.level_sums));
    let tail: f64 = v
        .iter()
        .zip(ctx.level_sums.iter().zip(&r_term))
        .map(|(vi, (h, rt))| vi * (l as f64 * h + rt))
        .sum();
    head + tail
}

/// Minimal nonnegative `R` by successive substitution
/// `R <- -(A0 + R^2 A2) A1^{-1}` from `R = 0`.
///
/// With `A0 = lambda I` and `A2 = s0 alpha` of rank one, each step reduces to
/// `R <- -lambda A1^{-1} - (R R s0)(alpha A1^{-1})`.
fn rate_matrix(lambda: f64, alpha: &[f64], s0: &[f64], a1: &Matrix) -> Result<(Matrix, usize)> {
    let m = alpha.len();
    let a1_lu = Lu::factor(a1).map_err(|_| Error::NoConvergence("A1 is singular".into()))?;
    let a1_inv = a1_lu.inverse();
    let base = a1_inv.scale(-lambda);
    let w = a1_lu.solve_left(alpha);
    let mut r = Matrix::zeros(m, m);
    for iteration in 1..=R_MAX_ITERATIONS {
        let u = r.mul_vec(&r.mul_vec(s0));
        let mut next = base.clone();
        let mut change = 0.0_f64;
        for i in 0..m {
            for j in 0..m {
                let v = next[(i, j)] - u[i] * w[j];
                next[(i, j)] = v;
                change = change.max((v - r[(i, j)]).abs());
            }
        }
        r = next;
        if change < R_TOLERANCE {
            return Ok((r, iteration));
        }
        if !change.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence(format!(
        "rate matrix iteration exceeded {R_MAX_ITERATIONS} steps"
    )))
}

/// Solves to `l` levels and rejects results whose tail exceeds `epsilon`.
pub fn solve(instance: &QueueInstance, l: usize, epsilon: f64) -> Result<QueueLengthDistribution> {
    let dist = QbdSolution::solve(instance)?.distribution(l)?;
    if dist.tail_mass > epsilon {
        return Err(Error::TailTooHeavy {
            tail_mass: dist.tail_mass,
            l,
            epsilon,
        });
    }
    Ok(dist)
}
