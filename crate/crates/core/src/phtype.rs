//! Continuous phase-type distributions: the absorption time of a finite CTMC
//! with initial vector `alpha` over `m` transient phases and sub-generator `S`.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Lu, Matrix};

/// Tolerance on `sum(alpha) == 1`.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Row sums within this fraction of `|S[i,i]|` of zero count as exactly zero.
const ROW_SUM_REL_TOL: f64 = 1e-12;

/// A validated phase-type distribution.
///
/// Immutable after construction. The exit vector and the LU factorization of
/// `-S` are cached since every moment and QBD computation needs them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "PhRecord", into = "PhRecord")]
pub struct PhaseType {
    alpha: Vec<f64>,
    s: Matrix,
    exit: Vec<f64>,
    neg_s_lu: Lu,
}

/// Text record `{ "m": int, "alpha": [..], "S": [[..]] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhRecord {
    pub m: usize,
    pub alpha: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
}

impl TryFrom<PhRecord> for PhaseType {
    type Error = Error;

    fn try_from(rec: PhRecord) -> Result<Self> {
        if rec.alpha.len() != rec.m {
            return Err(Error::DimensionMismatch(format!(
                "m = {} but alpha has {} entries",
                rec.m,
                rec.alpha.len()
            )));
        }
        let s = Matrix::from_rows(&rec.s)
            .ok_or_else(|| Error::DimensionMismatch("ragged S rows".into()))?;
        PhaseType::new(rec.alpha, s)
    }
}

impl From<PhaseType> for PhRecord {
    fn from(ph: PhaseType) -> Self {
        PhRecord {
            m: ph.phases(),
            alpha: ph.alpha,
            s: ph.s.to_rows(),
        }
    }
}

impl PhaseType {
    /// Validates `(alpha, S)` and builds the distribution.
    pub fn new(alpha: Vec<f64>, s: Matrix) -> Result<Self> {
        let m = alpha.len();
        if m == 0 {
            return Err(Error::DimensionMismatch("empty phase-type representation".into()));
        }
        if s.rows() != m || s.cols() != m {
            return Err(Error::DimensionMismatch(format!(
                "alpha has {m} entries but S is {}x{}",
                s.rows(),
                s.cols()
            )));
        }
        if let Some((i, a)) = alpha.iter().enumerate().find(|(_, a)| !(**a >= 0.0)) {
            return Err(Error::NegativeProbability(format!("alpha[{i}] = {a}")));
        }
        let total: f64 = alpha.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::NegativeProbability(format!("alpha sums to {total}")));
        }

        let mut exit = vec![0.0; m];
        for i in 0..m {
            let d = s[(i, i)];
            if !(d < 0.0) || !d.is_finite() {
                return Err(Error::BadDiagonal { index: i, value: d });
            }
            for j in 0..m {
                let v = s[(i, j)];
                if i != j && (!(v >= 0.0) || !v.is_finite()) {
                    return Err(Error::NegativeRate { row: i, col: j, value: v });
                }
            }
            let row_sum: f64 = s.row(i).iter().sum();
            let slack = ROW_SUM_REL_TOL * d.abs();
            if row_sum > slack {
                return Err(Error::PositiveRowSum { row: i, value: row_sum });
            }
            exit[i] = if row_sum.abs() <= slack { 0.0 } else { -row_sum };
        }

        let neg_s_lu = Lu::factor(&s.scale(-1.0)).map_err(|_| Error::SingularGenerator)?;
        Ok(Self { alpha, s, exit, neg_s_lu })
    }

    /// Exponential distribution with the given rate.
    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(vec![1.0], Matrix::from_rows(&[vec![-rate]]).expect("1x1"))
    }

    /// Erlang distribution with `stages` phases of rate `rate` each.
    pub fn erlang(stages: usize, rate: f64) -> Result<Self> {
        let mut s = Matrix::zeros(stages, stages);
        for i in 0..stages {
            s[(i, i)] = -rate;
            if i + 1 < stages {
                s[(i, i + 1)] = rate;
            }
        }
        let mut alpha = vec![0.0; stages];
        if let Some(a) = alpha.first_mut() {
            *a = 1.0;
        }
        Self::new(alpha, s)
    }

    pub fn phases(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn generator(&self) -> &Matrix {
        &self.s
    }

    /// Absorption rates per phase, `-S 1`.
    pub fn exit_rates(&self) -> &[f64] {
        &self.exit
    }

    pub fn to_record(&self) -> PhRecord {
        self.clone().into()
    }

    /// Raw moments `[E[X], ..., E[X^k_max]]`, from `E[X^k] = k! alpha (-S)^{-k} 1`.
    ///
    /// Each power is one more solve against `-S`; `(-S)^{-k}` is never formed.
    pub fn moments(&self, k_max: usize) -> Vec<f64> {
        let mut v = vec![1.0; self.phases()];
        let mut factorial = 1.0;
        (1..=k_max)
            .map(|k| {
                v = self.neg_s_lu.solve(&v);
                factorial *= k as f64;
                factorial * linalg::dot(&self.alpha, &v)
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.moments(1)[0]
    }

    /// Rescales time so that the mean is exactly 1: `S' = mean * S`.
    pub fn scale_to_unit_mean(&self) -> Result<Self> {
        let mu = self.mean();
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::SingularGenerator);
        }
        if mu == 1.0 {
            return Ok(self.clone());
        }
        Self::new(self.alpha.clone(), self.s.scale(mu))
    }

    /// Analytic CDF `1 - alpha exp(S t) 1`.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let row = linalg::expm(&self.s.scale(t)).vec_mul(&self.alpha);
        (1.0 - row.iter().sum::<f64>()).clamp(0.0, 1.0)
    }

    /// Density `alpha exp(S t) s0`.
    pub fn pdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let row = linalg::expm(&self.s.scale(t)).vec_mul(&self.alpha);
        linalg::dot(&row, &self.exit)
    }

    /// Smallest `t` with `cdf(t) >= p`, to about 1e-10 relative.
    ///
    /// Brackets on a doubling time grid (each step squares the previous
    /// exponential), then refines with safeguarded Newton steps.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
        let m = self.phases();
        let ones = vec![1.0; m];
        let cdf_of = |e: &Matrix| 1.0 - linalg::dot(&e.vec_mul(&self.alpha), &ones);

        let mut hi = 1e-12 * self.mean();
        let mut e = linalg::expm(&self.s.scale(hi));
        let mut lo = 0.0;
        let mut doublings = 0;
        while cdf_of(&e) < p && doublings < 2000 {
            lo = hi;
            hi *= 2.0;
            e = e.matmul(&e);
            doublings += 1;
        }

        let mut t = 0.5 * (lo + hi);
        for _ in 0..200 {
            let row = linalg::expm(&self.s.scale(t)).vec_mul(&self.alpha);
            let f = 1.0 - row.iter().sum::<f64>() - p;
            if f < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            if hi - lo <= 1e-10 * hi {
                break;
            }
            let density = linalg::dot(&row, &self.exit);
            let newton = t - f / density;
            t = if density > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if f.abs() < 1e-14 {
                return t;
            }
        }
        hi
    }

    /// Draws one absorption time by simulating the phase path.
    pub fn sample_variate<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        VariateSampler::new(self).sample(rng)
    }
}

/// Precomputed jump tables for repeated phase-path sampling from one PH.
#[derive(Debug, Clone)]
pub struct VariateSampler {
    initial_cdf: Vec<f64>,
    total_rate: Vec<f64>,
    // Per phase: cumulative jump probabilities to phases 0..m; the remainder absorbs.
    jump_cdf: Vec<Vec<f64>>,
}

impl VariateSampler {
    pub fn new(ph: &PhaseType) -> Self {
        let m = ph.phases();
        let initial_cdf = cumulative(ph.alpha());
        let mut total_rate = Vec::with_capacity(m);
        let mut jump_cdf = Vec::with_capacity(m);
        for i in 0..m {
            let q = -ph.s[(i, i)];
            total_rate.push(q);
            let probs: Vec<f64> = (0..m)
                .map(|j| if i == j { 0.0 } else { ph.s[(i, j)] / q })
                .collect();
            jump_cdf.push(cumulative(&probs));
        }
        Self {
            initial_cdf,
            total_rate,
            jump_cdf,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut phase = pick(&self.initial_cdf, rng.random::<f64>());
        let mut t = 0.0;
        loop {
            let e: f64 = rng.sample(Exp1);
            t += e / self.total_rate[phase];
            let u: f64 = rng.random();
            let cdf = &self.jump_cdf[phase];
            if u >= *cdf.last().expect("non-empty") {
                return t;
            }
            phase = pick(cdf, u);
        }
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

// Index of the first cumulative entry strictly above `u`; roundoff at the top
// falls back to the last entry carrying positive mass.
fn pick(cdf: &[f64], u: f64) -> usize {
    if let Some(i) = cdf.iter().position(|&c| u < c) {
        return i;
    }
    let mut prev = 0.0;
    let mut last = cdf.len() - 1;
    for (i, &c) in cdf.iter().enumerate() {
        if c > prev {
            last = i;
        }
        prev = c;
    }
    last
}
