//! Hierarchical random generation of phase-type service distributions.
//!
//! A draw picks a total phase count, splits the phases into classes (sets of
//! states closed under reachability before absorption), samples each class
//! on its own and stacks the classes block-diagonally. Within a class every
//! state is typed as fully absorbing, partially absorbing or non-absorbing,
//! and its row of rates is normalized to match its type. Draws whose chain
//! can livelock (infinite mean) are rejected and redrawn from scratch.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::phtype::PhaseType;
use crate::qbd::QueueInstance;
use crate::random::{categorical, dirichlet_random_weights, open01, uniform_int};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Upper bound on the total number of phases.
    pub max_ph: usize,
    pub rate_lo: f64,
    pub rate_hi: f64,
    /// Arrival rates are drawn from U(0, rho_max) against unit-mean service.
    pub rho_max: f64,
    pub seed: u64,
    /// Full redraws allowed before giving up on a single sample.
    pub max_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            max_ph: 20,
            rate_lo: 1.0,
            rate_hi: 1000.0,
            rho_max: 0.95,
            seed: 42,
            max_attempts: 1000,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_ph < 1 {
            return Err(Error::InvalidConfig("max_ph must be at least 1".into()));
        }
        if !(self.rate_lo > 0.0 && self.rate_lo < self.rate_hi && self.rate_hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "rate bounds must satisfy 0 < lo < hi, got [{}, {}]",
                self.rate_lo, self.rate_hi
            )));
        }
        if !(self.rho_max > 0.0 && self.rho_max < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rho_max must lie in (0, 1), got {}",
                self.rho_max
            )));
        }
        if self.max_attempts < 1 {
            return Err(Error::InvalidConfig("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateType {
    FullAbsorbing,
    PartialAbsorbing,
    NonAbsorbing,
}

/// Partition of a class's states (0-based indices) by absorption behavior.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StateTyping {
    pub full_absorbing: Vec<usize>,
    pub partial_absorbing: Vec<usize>,
    pub non_absorbing: Vec<usize>,
}

impl StateTyping {
    pub fn len(&self) -> usize {
        self.full_absorbing.len() + self.partial_absorbing.len() + self.non_absorbing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn type_of(&self, state: usize) -> Option<StateType> {
        if self.full_absorbing.contains(&state) {
            Some(StateType::FullAbsorbing)
        } else if self.partial_absorbing.contains(&state) {
            Some(StateType::PartialAbsorbing)
        } else if self.non_absorbing.contains(&state) {
            Some(StateType::NonAbsorbing)
        } else {
            None
        }
    }
}

/// Transition structure of one class before rates are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDraft {
    pub size: usize,
    /// `trans[j][k]` is true when a direct jump `j -> k` is permitted.
    pub trans: Vec<Vec<bool>>,
    /// Absorption probability on leaving each partially absorbing state.
    pub absorb_prob: BTreeMap<usize, f64>,
}

/// One sampled class: its sub-PH plus the structure it was built from.
#[derive(Debug, Clone)]
pub struct ClassSample {
    pub alpha: Vec<f64>,
    pub generator: Matrix,
    pub typing: StateTyping,
    pub draft: ClassDraft,
}

/// Types each of `size` states. The first state is never non-absorbing, so
/// every class has a way out.
pub fn sample_state_types<R: Rng + ?Sized>(size: usize, rng: &mut R) -> StateTyping {
    assert!(size >= 1, "class size must be positive");
    let p = dirichlet_random_weights(3, rng);
    let first = [p[0] / (p[0] + p[1]), p[1] / (p[0] + p[1])];
    let mut typing = StateTyping::default();
    for j in 0..size {
        let kind = if j == 0 {
            categorical(&first, rng)
        } else {
            categorical(&p, rng)
        };
        match kind {
            0 => typing.full_absorbing.push(j),
            1 => typing.partial_absorbing.push(j),
            _ => typing.non_absorbing.push(j),
        }
    }
    typing
}

/// Samples a single class of `size` states with rates in `[rate_lo, rate_hi]`.
pub fn sample_class<R: Rng + ?Sized>(
    size: usize,
    rate_lo: f64,
    rate_hi: f64,
    rng: &mut R,
) -> ClassSample {
    let typing = sample_state_types(size, rng);

    // Permitted transitions. Fully absorbing rows stay empty.
    let mut trans = vec![vec![false; size]; size];
    for j in 0..size {
        if typing.type_of(j) == Some(StateType::FullAbsorbing) || size < 2 {
            continue;
        }
        let extra = if size > 2 {
            let q = open01(rng);
            Binomial::new((size - 2) as u64, q).expect("valid binomial").sample(rng) as usize
        } else {
            0
        };
        let count = (1 + extra).min(size - 1);
        let others: Vec<usize> = (0..size).filter(|&k| k != j).collect();
        for idx in rand::seq::index::sample(rng, others.len(), count) {
            trans[j][others[idx]] = true;
        }
    }

    let mut s = Matrix::zeros(size, size);
    for j in 0..size {
        s[(j, j)] = -rng.random_range(rate_lo..rate_hi);
    }
    for j in 0..size {
        for k in 0..size {
            if trans[j][k] {
                s[(j, k)] = rng.random_range(rate_lo..rate_hi);
            }
        }
    }

    let mut absorb_prob = BTreeMap::new();
    for &j in &typing.partial_absorbing {
        absorb_prob.insert(j, open01(rng));
    }

    // Off-diagonals of a non-absorbing row sum to |S[j,j]|; of a partially
    // absorbing row to (1 - p_j)|S[j,j]|.
    for j in 0..size {
        let keep = match typing.type_of(j) {
            Some(StateType::NonAbsorbing) => 1.0,
            Some(StateType::PartialAbsorbing) => 1.0 - absorb_prob[&j],
            _ => continue,
        };
        let off: f64 = (0..size).filter(|&k| k != j).map(|k| s[(j, k)]).sum();
        if off == 0.0 {
            continue;
        }
        let factor = keep * -s[(j, j)] / off;
        for k in (0..size).filter(|&k| k != j) {
            s[(j, k)] *= factor;
        }
    }

    let alpha = dirichlet_random_weights(size, rng);
    ClassSample {
        alpha,
        generator: s,
        typing,
        draft: ClassDraft {
            size,
            trans,
            absorb_prob,
        },
    }
}

/// Outcome of a phase-type draw, with the class layout and rejection count.
#[derive(Debug, Clone)]
pub struct PhDraw {
    pub ph: PhaseType,
    pub class_sizes: Vec<usize>,
    /// Full redraws needed before this one was accepted.
    pub rejections: usize,
}

/// One unvalidated pass: returns `(alpha, S, class sizes)`.
fn draw_block_structure<R: Rng + ?Sized>(
    config: &SamplerConfig,
    rng: &mut R,
) -> (Vec<f64>, Matrix, Vec<usize>) {
    let m = uniform_int(1, config.max_ph, rng);
    let num_classes = uniform_int(1, m, rng);
    let entry = dirichlet_random_weights(num_classes, rng);

    let mut alpha = vec![0.0; m];
    let mut s = Matrix::zeros(m, m);
    let mut sizes = Vec::with_capacity(num_classes);
    let mut assigned = 0;
    for i in 0..num_classes {
        let remaining_classes = num_classes - i - 1;
        let upper = m - assigned - remaining_classes;
        // The last class takes whatever is left so the sizes add up to m.
        let size = if remaining_classes == 0 {
            upper
        } else {
            uniform_int(1, upper, rng)
        };
        let class = sample_class(size, config.rate_lo, config.rate_hi, rng);
        for a in 0..size {
            alpha[assigned + a] = class.alpha[a] * entry[i];
            for b in 0..size {
                s[(assigned + a, assigned + b)] = class.generator[(a, b)];
            }
        }
        assigned += size;
        sizes.push(size);
    }
    (alpha, s, sizes)
}

/// Draws a phase-type distribution, redrawing from scratch on livelock.
pub fn sample_ph_draw<R: Rng + ?Sized>(config: &SamplerConfig, rng: &mut R) -> Result<PhDraw> {
    config.validate()?;
    for attempt in 0..config.max_attempts {
        let (alpha, s, class_sizes) = draw_block_structure(config, rng);
        // Products of Dirichlet vectors can drift from 1 by a few ulps.
        let total: f64 = alpha.iter().sum();
        let alpha = alpha.into_iter().map(|a| a / total).collect();
        match PhaseType::new(alpha, s) {
            Ok(ph) => {
                return Ok(PhDraw {
                    ph,
                    class_sizes,
                    rejections: attempt,
                })
            }
            Err(Error::SingularGenerator) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::RejectionBudgetExceeded {
        attempts: config.max_attempts,
    })
}

pub fn sample_ph<R: Rng + ?Sized>(config: &SamplerConfig, rng: &mut R) -> Result<PhaseType> {
    sample_ph_draw(config, rng).map(|d| d.ph)
}

/// Draws `(lambda, unit-mean PH)`; with unit mean, `rho = lambda < rho_max`.
pub fn sample_instance<R: Rng + ?Sized>(
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<QueueInstance> {
    let ph = sample_ph(config, rng)?.scale_to_unit_mean()?;
    let lambda = config.rho_max * open01(rng);
    QueueInstance::new(lambda, ph)
}
