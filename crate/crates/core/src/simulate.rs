//! Event-driven M/PH/1 simulation: an independent check on the QBD solver
//! and the source of raw service data for the moment-estimation workflow.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::Exp1;

use crate::phtype::{PhaseType, VariateSampler};
use crate::qbd::{QueueInstance, QueueLengthDistribution};
use crate::random::seeded;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Events (arrivals plus departures) discarded before measuring.
    pub warmup_events: u64,
    /// Total events simulated, warmup included.
    pub horizon_events: u64,
    pub seed: u64,
    pub levels: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            warmup_events: 10_000,
            horizon_events: 1_000_000,
            seed: 42,
            levels: crate::qbd::DEFAULT_LEVELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    /// Time-weighted empirical queue-length law after warmup.
    pub distribution: QueueLengthDistribution,
    /// Time-average number in system.
    pub mean_in_system: f64,
    /// Mean sojourn of customers arriving after warmup and departing before the horizon.
    pub mean_sojourn: f64,
    /// Post-warmup arrival rate (arrivals over observed time).
    pub arrival_rate: f64,
    pub observed_time: f64,
}

/// Simulates the queue with arrival rate `lambda` (zero is allowed and leaves
/// the system empty).
pub fn simulate_mph1(lambda: f64, service: &PhaseType, cfg: &SimConfig) -> SimReport {
    assert!(cfg.warmup_events < cfg.horizon_events, "warmup must precede the horizon");
    let levels = cfg.levels.max(1);
    let mut rng = seeded(cfg.seed);
    let sampler = VariateSampler::new(service);

    let mut time_at = vec![0.0; levels];
    let mut tail_time = 0.0;
    let mut weighted_n = 0.0;

    let mut now = 0.0;
    let mut in_system: usize = 0;
    let mut next_arrival = if lambda > 0.0 {
        rng.sample::<f64, _>(Exp1) / lambda
    } else {
        f64::INFINITY
    };
    let mut next_departure = f64::INFINITY;
    let mut arrivals: VecDeque<(f64, bool)> = VecDeque::new();
    let mut sojourn_sum = 0.0;
    let mut sojourn_count = 0u64;
    let mut counted_arrivals = 0u64;
    let mut measure_start = 0.0;

    let mut events = 0u64;
    while events < cfg.horizon_events {
        let t = next_arrival.min(next_departure);
        if !t.is_finite() {
            // Empty system with no arrivals: nothing ever happens.
            break;
        }
        let measuring = events >= cfg.warmup_events;
        if measuring {
            let dt = t - now;
            if in_system < levels {
                time_at[in_system] += dt;
            } else {
                tail_time += dt;
            }
            weighted_n += dt * in_system as f64;
        }
        now = t;
        if events == cfg.warmup_events {
            measure_start = now;
        }
        if next_arrival <= next_departure {
            in_system += 1;
            arrivals.push_back((now, measuring));
            counted_arrivals += u64::from(measuring);
            if in_system == 1 {
                next_departure = now + sampler.sample(&mut rng);
            }
            next_arrival = now + rng.sample::<f64, _>(Exp1) / lambda;
        } else {
            in_system -= 1;
            let (arrived, tracked) = arrivals.pop_front().expect("departure from empty queue");
            if tracked {
                sojourn_sum += now - arrived;
                sojourn_count += 1;
            }
            next_departure = if in_system > 0 {
                now + sampler.sample(&mut rng)
            } else {
                f64::INFINITY
            };
        }
        events += 1;
    }

    let observed = now - measure_start;
    let distribution = if observed > 0.0 {
        QueueLengthDistribution {
            probs: time_at.iter().map(|t| t / observed).collect(),
            tail_mass: tail_time / observed,
        }
    } else {
        let mut probs = vec![0.0; levels];
        probs[0] = 1.0;
        QueueLengthDistribution {
            probs,
            tail_mass: 0.0,
        }
    };
    SimReport {
        distribution,
        mean_in_system: if observed > 0.0 { weighted_n / observed } else { 0.0 },
        mean_sojourn: if sojourn_count > 0 {
            sojourn_sum / sojourn_count as f64
        } else {
            0.0
        },
        arrival_rate: if observed > 0.0 {
            counted_arrivals as f64 / observed
        } else {
            0.0
        },
        observed_time: observed,
    }
}

/// Empirical queue-length law of a stable instance.
pub fn simulate_queue(instance: &QueueInstance, cfg: &SimConfig) -> QueueLengthDistribution {
    simulate_mph1(instance.lambda(), instance.service(), cfg).distribution
}

/// `count` independent service times.
pub fn draw_service_sample<R: Rng + ?Sized>(ph: &PhaseType, count: usize, rng: &mut R) -> Vec<f64> {
    let sampler = VariateSampler::new(ph);
    (0..count).map(|_| sampler.sample(rng)).collect()
}

/// Total-variation distance, half the L1 distance including the tail masses.
pub fn tv_distance(a: &QueueLengthDistribution, b: &QueueLengthDistribution) -> f64 {
    let body: f64 = a.probs.iter().zip(&b.probs).map(|(x, y)| (x - y).abs()).sum();
    0.5 * (body + (a.tail_mass - b.tail_mass).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qbd::QbdSolution;

    fn exp1() -> PhaseType {
        PhaseType::exponential(1.0).unwrap()
    }

    #[test]
    fn mm1_matches_geometric_law() {
        let inst = QueueInstance::new(0.5, exp1()).unwrap();
        let sim = simulate_queue(&inst, &SimConfig::default());
        let exact = QbdSolution::solve(&inst).unwrap().distribution(70).unwrap();
        let tv = tv_distance(&sim, &exact);
        assert!(tv < 0.01, "tv {tv}");
    }

    #[test]
    fn no_arrivals_means_empty_system() {
        let r = simulate_mph1(0.0, &exp1(), &SimConfig::default());
        assert_eq!(r.distribution.probs[0], 1.0);
        assert_eq!(r.distribution.tail_mass, 0.0);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let inst = QueueInstance::new(0.7, PhaseType::erlang(3, 3.0).unwrap()).unwrap();
        let cfg = SimConfig {
            horizon_events: 50_000,
            ..SimConfig::default()
        };
        assert_eq!(simulate_queue(&inst, &cfg), simulate_queue(&inst, &cfg));
    }

    #[test]
    fn littles_law_holds() {
        let inst = QueueInstance::new(0.8, PhaseType::erlang(2, 2.0).unwrap()).unwrap();
        let r = simulate_mph1(inst.lambda(), inst.service(), &SimConfig::default());
        let little = r.arrival_rate * r.mean_sojourn;
        assert!((r.mean_in_system - little).abs() < 0.02 * r.mean_in_system, "{} vs {little}", r.mean_in_system);
    }

    #[test]
    fn service_sample_properties() {
        let mut rng = seeded(11);
        assert!(draw_service_sample(&exp1(), 0, &mut rng).is_empty());
        let xs = draw_service_sample(&exp1(), 50_000, &mut rng);
        assert!(xs.iter().all(|&x| x > 0.0));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        // Standard error of the mean of Exp(1) is 1/sqrt(n).
        assert!((mean - 1.0).abs() < 3.0 / (xs.len() as f64).sqrt());
    }
}
