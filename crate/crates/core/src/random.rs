//! Seeded random streams and the small set of variates the sampler needs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

/// Generator used everywhere in the crate.
pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Independent stream `index` under `master`. Streams do not depend on the
/// order in which they are created, so parallel work stays reproducible.
pub fn stream(master: u64, index: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Continuous uniform on the open interval (0, 1).
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Natural log of a Gamma(shape, 1) variate.
///
/// Shapes below one use the boost `G(a) = G(a + 1) U^{1/a}`, carried out in
/// log space so tiny shapes cannot underflow to an all-zero Dirichlet draw.
/// `rand_distr::Gamma` draws the large-shape part (Marsaglia–Tsang).
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    assert!(shape > 0.0, "gamma shape must be positive");
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("valid shape").sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("valid shape").sample(rng);
        g.ln() + open01(rng).ln() / shape
    }
}

/// Dirichlet draw by normalizing independent Gamma variates.
pub fn dirichlet<R: Rng + ?Sized>(concentration: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = concentration
        .iter()
        .map(|&a| ln_gamma_variate(a, rng))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

/// Dirichlet draw whose concentration weights are themselves U(0,1).
pub fn dirichlet_random_weights<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let weights: Vec<f64> = (0..k).map(|_| open01(rng)).collect();
    dirichlet(&weights, rng)
}

/// Index drawn from a probability vector; the last positive entry absorbs roundoff.
pub fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Inclusive integer uniform on `lo..=hi`.
pub fn uniform_int<R: Rng + ?Sized>(lo: usize, hi: usize, rng: &mut R) -> usize {
    rng.random_range(lo..=hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest};

    #[test]
    fn streams_are_order_independent() {
        let a: Vec<u64> = {
            let mut r = stream(7, 3);
            (0..4).map(|_| r.random()).collect()
        };
        let _ = stream(7, 2).random::<u64>();
        let b: Vec<u64> = {
            let mut r = stream(7, 3);
            (0..4).map(|_| r.random()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(stream(7, 3).random::<u64>(), stream(7, 4).random::<u64>());
    }

    #[test]
    fn gamma_mean_small_and_large_shape() {
        let mut rng = seeded(3);
        for shape in [0.3, 2.5] {
            let n = 200_000;
            let mean = (0..n).map(|_| ln_gamma_variate(shape, &mut rng).exp()).sum::<f64>() / n as f64;
            assert!((mean - shape).abs() < 0.02 * shape.max(1.0), "shape {shape}: {mean}");
        }
    }

    #[test]
    fn dirichlet_marginal_mean() {
        let mut rng = seeded(4);
        let a = [0.2, 0.5, 1.3];
        let n = 100_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            for (s, x) in acc.iter_mut().zip(dirichlet(&a, &mut rng)) {
                *s += x;
            }
        }
        let total: f64 = a.iter().sum();
        for i in 0..3 {
            assert!((acc[i] / n as f64 - a[i] / total).abs() < 0.01);
        }
    }

    proptest! {
        #[test]
        fn dirichlet_is_a_probability_vector(
            weights in proptest::collection::vec(1e-6f64..5.0, 1..25),
            seed in any::<u64>(),
        ) {
            let mut rng = seeded(seed);
            let p = dirichlet(&weights, &mut rng);
            prop_assert!(p.iter().all(|x| *x >= 0.0 && x.is_finite()));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
