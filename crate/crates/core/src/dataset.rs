//! Training data: sampled instances, exact QBD targets, log-moment features,
//! and z-score standardization.
//!
//! Dataset files are plain text:
//!
//! ```text
//! #mg1ds v1 n=<n> l=<l> count=<N> seed=<s>
//! <n raw features, comma separated>|<l probabilities, comma separated>|<tail mass>
//! ```
//!
//! Features are stored raw (`lambda, ln m2, .., ln mn`), before
//! standardization, so standardizers can be refit and shorter moment prefixes
//! taken without regenerating.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qbd::{self, QbdSolution, QueueInstance};
use crate::random::stream;
use crate::sampler::{sample_instance, SamplerConfig};

/// Draws per sample before generation gives up on that index.
const MAX_SAMPLE_RETRIES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// `[lambda, ln m2, ..., ln mn]`, not standardized.
    pub features: Vec<f64>,
    /// `P(N = 0) .. P(N = l - 1)`.
    pub target: Vec<f64>,
    pub tail_mass: f64,
}

/// What to do with a draw whose mass beyond the last level exceeds epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TailPolicy {
    /// Discard and redraw, so every stored target covers at least `1 - epsilon`.
    #[default]
    Reject,
    /// Store the truncated target and its tail mass as is.
    Keep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub count: usize,
    pub n_moments: usize,
    pub levels: usize,
    pub epsilon: f64,
    pub tail_policy: TailPolicy,
    pub sampler: SamplerConfig,
    /// Worker threads; 0 means the rayon default.
    pub workers: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            count: 50_000,
            n_moments: 5,
            levels: qbd::DEFAULT_LEVELS,
            epsilon: qbd::DEFAULT_EPSILON,
            tail_policy: TailPolicy::Reject,
            sampler: SamplerConfig::default(),
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_moments: usize,
    pub levels: usize,
    pub seed: u64,
    pub samples: Vec<TrainingSample>,
}

/// Which split a dataset is for; each split draws from its own seed space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Seed actually used for this split; `Train` keeps the given seed.
    pub fn derive_seed(self, seed: u64) -> u64 {
        let code = match self {
            Split::Train => 0u64,
            Split::Val => 1,
            Split::Test => 2,
        };
        seed ^ code.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Raw feature vector `[lambda, ln m2, .., ln mn]` from unit-mean moments.
pub fn features_from_moments(lambda: f64, moments: &[f64]) -> Vec<f64> {
    std::iter::once(lambda)
        .chain(moments.iter().skip(1).map(|m| m.ln()))
        .collect()
}

/// Builds one sample from an instance; the instance's service must have unit mean.
pub fn make_sample(
    instance: &QueueInstance,
    n_moments: usize,
    levels: usize,
    epsilon: f64,
    policy: TailPolicy,
) -> Result<TrainingSample> {
    let moments = instance.service().moments(n_moments);
    let dist = match policy {
        TailPolicy::Reject => qbd::solve(instance, levels, epsilon)?,
        TailPolicy::Keep => QbdSolution::solve(instance)?.distribution(levels)?,
    };
    Ok(TrainingSample {
        features: features_from_moments(instance.lambda(), &moments),
        target: dist.probs,
        tail_mass: dist.tail_mass,
    })
}

/// Sample `index` of a dataset, drawn from its own random stream. Failed
/// draws continue on the same stream, so the result depends only on
/// `(seed, index)`.
pub fn generate_one(config: &GenerateConfig, seed: u64, index: u64) -> Result<TrainingSample> {
    let mut rng = stream(seed, index);
    let mut last_err = None;
    for attempt in 0..MAX_SAMPLE_RETRIES {
        let outcome = sample_instance(&config.sampler, &mut rng).and_then(|inst| {
            make_sample(
                &inst,
                config.n_moments,
                config.levels,
                config.epsilon,
                config.tail_policy,
            )
        });
        match outcome {
            Ok(sample) => return Ok(sample),
            Err(e @ (Error::InvalidConfig(_) | Error::RejectionBudgetExceeded { .. })) => {
                return Err(e)
            }
            Err(e) => {
                debug!("sample {index}: attempt {attempt} rejected: {e}");
                last_err = Some(e);
            }
        }
    }
    Err(last_err.unwrap_or(Error::NoConvergence("sample retries exhausted".into())))
}

/// Generates `config.count` samples; identical for any worker count.
pub fn generate(config: &GenerateConfig, seed: u64) -> Result<Dataset> {
    if config.n_moments < 2 {
        return Err(Error::InvalidConfig("n_moments must be at least 2".into()));
    }
    if config.count < 1 {
        return Err(Error::InvalidConfig("count must be at least 1".into()));
    }
    if config.levels < 1 {
        return Err(Error::InvalidConfig("levels must be at least 1".into()));
    }
    config.sampler.validate()?;
    let run = || {
        (0..config.count as u64)
            .into_par_iter()
            .map(|i| generate_one(config, seed, i))
            .collect::<Result<Vec<_>>>()
    };
    let samples = if config.workers == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(run)?
    };
    Ok(Dataset {
        n_moments: config.n_moments,
        levels: config.levels,
        seed,
        samples,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Keeps only the first `n` moment features (`lambda` plus `n - 1` logs).
    pub fn with_moments(&self, n: usize) -> Result<Dataset> {
        if n < 2 || n > self.n_moments {
            return Err(Error::DatasetMismatch(format!(
                "cannot take {n} moments from a dataset with {}",
                self.n_moments
            )));
        }
        Ok(Dataset {
            n_moments: n,
            levels: self.levels,
            seed: self.seed,
            samples: self
                .samples
                .iter()
                .map(|s| TrainingSample {
                    features: s.features[..n].to_vec(),
                    target: s.target.clone(),
                    tail_mass: s.tail_mass,
                })
                .collect(),
        })
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.features.clone()).collect()
    }

    pub fn targets(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.target.clone()).collect()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "#mg1ds v1 n={} l={} count={} seed={}",
            self.n_moments,
            self.levels,
            self.samples.len(),
            self.seed
        )?;
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            join_into(&mut line, &s.features);
            line.push('|');
            join_into(&mut line, &s.target);
            let _ = write!(line, "|{}", s.tail_mass);
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Dataset> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
        let (n_moments, levels, count, seed) = parse_header(&header)?;
        let mut samples = Vec::with_capacity(count);
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 2;
            let mut parts = line.split('|');
            let (Some(f), Some(t), Some(tail), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Parse(format!("line {lineno}: expected 3 '|'-separated fields")));
            };
            let features = parse_list(f, lineno)?;
            let target = parse_list(t, lineno)?;
            if features.len() != n_moments || target.len() != levels {
                return Err(Error::DatasetMismatch(format!(
                    "line {lineno}: {} features / {} targets, header says n={n_moments} l={levels}",
                    features.len(),
                    target.len()
                )));
            }
            let tail_mass = parse_f64(tail, lineno)?;
            samples.push(TrainingSample {
                features,
                target,
                tail_mass,
            });
        }
        if samples.len() != count {
            return Err(Error::DatasetMismatch(format!(
                "header declares {count} samples, found {}",
                samples.len()
            )));
        }
        Ok(Dataset {
            n_moments,
            levels,
            seed,
            samples,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn join_into(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
}

fn parse_f64(s: &str, lineno: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {lineno}: bad number {s:?}")))
}

fn parse_list(s: &str, lineno: usize) -> Result<Vec<f64>> {
    s.split(',').map(|v| parse_f64(v, lineno)).collect()
}

fn parse_header(header: &str) -> Result<(usize, usize, usize, u64)> {
    let mut fields = header.split_whitespace();
    if fields.next() != Some("#mg1ds") || fields.next() != Some("v1") {
        return Err(Error::Parse(format!("not a v1 dataset header: {header:?}")));
    }
    let (mut n, mut l, mut count, mut seed) = (None, None, None, None);
    for f in fields {
        let (key, value) = f
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header field {f:?}")))?;
        let bad = |_| Error::Parse(format!("bad header value {f:?}"));
        match key {
            "n" => n = Some(value.parse().map_err(bad)?),
            "l" => l = Some(value.parse().map_err(bad)?),
            "count" => count = Some(value.parse().map_err(bad)?),
            "seed" => seed = Some(value.parse().map_err(bad)?),
            _ => {}
        }
    }
    match (n, l, count, seed) {
        (Some(n), Some(l), Some(c), Some(s)) => Ok((n, l, c, s)),
        _ => Err(Error::Parse(format!("incomplete dataset header: {header:?}"))),
    }
}

/// Per-feature z-score parameters, fit on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Population mean and standard deviation of each feature column.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::DatasetMismatch("cannot fit a standardizer on no rows".into()))?;
        let dim = first.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("ragged feature rows".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        for (index, (s, m)) in std.iter().zip(&mean).enumerate() {
            if !(*s > 1e-12 * m.abs().max(1.0)) {
                return Err(Error::DegenerateFeature { index });
            }
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} features, got {}",
                self.dim(),
                features.len()
            )));
        }
        Ok(features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }

    pub fn invert(&self, standardized: &[f64]) -> Vec<f64> {
        standardized
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }

    pub fn apply_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phtype::PhaseType;
    use proptest::prelude::*;

    fn small(count: usize, n: usize) -> GenerateConfig {
        GenerateConfig {
            count,
            n_moments: n,
            ..GenerateConfig::default()
        }
    }

    #[test]
    fn exponential_features() {
        let inst = QueueInstance::new(0.5, PhaseType::exponential(1.0).unwrap()).unwrap();
        let s = make_sample(&inst, 5, 70, 1e-9, TailPolicy::Reject).unwrap();
        let expect = [0.5, 2f64.ln(), 6f64.ln(), 24f64.ln(), 120f64.ln()];
        assert_eq!(s.features.len(), 5);
        for (a, b) in s.features.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn generated_rows_respect_layout_and_tail() {
        let ds = generate(&small(60, 5), 11).unwrap();
        assert_eq!(ds.len(), 60);
        for s in &ds.samples {
            assert_eq!(s.features.len(), 5);
            assert_eq!(s.target.len(), 70);
            assert!(s.tail_mass <= 1e-9);
            let covered: f64 = s.target.iter().sum();
            assert!(covered <= 1.0 + 1e-12 && covered >= 1.0 - 1e-9);
            assert!(s.features[0] > 0.0 && s.features[0] < 0.95);
        }
    }

    #[test]
    fn generation_is_independent_of_worker_count() {
        let mut one = small(40, 4);
        one.workers = 1;
        let mut three = one.clone();
        three.workers = 3;
        assert_eq!(generate(&one, 5).unwrap(), generate(&three, 5).unwrap());
    }

    #[test]
    fn moment_prefix_matches_direct_generation() {
        let wide = generate(&small(20, 8), 3).unwrap();
        let narrow = generate(&small(20, 5), 3).unwrap();
        assert_eq!(wide.with_moments(5).unwrap(), narrow);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let ds = generate(&small(15, 3), 9).unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#mg1ds v1 n=3 l=70 count=15 seed=9\n"));
        let back = Dataset::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn header_count_mismatch_detected() {
        let text = "#mg1ds v1 n=2 l=2 count=2 seed=0\n0.5,1|0.5,0.25|0.25\n";
        assert!(matches!(
            Dataset::read_from(text.as_bytes()),
            Err(Error::DatasetMismatch(_))
        ));
    }

    #[test]
    fn standardizer_examples() {
        let stats = FeatureStats::fit(&[vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.std, vec![1.0]);
        assert_eq!(stats.apply(&[1.0]).unwrap(), vec![-1.0]);
        assert_eq!(stats.apply(&[3.0]).unwrap(), vec![1.0]);

        let e = FeatureStats::fit(&[vec![1.0, 4.0], vec![2.0, 4.0]]).unwrap_err();
        assert!(matches!(e, Error::DegenerateFeature { index: 1 }));
    }

    proptest! {
        #[test]
        fn standardized_training_split_is_centered(
            rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 3), 2..60)
        ) {
            let Ok(stats) = FeatureStats::fit(&rows) else { return Ok(()); };
            let z = stats.apply_all(&rows).unwrap();
            let n = z.len() as f64;
            for j in 0..3 {
                let mean = z.iter().map(|r| r[j]).sum::<f64>() / n;
                let var = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-6);
            }
            for (r, zr) in rows.iter().zip(&z) {
                for (a, b) in r.iter().zip(stats.invert(zr)) {
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                }
            }
        }
    }
}
