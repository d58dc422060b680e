//! Prediction from raw service-time data: estimate moments, move to the
//! unit-mean scale the model was trained on, predict, and optionally compare
//! with the exact law of a known service distribution.

use std::io::BufRead;
use std::path::Path;

use crate::dataset::features_from_moments;
use crate::error::{Error, Result};
use crate::metrics::{self, STANDARD_PERCENTILES};
use crate::mlp::MlpModel;
use crate::phtype::PhaseType;
use crate::qbd::{QbdSolution, QueueInstance};

/// Reads one service time per line; blank lines are ignored.
pub fn read_service_sample<R: BufRead>(input: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let v: f64 = text
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad number {text:?}", i + 1)))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositiveSample { line: i + 1 });
        }
        out.push(v);
    }
    Ok(out)
}

pub fn load_service_sample(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    read_service_sample(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Unbiased raw-moment estimates `mean(x^k)` for `k = 1..=k_max`.
pub fn estimate_moments(sample: &[f64], k_max: usize) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::InvalidConfig("empty service sample".into()));
    }
    if let Some(i) = sample.iter().position(|x| !(*x > 0.0)) {
        return Err(Error::NonPositiveSample { line: i + 1 });
    }
    let n = sample.len() as f64;
    Ok((1..=k_max as i32)
        .map(|k| sample.iter().map(|x| x.powi(k)).sum::<f64>() / n)
        .collect())
}

/// Raw model features for arrival rate `lambda` and raw moments of any scale:
/// `lambda' = lambda m1` and `m_k' = m_k / m1^k`.
pub fn unit_mean_features(lambda: f64, raw_moments: &[f64]) -> Vec<f64> {
    let mu = raw_moments[0];
    let scaled: Vec<f64> = raw_moments
        .iter()
        .enumerate()
        .map(|(k, m)| m / mu.powi(k as i32 + 1))
        .collect();
    features_from_moments(lambda * mu, &scaled)
}

/// Predicted queue-length law from `lambda` and raw moments `m1..mn`.
pub fn predict_from_moments(model: &MlpModel, lambda: f64, raw_moments: &[f64]) -> Result<Vec<f64>> {
    if raw_moments.len() != model.n_moments {
        return Err(Error::DimensionMismatch(format!(
            "model uses {} moments, got {}",
            model.n_moments,
            raw_moments.len()
        )));
    }
    model.predict_raw(&unit_mean_features(lambda, raw_moments))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudyReport {
    pub estimated_moments: Vec<f64>,
    pub scaled_lambda: f64,
    pub prediction: Vec<f64>,
    pub truth: Option<TruthComparison>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthComparison {
    pub exact: Vec<f64>,
    pub exact_tail_mass: f64,
    pub metric1: f64,
    /// `(level, relative percentile error)`; `None` where the level lies
    /// beyond the truncated mass.
    pub metric2: Vec<(f64, Option<f64>)>,
}

pub fn case_study(
    sample: &[f64],
    lambda: f64,
    model: &MlpModel,
    truth: Option<&PhaseType>,
) -> Result<CaseStudyReport> {
    let estimated = estimate_moments(sample, model.n_moments)?;
    let prediction = predict_from_moments(model, lambda, &estimated)?;
    let truth = truth
        .map(|ph| -> Result<TruthComparison> {
            let inst = QueueInstance::new(lambda, ph.clone())?;
            let exact = QbdSolution::solve(&inst)?.distribution(model.output_dim())?;
            let metric1 = metrics::l1_distance(&exact.probs, &prediction);
            let metric2 = STANDARD_PERCENTILES
                .iter()
                .map(|&p| {
                    let e = metrics::percentile_error(&exact.probs, &prediction, p, true)
                        .ok()
                        .map(|(e, _)| e);
                    (p, e)
                })
                .collect();
            Ok(TruthComparison {
                exact: exact.probs,
                exact_tail_mass: exact.tail_mass,
                metric1,
                metric2,
            })
        })
        .transpose()?;
    Ok(CaseStudyReport {
        scaled_lambda: lambda * estimated[0],
        estimated_moments: estimated,
        prediction,
        truth,
    })
}
