//! Distribution-level error metrics and percentile inversion.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// The six percentile levels reported throughout.
pub const STANDARD_PERCENTILES: [f64; 6] = [0.25, 0.5, 0.75, 0.9, 0.99, 0.999];

fn check_shapes(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} true rows vs {} predicted rows",
            truth.len(),
            pred.len()
        )));
    }
    if let Some(i) = truth.iter().zip(pred).position(|(a, b)| a.len() != b.len()) {
        return Err(Error::DimensionMismatch(format!("row {i} lengths differ")));
    }
    Ok(())
}

/// L1 distance between two probability vectors.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Per-row L1 distances.
pub fn metric1_rows(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_shapes(truth, pred)?;
    Ok(truth.iter().zip(pred).map(|(a, b)| l1_distance(a, b)).collect())
}

/// Mean over rows of the L1 distance.
pub fn metric1(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<f64> {
    let rows = metric1_rows(truth, pred)?;
    if rows.is_empty() {
        return Err(Error::DimensionMismatch("no rows".into()));
    }
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// Smallest `k` with `P(N <= k) >= p`.
pub fn percentile_inverse(dist: &[f64], p: f64) -> Result<usize> {
    let mut cdf = 0.0;
    for (k, q) in dist.iter().enumerate() {
        cdf += q;
        if cdf >= p {
            return Ok(k);
        }
    }
    Err(Error::PercentileBeyondTruncation { p, covered: cdf })
}

/// Relative percentile error of one pair, and whether the zero-denominator
/// guard was used.
pub fn percentile_error(truth: &[f64], pred: &[f64], p: f64, absolute: bool) -> Result<(f64, bool)> {
    let t = percentile_inverse(truth, p)? as f64;
    let h = percentile_inverse(pred, p)? as f64;
    let guarded = t == 0.0;
    let denom = if guarded { 1.0 } else { t };
    let diff = if absolute { (t - h).abs() } else { t - h };
    Ok((diff / denom, guarded))
}

/// Mean relative percentile error at level `p` (absolute variant unless `signed`).
pub fn metric2(truth: &[Vec<f64>], pred: &[Vec<f64>], p: f64) -> Result<f64> {
    metric2_with(truth, pred, p, false)
}

pub fn metric2_with(truth: &[Vec<f64>], pred: &[Vec<f64>], p: f64, signed: bool) -> Result<f64> {
    check_shapes(truth, pred)?;
    if truth.is_empty() {
        return Err(Error::DimensionMismatch("no rows".into()));
    }
    let mut total = 0.0;
    for (a, b) in truth.iter().zip(pred) {
        total += percentile_error(a, b, p, !signed)?.0;
    }
    Ok(total / truth.len() as f64)
}

/// Nearest-rank percentile of a sample (`q` in [0, 1]).
pub fn sample_percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Metric2 at one level, tolerant of rows whose true or predicted law does
/// not reach the level within the covered mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric2Entry {
    pub p: f64,
    pub value: f64,
    /// Rows that entered the mean.
    pub rows: usize,
    /// Rows whose true percentile was 0 (denominator replaced by 1).
    pub guarded_rows: usize,
    /// Rows skipped because a percentile lay beyond the truncation.
    pub skipped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric1_mean: f64,
    /// `(percentile level, per-sample Metric1 at that level)`.
    pub metric1_percentiles: Vec<(f64, f64)>,
    pub metric2: Vec<Metric2Entry>,
    pub per_sample_metric1: Vec<f64>,
}

impl EvalReport {
    pub fn build(truth: &[Vec<f64>], pred: &[Vec<f64>], percentiles: &[f64]) -> Result<Self> {
        let per_sample = metric1_rows(truth, pred)?;
        if per_sample.is_empty() {
            return Err(Error::DimensionMismatch("no rows".into()));
        }
        let metric1_mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        let metric1_percentiles = percentiles
            .iter()
            .map(|&p| (p, sample_percentile(&per_sample, p)))
            .collect();
        let metric2 = percentiles
            .iter()
            .map(|&p| {
                let mut entry = Metric2Entry {
                    p,
                    value: 0.0,
                    rows: 0,
                    guarded_rows: 0,
                    skipped_rows: 0,
                };
                let mut total = 0.0;
                for (a, b) in truth.iter().zip(pred) {
                    match percentile_error(a, b, p, true) {
                        Ok((e, guarded)) => {
                            total += e;
                            entry.rows += 1;
                            entry.guarded_rows += usize::from(guarded);
                        }
                        Err(_) => entry.skipped_rows += 1,
                    }
                }
                entry.value = if entry.rows > 0 { total / entry.rows as f64 } else { f64::NAN };
                entry
            })
            .collect();
        Ok(Self {
            metric1_mean,
            metric1_percentiles,
            metric2,
            per_sample_metric1: per_sample,
        })
    }

    /// Text tables laid out by percentile column.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "metric1_mean {:.6e}", self.metric1_mean);
        let _ = writeln!(out, "rows {}", self.per_sample_metric1.len());
        out.push_str("\npercentile");
        for (p, _) in &self.metric1_percentiles {
            let _ = write!(out, "\t{}%", p * 100.0);
        }
        out.push_str("\nmetric1");
        for (_, v) in &self.metric1_percentiles {
            let _ = write!(out, "\t{v:.4e}");
        }
        out.push_str("\nmetric2");
        for e in &self.metric2 {
            let _ = write!(out, "\t{:.4e}", e.value);
        }
        out.push_str("\nmetric2_guarded_rows");
        for e in &self.metric2 {
            let _ = write!(out, "\t{}", e.guarded_rows);
        }
        out.push_str("\nmetric2_skipped_rows");
        for e in &self.metric2 {
            let _ = write!(out, "\t{}", e.skipped_rows);
        }
        out.push('\n');
        out
    }

    /// Histogram of per-sample Metric1 as `bin_lo,bin_hi,count` CSV.
    pub fn histogram_csv(&self, bins: usize) -> String {
        let max = self.per_sample_metric1.iter().copied().fold(0.0, f64::max);
        let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for v in &self.per_sample_metric1 {
            let b = ((v / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", i as f64 * width, (i + 1) as f64 * width, c);
        }
        out
    }
}
