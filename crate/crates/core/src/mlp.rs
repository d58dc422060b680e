//! Feedforward surrogate: ReLU hidden layers, softmax output, trained with
//! Adam on a loss that adds the per-sample worst-entry error to the L1 error.

use std::io::Write;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureStats};
use crate::error::{Error, Result};
use crate::metrics;
use crate::random::{seeded, stream};

pub const HIDDEN_LAYERS: [usize; 5] = [30, 40, 50, 60, 60];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, z) in out.iter_mut().enumerate() {
            *z = self.biases[o] + dot(self.row(o), x);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A trained (or freshly initialized) network with its input standardizer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub feature_stats: FeatureStats,
    pub n_moments: usize,
}

impl MlpModel {
    /// He-normal weights, zero biases.
    pub fn new(layer_dims: &[usize], feature_stats: FeatureStats, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidConfig("need at least input and output dims".into()));
        }
        if feature_stats.dim() != layer_dims[0] {
            return Err(Error::DimensionMismatch(format!(
                "standardizer has {} features, input layer {}",
                feature_stats.dim(),
                layer_dims[0]
            )));
        }
        let mut rng = seeded(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let mut layer = Layer::zeros(w[0], w[1]);
                let scale = (2.0 / w[0] as f64).sqrt();
                for x in layer.weights.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    *x = g * scale;
                }
                layer
            })
            .collect();
        Ok(Self {
            layers,
            n_moments: layer_dims[0],
            feature_stats,
        })
    }

    /// The standard architecture for `n_moments` inputs and `levels` outputs.
    pub fn standard(n_moments: usize, levels: usize, stats: FeatureStats, seed: u64) -> Result<Self> {
        let mut dims = vec![n_moments];
        dims.extend(HIDDEN_LAYERS);
        dims.push(levels);
        Self::new(&dims, stats, seed)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Probability vector for already-standardized features.
    pub fn forward(&self, standardized: &[f64]) -> Result<Vec<f64>> {
        if standardized.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} features, got {}",
                self.input_dim(),
                standardized.len()
            )));
        }
        let mut x = standardized.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.outputs];
            layer.affine(&x, &mut z);
            if i < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                softmax_in_place(&mut z);
            }
            x = z;
        }
        Ok(x)
    }

    /// Standardizes raw features (`lambda, ln m2, ..`) and runs the network.
    pub fn predict_raw(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.forward(&self.feature_stats.apply(raw)?)
    }

    pub fn to_file_format(&self) -> ModelFile {
        ModelFile {
            version: 1,
            n_moments: self.n_moments,
            layer_dims: self.layer_dims(),
            weights: self
                .layers
                .iter()
                .map(|l| l.weights.chunks(l.inputs).map(<[f64]>::to_vec).collect())
                .collect(),
            biases: self.layers.iter().map(|l| l.biases.clone()).collect(),
            feature_mean: self.feature_stats.mean.clone(),
            feature_std: self.feature_stats.std.clone(),
        }
    }

    pub fn from_file_format(file: ModelFile) -> Result<Self> {
        if file.version != 1 {
            return Err(Error::Parse(format!("unsupported model version {}", file.version)));
        }
        let dims = &file.layer_dims;
        if dims.len() < 2
            || file.weights.len() != dims.len() - 1
            || file.biases.len() != dims.len() - 1
            || dims[0] != file.n_moments
            || file.feature_mean.len() != dims[0]
            || file.feature_std.len() != dims[0]
        {
            return Err(Error::DimensionMismatch("inconsistent model file".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, w) in dims.windows(2).enumerate() {
            let rows = &file.weights[k];
            if rows.len() != w[1] || rows.iter().any(|r| r.len() != w[0]) || file.biases[k].len() != w[1] {
                return Err(Error::DimensionMismatch(format!("layer {k} has wrong shape")));
            }
            layers.push(Layer {
                inputs: w[0],
                outputs: w[1],
                weights: rows.iter().flatten().copied().collect(),
                biases: file.biases[k].clone(),
            });
        }
        if file.feature_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::DegenerateFeature {
                index: file.feature_std.iter().position(|s| !(*s > 0.0)).unwrap_or(0),
            });
        }
        Ok(Self {
            layers,
            feature_stats: FeatureStats {
                mean: file.feature_mean,
                std: file.feature_std,
            },
            n_moments: file.n_moments,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, &self.to_file_format())?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_file_format(serde_json::from_reader(f)?)
    }
}

/// On-disk model layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub n_moments: usize,
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

pub fn softmax_in_place(z: &mut [f64]) {
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - top).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

/// Mean over rows of `sum_j |y - yhat| + max_j |y - yhat|`.
pub fn loss(targets: &[Vec<f64>], predictions: &[Vec<f64>]) -> Result<f64> {
    if targets.len() != predictions.len() || targets.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} target rows vs {} prediction rows",
            targets.len(),
            predictions.len()
        )));
    }
    let mut total = 0.0;
    for (y, yhat) in targets.iter().zip(predictions) {
        if y.len() != yhat.len() {
            return Err(Error::DimensionMismatch("row length differs".into()));
        }
        let (sum, max) = y
            .iter()
            .zip(yhat)
            .map(|(a, b)| (a - b).abs())
            .fold((0.0, 0.0_f64), |(s, m), d| (s + d, m.max(d)));
        total += sum + max;
    }
    Ok(total / targets.len() as f64)
}

/// Subgradient of the per-sample loss with respect to the prediction, before
/// the `1/B` factor. `sign(0) = 0`; the max term picks the lowest index on ties.
fn loss_gradient(y: &[f64], yhat: &[f64], grad: &mut [f64]) {
    let mut arg = 0;
    let mut best = f64::NEG_INFINITY;
    for (j, ((g, a), b)) in grad.iter_mut().zip(y).zip(yhat).enumerate() {
        let d = b - a;
        *g = sign(d);
        if d.abs() > best {
            best = d.abs();
            arg = j;
        }
    }
    grad[arg] += sign(yhat[arg] - y[arg]);
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Parameter gradients with the same shapes as the model layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().flatten().for_each(|g| *g = 0.0);
        self.biases.iter_mut().flatten().for_each(|g| *g = 0.0);
    }
}

/// Reusable buffers for one forward/backward pass.
struct Workspace {
    // activations[0] is the input; activations[k + 1] the output of layer k.
    activations: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    grad_out: Vec<f64>,
}

impl Workspace {
    fn new(model: &MlpModel) -> Self {
        let dims = model.layer_dims();
        Self {
            activations: dims.iter().map(|&d| vec![0.0; d]).collect(),
            delta: dims.iter().map(|&d| vec![0.0; d]).collect(),
            grad_out: vec![0.0; model.output_dim()],
        }
    }
}

/// Forward then backward for one sample; accumulates `scale * dLoss/dParam`.
/// Returns the sample's loss.
fn accumulate_sample(
    model: &MlpModel,
    x: &[f64],
    y: &[f64],
    scale: f64,
    ws: &mut Workspace,
    grads: &mut Gradients,
) -> f64 {
    let n_layers = model.layers.len();
    ws.activations[0].copy_from_slice(x);
    for (k, layer) in model.layers.iter().enumerate() {
        let (before, after) = ws.activations.split_at_mut(k + 1);
        let out = &mut after[0];
        layer.affine(&before[k], out);
        if k + 1 < n_layers {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        } else {
            softmax_in_place(out);
        }
    }

    let yhat = &ws.activations[n_layers];
    let (sum, max) = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b).abs())
        .fold((0.0, 0.0_f64), |(s, m), d| (s + d, m.max(d)));
    loss_gradient(y, yhat, &mut ws.grad_out);

    // Softmax Jacobian: dz_k = p_k (g_k - sum_j g_j p_j).
    let inner = dot(&ws.grad_out, yhat);
    for ((d, g), p) in ws.delta[n_layers].iter_mut().zip(&ws.grad_out).zip(yhat) {
        *d = scale * p * (g - inner);
    }

    for k in (0..n_layers).rev() {
        let layer = &model.layers[k];
        let (lower, upper) = ws.delta.split_at_mut(k + 1);
        let delta_out = &upper[0];
        let input = &ws.activations[k];
        let gw = &mut grads.weights[k];
        let gb = &mut grads.biases[k];
        for (o, &d) in delta_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[o] += d;
            for (g, a) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                *g += d * a;
            }
        }
        if k > 0 {
            let delta_in = &mut lower[k];
            delta_in.iter_mut().for_each(|v| *v = 0.0);
            for (o, &d) in delta_out.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (v, w) in delta_in.iter_mut().zip(layer.row(o)) {
                    *v += d * w;
                }
            }
            // ReLU mask: the stored activation is zero exactly where the unit is off.
            for (v, a) in delta_in.iter_mut().zip(&ws.activations[k]) {
                if *a <= 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
    sum + max
}

/// Gradient of the batch loss (mean over the batch) for standardized inputs.
pub fn backward(model: &MlpModel, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Gradients> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::DimensionMismatch("batch inputs and targets differ".into()));
    }
    let mut grads = Gradients::zeros_like(model);
    let mut ws = Workspace::new(model);
    let scale = 1.0 / inputs.len() as f64;
    for (x, y) in inputs.iter().zip(targets) {
        if x.len() != model.input_dim() || y.len() != model.output_dim() {
            return Err(Error::DimensionMismatch("sample shape does not match model".into()));
        }
        accumulate_sample(model, x, y, scale, &mut ws, &mut grads);
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    /// L2 penalty coefficient added to the gradient before the Adam moments.
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop once validation Metric1 has not improved for this many epochs.
    pub patience: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 300,
            lr0: 0.01,
            lr_decay: 0.97,
            weight_decay: 1e-5,
            seed: 42,
            patience: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.lr0 >= 0.0) {
            return Err(Error::InvalidConfig("learning rate must be nonnegative".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig("lr decay must lie in (0, 1]".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight decay must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_metric1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation Metric1.
    pub model: MlpModel,
    pub best_epoch: usize,
    pub best_val_metric1: f64,
    pub log: Vec<EpochLog>,
}

struct Adam {
    m: Gradients,
    v: Gradients,
    step: i32,
}

impl Adam {
    fn new(model: &MlpModel) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (k, layer) in model.layers.iter_mut().enumerate() {
            let params = [
                (&mut layer.weights, &grads.weights[k], &mut self.m.weights[k], &mut self.v.weights[k]),
                (&mut layer.biases, &grads.biases[k], &mut self.m.biases[k], &mut self.v.biases[k]),
            ];
            for (p, g, m, v) in params {
                for i in 0..p.len() {
                    let gi = g[i] + cfg.weight_decay * p[i];
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                }
            }
        }
    }
}

/// Predictions for many standardized rows.
pub fn predict_all(model: &MlpModel, standardized: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    standardized.iter().map(|x| model.forward(x)).collect()
}

/// Trains the standard architecture. The standardizer is fit on `train`.
pub fn train(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.n_moments != val.n_moments || train.levels != val.levels {
        return Err(Error::DatasetMismatch(format!(
            "train (n={}, l={}) vs val (n={}, l={})",
            train.n_moments, train.levels, val.n_moments, val.levels
        )));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::DatasetMismatch("empty training or validation split".into()));
    }
    let stats = FeatureStats::fit(&train.features())?;
    let model = MlpModel::standard(train.n_moments, train.levels, stats, cfg.seed)?;
    train_model(model, train, val, cfg)
}

/// Trains an existing model in place of a fresh one (its standardizer is kept).
pub fn train_model(
    mut model: MlpModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let stats = model.feature_stats.clone();
    let x_train = stats.apply_all(&train.features())?;
    let y_train = train.targets();
    let x_val = stats.apply_all(&val.features())?;
    let y_val = val.targets();
    if y_train.iter().chain(&y_val).any(|y| y.len() != model.output_dim()) {
        return Err(Error::DatasetMismatch("target length differs from model output".into()));
    }

    let mut adam = Adam::new(&model);
    let mut grads = Gradients::zeros_like(&model);
    let mut ws = Workspace::new(&model);
    let mut order: Vec<usize> = (0..x_train.len()).collect();
    let mut best = (f64::INFINITY, 0, model.clone());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.lr0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(cfg.seed, epoch as u64 + 1));
        let mut loss_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                loss_total += accumulate_sample(&model, &x_train[i], &y_train[i], scale, &mut ws, &mut grads);
            }
            adam.update(&mut model, &grads, lr, cfg);
        }
        let val_pred = predict_all(&model, &x_val)?;
        let val_metric1 = metrics::metric1(&y_val, &val_pred)?;
        let entry = EpochLog {
            epoch,
            learning_rate: lr,
            train_loss: loss_total / x_train.len() as f64,
            val_metric1,
        };
        info!(
            "epoch {:>3} lr {:.3e} train loss {:.6} val metric1 {:.6}",
            entry.epoch, entry.learning_rate, entry.train_loss, entry.val_metric1
        );
        log.push(entry);
        if val_metric1 < best.0 {
            best = (val_metric1, epoch, model.clone());
        } else if let Some(p) = cfg.patience {
            if epoch - best.1 >= p {
                break;
            }
        }
        lr *= cfg.lr_decay;
    }

    Ok(TrainOutcome {
        model: best.2,
        best_epoch: best.1,
        best_val_metric1: best.0,
        log,
    })
}

/// Best validation Metric1 per moment count, all from one wide dataset pair.
pub fn moment_sweep(
    train: &Dataset,
    val: &Dataset,
    moment_counts: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<(usize, f64)>> {
    moment_counts
        .iter()
        .map(|&n| {
            let outcome = self::train(&train.with_moments(n)?, &val.with_moments(n)?, cfg)?;
            Ok((n, outcome.best_val_metric1))
        })
        .collect()
}

/// Smallest moment count after which Metric1 improves by less than `tol`.
pub fn plateau_moment_count(table: &[(usize, f64)], tol: f64) -> Option<usize> {
    table
        .windows(2)
        .find(|w| w[0].1 - w[1].1 < tol)
        .map(|w| w[0].0)
}
