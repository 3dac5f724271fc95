//! Loss heads, Adam, mini-batch training with early stopping, and grid search.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::gradients::{Engine, GradientPair, DEFAULT_BPTT_GUARD};
use crate::model::{predict, ModelParams, RnnSpec};
use crate::numerics::{all_finite, sigmoid, softplus, Rng};
use crate::parallel::{map_indexed, Execution};
use crate::{Error, Result};

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-4;

/// How the network output is scored against a scalar target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossHead {
    /// `y = 1`, squared error.
    PointMse,
    /// `y = 2`: `ŷ[0]` is the mean and `softplus(ŷ[1]) + sigma_floor` the
    /// standard deviation of a Gaussian.
    GaussianNll { sigma_floor: f64 },
}

impl LossHead {
    pub fn gaussian() -> Self {
        LossHead::GaussianNll {
            sigma_floor: DEFAULT_SIGMA_FLOOR,
        }
    }

    pub fn y_dim(&self) -> usize {
        match self {
            LossHead::PointMse => 1,
            LossHead::GaussianNll { .. } => 2,
        }
    }

    pub fn check(&self, spec: &RnnSpec) -> Result<()> {
        if spec.y_dim != self.y_dim() {
            return Err(Error::Dimension(format!(
                "{self:?} needs y_dim = {}, spec has {}",
                self.y_dim(),
                spec.y_dim
            )));
        }
        if let LossHead::GaussianNll { sigma_floor } = self {
            if !(*sigma_floor > 0.0) {
                return Err(Error::InvalidArgument(format!("sigma_floor {sigma_floor}")));
            }
        }
        Ok(())
    }

    pub fn loss_and_grad(&self, y_hat: &[f64], target: f64) -> (f64, Vec<f64>) {
        match *self {
            LossHead::PointMse => mse_loss(y_hat, target),
            LossHead::GaussianNll { sigma_floor } => gaussian_nll_loss(y_hat, target, sigma_floor),
        }
    }

    /// `(μ, σ)` of the predicted distribution; σ is 0 for the point head.
    pub fn mean_sigma(&self, y_hat: &[f64]) -> (f64, f64) {
        match *self {
            LossHead::PointMse => (y_hat[0], 0.0),
            LossHead::GaussianNll { sigma_floor } => (y_hat[0], softplus(y_hat[1]) + sigma_floor),
        }
    }
}

pub fn mse_loss(y_hat: &[f64], target: f64) -> (f64, Vec<f64>) {
    let e = y_hat[0] - target;
    (e * e, vec![2.0 * e])
}

/// `½ log(2πσ²) + (r − μ)² / (2σ²)` with `σ = softplus(ŷ[1]) + floor`.
pub fn gaussian_nll_loss(y_hat: &[f64], target: f64, sigma_floor: f64) -> (f64, Vec<f64>) {
    let mu = y_hat[0];
    let sigma = softplus(y_hat[1]) + sigma_floor;
    let e = target - mu;
    let s2 = sigma * sigma;
    let loss = 0.5 * (2.0 * std::f64::consts::PI * s2).ln() + e * e / (2.0 * s2);
    let d_mu = -e / s2;
    let d_sigma = 1.0 / sigma - e * e / (s2 * sigma);
    (loss, vec![d_mu, d_sigma * sigmoid(y_hat[1])])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub bptt_guard: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 1000,
            patience: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            bptt_guard: DEFAULT_BPTT_GUARD,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps {}", self.adam_eps));
        }
        Ok(())
    }
}

/// Zero-initialized first and second moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !all_finite(grads) {
        return Err(Error::NonFinite {
            step: state.step as usize,
            what: "gradient passed to Adam",
        });
    }
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    state.step += 1;
    let c1 = 1.0 - b1.powf(state.step as f64);
    let c2 = 1.0 - b2.powf(state.step as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
    }
    Ok(())
}

/// Indexed collection of many-to-one training sequences.
pub trait Windows: Sync {
    fn len(&self) -> usize;

    /// The input sequence `x(1..τ)` and the target for `ŷ(τ)`.
    fn window(&self, i: usize) -> (&[Vec<f64>], f64);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Owned windows, mostly for tests and small experiments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VecWindows {
    pub inputs: Vec<Vec<Vec<f64>>>,
    pub targets: Vec<f64>,
}

impl Windows for VecWindows {
    fn len(&self) -> usize {
        self.targets.len()
    }

    fn window(&self, i: usize) -> (&[Vec<f64>], f64) {
        (&self.inputs[i], self.targets[i])
    }
}

/// Mean loss over all windows; forward passes only.
pub fn evaluate_loss(
    params: &ModelParams,
    data: &dyn Windows,
    head: &LossHead,
    exec: Execution,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no windows to evaluate".into()));
    }
    let losses = map_indexed(data.len(), exec, |i| {
        let (xs, r) = data.window(i);
        predict(params, xs).map(|y| head.loss_and_grad(&y, r).0)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's mini-batches, evaluated with the parameters
    /// each batch saw.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_loss: f64,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "val_loss", "seconds"])?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.map(|v| v.to_string()).unwrap_or_default(),
                e.seconds.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Mini-batch training.
///
/// Mean gradient over the windows in `batch` and their individual losses.
/// Per-window gradients may be computed in parallel; they are summed in
/// batch order, so the result does not depend on `exec`.
pub fn batch_gradient(
    params: &ModelParams,
    data: &dyn Windows,
    batch: &[usize],
    engine: Engine,
    head: &LossHead,
    bptt_guard: usize,
    exec: Execution,
) -> Result<(GradientPair, Vec<f64>)> {
    let outs = map_indexed(batch.len(), exec, |k| {
        let (xs, r) = data.window(batch[k]);
        let loss = |y: &[f64]| head.loss_and_grad(y, r);
        engine.run(params, xs, &loss, bptt_guard)
    });
    let mut sum = GradientPair::zeros(params.spec());
    let mut losses = Vec::with_capacity(batch.len());
    for out in outs {
        let out = out?;
        losses.push(out.loss);
        sum.add_assign(&out.grads);
    }
    if !batch.is_empty() {
        sum.scale(1.0 / batch.len() as f64);
    }
    Ok((sum, losses))
}

/// Every epoch visits all windows once in a seeded random order. Per batch
/// the sequence gradients are computed (possibly in parallel), summed in batch
/// order and averaged before one Adam step. Training stops once the monitored
/// loss (validation if given, else training loss re-evaluated after the
/// epoch) has not improved for `patience` epochs; the best parameters seen
/// are returned.
pub fn train(
    model: &ModelParams,
    data: &dyn Windows,
    engine: Engine,
    head: &LossHead,
    config: &TrainConfig,
    validation: Option<&dyn Windows>,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    head.check(model.spec())?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training windows".into()));
    }
    if let Some(v) = validation {
        if v.is_empty() {
            return Err(Error::InvalidArgument("empty validation set".into()));
        }
    }
    let exec = config.execution;
    let mut rng = Rng::new(config.seed);
    let mut params = model.clone();
    let mut flat = params.pack().concat();
    let mut adam = AdamState::new(flat.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut window_loss = vec![0.0; data.len()];

    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_loss: f64::INFINITY,
    };
    let mut best = params.clone();
    let mut since_best = 0usize;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let diverged = || Error::TrainingDiverged {
                epoch,
                batch: bi + 1,
            };
            let (sum, losses) =
                match batch_gradient(&params, data, batch, engine, head, config.bptt_guard, exec) {
                    Ok(v) => v,
                    Err(Error::NonFinite { .. }) => return Err(diverged()),
                    Err(e) => return Err(e),
                };
            for (&i, l) in batch.iter().zip(losses) {
                window_loss[i] = l;
            }
            if !sum.is_finite() {
                return Err(diverged());
            }
            adam_step(&mut flat, &sum.concat(), &mut adam, config)?;
            if !all_finite(&flat) {
                return Err(diverged());
            }
            params.set_from_concat(&flat)?;
        }
        let train_loss = window_loss.iter().sum::<f64>() / data.len() as f64;
        let val_loss = match validation {
            Some(v) => Some(evaluate_loss(&params, v, head, exec)?),
            None => None,
        };
        let monitored = match val_loss {
            Some(v) => v,
            None => evaluate_loss(&params, data, head, exec)?,
        };
        if !monitored.is_finite() {
            return Err(Error::TrainingDiverged { epoch, batch: 0 });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        if monitored < history.best_loss {
            history.best_loss = monitored;
            history.best_epoch = epoch;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((best, history))
}

/// Hyperparameter grid; the default is 3 hidden sizes × 3 rates × 2 batch
/// sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grid {
    pub hidden_dims: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            hidden_dims: vec![5, 10, 15],
            learning_rates: vec![1e-4, 5e-4, 1e-3],
            batch_sizes: vec![32, 64],
        }
    }
}

impl Grid {
    pub fn len(&self) -> usize {
        self.hidden_dims.len() * self.learning_rates.len() * self.batch_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> Vec<(usize, f64, usize)> {
        let mut out = Vec::with_capacity(self.len());
        for &h in &self.hidden_dims {
            for &lr in &self.learning_rates {
                for &b in &self.batch_sizes {
                    out.push((h, lr, b));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub val_loss: Option<f64>,
    pub epochs: usize,
    /// Epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridSearchReport {
    /// Sorted by validation loss; failed cells last.
    pub rows: Vec<GridRow>,
}

impl GridSearchReport {
    pub fn best(&self) -> Option<&GridRow> {
        self.rows.first().filter(|r| r.val_loss.is_some())
    }
}

/// Trains one model per grid cell (each initialized from `config.seed`) and
/// ranks them by validation loss. A failing cell is recorded, not fatal.
pub fn grid_search(
    template: &RnnSpec,
    train_set: &dyn Windows,
    validation: &dyn Windows,
    engine: Engine,
    head: &LossHead,
    config: &TrainConfig,
    grid: &Grid,
) -> Result<GridSearchReport> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for (hidden_dim, learning_rate, batch_size) in grid.cells() {
        let started = Instant::now();
        let cell = TrainConfig {
            learning_rate,
            batch_size,
            ..*config
        };
        let result = RnnSpec::new(
            template.lag_set.clone(),
            template.x_dim,
            hidden_dim,
            template.y_dim,
        )
        .and_then(|spec| {
            let init = ModelParams::init(&spec, &mut Rng::new(config.seed));
            train(&init, train_set, engine, head, &cell, Some(validation))
        });
        let seconds = started.elapsed().as_secs_f64();
        rows.push(match result {
            Ok((_, hist)) => GridRow {
                hidden_dim,
                learning_rate,
                batch_size,
                val_loss: Some(hist.best_loss),
                epochs: hist.epochs.len(),
                best_epoch: hist.best_epoch,
                seconds,
                error: None,
            },
            Err(e) => GridRow {
                hidden_dim,
                learning_rate,
                batch_size,
                val_loss: None,
                epochs: 0,
                best_epoch: 0,
                seconds,
                error: Some(e.to_string()),
            },
        });
    }
    rows.sort_by(|a, b| match (a.val_loss, b.val_loss) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(GridSearchReport { rows })
}
