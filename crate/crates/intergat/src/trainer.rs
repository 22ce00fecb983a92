//! End-to-end optimization: composite loss (MSE + L1 interaction penalty),
//! Adam with coupled weight decay, mini-batch training with early stopping on
//! validation MAE, per-phase wall-clock instrumentation, and the evaluation
//! metric suite (RMSE, MAE, Frobenius accuracy, R², explained variance).

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graphio::WindowedDataset;
use crate::model::{Model, ModelError, SpatialEncoder};
use crate::numkern::{GradStore, Mat};
use crate::spectra::sparsity_fraction;
use crate::temporal::TeacherForcingPolicy;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("loss became non-finite at epoch {epoch}, batch {batch}; first non-finite tensor: {tensor}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        tensor: String,
    },
    #[error("prediction/target shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("no training windows")]
    NoTrainWindows,
}

/// Mean squared error over a batch of multi-step predictions:
/// (1 / B·N·T·F) Σ ‖pred − truth‖².
pub fn mse_loss(preds: &[Vec<Mat>], targets: &[Vec<Mat>]) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p_seq, t_seq) in preds.iter().zip(targets) {
        for (p, t) in p_seq.iter().zip(t_seq) {
            if p.shape() != t.shape() {
                return Err(TrainError::ShapeMismatch(p.rows(), p.cols(), t.rows(), t.cols()));
            }
            for (a, b) in p.data().iter().zip(t.data()) {
                sum += (a - b) * (a - b);
                count += 1;
            }
        }
    }
    Ok(sum / count.max(1) as f64)
}

/// λ · Σ_heads Σ_ij |I_ij| over the raw interaction parameters.
pub fn l1_penalty(model: &Model, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    if let SpatialEncoder::Inter(layer) = &model.spatial {
        for m in layer.raw_interactions() {
            total += m.abs_sum();
        }
    }
    lambda * total
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lambda_sparse: f64,
    pub patience: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            batch_size: 32,
            max_epochs: 100,
            lambda_sparse: 1e-4,
            patience: 10,
        }
    }
}

/// Adam with per-parameter first/second moment estimates and coupled L2
/// weight decay (added to the gradient).
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    lr: f64,
    weight_decay: f64,
    m: HashMap<String, Mat>,
    v: HashMap<String, Mat>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
            weight_decay,
            m: HashMap::new(),
            v: HashMap::new(),
            t: 0,
        }
    }

    /// Advance the shared step counter; call once per optimizer step, before
    /// the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Update one named parameter in place.
    pub fn update(&mut self, name: &str, param: &mut Mat, grad: &Mat) {
        let m = self
            .m
            .entry(name.to_string())
            .or_insert_with(|| Mat::zeros(param.rows(), param.cols()));
        let v = self
            .v
            .entry(name.to_string())
            .or_insert_with(|| Mat::zeros(param.rows(), param.cols()));
        let t = self.t as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..param.data().len() {
            let g = grad.data()[i] + self.weight_decay * param.data()[i];
            let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
            let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            param.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    /// One optimizer step over every model parameter with a recorded
    /// gradient. Parameters without gradients (e.g. fixed supports) are
    /// untouched.
    pub fn step(&mut self, model: &mut Model, grads: &GradStore) {
        self.begin_step();
        // split borrows: collect names first, then walk params
        let mut updates: Vec<(String, Mat)> = Vec::new();
        for (name, g) in grads.iter() {
            updates.push((name.clone(), g.clone()));
        }
        updates.sort_by(|a, b| a.0.cmp(&b.0));
        let map: HashMap<&str, &Mat> = updates.iter().map(|(n, g)| (n.as_str(), g)).collect();
        let mut this = std::mem::replace(self, Adam::new(0.0, 0.0));
        model.visit_params_mut(&mut |name, param| {
            if let Some(g) = map.get(name.as_str()) {
                this.update(&name, param, g);
            }
        });
        *self = this;
    }
}

/// Per-epoch loss breakdown; total = task + sparse exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub task_loss: f64,
    pub sparse_loss: f64,
    pub total_loss: f64,
    pub val_mae: f64,
    pub sparsity_per_head: Vec<f64>,
    pub frobenius_per_head: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RuntimeReport {
    pub epochs_run: usize,
    pub mean_epoch_secs: f64,
    pub total_training_minutes: f64,
    pub mean_forward_secs: f64,
    pub mean_backward_secs: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    pub accuracy: f64,
    pub r_squared: f64,
    pub explained_variance: f64,
}

/// Metric suite on flat de-normalized vectors.
pub fn compute_metrics(truth: &[f64], pred: &[f64]) -> MetricReport {
    assert_eq!(truth.len(), pred.len());
    let n = truth.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut frob_diff = 0.0;
    let mut frob_truth = 0.0;
    for (y, p) in truth.iter().zip(pred) {
        let d = y - p;
        sq += d * d;
        abs += d.abs();
        frob_diff += d * d;
        frob_truth += y * y;
    }
    let mean_y = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean_y).powi(2)).sum();
    let resid: Vec<f64> = truth.iter().zip(pred).map(|(y, p)| y - p).collect();
    let mean_r = resid.iter().sum::<f64>() / n;
    let var_r: f64 = resid.iter().map(|r| (r - mean_r).powi(2)).sum::<f64>() / n;
    let var_y = ss_tot / n;
    MetricReport {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        accuracy: 1.0 - (frob_diff.sqrt() / frob_truth.sqrt()),
        r_squared: 1.0 - sq / ss_tot,
        explained_variance: 1.0 - var_r / var_y,
    }
}

pub struct TrainOutcome {
    pub losses: Vec<LossReport>,
    pub runtime: RuntimeReport,
    pub best_val_mae: f64,
    pub stopped_early: bool,
}

/// Hook invoked after each optimizer step; used by the structural-invariant
/// checks and progress reporting.
pub type StepObserver<'a> = &'a mut dyn FnMut(&Model, usize, usize);

fn per_head_stats(model: &Model) -> (Vec<f64>, Vec<f64>) {
    if let SpatialEncoder::Inter(layer) = &model.spatial {
        let syms = layer.symmetrized_raw();
        let sparsity = syms.iter().map(|m| sparsity_fraction(m, 1e-4)).collect();
        let frob = syms.iter().map(|m| m.frobenius_norm()).collect();
        (sparsity, frob)
    } else {
        (Vec::new(), Vec::new())
    }
}

/// De-normalized MAE of eval-mode predictions over a window set.
fn subset_mae(model: &Model, data: &WindowedDataset, windows: &[crate::graphio::Window], rng: &mut ChaCha8Rng) -> Result<f64, TrainError> {
    let mut abs = 0.0;
    let mut count = 0usize;
    for w in windows {
        let inputs = data.inputs(w);
        let targets = data.targets(w);
        let preds = model.predict(&inputs, data.horizon, rng)?;
        for (p, t) in preds.iter().zip(&targets) {
            for (a, b) in p.data().iter().zip(t.data()) {
                abs += (data.norm.invert(*a) - data.norm.invert(*b)).abs();
                count += 1;
            }
        }
    }
    Ok(abs / count.max(1) as f64)
}

/// Mini-batch training loop. The seed fixes initialization-independent
/// randomness: batch order, dropout, and teacher-forcing draws.
pub fn train(
    model: &mut Model,
    data: &WindowedDataset,
    optim: &OptimConfig,
    tf_policy: TeacherForcingPolicy,
    seed: u64,
    mut observer: Option<StepObserver<'_>>,
) -> Result<TrainOutcome, TrainError> {
    if data.train.is_empty() {
        return Err(TrainError::NoTrainWindows);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e);
    // trailing 10% of the train windows (at least one) for validation
    let n_val = (data.train.len() / 10).max(1).min(data.train.len() - 1).max(1);
    let split = data.train.len().saturating_sub(n_val);
    let (fit_windows, val_windows) = data.train.split_at(split.max(1).min(data.train.len() - 1));

    let mut adam = Adam::new(optim.learning_rate, optim.weight_decay);
    let mut losses = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_model = model.clone();
    let mut patience_left = optim.patience;
    let mut stopped_early = false;

    let mut epoch_secs = Vec::new();
    let mut forward_secs = 0.0;
    let mut backward_secs = 0.0;
    let mut phase_batches = 0usize;
    let train_start = Instant::now();

    for epoch in 0..optim.max_epochs {
        let epoch_start = Instant::now();
        let mut order: Vec<usize> = (0..fit_windows.len()).collect();
        order.shuffle(&mut rng);
        let mut task_sum = 0.0;
        let mut n_batches = 0usize;
        for (batch_idx, chunk) in order.chunks(optim.batch_size).enumerate() {
            let mut grads = GradStore::new();
            let mut batch_loss = 0.0;
            let b = chunk.len();
            for &wi in chunk {
                let w = &fit_windows[wi];
                let inputs = data.inputs(w);
                let targets = data.targets(w);
                let forced = tf_policy.draw(epoch, data.horizon.saturating_sub(1), &mut rng);
                let t0 = Instant::now();
                let (preds, record) = model.run(
                    &inputs,
                    data.horizon,
                    Some(&targets),
                    &forced,
                    true,
                    &mut rng,
                )?;
                forward_secs += t0.elapsed().as_secs_f64();
                let denom = (b * preds.len() * preds[0].data().len()) as f64;
                let mut d_preds = Vec::with_capacity(preds.len());
                for (p, t) in preds.iter().zip(&targets) {
                    for (a, bt) in p.data().iter().zip(t.data()) {
                        let d = a - bt;
                        batch_loss += d * d / denom;
                    }
                    d_preds.push(p.sub(t).scale(2.0 / denom));
                }
                let t1 = Instant::now();
                grads.merge(model.backward(&record, &d_preds));
                backward_secs += t1.elapsed().as_secs_f64();
            }
            if !batch_loss.is_finite() {
                let tensor = model
                    .first_non_finite_param()
                    .or_else(|| grads.first_non_finite().cloned())
                    .unwrap_or_else(|| "batch loss".to_string());
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    tensor,
                });
            }
            // L1 subgradient on the raw interaction parameters (0 at 0)
            if optim.lambda_sparse > 0.0 {
                for name in model.interaction_param_names() {
                    let mut sign = None;
                    model.visit_params(&mut |n, m| {
                        if n == name {
                            sign = Some(m.map(|x| optim.lambda_sparse * x.signum()));
                        }
                    });
                    if let Some(s) = sign {
                        grads.accumulate(&name, s);
                    }
                }
            }
            adam.step(model, &grads);
            task_sum += batch_loss;
            n_batches += 1;
            phase_batches += 1;
            if let Some(obs) = observer.as_mut() {
                obs(model, epoch, batch_idx);
            }
        }

        let val_mae = subset_mae(model, data, val_windows, &mut rng)?;
        let (sparsity, frob) = per_head_stats(model);
        let task_loss = task_sum / n_batches.max(1) as f64;
        let sparse_loss = l1_penalty(model, optim.lambda_sparse);
        losses.push(LossReport {
            epoch,
            task_loss,
            sparse_loss,
            total_loss: task_loss + sparse_loss,
            val_mae,
            sparsity_per_head: sparsity,
            frobenius_per_head: frob,
        });
        epoch_secs.push(epoch_start.elapsed().as_secs_f64());

        if val_mae < best_val {
            best_val = val_mae;
            best_model = model.clone();
            patience_left = optim.patience;
        } else {
            patience_left = patience_left.saturating_sub(1);
            if patience_left == 0 {
                stopped_early = true;
                break;
            }
        }
    }

    *model = best_model;
    let epochs_run = epoch_secs.len();
    let total = train_start.elapsed().as_secs_f64();
    let _ = phase_batches;
    Ok(TrainOutcome {
        losses,
        runtime: RuntimeReport {
            epochs_run,
            mean_epoch_secs: epoch_secs.iter().sum::<f64>() / epochs_run.max(1) as f64,
            total_training_minutes: total / 60.0,
            mean_forward_secs: forward_secs / epochs_run.max(1) as f64,
            mean_backward_secs: backward_secs / epochs_run.max(1) as f64,
        },
        best_val_mae: best_val,
        stopped_early,
    })
}

/// Evaluate on the test windows; predictions and truth are de-normalized
/// before metric computation, jointly over the full horizon block.
pub fn evaluate(model: &Model, data: &WindowedDataset, seed: u64) -> Result<MetricReport, TrainError> {
    if data.test.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6576_616c);
    let (truth, pred) = collect_denorm(model, data, &data.test, &mut rng)?;
    Ok(compute_metrics(&truth, &pred))
}

/// Per-horizon-step metric breakdown.
pub fn evaluate_per_step(model: &Model, data: &WindowedDataset, seed: u64) -> Result<Vec<MetricReport>, TrainError> {
    if data.test.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6576_616c);
    let mut per_step: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); data.horizon];
    for w in &data.test {
        let inputs = data.inputs(w);
        let targets = data.targets(w);
        let preds = model.predict(&inputs, data.horizon, &mut rng)?;
        for (step, (p, t)) in preds.iter().zip(&targets).enumerate() {
            for (a, b) in p.data().iter().zip(t.data()) {
                per_step[step].1.push(data.norm.invert(*a));
                per_step[step].0.push(data.norm.invert(*b));
            }
        }
    }
    Ok(per_step
        .iter()
        .map(|(truth, pred)| compute_metrics(truth, pred))
        .collect())
}

fn collect_denorm(
    model: &Model,
    data: &WindowedDataset,
    windows: &[crate::graphio::Window],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for w in windows {
        let inputs = data.inputs(w);
        let targets = data.targets(w);
        let preds = model.predict(&inputs, data.horizon, rng)?;
        for (p, t) in preds.iter().zip(&targets) {
            for (a, b) in p.data().iter().zip(t.data()) {
                pred.push(data.norm.invert(*a));
                truth.push(data.norm.invert(*b));
            }
        }
    }
    Ok((truth, pred))
}

/// Untrained-baseline MAE used by sanity checks: evaluate the model as-is.
pub fn test_mae(model: &Model, data: &WindowedDataset, seed: u64) -> Result<f64, TrainError> {
    Ok(evaluate(model, data, seed)?.mae)
}
