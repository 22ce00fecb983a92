//! Gated recurrent temporal model: a single GRU cell applied per node, a
//! linear readout, and the teacher-forcing schedule for multi-step decoding.
//! The sequence-to-sequence decode loop itself lives in [`crate::model`]
//! because each fed-back prediction is re-embedded through the spatial layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numkern::{sigmoid, tanh_mat, GradStore, Mat};

#[derive(Debug, thiserror::Error)]
pub enum TemporalError {
    #[error("input has {got} columns, cell expects {want}")]
    InputMismatch { got: usize, want: usize },
    #[error("hidden state has {got} columns, cell expects {want}")]
    HiddenMismatch { got: usize, want: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("teacher forcing requires ground truth of length {want}, got {got}")]
    MissingGroundTruth { want: usize, got: usize },
}

/// GRU gate weights. No bias terms by default; `with_bias` adds them for
/// parity experiments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GruCell {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_z: Mat,
    pub w_r: Mat,
    pub w_h: Mat,
    pub u_z: Mat,
    pub u_r: Mat,
    pub u_h: Mat,
    pub b_z: Option<Mat>,
    pub b_r: Option<Mat>,
    pub b_h: Option<Mat>,
}

/// Intermediates from one gru_step, consumed by the backward pass.
pub struct GruStepCache {
    pub input: Mat,
    pub h_prev: Mat,
    pub z: Mat,
    pub r: Mat,
    pub h_cand: Mat,
}

impl GruCell {
    pub fn new(input_size: usize, hidden_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let ws = (6.0 / (input_size + hidden_size) as f64).sqrt();
        let us = (6.0 / (2 * hidden_size) as f64).sqrt();
        let wmat = |rng: &mut ChaCha8Rng| {
            Mat::from_fn(input_size, hidden_size, |_, _| rng.random_range(-ws..ws))
        };
        let umat = |rng: &mut ChaCha8Rng| {
            Mat::from_fn(hidden_size, hidden_size, |_, _| rng.random_range(-us..us))
        };
        GruCell {
            input_size,
            hidden_size,
            w_z: wmat(rng),
            w_r: wmat(rng),
            w_h: wmat(rng),
            u_z: umat(rng),
            u_r: umat(rng),
            u_h: umat(rng),
            b_z: None,
            b_r: None,
            b_h: None,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.b_z = Some(Mat::zeros(1, self.hidden_size));
        self.b_r = Some(Mat::zeros(1, self.hidden_size));
        self.b_h = Some(Mat::zeros(1, self.hidden_size));
        self
    }

    fn add_bias(pre: &mut Mat, bias: &Option<Mat>) {
        if let Some(b) = bias {
            for r in 0..pre.rows() {
                for c in 0..pre.cols() {
                    pre[(r, c)] += b[(0, c)];
                }
            }
        }
    }

    /// One step over all nodes at once: rows of `input` (N × input_size) and
    /// `h_prev` (N × hidden_size) are per-node and independent.
    pub fn step(&self, input: &Mat, h_prev: &Mat) -> Result<(Mat, GruStepCache), TemporalError> {
        if input.cols() != self.input_size {
            return Err(TemporalError::InputMismatch {
                got: input.cols(),
                want: self.input_size,
            });
        }
        if h_prev.cols() != self.hidden_size || h_prev.rows() != input.rows() {
            return Err(TemporalError::HiddenMismatch {
                got: h_prev.cols(),
                want: self.hidden_size,
            });
        }
        let mut pre_z = input.dot(&self.w_z).add(&h_prev.dot(&self.u_z));
        Self::add_bias(&mut pre_z, &self.b_z);
        let z = sigmoid(&pre_z);
        let mut pre_r = input.dot(&self.w_r).add(&h_prev.dot(&self.u_r));
        Self::add_bias(&mut pre_r, &self.b_r);
        let r = sigmoid(&pre_r);
        let gated = r.hadamard(h_prev);
        let mut pre_h = input.dot(&self.w_h).add(&gated.dot(&self.u_h));
        Self::add_bias(&mut pre_h, &self.b_h);
        let h_cand = tanh_mat(&pre_h);
        // h = (1−z)⊙h_prev + z⊙h̃
        let h = h_prev
            .zip(&z, |hp, zv| (1.0 - zv) * hp)
            .add(&z.hadamard(&h_cand));
        Ok((
            h,
            GruStepCache {
                input: input.clone(),
                h_prev: h_prev.clone(),
                z,
                r,
                h_cand,
            },
        ))
    }

    /// Backward through one step. Accumulates gate-weight gradients under
    /// `{prefix}.w_z` etc. and returns (d_input, d_h_prev).
    pub fn step_backward(
        &self,
        cache: &GruStepCache,
        dh: &Mat,
        prefix: &str,
        grads: &mut GradStore,
    ) -> (Mat, Mat) {
        let GruStepCache {
            input,
            h_prev,
            z,
            r,
            h_cand,
        } = cache;
        let d_hcand = dh.hadamard(z);
        let dz = dh.hadamard(&h_cand.sub(h_prev));
        let mut dh_prev = dh.zip(z, |g, zv| g * (1.0 - zv));

        // candidate branch: h̃ = tanh(W_h x + U_h (r⊙h_prev))
        let d_pre_h = d_hcand.zip(h_cand, |g, hc| g * (1.0 - hc * hc));
        grads.accumulate(&format!("{prefix}.w_h"), input.transpose().dot(&d_pre_h));
        let gated = r.hadamard(h_prev);
        grads.accumulate(&format!("{prefix}.u_h"), gated.transpose().dot(&d_pre_h));
        if self.b_h.is_some() {
            grads.accumulate(&format!("{prefix}.b_h"), col_sums(&d_pre_h));
        }
        let mut d_input = d_pre_h.dot(&self.w_h.transpose());
        let d_gated = d_pre_h.dot(&self.u_h.transpose());
        let dr = d_gated.hadamard(h_prev);
        dh_prev.add_assign(&d_gated.hadamard(r));

        // reset gate
        let d_pre_r = dr.zip(r, |g, rv| g * rv * (1.0 - rv));
        grads.accumulate(&format!("{prefix}.w_r"), input.transpose().dot(&d_pre_r));
        grads.accumulate(&format!("{prefix}.u_r"), h_prev.transpose().dot(&d_pre_r));
        if self.b_r.is_some() {
            grads.accumulate(&format!("{prefix}.b_r"), col_sums(&d_pre_r));
        }
        d_input.add_assign(&d_pre_r.dot(&self.w_r.transpose()));
        dh_prev.add_assign(&d_pre_r.dot(&self.u_r.transpose()));

        // update gate
        let d_pre_z = dz.zip(z, |g, zv| g * zv * (1.0 - zv));
        grads.accumulate(&format!("{prefix}.w_z"), input.transpose().dot(&d_pre_z));
        grads.accumulate(&format!("{prefix}.u_z"), h_prev.transpose().dot(&d_pre_z));
        if self.b_z.is_some() {
            grads.accumulate(&format!("{prefix}.b_z"), col_sums(&d_pre_z));
        }
        d_input.add_assign(&d_pre_z.dot(&self.w_z.transpose()));
        dh_prev.add_assign(&d_pre_z.dot(&self.u_z.transpose()));

        (d_input, dh_prev)
    }

    /// Left-to-right fold from a zero hidden state; returns the final state
    /// and per-step caches.
    pub fn encode(&self, inputs: &[Mat]) -> Result<(Mat, Vec<GruStepCache>), TemporalError> {
        let first = inputs.first().ok_or(TemporalError::EmptySequence)?;
        let mut h = Mat::zeros(first.rows(), self.hidden_size);
        let mut caches = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (next, cache) = self.step(x, &h)?;
            h = next;
            caches.push(cache);
        }
        Ok((h, caches))
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        f(format!("{prefix}.w_z"), &self.w_z);
        f(format!("{prefix}.w_r"), &self.w_r);
        f(format!("{prefix}.w_h"), &self.w_h);
        f(format!("{prefix}.u_z"), &self.u_z);
        f(format!("{prefix}.u_r"), &self.u_r);
        f(format!("{prefix}.u_h"), &self.u_h);
        if let Some(b) = &self.b_z {
            f(format!("{prefix}.b_z"), b);
        }
        if let Some(b) = &self.b_r {
            f(format!("{prefix}.b_r"), b);
        }
        if let Some(b) = &self.b_h {
            f(format!("{prefix}.b_h"), b);
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        f(format!("{prefix}.w_z"), &mut self.w_z);
        f(format!("{prefix}.w_r"), &mut self.w_r);
        f(format!("{prefix}.w_h"), &mut self.w_h);
        f(format!("{prefix}.u_z"), &mut self.u_z);
        f(format!("{prefix}.u_r"), &mut self.u_r);
        f(format!("{prefix}.u_h"), &mut self.u_h);
        if let Some(b) = &mut self.b_z {
            f(format!("{prefix}.b_z"), b);
        }
        if let Some(b) = &mut self.b_r {
            f(format!("{prefix}.b_r"), b);
        }
        if let Some(b) = &mut self.b_h {
            f(format!("{prefix}.b_h"), b);
        }
    }
}

fn col_sums(m: &Mat) -> Mat {
    let mut out = Mat::zeros(1, m.cols());
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            out[(0, c)] += m[(r, c)];
        }
    }
    out
}

/// Linear readout hidden → output features per node, with bias.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decoder {
    pub w: Mat, // hidden × F
    pub b: Mat, // 1 × F
}

impl Decoder {
    pub fn new(hidden: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = (6.0 / (hidden + out_features) as f64).sqrt();
        Decoder {
            w: Mat::from_fn(hidden, out_features, |_, _| rng.random_range(-s..s)),
            b: Mat::zeros(1, out_features),
        }
    }

    pub fn forward(&self, h: &Mat) -> Mat {
        let mut out = h.dot(&self.w);
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out[(r, c)] += self.b[(0, c)];
            }
        }
        out
    }

    /// Accumulates dW, db and returns dH.
    pub fn backward(&self, h: &Mat, grad: &Mat, prefix: &str, grads: &mut GradStore) -> Mat {
        grads.accumulate(&format!("{prefix}.w"), h.transpose().dot(grad));
        grads.accumulate(&format!("{prefix}.b"), col_sums(grad));
        grad.dot(&self.w.transpose())
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        f(format!("{prefix}.w"), &self.w);
        f(format!("{prefix}.b"), &self.b);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.b"), &mut self.b);
    }
}

/// Whether decode steps feed back ground truth or the model's own prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TeacherForcingPolicy {
    Off,
    Always,
    /// Linear decay of the forcing probability from `p0` to 0 at
    /// `zero_epoch`.
    Scheduled { p0: f64, zero_epoch: usize },
}

impl Default for TeacherForcingPolicy {
    fn default() -> Self {
        TeacherForcingPolicy::Scheduled {
            p0: 1.0,
            zero_epoch: 50,
        }
    }
}

impl TeacherForcingPolicy {
    /// Forcing probability at a given epoch (training mode).
    pub fn probability(&self, epoch: usize) -> f64 {
        match *self {
            TeacherForcingPolicy::Off => 0.0,
            TeacherForcingPolicy::Always => 1.0,
            TeacherForcingPolicy::Scheduled { p0, zero_epoch } => {
                if zero_epoch == 0 {
                    0.0
                } else {
                    (p0 * (1.0 - epoch as f64 / zero_epoch as f64)).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// Per-feedback-step forcing decisions for one sequence.
    pub fn draw(&self, epoch: usize, steps: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
        let p = self.probability(epoch);
        (0..steps).map(|_| rng.random::<f64>() < p).collect()
    }
}
