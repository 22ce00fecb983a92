//! Spatial encoders: the learnable symmetric interaction layer, the masked
//! attention baseline, the interaction-matrix ablation variants, and inverted
//! dropout.
//!
//! The interaction pipeline per head is
//!   P = row_softmax(layer_norm_rows(½(I + Iᵀ)))
//! applied fresh from the raw parameter on every forward pass, and the head
//! output is Z = ELU(P · X · W). Head outputs are concatenated.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graphio::{Graph, SignalTensor};
use crate::numkern::{
    elu, elu_backward, layer_norm_rows, layer_norm_rows_backward, row_softmax,
    row_softmax_backward, GradStore, KernError, Mat,
};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum SpatialError {
    #[error("interaction matrix must be square, got {0}x{1}")]
    NonSquare(usize, usize),
    #[error("input has {got} feature columns, layer expects {want}")]
    FeatureMismatch { got: usize, want: usize },
    #[error("adjacency is {0}x{1} but the layer has {2} nodes")]
    AdjacencyMismatch(usize, usize, usize),
    #[error("dropout rate must be in [0,1), got {0}")]
    BadDropoutRate(f64),
    #[error("unknown variant tag `{0}`")]
    UnknownVariant(String),
    #[error("spectral block variant needs 1 <= k <= {n}, got {k}")]
    BadClusterCount { k: usize, n: usize },
    #[error("variant `{0}` requires a training signal")]
    NeedsSignal(String),
    #[error(transparent)]
    Kern(#[from] KernError),
}

/// Interaction-structure ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantTag {
    /// No interaction matrix: masked-attention baseline path.
    None,
    /// Fully trainable matrix, symmetrized + normalized (the default).
    LearnableSym,
    /// Fixed binary adjacency.
    Adjacency,
    /// Trainable elementwise scaling of the adjacency support.
    WeightedAdjacency,
    /// Trainable elementwise scaling of the empirical covariance.
    WeightedCovariance,
    /// Fixed block-diagonal clustered adjacency.
    SpectralBlock,
}

impl VariantTag {
    pub fn parse(s: &str) -> Result<Self, SpatialError> {
        match s {
            "none" | "base_gat" => Ok(VariantTag::None),
            "learnable_sym" => Ok(VariantTag::LearnableSym),
            "adjacency" => Ok(VariantTag::Adjacency),
            "weighted_adjacency" => Ok(VariantTag::WeightedAdjacency),
            "weighted_covariance" => Ok(VariantTag::WeightedCovariance),
            "spectral_block" => Ok(VariantTag::SpectralBlock),
            other => Err(SpatialError::UnknownVariant(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            VariantTag::None => "none",
            VariantTag::LearnableSym => "learnable_sym",
            VariantTag::Adjacency => "adjacency",
            VariantTag::WeightedAdjacency => "weighted_adjacency",
            VariantTag::WeightedCovariance => "weighted_covariance",
            VariantTag::SpectralBlock => "spectral_block",
        }
    }

    pub fn all() -> [VariantTag; 6] {
        [
            VariantTag::None,
            VariantTag::LearnableSym,
            VariantTag::Adjacency,
            VariantTag::WeightedAdjacency,
            VariantTag::WeightedCovariance,
            VariantTag::SpectralBlock,
        ]
    }
}

/// Eqs-in-order interaction processing: symmetrize, layer-norm rows,
/// row-softmax. Errors on non-square input.
pub fn process_interaction(raw: &Mat) -> Result<Mat, SpatialError> {
    if raw.rows() != raw.cols() {
        return Err(SpatialError::NonSquare(raw.rows(), raw.cols()));
    }
    let sym = raw.symmetrize();
    let normed = layer_norm_rows(&sym, LAYER_NORM_EPS);
    Ok(row_softmax(&normed))
}

/// Backward through `process_interaction`. Needs the symmetrized input and
/// the final processed output from the forward pass.
pub fn process_interaction_backward(sym: &Mat, processed: &Mat, grad: &Mat) -> Mat {
    let d_normed = row_softmax_backward(processed, grad);
    let d_sym = layer_norm_rows_backward(sym, LAYER_NORM_EPS, &d_normed);
    // d raw through I ← ½(I + Iᵀ)
    d_sym.symmetrize()
}

/// Empirical pairwise covariance of node signals over the given frames.
pub fn node_covariance(signal: &SignalTensor, steps: usize) -> Mat {
    let t = steps.min(signal.steps).max(1);
    let n = signal.nodes;
    let means: Vec<f64> = (0..n)
        .map(|i| (0..t).map(|s| signal.get(s, i, 0)).sum::<f64>() / t as f64)
        .collect();
    Mat::from_fn(n, n, |i, j| {
        (0..t)
            .map(|s| (signal.get(s, i, 0) - means[i]) * (signal.get(s, j, 0) - means[j]))
            .sum::<f64>()
            / t as f64
    })
}

/// Block-diagonal adjacency from a node partition: 1 for distinct nodes in
/// the same cluster, 0 elsewhere (zero diagonal).
pub fn clustered_adjacency(labels: &[usize]) -> Mat {
    let n = labels.len();
    Mat::from_fn(n, n, |i, j| {
        if i != j && labels[i] == labels[j] {
            1.0
        } else {
            0.0
        }
    })
}

/// Per-head parameters of the interaction layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterHead {
    /// Learnable matrix: raw I for `LearnableSym`, the elementwise scale for
    /// the weighted variants, unused (empty) for fixed variants.
    pub inter: Mat,
    /// Fixed support matrix for the variants (A, C, or block adjacency).
    pub support: Option<Mat>,
    /// Feature projection F × F'.
    pub w: Mat,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterGatLayer {
    pub n: usize,
    pub in_features: usize,
    pub head_dim: usize,
    pub heads: Vec<InterHead>,
    pub elu_alpha: f64,
    pub variant: VariantTag,
}

/// Forward cache for one embed call (shared P across calls lives in
/// [`PreparedInteraction`]).
pub struct InterEmbedCache {
    pub x: Mat,
    pub h: Vec<Mat>,   // per head: X·W
    pub z: Vec<Mat>,   // per head: ELU(P·H)
}

/// The per-sequence fixed part of the forward pass: effective matrices are
/// parameter-only, so they are computed once and reused for every frame.
pub struct PreparedInteraction {
    /// Effective mixing matrix per head.
    pub p: Vec<Mat>,
    /// Symmetrized raw matrix per head (kept for the backward pass).
    pub sym: Vec<Option<Mat>>,
}

impl InterGatLayer {
    /// Uniform init in [−1/√N, 1/√N] for the interaction matrix and Glorot-ish
    /// uniform for projections.
    pub fn new(
        n: usize,
        in_features: usize,
        head_dim: usize,
        heads: usize,
        elu_alpha: f64,
        variant: VariantTag,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let iscale = 1.0 / (n as f64).sqrt();
        let wscale = (6.0 / (in_features + head_dim) as f64).sqrt();
        let heads = (0..heads)
            .map(|_| InterHead {
                inter: match variant {
                    VariantTag::Adjacency | VariantTag::SpectralBlock | VariantTag::None => Mat::zeros(0, 0),
                    _ => Mat::from_fn(n, n, |_, _| rng.random_range(-iscale..iscale)),
                },
                support: None,
                w: Mat::from_fn(in_features, head_dim, |_, _| rng.random_range(-wscale..wscale)),
            })
            .collect();
        InterGatLayer {
            n,
            in_features,
            head_dim,
            heads,
            elu_alpha,
            variant,
        }
    }

    pub fn out_features(&self) -> usize {
        self.heads.len() * self.head_dim
    }

    /// Install the fixed support matrix required by the variant. For
    /// `WeightedCovariance` the empirical covariance comes from the training
    /// signal; for `SpectralBlock` from a precomputed partition.
    pub fn build_variant(
        &mut self,
        graph: &Graph,
        train_signal: Option<(&SignalTensor, usize)>,
        cluster_labels: Option<&[usize]>,
    ) -> Result<(), SpatialError> {
        let support = match self.variant {
            VariantTag::LearnableSym | VariantTag::None => None,
            VariantTag::Adjacency | VariantTag::WeightedAdjacency => Some(graph.adjacency.clone()),
            VariantTag::WeightedCovariance => {
                let (signal, steps) = train_signal
                    .ok_or_else(|| SpatialError::NeedsSignal(self.variant.name().to_string()))?;
                Some(node_covariance(signal, steps))
            }
            VariantTag::SpectralBlock => {
                let labels = cluster_labels
                    .ok_or_else(|| SpatialError::NeedsSignal(self.variant.name().to_string()))?;
                Some(clustered_adjacency(labels))
            }
        };
        for head in &mut self.heads {
            head.support = support.clone();
        }
        Ok(())
    }

    /// Effective mixing matrix per head, computed from current parameters.
    pub fn prepare(&self) -> Result<PreparedInteraction, SpatialError> {
        let mut p = Vec::with_capacity(self.heads.len());
        let mut sym = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            match self.variant {
                VariantTag::LearnableSym => {
                    let s = head.inter.symmetrize();
                    let normed = layer_norm_rows(&s, LAYER_NORM_EPS);
                    p.push(row_softmax(&normed));
                    sym.push(Some(s));
                }
                VariantTag::Adjacency | VariantTag::SpectralBlock => {
                    p.push(head.support.clone().expect("variant support not built"));
                    sym.push(None);
                }
                VariantTag::WeightedAdjacency | VariantTag::WeightedCovariance => {
                    let support = head.support.as_ref().expect("variant support not built");
                    p.push(head.inter.hadamard(support));
                    sym.push(None);
                }
                VariantTag::None => unreachable!("variant none routes to the baseline layer"),
            }
        }
        Ok(PreparedInteraction { p, sym })
    }

    /// One frame: Z_head = ELU(P · X · W), heads concatenated.
    pub fn embed(&self, prep: &PreparedInteraction, x: &Mat) -> Result<(Mat, InterEmbedCache), SpatialError> {
        if x.cols() != self.in_features {
            return Err(SpatialError::FeatureMismatch {
                got: x.cols(),
                want: self.in_features,
            });
        }
        let mut hs = Vec::with_capacity(self.heads.len());
        let mut zs = Vec::with_capacity(self.heads.len());
        for (head, p) in self.heads.iter().zip(&prep.p) {
            let h = x.dot(&head.w);
            let z = elu(&p.dot(&h), self.elu_alpha);
            hs.push(h);
            zs.push(z);
        }
        let out = Mat::hcat(&zs.iter().collect::<Vec<_>>());
        Ok((
            out,
            InterEmbedCache {
                x: x.clone(),
                h: hs,
                z: zs,
            },
        ))
    }

    /// Backward through one embed call. Accumulates dW into `grads` (under
    /// `{prefix}.head{i}.w`), adds this call's dP into `dp_accum`, and returns
    /// dX.
    pub fn embed_backward(
        &self,
        prep: &PreparedInteraction,
        cache: &InterEmbedCache,
        grad_out: &Mat,
        prefix: &str,
        grads: &mut GradStore,
        dp_accum: &mut [Mat],
    ) -> Mat {
        let mut dx = Mat::zeros(cache.x.rows(), cache.x.cols());
        for (i, (head, p)) in self.heads.iter().zip(&prep.p).enumerate() {
            let g = grad_out.col_slice(i * self.head_dim, self.head_dim);
            let d_pre = elu_backward(&cache.z[i], self.elu_alpha, &g);
            // pre = P·H
            dp_accum[i].add_assign(&d_pre.dot(&cache.h[i].transpose()));
            let dh = p.transpose().dot(&d_pre);
            grads.accumulate(
                &format!("{prefix}.head{i}.w"),
                cache.x.transpose().dot(&dh),
            );
            dx.add_assign(&dh.dot(&head.w.transpose()));
        }
        dx
    }

    /// Fold accumulated dP back to the learnable parameters.
    pub fn interaction_backward(
        &self,
        prep: &PreparedInteraction,
        dp: &[Mat],
        prefix: &str,
        grads: &mut GradStore,
    ) {
        for (i, head) in self.heads.iter().enumerate() {
            match self.variant {
                VariantTag::LearnableSym => {
                    let sym = prep.sym[i].as_ref().expect("sym cache for learnable variant");
                    let d_raw = process_interaction_backward(sym, &prep.p[i], &dp[i]);
                    grads.accumulate(&format!("{prefix}.head{i}.inter"), d_raw);
                }
                VariantTag::WeightedAdjacency | VariantTag::WeightedCovariance => {
                    let support = head.support.as_ref().expect("variant support not built");
                    grads.accumulate(&format!("{prefix}.head{i}.inter"), dp[i].hadamard(support));
                }
                _ => {}
            }
        }
    }

    /// Names and refs of learnable parameters, in a fixed order.
    pub fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        for (i, head) in self.heads.iter().enumerate() {
            if head.inter.rows() > 0 {
                f(format!("{prefix}.head{i}.inter"), &head.inter);
            }
            f(format!("{prefix}.head{i}.w"), &head.w);
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        for (i, head) in self.heads.iter_mut().enumerate() {
            if head.inter.rows() > 0 {
                f(format!("{prefix}.head{i}.inter"), &mut head.inter);
            }
            f(format!("{prefix}.head{i}.w"), &mut head.w);
        }
    }

    /// Raw interaction matrices (the L1-regularized parameters).
    pub fn raw_interactions(&self) -> Vec<&Mat> {
        self.heads
            .iter()
            .filter(|h| h.inter.rows() > 0)
            .map(|h| &h.inter)
            .collect()
    }

    /// Symmetrized raw matrices per head (analysis view).
    pub fn symmetrized_raw(&self) -> Vec<Mat> {
        self.raw_interactions().iter().map(|m| m.symmetrize()).collect()
    }

    /// Processed (row-stochastic) matrices per head.
    pub fn processed(&self) -> Result<Vec<Mat>, SpatialError> {
        match self.variant {
            VariantTag::LearnableSym => self
                .heads
                .iter()
                .map(|h| process_interaction(&h.inter))
                .collect(),
            _ => Ok(self.prepare()?.p),
        }
    }
}

// ---------------------------------------------------------------------------
// Masked-attention baseline
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GatHead {
    pub w: Mat,      // F × F'
    pub a_src: Mat,  // F' × 1, first half of the attention vector
    pub a_dst: Mat,  // F' × 1, second half
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaseGatLayer {
    pub n: usize,
    pub in_features: usize,
    pub head_dim: usize,
    pub heads: Vec<GatHead>,
    pub leaky_slope: f64,
    pub elu_alpha: f64,
    /// Edge mask from the adjacency; isolated nodes get a self-loop so the
    /// row softmax is defined.
    pub mask: Vec<bool>,
}

pub struct GatEmbedCache {
    pub x: Mat,
    pub h: Vec<Mat>,
    pub scores_pre: Vec<Mat>, // pre-LeakyReLU scores (only valid on edges)
    pub attn: Vec<Mat>,       // post-softmax attention, zero off-edge
    pub z: Vec<Mat>,
}

impl BaseGatLayer {
    pub fn new(
        graph: &Graph,
        in_features: usize,
        head_dim: usize,
        heads: usize,
        leaky_slope: f64,
        elu_alpha: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n = graph.n;
        let mut mask = vec![false; n * n];
        for i in 0..n {
            let mut any = false;
            for j in 0..n {
                if graph.adjacency[(i, j)] > 0.0 {
                    mask[i * n + j] = true;
                    any = true;
                }
            }
            if !any {
                mask[i * n + i] = true;
            }
        }
        let wscale = (6.0 / (in_features + head_dim) as f64).sqrt();
        let ascale = (6.0 / (head_dim + 1) as f64).sqrt();
        let heads = (0..heads)
            .map(|_| GatHead {
                w: Mat::from_fn(in_features, head_dim, |_, _| rng.random_range(-wscale..wscale)),
                a_src: Mat::from_fn(head_dim, 1, |_, _| rng.random_range(-ascale..ascale)),
                a_dst: Mat::from_fn(head_dim, 1, |_, _| rng.random_range(-ascale..ascale)),
            })
            .collect();
        BaseGatLayer {
            n,
            in_features,
            head_dim,
            heads,
            leaky_slope,
            elu_alpha,
            mask,
        }
    }

    pub fn out_features(&self) -> usize {
        self.heads.len() * self.head_dim
    }

    fn edge(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.n + j]
    }

    /// Masked attention forward for one frame.
    pub fn embed(&self, x: &Mat) -> Result<(Mat, GatEmbedCache), SpatialError> {
        if x.cols() != self.in_features {
            return Err(SpatialError::FeatureMismatch {
                got: x.cols(),
                want: self.in_features,
            });
        }
        let n = self.n;
        let mut hs = Vec::new();
        let mut pres = Vec::new();
        let mut attns = Vec::new();
        let mut zs = Vec::new();
        for head in &self.heads {
            let h = x.dot(&head.w);
            let s = h.dot(&head.a_src); // N×1
            let t = h.dot(&head.a_dst); // N×1
            let mut pre = Mat::zeros(n, n);
            let mut attn = Mat::zeros(n, n);
            for i in 0..n {
                // masked softmax with max subtraction over the row's edges
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    if self.edge(i, j) {
                        let e = s[(i, 0)] + t[(j, 0)];
                        let e = if e > 0.0 { e } else { self.leaky_slope * e };
                        pre[(i, j)] = s[(i, 0)] + t[(j, 0)];
                        mx = mx.max(e);
                    }
                }
                let mut sum = 0.0;
                for j in 0..n {
                    if self.edge(i, j) {
                        let e = leaky_scalar(pre[(i, j)], self.leaky_slope);
                        let v = (e - mx).exp();
                        attn[(i, j)] = v;
                        sum += v;
                    }
                }
                for j in 0..n {
                    if self.edge(i, j) {
                        attn[(i, j)] /= sum;
                    }
                }
            }
            let z = elu(&attn.dot(&h), self.elu_alpha);
            hs.push(h);
            pres.push(pre);
            attns.push(attn);
            zs.push(z);
        }
        let out = Mat::hcat(&zs.iter().collect::<Vec<_>>());
        Ok((
            out,
            GatEmbedCache {
                x: x.clone(),
                h: hs,
                scores_pre: pres,
                attn: attns,
                z: zs,
            },
        ))
    }

    /// Backward through one embed call; accumulates dW, da_src, da_dst and
    /// returns dX.
    pub fn embed_backward(
        &self,
        cache: &GatEmbedCache,
        grad_out: &Mat,
        prefix: &str,
        grads: &mut GradStore,
    ) -> Mat {
        let n = self.n;
        let mut dx = Mat::zeros(cache.x.rows(), cache.x.cols());
        for (hi, head) in self.heads.iter().enumerate() {
            let g = grad_out.col_slice(hi * self.head_dim, self.head_dim);
            let d_pre_act = elu_backward(&cache.z[hi], self.elu_alpha, &g);
            let attn = &cache.attn[hi];
            let h = &cache.h[hi];
            // Z_pre = attn · H
            let d_attn = d_pre_act.dot(&h.transpose());
            let mut dh = attn.transpose().dot(&d_pre_act);
            // softmax rows restricted to edges
            let mut d_scores = Mat::zeros(n, n);
            for i in 0..n {
                let mut dot = 0.0;
                for j in 0..n {
                    if self.edge(i, j) {
                        dot += attn[(i, j)] * d_attn[(i, j)];
                    }
                }
                for j in 0..n {
                    if self.edge(i, j) {
                        let de = attn[(i, j)] * (d_attn[(i, j)] - dot);
                        // through LeakyReLU at the pre-activation score
                        d_scores[(i, j)] = if cache.scores_pre[hi][(i, j)] > 0.0 {
                            de
                        } else {
                            self.leaky_slope * de
                        };
                    }
                }
            }
            // score(i,j) = a_srcᵀh_i + a_dstᵀh_j
            let mut ds = Mat::zeros(n, 1);
            let mut dt = Mat::zeros(n, 1);
            for i in 0..n {
                for j in 0..n {
                    if self.edge(i, j) {
                        ds[(i, 0)] += d_scores[(i, j)];
                        dt[(j, 0)] += d_scores[(i, j)];
                    }
                }
            }
            grads.accumulate(&format!("{prefix}.head{hi}.a_src"), h.transpose().dot(&ds));
            grads.accumulate(&format!("{prefix}.head{hi}.a_dst"), h.transpose().dot(&dt));
            dh.add_assign(&ds.dot(&head.a_src.transpose()));
            dh.add_assign(&dt.dot(&head.a_dst.transpose()));
            grads.accumulate(&format!("{prefix}.head{hi}.w"), cache.x.transpose().dot(&dh));
            dx.add_assign(&dh.dot(&head.w.transpose()));
        }
        dx
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Mat)) {
        for (i, head) in self.heads.iter().enumerate() {
            f(format!("{prefix}.head{i}.w"), &head.w);
            f(format!("{prefix}.head{i}.a_src"), &head.a_src);
            f(format!("{prefix}.head{i}.a_dst"), &head.a_dst);
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Mat)) {
        for (i, head) in self.heads.iter_mut().enumerate() {
            f(format!("{prefix}.head{i}.w"), &mut head.w);
            f(format!("{prefix}.head{i}.a_src"), &mut head.a_src);
            f(format!("{prefix}.head{i}.a_dst"), &mut head.a_dst);
        }
    }
}

fn leaky_scalar(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted-dropout keep mask: entries are 1/(1−rate) with probability
/// 1−rate, else 0. Eval mode is the identity.
pub fn dropout_mask(
    rate: f64,
    rows: usize,
    cols: usize,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Mat, SpatialError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(SpatialError::BadDropoutRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok(Mat::from_fn(rows, cols, |_, _| 1.0));
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Ok(Mat::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < keep {
            scale
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn randmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn process_symmetric_input_unchanged_by_step_one() {
        let mut r = rng(1);
        let m = randmat(&mut r, 4, 4).symmetrize();
        assert!(m.symmetrize().sub(&m).max_abs() == 0.0);
    }

    #[test]
    fn process_rows_sum_to_one() {
        let mut r = rng(2);
        let m = randmat(&mut r, 5, 5);
        let p = process_interaction(&m).unwrap();
        for i in 0..5 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn process_matches_three_step_oracle() {
        let mut r = rng(3);
        let m = randmat(&mut r, 3, 3);
        let p = process_interaction(&m).unwrap();
        // independent scalar composition of the three steps
        let n = 3usize;
        let mut sym = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                sym[i][j] = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
        let mut normed = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mu: f64 = sym[i].iter().sum::<f64>() / n as f64;
            let var: f64 = sym[i].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n as f64;
            for j in 0..n {
                normed[i][j] = (sym[i][j] - mu) / (var + LAYER_NORM_EPS).sqrt();
            }
        }
        for i in 0..n {
            let exps: Vec<f64> = normed[i].iter().map(|x| x.exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..n {
                assert!((p[(i, j)] - exps[j] / sum).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn process_non_square_rejected() {
        assert!(process_interaction(&Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn intergat_single_node_ignores_raw_i() {
        let mut r = rng(4);
        let mut layer = InterGatLayer::new(1, 2, 3, 1, 1.0, VariantTag::LearnableSym, &mut r);
        let x = Mat::from_rows(&[vec![0.3, -0.4]]);
        let prep = layer.prepare().unwrap();
        let (z1, _) = layer.embed(&prep, &x).unwrap();
        layer.heads[0].inter = Mat::from_rows(&[vec![42.0]]);
        let prep = layer.prepare().unwrap();
        let (z2, _) = layer.embed(&prep, &x).unwrap();
        assert!(z1.sub(&z2).max_abs() <= 1e-12);
        // P = [[1]] so Z = ELU(XW)
        let want = elu(&x.dot(&layer.heads[0].w), 1.0);
        assert!(z1.sub(&want).max_abs() <= 1e-12);
    }

    #[test]
    fn intergat_uniform_mixing_gives_column_means() {
        // W = identity, P uniform rows → each Z row = ELU(column means of X)
        let mut r = rng(5);
        let n = 4;
        let mut layer = InterGatLayer::new(n, 3, 3, 1, 1.0, VariantTag::LearnableSym, &mut r);
        layer.heads[0].w = Mat::identity(3);
        layer.heads[0].inter = Mat::zeros(n, n); // constant raw I → uniform P
        let x = randmat(&mut r, n, 3);
        let prep = layer.prepare().unwrap();
        let (z, _) = layer.embed(&prep, &x).unwrap();
        for i in 0..n {
            for c in 0..3 {
                let mean: f64 = (0..n).map(|j| x[(j, c)]).sum::<f64>() / n as f64;
                let want = if mean > 0.0 { mean } else { mean.exp() - 1.0 };
                assert!((z[(i, c)] - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn intergat_matches_double_loop_oracle() {
        let mut r = rng(6);
        let layer = InterGatLayer::new(4, 2, 3, 2, 1.0, VariantTag::LearnableSym, &mut r);
        let x = randmat(&mut r, 4, 2);
        let prep = layer.prepare().unwrap();
        let (z, _) = layer.embed(&prep, &x).unwrap();
        for (hi, head) in layer.heads.iter().enumerate() {
            let p = process_interaction(&head.inter).unwrap();
            for i in 0..4 {
                for c in 0..3 {
                    // Eq-style double loop: sum_j P_ij (X W)_jc, then ELU
                    let mut acc = 0.0;
                    for j in 0..4 {
                        let mut hjc = 0.0;
                        for f in 0..2 {
                            hjc += x[(j, f)] * head.w[(f, c)];
                        }
                        acc += p[(i, j)] * hjc;
                    }
                    let want = if acc > 0.0 { acc } else { acc.exp() - 1.0 };
                    assert!((z[(i, hi * 3 + c)] - want).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn intergat_permutation_equivariance() {
        let mut r = rng(7);
        let n = 5;
        let layer = InterGatLayer::new(n, 2, 3, 1, 1.0, VariantTag::LearnableSym, &mut r);
        let x = randmat(&mut r, n, 2);
        let prep = layer.prepare().unwrap();
        let (z, _) = layer.embed(&prep, &x).unwrap();

        let perm = [2usize, 0, 4, 1, 3];
        let mut permuted = layer.clone();
        permuted.heads[0].inter =
            Mat::from_fn(n, n, |i, j| layer.heads[0].inter[(perm[i], perm[j])]);
        let xp = Mat::from_fn(n, 2, |i, c| x[(perm[i], c)]);
        let prep_p = permuted.prepare().unwrap();
        let (zp, _) = permuted.embed(&prep_p, &xp).unwrap();
        for i in 0..n {
            for c in 0..3 {
                assert!((zp[(i, c)] - z[(perm[i], c)]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn parameter_count_per_head() {
        let mut r = rng(8);
        let (n, f, fp) = (7, 3, 5);
        let layer = InterGatLayer::new(n, f, fp, 1, 1.0, VariantTag::LearnableSym, &mut r);
        let count: usize = layer.heads[0].inter.data().len() + layer.heads[0].w.data().len();
        assert_eq!(count, n * n + f * fp);
    }

    #[test]
    fn feature_mismatch_rejected() {
        let mut r = rng(9);
        let layer = InterGatLayer::new(3, 2, 2, 1, 1.0, VariantTag::LearnableSym, &mut r);
        let prep = layer.prepare().unwrap();
        assert!(layer.embed(&prep, &Mat::zeros(3, 5)).is_err());
    }

    fn path_graph(n: usize) -> Graph {
        let mut a = Mat::zeros(n, n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = 1.0;
            a[(i + 1, i)] = 1.0;
        }
        Graph::new(a).unwrap()
    }

    #[test]
    fn basegat_complete_graph_constant_features_uniform_attention() {
        let n = 4;
        let g = Graph::new(Mat::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 })).unwrap();
        let mut r = rng(10);
        let layer = BaseGatLayer::new(&g, 2, 3, 1, 0.2, 1.0, &mut r);
        let x = Mat::from_fn(n, 2, |_, _| 0.7);
        let (_, cache) = layer.embed(&x).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    assert!((cache.attn[0][(i, j)] - 1.0 / (n as f64 - 1.0)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn basegat_self_loops_only_isolates_nodes() {
        let g = Graph::new(Mat::identity(3)).unwrap();
        let mut r = rng(11);
        let layer = BaseGatLayer::new(&g, 2, 2, 1, 0.2, 1.0, &mut r);
        let mut x = randmat(&mut r, 3, 2);
        let (z1, _) = layer.embed(&x).unwrap();
        x[(1, 0)] += 10.0; // perturb node 1 only
        let (z2, _) = layer.embed(&x).unwrap();
        for c in 0..2 {
            assert_eq!(z1[(0, c)], z2[(0, c)]);
            assert_eq!(z1[(2, c)], z2[(2, c)]);
            assert_ne!(z1[(1, c)], z2[(1, c)]);
        }
    }

    #[test]
    fn basegat_matches_enumeration_oracle() {
        let g = path_graph(4);
        let mut r = rng(12);
        let layer = BaseGatLayer::new(&g, 2, 3, 1, 0.2, 1.0, &mut r);
        let x = randmat(&mut r, 4, 2);
        let (z, cache) = layer.embed(&x).unwrap();
        let head = &layer.heads[0];
        // brute-force masked attention with plain exp/sum
        let h = x.dot(&head.w);
        let n = 4;
        for i in 0..n {
            let mut es = vec![f64::NEG_INFINITY; n];
            for j in 0..n {
                if g.adjacency[(i, j)] > 0.0 {
                    let mut score = 0.0;
                    for c in 0..3 {
                        score += head.a_src[(c, 0)] * h[(i, c)] + head.a_dst[(c, 0)] * h[(j, c)];
                    }
                    es[j] = if score > 0.0 { score } else { 0.2 * score };
                }
            }
            let mx = es.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = es.iter().map(|&e| if e.is_finite() { (e - mx).exp() } else { 0.0 }).collect();
            let sum: f64 = exps.iter().sum();
            for c in 0..3 {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += exps[j] / sum * h[(j, c)];
                }
                let want = if acc > 0.0 { acc } else { acc.exp() - 1.0 };
                assert!((z[(i, c)] - want).abs() <= 1e-12);
            }
        }
        // attention mass off-edge is exactly zero
        for i in 0..n {
            for j in 0..n {
                if g.adjacency[(i, j)] == 0.0 {
                    assert_eq!(cache.attn[0][(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn variant_adjacency_effective_matrix_is_a() {
        let g = path_graph(2);
        let mut r = rng(13);
        let mut layer = InterGatLayer::new(2, 1, 2, 1, 1.0, VariantTag::Adjacency, &mut r);
        layer.build_variant(&g, None, None).unwrap();
        let prep = layer.prepare().unwrap();
        assert_eq!(prep.p[0], g.adjacency);
    }

    #[test]
    fn variant_spectral_block_single_cluster() {
        let labels = vec![0usize; 4];
        let m = clustered_adjacency(&labels);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m[(i, j)], if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn variant_spectral_block_multi_cluster_structure() {
        // pre-training: effective matrix is block-diagonal in the partition
        let labels = vec![0usize, 0, 0, 1, 1, 2, 2, 2];
        let graph = Graph::new(Mat::from_fn(8, 8, |i, j| if i != j { 1.0 } else { 0.0 })).unwrap();
        let mut rng = rng(31);
        let mut layer = InterGatLayer::new(8, 1, 2, 2, 1.0, VariantTag::SpectralBlock, &mut rng);
        layer.build_variant(&graph, None, Some(&labels)).unwrap();
        let prep = layer.prepare().unwrap();
        for p in &prep.p {
            for i in 0..8 {
                for j in 0..8 {
                    let expect = if i != j && labels[i] == labels[j] { 1.0 } else { 0.0 };
                    assert_eq!(p[(i, j)], expect);
                }
            }
        }
    }

    #[test]
    fn variant_covariance_perfectly_correlated_nodes() {
        // two nodes with x2 = 2*x1: C_12 = 2*var(x1)
        let mut s = SignalTensor::zeros(5, 2, 1);
        for t in 0..5 {
            let v = t as f64;
            s.set(t, 0, 0, v);
            s.set(t, 1, 0, 2.0 * v);
        }
        let c = node_covariance(&s, 5);
        let mean = 2.0;
        let var: f64 = (0..5).map(|t| (t as f64 - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((c[(0, 1)] - 2.0 * var).abs() <= 1e-12);
        assert_eq!(c[(0, 1)], c[(1, 0)]);
        assert!(c[(0, 0)] >= 0.0 && c[(1, 1)] >= 0.0);
    }

    #[test]
    fn variant_covariance_requires_signal() {
        let g = path_graph(3);
        let mut r = rng(14);
        let mut layer = InterGatLayer::new(3, 1, 2, 1, 1.0, VariantTag::WeightedCovariance, &mut r);
        assert!(layer.build_variant(&g, None, None).is_err());
    }

    #[test]
    fn dropout_rate_zero_and_eval_identity() {
        let mut r = rng(15);
        let m = dropout_mask(0.0, 3, 3, true, &mut r).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
        let m = dropout_mask(0.9, 3, 3, false, &mut r).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
        assert!(dropout_mask(1.0, 2, 2, true, &mut r).is_err());
    }

    #[test]
    fn dropout_keep_fraction_near_rate() {
        let mut r = rng(16);
        let m = dropout_mask(0.3, 100, 100, true, &mut r).unwrap();
        let kept = m.data().iter().filter(|&&v| v > 0.0).count() as f64 / 10_000.0;
        assert!((kept - 0.7).abs() <= 0.02, "kept {kept}");
        // inverted scaling
        for &v in m.data() {
            assert!(v == 0.0 || (v - 1.0 / 0.7).abs() <= 1e-12);
        }
    }
}
