//! The assembled forecaster: spatial encoder (interaction layer or masked
//! attention baseline), per-node GRU over the embedded sequence, linear
//! readout, and iterative multi-step decoding where each fed-back prediction
//! is re-embedded through the same spatial layer.
//!
//! Backward is hand-derived and walks the recorded forward caches in exact
//! reverse order; it is checked end-to-end against central finite
//! differences in the acceptance suite.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numkern::{GradStore, Mat};
use crate::spatial::{
    dropout_mask, BaseGatLayer, GatEmbedCache, InterEmbedCache, InterGatLayer, PreparedInteraction,
    SpatialError, VariantTag,
};
use crate::temporal::{Decoder, GruCell, GruStepCache, TemporalError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error("decode needs {want} ground-truth frames for teacher forcing, got {got}")]
    MissingGroundTruth { want: usize, got: usize },
    #[error("non-finite values in `{0}` during forward pass")]
    NonFinite(String),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub nodes: usize,
    pub features: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub gru_hidden: usize,
    pub variant: VariantTag,
    pub elu_alpha: f64,
    pub leaky_slope: f64,
    pub dropout: f64,
}

impl ModelConfig {
    /// Published defaults: 4 heads of dim 32, GRU hidden 128, ELU alpha 1,
    /// leaky slope 0.2, dropout 0.3.
    pub fn defaults(nodes: usize) -> Self {
        ModelConfig {
            nodes,
            features: 1,
            heads: 4,
            head_dim: 32,
            gru_hidden: 128,
            variant: VariantTag::LearnableSym,
            elu_alpha: 1.0,
            leaky_slope: 0.2,
            dropout: 0.3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SpatialEncoder {
    Inter(InterGatLayer),
    Base(BaseGatLayer),
}

impl SpatialEncoder {
    pub fn out_features(&self) -> usize {
        match self {
            SpatialEncoder::Inter(l) => l.out_features(),
            SpatialEncoder::Base(l) => l.out_features(),
        }
    }
}

pub enum SpatialCache {
    Inter(InterEmbedCache),
    Base(GatEmbedCache),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub spatial: SpatialEncoder,
    pub gru: GruCell,
    pub decoder: Decoder,
}

/// Per-sequence forward record, consumed by [`Model::backward`].
pub struct ForwardRecord {
    prep: Option<PreparedInteraction>,
    encode_spatial: Vec<SpatialCache>,
    encode_masks: Vec<Mat>,
    encode_gru: Vec<GruStepCache>,
    /// Hidden state at each readout (index 0 is the encoder's final state).
    readout_h: Vec<Mat>,
    decode_spatial: Vec<SpatialCache>,
    decode_masks: Vec<Mat>,
    decode_gru: Vec<GruStepCache>,
    /// Whether feedback step τ fed ground truth (true) or the prediction.
    forced: Vec<bool>,
}

impl Model {
    pub fn new(config: ModelConfig, adjacency_graph: &crate::graphio::Graph, rng: &mut ChaCha8Rng) -> Self {
        let spatial = if config.variant == VariantTag::None {
            SpatialEncoder::Base(BaseGatLayer::new(
                adjacency_graph,
                config.features,
                config.head_dim,
                config.heads,
                config.leaky_slope,
                config.elu_alpha,
                rng,
            ))
        } else {
            SpatialEncoder::Inter(InterGatLayer::new(
                config.nodes,
                config.features,
                config.head_dim,
                config.heads,
                config.elu_alpha,
                config.variant,
                rng,
            ))
        };
        let embed_dim = spatial.out_features();
        let gru = GruCell::new(embed_dim, config.gru_hidden, rng);
        let decoder = Decoder::new(config.gru_hidden, config.features, rng);
        Model {
            config,
            spatial,
            gru,
            decoder,
        }
    }

    /// Attach the fixed or seeded support for non-learnable variants. A
    /// no-op for the base GAT and the fully learnable variant.
    pub fn build_variant(
        &mut self,
        graph: &crate::graphio::Graph,
        train_signal: Option<(&crate::graphio::SignalTensor, usize)>,
        cluster_labels: Option<&[usize]>,
    ) -> Result<(), ModelError> {
        if let SpatialEncoder::Inter(l) = &mut self.spatial {
            l.build_variant(graph, train_signal, cluster_labels)?;
        }
        Ok(())
    }

    fn embed(
        &self,
        prep: &Option<PreparedInteraction>,
        x: &Mat,
    ) -> Result<(Mat, SpatialCache), ModelError> {
        match &self.spatial {
            SpatialEncoder::Inter(l) => {
                let (z, c) = l.embed(prep.as_ref().expect("prepared interaction"), x)?;
                Ok((z, SpatialCache::Inter(c)))
            }
            SpatialEncoder::Base(l) => {
                let (z, c) = l.embed(x)?;
                Ok((z, SpatialCache::Base(c)))
            }
        }
    }

    /// Full sequence forward: encode `inputs`, then decode `horizon` steps.
    /// `forced[τ]` (length horizon−1) selects teacher forcing for the input
    /// of decode step τ+1; `targets` must cover every forced step. Dropout
    /// is sampled from `rng` when `training` and `dropout > 0`.
    pub fn run(
        &self,
        inputs: &[Mat],
        horizon: usize,
        targets: Option<&[Mat]>,
        forced: &[bool],
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Mat>, ForwardRecord), ModelError> {
        let prep = match &self.spatial {
            SpatialEncoder::Inter(l) => Some(l.prepare()?),
            SpatialEncoder::Base(_) => None,
        };
        let n = self.config.nodes;
        let embed_dim = self.spatial.out_features();
        let rate = if training { self.config.dropout } else { 0.0 };

        let mut encode_spatial = Vec::new();
        let mut encode_masks = Vec::new();
        let mut embedded = Vec::new();
        for x in inputs {
            let (z, cache) = self.embed(&prep, x)?;
            let mask = dropout_mask(rate, n, embed_dim, training, rng)?;
            embedded.push(z.hadamard(&mask));
            encode_spatial.push(cache);
            encode_masks.push(mask);
        }
        let (mut h, encode_gru) = self.gru.encode(&embedded)?;

        if forced.iter().any(|&f| f) {
            let got = targets.map(|t| t.len()).unwrap_or(0);
            if got < horizon {
                return Err(ModelError::MissingGroundTruth { want: horizon, got });
            }
        }

        let mut preds = Vec::with_capacity(horizon);
        let mut readout_h = vec![h.clone()];
        let mut decode_spatial = Vec::new();
        let mut decode_masks = Vec::new();
        let mut decode_gru = Vec::new();
        let mut forced_used = Vec::new();
        for tau in 0..horizon {
            let pred = self.decoder.forward(&h);
            if !pred.is_finite() {
                return Err(ModelError::NonFinite(format!("prediction step {tau}")));
            }
            preds.push(pred);
            if tau + 1 == horizon {
                break;
            }
            let force = forced.get(tau).copied().unwrap_or(false);
            let feed = if force {
                targets.expect("checked above")[tau].clone()
            } else {
                preds[tau].clone()
            };
            forced_used.push(force);
            let (z, cache) = self.embed(&prep, &feed)?;
            let mask = dropout_mask(rate, n, embed_dim, training, rng)?;
            let (next, gcache) = self.gru.step(&z.hadamard(&mask), &h)?;
            h = next;
            readout_h.push(h.clone());
            decode_spatial.push(cache);
            decode_masks.push(mask);
            decode_gru.push(gcache);
        }

        Ok((
            preds,
            ForwardRecord {
                prep,
                encode_spatial,
                encode_masks,
                encode_gru,
                readout_h,
                decode_spatial,
                decode_masks,
                decode_gru,
                forced: forced_used,
            },
        ))
    }

    /// Convenience eval-mode prediction.
    pub fn predict(&self, inputs: &[Mat], horizon: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Mat>, ModelError> {
        Ok(self.run(inputs, horizon, None, &[], false, rng)?.0)
    }

    /// Backward through one recorded forward pass. `d_preds` is dLoss/dpred
    /// per decode step. Returns accumulated parameter gradients.
    pub fn backward(&self, record: &ForwardRecord, d_preds: &[Mat]) -> GradStore {
        let mut grads = GradStore::new();
        let horizon = d_preds.len();
        let mut dp_accum: Vec<Mat> = match &self.spatial {
            SpatialEncoder::Inter(l) => l
                .heads
                .iter()
                .map(|_| Mat::zeros(self.config.nodes, self.config.nodes))
                .collect(),
            SpatialEncoder::Base(_) => Vec::new(),
        };

        let hidden = self.config.gru_hidden;
        let mut dh = Mat::zeros(self.config.nodes, hidden);
        // gradient flowing into the prediction that was fed back at step τ
        let mut pending_dfeed: Option<Mat> = None;
        for tau in (0..horizon).rev() {
            let mut dpred = d_preds[tau].clone();
            if let Some(extra) = pending_dfeed.take() {
                dpred.add_assign(&extra);
            }
            dh.add_assign(&self.decoder.backward(&record.readout_h[tau], &dpred, "dec", &mut grads));
            if tau == 0 {
                break;
            }
            let step = tau - 1; // decode feedback step index
            let (d_embedded, dh_prev) =
                self.gru
                    .step_backward(&record.decode_gru[step], &dh, "gru", &mut grads);
            let d_z = d_embedded.hadamard(&record.decode_masks[step]);
            let dfeed = self.backward_embed(record, &record.decode_spatial[step], &d_z, &mut grads, &mut dp_accum);
            if !record.forced[step] {
                pending_dfeed = Some(dfeed);
            }
            dh = dh_prev;
        }

        for t in (0..record.encode_gru.len()).rev() {
            let (d_embedded, dh_prev) =
                self.gru
                    .step_backward(&record.encode_gru[t], &dh, "gru", &mut grads);
            let d_z = d_embedded.hadamard(&record.encode_masks[t]);
            // dX of observed frames is discarded
            let _ = self.backward_embed(record, &record.encode_spatial[t], &d_z, &mut grads, &mut dp_accum);
            dh = dh_prev;
        }

        if let SpatialEncoder::Inter(l) = &self.spatial {
            let prep = record.prep.as_ref().expect("interaction prep in record");
            l.interaction_backward(prep, &dp_accum, "spatial", &mut grads);
        }
        grads
    }

    fn backward_embed(
        &self,
        record: &ForwardRecord,
        cache: &SpatialCache,
        grad: &Mat,
        grads: &mut GradStore,
        dp_accum: &mut [Mat],
    ) -> Mat {
        match (&self.spatial, cache) {
            (SpatialEncoder::Inter(l), SpatialCache::Inter(c)) => {
                let prep = record.prep.as_ref().expect("interaction prep in record");
                l.embed_backward(prep, c, grad, "spatial", grads, dp_accum)
            }
            (SpatialEncoder::Base(l), SpatialCache::Base(c)) => {
                l.embed_backward(c, grad, "spatial", grads)
            }
            _ => unreachable!("cache kind mismatch"),
        }
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Mat)) {
        match &self.spatial {
            SpatialEncoder::Inter(l) => l.visit_params("spatial", f),
            SpatialEncoder::Base(l) => l.visit_params("spatial", f),
        }
        self.gru.visit_params("gru", f);
        self.decoder.visit_params("dec", f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Mat)) {
        match &mut self.spatial {
            SpatialEncoder::Inter(l) => l.visit_params_mut("spatial", f),
            SpatialEncoder::Base(l) => l.visit_params_mut("spatial", f),
        }
        self.gru.visit_params_mut("gru", f);
        self.decoder.visit_params_mut("dec", f);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name));
        names
    }

    /// Names of the raw interaction parameters (the L1-penalized set).
    pub fn interaction_param_names(&self) -> Vec<String> {
        self.param_names()
            .into_iter()
            .filter(|n| n.ends_with(".inter"))
            .collect()
    }

    pub fn first_non_finite_param(&self) -> Option<String> {
        let mut found = None;
        self.visit_params(&mut |name, m| {
            if found.is_none() && !m.is_finite() {
                found = Some(name);
            }
        });
        found
    }
}
