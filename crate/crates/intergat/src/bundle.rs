//! Run configuration (TOML), versioned model checkpoints (JSON), and the
//! CSV/JSON artifacts a run directory contains.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::community::ContrastRow;
use crate::graphio::{Graph, NormRecord, SignalTensor};
use crate::model::{Model, ModelConfig, SpatialEncoder};
use crate::numkern::Mat;
use crate::spectra::SpectralReport;
use crate::trainer::{LossReport, MetricReport, OptimConfig, RuntimeReport};
use crate::spatial::VariantTag;
use crate::temporal::TeacherForcingPolicy;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config field {field}: {message}")]
    Config { field: String, message: String },
    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),
    #[error("checkpoint parse error: {0}")]
    CheckpointParse(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("checkpoint built for {ckpt_nodes} nodes x {ckpt_features} features, dataset has {data_nodes} x {data_features}")]
    Incompatible {
        ckpt_nodes: usize,
        ckpt_features: usize,
        data_nodes: usize,
        data_features: usize,
    },
    #[error("checkpoint contains no interaction matrices (base GAT variant)")]
    NoInteractions,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Where the signal comes from: the planted-community generator or CSV files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: String,
    pub nodes: usize,
    pub communities: usize,
    pub steps: usize,
    pub adjacency: Option<PathBuf>,
    pub speeds: Option<PathBuf>,
    pub zero_as_missing: bool,
    pub train_ratio: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: "synth".into(),
            nodes: 20,
            communities: 4,
            steps: 400,
            adjacency: None,
            speeds: None,
            zero_as_missing: false,
            train_ratio: 0.8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub heads: usize,
    pub head_dim: usize,
    pub gru_hidden: usize,
    pub variant: String,
    pub elu_alpha: f64,
    pub leaky_slope: f64,
    pub dropout: f64,
    /// Cluster count for the spectral-block variant.
    pub spectral_k: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            heads: 4,
            head_dim: 32,
            gru_hidden: 128,
            variant: "learnable_sym".into(),
            elu_alpha: 1.0,
            leaky_slope: 0.2,
            dropout: 0.3,
            spectral_k: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimSpec {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda_sparse: f64,
    /// off | always | scheduled
    pub teacher_forcing: String,
    pub tf_zero_epoch: usize,
}

impl Default for OptimSpec {
    fn default() -> Self {
        let o = OptimConfig::default();
        OptimSpec {
            learning_rate: o.learning_rate,
            weight_decay: o.weight_decay,
            batch_size: o.batch_size,
            max_epochs: o.max_epochs,
            patience: o.patience,
            lambda_sparse: o.lambda_sparse,
            teacher_forcing: "scheduled".into(),
            tf_zero_epoch: 50,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    pub history: usize,
    pub horizon: usize,
    pub seed: u64,
    pub seeds: usize,
    pub out: PathBuf,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            history: 12,
            horizon: 1,
            seed: 42,
            seeds: 1,
            out: PathBuf::from("runs/latest"),
        }
    }
}

/// Declarative run description; round-trips through TOML.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelSpec,
    pub optim: OptimSpec,
    pub run: RunSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, BundleError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BundleError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        let bad = |field: &str, message: &str| {
            Err(BundleError::Config {
                field: field.into(),
                message: message.into(),
            })
        };
        match self.data.source.as_str() {
            "synth" => {
                if self.data.communities < 2 {
                    return bad("data.communities", "need at least 2 communities");
                }
                if self.data.nodes < self.data.communities {
                    return bad("data.nodes", "fewer nodes than communities");
                }
            }
            "csv" => {
                if self.data.adjacency.is_none() {
                    return bad("data.adjacency", "csv source requires an adjacency path");
                }
                if self.data.speeds.is_none() {
                    return bad("data.speeds", "csv source requires a speeds path");
                }
            }
            other => {
                return bad("data.source", &format!("unknown source '{other}' (synth|csv)"));
            }
        }
        if !(0.0..1.0).contains(&self.data.train_ratio) || self.data.train_ratio <= 0.0 {
            return bad("data.train_ratio", "must lie in (0, 1)");
        }
        if VariantTag::parse(&self.model.variant).is_err() {
            return bad("model.variant", &format!("unknown variant '{}'", self.model.variant));
        }
        if self.model.heads == 0 || self.model.head_dim == 0 || self.model.gru_hidden == 0 {
            return bad("model.heads", "heads, head_dim, gru_hidden must be positive");
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return bad("model.dropout", "must lie in [0, 1)");
        }
        if self.optim.batch_size == 0 || self.optim.max_epochs == 0 {
            return bad("optim.batch_size", "batch_size and max_epochs must be positive");
        }
        if self.optim.learning_rate <= 0.0 {
            return bad("optim.learning_rate", "must be positive");
        }
        if self.optim.lambda_sparse < 0.0 || self.optim.weight_decay < 0.0 {
            return bad("optim.lambda_sparse", "penalties must be non-negative");
        }
        match self.optim.teacher_forcing.as_str() {
            "off" | "always" | "scheduled" => {}
            other => {
                return bad(
                    "optim.teacher_forcing",
                    &format!("unknown policy '{other}' (off|always|scheduled)"),
                );
            }
        }
        if self.run.history == 0 {
            return bad("run.history", "must be positive");
        }
        if self.run.horizon == 0 {
            return bad("run.horizon", "must be positive");
        }
        if self.run.seeds == 0 {
            return bad("run.seeds", "must be positive");
        }
        Ok(())
    }

    pub fn variant(&self) -> VariantTag {
        VariantTag::parse(&self.model.variant).expect("validated")
    }

    pub fn tf_policy(&self) -> TeacherForcingPolicy {
        match self.optim.teacher_forcing.as_str() {
            "off" => TeacherForcingPolicy::Off,
            "always" => TeacherForcingPolicy::Always,
            _ => TeacherForcingPolicy::Scheduled {
                p0: 1.0,
                zero_epoch: self.optim.tf_zero_epoch,
            },
        }
    }

    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            learning_rate: self.optim.learning_rate,
            weight_decay: self.optim.weight_decay,
            batch_size: self.optim.batch_size,
            max_epochs: self.optim.max_epochs,
            patience: self.optim.patience,
            lambda_sparse: self.optim.lambda_sparse,
        }
    }

    pub fn model_config(&self, nodes: usize, features: usize) -> ModelConfig {
        ModelConfig {
            nodes,
            features,
            heads: self.model.heads,
            head_dim: self.model.head_dim,
            gru_hidden: self.model.gru_hidden,
            variant: self.variant(),
            elu_alpha: self.model.elu_alpha,
            leaky_slope: self.model.leaky_slope,
            dropout: self.model.dropout,
        }
    }
}

/// Everything needed to restore and evaluate a trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub model: Model,
    pub adjacency: Mat,
    pub norm: NormRecord,
}

impl Checkpoint {
    pub fn new(config: RunConfig, model: Model, graph: &Graph, norm: NormRecord) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config,
            model,
            adjacency: graph.adjacency.clone(),
            norm,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), BundleError> {
        let text = serde_json::to_string(self)?;
        write_file(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self, BundleError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(BundleError::Version(ckpt.version));
        }
        Ok(ckpt)
    }

    pub fn check_compatible(&self, signal: &SignalTensor) -> Result<(), BundleError> {
        let c = &self.model.config;
        if c.nodes != signal.nodes || c.features != signal.features {
            return Err(BundleError::Incompatible {
                ckpt_nodes: c.nodes,
                ckpt_features: c.features,
                data_nodes: signal.nodes,
                data_features: signal.features,
            });
        }
        Ok(())
    }

    /// Analysis view of the learned interaction matrices: symmetrized raw or
    /// processed row-stochastic, per head.
    pub fn interaction_matrices(&self, raw: bool) -> Result<Vec<Mat>, BundleError> {
        match &self.model.spatial {
            SpatialEncoder::Inter(l) => {
                let mats = if raw {
                    l.symmetrized_raw()
                } else {
                    l.processed().map_err(|_| BundleError::NoInteractions)?
                };
                if mats.is_empty() {
                    Err(BundleError::NoInteractions)
                } else {
                    Ok(mats)
                }
            }
            SpatialEncoder::Base(_) => Err(BundleError::NoInteractions),
        }
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), BundleError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    fs::write(path, content).map_err(io_err(path))
}

/// loss.csv: per-epoch loss decomposition and validation MAE.
pub fn write_loss_csv(path: &Path, losses: &[LossReport]) -> Result<(), BundleError> {
    let mut out = String::from("epoch,task_loss,sparse_loss,total_loss,val_mae\n");
    for l in losses {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            l.epoch, l.task_loss, l.sparse_loss, l.total_loss, l.val_mae
        ));
    }
    write_file(path, &out)
}

/// series.csv: per-epoch sparsity and Frobenius norm per head.
pub fn write_series_csv(path: &Path, losses: &[LossReport]) -> Result<(), BundleError> {
    let mut out = String::from("epoch,head,sparsity,frobenius\n");
    for l in losses {
        for (h, (s, f)) in l.sparsity_per_head.iter().zip(&l.frobenius_per_head).enumerate() {
            out.push_str(&format!("{},{},{},{}\n", l.epoch, h, s, f));
        }
    }
    write_file(path, &out)
}

pub fn write_runtime_json(path: &Path, runtime: &RuntimeReport) -> Result<(), BundleError> {
    write_file(path, &serde_json::to_string_pretty(runtime).expect("serializes"))
}

pub fn write_metrics_json(path: &Path, metrics: &MetricReport) -> Result<(), BundleError> {
    write_file(path, &serde_json::to_string_pretty(metrics).expect("serializes"))
}

/// spectrum_head{h}.csv: one row per eigenmode.
pub fn write_spectral_csv(path: &Path, report: &SpectralReport) -> Result<(), BundleError> {
    let mut out = String::from("mode,eigenvalue,ipr,dirichlet\n");
    for (i, ((ev, ipr), dir)) in report
        .eigenvalues
        .iter()
        .zip(&report.ipr_per_mode)
        .zip(&report.dirichlet_per_mode)
        .enumerate()
    {
        out.push_str(&format!("{i},{ev},{ipr},{dir}\n"));
    }
    write_file(path, &out)
}

/// contrast_{name}.csv: one row per k.
pub fn write_contrast_csv(path: &Path, rows: &[ContrastRow]) -> Result<(), BundleError> {
    let mut out = String::from("k,mu_intra,mu_inter,sigma_intra,sigma_inter,contrast,std,degenerate\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.k, r.mu_intra, r.mu_inter, r.sigma_intra, r.sigma_inter, r.contrast, r.std, r.degenerate
        ));
    }
    write_file(path, &out)
}

/// heatmap_head{h}.csv: entries whose magnitude falls in the top
/// `top_percent` of off-diagonal values; pass 100 to keep everything.
pub fn write_heatmap_csv(path: &Path, m: &Mat, top_percent: f64) -> Result<(), BundleError> {
    let n = m.rows();
    let mut mags: Vec<f64> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                mags.push(m[(i, j)].abs());
            }
        }
    }
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let keep = ((mags.len() as f64 * top_percent / 100.0).ceil() as usize).clamp(1, mags.len().max(1));
    let threshold = if mags.is_empty() { 0.0 } else { mags[keep - 1] };
    let mut out = String::from("i,j,value\n");
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)].abs() >= threshold {
                out.push_str(&format!("{},{},{}\n", i, j, m[(i, j)]));
            }
        }
    }
    write_file(path, &out)
}

/// summary.csv: per-head mean and std of Contrast_k plus spectral scalars.
pub fn write_summary_csv(
    path: &Path,
    rows: &[(String, f64, f64, f64, usize)],
) -> Result<(), BundleError> {
    let mut out = String::from("matrix,contrast_mean,contrast_std,sparsity,rank\n");
    for (name, mean, std, sparsity, rank) in rows {
        out.push_str(&format!("{name},{mean},{std},{sparsity},{rank}\n"));
    }
    write_file(path, &out)
}

/// ablation.csv: variant comparison sorted by MAE ascending.
pub fn write_ablation_csv(path: &Path, rows: &[(String, MetricReport)]) -> Result<(), BundleError> {
    let mut sorted: Vec<&(String, MetricReport)> = rows.iter().collect();
    sorted.sort_by(|a, b| a.1.mae.partial_cmp(&b.1.mae).unwrap());
    let mut out = String::from("variant,mae,rmse,accuracy,r_squared,explained_variance\n");
    for (name, m) in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            name, m.mae, m.rmse, m.accuracy, m.r_squared, m.explained_variance
        ));
    }
    write_file(path, &out)
}

/// aggregate.csv: mean ± std of each metric over multi-seed runs.
pub fn write_aggregate_csv(path: &Path, per_seed: &[(u64, MetricReport)]) -> Result<(), BundleError> {
    let mut out = String::from("seed,mae,rmse,accuracy,r_squared,explained_variance\n");
    for (seed, m) in per_seed {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            seed, m.mae, m.rmse, m.accuracy, m.r_squared, m.explained_variance
        ));
    }
    let stats = |get: &dyn Fn(&MetricReport) -> f64| {
        let vals: Vec<f64> = per_seed.iter().map(|(_, m)| get(m)).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        (mean, std)
    };
    let (mae_m, mae_s) = stats(&|m| m.mae);
    let (rmse_m, rmse_s) = stats(&|m| m.rmse);
    let (acc_m, acc_s) = stats(&|m| m.accuracy);
    let (r2_m, r2_s) = stats(&|m| m.r_squared);
    let (ev_m, ev_s) = stats(&|m| m.explained_variance);
    out.push_str(&format!("mean,{mae_m},{rmse_m},{acc_m},{r2_m},{ev_m}\n"));
    out.push_str(&format!("std,{mae_s},{rmse_s},{acc_s},{r2_s},{ev_s}\n"));
    write_file(path, &out)
}

/// Append a line to a plain-text log inside the run directory.
pub fn append_log(path: &Path, line: &str) -> Result<(), BundleError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    writeln!(f, "{line}").map_err(io_err(path))
}
