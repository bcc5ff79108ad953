//! Experiment configuration: file-based defaults with flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lbd::data::{ParseFormat, RatingScale};
use lbd::lbd::{BiasScheme, Binning, ConfidenceFn, LbdConfig};
use lbd::model::ModelKind;
use lbd::train::{L2Scheme, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub n: usize,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self { r_min: 0.5, r_max: 5.0, n: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbdOptions {
    pub confidence_fn: ConfidenceFn,
    pub bias_scheme: BiasScheme,
    pub epsilon: f64,
    pub mu_clamp: f64,
    pub separate_embeddings: bool,
}

impl Default for LbdOptions {
    fn default() -> Self {
        let d = LbdConfig::default();
        Self {
            confidence_fn: d.confidence_fn,
            bias_scheme: d.bias_scheme,
            epsilon: d.epsilon,
            mu_clamp: d.mu_clamp,
            separate_embeddings: d.separate_embeddings,
        }
    }
}

/// The resolved experiment configuration; every artifact embeds its hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Rating log path; relative paths resolve under `$LBD_DATA_DIR` when set.
    pub data: Option<PathBuf>,
    /// "delimited" or "csv".
    pub format: String,
    pub separator: String,
    pub scale: ScaleConfig,
    pub folds: usize,
    pub seed: u64,
    pub model: Option<ModelKind>,
    pub out_dir: Option<PathBuf>,
    /// Embedding dimension shared by all model kinds.
    pub embedding_dim: usize,
    pub lbd: LbdOptions,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            format: "delimited".into(),
            separator: "::".into(),
            scale: ScaleConfig::default(),
            folds: 10,
            seed: 42,
            model: None,
            out_dir: None,
            embedding_dim: 512,
            lbd: LbdOptions::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .with_context(|| format!("invalid JSON config {}", path.display()))?,
            _ => toml::from_str(&text)
                .with_context(|| format!("invalid TOML config {}", path.display()))?,
        };
        Ok(config)
    }

    pub fn parse_format(&self) -> Result<ParseFormat> {
        match self.format.as_str() {
            "delimited" => Ok(ParseFormat::Delimited { separator: self.separator.clone() }),
            "csv" => Ok(ParseFormat::Csv),
            other => bail!("unknown data format {other:?} (expected delimited or csv)"),
        }
    }

    pub fn rating_scale(&self) -> Result<RatingScale> {
        Ok(RatingScale::new(self.scale.r_min, self.scale.r_max, self.scale.n)?)
    }

    /// Data path with `$LBD_DATA_DIR` applied to relative paths.
    pub fn data_path(&self) -> Result<PathBuf> {
        let data = self.data.clone().context("no data path configured (--data or config)")?;
        if data.is_relative() {
            if let Ok(dir) = std::env::var("LBD_DATA_DIR") {
                return Ok(PathBuf::from(dir).join(data));
            }
        }
        Ok(data)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out_dir.as_deref().context("no output directory configured (--out or config)")
    }

    pub fn model(&self) -> Result<ModelKind> {
        self.model.context("no model kind configured (--model or config)")
    }

    /// The full beta-model config for a given binning (from the model kind).
    pub fn lbd_config(&self, binning: Binning) -> LbdConfig {
        LbdConfig {
            embedding_dim: self.embedding_dim,
            confidence_fn: self.lbd.confidence_fn,
            bias_scheme: self.lbd.bias_scheme,
            binning,
            epsilon: self.lbd.epsilon,
            mu_clamp: self.lbd.mu_clamp,
            separate_embeddings: self.lbd.separate_embeddings,
        }
    }

    /// Short hash of the canonical JSON form, embedded in every artifact.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(16);
        for b in &digest[..8] {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

/// Flag overrides shared by all subcommands.
#[derive(Debug, Clone, clap::Args)]
pub struct Overrides {
    /// Configuration file (TOML or JSON); flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Rating log path (MovieLens-style delimited text or CSV).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Input format: delimited or csv.
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// Field separator for the delimited format.
    #[arg(long, global = true)]
    pub separator: Option<String>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Minimum rating value.
    #[arg(long, global = true)]
    pub scale_min: Option<f64>,
    /// Maximum rating value.
    #[arg(long, global = true)]
    pub scale_max: Option<f64>,
    /// Number of rating values on the scale.
    #[arg(long, global = true)]
    pub scale_n: Option<usize>,
    /// Number of cross-validation folds.
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Master seed for splitting, initialization, and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Model kind: mf, cmf, ordrec-u, ordrec-ui, lbd-s, lbd-a.
    #[arg(long, global = true)]
    pub model: Option<ModelKind>,
    /// Embedding dimension for all model kinds.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Learning rate.
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// L2 regularization weight (embeddings only).
    #[arg(long, global = true)]
    pub l2: Option<f64>,
    /// L2 scheme: uniform or frequency-proportional.
    #[arg(long, global = true)]
    pub l2_scheme: Option<String>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    /// Confidence function: norm, sum, or dot.
    #[arg(long, global = true)]
    pub confidence_fn: Option<String>,
    /// Bias scheme: none, alpha-beta, or mu-nu.
    #[arg(long, global = true)]
    pub bias_scheme: Option<String>,
    /// Use separate embeddings for preference and confidence.
    #[arg(long, global = true)]
    pub separate_embeddings: bool,
    /// Worker threads for gradient shards (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Force fixed-order gradient reduction. Reductions in this binary are
    /// always fixed-order, so this flag only documents intent.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

impl Overrides {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &self.format {
            cfg.format = v.clone();
        }
        if let Some(v) = &self.separator {
            cfg.separator = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out_dir = Some(v.clone());
        }
        if let Some(v) = self.scale_min {
            cfg.scale.r_min = v;
        }
        if let Some(v) = self.scale_max {
            cfg.scale.r_max = v;
        }
        if let Some(v) = self.scale_n {
            cfg.scale.n = v;
        }
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
            cfg.train.seed = v;
        }
        if let Some(v) = self.model {
            cfg.model = Some(v);
        }
        if let Some(v) = self.dim {
            cfg.embedding_dim = v;
        }
        if let Some(v) = self.lr {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.l2 {
            cfg.train.l2_weight = v;
        }
        if let Some(v) = &self.l2_scheme {
            cfg.train.l2_scheme = match v.as_str() {
                "uniform" => L2Scheme::Uniform,
                "frequency-proportional" | "frequency_proportional" => {
                    L2Scheme::FrequencyProportional
                }
                other => bail!("unknown l2 scheme {other:?}"),
            };
        }
        if let Some(v) = self.patience {
            cfg.train.patience = v;
        }
        if let Some(v) = self.tolerance {
            cfg.train.tolerance = v;
        }
        if let Some(v) = &self.confidence_fn {
            cfg.lbd.confidence_fn = match v.as_str() {
                "norm" => ConfidenceFn::Norm,
                "sum" => ConfidenceFn::Sum,
                "dot" => ConfidenceFn::Dot,
                other => bail!("unknown confidence function {other:?}"),
            };
        }
        if let Some(v) = &self.bias_scheme {
            cfg.lbd.bias_scheme = match v.as_str() {
                "none" => BiasScheme::None,
                "alpha-beta" | "alpha_beta" => BiasScheme::AlphaBeta,
                "mu-nu" | "mu_nu" => BiasScheme::MuNu,
                other => bail!("unknown bias scheme {other:?}"),
            };
        }
        if self.separate_embeddings {
            cfg.lbd.separate_embeddings = true;
        }
        Ok(cfg)
    }
}

