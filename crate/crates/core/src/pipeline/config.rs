use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::AugmentSpec;
use crate::error::{HclError, Result};
use crate::hccd::HccdConfig;
use crate::hcid::{Aggregation, HcidConfig, ReliabilityMode};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SourceOnly,
    EntropyMin,
    PlainSt,
    InfonceSt,
    HcidOnly,
    HccdOnly,
    Hcl,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::SourceOnly,
        Method::EntropyMin,
        Method::PlainSt,
        Method::InfonceSt,
        Method::HcidOnly,
        Method::HccdOnly,
        Method::Hcl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SourceOnly => "source_only",
            Method::EntropyMin => "entropy_min",
            Method::PlainSt => "plain_st",
            Method::InfonceSt => "infonce_st",
            Method::HcidOnly => "hcid_only",
            Method::HccdOnly => "hccd_only",
            Method::Hcl => "hcl",
        }
    }

    pub(crate) fn uses_contrast(self) -> bool {
        matches!(self, Method::Hcl | Method::HcidOnly | Method::InfonceSt)
    }

    pub(crate) fn uses_self_training(self) -> bool {
        matches!(
            self,
            Method::Hcl | Method::HccdOnly | Method::PlainSt | Method::InfonceSt
        )
    }

    /// Whether self-training weights come from historical consistency.
    pub(crate) fn weights_by_history(self) -> bool {
        matches!(self, Method::Hcl | Method::HccdOnly)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HclError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HclError::config("run.method", format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcidSection {
    pub temperature: f64,
    pub reliability_floor: f64,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HccdSection {
    pub pseudo_fraction: f64,
    pub lambda_st: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySection {
    pub lag_m: usize,
    pub capacity: usize,
    pub pin_source_init: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimSection {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_power: f64,
    /// Learning rate of supervised source pretraining.
    pub pretrain_lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    TwoMoons,
    Blobs,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub kind: DataKind,
    /// Samples per domain.
    pub n: usize,
    pub noise: f64,
    pub source_rotation: f64,
    pub target_rotation: f64,
    /// Blob centers sit at `(+-separation/2, 0)`.
    pub blob_separation: f64,
    pub blob_scale: f64,
    pub target_shift: Vec<f64>,
    pub source_csv: Option<PathBuf>,
    pub target_csv: Option<PathBuf>,
    pub augment_noise: f64,
    pub augment_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub method: Method,
    pub freeze_classifier: bool,
    pub diagnostic_window: usize,
    pub source_ckpt: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Full description of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub model: ModelConfig,
    pub hcid: HcidSection,
    pub hccd: HccdSection,
    pub history: HistorySection,
    pub optim: OptimSection,
    pub data: DataSection,
    pub run: RunSection,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                hidden_dims: vec![16, 16],
                embed_dim: 8,
                num_classes: 2,
            },
            hcid: HcidSection {
                temperature: 0.07,
                reliability_floor: 1e-3,
                aggregation: Aggregation::Mean,
            },
            hccd: HccdSection {
                pseudo_fraction: 0.5,
                lambda_st: 1.0,
            },
            history: HistorySection {
                lag_m: 1,
                capacity: 2,
                pin_source_init: true,
            },
            optim: OptimSection {
                base_lr: 1e-3,
                momentum: 0.9,
                weight_decay: 5e-4,
                lr_power: 0.9,
                pretrain_lr: 1e-2,
            },
            data: DataSection {
                kind: DataKind::TwoMoons,
                n: 600,
                noise: 0.1,
                source_rotation: 0.0,
                target_rotation: 40.0,
                blob_separation: 4.0,
                blob_scale: 0.7,
                target_shift: vec![1.0, 1.0],
                source_csv: None,
                target_csv: None,
                augment_noise: 0.005,
                augment_jitter: 0.01,
            },
            run: RunSection {
                epochs: 30,
                pretrain_epochs: 50,
                batch_size: 32,
                seeds: vec![0, 1, 2, 3, 4],
                method: Method::Hcl,
                freeze_classifier: false,
                diagnostic_window: 3,
                source_ckpt: None,
                checkpoint: None,
            },
        }
    }
}

fn range_err(key: &str, reason: String) -> HclError {
    HclError::config(key, reason)
}

impl AdaptConfig {
    /// Checks every field against the range its home module accepts.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.hidden_dims.contains(&0) {
            return Err(range_err("model.hidden_dims", "dims must be >= 1".into()));
        }
        if m.embed_dim == 0 {
            return Err(range_err("model.embed_dim", "must be >= 1".into()));
        }
        if m.num_classes < 2 {
            return Err(range_err(
                "model.num_classes",
                format!("must be >= 2, got {}", m.num_classes),
            ));
        }
        self.hcid_config().validate()?;
        self.hccd_config().validate()?;
        if self.history.lag_m == 0 {
            return Err(range_err("history.lag_m", "must be >= 1".into()));
        }
        if self.history.capacity == 0 {
            return Err(range_err("history.capacity", "must be >= 1".into()));
        }
        let o = &self.optim;
        for (key, v) in [
            ("optim.base_lr", o.base_lr),
            ("optim.pretrain_lr", o.pretrain_lr),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(range_err(key, format!("must be > 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(range_err(
                "optim.momentum",
                format!("must lie in [0, 1), got {}", o.momentum),
            ));
        }
        if !(o.weight_decay >= 0.0) {
            return Err(range_err(
                "optim.weight_decay",
                format!("must be >= 0, got {}", o.weight_decay),
            ));
        }
        if !(o.lr_power > 0.0) {
            return Err(range_err(
                "optim.lr_power",
                format!("must be > 0, got {}", o.lr_power),
            ));
        }
        let d = &self.data;
        if d.kind != DataKind::Csv && d.n < 2 {
            return Err(range_err("data.n", format!("must be >= 2, got {}", d.n)));
        }
        for (key, v) in [
            ("data.noise", d.noise),
            ("data.blob_scale", d.blob_scale),
            ("data.augment_noise", d.augment_noise),
            ("data.augment_jitter", d.augment_jitter),
        ] {
            if !(v >= 0.0) {
                return Err(range_err(key, format!("must be >= 0, got {v}")));
            }
        }
        if d.kind == DataKind::Blobs && d.target_shift.len() != 2 {
            return Err(range_err(
                "data.target_shift",
                "blob shift must have 2 components".into(),
            ));
        }
        if d.kind == DataKind::Csv && (d.source_csv.is_none() && d.target_csv.is_none()) {
            return Err(range_err(
                "data.target_csv",
                "csv data needs data.source_csv or data.target_csv".into(),
            ));
        }
        let r = &self.run;
        if r.batch_size < 2 {
            return Err(range_err(
                "run.batch_size",
                format!("must be >= 2, got {}", r.batch_size),
            ));
        }
        if r.seeds.is_empty() {
            return Err(range_err("run.seeds", "must list at least one seed".into()));
        }
        if r.diagnostic_window == 0 {
            return Err(range_err("run.diagnostic_window", "must be >= 1".into()));
        }
        Ok(())
    }

    pub fn model_spec(&self, input_dim: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden_dims: self.model.hidden_dims.clone(),
            embed_dim: self.model.embed_dim,
            num_classes: self.model.num_classes,
        }
    }

    pub fn hcid_config(&self) -> HcidConfig {
        HcidConfig {
            temperature: self.hcid.temperature,
            aggregation: self.hcid.aggregation,
            reliability_floor: self.hcid.reliability_floor,
            reliability: ReliabilityMode::Entropy,
        }
    }

    pub fn hccd_config(&self) -> HccdConfig {
        HccdConfig {
            pseudo_fraction: self.hccd.pseudo_fraction,
            lambda_st: self.hccd.lambda_st,
        }
    }

    pub fn augment_spec(&self) -> AugmentSpec {
        AugmentSpec {
            noise_sigma: self.data.augment_noise,
            scale_jitter: self.data.augment_jitter,
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config is always serializable");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
