//! Run configuration: JSON file, flag overrides, validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribute::{AttrTrainConfig, MtlWeights};
use crate::data::BucketScale;
use crate::error::{Error, Result};
use crate::hyper::{AestheticNetSpec, HyperTrainConfig, VariantKind, DEFAULT_HIDDEN};
use crate::nn::{AdamConfig, EmdForm, StepDecay};

/// Every tunable of a run. Defaults reproduce the reference setup: a
/// 1264-dim pooled embedding, a 512-wide attribute embedding, 20 styles,
/// 9 composition classes and 10 score buckets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub embedding_dim: usize,
    pub attribute_dim: usize,
    pub reduced_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub buckets: usize,
    /// Score of each bucket; `1..=buckets` when absent.
    pub bucket_values: Option<Vec<f64>>,
    pub styles: usize,
    pub comps: usize,

    pub batch_size: usize,
    pub attr_lr: f64,
    pub attr_epochs: usize,
    pub attr_decay_every: usize,
    pub attr_decay_factor: f64,
    pub style_weight: f64,
    pub comp_weight: f64,
    pub dropout: f64,
    pub comp_threshold: f64,

    pub hyper_lr: f64,
    pub hyper_epochs: usize,
    pub hyper_decay_every: usize,
    pub hyper_decay_factor: f64,
    pub emd_r: f64,
    pub emd_form: EmdForm,

    /// High/low cut on the mean score; the scale's default when absent.
    pub threshold: Option<f64>,
    pub variant: VariantKind,

    pub embeddings: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub attr_checkpoint: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let attr = AttrTrainConfig::default();
        let hyper = HyperTrainConfig::default();
        RunConfig {
            seed: 0,
            embedding_dim: crate::data::mlsp::DEFAULT_EMBEDDING_DIM,
            attribute_dim: attr.width,
            reduced_dim: 64,
            hidden_dims: DEFAULT_HIDDEN.to_vec(),
            buckets: 10,
            bucket_values: None,
            styles: 20,
            comps: 9,
            batch_size: attr.batch_size,
            attr_lr: attr.adam.lr,
            attr_epochs: attr.epochs,
            attr_decay_every: attr.decay.every,
            attr_decay_factor: attr.decay.factor,
            style_weight: attr.weights.style,
            comp_weight: attr.weights.composition,
            dropout: attr.dropout,
            comp_threshold: attr.comp_threshold,
            hyper_lr: hyper.adam.lr,
            hyper_epochs: hyper.epochs,
            hyper_decay_every: hyper.decay.every,
            hyper_decay_factor: hyper.decay.factor,
            emd_r: hyper.emd_r,
            emd_form: hyper.emd_form,
            threshold: None,
            variant: VariantKind::Full,
            embeddings: None,
            attributes: None,
            scores: None,
            split: None,
            attr_checkpoint: None,
            model: None,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Merges the non-null fields of a JSON object over this config.
    pub fn merge(&self, overrides: serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(self).expect("config serializes");
        let (Some(obj), serde_json::Value::Object(over)) = (base.as_object_mut(), overrides) else {
            return Err(Error::Config("overrides must be a JSON object".into()));
        };
        for (k, v) in over {
            if !v.is_null() {
                obj.insert(k, v);
            }
        }
        serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embedding_dim", self.embedding_dim),
            ("attribute_dim", self.attribute_dim),
            ("reduced_dim", self.reduced_dim),
            ("styles", self.styles),
            ("comps", self.comps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims must be positive".into()));
        }
        for (name, lr) in [("attr_lr", self.attr_lr), ("hyper_lr", self.hyper_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        for (name, f) in [
            ("attr_decay_factor", self.attr_decay_factor),
            ("hyper_decay_factor", self.hyper_decay_factor),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {f}")));
            }
        }
        if !(self.style_weight > 0.0 && self.comp_weight > 0.0) {
            return Err(Error::Config("style_weight and comp_weight must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.emd_r >= 1.0 && self.emd_r.is_finite()) {
            return Err(Error::Config(format!("emd_r must be >= 1, got {}", self.emd_r)));
        }
        self.scale()?;
        self.spec()?;
        Ok(())
    }

    pub fn scale(&self) -> Result<BucketScale> {
        match &self.bucket_values {
            Some(v) => {
                if v.len() != self.buckets {
                    return Err(Error::Config(format!(
                        "bucket_values has {} entries but buckets = {}",
                        v.len(),
                        self.buckets
                    )));
                }
                BucketScale::new(v.clone())
            }
            None => BucketScale::unit(self.buckets),
        }
    }

    pub fn threshold(&self) -> Result<f64> {
        Ok(match self.threshold {
            Some(t) => t,
            None => self.scale()?.default_threshold(),
        })
    }

    /// `[embedding_dim, hidden.., buckets]`.
    pub fn spec(&self) -> Result<AestheticNetSpec> {
        let mut dims = vec![self.embedding_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.buckets);
        AestheticNetSpec::new(dims)
    }

    pub fn attr_train(&self) -> AttrTrainConfig {
        AttrTrainConfig {
            width: self.attribute_dim,
            epochs: self.attr_epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.attr_lr,
                ..AdamConfig::default()
            },
            decay: StepDecay {
                every: self.attr_decay_every,
                factor: self.attr_decay_factor,
            },
            weights: MtlWeights {
                style: self.style_weight,
                composition: self.comp_weight,
            },
            dropout: self.dropout,
            comp_threshold: self.comp_threshold,
            seed: self.seed,
        }
    }

    pub fn hyper_train(&self) -> HyperTrainConfig {
        HyperTrainConfig {
            epochs: self.hyper_epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.hyper_lr,
                ..AdamConfig::default()
            },
            decay: StepDecay {
                every: self.hyper_decay_every,
                factor: self.hyper_decay_factor,
            },
            emd_r: self.emd_r,
            emd_form: self.emd_form,
            seed: self.seed,
        }
    }

    /// Writes `config.json` into `dir`. The output directory itself is
    /// left out so reruns into different directories match byte for byte.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.json");
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("out");
        let text = serde_json::to_string_pretty(&v).expect("config serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}
