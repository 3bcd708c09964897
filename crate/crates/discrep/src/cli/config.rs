//! Run configuration: one TOML document drives every subcommand.
//!
//! Every field has a default, unknown keys are rejected, and all phase
//! seeds are derived from the single master seed by labeled hashing, so
//! adding a phase never perturbs the randomness of earlier phases.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::MeasureConfig;
use crate::models::DiscConfig;
use crate::nnet::TrainConfig;
use crate::{Error, Result};

/// Top-level configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub source: SourceBlock,
    pub lm: LmBlock,
    pub disc: DiscBlock,
    pub measure: MeasureBlock,
    pub hw: HwBlock,
    pub gan: GanBlock,
    pub eval: EvalBlock,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            master_seed: 42,
            out_dir: PathBuf::from("out"),
            source: SourceBlock::default(),
            lm: LmBlock::default(),
            disc: DiscBlock::default(),
            measure: MeasureBlock::default(),
            hw: HwBlock::default(),
            gan: GanBlock::default(),
            eval: EvalBlock::default(),
        }
    }
}

/// Synthetic ground-truth source and corpus sizing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceBlock {
    pub vocab_size: usize,
    pub order: usize,
    pub l_max: usize,
    pub concentration: f64,
    /// Samples per side wherever a real and a generated set are compared.
    pub n_per_side: usize,
    /// Fraction held out of each side, halved into dev and test.
    pub dev_fraction: f64,
}

impl Default for SourceBlock {
    fn default() -> SourceBlock {
        SourceBlock {
            vocab_size: 5,
            order: 1,
            l_max: 6,
            concentration: 0.8,
            n_per_side: 800,
            dev_fraction: 0.25,
        }
    }
}

/// Shared shape of the per-model training blocks. Omitting the block keeps
/// the parent's defaults; overriding it requires every field.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl TrainBlock {
    /// Materializes a [`TrainConfig`] around a derived seed.
    pub fn to_train_config(self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            seed,
            patience: self.patience,
        }
    }
}

/// Generator architecture and pre-training schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmBlock {
    pub embed_dim: usize,
    pub hidden: usize,
    pub train: TrainBlock,
}

impl Default for LmBlock {
    fn default() -> LmBlock {
        LmBlock {
            embed_dim: 10,
            hidden: 16,
            train: TrainBlock { lr: 0.01, batch_size: 32, max_epochs: 300, patience: 30 },
        }
    }
}

/// Discriminator architecture and training schedule, reused by every phase
/// that trains a classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscBlock {
    pub embed_dim: usize,
    pub filters: usize,
    pub hidden: usize,
    /// `conv` or `recurrent`.
    pub encoder: String,
    pub train: TrainBlock,
}

impl Default for DiscBlock {
    fn default() -> DiscBlock {
        DiscBlock {
            embed_dim: 10,
            filters: 8,
            hidden: 16,
            encoder: "conv".into(),
            train: TrainBlock { lr: 0.02, batch_size: 32, max_epochs: 150, patience: 20 },
        }
    }
}

impl DiscBlock {
    pub fn to_disc_config(&self) -> Result<DiscConfig> {
        Ok(DiscConfig {
            embed_dim: self.embed_dim,
            filters: self.filters,
            hidden: self.hidden,
            encoder: self.encoder.parse()?,
        })
    }
}

/// Measurement and reporting knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureBlock {
    pub resamples: usize,
    pub ema_alpha: f64,
    pub threshold: f64,
    /// Also compute exact enumeration statistics next to the estimate.
    pub oracle: bool,
    /// Draw the "generated" side from the source too, as a null control.
    pub control: bool,
    /// Refuse oracle enumeration beyond this support size.
    pub support_cap: usize,
}

impl Default for MeasureBlock {
    fn default() -> MeasureBlock {
        MeasureBlock {
            resamples: 200,
            ema_alpha: 0.1,
            threshold: 0.5,
            oracle: false,
            control: false,
            support_cap: 10_000_000,
        }
    }
}

/// Score-band selection grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HwBlock {
    pub multipliers: Vec<f64>,
    pub fine_tune_epochs: usize,
}

impl Default for HwBlock {
    fn default() -> HwBlock {
        HwBlock { multipliers: vec![0.1, 0.5, 1.0, 2.0, 5.0], fine_tune_epochs: 3 }
    }
}

/// Adversarial round schedule, shared by both loop variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanBlock {
    pub rounds: usize,
    pub g_steps: usize,
    pub d_steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Gumbel-softmax temperature for the relaxed loop.
    pub temperature: f64,
}

impl Default for GanBlock {
    fn default() -> GanBlock {
        GanBlock { rounds: 10, g_steps: 20, d_steps: 15, batch: 32, lr: 0.005, temperature: 100.0 }
    }
}

/// Third-party evaluation sizing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    pub n_per_side: usize,
}

impl Default for EvalBlock {
    fn default() -> EvalBlock {
        EvalBlock { n_per_side: 600 }
    }
}

impl RunConfig {
    /// Parses a TOML document, filling omitted fields with defaults and
    /// rejecting unknown keys.
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        RunConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.source.vocab_size == 0 {
            return Err(Error::Param("source.vocab_size must be positive".into()));
        }
        if self.source.l_max == 0 {
            return Err(Error::Param("source.l_max must be positive".into()));
        }
        if !(self.source.dev_fraction > 0.0 && self.source.dev_fraction < 1.0) {
            return Err(Error::Param(format!(
                "source.dev_fraction must be in (0,1), got {}",
                self.source.dev_fraction
            )));
        }
        if self.source.n_per_side < 16 {
            return Err(Error::Param("source.n_per_side must be at least 16".into()));
        }
        if self.eval.n_per_side < 16 {
            return Err(Error::Param("eval.n_per_side must be at least 16".into()));
        }
        self.disc.to_disc_config()?;
        Ok(())
    }

    /// Measurement recipe assembled from the discriminator and measure
    /// blocks; the training seed is overridden wherever it is used.
    pub fn measure_config(&self) -> Result<MeasureConfig> {
        Ok(MeasureConfig {
            disc: self.disc.to_disc_config()?,
            train: self.disc.train.to_train_config(0),
            dev_fraction: self.source.dev_fraction,
            threshold: self.measure.threshold,
            resamples: self.measure.resamples,
        })
    }
}
