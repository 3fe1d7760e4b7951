//! Experiment configuration: every knob of a training run, serializable to
//! TOML, hashable for run identity.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::data::{AugmentationPolicy, DegradeSpec, Degradation, PairMode, ViewKind};
use crate::loss::{NtXentParams, VicregParams};
use crate::model::{EncoderArch, EncoderSpec, ExpanderSpec};

/// Which SSL objective trains the pair of branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Vicreg,
    Simclr,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Vicreg => "vicreg",
            LossKind::Simclr => "simclr",
        })
    }
}

impl std::str::FromStr for LossKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vicreg" => Ok(LossKind::Vicreg),
            "simclr" => Ok(LossKind::Simclr),
            other => Err(TrainError::BadConfig {
                detail: format!("unknown loss `{other}` (expected vicreg or simclr)"),
            }),
        }
    }
}

/// The two downstream label spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Tissue,
    Cell,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Tissue => "tissue",
            TaskKind::Cell => "cell",
        })
    }
}

impl std::str::FromStr for TaskKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tissue" => Ok(TaskKind::Tissue),
            "cell" => Ok(TaskKind::Cell),
            other => Err(TrainError::BadConfig {
                detail: format!("unknown task `{other}` (expected tissue or cell)"),
            }),
        }
    }
}

/// Full description of one SSL pretraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub loss: LossKind,
    /// Asymmetric: branch A sees the sparse view, branch B the dense view.
    /// Symmetric: both branches see `symmetric_source`.
    pub asymmetric: bool,
    pub shared_weights: bool,
    pub degradation: Degradation,
    /// Parameters of the sparse-view construction.
    pub crop_px: usize,
    pub low_px: usize,
    /// Input fed to both branches of a symmetric pair.
    pub symmetric_source: ViewKind,
    pub encoder: EncoderArch,
    pub input_px: usize,
    pub expander_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    /// Warmup length as a fraction of one epoch's steps.
    pub warmup_fraction: f64,
    /// Fraction of the training split used (fixed subsample per run).
    pub fraction: f64,
    pub seed: u64,
    pub augment: AugmentationPolicy,
    pub vicreg: VicregParams,
    pub ntxent: NtXentParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Vicreg,
            asymmetric: true,
            shared_weights: false,
            degradation: Degradation::Downsample,
            crop_px: 32,
            low_px: 7,
            symmetric_source: ViewKind::Sparse,
            encoder: EncoderArch::DeskCnnSmall,
            input_px: 64,
            expander_dim: 512,
            epochs: 100,
            batch_size: 128,
            lr_max: 1e-4,
            warmup_fraction: 0.1,
            fraction: 1.0,
            seed: 0,
            augment: AugmentationPolicy::default(),
            vicreg: VicregParams::default(),
            ntxent: NtXentParams::default(),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale run: 10 epochs, batch 64, small encoder on 64 px tiles.
    pub fn desk(
        loss: LossKind,
        asymmetric: bool,
        shared_weights: bool,
        degradation: Degradation,
        seed: u64,
    ) -> Self {
        Self {
            loss,
            asymmetric,
            shared_weights,
            degradation,
            epochs: 10,
            batch_size: 64,
            seed,
            ..Self::default()
        }
    }

    pub fn pair_mode(&self) -> PairMode {
        if self.asymmetric {
            PairMode::Asymmetric
        } else {
            PairMode::Symmetric
        }
    }

    pub fn degrade_spec(&self) -> DegradeSpec {
        DegradeSpec {
            kind: self.degradation,
            crop_px: self.crop_px,
            low_px: self.low_px,
        }
    }

    pub fn encoder_spec(&self) -> Result<EncoderSpec, TrainError> {
        EncoderSpec::new(self.encoder, self.input_px).map_err(TrainError::Model)
    }

    pub fn expander_spec(&self) -> ExpanderSpec {
        ExpanderSpec {
            dim: self.expander_dim,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::BadConfig {
                detail: "epochs must be positive".into(),
            });
        }
        if self.batch_size < 2 {
            return Err(TrainError::BadConfig {
                detail: "batch size must be at least 2 (the losses need pairs)".into(),
            });
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(TrainError::BadConfig {
                detail: format!("dataset fraction {} outside (0, 1]", self.fraction),
            });
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction <= 1.0) {
            return Err(TrainError::BadConfig {
                detail: format!("warmup fraction {} outside (0, 1]", self.warmup_fraction),
            });
        }
        if !(self.lr_max.is_finite() && self.lr_max > 0.0) {
            return Err(TrainError::BadConfig {
                detail: format!("lr_max {} must be positive", self.lr_max),
            });
        }
        self.encoder_spec()?;
        self.augment.validate().map_err(TrainError::Data)?;
        self.vicreg.validate().map_err(TrainError::Loss)?;
        self.ntxent.validate().map_err(TrainError::Loss)?;
        Ok(())
    }

    /// Parses a TOML config file.
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::BadConfig {
            detail: format!("TOML parse error: {e}"),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Linear-probe training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub task: TaskKind,
    /// Which branch's encoder is probed (sparse = branch A, dense = B).
    pub branch: ViewKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Tissue,
            branch: ViewKind::Sparse,
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    /// Desk-scale probe: 20 epochs.
    pub fn desk(task: TaskKind, branch: ViewKind, seed: u64) -> Self {
        Self {
            task,
            branch,
            epochs: 20,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::BadConfig {
                detail: "probe epochs and batch size must be positive".into(),
            });
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::BadConfig {
                detail: format!("probe lr {} must be positive", self.lr),
            });
        }
        Ok(())
    }
}

/// End-to-end supervised baseline settings (same optimizer protocol as SSL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    pub task: TaskKind,
    /// Which stored view the classifier trains on.
    pub view: ViewKind,
    pub degradation: Degradation,
    pub crop_px: usize,
    pub low_px: usize,
    pub encoder: EncoderArch,
    pub input_px: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub warmup_fraction: f64,
    pub fraction: f64,
    pub seed: u64,
    pub augment: AugmentationPolicy,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Tissue,
            view: ViewKind::Dense,
            degradation: Degradation::Downsample,
            crop_px: 32,
            low_px: 7,
            encoder: EncoderArch::DeskCnnSmall,
            input_px: 64,
            epochs: 100,
            batch_size: 128,
            lr_max: 1e-4,
            warmup_fraction: 0.1,
            fraction: 1.0,
            seed: 0,
            augment: AugmentationPolicy::default(),
        }
    }
}

impl SupervisedConfig {
    /// Desk-scale baseline: 10 epochs, batch 64.
    pub fn desk(task: TaskKind, view: ViewKind, seed: u64) -> Self {
        Self {
            task,
            view,
            epochs: 10,
            batch_size: 64,
            seed,
            ..Self::default()
        }
    }

    pub fn degrade_spec(&self) -> DegradeSpec {
        DegradeSpec {
            kind: self.degradation,
            crop_px: self.crop_px,
            low_px: self.low_px,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::BadConfig {
                detail: "epochs and batch size must be positive".into(),
            });
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(TrainError::BadConfig {
                detail: format!("dataset fraction {} outside (0, 1]", self.fraction),
            });
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction <= 1.0) {
            return Err(TrainError::BadConfig {
                detail: format!("warmup fraction {} outside (0, 1]", self.warmup_fraction),
            });
        }
        if !(self.lr_max.is_finite() && self.lr_max > 0.0) {
            return Err(TrainError::BadConfig {
                detail: format!("lr_max {} must be positive", self.lr_max),
            });
        }
        EncoderSpec::new(self.encoder, self.input_px)?;
        self.augment.validate().map_err(TrainError::Data)?;
        Ok(())
    }
}

/// Stable 16-hex-character identity of any serializable config.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults_match_documented_constants() {
        let cfg = ExperimentConfig::desk(LossKind::Vicreg, true, false, Degradation::Downsample, 7);
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.input_px, 64);
        assert_eq!(cfg.expander_dim, 512);
        assert!((cfg.lr_max - 1e-4).abs() < 1e-18);
        assert!((cfg.warmup_fraction - 0.1).abs() < 1e-18);
        cfg.validate().unwrap();
        let full = ExperimentConfig::default();
        assert_eq!(full.epochs, 100);
        assert_eq!(full.batch_size, 128);
    }

    #[test]
    fn toml_roundtrip_preserves_config() {
        let cfg = ExperimentConfig::desk(LossKind::Simclr, false, true, Degradation::Mask, 3);
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml("loss = \"simclr\"\nseed = 9\n").unwrap();
        assert_eq!(cfg.loss, LossKind::Simclr);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.batch_size, 128);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.fraction = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.input_px = 8; // below the encoder minimum
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_toml("loss = \"magic\"").is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 16);
        b.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn enum_text_forms_roundtrip() {
        assert_eq!("vicreg".parse::<LossKind>().unwrap(), LossKind::Vicreg);
        assert_eq!(LossKind::Simclr.to_string(), "simclr");
        assert_eq!("cell".parse::<TaskKind>().unwrap(), TaskKind::Cell);
        assert!("nope".parse::<TaskKind>().is_err());
    }
}
