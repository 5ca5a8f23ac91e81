//! Training and experiment configuration, loaded from JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentSpec, SyntheticSceneSpec};
use crate::error::{Error, Result};
use crate::model::{HookPoint, Hooks, ModelConfig};
use crate::regularizers::{RegularizerSpec, Schedule};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Scenes are generated on the fly: training uses indices
    /// `0..train_count`, validation the following `val_count`.
    Synthetic {
        #[serde(default)]
        spec: SyntheticSceneSpec,
        #[serde(default = "default_train_count")]
        train_count: u64,
        #[serde(default = "default_val_count")]
        val_count: u64,
    },
    /// A VOC 2012 root with `train` and `val` splits.
    Voc {
        root: PathBuf,
        #[serde(default = "default_train_split")]
        train_split: String,
        #[serde(default = "default_val_split")]
        val_split: String,
    },
}

fn default_train_count() -> u64 {
    400
}

fn default_val_count() -> u64 {
    100
}

fn default_train_split() -> String {
    "train".into()
}

fn default_val_split() -> String {
    "val".into()
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            spec: SyntheticSceneSpec::default(),
            train_count: default_train_count(),
            val_count: default_val_count(),
        }
    }
}

impl DatasetSource {
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetSource::Synthetic { spec, .. } => spec.num_classes(),
            DatasetSource::Voc { .. } => crate::data::voc::VOC_CLASSES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub head_lr_multiplier: f64,
    pub lr_power: f64,
    pub seed: u64,
    pub dataset: DatasetSource,
    pub subsample_fraction: f64,
    pub augment: AugmentSpec,
    /// Validation images whose predictions are saved as colour PNGs.
    pub probe_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 4,
            base_lr: 7e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            head_lr_multiplier: 10.0,
            lr_power: 0.9,
            seed: 0,
            dataset: DatasetSource::default(),
            subsample_fraction: 0.1,
            augment: AugmentSpec::default(),
            probe_count: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::config(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.weight_decay >= 0.0)
            || !(self.head_lr_multiplier >= 0.0)
            || !(self.lr_power >= 0.0)
        {
            return Err(Error::config(
                "weight_decay, head_lr_multiplier and lr_power must be >= 0",
            ));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::config(format!(
                "subsample_fraction {} outside (0, 1]",
                self.subsample_fraction
            )));
        }
        self.augment.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "RegularizerSpec::none")]
    pub resnet: RegularizerSpec,
    #[serde(default = "RegularizerSpec::none")]
    pub spp: RegularizerSpec,
    #[serde(default = "RegularizerSpec::none")]
    pub decoder: RegularizerSpec,
    #[serde(default)]
    pub scheduled: bool,
    #[serde(default = "default_schedule_epochs")]
    pub schedule_epochs: u32,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

fn default_schedule_epochs() -> u32 {
    30
}

impl ExperimentConfig {
    /// Default training setup; the model's class count follows the dataset.
    pub fn new(
        name: &str,
        resnet: RegularizerSpec,
        spp: RegularizerSpec,
        decoder: RegularizerSpec,
    ) -> Self {
        let train = TrainConfig::default();
        let model = ModelConfig {
            num_classes: train.dataset.num_classes(),
            ..ModelConfig::default()
        };
        ExperimentConfig {
            name: name.into(),
            resnet,
            spp,
            decoder,
            scheduled: false,
            schedule_epochs: default_schedule_epochs(),
            train,
            model,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::config("experiment name is empty"));
        }
        if self.scheduled && self.schedule_epochs == 0 {
            return Err(Error::config("schedule_epochs must be at least 1"));
        }
        self.train.validate()?;
        self.model.validate()?;
        self.hooks().validate()?;
        let classes = self.train.dataset.num_classes();
        if self.model.num_classes != classes {
            return Err(Error::config(format!(
                "model predicts {} classes but the dataset has {classes}",
                self.model.num_classes
            )));
        }
        if self.train.augment.crop_size % self.model.output_stride != 0 {
            return Err(Error::config(format!(
                "crop size {} is not divisible by output stride {}",
                self.train.augment.crop_size, self.model.output_stride
            )));
        }
        Ok(())
    }

    /// Hook specs with the schedule applied and mask seeds derived from the
    /// training seed, so different seeds draw different masks.
    pub fn hooks(&self) -> Hooks {
        let mut hooks = Hooks {
            backbone_blocks: self.resnet,
            spp_output: self.spp,
            decoder_output: self.decoder,
        };
        for (i, at) in HookPoint::ALL.into_iter().enumerate() {
            let spec = hooks.get_mut(at);
            spec.seed = rng::mix(&[self.train.seed, spec.seed, i as u64]);
            if self.scheduled && spec.is_active() {
                spec.schedule = Schedule::LinearRamp {
                    epochs: self.schedule_epochs,
                };
            }
        }
        hooks
    }
}
