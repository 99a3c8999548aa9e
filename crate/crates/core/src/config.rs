//! Experiment configuration: a versioned JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentationSpec, Augmenter};
use crate::cotrain::{Criterion, TrainContext, TrainSchedule};
use crate::data::BlobSpec;
use crate::error::{Error, Result};
use crate::loss::{NoisyStrategy, StrategyWeights};
use crate::net::{Activation, OptimizerSpec};
use crate::presets::{self, NoiseFamily};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Blobs(BlobSpec),
    /// Four 2-D blobs on a square, classes 0 and 1 pulled together.
    FourSquare {
        half_side: f64,
        std_dev: f64,
        overlap: f64,
        samples_per_class: usize,
    },
    TwoMoons {
        n: usize,
        noise: f64,
    },
    /// A file in the dataset CSV schema. Given labels are taken as the true
    /// labels unless `keep_given` is set.
    Csv {
        path: PathBuf,
        class_count: Option<usize>,
        #[serde(default)]
        keep_given: bool,
    },
}

impl DatasetSpec {
    /// Class count when known without reading files.
    pub fn class_count(&self) -> Option<usize> {
        match self {
            DatasetSpec::Blobs(spec) => Some(spec.class_count()),
            DatasetSpec::FourSquare { .. } => Some(4),
            DatasetSpec::TwoMoons { .. } => Some(2),
            DatasetSpec::Csv { class_count, .. } => *class_count,
        }
    }

    pub fn blob_spec(&self) -> Option<BlobSpec> {
        match *self {
            DatasetSpec::Blobs(ref spec) => Some(spec.clone()),
            DatasetSpec::FourSquare {
                half_side,
                std_dev,
                overlap,
                samples_per_class,
            } => Some(BlobSpec::four_square(
                half_side,
                std_dev,
                overlap,
                samples_per_class,
            )),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::FourSquare {
                half_side, overlap, ..
            } => {
                if !(half_side.is_finite() && *half_side > 0.0) {
                    return Err(Error::config("dataset.half_side", "must be positive"));
                }
                if !(0.0..=1.0).contains(overlap) {
                    return Err(Error::config("dataset.overlap", "must lie in [0, 1]"));
                }
                self.blob_spec().unwrap().validate()
            }
            DatasetSpec::Blobs(spec) => spec.validate(),
            DatasetSpec::TwoMoons { n, noise } => {
                if *n == 0 || n % 2 != 0 {
                    return Err(Error::config("dataset.n", "must be a positive even number"));
                }
                if !(noise.is_finite() && *noise >= 0.0) {
                    return Err(Error::config("dataset.noise", "must be nonnegative"));
                }
                Ok(())
            }
            DatasetSpec::Csv { class_count, .. } => {
                if matches!(class_count, Some(c) if *c < 2) {
                    return Err(Error::config("dataset.class_count", "need at least two classes"));
                }
                Ok(())
            }
        }
    }
}

fn default_level_weights() -> [f64; 3] {
    [0.9, 0.6, 0.3]
}

fn default_prototype_epochs() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    None,
    Symmetric {
        ratio: f64,
    },
    /// Each class flips to the next class index.
    PairFlip {
        ratio: f64,
    },
    /// Similarity-weighted flips among the top-K prototype pairs of a network
    /// trained on the clean training split.
    Realistic {
        ratio: f64,
        top_k: usize,
        #[serde(default = "default_level_weights")]
        level_weights: [f64; 3],
        #[serde(default = "default_prototype_epochs")]
        prototype_epochs: usize,
    },
}

impl NoiseSpec {
    pub fn ratio(&self) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Symmetric { ratio }
            | NoiseSpec::PairFlip { ratio }
            | NoiseSpec::Realistic { ratio, .. } => ratio,
        }
    }

    pub fn set_ratio(&mut self, r: f64) {
        match self {
            NoiseSpec::None => {
                if r > 0.0 {
                    *self = NoiseSpec::Symmetric { ratio: r };
                }
            }
            NoiseSpec::Symmetric { ratio }
            | NoiseSpec::PairFlip { ratio }
            | NoiseSpec::Realistic { ratio, .. } => *ratio = r,
        }
    }

    fn family(&self) -> NoiseFamily {
        match self {
            NoiseSpec::Realistic { .. } => NoiseFamily::Realistic,
            _ => NoiseFamily::Symmetric,
        }
    }

    fn validate(&self, classes: Option<usize>) -> Result<()> {
        let r = self.ratio();
        if !(0.0..1.0).contains(&r) {
            return Err(Error::config("noise.ratio", "must lie in [0, 1)"));
        }
        match *self {
            NoiseSpec::PairFlip { ratio } if ratio >= 0.5 => Err(Error::config(
                "noise.ratio",
                "pair-flip noise needs a ratio below 0.5",
            )),
            NoiseSpec::Realistic {
                top_k,
                level_weights,
                prototype_epochs,
                ..
            } => {
                if top_k == 0 {
                    return Err(Error::config("noise.top_k", "must be positive"));
                }
                if let Some(c) = classes {
                    if top_k > c * (c - 1) / 2 {
                        return Err(Error::config(
                            "noise.top_k",
                            format!("{c} classes have only {} pairs", c * (c - 1) / 2),
                        ));
                    }
                }
                if level_weights.iter().any(|w| !(*w > 0.0 && *w <= 1.0))
                    || level_weights.windows(2).any(|w| w[0] <= w[1])
                {
                    return Err(Error::config(
                        "noise.level_weights",
                        "must be strictly descending in (0, 1]",
                    ));
                }
                if prototype_epochs == 0 {
                    return Err(Error::config("noise.prototype_epochs", "must be positive"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Hidden layer widths; input and output sizes come from the data.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    /// Defaults to a tenth of `max_epochs`.
    pub warmup_epochs: Option<usize>,
    pub max_epochs: usize,
    pub batch_size: usize,
}

impl ScheduleSpec {
    pub fn warmup(&self) -> usize {
        self.warmup_epochs
            .unwrap_or_else(|| presets::desk_warmup_epochs(self.max_epochs))
    }
}

fn default_noisy_strategy() -> NoisyStrategy {
    NoisyStrategy::SelfSupervised
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub lambda_h: f64,
    /// Defaults to the preset for the class count and noise setting.
    pub lambda_n: Option<f64>,
    #[serde(default = "default_noisy_strategy")]
    pub noisy_strategy: NoisyStrategy,
    #[serde(default)]
    pub augmentations: Vec<AugmentationSpec>,
    #[serde(default)]
    pub augment_labeled: bool,
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CriterionSpec {
    Tripartition,
    /// Keeps `keep_fraction` of the samples; defaults to one minus the noise ratio.
    SmallLoss {
        #[serde(default)]
        keep_fraction: Option<f64>,
    },
    Gmm {
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
}

impl CriterionSpec {
    pub fn resolve(&self, noise_ratio: f64) -> Criterion {
        match *self {
            CriterionSpec::Tripartition => Criterion::Tripartition,
            CriterionSpec::SmallLoss { keep_fraction } => Criterion::SmallLoss {
                keep_fraction: keep_fraction.unwrap_or(1.0 - noise_ratio),
            },
            CriterionSpec::Gmm { threshold } => Criterion::Gmm { threshold },
        }
    }

    pub fn name(&self) -> &'static str {
        self.resolve(0.0).name()
    }

    /// Parses `tripartition`, `small_loss`/`small-loss` or `gmm`.
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "tripartition" => Ok(CriterionSpec::Tripartition),
            "small_loss" | "smallloss" => Ok(CriterionSpec::SmallLoss { keep_fraction: None }),
            "gmm" => Ok(CriterionSpec::Gmm {
                threshold: default_threshold(),
            }),
            other => Err(Error::InvalidArgument(format!("unknown criterion `{other}`"))),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            CriterionSpec::SmallLoss {
                keep_fraction: Some(f),
            } if !(f > 0.0 && f <= 1.0) => {
                Err(Error::config("criterion.keep_fraction", "must lie in (0, 1]"))
            }
            CriterionSpec::Gmm { threshold } if !(0.0..=1.0).contains(&threshold) => {
                Err(Error::config("criterion.threshold", "must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub test_fraction: f64,
    pub noise: NoiseSpec,
    pub model: ModelSpec,
    pub optimizer: OptimizerSpec,
    pub schedule: ScheduleSpec,
    pub strategy: StrategySpec,
    pub criterion: CriterionSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses JSON; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.to_string();
            // serde reports missing fields at the parent path
            let path = match missing_field(&message) {
                Some(field) if path == "." => field.to_string(),
                Some(field) => format!("{path}.{field}"),
                None => path,
            };
            Error::config(path, message)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn class_count(&self) -> Option<usize> {
        self.dataset.class_count()
    }

    /// Checks every field and cross-field constraint that does not need the
    /// data. `allow_ablation` admits `lambda_h` outside (0, 1).
    pub fn validate(&self, allow_ablation: bool) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!(
                    "unsupported version {}, expected {SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }
        self.dataset.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie in (0, 1)"));
        }
        self.noise.validate(self.class_count())?;
        if self.model.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be positive"));
        }
        self.optimizer.validate()?;
        self.train_schedule()?.validate()?;
        self.weights(allow_ablation)?;
        for (i, a) in self.strategy.augmentations.iter().enumerate() {
            a.validate()
                .map_err(|e| Error::config(format!("strategy.augmentations[{i}]"), e.to_string()))?;
        }
        self.criterion.validate()?;
        if self.strategy.noisy_strategy == NoisyStrategy::SelfSupervised
            && self.strategy.augmentations.is_empty()
        {
            return Err(Error::config(
                "strategy.augmentations",
                "the self-supervised strategy needs at least one augmentation",
            ));
        }
        Ok(())
    }

    pub fn lambda_n(&self) -> f64 {
        self.strategy.lambda_n.unwrap_or_else(|| {
            presets::desk_lambda_n(
                self.class_count().unwrap_or(2),
                self.noise.family(),
                self.noise.ratio(),
            )
        })
    }

    pub fn weights(&self, allow_ablation: bool) -> Result<StrategyWeights> {
        if allow_ablation {
            StrategyWeights::ablation(self.strategy.lambda_h, self.lambda_n())
        } else {
            StrategyWeights::new(self.strategy.lambda_h, self.lambda_n())
        }
    }

    pub fn train_schedule(&self) -> Result<TrainSchedule> {
        Ok(TrainSchedule {
            warmup_epochs: self.schedule.warmup(),
            max_epochs: self.schedule.max_epochs,
            batch_size: self.schedule.batch_size,
            criterion: self.criterion.resolve(self.noise.ratio()),
            noisy_strategy: self.strategy.noisy_strategy,
            augment_labeled: self.strategy.augment_labeled,
        })
    }

    pub fn train_context(&self, allow_ablation: bool) -> Result<TrainContext> {
        Ok(TrainContext {
            schedule: self.train_schedule()?,
            optimizer: self.optimizer.clone(),
            weights: self.weights(allow_ablation)?,
            augmenter: Augmenter::new(self.strategy.augmentations.clone())?,
        })
    }
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const QUICK: &str = r#"{
        "schema_version": 1,
        "seed": 3,
        "dataset": {"kind": "four_square", "half_side": 2.0, "std_dev": 0.6, "overlap": 0.5, "samples_per_class": 50},
        "test_fraction": 0.2,
        "noise": {"kind": "realistic", "ratio": 0.3, "top_k": 3},
        "model": {"hidden": [8], "activation": "relu"},
        "optimizer": {"learning_rate": 0.05, "momentum": 0.9, "weight_decay": 0.0005, "lr_schedule": [[8, 0.1]]},
        "schedule": {"max_epochs": 10, "batch_size": 32},
        "strategy": {"lambda_h": 0.6, "augmentations": [{"kind": "gaussian_jitter", "sigma": 0.1}]},
        "criterion": {"kind": "tripartition"}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_json(QUICK).unwrap();
        c.validate(false).unwrap();
        assert_eq!(c.schedule.warmup(), 1);
        assert_eq!(c.lambda_n(), 1.0);
        assert_eq!(c.strategy.noisy_strategy, NoisyStrategy::SelfSupervised);
        match c.noise {
            NoiseSpec::Realistic {
                level_weights,
                prototype_epochs,
                ..
            } => {
                assert_eq!(level_weights, [0.9, 0.6, 0.3]);
                assert_eq!(prototype_epochs, 30);
            }
            _ => panic!("wrong noise kind"),
        }
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::from_json(QUICK).unwrap();
        let again = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn missing_lambda_h_names_the_field() {
        let text = QUICK.replace(r#""lambda_h": 0.6, "#, "");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "strategy.lambda_h"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn wrong_type_names_the_field() {
        let text = QUICK.replace(r#""batch_size": 32"#, r#""batch_size": "big""#);
        match ExperimentConfig::from_json(&text).unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "schedule.batch_size"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn lambda_h_range_and_ablation() {
        let mut c = ExperimentConfig::from_json(QUICK).unwrap();
        c.strategy.lambda_h = 2.0;
        assert!(
            matches!(c.validate(false), Err(Error::Config { ref path, .. }) if path == "strategy.lambda_h")
        );
        assert!(c.validate(true).is_ok());
    }

    #[test]
    fn cross_field_checks() {
        let base = ExperimentConfig::from_json(QUICK).unwrap();
        let mut c = base.clone();
        c.noise = NoiseSpec::Realistic {
            ratio: 0.3,
            top_k: 7,
            level_weights: [0.9, 0.6, 0.3],
            prototype_epochs: 5,
        };
        assert!(c.validate(false).is_err(), "four classes have six pairs");
        let mut c = base.clone();
        c.noise = NoiseSpec::PairFlip { ratio: 0.5 };
        assert!(c.validate(false).is_err());
        let mut c = base.clone();
        c.noise.set_ratio(1.0);
        assert!(c.validate(false).is_err());
        let mut c = base.clone();
        c.schedule.warmup_epochs = Some(10);
        assert!(c.validate(false).is_err());
        let mut c = base.clone();
        c.strategy.augmentations.clear();
        assert!(c.validate(false).is_err());
        c.strategy.noisy_strategy = NoisyStrategy::Drop;
        assert!(c.validate(false).is_ok());
        let mut c = base;
        c.schema_version = 2;
        assert!(c.validate(false).is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = QUICK.replace(r#""seed": 3,"#, r#""seed": 3, "sede": 4,"#);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn criterion_names() {
        assert_eq!(CriterionSpec::parse("small-loss").unwrap().name(), "small_loss");
        assert_eq!(CriterionSpec::parse("GMM").unwrap().name(), "gmm");
        assert!(CriterionSpec::parse("coin").is_err());
        assert_eq!(
            CriterionSpec::SmallLoss { keep_fraction: None }.resolve(0.3),
            Criterion::SmallLoss { keep_fraction: 0.7 }
        );
    }
}
