//! Learning with noisy labels: a three-way sample partition driven by two
//! co-trained classifiers, subset-specific losses, similarity-aware label
//! noise, and the small-loss and mixture-model baselines.

pub mod augment;
pub mod config;
pub mod cotrain;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod net;
pub mod noise;
pub mod partition;
pub mod presets;
pub mod rng;

pub use augment::{AugmentationSpec, Augmenter};
pub use config::{CriterionSpec, DatasetSpec, ExperimentConfig, NoiseSpec};
pub use cotrain::{Criterion, EpochTrace, TrainSchedule};
pub use data::{BlobSpec, LabeledDataset};
pub use error::{Error, Result};
pub use experiment::{RunOutput, RunReport};
pub use loss::{LossBreakdown, NoisyStrategy, StrategyWeights};
pub use net::{Activation, ClassifierState, OptimizerSpec};
pub use noise::{SimilarityRanking, TransitionMatrix};
pub use partition::{PartitionQuality, PartitionResult, PredictionRecord, Subset};
