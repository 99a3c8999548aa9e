//! Published benchmark hyperparameters and similarity rankings, plus the
//! desk-scale defaults derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::OptimizerSpec;
use crate::noise::{ClassPair, SimilarityRanking};

pub const LAMBDA_H: f64 = 0.6;
pub const BATCH_SIZE: usize = 128;
pub const MAX_EPOCHS: usize = 300;
pub const WARMUP_FRACTION: f64 = 0.1;

/// SGD settings of the CIFAR runs: lr 0.02, momentum 0.9, weight decay 5e-4,
/// divided by 10 after epochs 150 and 200.
pub fn cifar_optimizer() -> OptimizerSpec {
    OptimizerSpec {
        learning_rate: 0.02,
        momentum: 0.9,
        weight_decay: 5e-4,
        lr_schedule: vec![(150, 0.1), (200, 0.1)],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Cifar10,
    Cifar100,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Symmetric,
    Realistic,
}

impl Benchmark {
    pub fn class_count(self) -> usize {
        self.class_names().len()
    }

    pub fn warmup_epochs(self) -> usize {
        match self {
            Benchmark::Cifar10 => 10,
            Benchmark::Cifar100 => 30,
        }
    }

    pub fn realistic_top_k(self) -> usize {
        match self {
            Benchmark::Cifar10 => 10,
            Benchmark::Cifar100 => 60,
        }
    }

    pub fn level_weights(self) -> [f64; 3] {
        match self {
            Benchmark::Cifar10 => [0.9, 0.8, 0.7],
            Benchmark::Cifar100 => [0.9, 0.6, 0.3],
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Benchmark::Cifar10 => CIFAR10_CLASSES,
            Benchmark::Cifar100 => CIFAR100_CLASSES,
        }
    }

    fn similarity_table(self) -> &'static [(&'static str, &'static str, f64)] {
        match self {
            Benchmark::Cifar10 => CIFAR10_TOP_PAIRS,
            Benchmark::Cifar100 => CIFAR100_TOP_PAIRS,
        }
    }

    /// The published top-K prototype ranking, in class-index form.
    pub fn similarity_ranking(self) -> Result<SimilarityRanking> {
        let names = self.class_names();
        let index = |name: &str| {
            names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown class {name}")))
        };
        let pairs = self
            .similarity_table()
            .iter()
            .map(|&(a, b, similarity)| {
                let (i, j) = (index(a)?, index(b)?);
                Ok(ClassPair {
                    first: i.min(j),
                    second: i.max(j),
                    similarity,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SimilarityRanking::new(names.len(), pairs)
    }

    /// Noisy-subset weight used for a given noise setting, when listed.
    pub fn lambda_n(self, family: NoiseFamily, ratio: f64) -> Option<f64> {
        let table: &[(f64, f64)] = match (self, family) {
            (Benchmark::Cifar10, NoiseFamily::Realistic) => {
                &[(0.1, 1.0), (0.2, 1.0), (0.3, 1.0), (0.4, 1.0), (0.5, 1.0)]
            }
            (Benchmark::Cifar10, NoiseFamily::Symmetric) => &[(0.2, 1.0), (0.5, 1.0), (0.8, 1.0)],
            (Benchmark::Cifar100, NoiseFamily::Realistic) => {
                &[(0.1, 10.0), (0.2, 30.0), (0.3, 30.0), (0.4, 60.0), (0.5, 60.0)]
            }
            (Benchmark::Cifar100, NoiseFamily::Symmetric) => &[(0.2, 10.0), (0.5, 60.0), (0.8, 120.0)],
        };
        table
            .iter()
            .find(|(r, _)| (r - ratio).abs() < 1e-9)
            .map(|&(_, l)| l)
    }
}

/// Default noisy-subset weight at desk scale: 1 up to ten classes, otherwise
/// the 100-class entry for the nearest listed ratio.
pub fn desk_lambda_n(classes: usize, family: NoiseFamily, ratio: f64) -> f64 {
    if classes <= 10 {
        return 1.0;
    }
    let listed: &[f64] = match family {
        NoiseFamily::Realistic => &[0.1, 0.2, 0.3, 0.4, 0.5],
        NoiseFamily::Symmetric => &[0.2, 0.5, 0.8],
    };
    let nearest = listed
        .iter()
        .copied()
        .min_by(|a, b| (a - ratio).abs().total_cmp(&(b - ratio).abs()))
        .unwrap();
    Benchmark::Cifar100.lambda_n(family, nearest).unwrap()
}

/// Warm-up length at desk scale: a tenth of the run, at least one epoch and
/// always shorter than the run.
pub fn desk_warmup_epochs(max_epochs: usize) -> usize {
    let w = (WARMUP_FRACTION * max_epochs as f64).round().max(1.0) as usize;
    w.min(max_epochs.saturating_sub(1))
}

pub const CIFAR10_CLASSES: &[&str] = &[
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

pub const CIFAR100_CLASSES: &[&str] = &[
    "apple",
    "aquarium_fish",
    "baby",
    "bear",
    "beaver",
    "bed",
    "bee",
    "beetle",
    "bicycle",
    "bottle",
    "bowl",
    "boy",
    "bridge",
    "bus",
    "butterfly",
    "camel",
    "can",
    "castle",
    "caterpillar",
    "cattle",
    "chair",
    "chimpanzee",
    "clock",
    "cloud",
    "cockroach",
    "couch",
    "crab",
    "crocodile",
    "cup",
    "dinosaur",
    "dolphin",
    "elephant",
    "flatfish",
    "forest",
    "fox",
    "girl",
    "hamster",
    "house",
    "kangaroo",
    "keyboard",
    "lamp",
    "lawn_mower",
    "leopard",
    "lion",
    "lizard",
    "lobster",
    "man",
    "maple_tree",
    "motorcycle",
    "mountain",
    "mouse",
    "mushroom",
    "oak_tree",
    "orange",
    "orchid",
    "otter",
    "palm_tree",
    "pear",
    "pickup_truck",
    "pine_tree",
    "plain",
    "plate",
    "poppy",
    "porcupine",
    "possum",
    "rabbit",
    "raccoon",
    "ray",
    "road",
    "rocket",
    "rose",
    "sea",
    "seal",
    "shark",
    "shrew",
    "skunk",
    "skyscraper",
    "snail",
    "snake",
    "spider",
    "squirrel",
    "streetcar",
    "sunflower",
    "sweet_pepper",
    "table",
    "tank",
    "telephone",
    "television",
    "tiger",
    "tractor",
    "train",
    "trout",
    "tulip",
    "turtle",
    "wardrobe",
    "whale",
    "willow_tree",
    "wolf",
    "woman",
    "worm",
];

const CIFAR10_TOP_PAIRS: &[(&str, &str, f64)] = &[
    ("automobile", "truck", 0.075),
    ("automobile", "ship", 0.062),
    ("cat", "dog", 0.062),
    ("dog", "horse", 0.054),
    ("deer", "horse", 0.052),
    ("bird", "frog", 0.046),
    ("airplane", "ship", 0.044),
    ("horse", "truck", 0.025),
    ("cat", "frog", 0.021),
    ("airplane", "truck", 0.016),
];

const CIFAR100_TOP_PAIRS: &[(&str, &str, f64)] = &[
    ("maple_tree", "oak_tree", 0.337),
    ("dolphin", "whale", 0.312),
    ("plain", "sea", 0.306),
    ("bus", "pickup_truck", 0.301),
    ("girl", "woman", 0.298),
    ("bus", "streetcar", 0.296),
    ("bicycle", "motorcycle", 0.275),
    ("baby", "girl", 0.273),
    ("maple_tree", "willow_tree", 0.270),
    ("castle", "house", 0.260),
    ("oak_tree", "pine_tree", 0.258),
    ("cloud", "sea", 0.257),
    ("oak_tree", "willow_tree", 0.255),
    ("orchid", "tulip", 0.255),
    ("beetle", "cockroach", 0.254),
    ("streetcar", "train", 0.253),
    ("leopard", "tiger", 0.253),
    ("man", "woman", 0.251),
    ("orange", "sweet_pepper", 0.250),
    ("apple", "sweet_pepper", 0.250),
    ("poppy", "tulip", 0.249),
    ("bed", "couch", 0.246),
    ("poppy", "rose", 0.245),
    ("snake", "worm", 0.245),
    ("bottle", "can", 0.242),
    ("apple", "pear", 0.242),
    ("dolphin", "shark", 0.237),
    ("baby", "boy", 0.232),
    ("poppy", "sunflower", 0.232),
    ("bowl", "plate", 0.231),
    ("cloud", "plain", 0.231),
    ("hamster", "mouse", 0.230),
    ("chair", "couch", 0.230),
    ("bowl", "cup", 0.229),
    ("rose", "tulip", 0.229),
    ("apple", "orange", 0.229),
    ("television", "wardrobe", 0.227),
    ("keyboard", "telephone", 0.227),
    ("boy", "girl", 0.224),
    ("mouse", "shrew", 0.223),
    ("beaver", "otter", 0.222),
    ("lion", "tiger", 0.220),
    ("clock", "plate", 0.220),
    ("pickup_truck", "tank", 0.219),
    ("flatfish", "ray", 0.217),
    ("plain", "road", 0.216),
    ("chimpanzee", "woman", 0.216),
    ("shark", "trout", 0.215),
    ("lawn_mower", "tractor", 0.214),
    ("house", "streetcar", 0.211),
    ("leopard", "lion", 0.210),
    ("otter", "seal", 0.210),
    ("beetle", "spider", 0.209),
    ("bed", "chair", 0.209),
    ("orange", "pear", 0.209),
    ("maple_tree", "rose", 0.207),
    ("pickup_truck", "tractor", 0.205),
    ("forest", "willow_tree", 0.205),
    ("crab", "lobster", 0.205),
    ("mountain", "sea", 0.204),
];
