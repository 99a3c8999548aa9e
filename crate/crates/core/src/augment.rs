//! Feature-vector augmentations used to build positive pairs for the
//! label-free consistency objective.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentationSpec {
    /// Adds `N(0, sigma^2)` noise to every feature.
    GaussianJitter { sigma: f64 },
    /// Zeroes each feature with probability `rate`; survivors are rescaled by `1 / (1 - rate)`.
    FeatureDropout { rate: f64 },
    /// Multiplies the whole row by a factor drawn uniformly from `[low, high]`.
    Scale { low: f64, high: f64 },
    /// Convex combination with a partner row, weight drawn from `Beta(alpha, alpha)`.
    Mixup { alpha: f64 },
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AugmentationSpec::GaussianJitter { sigma } => sigma.is_finite() && sigma >= 0.0,
            AugmentationSpec::FeatureDropout { rate } => (0.0..1.0).contains(&rate),
            AugmentationSpec::Scale { low, high } => {
                low.is_finite() && high.is_finite() && low > 0.0 && high >= low
            }
            AugmentationSpec::Mixup { alpha } => alpha.is_finite() && alpha > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid augmentation {self:?}")))
        }
    }
}

/// `lambda * x + (1 - lambda) * partner`.
pub fn mixup_with(x: ArrayView1<f64>, partner: ArrayView1<f64>, lambda: f64) -> Array1<f64> {
    if lambda == 1.0 {
        return x.to_owned();
    }
    let mut out = x.to_owned() * lambda;
    out.scaled_add(1.0 - lambda, &partner);
    out
}

/// Applies `specs` in order. Mixup partners are drawn uniformly from the rows
/// of `partners`; with no partners mixup is skipped.
pub fn augment<R: Rng + ?Sized>(
    x: ArrayView1<f64>,
    specs: &[AugmentationSpec],
    partners: ArrayView2<f64>,
    rng: &mut R,
) -> Array1<f64> {
    let mut out = x.to_owned();
    for spec in specs {
        match *spec {
            AugmentationSpec::GaussianJitter { sigma } => {
                if sigma > 0.0 {
                    out.mapv_inplace(|v| {
                        let z: f64 = StandardNormal.sample(rng);
                        v + sigma * z
                    });
                }
            }
            AugmentationSpec::FeatureDropout { rate } => {
                if rate > 0.0 {
                    let keep = 1.0 / (1.0 - rate);
                    out.mapv_inplace(|v| if rng.random::<f64>() < rate { 0.0 } else { v * keep });
                }
            }
            AugmentationSpec::Scale { low, high } => {
                let s = if high > low {
                    rng.random_range(low..=high)
                } else {
                    low
                };
                out.mapv_inplace(|v| v * s);
            }
            AugmentationSpec::Mixup { alpha } => {
                if partners.nrows() == 0 {
                    continue;
                }
                let lambda = Beta::new(alpha, alpha)
                    .expect("alpha validated positive")
                    .sample(rng);
                let partner = partners.row(rng.random_range(0..partners.nrows()));
                out = mixup_with(out.view(), partner, lambda);
            }
        }
    }
    out
}

/// An ordered augmentation pipeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Augmenter {
    pub specs: Vec<AugmentationSpec>,
}

impl Augmenter {
    pub fn new(specs: Vec<AugmentationSpec>) -> Result<Self> {
        for s in &specs {
            s.validate()?;
        }
        Ok(Self { specs })
    }

    /// Augments each row independently; mixup partners come from `rows` itself.
    pub fn augment_rows<R: Rng + ?Sized>(&self, rows: ArrayView2<f64>, rng: &mut R) -> Array2<f64> {
        let mut out = Array2::zeros(rows.raw_dim());
        for (i, row) in rows.axis_iter(Axis(0)).enumerate() {
            out.row_mut(i).assign(&augment(row, &self.specs, rows, rng));
        }
        out
    }

    /// Two independent augmentations of every row.
    pub fn pair<R: Rng + ?Sized>(&self, rows: ArrayView2<f64>, rng: &mut R) -> (Array2<f64>, Array2<f64>) {
        let a = self.augment_rows(rows, rng);
        let b = self.augment_rows(rows, rng);
        (a, b)
    }
}
