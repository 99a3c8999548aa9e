//! Central finite-difference verification of analytic gradients.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augment::{AugmentationSpec, Augmenter};
use crate::error::{Error, Result};
use crate::loss::{
    combined_loss, consistency_mse, cross_entropy_indices, draw_views, BatchInputs, BatchViews,
    NoisyStrategy, StrategyWeights,
};
use crate::net::{init_classifier, Activation, ClassifierState, Gradients};
use crate::partition::Subset;

pub const STEP: f64 = 1e-5;
pub const MAX_PARAMETERS: usize = 500;
/// Smallest hidden pre-activation magnitude accepted by [`gradient_suite`].
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub enum LossKind<'a> {
    CrossEntropy,
    WeightedHard {
        lambda_h: f64,
    },
    /// Consistency between the batch and a paired second view of it.
    Consistency {
        paired: ArrayView2<'a, f64>,
    },
    Combined {
        subsets: &'a [Subset],
        views: &'a BatchViews,
        weights: StrategyWeights,
        strategy: NoisyStrategy,
        pseudo_labels: Option<&'a [usize]>,
    },
}

impl LossKind<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "clean_ce",
            LossKind::WeightedHard { .. } => "hard_weighted_ce",
            LossKind::Consistency { .. } => "noisy_consistency",
            LossKind::Combined { .. } => "combined",
        }
    }
}

/// Loss value and analytic parameter gradient.
pub fn evaluate(
    state: &ClassifierState,
    batch: ArrayView2<f64>,
    labels: &[usize],
    kind: &LossKind<'_>,
) -> Result<(f64, Gradients)> {
    match *kind {
        LossKind::CrossEntropy | LossKind::WeightedHard { .. } => {
            let scale = match *kind {
                LossKind::WeightedHard { lambda_h } => lambda_h,
                _ => 1.0,
            };
            let probs = state.forward(batch)?;
            let (loss, mut g) = cross_entropy_indices(probs.view(), labels)?;
            g.mapv_inplace(|v| v * scale);
            Ok((scale * loss, state.backward(batch, g.view())?))
        }
        LossKind::Consistency { paired } => {
            let pa = state.forward(batch)?;
            let pb = state.forward(paired)?;
            let (loss, ga, gb) = consistency_mse(pa.view(), pb.view())?;
            let mut grads = state.backward(batch, ga.view())?;
            grads.add_scaled(&state.backward(paired, gb.view())?, 1.0);
            Ok((loss, grads))
        }
        LossKind::Combined {
            subsets,
            views,
            weights,
            strategy,
            pseudo_labels,
        } => {
            let inputs = BatchInputs {
                features: batch,
                given_labels: labels,
                subsets,
                pseudo_labels,
            };
            let (b, g) = combined_loss(state, &inputs, views, &weights, strategy)?;
            Ok((b.loss_total, g))
        }
    }
}

/// Max over parameters of `|analytic - numeric| / max(1e-8, |numeric|)` with
/// central differences of step [`STEP`].
pub fn finite_diff_check(
    state: &ClassifierState,
    batch: ArrayView2<f64>,
    labels: &[usize],
    kind: &LossKind<'_>,
) -> Result<f64> {
    if state.parameter_count() > MAX_PARAMETERS {
        return Err(Error::InvalidArgument(format!(
            "{} parameters exceeds the finite-difference limit of {MAX_PARAMETERS}",
            state.parameter_count()
        )));
    }
    let (_, analytic) = evaluate(state, batch, labels, kind)?;
    let analytic = analytic.flatten();
    let mut probe = state.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let original = *probe.parameter_mut(i).expect("index within parameter count");
        *probe.parameter_mut(i).unwrap() = original + STEP;
        let (plus, _) = evaluate(&probe, batch, labels, kind)?;
        *probe.parameter_mut(i).unwrap() = original - STEP;
        let (minus, _) = evaluate(&probe, batch, labels, kind)?;
        *probe.parameter_mut(i).unwrap() = original;
        let numeric = (plus - minus) / (2.0 * STEP);
        let rel = (a - numeric).abs() / numeric.abs().max(1e-8);
        if rel.is_nan() {
            return Ok(f64::NAN);
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckRow {
    pub net: usize,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub loss: &'static str,
    pub max_relative_error: f64,
}

/// Checks every objective on `nets` random micro networks (each at most
/// [`MAX_PARAMETERS`] parameters, 8 samples).
pub fn gradient_suite(nets: usize, seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let augmenter = Augmenter::new(vec![
        AugmentationSpec::GaussianJitter { sigma: 0.2 },
        AugmentationSpec::Mixup { alpha: 1.0 },
    ])?;
    for net in 0..nets {
        let input = rng.random_range(2..=5);
        let classes = rng.random_range(2..=5);
        let mut sizes = vec![input];
        for _ in 0..rng.random_range(1..=2) {
            sizes.push(rng.random_range(3..=10));
        }
        sizes.push(classes);
        let activation = if rng.random_bool(0.5) {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let mut state = init_classifier(&sizes, activation, rng.random())?;
        // zero biases put dead-unit rows exactly on a ReLU kink
        for b in &mut state.layer_biases {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        if state.parameter_count() > MAX_PARAMETERS {
            continue;
        }
        let n = 8;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let subsets: Vec<Subset> = (0..n)
            .map(|i| [Subset::Clean, Subset::Hard, Subset::Noisy][i % 3])
            .collect();
        let pseudo: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let weights = StrategyWeights::new(0.6, rng.random_range(0.5..10.0))?;
        // central differences are only meaningful away from ReLU kinks
        let mut attempt = 0;
        let (x, paired, views) = loop {
            let x = Array2::from_shape_simple_fn((n, input), || rng.random_range(-2.0..2.0));
            let paired = x.mapv(|v| v + rng.random_range(-0.3..0.3));
            let inputs = BatchInputs {
                features: x.view(),
                given_labels: &labels,
                subsets: &subsets,
                pseudo_labels: Some(&pseudo),
            };
            let views = draw_views(
                &inputs,
                &augmenter,
                NoisyStrategy::SelfSupervised,
                false,
                &mut rng,
            )?;
            let mut margin = state.kink_distance(x.view())?;
            for batch in [&paired, &views.noisy_a, &views.noisy_b] {
                margin = margin.min(state.kink_distance(batch.view())?);
            }
            attempt += 1;
            if margin >= KINK_MARGIN || attempt == 100 {
                break (x, paired, views);
            }
        };
        let kinds = [
            LossKind::CrossEntropy,
            LossKind::WeightedHard { lambda_h: 0.6 },
            LossKind::Consistency {
                paired: paired.view(),
            },
            LossKind::Combined {
                subsets: &subsets,
                views: &views,
                weights,
                strategy: NoisyStrategy::SelfSupervised,
                pseudo_labels: None,
            },
        ];
        for kind in &kinds {
            rows.push(GradCheckRow {
                net,
                layer_sizes: sizes.clone(),
                activation,
                loss: kind.name(),
                max_relative_error: finite_diff_check(&state, x.view(), &labels, kind)?,
            });
        }
    }
    Ok(rows)
}
