//! Subset-specific objectives and their weighted combination.
//!
//! * clean members: cross-entropy against the given label,
//! * hard members: cross-entropy scaled by `lambda_h`,
//! * noisy members: squared distance between the predicted distributions of
//!   two independent augmentations (no label involved), scaled by `lambda_n`.
//!
//! Each term is a mean over the members of its own subset in the batch; an
//! empty subset contributes zero loss and zero gradient.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::Augmenter;
use crate::error::{Error, Result};
use crate::net::{ClassifierState, Gradients, PROB_FLOOR};
use crate::partition::Subset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyWeights {
    pub lambda_h: f64,
    pub lambda_n: f64,
}

impl StrategyWeights {
    pub fn new(lambda_h: f64, lambda_n: f64) -> Result<Self> {
        if !(lambda_h > 0.0 && lambda_h < 1.0) {
            return Err(Error::config("strategy.lambda_h", "must lie in (0, 1)"));
        }
        Self::ablation(lambda_h, lambda_n)
    }

    /// Allows `lambda_h >= 1` for ablation sweeps.
    pub fn ablation(lambda_h: f64, lambda_n: f64) -> Result<Self> {
        if !(lambda_h.is_finite() && lambda_h > 0.0) {
            return Err(Error::config("strategy.lambda_h", "must be positive"));
        }
        if !(lambda_n.is_finite() && lambda_n >= 0.0) {
            return Err(Error::config("strategy.lambda_n", "must be nonnegative"));
        }
        Ok(Self { lambda_h, lambda_n })
    }
}

/// What the noisy subset is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisyStrategy {
    /// Consistency between two augmentations; labels unused.
    SelfSupervised,
    /// Noisy members are ignored.
    Drop,
    /// Cross-entropy against pseudo-labels supplied by the caller.
    PseudoLabel,
}

impl NoisyStrategy {
    pub fn name(self) -> &'static str {
        match self {
            NoisyStrategy::SelfSupervised => "self_supervised",
            NoisyStrategy::Drop => "drop",
            NoisyStrategy::PseudoLabel => "pseudo_label",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss_c: f64,
    /// Already multiplied by `lambda_h`.
    pub loss_h: f64,
    /// Before multiplication by `lambda_n`.
    pub loss_n: f64,
    pub loss_total: f64,
    pub n_clean: usize,
    pub n_hard: usize,
    pub n_noisy: usize,
}

impl LossBreakdown {
    /// Running mean over batches; counts are summed.
    pub fn accumulate(&mut self, other: &LossBreakdown, batches_so_far: usize) {
        let k = batches_so_far as f64;
        let mix = |a: f64, b: f64| (a * k + b) / (k + 1.0);
        self.loss_c = mix(self.loss_c, other.loss_c);
        self.loss_h = mix(self.loss_h, other.loss_h);
        self.loss_n = mix(self.loss_n, other.loss_n);
        self.loss_total = mix(self.loss_total, other.loss_total);
        self.n_clean += other.n_clean;
        self.n_hard += other.n_hard;
        self.n_noisy += other.n_noisy;
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        out[[i, l]] = 1.0;
    }
    Ok(out)
}

fn labels_from_one_hot(targets: ArrayView2<f64>) -> Result<Vec<usize>> {
    targets
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::InvalidArgument(format!("label row {i} is not one-hot")));
            }
            Ok(row.iter().position(|&v| v == 1.0).unwrap())
        })
        .collect()
}

/// Mean cross-entropy against class indices, with its gradient w.r.t. `probs`.
pub(crate) fn cross_entropy_indices(probs: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if probs.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    let mut grad = Array2::zeros(probs.raw_dim());
    let n = labels.len();
    if n == 0 {
        return Ok((0.0, grad));
    }
    let classes = probs.ncols();
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        let p = probs[[i, l]];
        loss -= p.max(PROB_FLOOR).ln();
        if p > PROB_FLOOR {
            grad[[i, l]] = -1.0 / (p * n as f64);
        }
    }
    Ok((loss / n as f64, grad))
}

/// `-(1/n) sum_i sum_c y_c log p_c` for one-hot `targets`.
pub fn cross_entropy(probs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if probs.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "probs {:?} vs targets {:?}",
            probs.dim(),
            targets.dim()
        )));
    }
    let labels = labels_from_one_hot(targets)?;
    cross_entropy_indices(probs, &labels)
}

/// `lambda_h` times [`cross_entropy`].
pub fn weighted_ce_hard(
    probs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    lambda_h: f64,
) -> Result<(f64, Array2<f64>)> {
    if !(lambda_h.is_finite() && lambda_h > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_h = {lambda_h}")));
    }
    let (loss, mut grad) = cross_entropy(probs, targets)?;
    grad.mapv_inplace(|g| g * lambda_h);
    Ok((lambda_h * loss, grad))
}

/// Mean over rows of the squared Euclidean distance between two probability
/// rows. Returns the loss and its gradients w.r.t. `a` and `b`.
pub fn consistency_mse(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok((0.0, Array2::zeros(a.raw_dim()), Array2::zeros(b.raw_dim())));
    }
    let diff = &a - &b;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
    let grad_a = diff.mapv(|d| 2.0 * d / n as f64);
    let grad_b = grad_a.mapv(|g| -g);
    Ok((loss, grad_a, grad_b))
}

/// One mini-batch as seen by the combined objective.
#[derive(Debug, Clone, Copy)]
pub struct BatchInputs<'a> {
    pub features: ArrayView2<'a, f64>,
    pub given_labels: &'a [usize],
    pub subsets: &'a [Subset],
    /// Required by [`NoisyStrategy::PseudoLabel`]; indexed like the batch.
    pub pseudo_labels: Option<&'a [usize]>,
}

/// Randomized inputs of the combined objective, drawn ahead of the
/// deterministic loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchViews {
    /// Augmented copies of the clean/hard rows in batch order, when enabled.
    pub labeled: Option<Array2<f64>>,
    /// Two augmentations of each noisy row, in batch order.
    pub noisy_a: Array2<f64>,
    pub noisy_b: Array2<f64>,
}

struct SubsetIndex {
    labeled: Vec<usize>,
    noisy: Vec<usize>,
}

fn index_subsets(inputs: &BatchInputs<'_>) -> Result<SubsetIndex> {
    let n = inputs.features.nrows();
    if inputs.given_labels.len() != n || inputs.subsets.len() != n {
        return Err(Error::Shape(format!(
            "batch of {n} rows with {} labels and {} subset tags",
            inputs.given_labels.len(),
            inputs.subsets.len()
        )));
    }
    let mut labeled = Vec::new();
    let mut noisy = Vec::new();
    for (i, s) in inputs.subsets.iter().enumerate() {
        match s {
            Subset::Noisy => noisy.push(i),
            _ => labeled.push(i),
        }
    }
    Ok(SubsetIndex { labeled, noisy })
}

pub fn draw_views<R: Rng + ?Sized>(
    inputs: &BatchInputs<'_>,
    augmenter: &Augmenter,
    strategy: NoisyStrategy,
    augment_labeled: bool,
    rng: &mut R,
) -> Result<BatchViews> {
    let idx = index_subsets(inputs)?;
    let d = inputs.features.ncols();
    let labeled = if augment_labeled && !idx.labeled.is_empty() {
        let rows = inputs.features.select(Axis(0), &idx.labeled);
        Some(augmenter.augment_rows(rows.view(), rng))
    } else {
        None
    };
    let (noisy_a, noisy_b) = if strategy == NoisyStrategy::SelfSupervised && !idx.noisy.is_empty() {
        let rows = inputs.features.select(Axis(0), &idx.noisy);
        augmenter.pair(rows.view(), rng)
    } else {
        (Array2::zeros((0, d)), Array2::zeros((0, d)))
    };
    Ok(BatchViews {
        labeled,
        noisy_a,
        noisy_b,
    })
}

/// Deterministic combined objective given pre-drawn views.
pub fn combined_loss(
    state: &ClassifierState,
    inputs: &BatchInputs<'_>,
    views: &BatchViews,
    weights: &StrategyWeights,
    strategy: NoisyStrategy,
) -> Result<(LossBreakdown, Gradients)> {
    let idx = index_subsets(inputs)?;
    let mut grads = Gradients::zeros_like(state);
    let mut breakdown = LossBreakdown::default();

    // clean + hard (+ pseudo-labelled noisy) share one forward pass
    let mut rows = idx.labeled.clone();
    if strategy == NoisyStrategy::PseudoLabel {
        rows.extend_from_slice(&idx.noisy);
    }
    if !rows.is_empty() {
        let mut x = inputs.features.select(Axis(0), &rows);
        if let Some(aug) = &views.labeled {
            if aug.nrows() != idx.labeled.len() {
                return Err(Error::Shape("labeled view does not match batch".into()));
            }
            x.slice_mut(ndarray::s![..idx.labeled.len(), ..]).assign(aug);
        }
        let probs = state.forward(x.view())?;
        let mut upstream = Array2::zeros(probs.raw_dim());

        let mut clean_pos = Vec::new();
        let mut hard_pos = Vec::new();
        for (pos, &i) in idx.labeled.iter().enumerate() {
            match inputs.subsets[i] {
                Subset::Clean => clean_pos.push(pos),
                Subset::Hard => hard_pos.push(pos),
                Subset::Noisy => unreachable!(),
            }
        }
        let gather = |positions: &[usize], labels: &dyn Fn(usize) -> usize| {
            let p = probs.select(Axis(0), positions);
            let l: Vec<usize> = positions.iter().map(|&pos| labels(pos)).collect();
            (p, l)
        };
        let given = |pos: usize| inputs.given_labels[idx.labeled[pos]];

        let (p, l) = gather(&clean_pos, &given);
        let (loss_c, g) = cross_entropy_indices(p.view(), &l)?;
        for (k, &pos) in clean_pos.iter().enumerate() {
            upstream.row_mut(pos).assign(&g.row(k));
        }

        let (p, l) = gather(&hard_pos, &given);
        let (raw_h, g) = cross_entropy_indices(p.view(), &l)?;
        for (k, &pos) in hard_pos.iter().enumerate() {
            upstream.row_mut(pos).assign(&(&g.row(k) * weights.lambda_h));
        }

        breakdown.loss_c = loss_c;
        breakdown.loss_h = weights.lambda_h * raw_h;

        if strategy == NoisyStrategy::PseudoLabel && !idx.noisy.is_empty() {
            let pseudo = inputs
                .pseudo_labels
                .ok_or_else(|| Error::InvalidArgument("pseudo-label strategy needs pseudo labels".into()))?;
            if pseudo.len() != inputs.features.nrows() {
                return Err(Error::Shape("pseudo labels do not match batch".into()));
            }
            let offset = idx.labeled.len();
            let noisy_pos: Vec<usize> = (offset..rows.len()).collect();
            let (p, l) = gather(&noisy_pos, &|pos| pseudo[rows[pos]]);
            let (loss_n, g) = cross_entropy_indices(p.view(), &l)?;
            for (k, &pos) in noisy_pos.iter().enumerate() {
                upstream.row_mut(pos).assign(&(&g.row(k) * weights.lambda_n));
            }
            breakdown.loss_n = loss_n;
        }

        grads = state.backward(x.view(), upstream.view())?;
    }

    if strategy == NoisyStrategy::SelfSupervised && !idx.noisy.is_empty() {
        if views.noisy_a.nrows() != idx.noisy.len() || views.noisy_b.nrows() != idx.noisy.len() {
            return Err(Error::Shape("noisy views do not match batch".into()));
        }
        let pa = state.forward(views.noisy_a.view())?;
        let pb = state.forward(views.noisy_b.view())?;
        let (loss_n, ga, gb) = consistency_mse(pa.view(), pb.view())?;
        let grad_a = state.backward(views.noisy_a.view(), ga.view())?;
        let grad_b = state.backward(views.noisy_b.view(), gb.view())?;
        grads.add_scaled(&grad_a, weights.lambda_n);
        grads.add_scaled(&grad_b, weights.lambda_n);
        breakdown.loss_n = loss_n;
    }

    breakdown.n_clean = inputs.subsets.iter().filter(|s| **s == Subset::Clean).count();
    breakdown.n_hard = inputs.subsets.iter().filter(|s| **s == Subset::Hard).count();
    breakdown.n_noisy = idx.noisy.len();
    breakdown.loss_total = breakdown.loss_c + weights.lambda_n * breakdown.loss_n + breakdown.loss_h;
    Ok((breakdown, grads))
}

/// Draws augmentations from the network's own stream, then evaluates
/// [`combined_loss`].
pub fn total_loss(
    state: &mut ClassifierState,
    inputs: &BatchInputs<'_>,
    weights: &StrategyWeights,
    strategy: NoisyStrategy,
    augmenter: &Augmenter,
    augment_labeled: bool,
) -> Result<(LossBreakdown, Gradients)> {
    let views = draw_views(inputs, augmenter, strategy, augment_labeled, state.rng_mut())?;
    combined_loss(state, inputs, &views, weights, strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentationSpec;
    use crate::gradcheck::{finite_diff_check, LossKind};
    use crate::net::{init_classifier, Activation};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_probs(rows: usize, classes: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Array2::from_shape_simple_fn((rows, classes), || rng.random_range(0.01..1.0));
        for mut r in p.rows_mut() {
            let s = r.sum();
            r.mapv_inplace(|v| v / s);
        }
        p
    }

    #[test]
    fn ce_of_matching_one_hot_is_zero() {
        let p = array![[0.0, 1.0, 0.0]];
        let y = array![[0.0, 1.0, 0.0]];
        let (loss, _) = cross_entropy(p.view(), y.view()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn ce_of_uniform_is_ln_c() {
        let p = Array2::from_elem((3, 4), 0.25);
        let y = one_hot(&[0, 2, 3], 4).unwrap();
        let (loss, _) = cross_entropy(p.view(), y.view()).unwrap();
        assert_abs_diff_eq!(loss, 4f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(loss, 1.3863, epsilon = 1e-4);
    }

    #[test]
    fn ce_matches_scalar_reference() {
        let p = random_probs(7, 5, 1);
        let labels = [0, 4, 2, 2, 1, 3, 0];
        let y = one_hot(&labels, 5).unwrap();
        let (loss, grad) = cross_entropy(p.view(), y.view()).unwrap();
        let mut reference = 0.0;
        for i in 0..7 {
            for c in 0..5 {
                reference -= y[[i, c]] * p[[i, c]].ln();
            }
        }
        assert_abs_diff_eq!(loss, reference / 7.0, epsilon = 1e-14);
        assert_abs_diff_eq!(grad[[1, 4]], -1.0 / (7.0 * p[[1, 4]]), epsilon = 1e-14);
        assert_eq!(grad[[1, 0]], 0.0);
    }

    #[test]
    fn ce_rejects_non_one_hot_and_handles_empty() {
        let p = array![[0.5, 0.5]];
        assert!(cross_entropy(p.view(), array![[0.5, 0.5]].view()).is_err());
        assert!(cross_entropy(p.view(), array![[1.0, 1.0]].view()).is_err());
        let empty = Array2::<f64>::zeros((0, 2));
        let (loss, grad) = cross_entropy(empty.view(), empty.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.len(), 0);
    }

    #[test]
    fn clamped_ce_is_finite() {
        let p = array![[1.0, 0.0]];
        let y = array![[0.0, 1.0]];
        let (loss, grad) = cross_entropy(p.view(), y.view()).unwrap();
        assert_abs_diff_eq!(loss, -(1e-12f64).ln(), epsilon = 1e-9);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn hard_loss_is_scaled_ce() {
        let p = random_probs(6, 3, 2);
        let y = one_hot(&[0, 1, 2, 0, 1, 2], 3).unwrap();
        let (ce, g) = cross_entropy(p.view(), y.view()).unwrap();
        let (h, gh) = weighted_ce_hard(p.view(), y.view(), 0.6).unwrap();
        assert_abs_diff_eq!(h, 0.6 * ce, epsilon = 1e-15);
        assert_abs_diff_eq!(h / ce, 0.6, epsilon = 1e-15);
        for (a, b) in g.iter().zip(gh.iter()) {
            assert_abs_diff_eq!(0.6 * a, *b, epsilon = 1e-15);
        }
        let empty = Array2::<f64>::zeros((0, 3));
        assert_eq!(weighted_ce_hard(empty.view(), empty.view(), 0.6).unwrap().0, 0.0);
    }

    #[test]
    fn hard_loss_of_ce_two_is_one_point_two() {
        // e^-2 probability on the labelled class gives CE = 2
        let q = (-2.0f64).exp();
        let p = array![[q, 1.0 - q]];
        let y = array![[1.0, 0.0]];
        let (h, _) = weighted_ce_hard(p.view(), y.view(), 0.6).unwrap();
        assert_abs_diff_eq!(h, 1.2, epsilon = 1e-12);
    }

    #[test]
    fn consistency_values() {
        let a = array![[1.0, 0.0]];
        let b = array![[0.0, 1.0]];
        let (l, ga, gb) = consistency_mse(a.view(), b.view()).unwrap();
        assert_abs_diff_eq!(l, 2.0);
        assert_eq!(ga, -&gb);
        let (l2, _, _) = consistency_mse(b.view(), a.view()).unwrap();
        assert_eq!(l, l2);
        let (z, _, _) = consistency_mse(a.view(), a.view()).unwrap();
        assert_eq!(z, 0.0);
        assert!(consistency_mse(a.view(), array![[1.0, 0.0, 0.0]].view()).is_err());
    }

    #[test]
    fn breakdown_combines_with_lambdas() {
        let w = StrategyWeights::new(0.6, 10.0).unwrap();
        let total = 1.0 + w.lambda_n * 0.1 + w.lambda_h * 2.0;
        assert_abs_diff_eq!(total, 3.2, epsilon = 1e-12);
        assert!(StrategyWeights::new(1.0, 1.0).is_err());
        assert!(StrategyWeights::new(0.0, 1.0).is_err());
        assert!(StrategyWeights::new(0.5, -1.0).is_err());
        assert!(StrategyWeights::ablation(2.0, 1.0).is_ok());
    }

    fn micro_batch() -> (ClassifierState, Array2<f64>, Vec<usize>) {
        let state = init_classifier(&[2, 4, 3], Activation::Tanh, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = Array2::from_shape_simple_fn((8, 2), || rng.random_range(-1.5..1.5));
        let labels = vec![0, 1, 2, 0, 1, 2, 0, 1];
        (state, x, labels)
    }

    #[test]
    fn all_clean_total_equals_ce() {
        let (mut state, x, labels) = micro_batch();
        let subsets = vec![Subset::Clean; 8];
        let inputs = BatchInputs {
            features: x.view(),
            given_labels: &labels,
            subsets: &subsets,
            pseudo_labels: None,
        };
        let w = StrategyWeights::new(0.6, 10.0).unwrap();
        let aug = Augmenter::new(vec![AugmentationSpec::GaussianJitter { sigma: 0.1 }]).unwrap();
        let (b, _) = total_loss(
            &mut state,
            &inputs,
            &w,
            NoisyStrategy::SelfSupervised,
            &aug,
            false,
        )
        .unwrap();
        let probs = state.forward(x.view()).unwrap();
        let (ce, _) = cross_entropy_indices(probs.view(), &labels).unwrap();
        assert_eq!(b.loss_total, ce);
        assert_eq!(b.loss_c, ce);
        assert_eq!((b.n_clean, b.n_hard, b.n_noisy), (8, 0, 0));
    }

    #[test]
    fn breakdown_identity_and_gradient() {
        let (mut state, x, labels) = micro_batch();
        use Subset::*;
        let subsets = vec![Clean, Hard, Noisy, Clean, Noisy, Hard, Clean, Noisy];
        let inputs = BatchInputs {
            features: x.view(),
            given_labels: &labels,
            subsets: &subsets,
            pseudo_labels: None,
        };
        let w = StrategyWeights::new(0.6, 3.0).unwrap();
        let aug = Augmenter::new(vec![
            AugmentationSpec::GaussianJitter { sigma: 0.2 },
            AugmentationSpec::Mixup { alpha: 1.0 },
        ])
        .unwrap();
        let views = draw_views(
            &inputs,
            &aug,
            NoisyStrategy::SelfSupervised,
            false,
            state.rng_mut(),
        )
        .unwrap();
        let (b, _) = combined_loss(&state, &inputs, &views, &w, NoisyStrategy::SelfSupervised).unwrap();
        assert_abs_diff_eq!(
            b.loss_total,
            b.loss_c + 3.0 * b.loss_n + b.loss_h,
            epsilon = 1e-12
        );
        assert!(b.loss_n > 0.0);
        let err = finite_diff_check(
            &state,
            x.view(),
            &labels,
            &LossKind::Combined {
                subsets: &subsets,
                views: &views,
                weights: w,
                strategy: NoisyStrategy::SelfSupervised,
                pseudo_labels: None,
            },
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn noisy_labels_do_not_matter() {
        let (state, x, labels) = micro_batch();
        use Subset::*;
        let subsets = vec![Clean, Noisy, Noisy, Clean, Noisy, Hard, Clean, Noisy];
        let mut permuted = labels.clone();
        permuted[1] = 2;
        permuted[2] = 0;
        permuted[4] = 0;
        permuted[7] = 2;
        let w = StrategyWeights::new(0.6, 1.0).unwrap();
        let aug = Augmenter::new(vec![AugmentationSpec::GaussianJitter { sigma: 0.3 }]).unwrap();
        for strategy in [NoisyStrategy::SelfSupervised, NoisyStrategy::Drop] {
            let run = |given: &[usize]| {
                let mut s = state.clone();
                let inputs = BatchInputs {
                    features: x.view(),
                    given_labels: given,
                    subsets: &subsets,
                    pseudo_labels: None,
                };
                total_loss(&mut s, &inputs, &w, strategy, &aug, false).unwrap()
            };
            let (b1, g1) = run(&labels);
            let (b2, g2) = run(&permuted);
            assert_eq!(b1, b2);
            assert_eq!(g1, g2);
        }
    }

    #[test]
    fn pseudo_label_strategy_requires_labels() {
        let (mut state, x, labels) = micro_batch();
        let subsets = vec![Subset::Noisy; 8];
        let inputs = BatchInputs {
            features: x.view(),
            given_labels: &labels,
            subsets: &subsets,
            pseudo_labels: None,
        };
        let w = StrategyWeights::new(0.6, 1.0).unwrap();
        let aug = Augmenter::default();
        assert!(total_loss(&mut state, &inputs, &w, NoisyStrategy::PseudoLabel, &aug, false).is_err());
        let pseudo = vec![1; 8];
        let inputs = BatchInputs {
            pseudo_labels: Some(&pseudo),
            ..inputs
        };
        let (b, _) = total_loss(&mut state, &inputs, &w, NoisyStrategy::PseudoLabel, &aug, false).unwrap();
        let probs = state.forward(x.view()).unwrap();
        let (ce, _) = cross_entropy_indices(probs.view(), &pseudo).unwrap();
        assert_abs_diff_eq!(b.loss_n, ce, epsilon = 1e-15);
    }

    #[test]
    fn drop_strategy_ignores_noisy_rows() {
        let (mut state, x, labels) = micro_batch();
        let subsets = vec![Subset::Noisy; 8];
        let inputs = BatchInputs {
            features: x.view(),
            given_labels: &labels,
            subsets: &subsets,
            pseudo_labels: None,
        };
        let w = StrategyWeights::new(0.6, 5.0).unwrap();
        let (b, g) = total_loss(
            &mut state,
            &inputs,
            &w,
            NoisyStrategy::Drop,
            &Augmenter::default(),
            false,
        )
        .unwrap();
        assert_eq!(b.loss_total, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }
}
