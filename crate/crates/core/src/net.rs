//! Dense feed-forward softmax classifier with analytic gradients and SGD.
//!
//! Layer `l` maps `(batch, fan_in) -> (batch, fan_out)` as `a · W + b`; hidden
//! layers apply the configured activation and the output layer feeds a
//! row-wise softmax. All arithmetic is `f64`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are floored at this value before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`, given the activation output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Parameters, momentum buffers and RNG stream of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    /// `(fan_in, fan_out)` per layer.
    pub layer_weights: Vec<Array2<f64>>,
    pub layer_biases: Vec<Array1<f64>>,
    pub activation: Activation,
    pub momentum_weights: Vec<Array2<f64>>,
    pub momentum_biases: Vec<Array1<f64>>,
    pub rng_seed: u64,
    rng: ChaCha8Rng,
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(state: &ClassifierState) -> Self {
        Self {
            weights: state
                .layer_weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: state
                .layer_biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(factor, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(factor, b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v * factor);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v * factor);
        }
    }

    /// Flattened view in parameter order: layer 0 weights, layer 0 biases, layer 1 ...
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().into_iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// SGD with momentum, L2 weight decay and a step schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(trigger epoch, multiplier)`; every entry with trigger `<= epoch` applies.
    #[serde(default)]
    pub lr_schedule: Vec<(usize, f64)>,
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("optimizer.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("optimizer.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("optimizer.weight_decay", "must be nonnegative"));
        }
        for (i, &(epoch, mult)) in self.lr_schedule.iter().enumerate() {
            if !(mult.is_finite() && mult > 0.0) {
                return Err(Error::config(
                    format!("optimizer.lr_schedule[{i}]"),
                    "multiplier must be positive",
                ));
            }
            if i > 0 && epoch <= self.lr_schedule[i - 1].0 {
                return Err(Error::config(
                    format!("optimizer.lr_schedule[{i}]"),
                    "trigger epochs must be strictly increasing",
                ));
            }
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.lr_schedule
            .iter()
            .filter(|(trigger, _)| *trigger <= epoch)
            .fold(self.learning_rate, |lr, (_, mult)| lr * mult)
    }
}

/// Intermediate values kept by a forward pass for backpropagation.
struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre_activations: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

pub fn init_classifier(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<ClassifierState> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least an input and an output layer size".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument("layer sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer_weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut layer_biases = Vec::with_capacity(layer_sizes.len() - 1);
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist =
            Uniform::new_inclusive(-limit, limit).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        layer_weights.push(Array2::from_shape_simple_fn((fan_in, fan_out), || {
            dist.sample(&mut rng)
        }));
        layer_biases.push(Array1::zeros(fan_out));
    }
    let momentum_weights = layer_weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
    let momentum_biases = layer_biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
    Ok(ClassifierState {
        layer_weights,
        layer_biases,
        activation,
        momentum_weights,
        momentum_biases,
        rng_seed: seed,
        rng,
    })
}

/// Numerically stable row-wise softmax, in place.
pub(crate) fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

impl ClassifierState {
    pub fn input_dim(&self) -> usize {
        self.layer_weights[0].nrows()
    }

    pub fn class_count(&self) -> usize {
        self.layer_weights.last().map(|w| w.ncols()).unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_weights
            .iter()
            .zip(&self.layer_biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// The network's private RNG stream (batch shuffles, augmentation draws).
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, batch: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_batch(&batch)?;
        let layers = self.layer_weights.len();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre_activations = Vec::with_capacity(layers - 1);
        let mut current = batch.to_owned();
        for (l, (w, b)) in self.layer_weights.iter().zip(&self.layer_biases).enumerate() {
            let mut z = current.dot(w);
            z += b;
            inputs.push(current);
            if l + 1 < layers {
                let act = self.activation;
                current = z.mapv(|v| act.apply(v));
                pre_activations.push(z);
            } else {
                current = z;
            }
        }
        softmax_rows(&mut current);
        Ok(ForwardCache {
            inputs,
            pre_activations,
            probs: current,
        })
    }

    /// Smallest distance of any hidden pre-activation to a point where the
    /// activation is not differentiable; infinite for smooth activations.
    pub fn kink_distance(&self, batch: ArrayView2<f64>) -> Result<f64> {
        if self.activation != Activation::Relu {
            return Ok(f64::INFINITY);
        }
        let cache = self.forward_cached(batch)?;
        Ok(cache
            .pre_activations
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    /// Softmax probabilities, one row per input row.
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(batch)?.probs)
    }

    pub fn predict_labels(&self, batch: ArrayView2<f64>) -> Result<Vec<usize>> {
        let probs = self.forward(batch)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()))
            .collect())
    }

    /// Backpropagates `upstream = dL/d(probs)` to parameter gradients.
    pub fn backward(&self, batch: ArrayView2<f64>, upstream: ArrayView2<f64>) -> Result<Gradients> {
        let cache = self.forward_cached(batch)?;
        if upstream.dim() != cache.probs.dim() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                cache.probs.dim()
            )));
        }
        Ok(self.backward_from_cache(&cache, upstream))
    }

    fn backward_from_cache(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Gradients {
        // softmax Jacobian: dz = p * (g - <g, p>)
        let mut delta = &upstream * &cache.probs;
        let dots = delta.sum_axis(Axis(1));
        for (mut row, (p, dot)) in delta
            .rows_mut()
            .into_iter()
            .zip(cache.probs.rows().into_iter().zip(dots.iter()))
        {
            row.zip_mut_with(&p, |d, &pv| *d -= pv * dot);
        }

        let layers = self.layer_weights.len();
        let mut weights = vec![Array2::zeros((0, 0)); layers];
        let mut biases = vec![Array1::zeros(0); layers];
        for l in (0..layers).rev() {
            weights[l] = cache.inputs[l].t().dot(&delta);
            biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream_act = delta.dot(&self.layer_weights[l].t());
                let act = self.activation;
                ndarray::Zip::from(&mut upstream_act)
                    .and(&cache.pre_activations[l - 1])
                    .and(&cache.inputs[l])
                    .for_each(|g, &z, &a| *g *= act.derivative(z, a));
                delta = upstream_act;
            }
        }
        Gradients { weights, biases }
    }

    fn check_gradients(&self, grads: &Gradients) -> Result<()> {
        let ok = grads.weights.len() == self.layer_weights.len()
            && grads.biases.len() == self.layer_biases.len()
            && grads
                .weights
                .iter()
                .zip(&self.layer_weights)
                .all(|(g, w)| g.dim() == w.dim())
            && grads
                .biases
                .iter()
                .zip(&self.layer_biases)
                .all(|(g, b)| g.dim() == b.dim());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("gradient shapes do not match parameters".into()))
        }
    }

    /// One momentum SGD update:
    /// `m <- momentum * m + g + weight_decay * theta`, `theta <- theta - lr(epoch) * m`.
    pub fn sgd_step(&mut self, grads: &Gradients, spec: &OptimizerSpec, epoch: usize) -> Result<()> {
        self.check_gradients(grads)?;
        let lr = spec.learning_rate_at(epoch);
        let (mu, wd) = (spec.momentum, spec.weight_decay);
        for l in 0..self.layer_weights.len() {
            ndarray::Zip::from(&mut self.momentum_weights[l])
                .and(&mut self.layer_weights[l])
                .and(&grads.weights[l])
                .for_each(|m, theta, &g| {
                    *m = mu * *m + g + wd * *theta;
                    *theta -= lr * *m;
                });
            ndarray::Zip::from(&mut self.momentum_biases[l])
                .and(&mut self.layer_biases[l])
                .and(&grads.biases[l])
                .for_each(|m, theta, &g| {
                    *m = mu * *m + g + wd * *theta;
                    *theta -= lr * *m;
                });
        }
        Ok(())
    }

    /// Visits every scalar parameter in the same order as [`Gradients::flatten`].
    pub(crate) fn parameter_mut(&mut self, index: usize) -> Option<&mut f64> {
        let mut remaining = index;
        for (w, b) in self.layer_weights.iter_mut().zip(self.layer_biases.iter_mut()) {
            if remaining < w.len() {
                return w.as_slice_mut().map(|s| &mut s[remaining]);
            }
            remaining -= w.len();
            if remaining < b.len() {
                return b.as_slice_mut().map(|s| &mut s[remaining]);
            }
            remaining -= b.len();
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn kink_distance_of_zero_biases_is_zero() {
        let mut relu = init_classifier(&[2, 3, 2], Activation::Relu, 1).unwrap();
        relu.layer_weights[0].fill(0.0);
        let x = random_batch(4, 2, 2);
        assert_eq!(relu.kink_distance(x.view()).unwrap(), 0.0);
        let tanh = init_classifier(&[2, 3, 2], Activation::Tanh, 1).unwrap();
        assert_eq!(tanh.kink_distance(x.view()).unwrap(), f64::INFINITY);
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-2.0..2.0))
    }

    /// Straight-line forward pass written with plain loops.
    fn reference_forward(state: &ClassifierState, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let layers = state.layer_weights.len();
        for l in 0..layers {
            let w = &state.layer_weights[l];
            let b = &state.layer_biases[l];
            let mut z = vec![0.0; w.ncols()];
            for j in 0..w.ncols() {
                let mut s = b[j];
                for i in 0..w.nrows() {
                    s += a[i] * w[[i, j]];
                }
                z[j] = s;
            }
            if l + 1 < layers {
                a = z
                    .iter()
                    .map(|&v| match state.activation {
                        Activation::Relu => v.max(0.0),
                        Activation::Tanh => v.tanh(),
                    })
                    .collect();
            } else {
                a = z;
            }
        }
        let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_classifier(&[2, 8, 4], Activation::Relu, 7).unwrap();
        let b = init_classifier(&[2, 8, 4], Activation::Relu, 7).unwrap();
        let c = init_classifier(&[2, 8, 4], Activation::Relu, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.layer_weights, c.layer_weights);
    }

    #[test]
    fn init_rejects_bad_layers() {
        assert!(init_classifier(&[2], Activation::Relu, 0).is_err());
        assert!(init_classifier(&[], Activation::Relu, 0).is_err());
        assert!(init_classifier(&[2, 0, 3], Activation::Relu, 0).is_err());
    }

    #[test]
    fn init_respects_glorot_bound() {
        let s = init_classifier(&[3, 5, 2], Activation::Tanh, 1).unwrap();
        let limit = (6.0f64 / 8.0).sqrt();
        assert!(s.layer_weights[0].iter().all(|w| w.abs() <= limit));
        assert!(s.momentum_weights.iter().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_network_is_uniform() {
        let mut s = init_classifier(&[3, 4, 5], Activation::Relu, 0).unwrap();
        for w in &mut s.layer_weights {
            w.fill(0.0);
        }
        let probs = s.forward(random_batch(6, 3, 1).view()).unwrap();
        for p in probs.iter() {
            assert_abs_diff_eq!(*p, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_matches_reference_and_normalizes() {
        for activation in [Activation::Relu, Activation::Tanh] {
            let s = init_classifier(&[3, 7, 5, 4], activation, 11).unwrap();
            let x = random_batch(9, 3, 2);
            let probs = s.forward(x.view()).unwrap();
            for (row, xr) in probs.rows().into_iter().zip(x.rows()) {
                assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
                let expected = reference_forward(&s, xr.as_slice().unwrap());
                for (a, b) in row.iter().zip(expected) {
                    assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let s = init_classifier(&[3, 4], Activation::Relu, 0).unwrap();
        assert!(matches!(
            s.forward(random_batch(2, 2, 0).view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax([0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax([0.25; 4]), 0);
        assert_eq!(argmax([0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn batch_prediction_matches_per_sample() {
        let s = init_classifier(&[2, 6, 3], Activation::Relu, 5).unwrap();
        let x = random_batch(20, 2, 9);
        let batch = s.predict_labels(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let single = s.predict_labels(row.insert_axis(Axis(0))).unwrap();
            assert_eq!(single[0], batch[i]);
        }
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let s = init_classifier(&[2, 5, 3], Activation::Tanh, 3).unwrap();
        let x = random_batch(4, 2, 4);
        let zero = s.backward(x.view(), Array2::zeros((4, 3)).view()).unwrap();
        assert_eq!(zero.max_abs(), 0.0);

        let g = random_batch(4, 3, 5);
        let once = s.backward(x.view(), g.view()).unwrap();
        let twice = s.backward(x.view(), (&g * 2.0).view()).unwrap();
        for (a, b) in once.flatten().iter().zip(twice.flatten()) {
            assert_abs_diff_eq!(2.0 * a, b, epsilon = 1e-12);
        }
        assert!(s.backward(x.view(), Array2::zeros((4, 2)).view()).is_err());
    }

    #[test]
    fn plain_sgd_subtracts_gradient() {
        let mut s = init_classifier(&[2, 3], Activation::Relu, 0).unwrap();
        let before = s.layer_weights[0].clone();
        let mut g = Gradients::zeros_like(&s);
        g.weights[0] = array![[0.5, -1.0, 0.25], [2.0, 0.0, -0.75]];
        let spec = OptimizerSpec {
            learning_rate: 1.0,
            momentum: 0.0,
            weight_decay: 0.0,
            lr_schedule: vec![],
        };
        s.sgd_step(&g, &spec, 0).unwrap();
        assert_eq!(s.layer_weights[0], &before - &g.weights[0]);
    }

    #[test]
    fn schedule_multipliers_compound() {
        let spec = OptimizerSpec {
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_schedule: vec![(150, 0.1), (200, 0.1)],
        };
        assert_abs_diff_eq!(spec.learning_rate_at(149), 0.02);
        assert_abs_diff_eq!(spec.learning_rate_at(150), 0.002, epsilon = 1e-15);
        assert_abs_diff_eq!(spec.learning_rate_at(201), 0.02 * 0.01, epsilon = 1e-15);
    }

    #[test]
    fn momentum_second_step_is_one_point_nine() {
        let mut s = init_classifier(&[2, 2], Activation::Relu, 0).unwrap();
        let mut g = Gradients::zeros_like(&s);
        g.weights[0].fill(1.0);
        let spec = OptimizerSpec {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_schedule: vec![],
        };
        let w0 = s.layer_weights[0].clone();
        s.sgd_step(&g, &spec, 0).unwrap();
        let w1 = s.layer_weights[0].clone();
        s.sgd_step(&g, &spec, 0).unwrap();
        let first = (&w0 - &w1)[[0, 0]];
        let second = (&w1 - &s.layer_weights[0])[[0, 0]];
        assert_abs_diff_eq!(second / first, 1.9, epsilon = 1e-12);
    }

    #[test]
    fn sgd_rejects_mismatched_gradients() {
        let mut s = init_classifier(&[2, 3], Activation::Relu, 0).unwrap();
        let other = init_classifier(&[2, 4], Activation::Relu, 0).unwrap();
        let g = Gradients::zeros_like(&other);
        let spec = OptimizerSpec {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            lr_schedule: vec![],
        };
        assert!(s.sgd_step(&g, &spec, 0).is_err());
    }

    #[test]
    fn schedule_validation() {
        let mut spec = OptimizerSpec {
            learning_rate: 0.1,
            momentum: 0.5,
            weight_decay: 0.0,
            lr_schedule: vec![(10, 0.1), (10, 0.1)],
        };
        assert!(spec.validate().is_err());
        spec.lr_schedule = vec![(10, 0.1), (20, 0.0)];
        assert!(spec.validate().is_err());
        spec.lr_schedule = vec![(10, 0.1), (20, 0.5)];
        assert!(spec.validate().is_ok());
        spec.momentum = 1.0;
        assert!(spec.validate().is_err());
    }
}
