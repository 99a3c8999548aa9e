//! Dual-network co-training: a plain cross-entropy warm-up, then per epoch a
//! full-set prediction by both networks, one fixed partition, and sequential
//! mini-batch updates of network 1 and network 2 with the subset losses.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::Augmenter;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss::{
    cross_entropy_indices, total_loss, BatchInputs, LossBreakdown, NoisyStrategy, StrategyWeights,
};
use crate::net::{argmax, ClassifierState, OptimizerSpec, PROB_FLOOR};
use crate::partition::{
    gmm_partition, score_partition, small_loss_partition, tripartition, PartitionQuality, PartitionResult,
    PredictionRecord, Subset,
};

/// How the training set is split at the top of each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    Tripartition,
    SmallLoss { keep_fraction: f64 },
    Gmm { threshold: f64 },
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Tripartition => "tripartition",
            Criterion::SmallLoss { .. } => "small_loss",
            Criterion::Gmm { .. } => "gmm",
        }
    }

    pub fn partition(&self, records: &[PredictionRecord]) -> Result<PartitionResult> {
        match *self {
            Criterion::Tripartition => tripartition(records),
            Criterion::SmallLoss { keep_fraction } => small_loss_partition(records, keep_fraction),
            Criterion::Gmm { threshold } => gmm_partition(records, threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    /// Epochs `1..=warmup_epochs` train with plain cross-entropy.
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub criterion: Criterion,
    pub noisy_strategy: NoisyStrategy,
    /// Also augment clean and hard rows before their cross-entropy terms.
    pub augment_labeled: bool,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::config("schedule.max_epochs", "must be at least 1"));
        }
        if self.warmup_epochs >= self.max_epochs {
            return Err(Error::config(
                "schedule.warmup_epochs",
                format!("must be below max_epochs ({})", self.max_epochs),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("schedule.batch_size", "must be at least 1"));
        }
        Ok(())
    }

    /// Mini-batches per network per epoch.
    pub fn iterations_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Everything an epoch needs besides the networks and the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainContext {
    pub schedule: TrainSchedule,
    pub optimizer: OptimizerSpec,
    pub weights: StrategyWeights,
    pub augmenter: Augmenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Train,
}

/// One line of the trace file. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub phase: Phase,
    /// Test accuracy of each network after the epoch's updates.
    pub test_accuracy: [f64; 2],
    pub mean_test_accuracy: f64,
    /// Quality of the partition used during the epoch; absent in warm-up.
    pub partition: Option<PartitionQuality>,
    pub hard_population: Option<usize>,
    /// Batch-averaged losses of network 1 and network 2.
    pub losses: [LossBreakdown; 2],
}

pub fn accuracy(state: &ClassifierState, dataset: &LabeledDataset) -> Result<f64> {
    let predicted = state.predict_labels(dataset.features())?;
    let correct = predicted
        .iter()
        .zip(dataset.true_labels())
        .filter(|(p, t)| p == t)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

fn batch_order(state: &mut ClassifierState, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(state.rng_mut());
    order
}

/// One epoch of plain cross-entropy on all given labels.
pub fn cross_entropy_epoch(
    state: &mut ClassifierState,
    dataset: &LabeledDataset,
    optimizer: &OptimizerSpec,
    batch_size: usize,
    epoch: usize,
) -> Result<LossBreakdown> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let order = batch_order(state, dataset.len());
    let mut total = LossBreakdown::default();
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        let x = dataset.features().select(Axis(0), chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| dataset.given_labels()[i]).collect();
        let probs = state.forward(x.view())?;
        let (loss, upstream) = cross_entropy_indices(probs.view(), &labels)?;
        let grads = state.backward(x.view(), upstream.view())?;
        state.sgd_step(&grads, optimizer, epoch)?;
        let step = LossBreakdown {
            loss_c: loss,
            loss_total: loss,
            n_clean: chunk.len(),
            ..Default::default()
        };
        total.accumulate(&step, b);
    }
    Ok(total)
}

fn warm_up_network(
    state: &mut ClassifierState,
    dataset: &LabeledDataset,
    ctx: &TrainContext,
    epoch: usize,
) -> Result<LossBreakdown> {
    cross_entropy_epoch(state, dataset, &ctx.optimizer, ctx.schedule.batch_size, epoch)
}

/// Plain cross-entropy warm-up over epochs `1..=warmup_epochs`. Each network
/// shuffles with its own stream.
pub fn warm_up(
    states: &mut [ClassifierState; 2],
    dataset: &LabeledDataset,
    ctx: &TrainContext,
) -> Result<()> {
    for epoch in 1..=ctx.schedule.warmup_epochs {
        for state in states.iter_mut() {
            warm_up_network(state, dataset, ctx, epoch)?;
        }
    }
    Ok(())
}

/// Un-augmented predictions of both networks over the full set. The loss is
/// network 1's cross-entropy against the given label.
pub fn predict_records(
    states: &[ClassifierState; 2],
    dataset: &LabeledDataset,
) -> Result<(Vec<PredictionRecord>, Array2<f64>)> {
    let probs1 = states[0].forward(dataset.features())?;
    let probs2 = states[1].forward(dataset.features())?;
    let records = (0..dataset.len())
        .map(|i| {
            let gl = dataset.given_labels()[i];
            PredictionRecord {
                sample_id: dataset.sample_ids()[i],
                p1: argmax(probs1.row(i).iter().copied()),
                p2: argmax(probs2.row(i).iter().copied()),
                given_label: gl,
                loss: -probs1[[i, gl]].max(PROB_FLOOR).ln(),
            }
        })
        .collect();
    let mean = (&probs1 + &probs2) * 0.5;
    Ok((records, mean))
}

/// Subset tag of every row of `dataset`, in row order.
pub fn subset_tags(partition: &PartitionResult, dataset: &LabeledDataset) -> Result<Vec<Subset>> {
    partition.check_covers(dataset.sample_ids())?;
    let lookup = partition.assignment();
    Ok(dataset.sample_ids().iter().map(|id| lookup[id]).collect())
}

/// Mini-batch updates of one network under a fixed partition.
pub fn train_network_epoch(
    state: &mut ClassifierState,
    dataset: &LabeledDataset,
    tags: &[Subset],
    pseudo_labels: &[usize],
    ctx: &TrainContext,
    epoch: usize,
) -> Result<LossBreakdown> {
    let order = batch_order(state, dataset.len());
    let mut total = LossBreakdown::default();
    for (b, chunk) in order.chunks(ctx.schedule.batch_size).enumerate() {
        let x = dataset.features().select(Axis(0), chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| dataset.given_labels()[i]).collect();
        let subsets: Vec<Subset> = chunk.iter().map(|&i| tags[i]).collect();
        let pseudo: Vec<usize> = chunk.iter().map(|&i| pseudo_labels[i]).collect();
        let inputs = BatchInputs {
            features: x.view(),
            given_labels: &labels,
            subsets: &subsets,
            pseudo_labels: Some(&pseudo),
        };
        let (breakdown, grads) = total_loss(
            state,
            &inputs,
            &ctx.weights,
            ctx.schedule.noisy_strategy,
            &ctx.augmenter,
            ctx.schedule.augment_labeled,
        )?;
        state.sgd_step(&grads, &ctx.optimizer, epoch)?;
        total.accumulate(&breakdown, b);
    }
    Ok(total)
}

/// Result of one post-warm-up epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub trace: EpochTrace,
    pub partition: PartitionResult,
    pub records: Vec<PredictionRecord>,
}

/// Predicts, partitions once, then updates network 1 and network 2 in turn
/// with that same partition.
pub fn run_epoch(
    states: &mut [ClassifierState; 2],
    train: &LabeledDataset,
    test: &LabeledDataset,
    ctx: &TrainContext,
    epoch: usize,
) -> Result<EpochOutcome> {
    let (records, mean_probs) = predict_records(states, train)?;
    let partition = ctx.schedule.criterion.partition(&records)?.with_epoch(epoch);
    let quality = score_partition(&partition, &records, train)?;
    let tags = subset_tags(&partition, train)?;
    let pseudo: Vec<usize> = mean_probs
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()))
        .collect();
    let mut losses = [LossBreakdown::default(); 2];
    for (k, state) in states.iter_mut().enumerate() {
        losses[k] = train_network_epoch(state, train, &tags, &pseudo, ctx, epoch)?;
    }
    let test_accuracy = [accuracy(&states[0], test)?, accuracy(&states[1], test)?];
    let trace = EpochTrace {
        epoch,
        phase: Phase::Train,
        test_accuracy,
        mean_test_accuracy: 0.5 * (test_accuracy[0] + test_accuracy[1]),
        partition: Some(quality),
        hard_population: Some(partition.hard_ids.len()),
        losses,
    };
    Ok(EpochOutcome {
        trace,
        partition,
        records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub states: [ClassifierState; 2],
    pub traces: Vec<EpochTrace>,
    /// Partition of the last epoch.
    pub final_partition: Option<PartitionResult>,
}

/// Warm-up followed by the partitioned epochs, one trace per epoch.
pub fn train_networks(
    mut states: [ClassifierState; 2],
    train: &LabeledDataset,
    test: &LabeledDataset,
    ctx: &TrainContext,
) -> Result<TrainOutcome> {
    ctx.schedule.validate()?;
    ctx.optimizer.validate()?;
    let mut traces = Vec::with_capacity(ctx.schedule.max_epochs);
    for epoch in 1..=ctx.schedule.warmup_epochs {
        let mut losses = [LossBreakdown::default(); 2];
        for (k, state) in states.iter_mut().enumerate() {
            losses[k] = warm_up_network(state, train, ctx, epoch)?;
        }
        let test_accuracy = [accuracy(&states[0], test)?, accuracy(&states[1], test)?];
        traces.push(EpochTrace {
            epoch,
            phase: Phase::Warmup,
            test_accuracy,
            mean_test_accuracy: 0.5 * (test_accuracy[0] + test_accuracy[1]),
            partition: None,
            hard_population: None,
            losses,
        });
    }
    let mut final_partition = None;
    for epoch in ctx.schedule.warmup_epochs + 1..=ctx.schedule.max_epochs {
        let outcome = run_epoch(&mut states, train, test, ctx, epoch)?;
        traces.push(outcome.trace);
        final_partition = Some(outcome.partition);
    }
    Ok(TrainOutcome {
        states,
        traces,
        final_partition,
    })
}

/// One JSON object per line, in epoch order.
pub fn traces_to_jsonl(traces: &[EpochTrace]) -> Result<String> {
    let mut out = String::new();
    for t in traces {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentationSpec;
    use crate::data::{gen_blobs, split, BlobSpec};
    use crate::net::{init_classifier, Activation};

    fn context(warmup: usize, max: usize, criterion: Criterion) -> TrainContext {
        TrainContext {
            schedule: TrainSchedule {
                warmup_epochs: warmup,
                max_epochs: max,
                batch_size: 32,
                criterion,
                noisy_strategy: NoisyStrategy::SelfSupervised,
                augment_labeled: false,
            },
            optimizer: OptimizerSpec {
                learning_rate: 0.1,
                momentum: 0.9,
                weight_decay: 5e-4,
                lr_schedule: vec![],
            },
            weights: StrategyWeights::new(0.6, 1.0).unwrap(),
            augmenter: Augmenter::new(vec![AugmentationSpec::GaussianJitter { sigma: 0.1 }]).unwrap(),
        }
    }

    fn separable() -> (LabeledDataset, LabeledDataset) {
        let spec = BlobSpec::four_square(3.0, 0.4, 0.0, 100);
        let d = gen_blobs(&spec, 5).unwrap();
        split(&d, 0.25, 6).unwrap()
    }

    fn nets() -> [ClassifierState; 2] {
        [
            init_classifier(&[2, 8, 4], Activation::Relu, 1).unwrap(),
            init_classifier(&[2, 8, 4], Activation::Relu, 2).unwrap(),
        ]
    }

    #[test]
    fn no_warmup_means_no_updates() {
        let (train, _) = separable();
        let mut s = nets();
        let before = s.clone();
        warm_up(&mut s, &train, &context(0, 3, Criterion::Tripartition)).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn warm_up_fits_separable_blobs_and_keeps_nets_distinct() {
        let (train, _) = separable();
        let mut s = nets();
        warm_up(&mut s, &train, &context(10, 11, Criterion::Tripartition)).unwrap();
        for state in &s {
            assert!(accuracy(state, &train).unwrap() > 0.9);
        }
        assert_ne!(s[0].layer_weights, s[1].layer_weights);
    }

    #[test]
    fn consistent_predictions_train_as_clean_only() {
        let (train, test) = separable();
        let mut s = nets();
        let ctx = context(10, 11, Criterion::Tripartition);
        warm_up(&mut s, &train, &ctx).unwrap();
        // keep the rows both networks agree on and give them that label
        let (records, _) = predict_records(&s, &train).unwrap();
        let keep: Vec<usize> = (0..train.len())
            .filter(|&i| records[i].p1 == records[i].p2)
            .collect();
        let subset = train.subset(&keep).unwrap();
        let agreed = keep.iter().map(|&i| records[i].p1).collect();
        let relabeled = subset.with_given_labels(agreed).unwrap();
        let out = run_epoch(&mut s, &relabeled, &test, &ctx, 11).unwrap();
        assert_eq!(out.partition.clean_ids.len(), relabeled.len());
        for l in &out.trace.losses {
            assert_eq!(l.loss_h, 0.0);
            assert_eq!(l.loss_n, 0.0);
            assert_eq!(l.n_clean, relabeled.len());
        }
    }

    #[test]
    fn training_is_deterministic_and_traces_cover_every_epoch() {
        let (train, test) = separable();
        let ctx = context(2, 5, Criterion::Tripartition);
        let a = train_networks(nets(), &train, &test, &ctx).unwrap();
        let b = train_networks(nets(), &train, &test, &ctx).unwrap();
        assert_eq!(
            traces_to_jsonl(&a.traces).unwrap(),
            traces_to_jsonl(&b.traces).unwrap()
        );
        assert_eq!(a.traces.len(), 5);
        assert!(a.traces[..2].iter().all(|t| t.partition.is_none()));
        for t in &a.traces[2..] {
            let q = t.partition.unwrap();
            assert_eq!(q.sizes().iter().sum::<usize>(), train.len());
        }
    }

    #[test]
    fn baseline_criteria_run() {
        let (train, test) = separable();
        for c in [
            Criterion::SmallLoss { keep_fraction: 0.7 },
            Criterion::Gmm { threshold: 0.5 },
        ] {
            let out = train_networks(nets(), &train, &test, &context(2, 4, c)).unwrap();
            assert_eq!(out.final_partition.unwrap().hard_ids.len(), 0);
        }
    }

    #[test]
    fn schedule_validation() {
        let mut s = context(3, 3, Criterion::Tripartition).schedule;
        assert!(s.validate().is_err());
        s.max_epochs = 4;
        assert!(s.validate().is_ok());
        s.batch_size = 0;
        assert!(s.validate().is_err());
        assert_eq!(
            context(0, 1, Criterion::Tripartition)
                .schedule
                .iterations_per_epoch(65),
            3
        );
    }
}
