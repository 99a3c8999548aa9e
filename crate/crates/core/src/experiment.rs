//! Experiment orchestration: data preparation, single runs, criterion
//! comparisons, the partition/strategy control grid, parameter sweeps and
//! noise generation. Every output is a pure function of the config.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{CriterionSpec, DatasetSpec, ExperimentConfig, NoiseSpec};
use crate::cotrain::{cross_entropy_epoch, traces_to_jsonl, train_networks, EpochTrace, TrainOutcome};
use crate::data::{gen_blobs, gen_two_moons, split, BlobSpec, LabeledDataset};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::loss::NoisyStrategy;
use crate::net::{init_classifier, Activation, ClassifierState, OptimizerSpec};
use crate::noise::{
    build_pairflip, build_realistic, build_symmetric, corrupt_labels, extract_prototypes, next_class_map,
    rank_pairs, SimilarityRanking, TransitionMatrix,
};
use crate::rng::{derive_seed, stream};

/// Train/test data of one experiment. Only the training split is corrupted.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub matrix: Option<TransitionMatrix>,
    pub ranking: Option<SimilarityRanking>,
}

pub fn base_dataset(spec: &DatasetSpec, seed: u64) -> Result<LabeledDataset> {
    let data_seed = derive_seed(seed, stream::DATA);
    match spec {
        DatasetSpec::Blobs(_) | DatasetSpec::FourSquare { .. } => {
            gen_blobs(&spec.blob_spec().unwrap(), data_seed)
        }
        DatasetSpec::TwoMoons { n, noise } => gen_two_moons(*n, *noise, data_seed),
        DatasetSpec::Csv {
            path,
            class_count,
            keep_given,
        } => {
            let d = LabeledDataset::load_csv(path, *class_count)?;
            if *keep_given {
                Ok(d)
            } else {
                d.with_given_labels(d.true_labels().to_vec())
            }
        }
    }
}

/// Layer sizes `[input, hidden..., classes]`.
pub fn layer_sizes(input: usize, hidden: &[usize], classes: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(classes);
    sizes
}

/// Trains a network with plain cross-entropy on `dataset` and returns it.
pub fn train_prototype_network(
    dataset: &LabeledDataset,
    hidden: &[usize],
    activation: Activation,
    optimizer: &OptimizerSpec,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> Result<ClassifierState> {
    let sizes = layer_sizes(dataset.dim(), hidden, dataset.class_count());
    let mut state = init_classifier(&sizes, activation, seed)?;
    for epoch in 1..=epochs {
        cross_entropy_epoch(&mut state, dataset, optimizer, batch_size, epoch)?;
    }
    Ok(state)
}

/// Builds the transition matrix for `noise`; realistic noise ranks the
/// prototypes of a network trained on `clean`.
pub fn build_matrix(
    noise: &NoiseSpec,
    clean: &LabeledDataset,
    hidden: &[usize],
    activation: Activation,
    optimizer: &OptimizerSpec,
    batch_size: usize,
    seed: u64,
) -> Result<(Option<TransitionMatrix>, Option<SimilarityRanking>)> {
    let c = clean.class_count();
    Ok(match *noise {
        NoiseSpec::None => (None, None),
        NoiseSpec::Symmetric { ratio } => (Some(build_symmetric(c, ratio)?), None),
        NoiseSpec::PairFlip { ratio } => (Some(build_pairflip(c, ratio, &next_class_map(c))?), None),
        NoiseSpec::Realistic {
            ratio,
            top_k,
            level_weights,
            prototype_epochs,
        } => {
            let net = train_prototype_network(
                clean,
                hidden,
                activation,
                optimizer,
                batch_size,
                prototype_epochs,
                derive_seed(seed, stream::PROTOTYPE_NET),
            )?;
            let ranking = rank_pairs(&extract_prototypes(&net)?);
            let matrix = build_realistic(&ranking, top_k, level_weights, ratio)?;
            (Some(matrix), Some(ranking))
        }
    })
}

pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let base = base_dataset(&config.dataset, config.seed)?;
    if let Some(c) = config.class_count() {
        if c != base.class_count() {
            return Err(Error::config(
                "dataset.class_count",
                format!("declared {c} classes, data has {}", base.class_count()),
            ));
        }
    }
    if let NoiseSpec::Realistic { top_k, .. } = config.noise {
        let c = base.class_count();
        if top_k > c * (c - 1) / 2 {
            return Err(Error::config(
                "noise.top_k",
                format!("{c} classes have only {} pairs", c * (c - 1) / 2),
            ));
        }
    }
    let (train, test) = split(
        &base,
        config.test_fraction,
        derive_seed(config.seed, stream::SPLIT),
    )?;
    let (matrix, ranking) = build_matrix(
        &config.noise,
        &train,
        &config.model.hidden,
        config.model.activation,
        &config.optimizer,
        config.schedule.batch_size,
        config.seed,
    )?;
    let train = match &matrix {
        Some(m) => corrupt_labels(&train, m, derive_seed(config.seed, stream::CORRUPTION))?,
        None => train,
    };
    Ok(PreparedData {
        train,
        test,
        matrix,
        ranking,
    })
}

pub fn init_networks(
    config: &ExperimentConfig,
    input: usize,
    classes: usize,
) -> Result<[ClassifierState; 2]> {
    let sizes = layer_sizes(input, &config.model.hidden, classes);
    Ok([
        init_classifier(
            &sizes,
            config.model.activation,
            derive_seed(config.seed, stream::NETWORK_1),
        )?,
        init_classifier(
            &sizes,
            config.model.activation,
            derive_seed(config.seed, stream::NETWORK_2),
        )?,
    ])
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub criterion: String,
    pub noisy_strategy: NoisyStrategy,
    pub lambda_h: f64,
    pub lambda_n: f64,
    pub noise_ratio: f64,
    /// Fraction of training labels actually flipped.
    pub observed_noise_rate: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub final_test_accuracy: [f64; 2],
    pub final_mean_accuracy: f64,
    pub best_epoch: usize,
    pub best_mean_accuracy: f64,
    /// Clean, hard and noisy sizes of the last partition.
    pub final_partition_sizes: Option<[usize; 3]>,
}

/// Epoch with the highest mean test accuracy; the earliest wins ties.
pub fn best_epoch(traces: &[EpochTrace]) -> Option<&EpochTrace> {
    traces
        .iter()
        .fold(None, |best: Option<&EpochTrace>, t| match best {
            Some(b) if b.mean_test_accuracy >= t.mean_test_accuracy => Some(b),
            _ => Some(t),
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub data: PreparedData,
    pub outcome: TrainOutcome,
    pub report: RunReport,
}

/// Trains on already prepared data.
pub fn train_on(config: &ExperimentConfig, data: PreparedData, allow_ablation: bool) -> Result<RunOutput> {
    config.validate(allow_ablation)?;
    let ctx = config.train_context(allow_ablation)?;
    let states = init_networks(config, data.train.dim(), data.train.class_count())?;
    let outcome = train_networks(states, &data.train, &data.test, &ctx)?;
    let last = outcome.traces.last().expect("at least one epoch");
    let best = best_epoch(&outcome.traces).unwrap();
    let report = RunReport {
        seed: config.seed,
        criterion: ctx.schedule.criterion.name().to_string(),
        noisy_strategy: ctx.schedule.noisy_strategy,
        lambda_h: ctx.weights.lambda_h,
        lambda_n: ctx.weights.lambda_n,
        noise_ratio: config.noise.ratio(),
        observed_noise_rate: data.train.noise_rate(),
        epochs: ctx.schedule.max_epochs,
        warmup_epochs: ctx.schedule.warmup_epochs,
        final_test_accuracy: last.test_accuracy,
        final_mean_accuracy: last.mean_test_accuracy,
        best_epoch: best.epoch,
        best_mean_accuracy: best.mean_test_accuracy,
        final_partition_sizes: last.partition.map(|q| q.sizes()),
    };
    Ok(RunOutput {
        config: config.clone(),
        data,
        outcome,
        report,
    })
}

/// Validates, prepares the data and trains.
pub fn train(config: &ExperimentConfig, allow_ablation: bool) -> Result<RunOutput> {
    config.validate(allow_ablation)?;
    let data = prepare_data(config)?;
    train_on(config, data, allow_ablation)
}

/// Writes `trace.jsonl`, `report.json`, `config.json` (without `output_dir`)
/// and, after a partitioned epoch, `partition.csv`.
pub fn write_run(dir: &Path, run: &RunOutput) -> Result<()> {
    write_atomic(
        &dir.join("trace.jsonl"),
        traces_to_jsonl(&run.outcome.traces)?.as_bytes(),
    )?;
    let mut report = serde_json::to_string_pretty(&run.report)?;
    report.push('\n');
    write_atomic(&dir.join("report.json"), report.as_bytes())?;
    // the output location is not part of the experiment
    let saved = ExperimentConfig {
        output_dir: None,
        ..run.config.clone()
    };
    let mut config = saved.to_json()?;
    config.push('\n');
    write_atomic(&dir.join("config.json"), config.as_bytes())?;
    if let Some(p) = &run.outcome.final_partition {
        p.save_csv(&dir.join("partition.csv"))?;
    }
    Ok(())
}

/// Runs `f` over `items` on scoped threads and returns results in input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.iter().map(|item| scope.spawn(|| f(item))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    })
}

/// Per-epoch purity curve of one criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub criterion: String,
    pub epoch: usize,
    pub clean_purity: Option<f64>,
    pub noisy_purity: Option<f64>,
    pub sizes: [usize; 3],
    pub mean_test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSummary {
    pub criterion: String,
    /// Clean purity averaged over the partitioned epochs.
    pub mean_clean_purity: Option<f64>,
    pub mean_noisy_purity: Option<f64>,
    pub final_test_accuracy: [f64; 2],
    pub final_mean_accuracy: f64,
    pub best_epoch: usize,
    pub best_mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub curves: Vec<CurvePoint>,
    pub summary: Vec<CriterionSummary>,
    pub runs: Vec<RunOutput>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Comparison {
    pub fn curves_csv(&self) -> String {
        let mut out = String::from(
            "criterion,epoch,clean_purity,noisy_purity,clean_size,hard_size,noisy_size,mean_test_accuracy\n",
        );
        for p in &self.curves {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                p.criterion,
                p.epoch,
                csv_opt(p.clean_purity),
                csv_opt(p.noisy_purity),
                p.sizes[0],
                p.sizes[1],
                p.sizes[2],
                p.mean_test_accuracy
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "criterion,mean_clean_purity,mean_noisy_purity,final_accuracy_net1,final_accuracy_net2,final_mean_accuracy,best_epoch,best_mean_accuracy\n",
        );
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.criterion,
                csv_opt(s.mean_clean_purity),
                csv_opt(s.mean_noisy_purity),
                s.final_test_accuracy[0],
                s.final_test_accuracy[1],
                s.final_mean_accuracy,
                s.best_epoch,
                s.best_mean_accuracy
            );
        }
        out
    }
}

/// Trains one run per criterion on the same corrupted data and seeds.
pub fn compare_criteria(
    config: &ExperimentConfig,
    criteria: &[CriterionSpec],
    allow_ablation: bool,
) -> Result<Comparison> {
    if criteria.len() < 2 {
        return Err(Error::InvalidArgument(
            "comparison needs at least two criteria".into(),
        ));
    }
    let variants: Vec<ExperimentConfig> = criteria
        .iter()
        .map(|c| ExperimentConfig {
            criterion: *c,
            ..config.clone()
        })
        .collect();
    for v in &variants {
        v.validate(allow_ablation)?;
    }
    let data = prepare_data(config)?;
    let runs = parallel_map(&variants, |v| train_on(v, data.clone(), allow_ablation))?;
    let mut curves = Vec::new();
    let mut summary = Vec::new();
    for run in &runs {
        let name = run.report.criterion.clone();
        for t in &run.outcome.traces {
            if let Some(q) = &t.partition {
                curves.push(CurvePoint {
                    criterion: name.clone(),
                    epoch: t.epoch,
                    clean_purity: q.clean_purity,
                    noisy_purity: q.noisy_purity,
                    sizes: q.sizes(),
                    mean_test_accuracy: t.mean_test_accuracy,
                });
            }
        }
        let qualities = || run.outcome.traces.iter().filter_map(|t| t.partition);
        summary.push(CriterionSummary {
            criterion: name,
            mean_clean_purity: mean_of(qualities().map(|q| q.clean_purity)),
            mean_noisy_purity: mean_of(qualities().map(|q| q.noisy_purity)),
            final_test_accuracy: run.report.final_test_accuracy,
            final_mean_accuracy: run.report.final_mean_accuracy,
            best_epoch: run.report.best_epoch,
            best_mean_accuracy: run.report.best_mean_accuracy,
        });
    }
    Ok(Comparison {
        curves,
        summary,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub criterion: String,
    pub noisy_strategy: NoisyStrategy,
    pub final_mean_accuracy: f64,
    pub best_mean_accuracy: f64,
}

pub const NOISY_STRATEGIES: [NoisyStrategy; 3] = [
    NoisyStrategy::Drop,
    NoisyStrategy::PseudoLabel,
    NoisyStrategy::SelfSupervised,
];

/// Every partition criterion paired with every noisy-subset strategy, all on
/// the same corrupted data and seeds.
pub fn control_experiment(
    config: &ExperimentConfig,
    criteria: &[CriterionSpec],
    strategies: &[NoisyStrategy],
    allow_ablation: bool,
) -> Result<Vec<ControlRow>> {
    let mut variants = Vec::new();
    for c in criteria {
        for s in strategies {
            let mut v = config.clone();
            v.criterion = *c;
            v.strategy.noisy_strategy = *s;
            v.validate(allow_ablation)?;
            variants.push(v);
        }
    }
    let data = prepare_data(config)?;
    let runs = parallel_map(&variants, |v| train_on(v, data.clone(), allow_ablation))?;
    Ok(runs
        .iter()
        .map(|r| ControlRow {
            criterion: r.report.criterion.clone(),
            noisy_strategy: r.report.noisy_strategy,
            final_mean_accuracy: r.report.final_mean_accuracy,
            best_mean_accuracy: r.report.best_mean_accuracy,
        })
        .collect())
}

pub fn control_csv(rows: &[ControlRow]) -> String {
    let mut out = String::from("criterion,noisy_strategy,final_mean_accuracy,best_mean_accuracy\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.criterion,
            r.noisy_strategy.name(),
            r.final_mean_accuracy,
            r.best_mean_accuracy
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    LambdaH,
    LambdaN,
    NoiseRatio,
}

impl SweepParameter {
    pub fn parse(name: &str) -> Result<Self> {
        match name.replace('-', "_").as_str() {
            "lambda_h" => Ok(SweepParameter::LambdaH),
            "lambda_n" => Ok(SweepParameter::LambdaN),
            "noise_ratio" => Ok(SweepParameter::NoiseRatio),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep parameter `{other}`; use lambda_h, lambda_n or noise_ratio"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::LambdaH => "lambda_h",
            SweepParameter::LambdaN => "lambda_n",
            SweepParameter::NoiseRatio => "noise_ratio",
        }
    }

    pub fn apply(self, config: &ExperimentConfig, value: f64) -> ExperimentConfig {
        let mut c = config.clone();
        match self {
            SweepParameter::LambdaH => c.strategy.lambda_h = value,
            SweepParameter::LambdaN => c.strategy.lambda_n = Some(value),
            SweepParameter::NoiseRatio => c.noise.set_ratio(value),
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub final_mean_accuracy: f64,
    pub best_mean_accuracy: f64,
}

/// One run per value with shared seeds. Every value is validated before any
/// training starts.
pub fn sweep(
    config: &ExperimentConfig,
    parameter: SweepParameter,
    values: &[f64],
    allow_ablation: bool,
) -> Result<Vec<SweepRow>> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument("a sweep needs at least two values".into()));
    }
    let variants: Vec<ExperimentConfig> = values.iter().map(|&v| parameter.apply(config, v)).collect();
    for v in &variants {
        v.validate(allow_ablation)?;
    }
    let reports = parallel_map(&variants, |v| train(v, allow_ablation).map(|r| r.report))?;
    Ok(values
        .iter()
        .zip(reports)
        .map(|(&value, r)| SweepRow {
            value,
            final_mean_accuracy: r.final_mean_accuracy,
            best_mean_accuracy: r.best_mean_accuracy,
        })
        .collect())
}

pub fn sweep_csv(parameter: SweepParameter, rows: &[SweepRow]) -> String {
    let mut out = format!("{},final_mean_accuracy,best_mean_accuracy\n", parameter.name());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{}",
            r.value, r.final_mean_accuracy, r.best_mean_accuracy
        );
    }
    out
}

/// Blob scenario used when no dataset is supplied: the four-square layout for
/// four classes, otherwise classes evenly spaced on a circle.
pub fn default_blobs(classes: usize) -> BlobSpec {
    if classes == 4 {
        return acceptance_blobs();
    }
    let means = (0..classes)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / classes as f64;
            vec![3.0 * a.cos(), 3.0 * a.sin()]
        })
        .collect();
    BlobSpec {
        means,
        std_devs: vec![0.6; classes],
        overlap_pairs: vec![],
        samples_per_class: 500,
    }
}

/// Outputs of the noise generation pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOutput {
    pub matrix: TransitionMatrix,
    pub corrupted: LabeledDataset,
    pub ranking: Option<SimilarityRanking>,
}

/// Builds a matrix for `noise` on `clean` and corrupts it.
pub fn generate_noise(
    clean: &LabeledDataset,
    noise: &NoiseSpec,
    hidden: &[usize],
    seed: u64,
) -> Result<NoiseOutput> {
    if matches!(noise, NoiseSpec::None) {
        return Err(Error::InvalidArgument("no noise requested".into()));
    }
    let optimizer = OptimizerSpec {
        learning_rate: 0.05,
        momentum: 0.9,
        weight_decay: 5e-4,
        lr_schedule: vec![],
    };
    let (matrix, ranking) = build_matrix(noise, clean, hidden, Activation::Relu, &optimizer, 64, seed)?;
    let matrix = matrix.expect("noise requested");
    let corrupted = corrupt_labels(clean, &matrix, derive_seed(seed, stream::CORRUPTION))?;
    Ok(NoiseOutput {
        matrix,
        corrupted,
        ranking,
    })
}

pub const ACCEPTANCE_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Geometry of the four-class acceptance scenario.
pub fn acceptance_blobs() -> BlobSpec {
    BlobSpec::four_square(2.0, 0.7, 0.5, 500)
}

/// The four-class, 2-D, 2000-sample scenario with 30% realistic noise.
pub fn acceptance_config(seed: u64) -> ExperimentConfig {
    let blobs = acceptance_blobs();
    let json = serde_json::json!({
        "schema_version": 1,
        "seed": seed,
        "dataset": {
            "kind": "four_square",
            "half_side": blobs.means[1][0],
            "std_dev": blobs.std_devs[0],
            "overlap": blobs.overlap_pairs[0].2,
            "samples_per_class": blobs.samples_per_class
        },
        "test_fraction": 0.2,
        "noise": {"kind": "realistic", "ratio": 0.3, "top_k": 3, "level_weights": [0.9, 0.6, 0.3], "prototype_epochs": 30},
        "model": {"hidden": [16], "activation": "relu"},
        "optimizer": {"learning_rate": 0.05, "momentum": 0.9, "weight_decay": 0.0005, "lr_schedule": [[45, 0.1]]},
        "schedule": {"warmup_epochs": 6, "max_epochs": 60, "batch_size": 64},
        "strategy": {
            "lambda_h": 0.6,
            "lambda_n": 1.0,
            "noisy_strategy": "self_supervised",
            "augmentations": [{"kind": "gaussian_jitter", "sigma": 0.3}],
            "augment_labeled": false
        },
        "criterion": {"kind": "tripartition"}
    });
    serde_json::from_value(json).expect("acceptance config is well formed")
}
