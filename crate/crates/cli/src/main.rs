use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use noisylab_core::config::CriterionSpec;
use noisylab_core::data::gen_blobs;
use noisylab_core::experiment::{
    acceptance_config, compare_criteria, control_csv, control_experiment, default_blobs, generate_noise,
    sweep, sweep_csv, train, write_run, SweepParameter, NOISY_STRATEGIES,
};
use noisylab_core::gradcheck::gradient_suite;
use noisylab_core::io::write_atomic;
use noisylab_core::rng::{derive_seed, stream};
use noisylab_core::{Error, ExperimentConfig, LabeledDataset, NoiseSpec, NoisyStrategy};

const GRADIENT_BOUND: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "noisylab",
    version,
    about = "Noisy-label partition and co-training experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one experiment and print its report.
    Run(Common),
    /// Train one run per criterion on shared data and compare partition purity.
    CompareCriteria(CompareArgs),
    /// Train one run per value of a single parameter.
    Sweep(SweepArgs),
    /// Build a transition matrix and corrupt a dataset with it.
    GenNoise(GenNoiseArgs),
    /// Finite-difference check of every training objective on random micro nets.
    CheckGrad(CheckGradArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON). Defaults to the built-in four-class scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accept hard-subset weights outside (0, 1).
    #[arg(long)]
    allow_ablation: bool,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => {
                ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => acceptance_config(1),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output_dir = Some(out.clone());
        }
        config.validate(self.allow_ablation)?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated criteria: tripartition, small_loss, gmm.
    #[arg(long, value_delimiter = ',', default_value = "tripartition,small_loss,gmm")]
    criteria: Vec<String>,
    /// Cross every criterion with every noisy-subset strategy instead.
    #[arg(long)]
    control: bool,
    /// Strategies for `--control`: drop, pseudo_label, self_supervised.
    #[arg(long, value_delimiter = ',', requires = "control")]
    strategies: Vec<String>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// lambda_h, lambda_n or noise_ratio.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoiseType {
    Symmetric,
    Pairflip,
    Realistic,
}

#[derive(Debug, Args)]
struct GenNoiseArgs {
    #[arg(long = "type", value_enum)]
    kind: NoiseType,
    /// Noise ratio in [0, 1).
    #[arg(long)]
    r: f64,
    /// Class count of the generated blob dataset.
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Number of most similar class pairs that receive noise (realistic only).
    #[arg(long = "K", default_value_t = 3)]
    top_k: usize,
    /// Three strictly descending level weights (realistic only).
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.6,0.3")]
    weights: Vec<f64>,
    /// Labeled CSV to corrupt instead of generated blobs.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Hidden layer sizes of the prototype network (realistic only).
    #[arg(long, value_delimiter = ',', default_value = "16")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    prototype_epochs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Writes matrix.csv, corrupted.csv and, for realistic noise, ranking.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckGradArgs {
    #[arg(long, default_value_t = 20)]
    nets: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

/// Bad command-line input detected after parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn write_file(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join(name), contents.as_bytes())?;
    Ok(())
}

fn cmd_run(args: &Common) -> anyhow::Result<()> {
    let config = args.load()?;
    let run = train(&config, args.allow_ablation)?;
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_run(dir, &run)?;
    }
    println!("{}", serde_json::to_string_pretty(&run.report)?);
    Ok(())
}

fn parse_strategy(name: &str) -> anyhow::Result<NoisyStrategy> {
    let quoted = format!("\"{}\"", name.trim().replace('-', "_"));
    serde_json::from_str(&quoted).map_err(|_| usage(format!("unknown noisy-subset strategy `{name}`")))
}

fn cmd_compare(args: &CompareArgs) -> anyhow::Result<()> {
    let config = args.common.load()?;
    let criteria = args
        .criteria
        .iter()
        .map(|c| CriterionSpec::parse(c))
        .collect::<Result<Vec<_>, _>>()?;
    if args.control {
        let strategies = if args.strategies.is_empty() {
            NOISY_STRATEGIES.to_vec()
        } else {
            args.strategies
                .iter()
                .map(|s| parse_strategy(s))
                .collect::<anyhow::Result<_>>()?
        };
        let rows = control_experiment(&config, &criteria, &strategies, args.common.allow_ablation)?;
        let table = control_csv(&rows);
        if let Some(dir) = &config.output_dir {
            write_file(dir, "control.csv", &table)?;
        }
        print!("{table}");
        return Ok(());
    }
    let cmp = compare_criteria(&config, &criteria, args.common.allow_ablation)?;
    let summary = cmp.summary_csv();
    if let Some(dir) = &config.output_dir {
        write_file(dir, "curves.csv", &cmp.curves_csv())?;
        write_file(dir, "summary.csv", &summary)?;
    }
    print!("{summary}");
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let config = args.common.load()?;
    let parameter = SweepParameter::parse(&args.param)?;
    let rows = sweep(&config, parameter, &args.values, args.common.allow_ablation)?;
    let table = sweep_csv(parameter, &rows);
    if let Some(dir) = &config.output_dir {
        write_file(dir, "sweep.csv", &table)?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_gen_noise(args: &GenNoiseArgs) -> anyhow::Result<()> {
    let noise = match args.kind {
        NoiseType::Symmetric => NoiseSpec::Symmetric { ratio: args.r },
        NoiseType::Pairflip => NoiseSpec::PairFlip { ratio: args.r },
        NoiseType::Realistic => {
            let [a, b, c] = args.weights[..] else {
                return Err(usage("--weights needs exactly three values"));
            };
            NoiseSpec::Realistic {
                ratio: args.r,
                top_k: args.top_k,
                level_weights: [a, b, c],
                prototype_epochs: args.prototype_epochs,
            }
        }
    };
    let clean = match &args.dataset {
        Some(path) => {
            let d = LabeledDataset::load_csv(path, None)?;
            d.with_given_labels(d.true_labels().to_vec())?
        }
        None => gen_blobs(&default_blobs(args.classes), derive_seed(args.seed, stream::DATA))?,
    };
    let out = generate_noise(&clean, &noise, &args.hidden, args.seed)?;

    let mut matrix = Vec::new();
    out.matrix.write_csv(&mut matrix)?;
    let matrix = String::from_utf8(matrix)?;
    print!("{matrix}");
    let sums = out.matrix.row_sums();
    let mut line = String::from("row sums:");
    for s in &sums {
        let _ = write!(line, " {s:.12}");
    }
    println!("{line}");
    println!(
        "observed noise rate: {:.4} over {} samples",
        out.corrupted.noise_rate(),
        out.corrupted.len()
    );
    if let Some(ranking) = &out.ranking {
        for p in ranking.pairs.iter().take(args.top_k) {
            println!(
                "similar pair ({}, {}) cosine {:.6}",
                p.first, p.second, p.similarity
            );
        }
    }
    if let Some(dir) = &args.out {
        write_file(dir, "matrix.csv", &matrix)?;
        out.corrupted.save_csv(&dir.join("corrupted.csv"))?;
        if let Some(ranking) = &out.ranking {
            write_file(dir, "ranking.json", &serde_json::to_string_pretty(ranking)?)?;
        }
    }
    Ok(())
}

fn cmd_check_grad(args: &CheckGradArgs) -> anyhow::Result<()> {
    if args.nets == 0 {
        return Err(usage("--nets must be positive"));
    }
    let rows = gradient_suite(args.nets, args.seed)?;
    println!("net,layer_sizes,activation,loss,max_relative_error");
    let mut worst: f64 = 0.0;
    for r in &rows {
        let sizes: Vec<String> = r.layer_sizes.iter().map(|s| s.to_string()).collect();
        println!(
            "{},{},{:?},{},{:e}",
            r.net,
            sizes.join("-"),
            r.activation,
            r.loss,
            r.max_relative_error
        );
        // NaN counts as a failure
        worst = if r.max_relative_error.is_nan() {
            f64::NAN
        } else {
            worst.max(r.max_relative_error)
        };
    }
    println!("max relative error {worst:e} (bound {GRADIENT_BOUND:e})");
    if worst.is_nan() || worst >= GRADIENT_BOUND {
        bail!("gradient check failed: {worst:e} >= {GRADIENT_BOUND:e}");
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|e| {
        e.downcast_ref::<Usage>().is_some() || e.downcast_ref::<Error>().is_some_and(Error::is_validation)
    });
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::CompareCriteria(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::GenNoise(a) => cmd_gen_noise(a),
        Command::CheckGrad(a) => cmd_check_grad(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
