//! `mcad`: generate synthetic data, train multi-class detectors, and run AUC benchmarks.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcad::config::{DataSource, ExperimentConfig};
use mcad::data::{gen_gaussian_classes, select_normal, write_csv, Dataset, SplitSpec};
use mcad::eval::run_benchmark;
use mcad::Error;

#[derive(Parser)]
#[command(name = "mcad", version, about = "Multi-class anomaly detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset as CSV.
    Synth(CommonArgs),
    /// Train one detector bundle per requested algorithm.
    Train(CommonArgs),
    /// Run the seeded AUC benchmark and write results.csv, results.json and scatter.dat.
    Bench(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; overrides `eval.base_seed` (and the synthetic generator seed).
    #[arg(long)]
    seed: Option<u64>,
}

/// Loaded configuration with command-line overrides applied.
struct Context {
    config: ExperimentConfig,
    out: PathBuf,
}

impl Context {
    fn load(args: &CommonArgs) -> Result<Self, Error> {
        let mut config = ExperimentConfig::load(&args.config)?;
        let base = args.config.parent().unwrap_or(Path::new(""));
        let dataset = &mut config.dataset;
        for path in [&mut dataset.images, &mut dataset.labels, &mut dataset.path].into_iter().flatten() {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let Some(seed) = args.seed {
            config.eval.base_seed = seed;
            if let Some(spec) = config.dataset.synthetic.as_mut() {
                spec.seed = seed;
            }
        }
        let out = args.out.clone().unwrap_or_else(|| config.output.directory.clone());
        Ok(Self { config, out })
    }

    fn create_out(&self) -> Result<(), Error> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::Io {
            path: self.out.clone(),
            source: e,
        })
    }
}

fn configure_threads() {
    let Ok(value) = std::env::var("MCAD_THREADS") else {
        return;
    };
    match value.trim().parse::<usize>() {
        // 0 requests sequential execution
        Ok(n) => {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
        Err(_) => eprintln!("warning: ignoring MCAD_THREADS={value}: not a non-negative integer"),
    }
}

fn synth(ctx: &Context) -> Result<ExitCode, Error> {
    if ctx.config.dataset.source != DataSource::Synthetic {
        return Err(Error::Config("synth needs `dataset.source = \"synthetic\"`".into()));
    }
    let spec = ctx.config.dataset.synthetic.clone().unwrap_or_default();
    let dataset = gen_gaussian_classes(&spec)?;
    ctx.create_out()?;
    write_csv(&dataset, ctx.out.join("dataset.csv"))?;
    println!("N={} k={} d={}", dataset.len(), dataset.n_categories(), dataset.dim());
    Ok(ExitCode::SUCCESS)
}

fn load_dataset(config: &ExperimentConfig) -> Result<Dataset, Error> {
    config.dataset.load()
}

fn train(ctx: &Context) -> Result<ExitCode, Error> {
    let config = &ctx.config;
    config.validate()?;
    let normal_ids = config
        .experiment
        .normal_ids
        .clone()
        .ok_or_else(|| Error::Config("train needs explicit `experiment.normal_ids`".into()))?;
    let dataset = load_dataset(config)?;
    let seed = config.eval.base_seed;
    let split = select_normal(
        &dataset,
        &SplitSpec {
            normal_ids,
            train_fraction: config.experiment.train_fraction,
            seed,
        },
    )?;
    let split = if config.experiment.train_subsample < 1.0 {
        split.subsample_train(config.experiment.train_subsample, seed)?
    } else {
        split
    };
    let hp = config.hyperparams.with_seed(seed);
    if hp.epochs_pretrain == 0 && hp.epochs_finetune == 0 {
        eprintln!("warning: zero training epochs; bundles hold initialization parameters");
    }
    ctx.create_out()?;
    let mut log = output::TrainingLog::create(&ctx.out.join("training_log.csv"))?;
    for &alg in &config.algorithms {
        let fitted = alg.train(&split.train, &split.normal_ids, &hp)?;
        let path = ctx.out.join(format!("{alg}.json"));
        fitted.model.save(&path)?;
        log.append(alg, &fitted.logs)?;
        println!("{alg}: {} detector(s) -> {}", fitted.model.detectors().len(), path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(ctx: &Context) -> Result<ExitCode, Error> {
    let config = &ctx.config;
    let plan = config.benchmark_plan()?;
    let dataset = load_dataset(config)?;
    ctx.create_out()?;
    let formats = config.output.formats;
    let mut rows_out = if formats.csv() {
        Some(output::ResultsCsv::create(&ctx.out.join("results.csv"))?)
    } else {
        None
    };
    let report = run_benchmark(&dataset, &plan, |row| {
        eprintln!(
            "{} [{}] seed {}: auc {:.4} ({:.1}s)",
            row.algorithm,
            output::join_ids(&row.combination),
            row.seed,
            row.auc,
            row.runtime_s
        );
        match rows_out.as_mut() {
            Some(w) => w.append(row),
            None => Ok(()),
        }
    })?;
    if formats.json() {
        output::write_results_json(&ctx.out.join("results.json"), &report)?;
    }
    output::write_scatter(&ctx.out.join("scatter.dat"), &report)?;

    if report.failures.is_empty() {
        println!("{} cells completed", report.rows.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} of {} cells failed:", report.failures.len(), report.failures.len() + report.rows.len());
        for f in &report.failures {
            eprintln!("  {} [{}] seed {}: {}", f.algorithm, output::join_ids(&f.combination), f.seed, f.message);
        }
        Ok(ExitCode::FAILURE)
    }
}

type Runner = fn(&Context) -> Result<ExitCode, Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let (args, run): (&CommonArgs, Runner) = match &cli.command {
        Command::Synth(a) => (a, synth),
        Command::Train(a) => (a, train),
        Command::Bench(a) => (a, bench),
    };
    match Context::load(args).and_then(|ctx| run(&ctx)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
