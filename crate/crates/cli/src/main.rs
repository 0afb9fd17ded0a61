use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "nas", about = "Noise-aware active learning on fixed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file or directory (see the subcommand's help).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config; the schema is in docs/config.md.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// The train/test embedding files of a dataset.
#[derive(Args, Debug, Clone)]
pub struct PoolArgs {
    /// ALNE feature file.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Ground-truth labels, one per line.
    #[arg(long)]
    pub labels: PathBuf,
    /// Number of classes; inferred from the labels when omitted.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic Gaussian-mixture pool and its test split.
    GenSynth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        points_per_class: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.3)]
        spread: f64,
        #[arg(long, default_value_t = 1.0)]
        center_spread: f64,
        /// Test pool size as a fraction of the training pool; 0 skips it.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
    /// Simulate the noisy annotator and write its labels.
    InjectNoise {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pool: PoolArgs,
        /// none, symmetric, asymmetric or instance_dependent.
        #[arg(long, default_value = "symmetric")]
        kind: String,
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
    },
    /// Run one strategy (optionally wrapped in NAS) up to a budget.
    Select {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pool: PoolArgs,
        /// Annotator labels; the ground truth when omitted.
        #[arg(long)]
        noisy_labels: Option<PathBuf>,
        #[arg(long)]
        budget: usize,
        /// random, probcover, maxherding or coreset.
        #[arg(long, default_value = "probcover")]
        strategy: String,
        /// ProbCover ball radius.
        #[arg(long)]
        delta: Option<f64>,
        /// Wrap the strategy in the noise-aware loop.
        #[arg(long)]
        nas: bool,
        /// Filter used by the noise-aware loop.
        #[arg(long, default_value = "lowbudget_aum")]
        filter: String,
        #[arg(long)]
        inner_batch: Option<usize>,
    },
    /// Run one filter on a labeled subset and write the verdict.
    Filter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        noisy_labels: PathBuf,
        /// Labeled indices, one per line.
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long, default_value = "lowbudget_aum")]
        name: String,
    },
    /// Train the evaluation probe per policy and write one result row.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        noisy_labels: PathBuf,
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        test_embeddings: PathBuf,
        #[arg(long)]
        test_labels: PathBuf,
        /// filter_then_train, all_samples or top_p_confident.
        #[arg(long, default_value = "filter_then_train")]
        policy: String,
        /// Fraction kept by top_p_confident; 1 − q̂ when omitted.
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value = "lowbudget_aum")]
        filter: String,
    },
    /// Run a full experiment grid.
    RunExperiment {
        #[command(flatten)]
        common: Common,
        /// Built-in config instead of --config.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Print the tool version.
    Version,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenSynth {
            common,
            classes,
            points_per_class,
            dim,
            spread,
            center_spread,
            test_fraction,
        } => commands::gen_synth(
            &common,
            commands::SynthFlags {
                classes,
                points_per_class,
                dim,
                spread,
                center_spread,
                test_fraction,
            },
        ),
        Command::InjectNoise {
            common,
            pool,
            kind,
            rate,
        } => commands::inject_noise(&common, &pool, &kind, rate),
        Command::Select {
            common,
            pool,
            noisy_labels,
            budget,
            strategy,
            delta,
            nas,
            filter,
            inner_batch,
        } => commands::select(
            &common,
            &pool,
            noisy_labels.as_deref(),
            budget,
            commands::SelectFlags {
                strategy,
                delta,
                nas,
                filter,
                inner_batch,
            },
        ),
        Command::Filter {
            common,
            pool,
            noisy_labels,
            labeled,
            name,
        } => commands::filter(&common, &pool, &noisy_labels, &labeled, &name),
        Command::Eval {
            common,
            pool,
            noisy_labels,
            labeled,
            test_embeddings,
            test_labels,
            policy,
            p,
            filter,
        } => commands::eval(
            &common,
            &pool,
            commands::EvalFiles {
                noisy_labels,
                labeled,
                test_embeddings,
                test_labels,
            },
            &policy,
            p,
            &filter,
        ),
        Command::RunExperiment { common, preset } => commands::run_experiment(&common, preset.as_deref()),
        Command::Version => {
            println!("nas {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
