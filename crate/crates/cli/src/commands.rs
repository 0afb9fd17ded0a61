use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use nas_core::datapool::{
    generate_synthetic, generate_synthetic_split, init_label_state, load_embeddings, read_labels, save_embeddings,
    write_labels, LabelState,
};
use nas_core::evaluation::{evaluate, EvalSetup};
use nas_core::filters::FilterInput;
use nas_core::harness::{self, ExperimentConfig, ResultRow};
use nas_core::nas::{run_nas, run_plain, write_traces, NasConfig, NasOptions};
use nas_core::noise::{NoiseKind, NoiseSpec};
use nas_core::{
    Annotator, EmbeddingPool, Error, FilterSpec, LinearProbeConfig, Result, StrategySpec, SyntheticSpec, TrainPolicy,
};

use crate::{Common, PoolArgs};

pub struct SynthFlags {
    pub classes: usize,
    pub points_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub center_spread: f64,
    pub test_fraction: f64,
}

pub struct SelectFlags {
    pub strategy: String,
    pub delta: Option<f64>,
    pub nas: bool,
    pub filter: String,
    pub inner_batch: Option<usize>,
}

pub struct EvalFiles {
    pub noisy_labels: PathBuf,
    pub labeled: PathBuf,
    pub test_embeddings: PathBuf,
    pub test_labels: PathBuf,
}

/// `select --config` document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectConfig {
    strategy: StrategySpec,
    #[serde(default)]
    filter: Option<FilterSpec>,
    /// Present means the strategy runs inside the noise-aware loop.
    #[serde(default)]
    nas: Option<NasOptions>,
}

/// `eval --config` document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    policy: TrainPolicy,
    #[serde(default = "FilterSpec::lowbudget_aum")]
    filter: FilterSpec,
    #[serde(default = "LinearProbeConfig::evaluation")]
    probe: LinearProbeConfig,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn out_path(common: &Common) -> Result<&Path> {
    common.out.as_deref().ok_or_else(|| invalid("--out is required"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })
}

fn load_pool(args: &PoolArgs) -> Result<EmbeddingPool> {
    load_embeddings(&args.embeddings, &args.labels, args.classes)
}

fn load_annotator(pool: &EmbeddingPool, noisy: Option<&Path>) -> Result<Annotator> {
    let labels = match noisy {
        Some(p) => read_labels(p)?,
        None => pool.true_labels().to_vec(),
    };
    Annotator::from_labels(pool, labels)
}

/// Builds a state whose labeled set is `labeled`, annotated by `annotator`.
fn labeled_state(pool: &EmbeddingPool, annotator: &Annotator, labeled: &[usize]) -> Result<LabelState> {
    if labeled.is_empty() {
        return Err(invalid("the labeled index file is empty"));
    }
    let mut state = init_label_state(pool, labeled.len())?;
    state.record(0, &annotator.annotate(labeled)?)?;
    Ok(state)
}

fn filter_from_name(name: &str) -> Result<FilterSpec> {
    serde_json::from_value(json!({ "name": name }))
        .map_err(|e| Error::config("filter", format!("unknown or incomplete filter {name:?}: {e}")))
}

fn strategy_from_flags(name: &str, delta: Option<f64>) -> Result<StrategySpec> {
    let mut v = json!({ "kind": name });
    if let Some(d) = delta {
        if name != "probcover" {
            return Err(invalid("--delta only applies to probcover"));
        }
        v["delta"] = Value::from(d);
    }
    serde_json::from_value(v).map_err(|e| Error::config("strategy", format!("unknown strategy {name:?}: {e}")))
}

fn policy_from_name(name: &str, p: Option<f64>) -> Result<TrainPolicy> {
    let mut v = json!({ "mode": name });
    if let Some(p) = p {
        v["p"] = Value::from(p);
    }
    serde_json::from_value(v).map_err(|e| Error::config("policy", format!("unknown policy {name:?}: {e}")))
}

pub fn gen_synth(common: &Common, flags: SynthFlags) -> Result<()> {
    let out = out_path(common)?;
    let mut spec = match &common.config {
        Some(p) => read_config::<SyntheticSpec>(p)?,
        None => SyntheticSpec {
            class_count: flags.classes,
            points_per_class: flags.points_per_class,
            dimension: flags.dim,
            cluster_spread: flags.spread,
            center_spread: flags.center_spread,
            seed: 0,
        },
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    create_dir(out)?;
    let pool = if flags.test_fraction > 0.0 {
        let (pool, test) = generate_synthetic_split(&spec, flags.test_fraction)?;
        save_embeddings(&test, &out.join("test_embeddings.alne"))?;
        write_labels(&out.join("test_labels.txt"), test.true_labels())?;
        pool
    } else {
        generate_synthetic(&spec)?
    };
    save_embeddings(&pool, &out.join("embeddings.alne"))?;
    write_labels(&out.join("labels.txt"), pool.true_labels())?;
    println!(
        "wrote {} samples ({} classes, dim {}) to {}",
        pool.len(),
        pool.class_count(),
        pool.dim(),
        out.display()
    );
    Ok(())
}

pub fn inject_noise(common: &Common, args: &PoolArgs, kind: &str, rate: f64) -> Result<()> {
    let out = out_path(common)?;
    let pool = load_pool(args)?;
    let mut spec = match &common.config {
        Some(p) => read_config::<NoiseSpec>(p)?,
        None => {
            let kind: NoiseKind = serde_json::from_value(Value::from(kind))
                .map_err(|_| Error::config("kind", format!("unknown noise kind {kind:?}")))?;
            NoiseSpec {
                kind,
                rate,
                transition: None,
                cluster_fraction: None,
                anchors: None,
                seed: 0,
            }
        }
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let annotator = harness::resolve_annotator(&pool, &spec, 0)?;
    annotator.export_labels(out)?;
    println!(
        "realized noise rate {:.4} over {} samples",
        annotator.realized_rate(),
        annotator.len()
    );
    Ok(())
}

pub fn select(common: &Common, args: &PoolArgs, noisy: Option<&Path>, budget: usize, flags: SelectFlags) -> Result<()> {
    let out = out_path(common)?;
    let seed = common.seed.unwrap_or(0);
    let pool = load_pool(args)?;
    let annotator = load_annotator(&pool, noisy)?;
    let (strategy, nas) = match &common.config {
        Some(p) => {
            let c: SelectConfig = read_config(p)?;
            let nas = c.nas.map(|options| NasConfig {
                strategy: c.strategy.clone(),
                filter: c.filter.clone().unwrap_or_else(FilterSpec::lowbudget_aum),
                options,
            });
            (c.strategy, nas)
        }
        None => {
            let strategy = strategy_from_flags(&flags.strategy, flags.delta)?;
            let nas = if flags.nas {
                let mut cfg = NasConfig::new(strategy.clone(), filter_from_name(&flags.filter)?);
                cfg.options.inner_batch = flags.inner_batch;
                Some(cfg)
            } else {
                None
            };
            (strategy, nas)
        }
    };
    let mut state = init_label_state(&pool, budget)?;
    let outcome = match &nas {
        Some(cfg) => run_nas(&pool, &annotator, &mut state, cfg, seed)?,
        None => run_plain(&pool, &annotator, &mut state, &strategy, seed)?,
    };
    create_dir(out)?;
    write_labels(&out.join("picks.txt"), state.labeled())?;
    let trace_path = out.join("traces.jsonl");
    let file = fs::File::create(&trace_path).map_err(|source| Error::File {
        path: trace_path.clone(),
        source,
    })?;
    write_traces(&outcome.traces, BufWriter::new(file))?;
    println!(
        "selected {} samples in {} rounds ({} filter calls)",
        state.labeled().len(),
        outcome.traces.len(),
        outcome.filter_calls
    );
    Ok(())
}

pub fn filter(common: &Common, args: &PoolArgs, noisy: &Path, labeled: &Path, name: &str) -> Result<()> {
    let out = out_path(common)?;
    let pool = load_pool(args)?;
    let annotator = load_annotator(&pool, Some(noisy))?;
    let spec = match &common.config {
        Some(p) => read_config::<FilterSpec>(p)?,
        None => filter_from_name(name)?,
    };
    spec.validate()?;
    let state = labeled_state(&pool, &annotator, &read_labels(labeled)?)?;
    let observed = state.labeled_observations();
    let unlabeled = state.unlabeled_vec();
    let input = FilterInput {
        pool: &pool,
        labeled: state.labeled(),
        observed: &observed,
        unlabeled: &unlabeled,
        corruption_mask: Some(annotator.corruption_mask()),
        seed: common.seed.unwrap_or(0),
    };
    let verdict = spec.apply(&input)?;
    let file = fs::File::create(out).map_err(|source| Error::File {
        path: out.to_path_buf(),
        source,
    })?;
    verdict.write_text(state.observed_labels(), BufWriter::new(file))?;
    println!(
        "{}: {} clean, {} noisy, predicted noise ratio {:.4}",
        spec.name(),
        verdict.clean.len(),
        verdict.noisy.len(),
        verdict.predicted_noise_ratio
    );
    Ok(())
}

pub fn eval(
    common: &Common,
    args: &PoolArgs,
    files: EvalFiles,
    policy: &str,
    p: Option<f64>,
    filter: &str,
) -> Result<()> {
    let out = out_path(common)?;
    let seed = common.seed.unwrap_or(0);
    let config = match &common.config {
        Some(path) => read_config::<EvalConfig>(path)?,
        None => EvalConfig {
            policy: policy_from_name(policy, p)?,
            filter: filter_from_name(filter)?,
            probe: LinearProbeConfig::evaluation(),
        },
    };
    config.filter.validate()?;
    let pool = load_pool(args)?;
    let test = load_embeddings(&files.test_embeddings, &files.test_labels, Some(pool.class_count()))?;
    let annotator = load_annotator(&pool, Some(&files.noisy_labels))?;
    let state = labeled_state(&pool, &annotator, &read_labels(&files.labeled)?)?;
    let start = Instant::now();
    let observed = state.labeled_observations();
    let unlabeled = state.unlabeled_vec();
    let verdict = config.filter.apply(&FilterInput {
        pool: &pool,
        labeled: state.labeled(),
        observed: &observed,
        unlabeled: &unlabeled,
        corruption_mask: Some(annotator.corruption_mask()),
        seed,
    })?;
    let result = evaluate(
        &pool,
        &test,
        &state,
        &EvalSetup {
            policy: &config.policy,
            verdict: Some(&verdict),
            probe: &config.probe,
            corruption_mask: Some(annotator.corruption_mask()),
            seed,
        },
    )?;
    let metrics = result.filter.as_ref();
    let row = ResultRow {
        strategy: "external".into(),
        filter: config.filter.name().into(),
        noise_kind: "file".into(),
        noise_rate: annotator.realized_rate(),
        budget: state.labeled().len(),
        seed,
        policy: config.policy.name().into(),
        test_acc: result.test_accuracy,
        delta_vs_random: None,
        precision: metrics.map(|m| m.precision),
        recall: metrics.map(|m| m.recall),
        q_hat: Some(verdict.predicted_noise_ratio),
        n_train_used: result.n_train_used,
        wall_ms: start.elapsed().as_millis() as u64,
    };
    harness::write_results(out, &[row])?;
    println!(
        "test accuracy {:.4} trained on {} samples",
        result.test_accuracy, result.n_train_used
    );
    Ok(())
}

pub fn run_experiment(common: &Common, preset: Option<&str>) -> Result<()> {
    let mut config = match (preset, &common.config) {
        (Some("smoke"), None) => ExperimentConfig::smoke(),
        (Some(other), None) => return Err(invalid(format!("unknown preset {other:?}"))),
        (None, Some(path)) => ExperimentConfig::load(path)?,
        (Some(_), Some(_)) => return Err(invalid("--preset and --config are mutually exclusive")),
        (None, None) => return Err(invalid("either --config or --preset is required")),
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    let out = common
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| invalid("--out is required when the config has no output_dir"))?;
    let record = harness::run_experiment(&config, &out)?;
    print!("{}", harness::summary_table(&record.rows));
    println!(
        "{} rows written to {} (config {})",
        record.rows.len(),
        out.join(harness::RESULTS_FILE).display(),
        &record.config_hash[..12]
    );
    Ok(())
}
