//! Config-driven experiment grid: data × noise × budget × strategy × filter ×
//! policy × seed, written to a sorted CSV plus per-run traces.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datapool::{
    budget_for_spc, generate_synthetic_split, init_label_state, load_embeddings, EmbeddingPool, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, mean_se, EvalSetup, TrainPolicy};
use crate::filters::{FilterInput, FilterSpec, FilterVerdict};
use crate::nas::{complexity_estimate, run_nas, run_plain, write_traces, NasConfig, NasOptions};
use crate::noise::{build_annotator, confusion_transition, Annotator, NoiseKind, NoiseSpec};
use crate::probe::LinearProbeConfig;
use crate::rng;
use crate::strategies::{ProbCoverParams, StrategySpec};

pub const CSV_HEADER: [&str; 14] = [
    "strategy",
    "filter",
    "noise_kind",
    "noise_rate",
    "budget",
    "seed",
    "policy",
    "test_acc",
    "delta_vs_random",
    "precision",
    "recall",
    "q_hat",
    "n_train_used",
    "wall_ms",
];

pub const COMPLETE_MARKER: &str = "_COMPLETE";
pub const RESULTS_FILE: &str = "results.csv";
pub const RECORD_FILE: &str = "run_record.json";

/// Epochs of the weak probe whose confusions define asymmetric noise when no
/// transition matrix is given.
const CONFUSION_PROBE_EPOCHS: usize = 5;

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Files {
        embeddings: PathBuf,
        labels: PathBuf,
        test_embeddings: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        class_count: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BudgetSchedule {
    /// Expected clean samples per class, expanded per noise rate.
    Spc(Vec<usize>),
    Raw(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    /// Label used in the results (e.g. "npc").
    pub name: String,
    pub strategy: StrategySpec,
    /// Present: run the strategy inside NAS with the cell's filter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nas: Option<NasOptions>,
}

fn default_filters() -> Vec<FilterSpec> {
    vec![FilterSpec::lowbudget_aum()]
}

fn default_policies() -> Vec<TrainPolicy> {
    vec![TrainPolicy::FilterThenTrain]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub noise: Vec<NoiseSpec>,
    pub budgets: BudgetSchedule,
    pub strategies: Vec<StrategyEntry>,
    #[serde(default = "default_filters")]
    pub filters: Vec<FilterSpec>,
    #[serde(default = "default_policies")]
    pub policies: Vec<TrainPolicy>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub probe: LinearProbeConfig,
    /// When false the wall_ms column is written as 0 so results are
    /// byte-reproducible; timings still go to the run record.
    #[serde(default = "default_true")]
    pub record_wall_ms: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::config("strategies", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        if self.noise.is_empty() {
            return Err(Error::config("noise", "must not be empty"));
        }
        if self.filters.is_empty() {
            return Err(Error::config("filters", "must not be empty"));
        }
        if self.policies.is_empty() {
            return Err(Error::config("policies", "must not be empty"));
        }
        let budgets = match &self.budgets {
            BudgetSchedule::Spc(v) | BudgetSchedule::Raw(v) => v,
        };
        if budgets.is_empty() || budgets.contains(&0) {
            return Err(Error::config("budgets", "must be a non-empty list of positive values"));
        }
        let mut names = std::collections::BTreeSet::new();
        for (k, s) in self.strategies.iter().enumerate() {
            if s.name.is_empty() || !names.insert(&s.name) {
                return Err(Error::config(
                    format!("strategies[{k}].name"),
                    "must be non-empty and unique",
                ));
            }
            s.strategy
                .validate()
                .map_err(|e| prefix(e, &format!("strategies[{k}]")))?;
            if s.nas.as_ref().and_then(|n| n.inner_batch) == Some(0) {
                return Err(Error::config(
                    format!("strategies[{k}].nas.inner_batch"),
                    "must be >= 1",
                ));
            }
        }
        for (k, f) in self.filters.iter().enumerate() {
            f.validate().map_err(|e| prefix(e, &format!("filters[{k}]")))?;
        }
        for (k, p) in self.policies.iter().enumerate() {
            p.validate().map_err(|e| prefix(e, &format!("policies[{k}]")))?;
        }
        for (k, n) in self.noise.iter().enumerate() {
            if !(0.0..1.0).contains(&n.rate) {
                return Err(Error::config(format!("noise[{k}].rate"), "must be in [0, 1)"));
            }
        }
        self.probe.validate().map_err(|e| prefix(e, "probe"))?;
        if let DataSource::Synthetic { spec, test_fraction } = &self.data {
            spec.validate().map_err(|e| prefix(e, "data.synthetic.spec"))?;
            if !(*test_fraction > 0.0 && test_fraction.is_finite()) {
                return Err(Error::config("data.synthetic.test_fraction", "must be positive"));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form (sorted keys, defaults filled in,
    /// output directory excluded).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Small end-to-end grid: C = 10, N = 2000, 30% symmetric noise, random
    /// vs ProbCover vs NPC, three seeds.
    pub fn smoke() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic {
                spec: SyntheticSpec {
                    class_count: 10,
                    points_per_class: 200,
                    dimension: 16,
                    cluster_spread: SMOKE_SPREAD,
                    center_spread: 1.0,
                    seed: 0,
                },
                test_fraction: 0.2,
            },
            noise: vec![NoiseSpec::symmetric(0.3, 0)],
            budgets: BudgetSchedule::Spc(vec![5]),
            strategies: vec![
                StrategyEntry {
                    name: "random".into(),
                    strategy: StrategySpec::Random,
                    nas: None,
                },
                StrategyEntry {
                    name: "probcover".into(),
                    strategy: StrategySpec::ProbCover(smoke_probcover()),
                    nas: None,
                },
                StrategyEntry {
                    name: "npc".into(),
                    strategy: StrategySpec::ProbCover(smoke_probcover()),
                    nas: Some(NasOptions::default()),
                },
            ],
            filters: default_filters(),
            policies: default_policies(),
            seeds: vec![0, 1, 2],
            probe: LinearProbeConfig::evaluation(),
            record_wall_ms: false,
            output_dir: None,
        }
    }
}

/// Synthetic cluster spread and ProbCover radius used by the smoke preset.
pub const SMOKE_SPREAD: f64 = 0.3;
pub const SMOKE_DELTA: f64 = 0.28;

fn smoke_probcover() -> ProbCoverParams {
    ProbCoverParams {
        delta: SMOKE_DELTA,
        ..ProbCoverParams::default()
    }
}

fn prefix(e: Error, at: &str) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: format!(
                "{at}.{}",
                field.trim_start_matches("strategy.").trim_start_matches("filter.")
            ),
            message,
        },
        other => other,
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: String,
    pub filter: String,
    pub noise_kind: String,
    pub noise_rate: f64,
    pub budget: usize,
    pub seed: u64,
    pub policy: String,
    pub test_acc: f64,
    pub delta_vs_random: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub q_hat: Option<f64>,
    pub n_train_used: usize,
    pub wall_ms: u64,
}

impl ResultRow {
    fn sort_key(&self) -> (&str, &str, &str, u64, usize, u64, &str) {
        (
            &self.strategy,
            &self.filter,
            &self.noise_kind,
            self.noise_rate.to_bits(),
            self.budget,
            self.seed,
            &self.policy,
        )
    }

    fn record(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:.6}");
        let o = |v: Option<f64>| v.map(f).unwrap_or_default();
        vec![
            self.strategy.clone(),
            self.filter.clone(),
            self.noise_kind.clone(),
            format!("{:.4}", self.noise_rate),
            self.budget.to_string(),
            self.seed.to_string(),
            self.policy.clone(),
            f(self.test_acc),
            o(self.delta_vs_random),
            o(self.precision),
            o(self.recall),
            o(self.q_hat),
            self.n_train_used.to_string(),
            self.wall_ms.to_string(),
        ]
    }
}

/// Timing of one selection run, for comparing against the cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub strategy: String,
    pub filter: String,
    pub noise_kind: String,
    pub noise_rate: f64,
    pub budget: usize,
    pub seed: u64,
    pub inner_batch: Option<usize>,
    pub filter_calls: usize,
    pub strategy_ms: f64,
    pub filter_ms: f64,
    pub wall_ms: f64,
    /// `T_S + ceil(B/b)·T_A` with `T_A` the mean measured filter call.
    pub predicted_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub tool_version: String,
    pub rows: Vec<ResultRow>,
    pub trace_files: Vec<PathBuf>,
    pub timings: Vec<CellTiming>,
}

/// Loaded train/test pools.
pub struct Dataset {
    pub pool: EmbeddingPool,
    pub test: EmbeddingPool,
}

pub fn load_data(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic { spec, test_fraction } => {
            let (pool, test) = generate_synthetic_split(spec, *test_fraction)?;
            Ok(Dataset { pool, test })
        }
        DataSource::Files {
            embeddings,
            labels,
            test_embeddings,
            test_labels,
            class_count,
        } => {
            let pool = load_embeddings(embeddings, labels, *class_count)?;
            let test = load_embeddings(test_embeddings, test_labels, Some(pool.class_count()))?;
            Ok(Dataset { pool, test })
        }
    }
}

/// Builds the annotator for a noise spec and grid seed. Asymmetric noise
/// without an explicit matrix uses the confusions of a weak probe, scaled
/// to the spec's rate.
pub fn resolve_annotator(pool: &EmbeddingPool, noise: &NoiseSpec, seed: u64) -> Result<Annotator> {
    let mut spec = noise.clone();
    spec.seed = rng::derive(noise.seed, seed);
    if spec.kind == NoiseKind::Asymmetric && spec.transition.is_none() {
        let t = confusion_transition(pool, CONFUSION_PROBE_EPOCHS, spec.rate, spec.seed)?;
        spec.transition = Some(t.matrix);
    }
    build_annotator(pool, &spec)
}

fn budget_for(schedule_value: usize, is_spc: bool, pool: &EmbeddingPool, rate: f64) -> Result<usize> {
    let b = if is_spc {
        budget_for_spc(schedule_value, pool.class_count(), rate)?
    } else {
        schedule_value
    };
    if b > pool.len() {
        return Err(Error::config(
            "budgets",
            format!("budget {b} exceeds pool size {}", pool.len()),
        ));
    }
    Ok(b)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

struct Unit<'a> {
    noise: &'a NoiseSpec,
    noise_idx: usize,
    budget: usize,
    entry: &'a StrategyEntry,
    filter: &'a FilterSpec,
    seed: u64,
}

struct UnitOutput {
    rows: Vec<ResultRow>,
    timing: CellTiming,
    trace_file: PathBuf,
}

/// Filter verdict for a plain selection run, seeded like the final call of a
/// single-round NAS run.
fn plain_verdict(
    filter: &FilterSpec,
    pool: &EmbeddingPool,
    state: &crate::datapool::LabelState,
    annotator: &Annotator,
    seed: u64,
) -> FilterVerdict {
    let observed = state.labeled_observations();
    let unlabeled = state.unlabeled_vec();
    let input = FilterInput {
        pool,
        labeled: state.labeled(),
        observed: &observed,
        unlabeled: &unlabeled,
        corruption_mask: Some(annotator.corruption_mask()),
        seed: rng::derive(rng::derive(seed, rng::FILTER), 1),
    };
    filter
        .apply(&input)
        .unwrap_or_else(|_| FilterVerdict::all_clean(state.labeled()))
}

fn run_unit(
    unit: &Unit<'_>,
    data: &Dataset,
    annotator: &Annotator,
    config: &ExperimentConfig,
    trace_dir: &Path,
) -> Result<UnitOutput> {
    let pool = &data.pool;
    let mut state = init_label_state(pool, unit.budget)?;
    let start = Instant::now();
    let (outcome, inner_batch) = match &unit.entry.nas {
        Some(opts) => {
            let cfg = NasConfig {
                strategy: unit.entry.strategy.clone(),
                filter: unit.filter.clone(),
                options: opts.clone(),
            };
            let b = cfg.inner_batch(pool.class_count());
            (run_nas(pool, annotator, &mut state, &cfg, unit.seed)?, Some(b))
        }
        None => (
            run_plain(pool, annotator, &mut state, &unit.entry.strategy, unit.seed)?,
            None,
        ),
    };
    let wall = start.elapsed();
    let verdict = match &outcome.final_verdict {
        Some(v) => v.clone(),
        None => plain_verdict(unit.filter, pool, &state, annotator, unit.seed),
    };

    let name = format!(
        "{}__{}__{}{}_{:.4}__b{}__s{}.jsonl",
        sanitize(&unit.entry.name),
        sanitize(unit.filter.name()),
        unit.noise_idx,
        unit.noise.kind.as_str(),
        unit.noise.rate,
        unit.budget,
        unit.seed
    );
    let trace_file = trace_dir.join(name);
    let f = fs::File::create(&trace_file).map_err(|source| Error::File {
        path: trace_file.clone(),
        source,
    })?;
    write_traces(&outcome.traces, BufWriter::new(f))?;

    let wall_ms = if config.record_wall_ms {
        wall.as_millis() as u64
    } else {
        0
    };
    let mut rows = Vec::new();
    for policy in &config.policies {
        let r = evaluate(
            pool,
            &data.test,
            &state,
            &EvalSetup {
                policy,
                verdict: Some(&verdict),
                probe: &config.probe,
                corruption_mask: Some(annotator.corruption_mask()),
                seed: unit.seed,
            },
        )?;
        let metrics = r.filter.expect("verdict and mask given");
        rows.push(ResultRow {
            strategy: unit.entry.name.clone(),
            filter: unit.filter.name().to_string(),
            noise_kind: unit.noise.kind.as_str().to_string(),
            noise_rate: unit.noise.rate,
            budget: unit.budget,
            seed: unit.seed,
            policy: policy.name().to_string(),
            test_acc: r.test_accuracy,
            delta_vs_random: None,
            precision: Some(metrics.precision),
            recall: Some(metrics.recall),
            q_hat: Some(metrics.predicted_ratio),
            n_train_used: r.n_train_used,
            wall_ms,
        });
    }
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    let predicted_ms = inner_batch.filter(|_| outcome.filter_calls > 0).map(|b| {
        let per_call = ms(outcome.filter_time) / outcome.filter_calls as f64;
        complexity_estimate(b, unit.budget, ms(outcome.strategy_time), per_call)
    });
    Ok(UnitOutput {
        rows,
        timing: CellTiming {
            strategy: unit.entry.name.clone(),
            filter: unit.filter.name().to_string(),
            noise_kind: unit.noise.kind.as_str().to_string(),
            noise_rate: unit.noise.rate,
            budget: unit.budget,
            seed: unit.seed,
            inner_batch,
            filter_calls: outcome.filter_calls,
            strategy_ms: ms(outcome.strategy_time),
            filter_ms: ms(outcome.filter_time),
            wall_ms: ms(wall),
            predicted_ms,
        },
        trace_file,
    })
}

/// Writes `rows` with [`CSV_HEADER`] through a temporary file.
pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(CSV_HEADER)?;
        for r in rows {
            w.write_record(r.record())?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Fills `delta_vs_random` from the matching plain-random row.
pub fn attach_random_deltas(rows: &mut [ResultRow], random_names: &[String]) {
    let mut base: BTreeMap<(String, String, u64, usize, u64, String), f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| random_names.contains(&r.strategy)) {
        base.entry((
            r.filter.clone(),
            r.noise_kind.clone(),
            r.noise_rate.to_bits(),
            r.budget,
            r.seed,
            r.policy.clone(),
        ))
        .or_insert(r.test_acc);
    }
    for r in rows.iter_mut() {
        let key = (
            r.filter.clone(),
            r.noise_kind.clone(),
            r.noise_rate.to_bits(),
            r.budget,
            r.seed,
            r.policy.clone(),
        );
        r.delta_vs_random = base.get(&key).map(|b| r.test_acc - b);
    }
}

/// Runs the whole grid into `out_dir`.
///
/// Rows are appended to `results.csv` as cells finish; on success the file is
/// rewritten in sorted order with deltas and `_COMPLETE` is created. A failed
/// run leaves the partial CSV without the marker.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunRecord> {
    config.validate()?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::File { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let marker = out_dir.join(COMPLETE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(io(&marker))?;
    }
    let trace_dir = out_dir.join("traces");
    fs::create_dir_all(&trace_dir).map_err(io(&trace_dir))?;

    let data = load_data(&config.data)?;
    let pool = &data.pool;

    let (values, is_spc) = match &config.budgets {
        BudgetSchedule::Spc(v) => (v, true),
        BudgetSchedule::Raw(v) => (v, false),
    };
    let mut units = Vec::new();
    for (noise_idx, noise) in config.noise.iter().enumerate() {
        for &v in values {
            let budget = budget_for(v, is_spc, pool, noise.rate)?;
            for entry in &config.strategies {
                if let Some(opts) = &entry.nas {
                    if opts.warmup_budget >= budget {
                        return Err(Error::config(
                            format!("strategies.{}.nas.warmup_budget", entry.name),
                            "must be smaller than every budget",
                        ));
                    }
                }
                for filter in &config.filters {
                    for &seed in &config.seeds {
                        units.push(Unit {
                            noise,
                            noise_idx,
                            budget,
                            entry,
                            filter,
                            seed,
                        });
                    }
                }
            }
        }
    }

    let annotators: BTreeMap<(usize, u64), Annotator> = config
        .noise
        .iter()
        .enumerate()
        .flat_map(|(k, n)| config.seeds.iter().map(move |&s| (k, s, n)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(k, s, n)| resolve_annotator(pool, n, s).map(|a| ((k, s), a)))
        .collect::<Result<_>>()?;

    let csv_path = out_dir.join(RESULTS_FILE);
    let partial = Mutex::new({
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(CSV_HEADER)?;
        w.flush()?;
        w
    });
    let outputs: Vec<UnitOutput> = units
        .par_iter()
        .map(|u| {
            let out = run_unit(u, &data, &annotators[&(u.noise_idx, u.seed)], config, &trace_dir)?;
            let mut w = partial.lock().expect("writer lock");
            for r in &out.rows {
                w.write_record(r.record())?;
            }
            w.flush()?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    drop(partial);

    let mut rows: Vec<ResultRow> = Vec::new();
    let mut timings = Vec::new();
    let mut trace_files = Vec::new();
    for o in outputs {
        rows.extend(o.rows);
        timings.push(o.timing);
        trace_files.push(o.trace_file);
    }
    let random_names: Vec<String> = config
        .strategies
        .iter()
        .filter(|e| e.strategy == StrategySpec::Random && e.nas.is_none())
        .map(|e| e.name.clone())
        .collect();
    attach_random_deltas(&mut rows, &random_names);
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    trace_files.sort();
    write_results(&csv_path, &rows)?;

    let record = RunRecord {
        config_hash: config.hash(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        rows,
        trace_files,
        timings,
    };
    let record_path = out_dir.join(RECORD_FILE);
    fs::write(&record_path, serde_json::to_string_pretty(&record)?).map_err(io(&record_path))?;
    fs::write(&marker, b"").map_err(io(&marker))?;
    Ok(record)
}

/// Mean accuracy and delta (± standard error) per cell, over seeds.
pub fn summary_table(rows: &[ResultRow]) -> String {
    type Key = (String, String, String, u64, usize, String);
    let mut groups: BTreeMap<Key, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let g = groups
            .entry((
                r.strategy.clone(),
                r.filter.clone(),
                r.noise_kind.clone(),
                r.noise_rate.to_bits(),
                r.budget,
                r.policy.clone(),
            ))
            .or_default();
        g.0.push(r.test_acc);
        if let Some(d) = r.delta_vs_random {
            g.1.push(d);
        }
    }
    let mut out = format!(
        "{:<14} {:<16} {:<20} {:>7} {:<18} {:>5} {:>8} {:>18}\n",
        "strategy", "filter", "noise", "budget", "policy", "seeds", "acc", "delta ± se"
    );
    for ((s, f, nk, rate, b, p), (acc, delta)) in groups {
        let (am, _) = mean_se(&acc);
        let d = if delta.is_empty() {
            "-".to_string()
        } else {
            let (m, se) = mean_se(&delta);
            format!("{m:+.4} ± {se:.4}")
        };
        out.push_str(&format!(
            "{:<14} {:<16} {:<20} {:>7} {:<18} {:>5} {:>8.4} {:>18}\n",
            s,
            f,
            format!("{nk}@{:.2}", f64::from_bits(rate)),
            b,
            p,
            acc.len(),
            am,
            d
        ));
    }
    out
}
