//! Noise-aware active learning on fixed embeddings: coverage-based query
//! strategies (ProbCover, MaxHerding, Coreset), low-budget label-noise
//! filters, the NAS meta-loop (NPC / Weighted NPC), a simulated noisy
//! annotator, linear-probe evaluation and an experiment harness.

pub mod covergraph;
pub mod datapool;
pub mod error;
pub mod evaluation;
pub mod filters;
pub mod harness;
pub mod nas;
pub mod noise;
pub mod probe;
pub mod rng;
pub mod strategies;

pub use covergraph::{CoverGraph, DeltaUpdate};
pub use datapool::{EmbeddingPool, LabelState, SyntheticSpec};
pub use error::{Error, Result};
pub use evaluation::{EvalResult, TrainPolicy};
pub use filters::{FilterSpec, FilterVerdict};
pub use harness::{ExperimentConfig, RunRecord};
pub use nas::{NasConfig, NasOptions, RoundTrace};
pub use noise::{Annotator, NoiseSpec};
pub use probe::{LinearProbe, LinearProbeConfig};
pub use strategies::{Selector, StrategySpec};
