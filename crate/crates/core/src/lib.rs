//! Knowledge-graph embedding training and profession bias auditing.
//!
//! The pipeline is: ingest a TSV triple file into a [`TripleStore`], train a
//! TransE (dot similarity) or ComplEx [`EmbeddingModel`] with negative
//! sampling, then probe the trained embeddings with
//! [`probe::bias_scores`] and render a ranked [`BiasReport`].

pub mod error;
pub mod kv;
pub mod model;
pub mod probe;
pub mod report;
pub mod store;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Argument, EmbeddingModel, ModelKind, ScoreFunction};
pub use probe::{bias_scores, pairwise_bias, BiasProbeSpec, BiasScoreRow, ProbeFile};
pub use report::{render_report, BiasReport, ReportFormat, ReportRow};
pub use store::{EntityId, HumanRule, RelationId, Triple, TripleStore};
pub use synth::SynthSpec;
pub use trainer::{train, LossRecord, Optimizer, TrainConfig};
