//! Dynamic benchmarking of slot-filling conversational agents against
//! synthetic users.
//!
//! A run pairs an [`participants::Agent`] with a [`participants::SyntheticUser`]
//! and drives them turn by turn ([`engine::run_conversation`]) until the
//! [`schema::DataModelInstance`] is populated or the step budget runs out.
//! Batches of runs are scored with the [`metrics`] module and rendered by
//! [`report`].

pub mod assets;
pub mod backends;
pub mod engine;
pub mod metrics;
pub mod participants;
pub mod report;
pub mod schema;
pub mod transcript;

pub use engine::{run_batch, run_conversation, BatchConfig, BatchResult, RunConfig};
pub use metrics::{CellAggregate, RunMetrics};
pub use participants::ProfileKind;
pub use schema::{
    load_schema, AgentMode, DataModelInstance, DataSchema, FieldValue, GroundTruthProfile,
    LeafPath,
};
pub use transcript::{RunRecord, Termination, Transcript};
