//! Fixtures shared by the criterion benches.

use std::sync::Arc;

use convobench::assets::{LOAN_AMBIGUOUS, LOAN_SCHEMA};
use convobench::engine::{run_conversation, RunConfig};
use convobench::participants::{ProfileKind, ScriptedAgent, ScriptedUser, UserProfile};
use convobench::{load_schema, AgentMode, DataSchema, GroundTruthProfile, RunRecord};

pub fn loan_schema() -> Arc<DataSchema> {
    Arc::new(load_schema(LOAN_SCHEMA).expect("shipped schema loads"))
}

pub fn loan_profile(schema: &DataSchema, kind: ProfileKind) -> Arc<UserProfile> {
    let gt = GroundTruthProfile::load(LOAN_AMBIGUOUS, schema).expect("shipped profile loads");
    Arc::new(UserProfile::new(kind, gt).expect("profile builds"))
}

/// One scripted conversation over the shipped loan pair.
pub fn scripted_run(
    schema: &Arc<DataSchema>,
    profile: &Arc<UserProfile>,
    mode: AgentMode,
    seed: u64,
) -> RunRecord {
    let config = RunConfig::new(format!("bench-{seed:04}"), mode, profile.kind(), seed);
    let mut agent = ScriptedAgent::new();
    let mut user = ScriptedUser::new(schema.clone(), profile.clone(), seed);
    run_conversation(&config, schema, profile.ground_truth(), &mut agent, &mut user)
}
