//! Files shipped with the harness: the loan data model, its ground-truth
//! profiles, an example batch configuration and the default prompt templates.

pub const LOAN_SCHEMA: &str = include_str!("../assets/loan_schema.json");
pub const LOAN_STANDARD: &str = include_str!("../assets/loan_standard.json");
pub const LOAN_AMBIGUOUS: &str = include_str!("../assets/loan_ambiguous.json");
pub const LOAN_BATCH: &str = include_str!("../assets/loan_batch.json");

pub const AGENT_ONE_SHOT: &str = include_str!("../templates/agent_one_shot.txt");
pub const AGENT_ADAPTIVE: &str = include_str!("../templates/agent_adaptive.txt");
pub const USER_STANDARD: &str = include_str!("../templates/user_standard.txt");
pub const USER_AMBIGUOUS: &str = include_str!("../templates/user_ambiguous.txt");
