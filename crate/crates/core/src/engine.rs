//! The simulation loop and the batch runner.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{ChatBackend, GenerationParams};
use crate::metrics::{cell_aggregate, Cell, CellAggregate, MetricsError};
use crate::participants::{
    parse_envelope, render, Agent, EnvelopeError, LlmAgent, LlmUser, ProfileError, ProfileKind,
    PromptTemplateSet, ScriptedAgent, ScriptedUser, StepError, SyntheticUser, TurnContext,
    UserProfile,
};
use crate::schema::{
    apply_snapshot, is_terminal, load_schema, AgentMode, DataModelInstance, DataSchema,
    GroundTruthProfile, SchemaError,
};
use crate::transcript::{
    persist_run, PersistError, Role, RunRecord, RunSummary, Termination, Transcript,
    TurnViolation,
};

pub const DEFAULT_MAX_ITERATIONS: u32 = 40;
pub const DEFAULT_PARSE_RETRIES: u32 = 2;
pub const DEFAULT_RUNS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Scripted,
    Llm,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot build participants: {0}")]
    Participants(#[from] StepError),
}

/// Settings for a single conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub mode: AgentMode,
    pub profile: ProfileKind,
    pub backend: BackendChoice,
    pub seed: u64,
    /// Maximum user+agent iterations (T).
    pub max_iterations: u32,
    /// Corrective retries per agent turn (k).
    pub parse_retries: u32,
    /// Generation parameters for model-backed participants.
    pub params: GenerationParams,
    /// Scripted runs store 0 so their run files stay byte-identical.
    pub record_wall_time: bool,
}

impl RunConfig {
    pub fn new(run_id: impl Into<String>, mode: AgentMode, profile: ProfileKind, seed: u64) -> Self {
        Self {
            run_id: run_id.into(),
            mode,
            profile,
            backend: BackendChoice::Scripted,
            seed,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            parse_retries: DEFAULT_PARSE_RETRIES,
            params: GenerationParams::default(),
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_iterations == 0 {
            return Err(EngineError::Config("T must be at least 1".into()));
        }
        Ok(())
    }

    fn summary(&self) -> RunSummary {
        RunSummary {
            mode: self.mode,
            profile: self.profile,
            backend: self.backend,
            seed: self.seed,
            max_iterations: self.max_iterations,
        }
    }
}

/// Runs one conversation until the data model is terminal for the mode, the
/// iteration budget is spent, or a participant fails.
pub fn run_conversation(
    config: &RunConfig,
    schema: &DataSchema,
    ground_truth: &GroundTruthProfile,
    agent: &mut dyn Agent,
    user: &mut dyn SyntheticUser,
) -> RunRecord {
    let started = Instant::now();
    let mut instance = DataModelInstance::empty(schema);
    let mut transcript = Transcript::new();
    let mut snapshots = Vec::new();
    let mut violations = Vec::new();
    let mut parse_failures = 0;
    let mut iterations = 0;
    let mut outcome: Option<(Termination, Option<String>)> = None;

    while iterations < config.max_iterations {
        iterations += 1;
        let text = match user.reply(&transcript) {
            Ok(t) => t,
            Err(e) => {
                outcome = Some((Termination::BackendFailure, Some(format!("user: {e}"))));
                break;
            }
        };
        transcript
            .append_turn(Role::User, text, Some(instance.digest()))
            .expect("engine alternates turns");
        snapshots.push(instance.clone());

        let ctx = TurnContext {
            schema,
            instance: &instance,
            transcript: &transcript,
            mode: config.mode,
        };
        let reply = match agent.reply(&ctx) {
            Ok(r) => r,
            Err(StepError::Parse { attempts, last }) => {
                parse_failures += attempts;
                outcome = Some((Termination::ParseFailure, Some(format!("agent: {last}"))));
                break;
            }
            Err(e) => {
                outcome = Some((Termination::BackendFailure, Some(format!("agent: {e}"))));
                break;
            }
        };
        parse_failures += reply.failed_attempts;
        let (next, turn_violations) = apply_snapshot(schema, &instance, reply.envelope.entries());
        let turn = transcript.len();
        violations.extend(turn_violations.into_iter().map(|violation| TurnViolation { turn, violation }));
        instance = next;
        transcript
            .append_turn(Role::Agent, render(&reply.envelope), Some(instance.digest()))
            .expect("engine alternates turns");
        snapshots.push(instance.clone());
        if is_terminal(&instance, config.mode) {
            break;
        }
    }

    let (termination, error) = outcome.unwrap_or_else(|| {
        if is_terminal(&instance, config.mode) {
            (Termination::Complete, None)
        } else {
            (Termination::MaxSteps, None)
        }
    });
    let wall_ms = if config.record_wall_time {
        u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX)
    } else {
        0
    };
    RunRecord {
        run_id: config.run_id.clone(),
        schema: schema.name.clone(),
        config: config.summary(),
        expected: ground_truth.values.clone(),
        transcript,
        snapshots,
        final_instance: instance,
        termination,
        error,
        iterations,
        violations,
        parse_failures,
        wall_ms,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("run uses schema {found}, expected {expected}")]
    Schema { expected: String, found: String },
    #[error("turn {turn}: stored envelope does not parse: {source}")]
    Envelope { turn: usize, source: EnvelopeError },
    #[error("turn {turn}: replayed state differs from the stored digest")]
    Digest { turn: usize },
    #[error("replayed violations differ from the stored ones")]
    Violations,
    #[error("replayed final instance differs from the stored one")]
    Final,
}

/// Re-applies the stored agent envelopes of a run from an empty instance and
/// checks every digest, the violations and the final instance.
pub fn replay(record: &RunRecord, schema: &DataSchema) -> Result<DataModelInstance, ReplayError> {
    if record.schema != schema.name {
        return Err(ReplayError::Schema {
            expected: schema.name.clone(),
            found: record.schema.clone(),
        });
    }
    let mut instance = DataModelInstance::empty(schema);
    let mut violations = Vec::new();
    for turn in record.transcript.turns() {
        if turn.role == Role::Agent {
            let envelope = parse_envelope(&turn.content).map_err(|source| ReplayError::Envelope {
                turn: turn.index,
                source,
            })?;
            let (next, v) = apply_snapshot(schema, &instance, envelope.entries());
            violations.extend(v.into_iter().map(|violation| TurnViolation {
                turn: turn.index,
                violation,
            }));
            instance = next;
        }
        if turn.snapshot_digest.as_deref() != Some(instance.digest().as_str()) {
            return Err(ReplayError::Digest { turn: turn.index });
        }
    }
    if violations != record.violations {
        return Err(ReplayError::Violations);
    }
    if instance != record.final_instance {
        return Err(ReplayError::Final);
    }
    Ok(instance)
}

/// One (mode, profile) cell of a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub mode: AgentMode,
    pub profile: ProfileKind,
    /// Overrides the batch-level ground truth for this cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

impl CellConfig {
    pub fn new(mode: AgentMode, profile: ProfileKind) -> Self {
        Self {
            mode,
            profile,
            ground_truth: None,
        }
    }

    pub fn cell(&self) -> Cell {
        Cell {
            mode: self.mode,
            profile: self.profile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSettings {
    pub model: String,
    pub base_url: String,
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_max_tokens() -> u32 {
    GenerationParams::default().max_tokens
}

fn default_timeout_secs() -> u64 {
    GenerationParams::default().timeout.as_secs()
}

impl Default for LlmSettings {
    fn default() -> Self {
        let p = GenerationParams::default();
        Self {
            model: p.model,
            base_url: "https://api.openai.com/v1".into(),
            temperature: p.temperature,
            max_tokens: p.max_tokens,
            timeout_secs: p.timeout.as_secs(),
        }
    }
}

impl LlmSettings {
    pub fn params(&self) -> GenerationParams {
        GenerationParams {
            model: self.model.clone(),
            temperature: self.temperature,
            seed: None,
            max_tokens: self.max_tokens,
            timeout: Duration::from_secs(self.timeout_secs),
        }
    }
}

fn default_runs() -> u32 {
    DEFAULT_RUNS
}

fn default_t() -> u32 {
    DEFAULT_MAX_ITERATIONS
}

fn default_k() -> u32 {
    DEFAULT_PARSE_RETRIES
}

fn default_backend() -> BackendChoice {
    BackendChoice::Scripted
}

fn default_out() -> PathBuf {
    PathBuf::from("convo-bench-out")
}

/// Batch description as read from a config file.
///
/// `schema` and `ground_truth` paths are resolved against the config file's
/// directory by [`BatchConfig::load`]; `out` is taken as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub schema: PathBuf,
    pub ground_truth: PathBuf,
    pub cells: Vec<CellConfig>,
    #[serde(default = "default_runs")]
    pub runs: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_backend")]
    pub backend: BackendChoice,
    #[serde(rename = "T", default = "default_t")]
    pub max_iterations: u32,
    #[serde(default = "default_k")]
    pub parse_retries: u32,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub llm: LlmSettings,
    /// Parallel runs; defaults to the number of cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Prefix of run ids; defaults to `b<seed>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_id: Option<String>,
}

impl BatchConfig {
    pub fn parse(source: &str) -> Result<Self, EngineError> {
        let config: Self = serde_json::from_str(source)
            .map_err(|e| EngineError::Config(format!("bad batch config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let source = fs::read_to_string(path)
            .map_err(|e| EngineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&source)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.schema = base.join(&config.schema);
        config.ground_truth = base.join(&config.ground_truth);
        for cell in &mut config.cells {
            if let Some(gt) = &cell.ground_truth {
                cell.ground_truth = Some(base.join(gt));
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.cells.is_empty() {
            return Err(EngineError::Config("batch has no cells".into()));
        }
        if self.runs == 0 {
            return Err(EngineError::Config("runs per cell must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(EngineError::Config("T must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(EngineError::Config("workers must be at least 1".into()));
        }
        self.llm
            .params()
            .validate()
            .map_err(|e| EngineError::Config(e.to_string()))
    }

    pub fn batch_id(&self) -> String {
        self.batch_id.clone().unwrap_or_else(|| format!("b{}", self.seed))
    }
}

/// Builds the participants of each run.
pub trait ParticipantFactory: Sync {
    fn agent(&self, run: &RunConfig, schema: &Arc<DataSchema>) -> Result<Box<dyn Agent>, EngineError>;

    fn user(
        &self,
        run: &RunConfig,
        schema: &Arc<DataSchema>,
        profile: &Arc<UserProfile>,
    ) -> Result<Box<dyn SyntheticUser>, EngineError>;
}

/// Scripted agent against scripted user; the user is seeded with the run seed.
#[derive(Debug, Default, Clone, Copy)]
pub struct ScriptedFactory;

impl ParticipantFactory for ScriptedFactory {
    fn agent(&self, _run: &RunConfig, _schema: &Arc<DataSchema>) -> Result<Box<dyn Agent>, EngineError> {
        Ok(Box::new(ScriptedAgent::new()))
    }

    fn user(
        &self,
        run: &RunConfig,
        schema: &Arc<DataSchema>,
        profile: &Arc<UserProfile>,
    ) -> Result<Box<dyn SyntheticUser>, EngineError> {
        Ok(Box::new(ScriptedUser::new(schema.clone(), profile.clone(), run.seed)))
    }
}

/// Model-backed agent and user sharing one backend.
pub struct LlmFactory {
    pub backend: Arc<dyn ChatBackend>,
    pub templates: Arc<PromptTemplateSet>,
}

impl LlmFactory {
    fn params(run: &RunConfig) -> GenerationParams {
        GenerationParams {
            seed: Some(run.seed),
            ..run.params.clone()
        }
    }
}

impl ParticipantFactory for LlmFactory {
    fn agent(&self, run: &RunConfig, _schema: &Arc<DataSchema>) -> Result<Box<dyn Agent>, EngineError> {
        Ok(Box::new(LlmAgent::new(
            self.backend.clone(),
            self.templates.clone(),
            Self::params(run),
            run.parse_retries,
        )))
    }

    fn user(
        &self,
        run: &RunConfig,
        schema: &Arc<DataSchema>,
        profile: &Arc<UserProfile>,
    ) -> Result<Box<dyn SyntheticUser>, EngineError> {
        Ok(Box::new(LlmUser::new(
            self.backend.clone(),
            &self.templates,
            schema,
            profile,
            Self::params(run),
        )?))
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub config: CellConfig,
    /// Ordered by run index.
    pub records: Vec<RunRecord>,
    pub aggregate: CellAggregate,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub out_dir: PathBuf,
    pub cells: Vec<CellResult>,
}

impl BatchResult {
    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.cells.iter().flat_map(|c| c.records.iter())
    }

    pub fn aggregates(&self) -> Vec<&CellAggregate> {
        self.cells.iter().map(|c| &c.aggregate).collect()
    }
}

struct Job {
    cell: usize,
    run: RunConfig,
}

/// Runs every cell of a batch, persisting one run file per conversation.
///
/// Inputs are loaded and checked before any run starts. Runs execute on a
/// bounded pool; results are assembled in (cell, run index) order.
pub fn run_batch(config: &BatchConfig, factory: &dyn ParticipantFactory) -> Result<BatchResult, EngineError> {
    config.validate()?;
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|e| EngineError::Config(format!("cannot read {}: {e}", p.display())))
    };
    let schema = Arc::new(load_schema(&read(&config.schema)?)?);
    let default_gt = GroundTruthProfile::load(&read(&config.ground_truth)?, &schema)?;
    let mut cell_inputs = Vec::with_capacity(config.cells.len());
    for cell in &config.cells {
        let gt = match &cell.ground_truth {
            Some(p) => GroundTruthProfile::load(&read(p)?, &schema)?,
            None => default_gt.clone(),
        };
        let profile = Arc::new(UserProfile::new(cell.profile, gt)?);
        cell_inputs.push(profile);
    }
    fs::create_dir_all(&config.out)
        .map_err(|e| EngineError::Config(format!("cannot create {}: {e}", config.out.display())))?;

    let batch_id = config.batch_id();
    let runs = config.runs as usize;
    let jobs: Vec<Job> = config
        .cells
        .iter()
        .enumerate()
        .flat_map(|(ci, cell)| {
            let batch_id = &batch_id;
            (0..runs).map(move |r| Job {
                cell: ci,
                run: RunConfig {
                    run_id: format!("{batch_id}-{:04}", ci * runs + r),
                    mode: cell.mode,
                    profile: cell.profile,
                    backend: config.backend,
                    seed: config.seed.wrapping_add(r as u64),
                    max_iterations: config.max_iterations,
                    parse_retries: config.parse_retries,
                    params: config.llm.params(),
                    record_wall_time: config.backend == BackendChoice::Llm,
                },
            })
        })
        .collect();

    let workers = config.workers.unwrap_or(config.cells.len()).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EngineError::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<RunRecord, EngineError>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|job| {
                let profile = &cell_inputs[job.cell];
                let mut agent = factory.agent(&job.run, &schema)?;
                let mut user = factory.user(&job.run, &schema, profile)?;
                let record = run_conversation(
                    &job.run,
                    &schema,
                    profile.ground_truth(),
                    agent.as_mut(),
                    user.as_mut(),
                );
                persist_run(&record, &config.out)?;
                Ok(record)
            })
            .collect()
    });

    let mut grouped: Vec<Vec<RunRecord>> = vec![Vec::with_capacity(runs); config.cells.len()];
    for (job, result) in jobs.iter().zip(results) {
        grouped[job.cell].push(result?);
    }
    let cells = config
        .cells
        .iter()
        .zip(grouped)
        .map(|(cell, records)| {
            let aggregate = cell_aggregate(cell.cell(), &records)?;
            Ok(CellResult {
                config: cell.clone(),
                records,
                aggregate,
            })
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    Ok(BatchResult {
        out_dir: config.out.clone(),
        cells,
    })
}
