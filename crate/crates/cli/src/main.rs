use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use convobench::backends::{HttpChatBackend, RetryPolicy, Retrying, API_KEY_ENV};
use convobench::engine::{run_batch, BackendChoice, BatchConfig, LlmFactory, ParticipantFactory, ScriptedFactory};
use convobench::participants::PromptTemplateSet;
use convobench::report::{ComparisonMatrix, ReportFormat};
use convobench::transcript::Termination;
use convobench::{load_schema, GroundTruthProfile};

#[derive(Parser)]
#[command(name = "convo-bench", version, about = "Run and score slot-filling conversation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Scripted,
    Llm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Md,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a batch and write run files plus a report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
        /// Runs per cell.
        #[arg(long)]
        runs: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Chat-completion endpoint root, e.g. https://api.openai.com/v1
        #[arg(long)]
        base_url: Option<String>,
        /// Directory holding replacement prompt templates.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute and print the comparison matrix from a directory of run files.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
    },
    /// Check a schema and ground-truth profile against each other.
    Validate {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: &Path,
    backend: Option<Backend>,
    runs: Option<u32>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    base_url: Option<String>,
    templates: Option<PathBuf>,
    workers: Option<usize>,
) -> Result<()> {
    let mut batch = BatchConfig::load(config)?;
    if let Some(b) = backend {
        batch.backend = match b {
            Backend::Scripted => BackendChoice::Scripted,
            Backend::Llm => BackendChoice::Llm,
        };
    }
    if let Some(n) = runs {
        batch.runs = n;
    }
    if let Some(s) = seed {
        batch.seed = s;
    }
    if let Some(o) = out {
        batch.out = o;
    }
    if let Some(u) = base_url {
        batch.llm.base_url = u;
    }
    if workers.is_some() {
        batch.workers = workers;
    }
    batch.validate()?;

    let factory: Box<dyn ParticipantFactory> = match batch.backend {
        BackendChoice::Scripted => Box::new(ScriptedFactory),
        BackendChoice::Llm => {
            let key = env::var(API_KEY_ENV)
                .ok()
                .filter(|k| !k.trim().is_empty())
                .with_context(|| format!("the llm backend needs {API_KEY_ENV} to be set"))?;
            let templates = match &templates {
                Some(dir) => PromptTemplateSet::load_dir(dir)?,
                None => PromptTemplateSet::builtin(),
            };
            let http = HttpChatBackend::new(&batch.llm.base_url, Some(key));
            Box::new(LlmFactory {
                backend: Arc::new(Retrying::new(http, RetryPolicy::default())),
                templates: Arc::new(templates),
            })
        }
    };

    let result = run_batch(&batch, factory.as_ref())?;
    let records: Vec<_> = result.records().cloned().collect();
    let matrix = ComparisonMatrix::from_records(&records)?;
    let report = result.out_dir.join("report.json");
    fs::write(&report, matrix.to_json()).with_context(|| format!("cannot write {}", report.display()))?;
    let summary = result.out_dir.join("summary.md");
    fs::write(&summary, matrix.to_markdown()).with_context(|| format!("cannot write {}", summary.display()))?;

    let failed = records
        .iter()
        .filter(|r| matches!(r.termination, Termination::BackendFailure | Termination::ParseFailure))
        .count();
    println!(
        "{} runs in {} cells written to {}",
        records.len(),
        result.cells.len(),
        result.out_dir.display()
    );
    if failed > 0 {
        eprintln!("warning: {failed} runs aborted on backend or parse failures");
    }
    Ok(())
}

fn report(input: &Path, format: Format) -> Result<()> {
    let format = match format {
        Format::Md => ReportFormat::Markdown,
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    let matrix = ComparisonMatrix::load_dir(input)?;
    print!("{}", matrix.render(format)?);
    Ok(())
}

fn validate(schema: &Path, ground_truth: &Path) -> Result<()> {
    let schema = load_schema(&read(schema)?).with_context(|| format!("invalid schema {}", schema.display()))?;
    let gt = GroundTruthProfile::load(&read(ground_truth)?, &schema)
        .with_context(|| format!("invalid ground truth {}", ground_truth.display()))?;
    for leaf in schema.leaf_specs() {
        let scripted = if gt.ambiguity_script.contains_key(&leaf.path) { "  [ambiguous]" } else { "" };
        println!("{}\t{}{scripted}", leaf.path, leaf.kind.describe());
    }
    let n = schema.leaf_specs().len();
    if n == 0 {
        bail!("schema has no leaves");
    }
    println!("{n} leaves, OK");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            backend,
            runs,
            seed,
            out,
            base_url,
            templates,
            workers,
        } => run(&config, backend, runs, seed, out, base_url, templates, workers),
        Command::Report { input, format } => report(&input, format),
        Command::Validate { schema, ground_truth } => validate(&schema, &ground_truth),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
