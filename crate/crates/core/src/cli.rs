//! Command-line front end.
//!
//! Every subcommand reads JSONL corpora (the ontology config is TOML),
//! prints a JSON report on stdout and logs on stderr. `--dry-run` prints
//! the first prompt the command would build and stops before any model
//! call or file write. Exit status is 0 on success, 1 for bad input or
//! usage, 2 when the work itself failed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use crate::aligndata::{assemble_parallel_dataset, build_alignment_sample, Directions};
use crate::codegen::{build_training_pair, render_completion, render_instruction, render_schema};
use crate::descriptions::{self, DescriptionConfig, DescriptionError};
use crate::jsonl;
use crate::llm::{
    Backoff, ChatClient, ClientPolicy, HttpClient, LlmError, RetryingClient, API_KEY_ENV,
};
use crate::metrics;
use crate::ontology::{sample_examples, Ontology, TaskKind, DEFAULT_EXAMPLE_CAP};
use crate::parser::{anchor_instances, parse_completion};
use crate::projection::{LangPair, ProjectionPolicy, ProjectionRecord, Projector, Status};
use crate::sample::Sample;

#[derive(Debug, Parser)]
#[command(name = "codeie", version, about = "Code-style IE data tooling")]
pub struct Cli {
    /// Print the first formatted prompt and exit without calling a model or writing files.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render an ontology as class definitions.
    RenderSchema {
        #[arg(long)]
        ontology: PathBuf,
        /// Leave out description and example comments.
        #[arg(long)]
        no_comments: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Turn an annotated corpus into instruction/completion pairs.
    BuildInstructions {
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        no_comments: bool,
        /// Fill empty concept example lists from the input corpus.
        #[arg(long)]
        sample_examples: bool,
        /// Skip samples that do not fit the ontology instead of failing.
        #[arg(long)]
        skip_invalid: bool,
    },
    /// Parse model completions into predicted samples.
    ParseCompletions {
        #[arg(long)]
        ontology: PathBuf,
        /// JSONL of {id, sentence, completion, language?}.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Per-record dropped calls and fatal errors.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Project span annotations into another language.
    ProjectLabels {
        #[arg(long)]
        input: PathBuf,
        /// Projection records; also read back to resume an interrupted run.
        #[arg(long, alias = "output")]
        checkpoint: PathBuf,
        #[arg(long = "src-lang", alias = "src")]
        src: String,
        #[arg(long = "tgt-lang", alias = "tgt")]
        tgt: String,
        /// Records that need manual annotation.
        #[arg(long)]
        review: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        max_failovers: usize,
        /// NFC-normalize model output before checking spans.
        #[arg(long)]
        normalize_unicode: bool,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Write concept descriptions with a model.
    GenDescriptions {
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(
            long,
            required_unless_present = "in_place",
            conflicts_with = "in_place"
        )]
        output: Option<PathBuf>,
        /// Overwrite the ontology file.
        #[arg(long)]
        in_place: bool,
        /// Drafts with their revision history.
        #[arg(long)]
        drafts: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Build cross-lingual alignment samples from projection records.
    BuildAlignmentData {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        src_ontology: PathBuf,
        /// Defaults to the source ontology.
        #[arg(long)]
        tgt_ontology: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = DirectionsArg::Both)]
        directions: DirectionsArg,
        #[arg(long)]
        no_comments: bool,
    },
    /// Micro-F1 of predictions against gold.
    Evaluate {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Share of projection records whose spans all occur in the translation.
    Faithfulness {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionsArg {
    One,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Args)]
pub struct LlmArgs {
    #[arg(long, default_value = "gpt-4o-mini")]
    pub model: String,
    #[arg(long, default_value = "gpt-4o-2024-08-06")]
    pub fallback_model: String,
    #[arg(long)]
    pub no_fallback: bool,
    #[arg(long, default_value_t = 3)]
    pub retries: usize,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    /// Overrides the base URL from the environment.
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
    /// Append every raw request/response to this JSONL file.
    #[arg(long)]
    pub audit_log: Option<PathBuf>,
}

impl LlmArgs {
    pub fn policy(&self) -> ClientPolicy {
        ClientPolicy {
            max_retries: self.retries,
            backoff: Backoff::default(),
            concurrency: self.concurrency.max(1),
            primary_model: self.model.clone(),
            fallback_model: (!self.no_fallback).then(|| self.fallback_model.clone()),
        }
    }
}

/// Builds the model client for a run; tests substitute a mock.
pub type ClientFactory<'a> = &'a dyn Fn(&LlmArgs) -> Result<Arc<dyn ChatClient>, LlmError>;

/// Real transport from the environment, with retries and optional audit log.
pub fn http_client(args: &LlmArgs) -> Result<Arc<dyn ChatClient>, LlmError> {
    let timeout = Duration::from_secs(args.timeout_secs);
    let http = match &args.base_url {
        Some(base) => {
            let key = std::env::var(API_KEY_ENV)
                .or_else(|_| std::env::var("OPENAI_API_KEY"))
                .map_err(|_| LlmError::MissingCredentials)?;
            HttpClient::new(base.clone(), key, timeout)?
        }
        None => HttpClient::from_env()?,
    };
    let mut client = RetryingClient::new(http, args.policy());
    if let Some(path) = &args.audit_log {
        client = client
            .with_audit_log(path)
            .map_err(|e| LlmError::Rejected(format!("audit log {}: {e}", path.display())))?;
    }
    Ok(Arc::new(client))
}

#[derive(Debug)]
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

type Outcome = Result<(), Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    jsonl::read(path).map_err(invalid)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Outcome {
    jsonl::write(path, items).map_err(runtime)
}

fn load_ontology(path: &Path) -> Result<Ontology, Failure> {
    Ontology::load_file(path)
        .with_context(|| path.display().to_string())
        .map_err(invalid)
}

fn check_output(path: &Path) -> Outcome {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if parent.is_dir() {
        Ok(())
    } else {
        Err(invalid(anyhow!(
            "{}: output directory does not exist",
            path.display()
        )))
    }
}

fn emit(out: &mut dyn Write, value: &serde_json::Value) -> Outcome {
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(value).expect("json values serialize")
    )
    .map_err(runtime)
}

fn say(out: &mut dyn Write, text: &str) -> Outcome {
    writeln!(out, "{text}").map_err(runtime)
}

/// Samples with no offsets at all are anchored left to right; samples with
/// some offsets are taken as given.
fn anchor_if_bare(samples: &mut [Sample]) {
    for s in samples {
        let spans = s.spans();
        if !spans.is_empty() && spans.iter().all(|sp| sp.start.is_none()) {
            let sentence = s.sentence.clone();
            anchor_instances(&mut s.instances, &sentence);
        }
    }
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, clients: ClientFactory) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::from_default_env()
        .filter_level(level)
        .try_init();
    match dispatch(&cli, out, clients) {
        Ok(()) => 0,
        Err(f) => {
            let code = f.code();
            let (Failure::Validation(e) | Failure::Runtime(e)) = f;
            eprintln!("error: {e:#}");
            code
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run(std::env::args_os(), &mut lock, &http_client)
}

fn dispatch(cli: &Cli, out: &mut dyn Write, clients: ClientFactory) -> Outcome {
    let dry = cli.dry_run;
    match &cli.command {
        Command::RenderSchema {
            ontology,
            no_comments,
            output,
        } => {
            let onto = load_ontology(ontology)?;
            let text = render_schema(&onto, !no_comments);
            match output {
                Some(path) if !dry => {
                    check_output(path)?;
                    std::fs::write(path, &text)
                        .with_context(|| path.display().to_string())
                        .map_err(runtime)
                }
                _ => say(out, &text),
            }
        }
        Command::BuildInstructions {
            ontology,
            input,
            output,
            no_comments,
            sample_examples: fill_examples,
            skip_invalid,
        } => {
            let mut onto = load_ontology(ontology)?;
            let corpus: Vec<Sample> = read_jsonl(input)?;
            check_output(output)?;
            if *fill_examples {
                let fills: Vec<(String, Vec<String>)> = onto
                    .concepts()
                    .iter()
                    .filter(|c| c.examples.is_empty())
                    .map(|c| {
                        (
                            c.canonical_id.clone(),
                            sample_examples(&corpus, c, DEFAULT_EXAMPLE_CAP),
                        )
                    })
                    .collect();
                for (id, ex) in fills {
                    onto.set_examples(&id, ex);
                }
            }
            let mut pairs = Vec::with_capacity(corpus.len());
            let mut skipped = 0;
            for s in &corpus {
                match build_training_pair(&onto, s, !no_comments) {
                    Ok(p) => pairs.push(p),
                    Err(e) if *skip_invalid => {
                        log::warn!("sample {}: {e}", s.id);
                        skipped += 1;
                    }
                    Err(e) => {
                        return Err(invalid(anyhow!(
                            "{}: sample {}: {e}",
                            input.display(),
                            s.id
                        )))
                    }
                }
            }
            if dry {
                let first = pairs
                    .first()
                    .map(|p| p.instruction.clone())
                    .unwrap_or_else(|| render_instruction(&onto, "", !no_comments));
                return say(out, &first);
            }
            write_jsonl(output, &pairs)?;
            emit(out, &json!({ "written": pairs.len(), "skipped": skipped }))
        }
        Command::ParseCompletions {
            ontology,
            input,
            output,
            diagnostics,
        } => {
            #[derive(Deserialize)]
            struct Row {
                id: String,
                sentence: String,
                completion: String,
                #[serde(default)]
                language: Option<String>,
            }
            let onto = load_ontology(ontology)?;
            let rows: Vec<Row> = read_jsonl(input)?;
            check_output(output)?;
            if let Some(d) = diagnostics {
                check_output(d)?;
            }
            if dry {
                let first = rows.first().map(|r| r.sentence.as_str()).unwrap_or("");
                return say(out, &render_instruction(&onto, first, true));
            }
            let mut preds = Vec::with_capacity(rows.len());
            let mut diags = Vec::new();
            let (mut dropped, mut fatal, mut unresolved) = (0, 0, 0);
            for row in rows {
                let report = parse_completion(&row.completion, &onto, &row.sentence);
                dropped += report.dropped.len();
                fatal += usize::from(report.fatal.is_some());
                unresolved += report.unresolved.len();
                if diagnostics.is_some() {
                    diags.push(json!({
                        "id": row.id,
                        "dropped": report.dropped,
                        "fatal": report.fatal,
                        "unresolved": report.unresolved,
                    }));
                }
                let mut sample = Sample::new(
                    row.id,
                    row.language.unwrap_or_else(|| onto.language.clone()),
                    row.sentence,
                );
                sample.instances = report.instances;
                preds.push(sample);
            }
            write_jsonl(output, &preds)?;
            if let Some(d) = diagnostics {
                write_jsonl(d, &diags)?;
            }
            let instances: usize = preds.iter().map(|p| p.instances.len()).sum();
            emit(
                out,
                &json!({ "records": preds.len(), "instances": instances, "dropped": dropped, "fatal": fatal, "unresolved_spans": unresolved }),
            )
        }
        Command::ProjectLabels {
            input,
            checkpoint: output,
            src,
            tgt,
            review,
            max_failovers,
            normalize_unicode,
            llm,
        } => {
            let corpus: Vec<Sample> = read_jsonl(input)?;
            check_output(output)?;
            if let Some(r) = review {
                check_output(r)?;
            }
            if output == input {
                return Err(invalid(anyhow!("--checkpoint must differ from --input")));
            }
            let pair = LangPair::new(src.clone(), tgt.clone());
            let policy = ProjectionPolicy {
                primary_model: llm.model.clone(),
                fallback_model: (!llm.no_fallback).then(|| llm.fallback_model.clone()),
                max_failovers: *max_failovers,
                normalize_unicode: *normalize_unicode,
                concurrency: llm.concurrency.max(1),
            };
            if dry {
                let prompt = crate::projection::TemplateSet::for_pair(&pair).joint_prompt(
                    corpus.first().map(|s| s.sentence.as_str()).unwrap_or(""),
                    &first_spans(&corpus),
                );
                return say(out, &prompt);
            }
            let client = clients(llm).map_err(invalid)?;
            let projector = Projector::new(client, &pair, policy);
            let result = projector
                .project_corpus(&corpus, Some(output))
                .map_err(runtime)?;
            if let Some(r) = review {
                write_jsonl(r, &result.review_export)?;
            }
            let mut by_status: BTreeMap<&str, usize> = BTreeMap::new();
            for rec in &result.records {
                *by_status.entry(status_name(rec.status)).or_default() += 1;
            }
            emit(
                out,
                &json!({
                    "records": result.records.len(),
                    "status": by_status,
                    "resumed": result.resumed,
                    "faithfulness": result.faithfulness,
                    "usage_by_stage": result.usage_by_stage,
                }),
            )?;
            let failed = by_status.get("failed").copied().unwrap_or(0);
            if failed > 0 {
                return Err(runtime(anyhow!(
                    "{failed} record(s) could not reach the model; rerun the same command to resume"
                )));
            }
            Ok(())
        }
        Command::GenDescriptions {
            ontology,
            input,
            output,
            in_place,
            drafts,
            seed,
            llm,
        } => {
            let mut onto = load_ontology(ontology)?;
            let corpus: Vec<Sample> = read_jsonl(input)?;
            let target = if *in_place {
                ontology.clone()
            } else {
                output.clone().expect("clap enforces")
            };
            check_output(&target)?;
            if let Some(d) = drafts {
                check_output(d)?;
            }
            let cfg = DescriptionConfig {
                model: llm.model.clone(),
                seed: *seed,
                ..Default::default()
            };
            if dry {
                let prompt = onto
                    .concepts()
                    .iter()
                    .find_map(|c| {
                        let (init, _) = descriptions::sample_plan(c, &corpus, &cfg);
                        let lang = corpus.first().map(|s| s.language.as_str()).unwrap_or("en");
                        (!init.is_empty())
                            .then(|| descriptions::init_prompt(c.display_name(lang), &init))
                    })
                    .ok_or_else(|| {
                        invalid(anyhow!("no concept has instances in {}", input.display()))
                    })?;
                return say(out, &prompt);
            }
            let client = clients(llm).map_err(invalid)?;
            let results =
                descriptions::generate_all(&onto, &corpus, &client, &cfg, llm.concurrency);
            let mut done = Vec::new();
            let mut report = serde_json::Map::new();
            for (id, r) in results {
                match r {
                    Ok(draft) => {
                        onto.set_description(&id, draft.text.clone())
                            .map_err(runtime)?;
                        report.insert(id, json!({ "revisions": draft.history.iter().filter(|h| h.changed).count() }));
                        done.push(draft);
                    }
                    Err(DescriptionError::Llm(e)) => return Err(runtime(anyhow!("{id}: {e}"))),
                    Err(e) => {
                        log::warn!("{e}");
                        report.insert(id, json!({ "error": e.to_string() }));
                    }
                }
            }
            std::fs::write(&target, onto.to_toml())
                .with_context(|| target.display().to_string())
                .map_err(runtime)?;
            if let Some(d) = drafts {
                write_jsonl(d, &done)?;
            }
            emit(out, &serde_json::Value::Object(report))
        }
        Command::BuildAlignmentData {
            input,
            src_ontology,
            tgt_ontology,
            output,
            directions,
            no_comments,
        } => {
            let records: Vec<ProjectionRecord> = read_jsonl(input)?;
            let src_onto = load_ontology(src_ontology)?;
            let tgt_onto = match tgt_ontology {
                Some(p) => load_ontology(p)?,
                None => src_onto.clone(),
            };
            check_output(output)?;
            let dirs = match directions {
                DirectionsArg::One => Directions::One,
                DirectionsArg::Both => Directions::Both,
            };
            let pick = |lang: &str| {
                if lang == tgt_onto.language {
                    &tgt_onto
                } else {
                    &src_onto
                }
            };
            let pairs = assemble_parallel_dataset(&records, dirs);
            let mut samples = Vec::with_capacity(pairs.len());
            let mut skipped = 0;
            for pair in &pairs {
                match build_alignment_sample(
                    pair,
                    pick(&pair.direction.src),
                    pick(&pair.direction.tgt),
                    !no_comments,
                ) {
                    Ok(s) => {
                        if dry {
                            return say(out, &s.instruction);
                        }
                        samples.push(s);
                    }
                    Err(e) => {
                        log::warn!("{e}");
                        skipped += 1;
                    }
                }
            }
            if dry {
                return say(out, "");
            }
            write_jsonl(output, &samples)?;
            emit(
                out,
                &json!({ "records": records.len(), "pairs": pairs.len(), "written": samples.len(), "skipped": skipped }),
            )
        }
        Command::Evaluate {
            task,
            gold,
            pred,
            format,
        } => {
            let mut gold_s: Vec<Sample> = read_jsonl(gold)?;
            let mut pred_s: Vec<Sample> = read_jsonl(pred)?;
            if dry {
                let first = gold_s
                    .first()
                    .map(|s| render_completion(&s.instances))
                    .unwrap_or_default();
                return say(out, &first);
            }
            anchor_if_bare(&mut gold_s);
            anchor_if_bare(&mut pred_s);
            let card = metrics::score(*task, &pred_s, &gold_s).map_err(invalid)?;
            match format {
                Format::Text => say(out, &card.to_string()),
                Format::Json => {
                    eprintln!("{card}");
                    let mut v = serde_json::to_value(card).expect("score cards serialize");
                    v["task"] = json!(task.as_str());
                    emit(out, &v)
                }
            }
        }
        Command::Faithfulness { input } => {
            let records: Vec<ProjectionRecord> = read_jsonl(input)?;
            if dry {
                let first = records
                    .first()
                    .and_then(|r| r.target.as_ref())
                    .map(|t| render_completion(&t.instances))
                    .unwrap_or_default();
                return say(out, &first);
            }
            let score = metrics::score_faithfulness(&records).map_err(invalid)?;
            let faithful = records.iter().filter(|r| r.is_faithful()).count();
            emit(
                out,
                &json!({ "records": records.len(), "faithful": faithful, "faithfulness": score }),
            )
        }
    }
}

fn first_spans(corpus: &[Sample]) -> Vec<String> {
    corpus
        .first()
        .map(|s| s.spans().iter().map(|sp| sp.text.clone()).collect())
        .unwrap_or_default()
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Ok => "ok",
        Status::NeedsReview => "needs_review",
        Status::Failed => "failed",
    }
}
