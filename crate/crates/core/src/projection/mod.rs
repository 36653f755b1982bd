//! Three-stage label projection: joint translation, span rephrase, and
//! sentence rephrase, with failover to a stronger model and export of
//! whatever still fails for manual annotation.
//!
//! Per sample:
//!
//! 1. translate sentence and spans together;
//! 2. for every translated span missing from the translated sentence, ask
//!    for the matching span inside that sentence; raise a flag when the
//!    answer is missing too;
//! 3. only when flagged, re-translate the source sentence so that it
//!    contains every translated span.
//!
//! A sample whose spans are still not all present, or that failed a stage,
//! is re-run once from stage 1 with the fallback model. If that also fails
//! it is marked `needs_review`.

pub mod extract;
pub mod templates;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::llm::{ChatClient, ChatRequest, LlmError, Usage};
use crate::parser::resolve_offsets;
use crate::sample::{Interval, Sample};
use extract::{ExtractError, SentenceReply};
pub use templates::{LangPair, PromptTemplate, TemplateName, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Joint,
    SpanRephrase,
    SentenceRephrase,
    Failover,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: Stage,
    pub model: String,
    pub request: String,
    #[serde(default)]
    pub response: Option<String>,
    pub outcome: String,
    #[serde(default)]
    pub usage: Usage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NeedsReview,
    /// The model could not be reached; retried on resume.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRecord {
    pub source: Sample,
    #[serde(default)]
    pub target: Option<Sample>,
    pub stage_log: Vec<StageEntry>,
    pub status: Status,
}

impl ProjectionRecord {
    /// Every projected span occurs verbatim in the projected sentence.
    pub fn is_faithful(&self) -> bool {
        match &self.target {
            Some(t) => t
                .spans()
                .iter()
                .all(|s| t.sentence.contains(s.text.as_str())),
            None => false,
        }
    }

    pub fn stage_count(&self, stage: Stage) -> usize {
        self.stage_log.iter().filter(|e| e.stage == stage).count()
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StageError {
    #[error(transparent)]
    Transport(#[from] LlmError),
    #[error("unparseable reply: {0}")]
    Unparseable(#[from] ExtractError),
    #[error("expected {expected} spans, got {got}")]
    SpanCountMismatch { expected: usize, got: usize },
    #[error("model refused to rephrase the sentence")]
    Refused,
    #[error("{0} span(s) missing from the translated sentence")]
    MissingSpans(usize),
}

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: String,
        source: std::io::Error,
    },
    #[error("checkpoint {path} line {line}: {source}")]
    CheckpointFormat {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate sample id `{0}`; checkpointing needs unique ids")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPolicy {
    pub primary_model: String,
    pub fallback_model: Option<String>,
    /// Whole-pipeline reruns with the fallback model per record.
    pub max_failovers: usize,
    /// NFC-normalize model output before span checks.
    pub normalize_unicode: bool,
    pub concurrency: usize,
}

impl Default for ProjectionPolicy {
    fn default() -> Self {
        Self {
            primary_model: "gpt-4o-mini".into(),
            fallback_model: Some("gpt-4o-2024-08-06".into()),
            max_failovers: 1,
            normalize_unicode: false,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointOutput {
    pub sentence: String,
    pub spans: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanRephraseOutput {
    pub spans: Vec<String>,
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CorpusOutput {
    pub records: Vec<ProjectionRecord>,
    /// `None` for an empty corpus.
    pub faithfulness: Option<f64>,
    pub review_export: Vec<ProjectionRecord>,
    pub usage_by_stage: BTreeMap<Stage, Usage>,
    /// Records taken from the checkpoint without any model call.
    pub resumed: usize,
}

/// Drives the pipeline for one language pair.
pub struct Projector<C> {
    client: C,
    templates: TemplateSet,
    policy: ProjectionPolicy,
}

impl<C: ChatClient> Projector<C> {
    pub fn new(client: C, pair: &LangPair, policy: ProjectionPolicy) -> Self {
        Self {
            client,
            templates: TemplateSet::for_pair(pair),
            policy,
        }
    }

    pub fn client(&self) -> &C {
        &self.client
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn pair(&self) -> &LangPair {
        &self.templates.pair
    }

    fn clean(&self, text: String) -> String {
        if self.policy.normalize_unicode {
            text.nfc().collect()
        } else {
            text
        }
    }

    fn call(
        &self,
        stage: Stage,
        model: &str,
        prompt: String,
        log: &mut Vec<StageEntry>,
    ) -> Result<String, StageError> {
        let request = ChatRequest::new(model, prompt.clone());
        match self.client.complete(&request) {
            Ok(resp) => {
                log.push(StageEntry {
                    stage,
                    model: model.to_string(),
                    request: prompt,
                    response: Some(resp.content.clone()),
                    outcome: "ok".into(),
                    usage: resp.usage,
                });
                Ok(resp.content)
            }
            Err(e) => {
                log.push(StageEntry {
                    stage,
                    model: model.to_string(),
                    request: prompt,
                    response: None,
                    outcome: e.to_string(),
                    usage: Usage::default(),
                });
                Err(e.into())
            }
        }
    }

    fn note(log: &mut [StageEntry], outcome: impl Into<String>) {
        if let Some(last) = log.last_mut() {
            last.outcome = outcome.into();
        }
    }

    /// First formatted prompt for a sample, without calling the model.
    pub fn dry_run_prompt(&self, src: &Sample) -> String {
        let spans: Vec<&str> = src.spans().iter().map(|s| s.text.as_str()).collect();
        self.templates.joint_prompt(&src.sentence, &spans)
    }

    /// Stage 1: translate the sentence and its spans in one request.
    pub fn joint_translate(
        &self,
        src_sentence: &str,
        src_spans: &[&str],
        model: &str,
        log: &mut Vec<StageEntry>,
    ) -> Result<JointOutput, StageError> {
        let prompt = self.templates.joint_prompt(src_sentence, src_spans);
        let reply = self.call(Stage::Joint, model, prompt, log)?;
        let (sentence, spans) = match extract::joint_reply(&reply) {
            Ok(v) => v,
            Err(e) => {
                Self::note(log, format!("unparseable: {e}"));
                return Err(e.into());
            }
        };
        if spans.len() != src_spans.len() {
            let err = StageError::SpanCountMismatch {
                expected: src_spans.len(),
                got: spans.len(),
            };
            Self::note(log, err.to_string());
            return Err(err);
        }
        Ok(JointOutput {
            sentence: self.clean(sentence),
            spans: spans.into_iter().map(|s| self.clean(s)).collect(),
        })
    }

    /// Stage 2: look up each missing span inside the translated sentence.
    /// Spans already present are left alone and cost no request.
    pub fn span_rephrase(
        &self,
        tgt_spans: &[String],
        src_spans: &[&str],
        src_sentence: &str,
        tgt_sentence: &str,
        model: &str,
        log: &mut Vec<StageEntry>,
    ) -> Result<SpanRephraseOutput, StageError> {
        debug_assert_eq!(tgt_spans.len(), src_spans.len());
        let mut spans = tgt_spans.to_vec();
        let mut flag = false;
        for (tgt, src) in spans.iter_mut().zip(src_spans) {
            if tgt_sentence.contains(tgt.as_str()) {
                continue;
            }
            let prompt = self.templates.span_prompt(src_sentence, src, tgt_sentence);
            let reply = self.call(Stage::SpanRephrase, model, prompt, log)?;
            match extract::span_reply(&reply) {
                Ok(corrected) => {
                    let corrected = self.clean(corrected);
                    if !corrected.is_empty() && tgt_sentence.contains(corrected.as_str()) {
                        Self::note(log, format!("replaced {tgt:?} with {corrected:?}"));
                        *tgt = corrected;
                    } else {
                        Self::note(log, format!("correction {corrected:?} not in sentence"));
                        flag = true;
                    }
                }
                Err(e) => {
                    Self::note(log, format!("unparseable: {e}"));
                    flag = true;
                }
            }
        }
        Ok(SpanRephraseOutput { spans, flag })
    }

    /// Stage 3: re-translate the source so the sentence contains the spans.
    pub fn sentence_rephrase(
        &self,
        tgt_spans: &[String],
        src_sentence: &str,
        model: &str,
        log: &mut Vec<StageEntry>,
    ) -> Result<String, StageError> {
        let prompt = self.templates.sentence_prompt(tgt_spans, src_sentence);
        let reply = self.call(Stage::SentenceRephrase, model, prompt, log)?;
        match extract::sentence_reply(&reply) {
            Ok(SentenceReply::Sentence(s)) => Ok(self.clean(s)),
            Ok(SentenceReply::Refused) => {
                Self::note(log, "refused");
                Err(StageError::Refused)
            }
            Err(e) => {
                Self::note(log, format!("unparseable: {e}"));
                Err(e.into())
            }
        }
    }

    /// One pass of stages 1 → 2 → (3 when flagged) with `model`.
    fn run_stages(
        &self,
        src: &Sample,
        model: &str,
        log: &mut Vec<StageEntry>,
    ) -> (Result<(), StageError>, Option<JointOutput>) {
        let src_spans: Vec<&str> = src.spans().iter().map(|s| s.text.as_str()).collect();
        let joint = match self.joint_translate(&src.sentence, &src_spans, model, log) {
            Ok(j) => j,
            Err(e) => return (Err(e), None),
        };
        let stage2 = match self.span_rephrase(
            &joint.spans,
            &src_spans,
            &src.sentence,
            &joint.sentence,
            model,
            log,
        ) {
            Ok(out) => out,
            Err(e) => return (Err(e), Some(joint)),
        };
        let mut current = JointOutput {
            sentence: joint.sentence,
            spans: stage2.spans,
        };
        if stage2.flag {
            match self.sentence_rephrase(&current.spans, &src.sentence, model, log) {
                Ok(sentence) => current.sentence = sentence,
                Err(e) => return (Err(e), Some(current)),
            }
        }
        let missing = current
            .spans
            .iter()
            .filter(|s| !current.sentence.contains(s.as_str()))
            .count();
        if missing > 0 {
            return (Err(StageError::MissingSpans(missing)), Some(current));
        }
        (Ok(()), Some(current))
    }

    /// Projects one sample; never fails, outcomes land in the record.
    pub fn project_sample(&self, src: &Sample) -> ProjectionRecord {
        let mut log = Vec::new();
        let mut models = vec![self.policy.primary_model.clone()];
        if let Some(fallback) = &self.policy.fallback_model {
            models.extend(std::iter::repeat_n(
                fallback.clone(),
                self.policy.max_failovers,
            ));
        }
        let mut last_output = None;
        for (attempt, model) in models.iter().enumerate() {
            if attempt > 0 {
                log.push(StageEntry {
                    stage: Stage::Failover,
                    model: model.clone(),
                    request: String::new(),
                    response: None,
                    outcome: format!("rerunning with {model}"),
                    usage: Usage::default(),
                });
            }
            let (result, output) = self.run_stages(src, model, &mut log);
            match result {
                Ok(()) => {
                    let output = output.expect("successful run has output");
                    return ProjectionRecord {
                        target: Some(build_target(src, &self.pair().tgt, &output)),
                        source: src.clone(),
                        stage_log: log,
                        status: Status::Ok,
                    };
                }
                Err(StageError::Transport(e)) => {
                    log::warn!("sample {}: {e}", src.id);
                    return ProjectionRecord {
                        source: src.clone(),
                        target: None,
                        stage_log: log,
                        status: Status::Failed,
                    };
                }
                Err(e) => {
                    log::debug!("sample {} with {model}: {e}", src.id);
                    last_output = output;
                }
            }
        }
        log.push(StageEntry {
            stage: Stage::Manual,
            model: String::new(),
            request: String::new(),
            response: None,
            outcome: "queued for manual annotation".into(),
            usage: Usage::default(),
        });
        ProjectionRecord {
            target: last_output.map(|o| build_target(src, &self.pair().tgt, &o)),
            source: src.clone(),
            stage_log: log,
            status: Status::NeedsReview,
        }
    }
}

impl<C: ChatClient + Sync> Projector<C> {
    /// Projects a corpus with up to `policy.concurrency` workers.
    ///
    /// With a checkpoint path, records already `ok` there are reused as is
    /// and every new record is appended as soon as it finishes. The file is
    /// rewritten in corpus order at the end.
    pub fn project_corpus(
        &self,
        corpus: &[Sample],
        checkpoint: Option<&Path>,
    ) -> Result<CorpusOutput, ProjectionError> {
        let mut done: HashMap<String, ProjectionRecord> = HashMap::new();
        if let Some(path) = checkpoint {
            let mut seen = std::collections::HashSet::new();
            for s in corpus {
                if !seen.insert(s.id.as_str()) {
                    return Err(ProjectionError::DuplicateId(s.id.clone()));
                }
            }
            for rec in read_checkpoint(path)? {
                if rec.status == Status::Ok {
                    done.insert(rec.source.id.clone(), rec);
                } else {
                    done.remove(&rec.source.id);
                }
            }
        }

        let sink = match checkpoint {
            Some(path) => Some(Mutex::new(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ProjectionError::Checkpoint {
                        path: path.display().to_string(),
                        source: e,
                    })?,
            )),
            None => None,
        };

        let slots: Vec<Mutex<Option<ProjectionRecord>>> =
            corpus.iter().map(|_| Mutex::new(None)).collect();
        let mut resumed = 0;
        let mut pending = Vec::new();
        for (i, s) in corpus.iter().enumerate() {
            match done.remove(&s.id) {
                Some(rec) if rec.source == *s => {
                    *slots[i].lock().unwrap() = Some(rec);
                    resumed += 1;
                }
                _ => pending.push(i),
            }
        }

        let next = AtomicUsize::new(0);
        let workers = self.policy.concurrency.max(1).min(pending.len().max(1));
        let write_error: Mutex<Option<std::io::Error>> = Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&i) = pending.get(k) else { break };
                    let rec = self.project_sample(&corpus[i]);
                    if let Some(sink) = &sink {
                        let line = serde_json::to_string(&rec).expect("records serialize");
                        let mut f = sink.lock().unwrap();
                        if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                            write_error.lock().unwrap().get_or_insert(e);
                        }
                    }
                    *slots[i].lock().unwrap() = Some(rec);
                });
            }
        });
        if let (Some(path), Some(e)) = (checkpoint, write_error.into_inner().unwrap()) {
            return Err(ProjectionError::Checkpoint {
                path: path.display().to_string(),
                source: e,
            });
        }

        let records: Vec<ProjectionRecord> = slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every slot filled"))
            .collect();
        if let Some(path) = checkpoint {
            drop(sink);
            write_jsonl_atomic(path, &records).map_err(|e| ProjectionError::Checkpoint {
                path: path.display().to_string(),
                source: e,
            })?;
        }

        let mut usage_by_stage: BTreeMap<Stage, Usage> = BTreeMap::new();
        for rec in &records {
            for e in &rec.stage_log {
                *usage_by_stage.entry(e.stage).or_default() += e.usage;
            }
        }
        let faithfulness = crate::metrics::score_faithfulness(&records).ok();
        let review_export = records
            .iter()
            .filter(|r| r.status == Status::NeedsReview)
            .cloned()
            .collect();
        Ok(CorpusOutput {
            records,
            faithfulness,
            review_export,
            usage_by_stage,
            resumed,
        })
    }
}

/// Target sample: the source with span texts swapped index-wise and
/// re-anchored in the translated sentence.
pub fn build_target(src: &Sample, tgt_lang: &str, output: &JointOutput) -> Sample {
    let mut target = src.clone();
    target.language = tgt_lang.to_string();
    target.sentence = output.sentence.clone();
    let mut used: Vec<Interval> = Vec::new();
    for (span, text) in target.spans_mut().into_iter().zip(&output.spans) {
        span.text = text.clone();
        span.start = resolve_offsets(text, &output.sentence, &used).map(|iv| {
            used.push(iv);
            iv.0
        });
    }
    target
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<ProjectionRecord>, ProjectionError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => {
            return Err(ProjectionError::Checkpoint {
                path: path.display().to_string(),
                source: e,
            })
        }
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ProjectionError::Checkpoint {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(rec) => out.push(rec),
            // a crash can leave a torn final line
            Err(e) if e.is_eof() => log::warn!("{}: skipping torn line {}", path.display(), n + 1),
            Err(e) => {
                return Err(ProjectionError::CheckpointFormat {
                    path: path.display().to_string(),
                    line: n + 1,
                    source: e,
                })
            }
        }
    }
    Ok(out)
}

fn write_jsonl_atomic<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(File::create(&tmp)?);
        for item in items {
            serde_json::to_writer(&mut f, item)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    std::fs::rename(tmp, path)
}
