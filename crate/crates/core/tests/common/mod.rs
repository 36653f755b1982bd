//! Random case generators and brute-force oracles shared by the
//! integration tests. Nothing here calls into the scoring or parsing code
//! under test.

#![allow(dead_code)]

use std::collections::HashMap;

use codeie::ontology::{Attribute, BaseKind, Concept, Ontology, SlotKind, TaskKind};
use codeie::sample::{ExtractionInstance, Sample, SlotValue, Span};
use rand::seq::SliceRandom;
use rand::Rng;

pub const TASKS: [TaskKind; 4] = [TaskKind::Ner, TaskKind::Re, TaskKind::Ed, TaskKind::Eae];

const WORDS: &[&str] = &[
    "Steve",
    "Apple Inc.",
    "New York",
    "O'Brien",
    "say \"hi\"",
    "back\\slash",
    "a, b",
    "f(x)",
    "[1]",
    "results = [",
    "tab\there",
    "史蒂夫",
    "欧盟",
    "北京大学",
    "国内",
    "東京",
    "서울",
    "Zürich",
    "x",
];

/// Unique, self-delimiting token: no token is a substring of another or
/// of the filler, so each has exactly one occurrence in the sentence.
fn token(rng: &mut impl Rng, k: usize) -> String {
    format!("{}⟨{k}⟩", WORDS.choose(rng).unwrap())
}

pub struct RoundTripCase {
    pub ontology: Ontology,
    pub sample: Sample,
}

struct Gen<'a, R> {
    rng: &'a mut R,
    levels: Vec<usize>,
    concepts: Vec<Concept>,
    next_token: usize,
    tokens: Vec<String>,
}

impl<R: Rng> Gen<'_, R> {
    fn below(&mut self, level: usize) -> usize {
        let choices: Vec<usize> = (0..self.concepts.len())
            .filter(|&i| self.levels[i] < level)
            .collect();
        *choices.choose(self.rng).unwrap()
    }

    fn instance(&mut self, idx: usize) -> ExtractionInstance {
        let concept = self.concepts[idx].clone();
        let level = self.levels[idx];
        let mut inst = ExtractionInstance::new(&concept.canonical_id);
        for attr in &concept.attributes {
            let value = match attr.kind {
                SlotKind::TextSpan => {
                    let t = token(self.rng, self.next_token);
                    self.next_token += 1;
                    self.tokens.push(t.clone());
                    SlotValue::Span(Span::new(t))
                }
                SlotKind::ConceptReference => {
                    let target = self.below(level);
                    SlotValue::Instance(Box::new(self.instance(target)))
                }
                SlotKind::ListOfReferences => {
                    let n = if level == 0 {
                        0
                    } else {
                        self.rng.gen_range(0..=3)
                    };
                    let items = (0..n)
                        .map(|_| {
                            let target = self.below(level);
                            self.instance(target)
                        })
                        .collect();
                    SlotValue::List(items)
                }
            };
            inst.slots.insert(attr.name.clone(), value);
        }
        inst
    }
}

/// Random ontology (≤ 8 concepts) and a sample (≤ 10 instances, nesting
/// depth ≤ 3) whose offsets are known by construction.
pub fn round_trip_case(rng: &mut impl Rng, id: usize) -> RoundTripCase {
    let task = *TASKS.choose(rng).unwrap();
    let bases: Vec<BaseKind> = BaseKind::ALL
        .into_iter()
        .filter(|b| task.allows(*b))
        .collect();
    let n = rng.gen_range(1..=8);
    let mut levels = vec![0];
    for _ in 1..n {
        levels.push(rng.gen_range(0..=2));
    }
    let mut concepts = Vec::new();
    for (i, &level) in levels.iter().enumerate() {
        let n_attrs = rng.gen_range(1..=3);
        let mut attrs = Vec::new();
        for a in 0..n_attrs {
            let kind = if level == 0 {
                *[
                    SlotKind::TextSpan,
                    SlotKind::TextSpan,
                    SlotKind::ListOfReferences,
                ]
                .choose(rng)
                .unwrap()
            } else {
                *[
                    SlotKind::TextSpan,
                    SlotKind::ConceptReference,
                    SlotKind::ListOfReferences,
                ]
                .choose(rng)
                .unwrap()
            };
            attrs.push(Attribute::new(format!("a{a}"), kind));
        }
        if level > 0 && attrs.iter().all(|a| a.kind == SlotKind::TextSpan) {
            attrs.push(Attribute::new("ref", SlotKind::ConceptReference));
        }
        let base = *bases.choose(rng).unwrap();
        concepts.push(Concept::new(format!("C{i}"), base).with_attributes(attrs));
    }
    let ontology =
        Ontology::new(task, "en", concepts.clone()).expect("generated ontology is valid");

    let mut gen = Gen {
        rng,
        levels,
        concepts,
        next_token: 0,
        tokens: Vec::new(),
    };
    let n_inst = gen.rng.gen_range(0..=10);
    let mut instances = Vec::new();
    for _ in 0..n_inst {
        let idx = gen.rng.gen_range(0..gen.concepts.len());
        instances.push(gen.instance(idx));
    }

    // lay the tokens out in a shuffled order with filler between them
    let mut order = gen.tokens.clone();
    order.shuffle(gen.rng);
    let mut sentence = String::new();
    let mut starts: HashMap<String, usize> = HashMap::new();
    for t in &order {
        sentence.push_str(if gen.rng.gen_bool(0.5) {
            " and "
        } else {
            "，"
        });
        starts.insert(t.clone(), sentence.chars().count());
        sentence.push_str(t);
    }
    sentence.push('.');

    let mut sample = Sample::new(format!("rt{id}"), "en", sentence);
    sample.instances = instances;
    for span in sample.spans_mut() {
        span.start = Some(starts[&span.text]);
    }
    RoundTripCase { ontology, sample }
}

// ---------------------------------------------------------------------
// Metric oracle

/// Interval when anchored, otherwise the raw text.
pub type Anchor = Result<(usize, usize), String>;

fn anchor(span: &Span) -> Anchor {
    match span.start {
        Some(s) => Ok((s, s + span.text.chars().count())),
        None => Err(span.text.clone()),
    }
}

fn name_span(inst: &ExtractionInstance) -> &Span {
    match inst.slots.get("name").or_else(|| inst.slots.get("trigger")) {
        Some(SlotValue::Span(s)) => s,
        other => panic!("generator always sets a head span, got {other:?}"),
    }
}

/// Flat tuple per scored unit: (unit kind fields..., anchors).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleUnit {
    pub labels: Vec<String>,
    pub anchors: Vec<Anchor>,
}

impl OracleUnit {
    fn anchored(&self) -> bool {
        self.anchors.iter().all(|a| a.is_ok())
    }
}

pub fn oracle_units(task: TaskKind, sample: &Sample) -> Vec<OracleUnit> {
    let mut out = Vec::new();
    for inst in &sample.instances {
        match task {
            TaskKind::Ner | TaskKind::Ed => out.push(OracleUnit {
                labels: vec![inst.concept.clone()],
                anchors: vec![anchor(name_span(inst))],
            }),
            TaskKind::Re => {
                let arg = |slot: &str| match inst.slots.get(slot) {
                    Some(SlotValue::Instance(a)) => (a.concept.clone(), anchor(name_span(a))),
                    other => panic!("relation without {slot}: {other:?}"),
                };
                let (sc, sa) = arg("subject");
                let (oc, oa) = arg("object");
                out.push(OracleUnit {
                    labels: vec![inst.concept.clone(), sc, oc],
                    anchors: vec![sa, oa],
                });
            }
            TaskKind::Eae => {
                let trigger = anchor(name_span(inst));
                for (role, value) in &inst.slots {
                    if let SlotValue::List(args) = value {
                        for a in args {
                            out.push(OracleUnit {
                                labels: vec![inst.concept.clone(), role.clone()],
                                anchors: vec![trigger.clone(), anchor(name_span(a))],
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// (tp, predicted, gold) by exhaustive pairing: distinct predictions, each
/// matched to at most one equal, still-unmatched gold unit.
pub fn oracle_counts(task: TaskKind, pred: &[Sample], gold: &[Sample]) -> (usize, usize, usize) {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for g in gold {
        let p = pred.iter().find(|p| p.id == g.id).expect("aligned corpora");
        let gold_units = oracle_units(task, g);
        let mut distinct: Vec<OracleUnit> = Vec::new();
        for u in oracle_units(task, p) {
            if !distinct.contains(&u) {
                distinct.push(u);
            }
        }
        let mut used = vec![false; gold_units.len()];
        for u in &distinct {
            if !u.anchored() {
                continue;
            }
            for (j, gu) in gold_units.iter().enumerate() {
                if !used[j] && gu == u {
                    used[j] = true;
                    tp += 1;
                    break;
                }
            }
        }
        np += distinct.len();
        ng += gold_units.len();
    }
    (tp, np, ng)
}

const CONCEPTS: [&str; 3] = ["A", "B", "C"];
const ROLES: [&str; 2] = ["agent", "target"];
const TEXTS: [&str; 4] = ["a", "bb", "ccc", "东京"];

fn rand_span(rng: &mut impl Rng) -> Span {
    let text = *TEXTS.choose(rng).unwrap();
    if rng.gen_bool(0.1) {
        Span::new(text)
    } else {
        Span::at(text, rng.gen_range(0..6))
    }
}

fn rand_entity(rng: &mut impl Rng) -> ExtractionInstance {
    ExtractionInstance::entity(*CONCEPTS.choose(rng).unwrap(), rand_span(rng))
}

fn rand_unit(task: TaskKind, rng: &mut impl Rng) -> ExtractionInstance {
    let concept = *CONCEPTS.choose(rng).unwrap();
    match task {
        TaskKind::Ner => rand_entity(rng),
        TaskKind::Ed => {
            ExtractionInstance::new(concept).with("trigger", SlotValue::Span(rand_span(rng)))
        }
        TaskKind::Re => ExtractionInstance::new(concept)
            .with("subject", SlotValue::Instance(Box::new(rand_entity(rng))))
            .with("object", SlotValue::Instance(Box::new(rand_entity(rng)))),
        TaskKind::Eae => {
            let mut e =
                ExtractionInstance::new(concept).with("trigger", SlotValue::Span(rand_span(rng)));
            for role in ROLES {
                let n = rng.gen_range(0..=2);
                e = e.with(
                    role,
                    SlotValue::List((0..n).map(|_| rand_entity(rng)).collect()),
                );
            }
            e
        }
    }
}

/// Small perturbation of a gold instance: wrong type, moved span, or lost offset.
fn perturb(inst: &ExtractionInstance, rng: &mut impl Rng) -> ExtractionInstance {
    let mut out = inst.clone();
    match rng.gen_range(0..3) {
        0 => out.concept = CONCEPTS.choose(rng).unwrap().to_string(),
        _ => {
            let mut spans = out.spans_mut();
            let k = rng.gen_range(0..spans.len());
            let s = &mut spans[k];
            s.start = match s.start {
                Some(x) if rng.gen_bool(0.7) => Some(x + 1),
                _ => None,
            };
        }
    }
    out
}

/// Gold and prediction corpora with overlap, duplicates and noise; the
/// prediction side is shuffled.
pub fn random_corpora(task: TaskKind, rng: &mut impl Rng) -> (Vec<Sample>, Vec<Sample>) {
    let n = rng.gen_range(1..=20);
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for i in 0..n {
        let id = format!("s{i}");
        let g: Vec<ExtractionInstance> = (0..rng.gen_range(0..=5))
            .map(|_| rand_unit(task, rng))
            .collect();
        let mut p = Vec::new();
        for inst in &g {
            match rng.gen_range(0..10) {
                0..=4 => p.push(inst.clone()),
                5 => {
                    p.push(inst.clone());
                    p.push(inst.clone());
                }
                6 | 7 => p.push(perturb(inst, rng)),
                _ => {}
            }
        }
        for _ in 0..rng.gen_range(0..=2) {
            p.push(rand_unit(task, rng));
        }
        p.shuffle(rng);
        let mut gs = Sample::new(&id, "en", "unused");
        gs.instances = g;
        let mut ps = Sample::new(&id, "en", "unused");
        ps.instances = p;
        gold.push(gs);
        pred.push(ps);
    }
    pred.shuffle(rng);
    (gold, pred)
}

// ---------------------------------------------------------------------
// Scripted projection corpus

use codeie::llm::{LlmError, MockClient};
use codeie::projection::{LangPair, Stage, Status, TemplateSet};

pub const PRIMARY: &str = "small-model";
pub const FALLBACK: &str = "large-model";

/// One expected model call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Call {
    pub stage: Stage,
    pub model: &'static str,
    pub prompt: String,
    pub reply: String,
}

pub struct Scripted {
    pub sample: Sample,
    pub kind: &'static str,
    pub calls: Vec<Call>,
    pub status: Status,
}

fn joint_reply(sentence: &str, spans: &[&str]) -> String {
    let list: Vec<String> = spans.iter().map(|s| format!("\"{s}\"")).collect();
    format!(
        "[Chinese]\n\"sentence\": \"{sentence}\"\n\"spans\": [{}]",
        list.join(", ")
    )
}

/// Fifty en→zh records, five of each branch kind, with the exact request
/// sequence each must produce.
pub fn scripted_corpus() -> Vec<Scripted> {
    let t = TemplateSet::for_pair(&LangPair::new("en", "zh"));
    let mut out = Vec::new();
    for i in 0..50 {
        let kind = i % 10;
        let (a, b) = (format!("Alpha{i}"), format!("Beta{i}"));
        let (ta, tb) = (format!("甲{i}"), format!("乙{i}"));
        let two = matches!(kind, 2 | 3);
        let src_sentence = if two {
            format!("{a} met {b} in record {i}.")
        } else if kind == 9 {
            format!("Nothing happened in record {i}.")
        } else {
            format!("{a} spoke in record {i}.")
        };
        let mut sample = Sample::new(format!("r{i}"), "en", &src_sentence);
        if kind != 9 {
            sample = sample.with_instance(ExtractionInstance::entity("PER", Span::at(&a, 0)));
        }
        if two {
            let at = src_sentence.find(&b).unwrap();
            sample = sample.with_instance(ExtractionInstance::entity("PER", Span::at(&b, at)));
        }
        let src_spans: Vec<String> = sample.spans().iter().map(|s| s.text.clone()).collect();
        let joint = t.joint_prompt(&src_sentence, &src_spans);
        let call = |stage, model, prompt: String, reply: String| Call {
            stage,
            model,
            prompt,
            reply,
        };
        let good = format!("{ta}在第{i}条记录中发言。");
        let (label, calls, status) = match kind {
            0 => (
                "clean",
                vec![call(
                    Stage::Joint,
                    PRIMARY,
                    joint.clone(),
                    joint_reply(&good, &[&ta]),
                )],
                Status::Ok,
            ),
            1 => {
                let s = format!("{ta}先生在第{i}条记录中发言。");
                let tgt_wrong = format!("{ta}氏");
                (
                    "stage2-fix",
                    vec![
                        call(
                            Stage::Joint,
                            PRIMARY,
                            joint.clone(),
                            joint_reply(&s, &[&tgt_wrong]),
                        ),
                        call(
                            Stage::SpanRephrase,
                            PRIMARY,
                            t.span_prompt(&src_sentence, &a, &s),
                            format!("[\"{ta}先生\"]"),
                        ),
                    ],
                    Status::Ok,
                )
            }
            2 => {
                let s = format!("{ta}在第{i}条记录中见到了{tb}君。");
                (
                    "stage2-only-missing",
                    vec![
                        call(
                            Stage::Joint,
                            PRIMARY,
                            joint.clone(),
                            joint_reply(&s, &[&ta, &format!("{tb}氏")]),
                        ),
                        call(
                            Stage::SpanRephrase,
                            PRIMARY,
                            t.span_prompt(&src_sentence, &b, &s),
                            format!("[\"{tb}君\"]"),
                        ),
                    ],
                    Status::Ok,
                )
            }
            3 => {
                let s = format!("{ta}先生在第{i}条记录中见到了某人。");
                let fixed = format!("{ta}先生");
                let rephrased = format!("{fixed}在第{i}条记录中见到了{tb}。");
                (
                    "stage3-after-partial-fix",
                    vec![
                        call(
                            Stage::Joint,
                            PRIMARY,
                            joint.clone(),
                            joint_reply(&s, &[&format!("{ta}氏"), &tb]),
                        ),
                        call(
                            Stage::SpanRephrase,
                            PRIMARY,
                            t.span_prompt(&src_sentence, &a, &s),
                            format!("[\"{fixed}\"]"),
                        ),
                        call(
                            Stage::SpanRephrase,
                            PRIMARY,
                            t.span_prompt(&src_sentence, &b, &s),
                            "[\"不存在\"]".into(),
                        ),
                        call(
                            Stage::SentenceRephrase,
                            PRIMARY,
                            t.sentence_prompt(&[fixed.as_str(), tb.as_str()], &src_sentence),
                            format!("\"{rephrased}\""),
                        ),
                    ],
                    Status::Ok,
                )
            }
            4 => {
                let s = format!("某人在第{i}条记录中发言。");
                (
                    "stage3-after-unparseable",
                    vec![
                        call(
                            Stage::Joint,
                            PRIMARY,
                            joint.clone(),
                            joint_reply(&s, &[&ta]),
                        ),
                        call(
                            Stage::SpanRephrase,
                            PRIMARY,
                            t.span_prompt(&src_sentence, &a, &s),
                            "I am not sure.".into(),
                        ),
                        call(
                            Stage::SentenceRephrase,
                            PRIMARY,
                            t.sentence_prompt(&[ta.as_str()], &src_sentence),
                            format!("\"{good}\""),
                        ),
                    ],
                    Status::Ok,
                )
            }
            5 => {
                let s = format!("某人在第{i}条记录中发言。");
                (
                    "refusal-then-failover",
                    vec![
                        call(
                            Stage::Joint,
                            PRIMARY,
                            joint.clone(),
                            joint_reply(&s, &[&ta]),
                        ),
                        call(
                            Stage::SpanRephrase,
                            PRIMARY,
                            t.span_prompt(&src_sentence, &a, &s),
                            "[\"他\"]".into(),
                        ),
                        call(
                            Stage::SentenceRephrase,
                            PRIMARY,
                            t.sentence_prompt(&[ta.as_str()], &src_sentence),
                            "\"modification failure\"".into(),
                        ),
                        call(
                            Stage::Joint,
                            FALLBACK,
                            joint.clone(),
                            joint_reply(&good, &[&ta]),
                        ),
                    ],
                    Status::Ok,
                )
            }
            6 => {
                let s = format!("某人在第{i}条记录中发言。");
                let sp = t.span_prompt(&src_sentence, &a, &s);
                let sent = t.sentence_prompt(&[ta.as_str()], &src_sentence);
                (
                    "needs-review",
                    vec![
                        call(
                            Stage::Joint,
                            PRIMARY,
                            joint.clone(),
                            joint_reply(&s, &[&ta]),
                        ),
                        call(Stage::SpanRephrase, PRIMARY, sp.clone(), "[\"他\"]".into()),
                        call(
                            Stage::SentenceRephrase,
                            PRIMARY,
                            sent.clone(),
                            "\"modification failure\"".into(),
                        ),
                        call(
                            Stage::Joint,
                            FALLBACK,
                            joint.clone(),
                            joint_reply(&s, &[&ta]),
                        ),
                        call(Stage::SpanRephrase, FALLBACK, sp, "[\"他\"]".into()),
                        call(Stage::SentenceRephrase, FALLBACK, sent, format!("\"{s}\"")),
                    ],
                    Status::NeedsReview,
                )
            }
            7 => {
                let s = format!("{ta}君在第{i}条记录中发言。");
                (
                    "span-count-mismatch",
                    vec![
                        call(
                            Stage::Joint,
                            PRIMARY,
                            joint.clone(),
                            joint_reply(&good, &[&ta, &tb]),
                        ),
                        call(
                            Stage::Joint,
                            FALLBACK,
                            joint.clone(),
                            joint_reply(&s, &[&ta.replace('甲', "甲甲")]),
                        ),
                        call(
                            Stage::SpanRephrase,
                            FALLBACK,
                            t.span_prompt(&src_sentence, &a, &s),
                            format!("[\"{ta}君\"]"),
                        ),
                    ],
                    Status::Ok,
                )
            }
            8 => {
                let s = format!("某人在第{i}条记录中发言。");
                (
                    "stage3-still-missing",
                    vec![
                        call(
                            Stage::Joint,
                            PRIMARY,
                            joint.clone(),
                            joint_reply(&s, &[&ta]),
                        ),
                        call(
                            Stage::SpanRephrase,
                            PRIMARY,
                            t.span_prompt(&src_sentence, &a, &s),
                            "[\"他\"]".into(),
                        ),
                        call(
                            Stage::SentenceRephrase,
                            PRIMARY,
                            t.sentence_prompt(&[ta.as_str()], &src_sentence),
                            format!("\"{s}\""),
                        ),
                        call(
                            Stage::Joint,
                            FALLBACK,
                            joint.clone(),
                            joint_reply(&good, &[&ta]),
                        ),
                    ],
                    Status::Ok,
                )
            }
            _ => (
                "no-spans",
                vec![call(
                    Stage::Joint,
                    PRIMARY,
                    joint.clone(),
                    joint_reply(&format!("第{i}条记录中什么也没发生。"), &[]),
                )],
                Status::Ok,
            ),
        };
        out.push(Scripted {
            sample,
            kind: label,
            calls,
            status,
        });
    }
    out
}

/// Mock answering each scripted (model, prompt) with its reply; anything
/// unscripted is rejected.
pub fn scripted_mock(corpus: &[Scripted]) -> MockClient {
    let mut table: HashMap<(String, String), String> = HashMap::new();
    for rec in corpus {
        for c in &rec.calls {
            let key = (c.model.to_string(), c.prompt.clone());
            if let Some(prev) = table.insert(key, c.reply.clone()) {
                assert_eq!(prev, c.reply, "conflicting script for {}", rec.sample.id);
            }
        }
    }
    MockClient::from_fn(move |req| {
        table
            .get(&(req.model.clone(), req.prompt().to_string()))
            .cloned()
            .ok_or_else(|| LlmError::Rejected("unscripted request".into()))
    })
}
