//! Span-offset Micro-F1 for NER, RE, ED and EAE, plus projection
//! faithfulness.
//!
//! Every scorer reduces each sample to a multiset of comparable units,
//! deduplicates the predicted units, and counts a true positive for each
//! distinct predicted unit that also appears in gold. A gold unit is thus
//! matched at most once. Units carrying a span without an offset can never
//! match; they still count toward their side's total.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::TaskKind;
use crate::projection::ProjectionRecord;
use crate::sample::{ExtractionInstance, Interval, Sample, SlotValue};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("sample id `{0}` appears more than once")]
    DuplicateId(String),
    #[error("gold sample `{0}` has no prediction")]
    MissingPrediction(String),
    #[error("prediction `{0}` has no gold sample")]
    UnknownPrediction(String),
    #[error("faithfulness of an empty record set is undefined")]
    Empty,
}

/// Micro-aggregated counts and the ratios derived from them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub true_positives: usize,
    pub predicted_count: usize,
    pub gold_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreCard {
    pub fn from_counts(true_positives: usize, predicted_count: usize, gold_count: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        Self {
            true_positives,
            predicted_count,
            gold_count,
            precision: ratio(true_positives, predicted_count),
            recall: ratio(true_positives, gold_count),
            // 2pr/(p+r) == 2tp/(pred+gold), computed from integers to stay exact
            f1: ratio(2 * true_positives, predicted_count + gold_count),
        }
    }
}

impl Add for ScoreCard {
    type Output = ScoreCard;

    fn add(self, rhs: ScoreCard) -> ScoreCard {
        ScoreCard::from_counts(
            self.true_positives + rhs.true_positives,
            self.predicted_count + rhs.predicted_count,
            self.gold_count + rhs.gold_count,
        )
    }
}

impl std::iter::Sum for ScoreCard {
    fn sum<I: Iterator<Item = ScoreCard>>(iter: I) -> Self {
        iter.fold(ScoreCard::default(), Add::add)
    }
}

impl fmt::Display for ScoreCard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tp = {}  predicted = {}  gold = {}\nprecision = {:.4}\nrecall    = {:.4}\nf1        = {:.4}",
            self.true_positives, self.predicted_count, self.gold_count, self.precision, self.recall, self.f1
        )
    }
}

/// Anchor of a span: its interval, or its text when unanchored.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Anchor {
    At(Interval),
    Unanchored(String),
}

impl Anchor {
    fn of(span: &crate::sample::Span) -> Self {
        match span.interval() {
            Some(iv) => Anchor::At(iv),
            None => Anchor::Unanchored(span.text.clone()),
        }
    }

    fn anchored(&self) -> bool {
        matches!(self, Anchor::At(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Unit {
    concept: String,
    anchors: Vec<(String, Anchor)>,
}

impl Unit {
    fn anchored(&self) -> bool {
        self.anchors.iter().all(|(_, a)| a.anchored())
    }
}

fn head_anchor(inst: &ExtractionInstance) -> Option<Anchor> {
    inst.head_span().map(Anchor::of)
}

/// Entity mentions and event triggers: concept plus head span.
fn head_units(sample: &Sample) -> Vec<Unit> {
    sample
        .instances
        .iter()
        .filter_map(|inst| {
            head_anchor(inst).map(|a| Unit {
                concept: inst.concept.clone(),
                anchors: vec![(String::new(), a)],
            })
        })
        .collect()
}

/// Relations: concept plus every argument's type and span.
fn relation_units(sample: &Sample) -> Vec<Unit> {
    sample
        .instances
        .iter()
        .filter(|inst| {
            inst.slots
                .values()
                .any(|v| matches!(v, SlotValue::Instance(_)))
        })
        .map(|inst| {
            let mut anchors = Vec::new();
            for value in inst.slots.values() {
                match value {
                    SlotValue::Span(s) => anchors.push((String::new(), Anchor::of(s))),
                    SlotValue::Instance(arg) => {
                        if let Some(a) = head_anchor(arg) {
                            anchors.push((arg.concept.clone(), a));
                        }
                    }
                    SlotValue::List(items) => {
                        for arg in items {
                            if let Some(a) = head_anchor(arg) {
                                anchors.push((arg.concept.clone(), a));
                            }
                        }
                    }
                }
            }
            Unit {
                concept: inst.concept.clone(),
                anchors,
            }
        })
        .collect()
}

/// Event arguments: (event type, trigger, role, argument span).
fn argument_units(sample: &Sample) -> Vec<Unit> {
    let mut out = Vec::new();
    for event in &sample.instances {
        let Some(trigger) = head_anchor(event) else {
            continue;
        };
        let mut push = |role: &str, arg: Anchor| {
            out.push(Unit {
                concept: event.concept.clone(),
                anchors: vec![(String::new(), trigger.clone()), (role.to_string(), arg)],
            })
        };
        let mut seen_head = false;
        for (role, value) in &event.slots {
            match value {
                SlotValue::Span(s) => {
                    if seen_head {
                        push(role, Anchor::of(s));
                    }
                    seen_head = true;
                }
                SlotValue::Instance(arg) => {
                    if let Some(a) = head_anchor(arg) {
                        push(role, a);
                    }
                }
                SlotValue::List(items) => {
                    for arg in items {
                        if let Some(a) = head_anchor(arg) {
                            push(role, a);
                        }
                    }
                }
            }
        }
    }
    out
}

fn count_sample(pred: Vec<Unit>, gold: Vec<Unit>) -> ScoreCard {
    let mut distinct: HashSet<Unit> = HashSet::new();
    for p in pred {
        distinct.insert(p);
    }
    let gold_count = gold.len();
    let gold_set: HashSet<Unit> = gold.into_iter().filter(Unit::anchored).collect();
    let tp = distinct
        .iter()
        .filter(|p| p.anchored() && gold_set.contains(*p))
        .count();
    ScoreCard::from_counts(tp, distinct.len(), gold_count)
}

fn align<'a>(
    pred: &'a [Sample],
    gold: &'a [Sample],
) -> Result<Vec<(&'a Sample, &'a Sample)>, MetricsError> {
    let mut by_id: HashMap<&str, &Sample> = HashMap::new();
    for p in pred {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(MetricsError::DuplicateId(p.id.clone()));
        }
    }
    let mut pairs = Vec::with_capacity(gold.len());
    let mut seen = HashSet::new();
    for g in gold {
        if !seen.insert(g.id.as_str()) {
            return Err(MetricsError::DuplicateId(g.id.clone()));
        }
        let p = by_id
            .get(g.id.as_str())
            .ok_or_else(|| MetricsError::MissingPrediction(g.id.clone()))?;
        pairs.push((*p, g));
    }
    if let Some(extra) = pred.iter().find(|p| !seen.contains(p.id.as_str())) {
        return Err(MetricsError::UnknownPrediction(extra.id.clone()));
    }
    Ok(pairs)
}

fn score_with(
    pred: &[Sample],
    gold: &[Sample],
    units: fn(&Sample) -> Vec<Unit>,
) -> Result<ScoreCard, MetricsError> {
    Ok(align(pred, gold)?
        .into_iter()
        .map(|(p, g)| count_sample(units(p), units(g)))
        .sum())
}

/// Entity matches on (span interval, type).
pub fn score_ner(pred: &[Sample], gold: &[Sample]) -> Result<ScoreCard, MetricsError> {
    score_with(pred, gold, head_units)
}

/// Relation matches on type plus type and span of every argument.
pub fn score_re(pred: &[Sample], gold: &[Sample]) -> Result<ScoreCard, MetricsError> {
    score_with(pred, gold, relation_units)
}

/// Event matches on (trigger interval, type); arguments are ignored.
pub fn score_ed(pred: &[Sample], gold: &[Sample]) -> Result<ScoreCard, MetricsError> {
    score_with(pred, gold, head_units)
}

/// Argument matches on (span, role) within the same (event type, trigger).
pub fn score_eae(pred: &[Sample], gold: &[Sample]) -> Result<ScoreCard, MetricsError> {
    score_with(pred, gold, argument_units)
}

pub fn score(task: TaskKind, pred: &[Sample], gold: &[Sample]) -> Result<ScoreCard, MetricsError> {
    match task {
        TaskKind::Ner => score_ner(pred, gold),
        TaskKind::Re => score_re(pred, gold),
        TaskKind::Ed => score_ed(pred, gold),
        TaskKind::Eae => score_eae(pred, gold),
    }
}

/// Fraction of records whose projected spans all occur verbatim in the
/// projected sentence.
pub fn score_faithfulness(records: &[ProjectionRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let faithful = records.iter().filter(|r| r.is_faithful()).count();
    Ok(faithful as f64 / records.len() as f64)
}
