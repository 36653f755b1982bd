//! Sentences, extraction instances and their JSON forms.
//!
//! Offsets are character offsets (Unicode scalar values) into the owning
//! sentence, never bytes. A span stores only its start; the end is
//! `start + text.chars().count()`.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Half-open character interval `[start, end)`.
pub type Interval = (usize, usize);

/// A text span, optionally anchored in the sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
}

impl Span {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            start: None,
        }
    }

    pub fn at(text: impl Into<String>, start: usize) -> Self {
        Self {
            text: text.into(),
            start: Some(start),
        }
    }

    pub fn interval(&self) -> Option<Interval> {
        self.start.map(|s| (s, s + self.text.chars().count()))
    }
}

/// Value bound to one attribute of an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlotValue {
    Span(Span),
    Instance(Box<ExtractionInstance>),
    List(Vec<ExtractionInstance>),
}

/// One typed extraction: an entity mention, a relation, or an event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionInstance {
    #[serde(rename = "type")]
    pub concept: String,
    pub slots: IndexMap<String, SlotValue>,
}

impl ExtractionInstance {
    pub fn new(concept: impl Into<String>) -> Self {
        Self {
            concept: concept.into(),
            slots: IndexMap::new(),
        }
    }

    /// Entity mention with the conventional single `name` slot.
    pub fn entity(concept: impl Into<String>, span: Span) -> Self {
        Self::new(concept).with("name", SlotValue::Span(span))
    }

    pub fn with(mut self, name: impl Into<String>, value: SlotValue) -> Self {
        self.slots.insert(name.into(), value);
        self
    }

    /// The first text-span slot: the mention of an entity, the trigger of an event.
    pub fn head_span(&self) -> Option<&Span> {
        self.slots.values().find_map(|v| match v {
            SlotValue::Span(s) => Some(s),
            _ => None,
        })
    }

    /// All spans in depth-first slot order.
    pub fn spans(&self) -> Vec<&Span> {
        let mut out = Vec::new();
        collect_spans(self, &mut out);
        out
    }

    pub fn spans_mut(&mut self) -> Vec<&mut Span> {
        let mut out = Vec::new();
        collect_spans_mut(self, &mut out);
        out
    }

    /// Copy with every offset cleared.
    pub fn without_offsets(&self) -> Self {
        let mut copy = self.clone();
        for span in copy.spans_mut() {
            span.start = None;
        }
        copy
    }
}

fn collect_spans<'a>(inst: &'a ExtractionInstance, out: &mut Vec<&'a Span>) {
    for value in inst.slots.values() {
        match value {
            SlotValue::Span(s) => out.push(s),
            SlotValue::Instance(i) => collect_spans(i, out),
            SlotValue::List(items) => items.iter().for_each(|i| collect_spans(i, out)),
        }
    }
}

fn collect_spans_mut<'a>(inst: &'a mut ExtractionInstance, out: &mut Vec<&'a mut Span>) {
    for value in inst.slots.values_mut() {
        match value {
            SlotValue::Span(s) => out.push(s),
            SlotValue::Instance(i) => collect_spans_mut(i, out),
            SlotValue::List(items) => items.iter_mut().for_each(|i| collect_spans_mut(i, out)),
        }
    }
}

/// A sentence with its extractions.
///
/// On input, the flat NER shorthand `spans: [{text, type, start?}]` is
/// accepted in place of `instances`; each span becomes an entity instance
/// with a single `name` slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "SampleRecord")]
pub struct Sample {
    pub id: String,
    #[serde(default)]
    pub language: String,
    pub sentence: String,
    pub instances: Vec<ExtractionInstance>,
}

#[derive(Deserialize)]
struct SampleRecord {
    #[serde(default)]
    id: String,
    #[serde(default)]
    language: String,
    sentence: String,
    #[serde(default)]
    instances: Vec<ExtractionInstance>,
    #[serde(default)]
    spans: Vec<FlatSpan>,
}

/// NER shorthand used by projection corpora.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatSpan {
    pub text: String,
    #[serde(rename = "type")]
    pub concept: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
}

impl From<SampleRecord> for Sample {
    fn from(r: SampleRecord) -> Self {
        let mut instances = r.instances;
        instances.extend(r.spans.into_iter().map(|s| {
            ExtractionInstance::entity(
                s.concept,
                Span {
                    text: s.text,
                    start: s.start,
                },
            )
        }));
        Sample {
            id: r.id,
            language: r.language,
            sentence: r.sentence,
            instances,
        }
    }
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        language: impl Into<String>,
        sentence: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            language: language.into(),
            sentence: sentence.into(),
            instances: Vec::new(),
        }
    }

    pub fn with_instance(mut self, inst: ExtractionInstance) -> Self {
        self.instances.push(inst);
        self
    }

    /// Every span of every instance, depth-first.
    pub fn spans(&self) -> Vec<&Span> {
        self.instances.iter().flat_map(|i| i.spans()).collect()
    }

    pub fn spans_mut(&mut self) -> Vec<&mut Span> {
        self.instances
            .iter_mut()
            .flat_map(|i| i.spans_mut())
            .collect()
    }

    /// Checks that every anchored span indexes its own text in the sentence.
    pub fn offsets_consistent(&self) -> bool {
        self.spans().iter().all(|s| match s.interval() {
            Some((a, b)) => char_slice(&self.sentence, a, b).as_deref() == Some(s.text.as_str()),
            None => true,
        })
    }
}

/// Substring by character interval; `None` when out of range.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<String> {
    if start > end {
        return None;
    }
    let mut chars = text.chars();
    let mut out = String::new();
    for _ in 0..start {
        chars.next()?;
    }
    for _ in start..end {
        out.push(chars.next()?);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_span_shorthand_becomes_entities() {
        let line = r#"{"id":"1","sentence":"Steve met Tim","spans":[{"text":"Steve","type":"PER","start":0}]}"#;
        let s: Sample = serde_json::from_str(line).unwrap();
        assert_eq!(s.instances.len(), 1);
        assert_eq!(s.instances[0].concept, "PER");
        assert_eq!(s.instances[0].head_span().unwrap().interval(), Some((0, 5)));
        assert!(s.offsets_consistent());
    }

    #[test]
    fn nested_instance_json_round_trips() {
        let rel = ExtractionInstance::new("WorkFor")
            .with(
                "subject",
                SlotValue::Instance(Box::new(ExtractionInstance::entity(
                    "PER",
                    Span::at("Steve", 0),
                ))),
            )
            .with(
                "object",
                SlotValue::Instance(Box::new(ExtractionInstance::entity(
                    "ORG",
                    Span::new("Apple"),
                ))),
            );
        let s = Sample::new("x", "en", "Steve joined Apple").with_instance(rel);
        let text = serde_json::to_string(&s).unwrap();
        let back: Sample = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn char_offsets_not_bytes() {
        let s = Sample::new("z", "zh", "欧盟拒绝德国")
            .with_instance(ExtractionInstance::entity("ORG", Span::at("德国", 4)));
        assert!(s.offsets_consistent());
        assert_eq!(char_slice("欧盟拒绝德国", 4, 6).unwrap(), "德国");
        assert_eq!(char_slice("abc", 2, 4), None);
    }
}
