//! Renders schemas and gold extractions in the code-prompt dialect.
//!
//! An instruction is laid out as:
//!
//! ```text
//! class Entity:
//!     # Base class of all entity concepts.
//!     pass
//!
//!
//! class Relation:
//!     ...
//!
//!
//! class PER(Entity):
//!     # Description: PER refers to individual people.
//!     # Examples: ["Steve", "Tim Cook"]
//!     def __init__(self, name: str):
//!         self.name = name
//!
//!
//! """
//! <task description>
//! """
//! sentence = "Steve became CEO of Apple in 1998."
//! ```
//!
//! The `# Description:` line appears only when the concept has a
//! description; the `# Examples:` line is always present when comments are
//! on (an empty list renders `[]`). Blocks are separated by two blank lines.
//!
//! A completion is `results = [C1(...), C2(...)]` with positional arguments
//! in declared attribute order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{BaseKind, Concept, Ontology, SlotKind, TaskKind, DEFAULT_EXAMPLE_CAP};
use crate::sample::{ExtractionInstance, Sample, SlotValue};

pub const COMPLETION_PREFIX: &str = "results = [";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CodegenError {
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("`{concept}` has no attribute `{attribute}`")]
    UnknownAttribute { concept: String, attribute: String },
    #[error("`{concept}` is missing attribute `{attribute}`")]
    MissingAttribute { concept: String, attribute: String },
    #[error("`{concept}.{attribute}` expects a {expected} value")]
    KindMismatch {
        concept: String,
        attribute: String,
        expected: &'static str,
    },
    #[error("span `{span}` does not occur in the sentence")]
    SpanNotInSentence { span: String },
    #[error("span `{span}` has an offset that does not match the sentence")]
    BadOffset { span: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMeta {
    #[serde(default)]
    pub dataset: Option<String>,
    pub language: String,
    pub task: TaskKind,
    pub sample_id: String,
}

/// One instruction-tuning example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub instruction: String,
    pub completion: String,
    pub meta: PromptMeta,
}

/// Fixed task description placed in the instruction docstring.
pub fn task_description(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Ner => "Find every entity mentioned in `sentence`. Represent each one as an instance of the matching Entity subclass defined above, constructed from its exact text, and assign the list of instances to `results`.",
        TaskKind::Re => "Find every relation expressed in `sentence`. Represent each one as an instance of the matching Relation subclass defined above, with its arguments given as Entity instances built from their exact text, and assign the list of instances to `results`.",
        TaskKind::Ed => "Find every event mentioned in `sentence`. Represent each one as an instance of the matching Event subclass defined above, constructed from the exact trigger text, and assign the list of instances to `results`.",
        TaskKind::Eae => "Find every event in `sentence` together with its arguments. Represent each one as an instance of the matching Event subclass defined above, with the exact trigger text and every role filled by Entity instances built from exact argument text, and assign the list of instances to `results`.",
    }
}

/// Escapes `\` and `"`; everything else passes through.
pub fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

fn type_hint(kind: SlotKind) -> &'static str {
    match kind {
        SlotKind::TextSpan => "str",
        SlotKind::ConceptReference => "Entity",
        SlotKind::ListOfReferences => "list",
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render_base(base: BaseKind, out: &mut String) {
    let what = match base {
        BaseKind::Entity => "entity",
        BaseKind::Relation => "relation",
        BaseKind::Event => "event",
    };
    out.push_str(&format!(
        "class {base}:\n    # Base class of all {what} concepts.\n    pass\n"
    ));
}

/// One `class NAME(BASE):` block.
pub fn render_class(concept: &Concept, with_comments: bool) -> String {
    let mut out = format!("class {}({}):\n", concept.canonical_id, concept.base);
    if with_comments {
        if let Some(desc) = &concept.description {
            out.push_str(&format!("    # Description: {}\n", one_line(desc)));
        }
        let examples: Vec<String> = concept
            .examples
            .iter()
            .take(DEFAULT_EXAMPLE_CAP)
            .map(|e| quote(&one_line(e)))
            .collect();
        out.push_str(&format!("    # Examples: [{}]\n", examples.join(", ")));
    }
    let params: Vec<String> = concept
        .attributes
        .iter()
        .map(|a| format!("{}: {}", a.name, type_hint(a.kind)))
        .collect();
    if params.is_empty() {
        out.push_str("    def __init__(self):\n        pass\n");
    } else {
        out.push_str(&format!("    def __init__(self, {}):\n", params.join(", ")));
        for a in &concept.attributes {
            out.push_str(&format!("        self.{0} = {0}\n", a.name));
        }
    }
    out
}

/// The schema code alone: base classes followed by one class per concept.
pub fn render_schema(ontology: &Ontology, with_comments: bool) -> String {
    let mut blocks = Vec::new();
    for base in BaseKind::ALL {
        let mut b = String::new();
        render_base(base, &mut b);
        blocks.push(b);
    }
    for c in ontology.concepts() {
        blocks.push(render_class(c, with_comments));
    }
    blocks.join("\n\n")
}

/// Task docstring plus the `sentence` binding.
pub fn render_task_prompt(task: TaskKind, sentence: &str) -> String {
    format!(
        "\"\"\"\n{}\n\"\"\"\nsentence = {}\n",
        task_description(task),
        quote(sentence)
    )
}

/// Schema code, then the task prompt. Deterministic.
pub fn render_instruction(ontology: &Ontology, sentence: &str, with_comments: bool) -> String {
    format!(
        "{}\n\n{}",
        render_schema(ontology, with_comments),
        render_task_prompt(ontology.task, sentence)
    )
}

fn render_value(value: &SlotValue, out: &mut String) {
    match value {
        SlotValue::Span(s) => out.push_str(&quote(&s.text)),
        SlotValue::Instance(i) => render_call_into(i, out),
        SlotValue::List(items) => render_list_into(items, out),
    }
}

fn render_call_into(inst: &ExtractionInstance, out: &mut String) {
    out.push_str(&inst.concept);
    out.push('(');
    for (k, v) in inst.slots.values().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        render_value(v, out);
    }
    out.push(')');
}

fn render_list_into(items: &[ExtractionInstance], out: &mut String) {
    out.push('[');
    for (k, item) in items.iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        render_call_into(item, out);
    }
    out.push(']');
}

/// A single constructor call, e.g. `PER("Steve")`.
pub fn render_call(inst: &ExtractionInstance) -> String {
    let mut out = String::new();
    render_call_into(inst, &mut out);
    out
}

/// `results = [...]` in input order.
pub fn render_completion(instances: &[ExtractionInstance]) -> String {
    let mut out = String::from("results = ");
    render_list_into(instances, &mut out);
    out
}

/// Checks `inst` against its concept and returns it with slots in declared
/// attribute order.
pub fn conform_instance(
    ontology: &Ontology,
    inst: &ExtractionInstance,
) -> Result<ExtractionInstance, CodegenError> {
    let concept = ontology
        .concept(&inst.concept)
        .ok_or_else(|| CodegenError::UnknownConcept(inst.concept.clone()))?;
    if let Some(extra) = inst.slots.keys().find(|k| concept.attribute(k).is_none()) {
        return Err(CodegenError::UnknownAttribute {
            concept: concept.canonical_id.clone(),
            attribute: extra.clone(),
        });
    }
    let mut out = ExtractionInstance::new(&concept.canonical_id);
    for attr in &concept.attributes {
        let value = inst
            .slots
            .get(&attr.name)
            .ok_or_else(|| CodegenError::MissingAttribute {
                concept: concept.canonical_id.clone(),
                attribute: attr.name.clone(),
            })?;
        if !attr.kind.accepts(value) {
            return Err(CodegenError::KindMismatch {
                concept: concept.canonical_id.clone(),
                attribute: attr.name.clone(),
                expected: attr.kind.as_str(),
            });
        }
        let value = match value {
            SlotValue::Span(s) => SlotValue::Span(s.clone()),
            SlotValue::Instance(i) => SlotValue::Instance(Box::new(conform_instance(ontology, i)?)),
            SlotValue::List(items) => SlotValue::List(
                items
                    .iter()
                    .map(|i| conform_instance(ontology, i))
                    .collect::<Result<_, _>>()?,
            ),
        };
        out.slots.insert(attr.name.clone(), value);
    }
    Ok(out)
}

/// Validates a sample's instances and spans against the ontology.
pub fn conform_sample(
    ontology: &Ontology,
    sample: &Sample,
) -> Result<Vec<ExtractionInstance>, CodegenError> {
    let instances = sample
        .instances
        .iter()
        .map(|i| conform_instance(ontology, i))
        .collect::<Result<Vec<_>, _>>()?;
    for span in sample.spans() {
        match span.interval() {
            Some((a, b)) => {
                if crate::sample::char_slice(&sample.sentence, a, b).as_deref()
                    != Some(span.text.as_str())
                {
                    return Err(CodegenError::BadOffset {
                        span: span.text.clone(),
                    });
                }
            }
            None => {
                if !sample.sentence.contains(span.text.as_str()) {
                    return Err(CodegenError::SpanNotInSentence {
                        span: span.text.clone(),
                    });
                }
            }
        }
    }
    Ok(instances)
}

/// Instruction + gold completion for one sample.
pub fn build_training_pair(
    ontology: &Ontology,
    sample: &Sample,
    with_comments: bool,
) -> Result<PromptPair, CodegenError> {
    let instances = conform_sample(ontology, sample)?;
    let language = if sample.language.is_empty() {
        ontology.language.clone()
    } else {
        sample.language.clone()
    };
    Ok(PromptPair {
        instruction: render_instruction(ontology, &sample.sentence, with_comments),
        completion: render_completion(&instances),
        meta: PromptMeta {
            dataset: ontology.dataset.clone(),
            language,
            task: ontology.task,
            sample_id: sample.id.clone(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::Attribute;
    use crate::sample::Span;

    fn ner() -> Ontology {
        Ontology::new(
            TaskKind::Ner,
            "en",
            vec![
                Concept::new("PER", BaseKind::Entity).with_name("zh", "人物"),
                Concept::new("ORG", BaseKind::Entity),
            ],
        )
        .unwrap()
    }

    fn re() -> Ontology {
        Ontology::new(
            TaskKind::Re,
            "en",
            vec![
                Concept::new("PER", BaseKind::Entity),
                Concept::new("ORG", BaseKind::Entity),
                Concept::new("WorkFor", BaseKind::Relation),
            ],
        )
        .unwrap()
    }

    #[test]
    fn instruction_contains_class_and_sentence() {
        let text = render_instruction(&ner(), "Steve became CEO of Apple in 1998.", true);
        assert!(text.contains("class PER(Entity):"));
        assert!(text.contains("sentence = \"Steve became CEO of Apple in 1998.\""));
        assert!(!text.contains("人物"));
        assert_eq!(text.matches("\"\"\"").count(), 2);
        assert_eq!(text.matches("\nsentence = ").count(), 1);
    }

    #[test]
    fn empty_ontology_renders_bases_only() {
        let o = Ontology::new(TaskKind::Ner, "en", vec![]).unwrap();
        let text = render_instruction(&o, "x", true);
        assert_eq!(text.lines().filter(|l| l.starts_with("class ")).count(), 3);
        for b in ["class Entity:", "class Relation:", "class Event:"] {
            assert!(text.contains(b));
        }
        assert!(text.ends_with("sentence = \"x\"\n"));
    }

    #[test]
    fn class_block_layout_is_exact() {
        let mut c = Concept::new("PER", BaseKind::Entity);
        c.description = Some("PER refers to individual people.".into());
        c.examples = vec!["Steve".into(), "Tim \"TC\" Cook".into()];
        assert_eq!(
            render_class(&c, true),
            "class PER(Entity):\n    # Description: PER refers to individual people.\n    # Examples: [\"Steve\", \"Tim \\\"TC\\\" Cook\"]\n    def __init__(self, name: str):\n        self.name = name\n"
        );
        assert_eq!(
            render_class(&c, false),
            "class PER(Entity):\n    def __init__(self, name: str):\n        self.name = name\n"
        );
        let bare = Concept::new("LOC", BaseKind::Entity);
        assert!(render_class(&bare, true).contains("    # Examples: []\n"));
    }

    #[test]
    fn examples_capped_at_ten() {
        let mut c = Concept::new("PER", BaseKind::Entity);
        c.examples = (0..15).map(|i| format!("e{i}")).collect();
        let line = render_class(&c, true);
        assert!(line.contains("\"e9\"]"));
        assert!(!line.contains("e10"));
    }

    #[test]
    fn sentence_quotes_are_escaped() {
        let p = render_task_prompt(TaskKind::Ner, r#"He said "hi" \o/ 。"#);
        assert!(p.ends_with("sentence = \"He said \\\"hi\\\" \\\\o/ 。\"\n"));
    }

    #[test]
    fn completions() {
        assert_eq!(render_completion(&[]), "results = []");
        let steve = ExtractionInstance::entity("PER", Span::new("Steve"));
        assert_eq!(
            render_completion(std::slice::from_ref(&steve)),
            "results = [PER(\"Steve\")]"
        );
        let rel = ExtractionInstance::new("WorkFor")
            .with("subject", SlotValue::Instance(Box::new(steve)))
            .with(
                "object",
                SlotValue::Instance(Box::new(ExtractionInstance::entity(
                    "ORG",
                    Span::new("Apple"),
                ))),
            );
        assert_eq!(
            render_completion(&[rel]),
            "results = [WorkFor(PER(\"Steve\"), ORG(\"Apple\"))]"
        );
    }

    #[test]
    fn conform_reorders_and_rejects() {
        let o = re();
        let rel = ExtractionInstance::new("WorkFor")
            .with(
                "object",
                SlotValue::Instance(Box::new(ExtractionInstance::entity(
                    "ORG",
                    Span::new("Apple"),
                ))),
            )
            .with(
                "subject",
                SlotValue::Instance(Box::new(ExtractionInstance::entity(
                    "PER",
                    Span::new("Steve"),
                ))),
            );
        let fixed = conform_instance(&o, &rel).unwrap();
        assert_eq!(
            fixed.slots.keys().collect::<Vec<_>>(),
            vec!["subject", "object"]
        );

        let wrong =
            ExtractionInstance::new("WorkFor").with("subject", SlotValue::Span(Span::new("Steve")));
        assert!(matches!(
            conform_instance(&o, &wrong),
            Err(CodegenError::KindMismatch { .. })
        ));
        assert_eq!(
            conform_instance(&o, &ExtractionInstance::new("Dragon")),
            Err(CodegenError::UnknownConcept("Dragon".into()))
        );
    }

    #[test]
    fn training_pair() {
        let s = Sample::new("s1", "en", "Steve became CEO of Apple in 1998.")
            .with_instance(ExtractionInstance::entity("PER", Span::at("Steve", 0)))
            .with_instance(ExtractionInstance::entity("ORG", Span::at("Apple", 20)));
        let p = build_training_pair(&ner(), &s, true).unwrap();
        assert!(p.completion.starts_with(COMPLETION_PREFIX));
        assert_eq!(p.completion, "results = [PER(\"Steve\"), ORG(\"Apple\")]");
        assert_eq!(p.meta.sample_id, "s1");
        assert_eq!(p.meta.task, TaskKind::Ner);

        let bad = Sample::new("s2", "en", "Steve")
            .with_instance(ExtractionInstance::entity("PER", Span::new("Bob")));
        assert!(matches!(
            build_training_pair(&ner(), &bad, true),
            Err(CodegenError::SpanNotInSentence { .. })
        ));
    }

    #[test]
    fn event_with_roles_renders_nested_lists() {
        let o = Ontology::new(
            TaskKind::Eae,
            "en",
            vec![
                Concept::new("PER", BaseKind::Entity),
                Concept::new("Attack", BaseKind::Event).with_attributes(vec![
                    Attribute::new("trigger", SlotKind::TextSpan),
                    Attribute::new("attacker", SlotKind::ListOfReferences),
                    Attribute::new("target", SlotKind::ListOfReferences),
                ]),
            ],
        )
        .unwrap();
        let schema = render_schema(&o, false);
        assert!(schema.contains("def __init__(self, trigger: str, attacker: list, target: list):"));
        let ev = ExtractionInstance::new("Attack")
            .with("trigger", SlotValue::Span(Span::new("shot")))
            .with(
                "attacker",
                SlotValue::List(vec![ExtractionInstance::entity("PER", Span::new("Bob"))]),
            )
            .with("target", SlotValue::List(vec![]));
        assert_eq!(
            render_completion(&[ev]),
            "results = [Attack(\"shot\", [PER(\"Bob\")], [])]"
        );
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_instruction(&re(), "Steve joined Apple.", true);
        let b = render_instruction(&re(), "Steve joined Apple.", true);
        assert_eq!(a, b);
    }
}
