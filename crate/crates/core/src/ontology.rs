//! Multilingual IE schemas.
//!
//! Every concept carries one canonical identifier (the English class name
//! used in rendered code) and any number of per-language surface names that
//! resolve back to it. Korean `사람` and Chinese `人物` can both name `PER`.
//!
//! The config document is TOML:
//!
//! ```toml
//! task = "NER"            # NER | RE | ED | EAE
//! language = "zh"         # language of this dataset's sentences
//! dataset = "cluener"     # optional
//!
//! [[concepts]]
//! id = "PER"
//! base = "Entity"         # Entity | Relation | Event
//! names = { zh = "人物", ko = "사람" }
//! description = "PER refers to individual people."   # optional
//! examples = ["史蒂夫"]                                # optional
//!
//! [[concepts.attributes]] # optional, see `default_attributes`
//! name = "name"
//! kind = "text-span"      # text-span | concept-reference | list-of-references
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sample::{ExtractionInstance, Sample, SlotValue};

/// Default number of examples shown in a class comment.
pub const DEFAULT_EXAMPLE_CAP: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OntologyError {
    #[error("duplicate canonical id `{0}`")]
    DuplicateCanonicalId(String),
    #[error("surface name `{name}` ({lang}) is mapped to both `{first}` and `{second}`")]
    AmbiguousSurfaceName {
        lang: String,
        name: String,
        first: String,
        second: String,
    },
    #[error("`{0}` is not a valid identifier")]
    InvalidIdentifier(String),
    #[error("unknown base kind `{0}`")]
    UnknownBase(String),
    #[error("unknown task kind `{0}`")]
    UnknownTask(String),
    #[error("unknown attribute kind `{0}`")]
    UnknownSlotKind(String),
    #[error("concept `{concept}` declares attribute `{attribute}` twice")]
    DuplicateAttribute { concept: String, attribute: String },
    #[error("task {task} does not allow {base} concepts (`{concept}`)")]
    BaseNotAllowed {
        task: TaskKind,
        base: BaseKind,
        concept: String,
    },
    #[error("no concept named `{name}` in language `{lang}`")]
    UnknownName { lang: String, name: String },
    #[error("malformed ontology config: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskKind {
    Ner,
    Re,
    Ed,
    Eae,
}

impl TaskKind {
    pub fn allows(self, base: BaseKind) -> bool {
        match self {
            TaskKind::Ner => base == BaseKind::Entity,
            TaskKind::Re => matches!(base, BaseKind::Relation | BaseKind::Entity),
            TaskKind::Ed | TaskKind::Eae => matches!(base, BaseKind::Event | BaseKind::Entity),
        }
    }

    /// Base kind whose instances are the extraction targets of the task.
    pub fn target_base(self) -> BaseKind {
        match self {
            TaskKind::Ner => BaseKind::Entity,
            TaskKind::Re => BaseKind::Relation,
            TaskKind::Ed | TaskKind::Eae => BaseKind::Event,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Ner => "NER",
            TaskKind::Re => "RE",
            TaskKind::Ed => "ED",
            TaskKind::Eae => "EAE",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NER" => Ok(TaskKind::Ner),
            "RE" => Ok(TaskKind::Re),
            "ED" => Ok(TaskKind::Ed),
            "EAE" => Ok(TaskKind::Eae),
            _ => Err(OntologyError::UnknownTask(s.to_string())),
        }
    }
}

impl TryFrom<String> for TaskKind {
    type Error = OntologyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TaskKind> for String {
    fn from(t: TaskKind) -> Self {
        t.as_str().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BaseKind {
    Entity,
    Relation,
    Event,
}

impl BaseKind {
    pub const ALL: [BaseKind; 3] = [BaseKind::Entity, BaseKind::Relation, BaseKind::Event];

    pub fn as_str(self) -> &'static str {
        match self {
            BaseKind::Entity => "Entity",
            BaseKind::Relation => "Relation",
            BaseKind::Event => "Event",
        }
    }

    /// Attributes assumed when a concept declares none.
    pub fn default_attributes(self) -> Vec<Attribute> {
        match self {
            BaseKind::Entity => vec![Attribute::new("name", SlotKind::TextSpan)],
            BaseKind::Relation => vec![
                Attribute::new("subject", SlotKind::ConceptReference),
                Attribute::new("object", SlotKind::ConceptReference),
            ],
            BaseKind::Event => vec![Attribute::new("trigger", SlotKind::TextSpan)],
        }
    }
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaseKind {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Entity" => Ok(BaseKind::Entity),
            "Relation" => Ok(BaseKind::Relation),
            "Event" => Ok(BaseKind::Event),
            _ => Err(OntologyError::UnknownBase(s.to_string())),
        }
    }
}

impl TryFrom<String> for BaseKind {
    type Error = OntologyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BaseKind> for String {
    fn from(b: BaseKind) -> Self {
        b.as_str().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SlotKind {
    TextSpan,
    ConceptReference,
    ListOfReferences,
}

impl SlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotKind::TextSpan => "text-span",
            SlotKind::ConceptReference => "concept-reference",
            SlotKind::ListOfReferences => "list-of-references",
        }
    }

    pub fn accepts(self, value: &SlotValue) -> bool {
        matches!(
            (self, value),
            (SlotKind::TextSpan, SlotValue::Span(_))
                | (SlotKind::ConceptReference, SlotValue::Instance(_))
                | (SlotKind::ListOfReferences, SlotValue::List(_))
        )
    }
}

impl FromStr for SlotKind {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text-span" => Ok(SlotKind::TextSpan),
            "concept-reference" => Ok(SlotKind::ConceptReference),
            "list-of-references" => Ok(SlotKind::ListOfReferences),
            _ => Err(OntologyError::UnknownSlotKind(s.to_string())),
        }
    }
}

impl TryFrom<String> for SlotKind {
    type Error = OntologyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SlotKind> for String {
    fn from(k: SlotKind) -> Self {
        k.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: SlotKind,
}

impl Attribute {
    pub fn new(name: impl Into<String>, kind: SlotKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    #[serde(rename = "id")]
    pub canonical_id: String,
    pub base: BaseKind,
    #[serde(default, rename = "names", skip_serializing_if = "BTreeMap::is_empty")]
    pub surface_names: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<Attribute>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<String>,
}

impl Concept {
    pub fn new(canonical_id: impl Into<String>, base: BaseKind) -> Self {
        Self {
            canonical_id: canonical_id.into(),
            base,
            surface_names: BTreeMap::new(),
            attributes: base.default_attributes(),
            description: None,
            examples: Vec::new(),
        }
    }

    pub fn with_name(mut self, lang: impl Into<String>, name: impl Into<String>) -> Self {
        self.surface_names.insert(lang.into(), name.into());
        self
    }

    pub fn with_attributes(mut self, attributes: Vec<Attribute>) -> Self {
        self.attributes = attributes;
        self
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    /// Name shown to an annotator working in `lang`.
    pub fn display_name(&self, lang: &str) -> &str {
        self.surface_names
            .get(lang)
            .map(String::as_str)
            .unwrap_or(&self.canonical_id)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OntologyConfig {
    task: TaskKind,
    #[serde(default = "default_language")]
    language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dataset: Option<String>,
    #[serde(default)]
    concepts: Vec<Concept>,
}

fn default_language() -> String {
    "en".to_string()
}

/// A validated schema. Immutable once loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    pub task: TaskKind,
    pub language: String,
    pub dataset: Option<String>,
    concepts: Vec<Concept>,
    by_id: HashMap<String, usize>,
    by_surface: HashMap<(String, String), usize>,
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Ontology {
    /// Validates `concepts` against every schema invariant.
    pub fn new(
        task: TaskKind,
        language: impl Into<String>,
        concepts: Vec<Concept>,
    ) -> Result<Self, OntologyError> {
        let mut by_id = HashMap::new();
        let mut by_surface: HashMap<(String, String), usize> = HashMap::new();
        for (idx, c) in concepts.iter().enumerate() {
            if !is_identifier(&c.canonical_id) {
                return Err(OntologyError::InvalidIdentifier(c.canonical_id.clone()));
            }
            if BaseKind::ALL.iter().any(|b| b.as_str() == c.canonical_id) {
                return Err(OntologyError::DuplicateCanonicalId(c.canonical_id.clone()));
            }
            if !task.allows(c.base) {
                return Err(OntologyError::BaseNotAllowed {
                    task,
                    base: c.base,
                    concept: c.canonical_id.clone(),
                });
            }
            if by_id.insert(c.canonical_id.clone(), idx).is_some() {
                return Err(OntologyError::DuplicateCanonicalId(c.canonical_id.clone()));
            }
            let mut seen = std::collections::HashSet::new();
            for a in &c.attributes {
                if !is_identifier(&a.name) {
                    return Err(OntologyError::InvalidIdentifier(a.name.clone()));
                }
                if !seen.insert(a.name.as_str()) {
                    return Err(OntologyError::DuplicateAttribute {
                        concept: c.canonical_id.clone(),
                        attribute: a.name.clone(),
                    });
                }
            }
            for (lang, name) in &c.surface_names {
                if let Some(prev) = by_surface.insert((lang.clone(), name.clone()), idx) {
                    if prev != idx {
                        return Err(OntologyError::AmbiguousSurfaceName {
                            lang: lang.clone(),
                            name: name.clone(),
                            first: concepts[prev].canonical_id.clone(),
                            second: c.canonical_id.clone(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            task,
            language: language.into(),
            dataset: None,
            concepts,
            by_id,
            by_surface,
        })
    }

    pub fn with_dataset(mut self, dataset: impl Into<String>) -> Self {
        self.dataset = Some(dataset.into());
        self
    }

    /// Parses and validates a TOML config document.
    pub fn load(config_document: &str) -> Result<Self, OntologyError> {
        let mut cfg: OntologyConfig = toml::from_str(config_document)
            .map_err(|e| OntologyError::Malformed(e.message().to_string()))?;
        for c in &mut cfg.concepts {
            if c.attributes.is_empty() {
                c.attributes = c.base.default_attributes();
            }
        }
        let mut onto = Self::new(cfg.task, cfg.language, cfg.concepts)?;
        onto.dataset = cfg.dataset;
        Ok(onto)
    }

    pub fn load_file(path: &std::path::Path) -> Result<Self, OntologyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OntologyError::Malformed(format!("{}: {e}", path.display())))?;
        Self::load(&text)
    }

    /// Serializes back to the config format.
    pub fn to_toml(&self) -> String {
        let cfg = OntologyConfig {
            task: self.task,
            language: self.language.clone(),
            dataset: self.dataset.clone(),
            concepts: self.concepts.clone(),
        };
        toml::to_string_pretty(&cfg).expect("ontology config is always serializable")
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn concept(&self, canonical_id: &str) -> Option<&Concept> {
        self.by_id.get(canonical_id).map(|&i| &self.concepts[i])
    }

    /// Replaces the description of one concept, keeping everything else.
    pub fn set_description(
        &mut self,
        canonical_id: &str,
        description: impl Into<String>,
    ) -> Result<(), OntologyError> {
        let idx = *self
            .by_id
            .get(canonical_id)
            .ok_or_else(|| OntologyError::UnknownName {
                lang: "en".into(),
                name: canonical_id.into(),
            })?;
        self.concepts[idx].description = Some(description.into());
        Ok(())
    }

    pub fn set_examples(&mut self, canonical_id: &str, examples: Vec<String>) {
        if let Some(&idx) = self.by_id.get(canonical_id) {
            self.concepts[idx].examples = examples;
        }
    }

    /// Maps a language-specific concept name to its concept.
    pub fn resolve_surface(&self, lang: &str, name: &str) -> Result<&Concept, OntologyError> {
        if let Some(&i) = self.by_surface.get(&(lang.to_string(), name.to_string())) {
            return Ok(&self.concepts[i]);
        }
        if lang == "en" {
            if let Some(c) = self.concept(name) {
                return Ok(c);
            }
        }
        Err(OntologyError::UnknownName {
            lang: lang.to_string(),
            name: name.to_string(),
        })
    }
}

/// Most frequent distinct instance strings of `concept` in the corpus.
///
/// Ties keep first-occurrence order. Nested instances count too, so entity
/// examples can be drawn from relation arguments.
pub fn sample_examples(corpus: &[Sample], concept: &Concept, cap: usize) -> Vec<String> {
    let mut counts: Vec<(String, usize)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for sample in corpus {
        for inst in &sample.instances {
            visit_instances(inst, &mut |i| {
                if i.concept == concept.canonical_id {
                    let text = instance_text(i);
                    match index.get(&text) {
                        Some(&k) => counts[k].1 += 1,
                        None => {
                            index.insert(text.clone(), counts.len());
                            counts.push((text, 1));
                        }
                    }
                }
            });
        }
    }
    // stable sort keeps first-occurrence order among equal counts
    counts.sort_by_key(|c| std::cmp::Reverse(c.1));
    counts.into_iter().take(cap).map(|(t, _)| t).collect()
}

/// Mention text for span-headed instances, rendered call otherwise.
pub fn instance_text(inst: &ExtractionInstance) -> String {
    match inst.head_span() {
        Some(span) => span.text.clone(),
        None => crate::codegen::render_call(inst),
    }
}

pub(crate) fn visit_instances<'a>(
    inst: &'a ExtractionInstance,
    f: &mut impl FnMut(&'a ExtractionInstance),
) {
    f(inst);
    for v in inst.slots.values() {
        match v {
            SlotValue::Span(_) => {}
            SlotValue::Instance(i) => visit_instances(i, f),
            SlotValue::List(items) => items.iter().for_each(|i| visit_instances(i, f)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::Span;

    const PER_CONFIG: &str = r#"
task = "NER"
language = "zh"

[[concepts]]
id = "PER"
base = "Entity"
names = { zh = "人物", ko = "사람" }
"#;

    #[test]
    fn load_maps_both_surface_names() {
        let o = Ontology::load(PER_CONFIG).unwrap();
        assert_eq!(o.concepts().len(), 1);
        assert_eq!(o.resolve_surface("zh", "人物").unwrap().canonical_id, "PER");
        assert_eq!(o.resolve_surface("ko", "사람").unwrap().canonical_id, "PER");
        assert_eq!(o.resolve_surface("en", "PER").unwrap().canonical_id, "PER");
        assert_eq!(
            o.concept("PER").unwrap().attributes,
            BaseKind::Entity.default_attributes()
        );
    }

    #[test]
    fn unknown_surface_name() {
        let o = Ontology::load(PER_CONFIG).unwrap();
        assert!(matches!(
            o.resolve_surface("zh", "不存在"),
            Err(OntologyError::UnknownName { .. })
        ));
        // canonical ids only resolve for English
        assert!(o.resolve_surface("zh", "PER").is_err());
    }

    #[test]
    fn empty_concept_list_is_valid() {
        let o = Ontology::load("task = \"NER\"\nconcepts = []\n").unwrap();
        assert!(o.concepts().is_empty());
    }

    #[test]
    fn load_errors() {
        let dup = "task = \"NER\"\n[[concepts]]\nid = \"PER\"\nbase = \"Entity\"\n[[concepts]]\nid = \"PER\"\nbase = \"Entity\"\n";
        assert_eq!(
            Ontology::load(dup).unwrap_err(),
            OntologyError::DuplicateCanonicalId("PER".into())
        );

        let ambiguous = "task = \"NER\"\n[[concepts]]\nid = \"PER\"\nbase = \"Entity\"\nnames = { zh = \"人\" }\n[[concepts]]\nid = \"ORG\"\nbase = \"Entity\"\nnames = { zh = \"人\" }\n";
        assert!(matches!(
            Ontology::load(ambiguous).unwrap_err(),
            OntologyError::AmbiguousSurfaceName { .. }
        ));

        let bad_id = "task = \"NER\"\n[[concepts]]\nid = \"9PER\"\nbase = \"Entity\"\n";
        assert_eq!(
            Ontology::load(bad_id).unwrap_err(),
            OntologyError::InvalidIdentifier("9PER".into())
        );

        let bad_base = "task = \"NER\"\n[[concepts]]\nid = \"PER\"\nbase = \"Thing\"\n";
        assert!(
            matches!(Ontology::load(bad_base).unwrap_err(), OntologyError::Malformed(m) if m.contains("Thing"))
        );

        let wrong_task = "task = \"NER\"\n[[concepts]]\nid = \"WorkFor\"\nbase = \"Relation\"\n";
        assert!(matches!(
            Ontology::load(wrong_task).unwrap_err(),
            OntologyError::BaseNotAllowed { .. }
        ));

        let dup_attr = "task = \"EAE\"\n[[concepts]]\nid = \"Attack\"\nbase = \"Event\"\n[[concepts.attributes]]\nname = \"trigger\"\nkind = \"text-span\"\n[[concepts.attributes]]\nname = \"trigger\"\nkind = \"list-of-references\"\n";
        assert!(matches!(
            Ontology::load(dup_attr).unwrap_err(),
            OntologyError::DuplicateAttribute { .. }
        ));
    }

    #[test]
    fn toml_round_trip() {
        let mut o = Ontology::load(PER_CONFIG).unwrap();
        o.set_description("PER", "PER refers to people.").unwrap();
        let back = Ontology::load(&o.to_toml()).unwrap();
        assert_eq!(back, o);
    }

    fn loc_corpus() -> Vec<Sample> {
        // Berlin 5x, Paris 3x, Rome 1x
        let mut corpus = Vec::new();
        let mentions = [
            "Rome", "Paris", "Berlin", "Berlin", "Paris", "Berlin", "Paris", "Berlin", "Berlin",
        ];
        for (i, m) in mentions.iter().enumerate() {
            corpus.push(
                Sample::new(i.to_string(), "en", *m)
                    .with_instance(ExtractionInstance::entity("LOC", Span::at(*m, 0))),
            );
        }
        corpus.push(
            Sample::new("p", "en", "Paris")
                .with_instance(ExtractionInstance::entity("PER", Span::at("Paris", 0))),
        );
        corpus
    }

    #[test]
    fn examples_by_frequency() {
        let loc = Concept::new("LOC", BaseKind::Entity);
        let corpus = loc_corpus();
        // brute-force count
        let count = |w: &str| {
            corpus
                .iter()
                .flat_map(|s| &s.instances)
                .filter(|i| i.concept == "LOC" && i.head_span().unwrap().text == w)
                .count()
        };
        assert_eq!((count("Berlin"), count("Paris"), count("Rome")), (5, 3, 1));
        assert_eq!(sample_examples(&corpus, &loc, 2), vec!["Berlin", "Paris"]);
        assert!(sample_examples(&corpus, &loc, 0).is_empty());
        assert_eq!(
            sample_examples(&corpus, &loc, 10),
            vec!["Berlin", "Paris", "Rome"]
        );
        assert!(sample_examples(&[], &loc, 10).is_empty());
    }

    #[test]
    fn ties_break_by_first_occurrence() {
        let loc = Concept::new("LOC", BaseKind::Entity);
        let corpus: Vec<Sample> = ["b", "a", "c", "a", "b"]
            .iter()
            .map(|m| {
                Sample::new("", "en", *m)
                    .with_instance(ExtractionInstance::entity("LOC", Span::new(*m)))
            })
            .collect();
        assert_eq!(sample_examples(&corpus, &loc, 10), vec!["b", "a", "c"]);
    }
}
