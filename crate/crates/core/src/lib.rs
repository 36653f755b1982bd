//! Tooling for code-style information extraction data: ontologies rendered
//! as class definitions, completion parsing, micro-F1 scoring, LLM-driven
//! label projection across languages, concept descriptions, and
//! cross-lingual alignment data.

pub mod aligndata;
pub mod cli;
pub mod codegen;
pub mod descriptions;
pub mod jsonl;
pub mod llm;
pub mod metrics;
pub mod ontology;
pub mod parser;
pub mod projection;
pub mod sample;

pub use ontology::{BaseKind, Concept, Ontology, TaskKind};
pub use sample::{ExtractionInstance, Sample, SlotValue, Span};
