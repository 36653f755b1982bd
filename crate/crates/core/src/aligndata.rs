//! Cross-lingual alignment samples built from projected records.
//!
//! An alignment sample shows the model a solved example in one language
//! and asks for the same instances over the translated sentence:
//!
//! ```text
//! <alignment task line>
//!
//! # English
//! <source instruction>results = [PER("Steve")]
//!
//! # Chinese
//! <target instruction>
//! ```
//!
//! with `results = [PER("史蒂夫")]` as the completion. Instances correspond
//! by position, which projection preserves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::{build_training_pair, CodegenError, PromptMeta, PromptPair};
use crate::ontology::Ontology;
use crate::projection::templates::language_name;
use crate::projection::{LangPair, ProjectionRecord, Status};
use crate::sample::Sample;

pub const ALIGNMENT_TASK: &str = "# The first program extracts instances from its sentence; complete the second program so that `results` holds the same instances for its sentence, a translation of the first.";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AlignError {
    #[error("sample {id}: {source_count} source instances but {target_count} target instances")]
    CountMismatch {
        id: String,
        source_count: usize,
        target_count: usize,
    },
    #[error("sample {id}: instance {index} is {source_concept} in the source but {target_concept} in the target")]
    ConceptMismatch {
        id: String,
        index: usize,
        source_concept: String,
        target_concept: String,
    },
    #[error("sample {id}: target span {span:?} is not in the target sentence")]
    Unfaithful { id: String, span: String },
    #[error("sample {id}: {err}")]
    Codegen { id: String, err: CodegenError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directions {
    /// Source language to target language only.
    One,
    /// Both ways.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub source: Sample,
    pub target: Sample,
    pub direction: LangPair,
}

impl AlignedPair {
    pub fn new(source: Sample, target: Sample) -> Self {
        let direction = LangPair::new(source.language.clone(), target.language.clone());
        Self {
            source,
            target,
            direction,
        }
    }

    pub fn reversed(&self) -> Self {
        Self {
            source: self.target.clone(),
            target: self.source.clone(),
            direction: self.direction.reversed(),
        }
    }

    /// Equal instance counts, matching concepts by position, and every
    /// target span present in the target sentence.
    pub fn check(&self) -> Result<(), AlignError> {
        let id = || self.source.id.clone();
        if self.source.instances.len() != self.target.instances.len() {
            return Err(AlignError::CountMismatch {
                id: id(),
                source_count: self.source.instances.len(),
                target_count: self.target.instances.len(),
            });
        }
        for (index, (s, t)) in self
            .source
            .instances
            .iter()
            .zip(&self.target.instances)
            .enumerate()
        {
            if s.concept != t.concept {
                return Err(AlignError::ConceptMismatch {
                    id: id(),
                    index,
                    source_concept: s.concept.clone(),
                    target_concept: t.concept.clone(),
                });
            }
        }
        if let Some(span) = self
            .target
            .spans()
            .into_iter()
            .find(|s| !self.target.sentence.contains(s.text.as_str()))
        {
            return Err(AlignError::Unfaithful {
                id: id(),
                span: span.text.clone(),
            });
        }
        Ok(())
    }
}

/// Renders one alignment sample. Each side uses its own language's ontology
/// so class comments come out in that language.
pub fn build_alignment_sample(
    pair: &AlignedPair,
    source_ontology: &Ontology,
    target_ontology: &Ontology,
    with_comments: bool,
) -> Result<PromptPair, AlignError> {
    pair.check()?;
    let codegen = |sample: &Sample, ontology: &Ontology| {
        build_training_pair(ontology, sample, with_comments).map_err(|err| AlignError::Codegen {
            id: sample.id.clone(),
            err,
        })
    };
    let src = codegen(&pair.source, source_ontology)?;
    let tgt = codegen(&pair.target, target_ontology)?;
    let instruction = format!(
        "{ALIGNMENT_TASK}\n\n# {}\n{}{}\n\n# {}\n{}",
        language_name(&pair.direction.src),
        src.instruction,
        src.completion,
        language_name(&pair.direction.tgt),
        tgt.instruction,
    );
    Ok(PromptPair {
        instruction,
        completion: tgt.completion,
        meta: PromptMeta {
            dataset: target_ontology.dataset.clone(),
            language: format!("{}-{}", pair.direction.src, pair.direction.tgt),
            task: target_ontology.task,
            sample_id: pair.source.id.clone(),
        },
    })
}

/// Keeps `ok` records with a target and emits one pair per direction.
pub fn assemble_parallel_dataset(
    records: &[ProjectionRecord],
    directions: Directions,
) -> Vec<AlignedPair> {
    let per_record = match directions {
        Directions::One => 1,
        Directions::Both => 2,
    };
    let mut out = Vec::with_capacity(records.len() * per_record);
    for rec in records {
        let Some(target) = rec.target.as_ref().filter(|_| rec.status == Status::Ok) else {
            continue;
        };
        let pair = AlignedPair::new(rec.source.clone(), target.clone());
        if directions == Directions::Both {
            let back = pair.reversed();
            out.push(pair);
            out.push(back);
        } else {
            out.push(pair);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{BaseKind, Concept, TaskKind};
    use crate::parser::parse_completion;
    use crate::sample::{ExtractionInstance, Span};

    fn ner(lang: &str) -> Ontology {
        Ontology::new(
            TaskKind::Ner,
            lang,
            vec![
                Concept::new("PER", BaseKind::Entity),
                Concept::new("ORG", BaseKind::Entity),
            ],
        )
        .unwrap()
    }

    fn steve() -> AlignedPair {
        AlignedPair::new(
            Sample::new("1", "en", "Steve left.")
                .with_instance(ExtractionInstance::entity("PER", Span::at("Steve", 0))),
            Sample::new("1", "zh", "史蒂夫离开了。")
                .with_instance(ExtractionInstance::entity("PER", Span::at("史蒂夫", 0))),
        )
    }

    fn record(id: &str, status: Status) -> ProjectionRecord {
        let p = steve();
        ProjectionRecord {
            source: Sample {
                id: id.into(),
                ..p.source
            },
            target: Some(p.target),
            stage_log: vec![],
            status,
        }
    }

    #[test]
    fn steve_pair() {
        let out = build_alignment_sample(&steve(), &ner("en"), &ner("zh"), false).unwrap();
        assert_eq!(out.completion, "results = [PER(\"史蒂夫\")]");
        assert!(out.instruction.contains("results = [PER(\"Steve\")]"));
        assert!(out.instruction.contains("sentence = \"史蒂夫离开了。\""));
        assert!(!out.instruction.contains("史蒂夫\")"));
        assert_eq!(out.instruction.matches("class PER(Entity):").count(), 2);
        assert_eq!(out.meta.language, "en-zh");
        let back = parse_completion(&out.completion, &ner("zh"), "史蒂夫离开了。");
        assert_eq!(back.instances, steve().target.instances);
    }

    #[test]
    fn empty_pair() {
        let pair = AlignedPair::new(
            Sample::new("e", "en", "Nothing."),
            Sample::new("e", "zh", "无。"),
        );
        let out = build_alignment_sample(&pair, &ner("en"), &ner("zh"), true).unwrap();
        assert_eq!(out.completion, "results = []");
    }

    #[test]
    fn invariant_violations() {
        let mut p = steve();
        p.target.instances.clear();
        assert!(matches!(p.check(), Err(AlignError::CountMismatch { .. })));
        let mut p = steve();
        p.target.instances[0].concept = "ORG".into();
        assert!(matches!(
            p.check(),
            Err(AlignError::ConceptMismatch { index: 0, .. })
        ));
        let mut p = steve();
        p.target.sentence = "他离开了。".into();
        assert_eq!(
            p.check(),
            Err(AlignError::Unfaithful {
                id: "1".into(),
                span: "史蒂夫".into()
            })
        );
    }

    #[test]
    fn assemble_counts() {
        let recs = vec![
            record("a", Status::Ok),
            record("b", Status::Ok),
            record("c", Status::NeedsReview),
            record("d", Status::Ok),
        ];
        let both = assemble_parallel_dataset(&recs, Directions::Both);
        assert_eq!(both.len(), 6);
        assert_eq!(both[1].direction, LangPair::new("zh", "en"));
        assert_eq!(both[1].source.sentence, "史蒂夫离开了。");
        assert_eq!(assemble_parallel_dataset(&recs, Directions::One).len(), 3);
    }
}
