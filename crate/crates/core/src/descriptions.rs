//! Concept descriptions written by an LLM in two phases: a first draft from
//! a handful of sampled instances, then one revision pass per further
//! instance.
//!
//! Sampling is a seeded permutation of the concept's instance occurrences,
//! recomputed identically by both phases: the draft uses its head and the
//! revision pass takes the items after it, so the two sets never overlap
//! unless the corpus is too small (then revision reuses the whole pool).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatClient, ChatRequest, LlmError};
use crate::ontology::{instance_text, visit_instances, Concept, Ontology};
use crate::projection::templates::format_span_list;
use crate::sample::Sample;

pub const INIT_SAMPLE_SIZE: usize = 10;
pub const POLISH_SAMPLE_SIZE: usize = 20;

const INIT_TEMPLATE: &str = r#"# Writing Entity Descriptions

## Introduction
This guide provides a step-by-step process for writing a clear, concise, and accurate description of an entity type based on a provided list of examples. The objective is to generalize the shared characteristics of the examples without referencing any specific instance, giving a broad and comprehensive understanding of the entity type.

## Prerequisites
Before you begin, make sure you have the following:
- **Entity Type**: The name of the entity type that requires a description.
- **Entity List**: A set of examples representing this entity type.
- **Basic Description**: While not mandatory, familiarity with the general concept of the entity type could be beneficial.

## Step-by-Step Instructions
### Step 1: Begin with the Required Phrase
Each description should start with:
**"[Entity Type] refers to"**
This ensures consistency across all descriptions. Replace **[Entity Type]** with the actual type name.

### Step 2: Generalize the Shared Characteristics
- Review the **Entity List** to identify common traits among all examples.
- Avoid referring to specific examples directly. Generalize to cover the entire group.
- Example: If the list includes various vehicles (cars, trucks), the description should focus on common traits such as modes of transportation designed for movement.

### Step 3: Provide Comprehensive Coverage
- The description should encapsulate all critical aspects represented in the example list, accounting for any outliers or unusual cases.
    - Example: If the list includes motorized vehicles and non-motorized bicycles, ensure the description covers both.

### Step 4: Output the Description
- After completing the description, present it without referencing explicit examples. It should summarize the entity type in a single, generalized statement.
- If you want to revise the description, output the modified description in the format.

## Conclusion
By following these steps, you will create an accurate, clear, and generalized description of an entity type. Start with the required phrase, focus on generalization, and keep the language simple yet precise.

## Input
Entity Type: {entity_type}
Entity Example List: {entity_example_list}

## Example Template for Output
Entity Type: {entity_type}
Entity Example List: {entity_example_list}
Entity Type Description: "{entity_type} refers to..."(in the language of the Entity list)
"#;

const POLISH_TEMPLATE: &str = r#"# Evaluating and Revising Entity Description

## Introduction
This guide provides a systematic approach to evaluate whether a given description accurately represents the characteristics of an entity type. If the description is accurate and complete, no revision is necessary. However, if inaccuracies or omissions exist, revisions are required to ensure clarity and consistency in classifying entities.

## Step-by-Step Instructions
### Step 1: Analyze the Entity Type Description
- Carefully review the **entity type description** provided.
- Example: For the entity type "Animal," the description may include "living organisms that move, breathe, and consume organic matter."

### Step 2: Analyze the Entity
- Review the specific entity's characteristics, noting its unique features.
- Example: If the entity is "dog," note traits like "mammal, four-legged, domesticated, etc."

### Step 3: Evaluate the Description's Accuracy and Completeness
- Compare the entity type description with the entity's characteristics.
    - Does the description fully encompass the defining features of the entity?
    - Are any characteristics missing or misrepresented?
- Check for completeness:
    - Does the description cover all essential traits necessary for classification?
- Verify accuracy:
    - Are the described attributes factually correct?

### Step 4: Revise the Description (if necessary)
- If the description is incomplete or inaccurate, revise it to reflect the entity's correct characteristics.
- Ensure the revised description is clear, precise, and free from ambiguities.

## Conclusion
Following these steps will ensure each entity's description is both accurate and comprehensive. This process maintains clarity and consistency in classifying entities under their respective types.

## Input
Entity Type: {entity_type}
Entity Example List: {entity_example_list}
Entity Type Description: {current_description}

## Example Template for Output
Entity Type: {entity_type}
Entity Example List: {entity_example_list}
Entity Type Description: "{entity_type} refers to..."(in the language of the Entity list)
"#;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DescriptionError {
    #[error("concept `{0}` has no instances in the corpus")]
    NoInstances(String),
    #[error(
        "reply for `{concept}` never started with \"{concept} refers to\" (last reply: {reply:?})"
    )]
    MissingPhrase { concept: String, reply: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    pub instance: String,
    pub changed: bool,
    pub text: String,
    /// Set when the call failed or the reply was rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionDraft {
    pub concept: String,
    /// Name the description opens with.
    pub type_name: String,
    pub text: String,
    pub history: Vec<Revision>,
}

/// Settings shared by both phases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptionConfig {
    pub model: String,
    pub seed: u64,
    pub init_size: usize,
    pub polish_size: usize,
}

impl Default for DescriptionConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4o-mini".into(),
            seed: 0,
            init_size: INIT_SAMPLE_SIZE,
            polish_size: POLISH_SAMPLE_SIZE,
        }
    }
}

/// Single pass, so placeholder-like text inside values is left alone.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let re = regex::Regex::new(r"\{([a-z_]+)\}").expect("static regex");
    re.replace_all(template, |caps: &regex::Captures| {
        let key = &caps[1];
        vars.iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.to_string())
            .unwrap_or_else(|| caps[0].to_string())
    })
    .into_owned()
}

pub fn init_prompt(type_name: &str, instances: &[String]) -> String {
    fill(
        INIT_TEMPLATE,
        &[
            ("entity_type", type_name),
            (
                "entity_example_list",
                &format!("[{}]", format_span_list(instances)),
            ),
        ],
    )
}

pub fn polish_prompt(type_name: &str, instance: &str, current: &str) -> String {
    fill(
        POLISH_TEMPLATE,
        &[
            ("entity_type", type_name),
            (
                "entity_example_list",
                &format!("[{}]", format_span_list(&[instance])),
            ),
            ("current_description", &format!("\"{current}\"")),
        ],
    )
}

/// Pulls the `"<type> refers to ..."` sentence out of a reply. The last
/// qualifying line wins, so an echoed prompt does not shadow the answer;
/// the template placeholder itself is never accepted.
pub fn extract_description(reply: &str, type_name: &str) -> Option<String> {
    let phrase = format!("{type_name} refers to");
    reply.lines().rev().find_map(|line| {
        let at = line.find(&phrase)?;
        let mut text = line[at..].trim_end();
        if let Some(cut) = text.find("\"(") {
            text = &text[..cut];
        }
        let text = text.trim_end_matches(['"', '”', '*', '`']).trim_end();
        let rest = text[phrase.len()..].trim();
        if rest.is_empty() || rest.trim_matches('.').is_empty() {
            return None;
        }
        Some(text.to_string())
    })
}

/// Every occurrence of the concept (including nested ones), in corpus order.
pub fn instance_pool(concept: &Concept, corpus: &[Sample]) -> Vec<String> {
    let mut pool = Vec::new();
    for sample in corpus {
        for top in &sample.instances {
            visit_instances(top, &mut |inst| {
                if inst.concept == concept.canonical_id {
                    pool.push(instance_text(inst));
                }
            });
        }
    }
    pool
}

fn permutation(pool_len: usize, seed: u64, concept_id: &str) -> Vec<usize> {
    // fold the id into the seed so concepts draw independently
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in concept_id.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
    }
    let mut idx: Vec<usize> = (0..pool_len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(h));
    idx
}

/// Instances for the first draft and for the revision pass.
pub fn sample_plan(
    concept: &Concept,
    corpus: &[Sample],
    cfg: &DescriptionConfig,
) -> (Vec<String>, Vec<String>) {
    let pool = instance_pool(concept, corpus);
    let order = permutation(pool.len(), cfg.seed, &concept.canonical_id);
    let split = cfg.init_size.min(order.len());
    let init = order[..split].iter().map(|&i| pool[i].clone()).collect();
    let rest = &order[split..];
    let polish_from = if rest.is_empty() { &order[..] } else { rest };
    let polish = polish_from
        .iter()
        .take(cfg.polish_size)
        .map(|&i| pool[i].clone())
        .collect();
    (init, polish)
}

fn type_name(concept: &Concept, corpus: &[Sample]) -> String {
    let lang = corpus.first().map(|s| s.language.as_str()).unwrap_or("en");
    concept.display_name(lang).to_string()
}

fn ask<C: ChatClient>(client: &C, model: &str, prompt: String) -> Result<String, LlmError> {
    client
        .complete(&ChatRequest::new(model, prompt))
        .map(|r| r.content)
}

pub fn init_description<C: ChatClient>(
    concept: &Concept,
    corpus: &[Sample],
    client: &C,
    cfg: &DescriptionConfig,
) -> Result<DescriptionDraft, DescriptionError> {
    let (init, _) = sample_plan(concept, corpus, cfg);
    if init.is_empty() {
        return Err(DescriptionError::NoInstances(concept.canonical_id.clone()));
    }
    let name = type_name(concept, corpus);
    let prompt = init_prompt(&name, &init);
    let mut last = String::new();
    for attempt in 0..2 {
        last = ask(client, &cfg.model, prompt.clone())?;
        if let Some(text) = extract_description(&last, &name) {
            return Ok(DescriptionDraft {
                concept: concept.canonical_id.clone(),
                type_name: name,
                text,
                history: Vec::new(),
            });
        }
        log::debug!(
            "{}: attempt {} lacked the required phrase",
            concept.canonical_id,
            attempt + 1
        );
    }
    Err(DescriptionError::MissingPhrase {
        concept: name,
        reply: last,
    })
}

/// One call per sampled instance; failures are recorded and skipped.
pub fn polish_description<C: ChatClient>(
    draft: DescriptionDraft,
    concept: &Concept,
    corpus: &[Sample],
    client: &C,
    cfg: &DescriptionConfig,
) -> DescriptionDraft {
    let (_, polish) = sample_plan(concept, corpus, cfg);
    let mut draft = draft;
    for instance in polish {
        let prompt = polish_prompt(&draft.type_name, &instance, &draft.text);
        let (changed, note) = match ask(client, &cfg.model, prompt) {
            Ok(reply) => match extract_description(&reply, &draft.type_name) {
                Some(text) if text != draft.text => {
                    draft.text = text;
                    (true, None)
                }
                Some(_) => (false, None),
                None => (false, Some("reply lacked the required phrase".to_string())),
            },
            Err(e) => {
                log::warn!(
                    "{}: polish call for {instance:?} failed: {e}",
                    draft.concept
                );
                (false, Some(e.to_string()))
            }
        };
        draft.history.push(Revision {
            instance,
            changed,
            text: draft.text.clone(),
            note,
        });
    }
    draft
}

pub fn generate_description<C: ChatClient>(
    concept: &Concept,
    corpus: &[Sample],
    client: &C,
    cfg: &DescriptionConfig,
) -> Result<DescriptionDraft, DescriptionError> {
    let draft = init_description(concept, corpus, client, cfg)?;
    Ok(polish_description(draft, concept, corpus, client, cfg))
}

/// Runs both phases for every concept with instances, concepts in parallel.
/// Results come back in ontology order; concepts without instances are
/// reported as `NoInstances`.
pub fn generate_all<C: ChatClient + Sync>(
    ontology: &Ontology,
    corpus: &[Sample],
    client: &C,
    cfg: &DescriptionConfig,
    concurrency: usize,
) -> Vec<(String, Result<DescriptionDraft, DescriptionError>)> {
    let concepts: Vec<&Concept> = ontology.concepts().iter().collect();
    let results: Vec<std::sync::Mutex<Option<Result<DescriptionDraft, DescriptionError>>>> =
        concepts
            .iter()
            .map(|_| std::sync::Mutex::new(None))
            .collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..concurrency.max(1).min(concepts.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some(concept) = concepts.get(i) else {
                    break;
                };
                let r = generate_description(concept, corpus, client, cfg);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    concepts
        .iter()
        .zip(results)
        .map(|(c, r)| {
            (
                c.canonical_id.clone(),
                r.into_inner().unwrap().expect("filled"),
            )
        })
        .collect()
}
