//! Score parsed predictions against gold with span-offset micro-F1.
//!
//!     cargo run --example evaluate

use std::path::Path;

use codeie::metrics::{score_ner, score_re};
use codeie::parser::{anchor_instances, parse_completion};
use codeie::sample::{SlotValue, Span};
use codeie::{jsonl, ExtractionInstance, Ontology, Sample};
use serde::Deserialize;

#[derive(Deserialize)]
struct Row {
    id: String,
    sentence: String,
    completion: String,
}

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let ontology = Ontology::load_file(&data.join("ner_en.toml"))?;
    let mut gold: Vec<Sample> = jsonl::read(&data.join("ner_en.jsonl"))?;
    for g in &mut gold {
        let sentence = g.sentence.clone();
        anchor_instances(&mut g.instances, &sentence);
    }
    let rows: Vec<Row> = jsonl::read(&data.join("completions_en.jsonl"))?;
    let pred: Vec<Sample> = rows
        .into_iter()
        .map(|r| {
            let report = parse_completion(&r.completion, &ontology, &r.sentence);
            let mut s = Sample::new(r.id, "en", r.sentence);
            s.instances = report.instances;
            s
        })
        .collect();
    println!("NER\n{}\n", score_ner(&pred, &gold)?);

    // Relations match on type plus both argument spans and their types.
    let sentence = "Steve Jobs founded Apple in Cupertino.";
    let per = ExtractionInstance::entity("PER", Span::at("Steve Jobs", 0));
    let org = ExtractionInstance::entity("ORG", Span::at("Apple", 19));
    let loc = ExtractionInstance::entity("LOC", Span::at("Cupertino", 28));
    let rel = |c: &str, s: &ExtractionInstance, o: &ExtractionInstance| {
        ExtractionInstance::new(c)
            .with("subject", SlotValue::Instance(Box::new(s.clone())))
            .with("object", SlotValue::Instance(Box::new(o.clone())))
    };
    let gold = vec![Sample::new("r1", "en", sentence)
        .with_instance(rel("founded", &per, &org))
        .with_instance(rel("located_in", &org, &loc))];
    let pred = vec![Sample::new("r1", "en", sentence)
        .with_instance(rel("founded", &per, &org))
        .with_instance(rel("located_in", &org, &loc))
        .with_instance(rel("located_in", &per, &loc))];
    println!("RE\n{}", score_re(&pred, &gold)?);
    Ok(())
}
