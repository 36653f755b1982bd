//! Turn an annotated NER corpus into instruction/completion pairs.
//!
//!     cargo run --example build_instructions

use std::path::Path;

use codeie::codegen::build_training_pair;
use codeie::ontology::{sample_examples, DEFAULT_EXAMPLE_CAP};
use codeie::{jsonl, Ontology, Sample};

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let mut ontology = Ontology::load_file(&data.join("ner_en.toml"))?;
    let corpus: Vec<Sample> = jsonl::read(&data.join("ner_en.jsonl"))?;

    // LOC ships without examples; borrow some from the corpus.
    let loc = ontology.concept("LOC").expect("LOC is defined").clone();
    ontology.set_examples("LOC", sample_examples(&corpus, &loc, DEFAULT_EXAMPLE_CAP));

    for sample in &corpus {
        let pair = build_training_pair(&ontology, sample, true)?;
        if sample.id == corpus[0].id {
            println!("{}{}\n", pair.instruction, pair.completion);
        } else {
            println!("{}: {}", sample.id, pair.completion);
        }
    }
    Ok(())
}
