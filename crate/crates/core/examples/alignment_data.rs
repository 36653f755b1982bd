//! Build cross-lingual alignment samples from projection records.
//!
//!     cargo run --example alignment_data

use std::path::Path;

use codeie::aligndata::{assemble_parallel_dataset, build_alignment_sample, Directions};
use codeie::projection::{ProjectionRecord, Status};
use codeie::sample::Span;
use codeie::{ExtractionInstance, Ontology, Sample};

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let en = Ontology::load_file(&data.join("ner_en.toml"))?;
    let zh = Ontology::load_file(&data.join("ner_zh.toml"))?;

    let record = ProjectionRecord {
        source: Sample::new("a1", "en", "Steve Jobs founded Apple.")
            .with_instance(ExtractionInstance::entity("PER", Span::at("Steve Jobs", 0)))
            .with_instance(ExtractionInstance::entity("ORG", Span::at("Apple", 19))),
        target: Some(
            Sample::new("a1", "zh", "史蒂夫·乔布斯创立了苹果。")
                .with_instance(ExtractionInstance::entity(
                    "PER",
                    Span::at("史蒂夫·乔布斯", 0),
                ))
                .with_instance(ExtractionInstance::entity("ORG", Span::at("苹果", 10))),
        ),
        stage_log: vec![],
        status: Status::Ok,
    };

    let pairs = assemble_parallel_dataset(&[record], Directions::Both);
    println!("{} aligned pairs from 1 record\n", pairs.len());
    for pair in &pairs {
        let (src, tgt) = if pair.direction.src == "en" {
            (&en, &zh)
        } else {
            (&zh, &en)
        };
        let sample = build_alignment_sample(pair, src, tgt, false)?;
        println!(
            "===== {} =====\n{}{}\n",
            sample.meta.language, sample.instruction, sample.completion
        );
    }
    Ok(())
}
