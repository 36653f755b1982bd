//! Parse raw model completions back into typed, offset-anchored instances.
//!
//!     cargo run --example parse_completions

use std::path::Path;

use codeie::parser::parse_completion;
use codeie::{jsonl, Ontology};
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
    let rows: Vec<Row> = jsonl::read(&data.join("completions_en.jsonl"))?;

    for row in rows {
        let report = parse_completion(&row.completion, &ontology, &row.sentence);
        println!("{}  {}", row.id, row.sentence);
        for inst in &report.instances {
            let span = inst.head_span().expect("entities have a name");
            println!(
                "    {:<4} {:<22} start={:?}",
                inst.concept, span.text, span.start
            );
        }
        for d in &report.dropped {
            println!("    dropped {} ({:?})", d.raw, d.reason);
        }
        if let Some(fatal) = &report.fatal {
            println!("    fatal: {fatal}");
        }
    }

    // Offsets are in characters, so CJK text anchors the same way.
    let zh = Ontology::load_file(&data.join("ner_zh.toml"))?;
    let report = parse_completion(
        r#"results = [人物("史蒂夫"), 组织("苹果")]"#,
        &zh,
        "史蒂夫创立了苹果。",
    );
    for inst in &report.instances {
        let span = inst.head_span().unwrap();
        println!("zh  {} {} start={:?}", inst.concept, span.text, span.start);
    }
    Ok(())
}
