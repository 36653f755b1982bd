//! Project English NER spans into Chinese with the staged translation
//! pipeline. Runs against a scripted mock by default; pass `--live` to use
//! the endpoint configured by `CODEIE_API_KEY` / `CODEIE_BASE_URL`.
//!
//!     cargo run --example project_labels [-- --live]

use std::sync::Arc;

use codeie::llm::{ChatClient, ClientPolicy, HttpClient, MockClient, RetryingClient};
use codeie::projection::{LangPair, ProjectionPolicy, Projector};
use codeie::sample::Span;
use codeie::{ExtractionInstance, Sample};

fn corpus() -> Vec<Sample> {
    vec![
        Sample::new("p1", "en", "Steve Jobs founded Apple.")
            .with_instance(ExtractionInstance::entity("PER", Span::at("Steve Jobs", 0)))
            .with_instance(ExtractionInstance::entity("ORG", Span::at("Apple", 19))),
        Sample::new(
            "p2",
            "en",
            "Siemens invested 800 million US dollars to complete the electric power plant project.",
        )
        .with_instance(ExtractionInstance::entity("ORG", Span::at("Siemens", 0)))
        .with_instance(ExtractionInstance::entity("LOC", Span::at("US", 29))),
    ]
}

/// Replies in request order: the second joint translation returns "美国",
/// which is not in its sentence, so a span rephrase follows.
fn scripted() -> MockClient {
    MockClient::from_transcript(vec![
        Ok("[Chinese]\n\"sentence\": \"史蒂夫·乔布斯创立了苹果。\"\n\"spans\": [\"史蒂夫·乔布斯\", \"苹果\"]".into()),
        Ok("[Chinese]\n\"sentence\": \"西门子投资了8亿美元完成了电力厂项目。\"\n\"spans\": [\"西门子\", \"美国\"]".into()),
        Ok("[\"美\"]".into()),
    ])
}

fn main() -> anyhow::Result<()> {
    let live = std::env::args().any(|a| a == "--live");
    let client: Arc<dyn ChatClient> = if live {
        Arc::new(RetryingClient::new(
            HttpClient::from_env()?,
            ClientPolicy::default(),
        ))
    } else {
        Arc::new(scripted())
    };
    let policy = ProjectionPolicy {
        concurrency: if live { 4 } else { 1 },
        ..ProjectionPolicy::default()
    };
    let projector = Projector::new(client, &LangPair::new("en", "zh"), policy);

    println!(
        "first prompt:\n{}\n",
        projector.dry_run_prompt(&corpus()[0])
    );

    let out = projector.project_corpus(&corpus(), None)?;
    for rec in &out.records {
        println!("{} [{:?}]", rec.source.id, rec.status);
        for entry in &rec.stage_log {
            println!(
                "    {:?} via {}: {}",
                entry.stage, entry.model, entry.outcome
            );
        }
        if let Some(t) = &rec.target {
            println!("    {}", t.sentence);
            for s in t.spans() {
                println!("      {} @ {:?}", s.text, s.start);
            }
        }
    }
    println!("\nfaithfulness: {:?}", out.faithfulness);
    Ok(())
}
