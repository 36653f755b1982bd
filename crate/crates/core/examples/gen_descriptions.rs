//! Draft and refine concept descriptions from corpus instances. Uses a
//! canned mock by default; pass `--live` for a real endpoint.
//!
//!     cargo run --example gen_descriptions [-- --live]

use std::path::Path;
use std::sync::Arc;

use codeie::descriptions::{generate_all, DescriptionConfig};
use codeie::llm::{ChatClient, ClientPolicy, HttpClient, MockClient, RetryingClient};
use codeie::{jsonl, Ontology, Sample};

fn canned() -> MockClient {
    MockClient::from_fn(|req| {
        let prompt = req.prompt();
        let ty = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Entity Type: "))
            .unwrap_or("Thing")
            .to_string();
        // Polish prompts quote the current draft.
        let polishing = prompt.contains("identified by their personal names");
        let body = match (ty.as_str(), polishing) {
            ("PER", false) => "people identified by their personal names.",
            ("PER", true) => {
                "individual people, historical or living, identified by their personal names."
            }
            ("ORG", _) => {
                "named organizations such as companies, institutions and international bodies."
            }
            ("LOC", _) => "named places such as cities, regions and countries.",
            _ => "things of this kind.",
        };
        Ok(format!(
            "Entity Type: {ty}\nEntity Type Description: \"{ty} refers to {body}\""
        ))
    })
}

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let mut ontology = Ontology::load_file(&data.join("ner_en.toml"))?;
    let corpus: Vec<Sample> = jsonl::read(&data.join("ner_en.jsonl"))?;

    let client: Arc<dyn ChatClient> = if std::env::args().any(|a| a == "--live") {
        Arc::new(RetryingClient::new(
            HttpClient::from_env()?,
            ClientPolicy::default(),
        ))
    } else {
        Arc::new(canned())
    };
    let cfg = DescriptionConfig::default();

    for (id, result) in generate_all(&ontology, &corpus, &client, &cfg, 2) {
        let draft = result?;
        println!("{id}: {}", draft.text);
        for rev in draft.history.iter().filter(|r| r.changed) {
            println!("    revised after {:?}", rev.instance);
        }
        ontology.set_description(&id, draft.text)?;
    }
    println!("\n{}", ontology.to_toml());
    Ok(())
}
