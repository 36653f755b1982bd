//! Print an ontology as Python-style class definitions, then the full
//! instruction for one sentence.
//!
//!     cargo run --example render_schema [path/to/ontology.toml]

use std::path::PathBuf;

use codeie::codegen::{render_instruction, render_schema};
use codeie::Ontology;

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data/re_en.toml")
        });
    let ontology = Ontology::load_file(&path)?;

    println!("{}", render_schema(&ontology, true));
    println!("----- without comments -----\n");
    println!("{}", render_schema(&ontology, false));
    println!("----- instruction -----\n");
    println!(
        "{}",
        render_instruction(&ontology, "Apple was founded by Steve Jobs.", true)
    );
    Ok(())
}
