//! Regenerates the bundled planted fixture corpus.
//!
//! ```text
//! cargo run --example make_planted_fixture -- crates/core/fixtures/planted
//! ```

use goaltm::synthetic::{planted_corpus, PlantedConfig};

fn main() -> goaltm::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/planted").to_owned());
    let bundle = planted_corpus(&PlantedConfig::default())?;
    bundle.write_to(&dir)?;
    for (name, _) in bundle.files() {
        println!("{dir}/{name}");
    }
    Ok(())
}
