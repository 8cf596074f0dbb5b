//! Caption embeddings: an embeddings file, and the HTTP bridge when
//! `FIVEDOLLAR_BRIDGE_URL` points at one.

use fivedollar::embeddings::{BridgeClient, EmbeddingsFile, Resolver};
use fivedollar::fixtures::hash_embed;

fn main() -> fivedollar::Result<()> {
    let mut file = EmbeddingsFile::new("hash-demo");
    for text in ["grass with river", "lava with walls"] {
        file.insert(text, hash_embed(text))?;
    }
    let path = std::env::temp_dir().join("fivedollar-embeddings-demo.json");
    file.save(&path)?;
    let file = EmbeddingsFile::load(&path)?;
    println!("{} vectors from model {:?}", file.len(), file.model());

    let resolver = Resolver::new(Some(file), BridgeClient::from_env());
    let v = resolver.resolve("grass with river")?;
    println!("file hit: {} dims, first {:.4}", v.len(), v[0]);
    match resolver.resolve("an unseen prompt") {
        Ok(v) => println!("bridge answered with {} dims", v.len()),
        Err(e) => println!("unresolved: {e}"),
    }
    Ok(())
}
