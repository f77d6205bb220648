//! Disk-backed embedding cache: first run computes, second run reads, and a
//! flipped byte is caught by the checksum.

use std::sync::Arc;

use goaltm::providers::{embed_tokens, CachedEmbedder, EmbeddingCache, HashEmbedder};

fn main() -> goaltm::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| goaltm::Error::Cache(e.to_string()))?;
    let path = dir.path().join("embeddings.cache");
    let tokens: Vec<String> = ["battery", "range", "charging"].iter().map(|s| s.to_string()).collect();
    let inner = Arc::new(HashEmbedder::new(16, 5)?);

    let cache = Arc::new(EmbeddingCache::open(&path, 16)?);
    let embedder = CachedEmbedder::new(inner.clone(), cache.clone())?;
    let first = embed_tokens(&embedder, &tokens)?;
    cache.save()?;
    println!("stored {} entries in {} bytes", cache.len(), std::fs::metadata(&path).unwrap().len());

    let reopened = Arc::new(EmbeddingCache::open(&path, 16)?);
    let again = embed_tokens(&CachedEmbedder::new(inner, reopened)?, &tokens)?;
    println!("reloaded embeddings identical: {}", first == again);

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    match EmbeddingCache::open(&path, 16) {
        Err(e) => println!("corrupted file rejected: {e}"),
        Ok(_) => println!("corrupted file was accepted"),
    }
    Ok(())
}
