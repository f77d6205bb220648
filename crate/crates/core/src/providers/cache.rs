//! Persistent embedding cache.
//!
//! File layout (little-endian): magic `GTME`, version `u16`, dim `u32`,
//! record count `u32`, then per record: key length `u32`, UTF-8 key, row
//! count `u32`, rows of `f32`. A SHA-256 of everything before it closes the
//! file.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::Embedder;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: [u8; 4] = *b"GTME";
pub const CACHE_VERSION: u16 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug)]
pub struct EmbeddingCache {
    dim: usize,
    path: Option<PathBuf>,
    entries: RwLock<BTreeMap<String, Array2<f64>>>,
}

impl EmbeddingCache {
    pub fn in_memory(dim: usize) -> Self {
        EmbeddingCache {
            dim,
            path: None,
            entries: RwLock::new(BTreeMap::new()),
        }
    }

    /// Opens the cache at `path`, or starts an empty one if the file does not exist.
    pub fn open(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let entries = match std::fs::read(path) {
            Ok(bytes) => {
                let (file_dim, entries) = decode(&bytes)?;
                if file_dim != dim {
                    return Err(Error::Cache(format!(
                        "{} holds dimension {file_dim}, expected {dim}",
                        path.display()
                    )));
                }
                entries
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(Error::io(path, e)),
        };
        Ok(EmbeddingCache {
            dim,
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Array2<f64>> {
        self.read().get(key).cloned()
    }

    /// Stores `value` rounded to `f32`, which is what a reload would return.
    pub fn insert(&self, key: &str, value: &Array2<f64>) -> Result<Array2<f64>> {
        if value.ncols() != self.dim {
            return Err(Error::Cache(format!(
                "entry {key:?} has {} columns, cache dimension is {}",
                value.ncols(),
                self.dim
            )));
        }
        if value.iter().any(|x| !(*x as f32).is_finite()) {
            return Err(Error::NonFinite(format!("cache entry {key:?}")));
        }
        let stored = value.mapv(|x| x as f32 as f64);
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert(key.to_owned(), stored.clone());
        Ok(stored)
    }

    /// Returns the stored matrix for `key`, computing and storing it on a miss.
    pub fn get_or_compute(&self, key: &str, compute: impl FnOnce() -> Result<Array2<f64>>) -> Result<Array2<f64>> {
        if let Some(hit) = self.get(key) {
            return Ok(hit);
        }
        let value = compute()?;
        self.insert(key, &value)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let entries = self.read();
        let mut out = Vec::new();
        out.extend_from_slice(&CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (key, m) in entries.iter() {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
            for &x in m.iter() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (dim, entries) = decode(bytes)?;
        Ok(EmbeddingCache {
            dim,
            path: None,
            entries: RwLock::new(entries),
        })
    }

    /// Writes the cache back to the file it was opened from.
    pub fn save(&self) -> Result<()> {
        match &self.path {
            Some(p) => self.save_to(p),
            None => Ok(()),
        }
    }

    pub fn save_to(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, BTreeMap<String, Array2<f64>>> {
        self.entries.read().expect("cache lock poisoned")
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Cache("truncated cache file".into())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8]) -> Result<(usize, BTreeMap<String, Array2<f64>>)> {
    if bytes.len() < 4 || bytes[..4] != CACHE_MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    if bytes.len() < 14 + CHECKSUM_LEN {
        return Err(Error::Cache("truncated cache file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Cache("checksum mismatch (corrupt or truncated file)".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!("unsupported cache version {version}")));
    }
    let dim = r.u32()? as usize;
    let count = r.u32()?;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let klen = r.u32()? as usize;
        let key = std::str::from_utf8(r.take(klen)?)
            .map_err(|_| Error::Cache("cache key is not UTF-8".into()))?
            .to_owned();
        let rows = r.u32()? as usize;
        let raw = r.take(rows.checked_mul(dim).and_then(|n| n.checked_mul(4)).ok_or_else(|| {
            Error::Cache("record size overflows".into())
        })?)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let m = Array2::from_shape_vec((rows, dim), values).expect("shape checked by length");
        entries.insert(key, m);
    }
    if r.pos != body.len() {
        return Err(Error::Cache("trailing bytes after last record".into()));
    }
    Ok((dim, entries))
}

/// Wraps an embedder so every token sequence is looked up in, or added to, a cache.
#[derive(Clone)]
pub struct CachedEmbedder {
    inner: Arc<dyn Embedder>,
    cache: Arc<EmbeddingCache>,
}

impl CachedEmbedder {
    pub fn new(inner: Arc<dyn Embedder>, cache: Arc<EmbeddingCache>) -> Result<Self> {
        if inner.dim() != cache.dim() {
            return Err(Error::Cache(format!(
                "embedder dimension {} does not match cache dimension {}",
                inner.dim(),
                cache.dim()
            )));
        }
        Ok(CachedEmbedder { inner, cache })
    }

    pub fn cache(&self) -> &Arc<EmbeddingCache> {
        &self.cache
    }

    pub fn key(&self, tokens: &[String]) -> String {
        format!("{}\u{1f}{}", self.inner.id(), tokens.join(" "))
    }
}

impl Embedder for CachedEmbedder {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, tokens: &[String]) -> Result<Array2<f64>> {
        let key = self.key(tokens);
        self.cache.get_or_compute(&key, || self.inner.embed(tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::HashEmbedder;
    use ndarray::array;

    #[test]
    fn miss_then_hit_same_bits() {
        let cache = EmbeddingCache::in_memory(2);
        let v = array![[0.1, 0.7], [1.0 / 3.0, -2.0]];
        let first = cache.get_or_compute("k", || Ok(v.clone())).unwrap();
        let second = cache
            .get_or_compute("k", || panic!("should not recompute"))
            .unwrap();
        assert_eq!(first, second);
        let other = cache.get_or_compute("j", || Ok(array![[5.0, 6.0]])).unwrap();
        assert_eq!(other, array![[5.0, 6.0]]);
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn bytes_round_trip() {
        let cache = EmbeddingCache::in_memory(3);
        cache.insert("a", &array![[0.1, 0.2, 0.3]]).unwrap();
        cache.insert("b", &array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let bytes = cache.to_bytes();
        assert_eq!(&bytes[..4], b"GTME");
        let back = EmbeddingCache::from_bytes(&bytes).unwrap();
        assert_eq!(back.get("a"), cache.get("a"));
        assert_eq!(back.get("b"), cache.get("b"));
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_rejected() {
        let cache = EmbeddingCache::in_memory(2);
        cache.insert("a", &array![[0.5, 0.25]]).unwrap();
        let bytes = cache.to_bytes();
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(matches!(EmbeddingCache::from_bytes(&bytes[..cut]), Err(Error::Cache(_))));
        }
        let mut flipped = bytes.clone();
        flipped[20] ^= 0x40;
        assert!(matches!(EmbeddingCache::from_bytes(&flipped), Err(Error::Cache(_))));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(EmbeddingCache::from_bytes(&magic), Err(Error::Cache(_))));
    }

    #[test]
    fn file_round_trip_and_dim_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.cache");
        let cache = EmbeddingCache::open(&path, 4).unwrap();
        assert!(cache.is_empty());
        cache.insert("x", &array![[1.0, 0.0, 0.0, 0.5]]).unwrap();
        cache.save().unwrap();
        let back = EmbeddingCache::open(&path, 4).unwrap();
        assert_eq!(back.get("x"), cache.get("x"));
        assert!(matches!(EmbeddingCache::open(&path, 5), Err(Error::Cache(_))));
    }

    #[test]
    fn cached_embedder_matches_inner() {
        let inner: Arc<dyn Embedder> = Arc::new(HashEmbedder::new(6, 1).unwrap());
        let cache = Arc::new(EmbeddingCache::in_memory(6));
        let e = CachedEmbedder::new(inner.clone(), cache.clone()).unwrap();
        let toks: Vec<String> = vec!["aa".into(), "bb".into()];
        let a = e.embed(&toks).unwrap();
        assert_eq!(a, inner.embed(&toks).unwrap());
        assert_eq!(e.embed(&toks).unwrap(), a);
        assert_eq!(cache.len(), 1);
        let wrong = Arc::new(EmbeddingCache::in_memory(5));
        assert!(CachedEmbedder::new(inner, wrong).is_err());
    }
}
