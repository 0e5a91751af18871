//! Append-only response cache. One JSON record per line; an interrupted
//! write leaves a corrupt tail, which is truncated on open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use dashmap::DashMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedCompletion {
    pub text: String,
    pub prompt_tokens: usize,
    pub output_tokens: usize,
    pub latency: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Completion {
        key: String,
        model: String,
        prompt_chars: usize,
        completion: CachedCompletion,
    },
    Embedding {
        key: String,
        model: String,
        values: Vec<f64>,
    },
}

pub struct ResponseCache {
    path: PathBuf,
    writer: Mutex<File>,
    completions: DashMap<String, CachedCompletion>,
    embeddings: DashMap<String, Vec<f64>>,
    truncated_bytes: u64,
}

pub fn digest_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

impl ResponseCache {
    /// Opens (creating if needed) the cache file and loads every intact record.
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        let completions = DashMap::new();
        let embeddings = DashMap::new();
        let mut good_end = 0usize;
        let mut offset = 0usize;
        while offset < bytes.len() {
            let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
                break;
            };
            let line = &bytes[offset..offset + nl];
            match serde_json::from_slice::<Record>(line) {
                Ok(Record::Completion { key, completion, .. }) => {
                    completions.insert(key, completion);
                }
                Ok(Record::Embedding { key, values, .. }) => {
                    embeddings.insert(key, values);
                }
                Err(_) => break,
            }
            offset += nl + 1;
            good_end = offset;
        }
        let truncated_bytes = (bytes.len() - good_end) as u64;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(path)?;
        if truncated_bytes > 0 {
            tracing::warn!(path = %path.display(), truncated_bytes, "dropping corrupt cache tail");
            file.set_len(good_end as u64)?;
        }
        Ok(ResponseCache {
            path: path.to_path_buf(),
            writer: Mutex::new(file),
            completions,
            embeddings,
            truncated_bytes,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn truncated_bytes(&self) -> u64 {
        self.truncated_bytes
    }

    pub fn len(&self) -> usize {
        self.completions.len() + self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_completion(&self, key: &str) -> Option<CachedCompletion> {
        self.completions.get(key).map(|c| c.clone())
    }

    pub fn get_embedding(&self, key: &str) -> Option<Vec<f64>> {
        self.embeddings.get(key).map(|v| v.clone())
    }

    pub fn put_completion(
        &self,
        key: &str,
        model: &str,
        prompt_chars: usize,
        completion: &CachedCompletion,
    ) -> io::Result<()> {
        self.append(&Record::Completion {
            key: key.to_string(),
            model: model.to_string(),
            prompt_chars,
            completion: completion.clone(),
        })?;
        self.completions.insert(key.to_string(), completion.clone());
        Ok(())
    }

    pub fn put_embedding(&self, key: &str, model: &str, values: &[f64]) -> io::Result<()> {
        self.append(&Record::Embedding {
            key: key.to_string(),
            model: model.to_string(),
            values: values.to_vec(),
        })?;
        self.embeddings.insert(key.to_string(), values.to_vec());
        Ok(())
    }

    fn append(&self, record: &Record) -> io::Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = self.writer.lock();
        file.write_all(&line)?;
        file.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CachedCompletion {
        CachedCompletion {
            text: "SQL query: SELECT 1".into(),
            prompt_tokens: 3,
            output_tokens: 5,
            latency: 0.25,
        }
    }

    #[test]
    fn reopen_sees_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = ResponseCache::open(&path).unwrap();
            c.put_completion("k1", "m", 10, &sample()).unwrap();
            c.put_embedding("e1", "m", &[0.1, 1.0 / 3.0]).unwrap();
        }
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.get_completion("k1"), Some(sample()));
        assert_eq!(c.get_embedding("e1"), Some(vec![0.1, 1.0 / 3.0]));
        assert_eq!(c.truncated_bytes(), 0);
    }

    #[test]
    fn corrupt_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = ResponseCache::open(&path).unwrap();
            c.put_completion("k1", "m", 10, &sample()).unwrap();
        }
        let good_len = fs::metadata(&path).unwrap().len();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"kind":"completion","key":"k2","mo"#).unwrap();
        drop(f);

        let c = ResponseCache::open(&path).unwrap();
        assert!(c.truncated_bytes() > 0);
        assert_eq!(c.len(), 1);
        assert_eq!(fs::metadata(&path).unwrap().len(), good_len);
        c.put_completion("k3", "m", 1, &sample()).unwrap();
        drop(c);
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.truncated_bytes(), 0);
    }

    #[test]
    fn digest_separates_parts() {
        assert_ne!(digest_hex(&["ab", "c"]), digest_hex(&["a", "bc"]));
    }
}
