use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BankError, DrillBank, DrillBankEntry, Provenance};
use crate::corpus::QueryGroup;

pub const BANK_FORMAT: &str = "sqldrill-bank";
pub const BANK_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    group: QueryGroup,
    embedding_dimension: usize,
    entry_count: usize,
    provenance: Provenance,
}

/// `<dir>/<group>.jsonl`.
pub fn bank_file_name(dir: &Path, group: QueryGroup) -> PathBuf {
    dir.join(format!("{}.jsonl", group.as_str()))
}

/// Writes a header line then one entry per line, via a temporary file that
/// is renamed into place.
pub fn persist_bank(bank: &DrillBank, path: &Path) -> Result<(), BankError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        let header = Header {
            format: BANK_FORMAT.into(),
            version: BANK_VERSION,
            group: bank.group,
            embedding_dimension: bank.embedding_dimension,
            entry_count: bank.entries.len(),
            provenance: bank.provenance.clone(),
        };
        serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        for entry in &bank.entries {
            serde_json::to_writer(&mut w, entry).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_bank(path: &Path) -> Result<DrillBank, BankError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines.next().transpose()?.ok_or(BankError::Corrupt {
        line: 1,
        reason: "empty file".into(),
    })?;
    let raw: serde_json::Value = serde_json::from_str(&first).map_err(|e| BankError::Corrupt {
        line: 1,
        reason: e.to_string(),
    })?;
    let found = format!(
        "{}/{}",
        raw["format"].as_str().unwrap_or("?"),
        raw["version"].as_u64().map_or("?".to_string(), |v| v.to_string())
    );
    let expected = format!("{BANK_FORMAT}/{BANK_VERSION}");
    if found != expected {
        return Err(BankError::SchemaVersionMismatch { found, expected });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| BankError::Corrupt {
        line: 1,
        reason: e.to_string(),
    })?;

    let mut entries = Vec::with_capacity(header.entry_count);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: DrillBankEntry = serde_json::from_str(&line).map_err(|e| BankError::Corrupt {
            line: line_no,
            reason: e.to_string(),
        })?;
        if entry.group != header.group || entry.embedding.dimension() != header.embedding_dimension {
            return Err(BankError::Corrupt {
                line: line_no,
                reason: format!("entry {} does not match the bank header", entry.example_id),
            });
        }
        entries.push(entry);
    }
    if entries.len() != header.entry_count {
        return Err(BankError::Corrupt {
            line: entries.len() + 1,
            reason: format!("header promises {} entries, found {}", header.entry_count, entries.len()),
        });
    }
    let mut ids: Vec<&str> = entries.iter().map(|e| e.example_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(BankError::Corrupt {
            line: 0,
            reason: format!("duplicate entry {}", w[0]),
        });
    }
    Ok(DrillBank {
        group: header.group,
        entries,
        embedding_dimension: header.embedding_dimension,
        provenance: header.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{mock_embedding, EmbeddingVector};

    fn bank(group: QueryGroup) -> DrillBank {
        let entries = (0..3)
            .map(|i| DrillBankEntry {
                example_id: format!("e{i}"),
                group,
                db_id: "d".into(),
                question: format!("question {i}"),
                schema_text: "Table t, columns = [*,a]\n## Foreign_keys:\n[]".into(),
                reasoning: "<1> step".into(),
                sql: "SELECT a FROM t".into(),
                embedding: EmbeddingVector::new(mock_embedding(&format!("q{i}"), 8)),
            })
            .collect();
        DrillBank {
            group,
            entries,
            embedding_dimension: 8,
            provenance: Provenance {
                corpus_digest: "abc".into(),
                model: "m".into(),
                built_at: "2024-01-01T00:00:00Z".into(),
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let b = bank(QueryGroup::Filtering);
        let path = bank_file_name(dir.path(), b.group);
        persist_bank(&b, &path).unwrap();
        assert_eq!(load_bank(&path).unwrap(), b);
    }

    #[test]
    fn distinct_files_per_group() {
        let dir = tempfile::tempdir().unwrap();
        for g in [QueryGroup::Filtering, QueryGroup::Simple] {
            persist_bank(&bank(g), &bank_file_name(dir.path(), g)).unwrap();
        }
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
        assert_eq!(load_bank(&bank_file_name(dir.path(), QueryGroup::Simple)).unwrap().group, QueryGroup::Simple);
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.jsonl");
        persist_bank(&bank(QueryGroup::Simple), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        // drop the last line entirely
        let cut: Vec<&str> = text.lines().collect();
        fs::write(&path, cut[..cut.len() - 1].join("\n")).unwrap();
        assert!(matches!(load_bank(&path), Err(BankError::Corrupt { .. })));
        // cut mid-record
        fs::write(&path, &text[..text.len() - 20]).unwrap();
        assert!(matches!(load_bank(&path), Err(BankError::Corrupt { .. })));
    }

    #[test]
    fn foreign_header_is_a_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.jsonl");
        fs::write(&path, "{\"format\":\"sqldrill-bank\",\"version\":9}\n").unwrap();
        assert!(matches!(load_bank(&path), Err(BankError::SchemaVersionMismatch { .. })));
        fs::write(&path, "{\"something\":\"else\"}\n").unwrap();
        assert!(matches!(load_bank(&path), Err(BankError::SchemaVersionMismatch { .. })));
    }
}
