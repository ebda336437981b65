//! Document store backing the portal: an in-memory map made durable by a
//! write-ahead log and a snapshot file. Compaction rewrites the snapshot
//! through a temporary file and truncates the log, so removed documents
//! are no longer present anywhere on disk.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical;

const SNAPSHOT: &str = "documents.json";
const WAL: &str = "documents.wal";
const COMPACT_AFTER: usize = 256;

#[derive(Debug, Serialize, Deserialize)]
struct WalRecord {
    key: String,
    doc: Option<Value>,
}

#[derive(Debug, Default)]
pub struct DocumentStore {
    dir: Option<PathBuf>,
    docs: BTreeMap<String, Value>,
    wal: Option<File>,
    wal_records: usize,
}

impl DocumentStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Load the snapshot, replay the log on top of it and compact. A torn
    /// final log line is dropped.
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut docs = BTreeMap::new();
        let snapshot = dir.join(SNAPSHOT);
        if snapshot.exists() {
            docs = serde_json::from_slice(&fs::read(&snapshot)?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        }
        let wal_path = dir.join(WAL);
        if wal_path.exists() {
            for line in fs::read(&wal_path)?.split(|b| *b == b'\n') {
                let Ok(record) = serde_json::from_slice::<WalRecord>(line) else { continue };
                match record.doc {
                    Some(doc) => docs.insert(record.key, doc),
                    None => docs.remove(&record.key),
                };
            }
        }
        let mut store = DocumentStore { dir: Some(dir), docs, wal: None, wal_records: 0 };
        store.compact()?;
        Ok(store)
    }

    pub fn is_durable(&self) -> bool {
        self.dir.is_some()
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.docs.get(key)
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a Value)> + 'a {
        self.docs.range(prefix.to_owned()..).take_while(move |(k, _)| k.starts_with(prefix))
    }

    pub fn put(&mut self, key: &str, doc: Value) -> io::Result<()> {
        self.log(WalRecord { key: key.to_owned(), doc: Some(doc.clone()) })?;
        self.docs.insert(key.to_owned(), doc);
        self.maybe_compact()
    }

    pub fn delete(&mut self, key: &str) -> io::Result<()> {
        self.log(WalRecord { key: key.to_owned(), doc: None })?;
        self.docs.remove(key);
        self.maybe_compact()
    }

    fn log(&mut self, record: WalRecord) -> io::Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        if self.wal.is_none() {
            self.wal = Some(OpenOptions::new().create(true).append(true).open(dir.join(WAL))?);
        }
        let wal = self.wal.as_mut().expect("opened above");
        let mut line = canonical::to_vec(&record);
        line.push(b'\n');
        wal.write_all(&line)?;
        wal.sync_data()?;
        self.wal_records += 1;
        Ok(())
    }

    fn maybe_compact(&mut self) -> io::Result<()> {
        if self.wal_records >= COMPACT_AFTER {
            self.compact()?;
        }
        Ok(())
    }

    /// Rewrite the snapshot from memory and empty the log.
    pub fn compact(&mut self) -> io::Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let tmp = dir.join(format!("{SNAPSHOT}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&canonical::to_vec(&self.docs))?;
            f.sync_all()?;
        }
        fs::rename(&tmp, dir.join(SNAPSHOT))?;
        self.wal = None;
        File::create(dir.join(WAL))?.sync_all()?;
        self.wal_records = 0;
        Ok(())
    }

    /// Everything the store holds at rest: snapshot and log file contents,
    /// or the serialized map for an in-memory store.
    pub fn raw_bytes(&self) -> io::Result<Vec<u8>> {
        let Some(dir) = &self.dir else { return Ok(canonical::to_vec(&self.docs)) };
        let mut out = Vec::new();
        for name in [SNAPSHOT, WAL] {
            let path = dir.join(name);
            if path.exists() {
                out.extend(fs::read(path)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn reopen_recovers_log() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = DocumentStore::open(dir.path()).unwrap();
            s.put("a/1", json!({"x": 1})).unwrap();
            s.put("a/2", json!({"x": 2})).unwrap();
            s.delete("a/1").unwrap();
        }
        let s = DocumentStore::open(dir.path()).unwrap();
        assert_eq!(s.get("a/1"), None);
        assert_eq!(s.get("a/2"), Some(&json!({"x": 2})));
        assert_eq!(s.with_prefix("a/").count(), 1);
    }

    #[test]
    fn torn_log_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = DocumentStore::open(dir.path()).unwrap();
            s.put("k", json!("v")).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(dir.path().join(WAL)).unwrap();
        f.write_all(b"{\"doc\":\"half").unwrap();
        let s = DocumentStore::open(dir.path()).unwrap();
        assert_eq!(s.get("k"), Some(&json!("v")));
    }

    #[test]
    fn compaction_removes_deleted_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = DocumentStore::open(dir.path()).unwrap();
        s.put("secret", json!("needle-0123456789")).unwrap();
        s.delete("secret").unwrap();
        let before = s.raw_bytes().unwrap();
        assert!(before.windows(17).any(|w| w == b"needle-0123456789"));
        s.compact().unwrap();
        let after = s.raw_bytes().unwrap();
        assert!(!after.windows(17).any(|w| w == b"needle-0123456789"));
    }
}
