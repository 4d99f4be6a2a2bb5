//! Durable persistence for message records and cache entries.
//!
//! Records are keyed by `request_id` and scanned per `(user_id, session_id)`
//! in insertion order, which the per-user queue makes chronological.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Mutex, RwLock};

use crate::cache::CacheEntry;
use crate::error::{Error, Result};
use crate::model::MessageRecord;

pub trait Store: Send + Sync {
    /// Fails if a record with the same `request_id` exists.
    fn append_record(&self, record: &MessageRecord) -> Result<()>;
    fn get_record(&self, request_id: &str) -> Result<Option<MessageRecord>>;
    fn session_records(&self, user_id: &str, session_id: &str) -> Result<Vec<MessageRecord>>;
    fn put_cache_entry(&self, entry: &CacheEntry) -> Result<()>;
    fn cache_entries(&self) -> Result<Vec<CacheEntry>>;
}

#[derive(Default)]
struct Tables {
    records: Vec<MessageRecord>,
    by_id: HashMap<String, usize>,
    by_session: HashMap<(String, String), Vec<usize>>,
    cache: Vec<CacheEntry>,
}

impl Tables {
    fn insert_record(&mut self, record: MessageRecord) -> Result<()> {
        if self.by_id.contains_key(&record.request_id) {
            return Err(Error::Storage(format!("duplicate request id {}", record.request_id)));
        }
        let idx = self.records.len();
        self.by_id.insert(record.request_id.clone(), idx);
        self.by_session
            .entry((record.user_id.clone(), record.session_id.clone()))
            .or_default()
            .push(idx);
        self.records.push(record);
        Ok(())
    }

    fn session(&self, user_id: &str, session_id: &str) -> Vec<MessageRecord> {
        self.by_session
            .get(&(user_id.to_string(), session_id.to_string()))
            .map(|ids| ids.iter().map(|&i| self.records[i].clone()).collect())
            .unwrap_or_default()
    }
}

/// In-process store. `set_unavailable` simulates an outage for tests.
#[derive(Default)]
pub struct MemoryStore {
    tables: RwLock<Tables>,
    unavailable: AtomicBool,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_unavailable(&self, down: bool) {
        self.unavailable.store(down, Ordering::SeqCst);
    }

    fn check(&self) -> Result<()> {
        if self.unavailable.load(Ordering::SeqCst) {
            Err(Error::Storage("store unavailable".into()))
        } else {
            Ok(())
        }
    }
}

impl Store for MemoryStore {
    fn append_record(&self, record: &MessageRecord) -> Result<()> {
        self.check()?;
        self.tables.write().unwrap().insert_record(record.clone())
    }

    fn get_record(&self, request_id: &str) -> Result<Option<MessageRecord>> {
        self.check()?;
        let t = self.tables.read().unwrap();
        Ok(t.by_id.get(request_id).map(|&i| t.records[i].clone()))
    }

    fn session_records(&self, user_id: &str, session_id: &str) -> Result<Vec<MessageRecord>> {
        self.check()?;
        Ok(self.tables.read().unwrap().session(user_id, session_id))
    }

    fn put_cache_entry(&self, entry: &CacheEntry) -> Result<()> {
        self.check()?;
        self.tables.write().unwrap().cache.push(entry.clone());
        Ok(())
    }

    fn cache_entries(&self) -> Result<Vec<CacheEntry>> {
        self.check()?;
        Ok(self.tables.read().unwrap().cache.clone())
    }
}

/// Append-only JSON-lines files (`records.jsonl`, `cache.jsonl`) in a
/// directory, mirrored in memory for reads.
pub struct FileStore {
    dir: PathBuf,
    tables: RwLock<Tables>,
    files: Mutex<(File, File)>,
}

impl FileStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let records_path = dir.join("records.jsonl");
        let cache_path = dir.join("cache.jsonl");
        let mut tables = Tables::default();
        for record in read_lines::<MessageRecord>(&records_path)? {
            tables.insert_record(record)?;
        }
        tables.cache = read_lines(&cache_path)?;
        let open = |p: &Path| OpenOptions::new().create(true).append(true).open(p);
        Ok(FileStore {
            files: Mutex::new((open(&records_path)?, open(&cache_path)?)),
            dir,
            tables: RwLock::new(tables),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Storage(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

fn append_line(file: &mut File, value: &impl serde::Serialize) -> Result<()> {
    let mut line = serde_json::to_string(value)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.flush()?;
    Ok(())
}

impl Store for FileStore {
    fn append_record(&self, record: &MessageRecord) -> Result<()> {
        let mut files = self.files.lock().unwrap();
        let mut tables = self.tables.write().unwrap();
        if tables.by_id.contains_key(&record.request_id) {
            return Err(Error::Storage(format!("duplicate request id {}", record.request_id)));
        }
        append_line(&mut files.0, record)?;
        tables.insert_record(record.clone())
    }

    fn get_record(&self, request_id: &str) -> Result<Option<MessageRecord>> {
        let t = self.tables.read().unwrap();
        Ok(t.by_id.get(request_id).map(|&i| t.records[i].clone()))
    }

    fn session_records(&self, user_id: &str, session_id: &str) -> Result<Vec<MessageRecord>> {
        Ok(self.tables.read().unwrap().session(user_id, session_id))
    }

    fn put_cache_entry(&self, entry: &CacheEntry) -> Result<()> {
        let mut files = self.files.lock().unwrap();
        append_line(&mut files.1, entry)?;
        self.tables.write().unwrap().cache.push(entry.clone());
        Ok(())
    }

    fn cache_entries(&self) -> Result<Vec<CacheEntry>> {
        Ok(self.tables.read().unwrap().cache.clone())
    }
}
