//! Run persistence: `<root>/<run_id>/record.json` plus `<root>/index.json`.
//!
//! Every file is written to a temporary sibling and renamed into place, so
//! a reader sees either the previous version or the new one.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use bfftrace_core::run::{RecordError, RunRecord, RunState};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

const RECORD_FILE: &str = "record.json";
const INDEX_FILE: &str = "index.json";
const ENOSPC: i32 = 28;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("run {0} not found")]
    NotFound(String),
    #[error("run {run_id} is corrupt: {reason}")]
    CorruptRecord { run_id: String, reason: String },
    #[error("no space left in the run store")]
    StorageFull,
    #[error("record cannot be serialized: {0}")]
    SerializationFailure(#[from] serde_json::Error),
    #[error("invalid record: {0}")]
    InvalidRecord(#[from] RecordError),
    #[error("run store I/O: {0}")]
    Io(io::Error),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        if e.raw_os_error() == Some(ENOSPC) {
            StoreError::StorageFull
        } else {
            StoreError::Io(e)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FindingCounts {
    pub leak_both: usize,
    pub leak_main_only: usize,
    pub leak_sub_only: usize,
    pub server_error_5xx: usize,
}

impl From<[usize; 4]> for FindingCounts {
    fn from(c: [usize; 4]) -> Self {
        Self {
            leak_both: c[0],
            leak_main_only: c[1],
            leak_sub_only: c[2],
            server_error_5xx: c[3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub created_at: u64,
    pub status: RunState,
    pub finding_counts: FindingCounts,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        Self {
            run_id: r.run_id.clone(),
            created_at: r.created_at,
            status: r.status,
            finding_counts: r.finding_counts().into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFilter {
    #[serde(default)]
    pub status: Option<RunState>,
    /// Milliseconds since the epoch; older runs are excluded.
    #[serde(default)]
    pub since: Option<u64>,
}

impl RunFilter {
    fn admits(&self, s: &RunSummary) -> bool {
        self.status.map_or(true, |st| st == s.status) && self.since.map_or(true, |t| s.created_at >= t)
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    checksum: String,
    record: &'a RawValue,
}

#[derive(Deserialize)]
struct EnvelopeIn<'a> {
    checksum: String,
    #[serde(borrow)]
    record: &'a RawValue,
}

fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialized record wrapped with the checksum of its bytes.
pub fn encode_record(record: &RunRecord) -> Result<Vec<u8>, StoreError> {
    let body = serde_json::to_string(record)?;
    let raw = RawValue::from_string(body)?;
    let env = EnvelopeOut {
        checksum: checksum(raw.get().as_bytes()),
        record: &raw,
    };
    Ok(serde_json::to_vec(&env)?)
}

pub fn decode_record(run_id: &str, bytes: &[u8]) -> Result<RunRecord, StoreError> {
    let corrupt = |reason: String| StoreError::CorruptRecord {
        run_id: run_id.to_string(),
        reason,
    };
    let env: EnvelopeIn<'_> = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
    if checksum(env.record.get().as_bytes()) != env.checksum {
        return Err(corrupt("checksum mismatch".into()));
    }
    serde_json::from_str(env.record.get()).map_err(|e| corrupt(e.to_string()))
}

/// A record written to its temporary file but not yet renamed into place.
#[must_use = "a staged write does nothing until committed"]
pub struct StagedWrite {
    store: RunStore,
    tmp: PathBuf,
    dest: PathBuf,
    summary: RunSummary,
}

impl StagedWrite {
    pub fn temp_path(&self) -> &Path {
        &self.tmp
    }

    pub fn commit(self) -> Result<(), StoreError> {
        fs::rename(&self.tmp, &self.dest)?;
        self.store.update_index(self.summary)
    }
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
    index_lock: Arc<Mutex<()>>,
}

static TMP_SEQ: AtomicU64 = AtomicU64::new(0);

fn tmp_sibling(dest: &Path) -> PathBuf {
    let n = TMP_SEQ.fetch_add(1, Ordering::SeqCst);
    let name = dest.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    dest.with_file_name(format!(".{name}.{}.{n}.tmp", std::process::id()))
}

fn write_synced(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            index_lock: Arc::new(Mutex::new(())),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    fn record_path(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join(RECORD_FILE)
    }

    /// Writes the temporary file only; see [`StagedWrite::commit`].
    pub fn stage(&self, record: &RunRecord) -> Result<StagedWrite, StoreError> {
        record.validate()?;
        if !valid_run_id(&record.run_id) {
            return Err(StoreError::InvalidRecord(RecordError::EmptyId));
        }
        let bytes = encode_record(record)?;
        fs::create_dir_all(self.run_dir(&record.run_id))?;
        let dest = self.record_path(&record.run_id);
        let tmp = tmp_sibling(&dest);
        if let Err(e) = write_synced(&tmp, &bytes) {
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        Ok(StagedWrite {
            store: self.clone(),
            tmp,
            dest,
            summary: RunSummary::from(record),
        })
    }

    pub fn save_run(&self, record: &RunRecord) -> Result<(), StoreError> {
        self.stage(record)?.commit()
    }

    pub fn load_run(&self, run_id: &str) -> Result<RunRecord, StoreError> {
        if !valid_run_id(run_id) {
            return Err(StoreError::NotFound(run_id.to_string()));
        }
        let bytes = match fs::read(self.record_path(run_id)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(run_id.to_string())),
            Err(e) => return Err(e.into()),
        };
        let record = decode_record(run_id, &bytes)?;
        if record.run_id != run_id {
            return Err(StoreError::CorruptRecord {
                run_id: run_id.to_string(),
                reason: format!("file holds run {}", record.run_id),
            });
        }
        Ok(record)
    }

    pub fn exists(&self, run_id: &str) -> bool {
        valid_run_id(run_id) && self.record_path(run_id).is_file()
    }

    fn read_index(&self) -> Result<Vec<RunSummary>, StoreError> {
        match fs::read(self.root.join(INDEX_FILE)) {
            Ok(b) => serde_json::from_slice(&b).map_err(|e| StoreError::CorruptRecord {
                run_id: INDEX_FILE.into(),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    fn update_index(&self, summary: RunSummary) -> Result<(), StoreError> {
        let _guard = self.index_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut index = self.read_index().or_else(|_| self.rebuild_index())?;
        index.retain(|s| s.run_id != summary.run_id);
        index.push(summary);
        sort_newest_first(&mut index);
        let dest = self.root.join(INDEX_FILE);
        let tmp = tmp_sibling(&dest);
        write_synced(&tmp, &serde_json::to_vec_pretty(&index)?)?;
        fs::rename(&tmp, &dest)?;
        Ok(())
    }

    /// Index rebuilt from the record files, skipping unreadable ones.
    pub fn rebuild_index(&self) -> Result<Vec<RunSummary>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let Some(id) = entry.file_name().to_str().map(str::to_string) else {
                continue;
            };
            if let Ok(rec) = self.load_run(&id) {
                out.push(RunSummary::from(&rec));
            }
        }
        sort_newest_first(&mut out);
        Ok(out)
    }

    /// Newest first.
    pub fn list_runs(&self, filter: &RunFilter) -> Result<Vec<RunSummary>, StoreError> {
        let index = match self.read_index() {
            Ok(i) => i,
            Err(StoreError::CorruptRecord { .. }) => self.rebuild_index()?,
            Err(e) => return Err(e),
        };
        Ok(index.into_iter().filter(|s| filter.admits(s)).collect())
    }
}

fn sort_newest_first(index: &mut [RunSummary]) {
    index.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| b.run_id.cmp(&a.run_id)));
}

/// A ULID; ids made by one process sort in creation order.
pub fn new_run_id() -> String {
    static GEN: Mutex<ulid::Generator> = Mutex::new(ulid::Generator::new());
    let mut gen = GEN.lock().unwrap_or_else(|e| e.into_inner());
    match gen.generate() {
        Ok(id) => id.to_string(),
        Err(overflow) => overflow.commit_overflow_random().to_string(),
    }
}
