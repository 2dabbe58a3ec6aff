use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crm_core::audit::AuditRecord;
use tracing::warn;

use crate::error::ServiceError;

/// Append-only JSON-lines audit log with its in-memory mirror. Callers
/// serialize access; counts are derived from the records so they can never
/// drift from what was persisted.
pub struct AuditLog {
    path: PathBuf,
    file: File,
    records: Vec<AuditRecord>,
    anomalies: u64,
}

impl AuditLog {
    /// Opens (or creates) the log and replays existing records. A torn final
    /// line from an interrupted write is skipped with a warning.
    pub fn open(path: &Path) -> Result<Self, ServiceError> {
        let err = |source| ServiceError::Log {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(err)?;
        }
        let mut records = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(err)?;
            let mut good_len = 0;
            let mut lines = text.split_inclusive('\n').peekable();
            let mut n = 0;
            while let Some(line) = lines.next() {
                n += 1;
                let body = line.trim();
                if !body.is_empty() {
                    match serde_json::from_str::<AuditRecord>(body) {
                        Ok(r) => records.push(r),
                        Err(e) if lines.peek().is_none() => {
                            warn!("dropping torn final log line: {e}");
                            break;
                        }
                        Err(e) => {
                            return Err(err(std::io::Error::new(
                                std::io::ErrorKind::InvalidData,
                                format!("line {n}: {e}"),
                            )))
                        }
                    }
                }
                good_len += line.len();
            }
            if good_len < text.len() {
                OpenOptions::new().write(true).open(path).map_err(err)?.set_len(good_len as u64).map_err(err)?;
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
        if file.metadata().map_err(err)?.len() > 0 {
            let text = std::fs::read(path).map_err(err)?;
            if text.last() != Some(&b'\n') {
                file.write_all(b"\n").map_err(err)?;
            }
        }
        let anomalies = records.iter().filter(|r| r.anomaly_flag).count() as u64;
        Ok(AuditLog {
            path: path.to_path_buf(),
            file,
            records,
            anomalies,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_id(&self) -> u64 {
        self.records.last().map_or(1, |r| r.record_id + 1)
    }

    /// Writes the record, then makes it visible in memory.
    pub fn append(&mut self, mut record: AuditRecord) -> std::io::Result<AuditRecord> {
        record.record_id = self.next_id();
        let mut line = serde_json::to_vec(&record).map_err(std::io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        if record.anomaly_flag {
            self.anomalies += 1;
        }
        self.records.push(record.clone());
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn anomalies(&self) -> u64 {
        self.anomalies
    }

    /// Newest first.
    pub fn page(&self, limit: usize, offset: usize) -> Vec<AuditRecord> {
        self.records.iter().rev().skip(offset).take(limit).cloned().collect()
    }

    pub fn sync(&self) -> std::io::Result<()> {
        self.file.sync_all()
    }
}
