//! Line-delimited record files.
//!
//! Every line is a self-contained JSON record carrying `schema_version` and
//! the `config_digest` of the run that produced it, so downstream commands
//! can refuse inputs built under a different configuration. Keys are
//! serialized in sorted order and floats in shortest round-trip form, which
//! makes equal runs byte-identical.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Machine-readable description of every record format this crate reads or
/// writes; also shipped via the CLI `schema` command.
pub const RECORD_SCHEMAS_JSON: &str = include_str!("../schemas/records.json");

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("record io failed on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad record at {path}:{line}: {source}")]
    Malformed {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("record is not a JSON object at {path}:{line}")]
    NotAnObject { path: String, line: usize },
    #[error(
        "config digest mismatch in {path}: produced under {found}, current run is {expected} \
         (pass --force to use it anyway)"
    )]
    DigestMismatch {
        path: String,
        found: String,
        expected: String,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> RecordError {
    RecordError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writer that stamps every record with the schema version and config digest.
pub struct RecordWriter {
    path: PathBuf,
    out: BufWriter<File>,
    config_digest: String,
    written: u64,
}

impl RecordWriter {
    pub fn create(path: &Path, config_digest: &str) -> Result<Self, RecordError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
            }
        }
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        Ok(RecordWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            config_digest: config_digest.to_string(),
            written: 0,
        })
    }

    /// Append to an existing file (resume); creates it when absent.
    pub fn append(path: &Path, config_digest: &str) -> Result<Self, RecordError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(RecordWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            config_digest: config_digest.to_string(),
            written: 0,
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), RecordError> {
        let value = serde_json::to_value(record).map_err(|e| RecordError::Malformed {
            path: self.path.display().to_string(),
            line: self.written as usize + 1,
            source: e,
        })?;
        let serde_json::Value::Object(mut map) = value else {
            return Err(RecordError::NotAnObject {
                path: self.path.display().to_string(),
                line: self.written as usize + 1,
            });
        };
        map.insert("schema_version".into(), serde_json::json!(SCHEMA_VERSION));
        map.insert("config_digest".into(), serde_json::json!(self.config_digest));
        // serde_json maps iterate in sorted key order, so this line is
        // byte-stable across runs.
        let line = serde_json::to_string(&serde_json::Value::Object(map)).expect("object serializes");
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| io_err(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<u64, RecordError> {
        self.out.flush().map_err(|e| io_err(&self.path, e))?;
        Ok(self.written)
    }
}

/// Read every record in a file.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| RecordError::Malformed {
            path: path.display().to_string(),
            line: idx + 1,
            source: e,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// The config digest stamped on the first record of a file, if any.
pub fn file_config_digest(path: &Path) -> Result<Option<String>, RecordError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| RecordError::Malformed {
                path: path.display().to_string(),
                line: 1,
                source: e,
            })?;
        return Ok(value
            .get("config_digest")
            .and_then(|d| d.as_str())
            .map(String::from));
    }
    Ok(None)
}

/// Refuse a file produced under a different config digest unless forced.
pub fn check_config_digest(path: &Path, expected: &str, force: bool) -> Result<(), RecordError> {
    if force {
        return Ok(());
    }
    match file_config_digest(path)? {
        Some(found) if found != expected => Err(RecordError::DigestMismatch {
            path: path.display().to_string(),
            found,
            expected: expected.to_string(),
        }),
        _ => Ok(()),
    }
}

/// Sidecar progress log: one completed id per line. Makes long batch
/// commands resumable.
pub struct ProgressLog {
    path: PathBuf,
}

impl ProgressLog {
    pub fn for_output(output: &Path) -> Self {
        let mut os = output.as_os_str().to_owned();
        os.push(".progress");
        ProgressLog { path: PathBuf::from(os) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Ids already completed, empty when the sidecar does not exist.
    pub fn completed(&self) -> Result<BTreeSet<String>, RecordError> {
        if !self.path.exists() {
            return Ok(BTreeSet::new());
        }
        let file = File::open(&self.path).map_err(|e| io_err(&self.path, e))?;
        let mut ids = BTreeSet::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| io_err(&self.path, e))?;
            if !line.trim().is_empty() {
                ids.insert(line.trim().to_string());
            }
        }
        Ok(ids)
    }

    pub fn mark(&self, id: &str) -> Result<(), RecordError> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| io_err(&self.path, e))?;
        writeln!(file, "{id}").map_err(|e| io_err(&self.path, e))
    }

    pub fn clear(&self) -> Result<(), RecordError> {
        if self.path.exists() {
            std::fs::remove_file(&self.path).map_err(|e| io_err(&self.path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Demo {
        id: String,
        value: f64,
    }

    #[test]
    fn records_round_trip_with_stamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.jsonl");
        let mut writer = RecordWriter::create(&path, "digest123").unwrap();
        writer.write(&Demo { id: "a".into(), value: 0.5 }).unwrap();
        writer.write(&Demo { id: "b".into(), value: -1.0 }).unwrap();
        assert_eq!(writer.finish().unwrap(), 2);

        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.lines().all(|l| l.contains("\"schema_version\":1")));
        assert!(raw.lines().all(|l| l.contains("\"config_digest\":\"digest123\"")));

        let back: Vec<Demo> = read_records(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], Demo { id: "a".into(), value: 0.5 });
        assert_eq!(file_config_digest(&path).unwrap().as_deref(), Some("digest123"));
    }

    #[test]
    fn digest_check_refuses_mismatch_unless_forced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.jsonl");
        let mut writer = RecordWriter::create(&path, "old").unwrap();
        writer.write(&Demo { id: "a".into(), value: 1.0 }).unwrap();
        writer.finish().unwrap();

        assert!(check_config_digest(&path, "old", false).is_ok());
        assert!(matches!(
            check_config_digest(&path, "new", false),
            Err(RecordError::DigestMismatch { .. })
        ));
        assert!(check_config_digest(&path, "new", true).is_ok());
    }

    #[test]
    fn equal_writes_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str| {
            let path = dir.path().join(name);
            let mut writer = RecordWriter::create(&path, "d").unwrap();
            writer.write(&Demo { id: "x".into(), value: 0.1 + 0.2 }).unwrap();
            writer.finish().unwrap();
            std::fs::read(&path).unwrap()
        };
        assert_eq!(write("one.jsonl"), write("two.jsonl"));
    }

    #[test]
    fn progress_log_tracks_completed_ids() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("synth.jsonl");
        let progress = ProgressLog::for_output(&out);
        assert!(progress.completed().unwrap().is_empty());
        progress.mark("e1").unwrap();
        progress.mark("e2").unwrap();
        let done = progress.completed().unwrap();
        assert!(done.contains("e1") && done.contains("e2"));
        progress.clear().unwrap();
        assert!(progress.completed().unwrap().is_empty());
    }
}
