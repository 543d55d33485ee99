//! Structured run log: one JSON event per line in a sidecar file, with
//! human-readable progress on stderr.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

pub struct RunLog {
    out: Option<Mutex<BufWriter<File>>>,
}

impl RunLog {
    /// Log events next to `output` (as `<output>.log.jsonl`).
    pub fn beside(output: &Path) -> Self {
        let mut os = output.as_os_str().to_owned();
        os.push(".log.jsonl");
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(Path::new(&os))
            .ok();
        RunLog {
            out: file.map(|f| Mutex::new(BufWriter::new(f))),
        }
    }

    /// Record one structured event.
    pub fn event(&self, kind: &str, fields: serde_json::Value) {
        let Some(out) = &self.out else { return };
        let mut record = serde_json::Map::new();
        record.insert("event".into(), serde_json::json!(kind));
        if let serde_json::Value::Object(map) = fields {
            record.extend(map);
        }
        let mut out = out.lock().unwrap();
        let _ = serde_json::to_writer(&mut *out, &serde_json::Value::Object(record));
        let _ = out.write_all(b"\n");
        let _ = out.flush();
    }

    /// Progress line for the terminal.
    pub fn progress(&self, message: &str) {
        eprintln!("{message}");
    }
}
