use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{AgentRecord, ProfileEntry, Record, RoundReport, TelemetryError};

/// Destination for experiment records.
///
/// Implementations accept concurrent writers; each record lands whole.
pub trait RecordSink: Send + Sync {
    fn write(&self, record: &Record) -> Result<(), TelemetryError>;

    fn flush(&self) -> Result<(), TelemetryError> {
        Ok(())
    }
}

pub fn log_round(sink: &dyn RecordSink, record: &RoundReport) -> Result<(), TelemetryError> {
    sink.write(&Record::Round(record.clone()))
}

pub fn log_agent(sink: &dyn RecordSink, record: &AgentRecord) -> Result<(), TelemetryError> {
    sink.write(&Record::Agent(record.clone()))
}

pub fn log_profile(sink: &dyn RecordSink, entry: &ProfileEntry) -> Result<(), TelemetryError> {
    sink.write(&Record::Profile(entry.clone()))
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl RecordSink for NullSink {
    fn write(&self, _record: &Record) -> Result<(), TelemetryError> {
        Ok(())
    }
}

/// Keeps records in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    records: Mutex<Vec<Record>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<Record> {
        self.records.lock().map(|r| r.clone()).unwrap_or_default()
    }

    pub fn rounds(&self) -> Vec<RoundReport> {
        self.records()
            .into_iter()
            .filter_map(|r| match r {
                Record::Round(r) => Some(r),
                _ => None,
            })
            .collect()
    }

    pub fn agents(&self) -> Vec<AgentRecord> {
        self.records()
            .into_iter()
            .filter_map(|r| match r {
                Record::Agent(a) => Some(a),
                _ => None,
            })
            .collect()
    }
}

impl RecordSink for MemorySink {
    fn write(&self, record: &Record) -> Result<(), TelemetryError> {
        self.records
            .lock()
            .map_err(|_| TelemetryError::Poisoned)?
            .push(record.clone());
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TelemetryError + '_ {
    move |source| TelemetryError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One JSON object per line.
#[derive(Debug)]
pub struct JsonlSink {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
}

impl JsonlSink {
    /// Creates (or truncates) `path`.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, TelemetryError> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok(Self {
            writer: Mutex::new(BufWriter::new(file)),
            path,
        })
    }

    /// Opens `path` for appending, creating it if needed.
    pub fn append(path: impl AsRef<Path>) -> Result<Self, TelemetryError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self {
            writer: Mutex::new(BufWriter::new(file)),
            path,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl RecordSink for JsonlSink {
    fn write(&self, record: &Record) -> Result<(), TelemetryError> {
        let mut line = record.to_json_line();
        line.push('\n');
        let mut w = self.writer.lock().map_err(|_| TelemetryError::Poisoned)?;
        w.write_all(line.as_bytes()).map_err(io_err(&self.path))
    }

    fn flush(&self) -> Result<(), TelemetryError> {
        let mut w = self.writer.lock().map_err(|_| TelemetryError::Poisoned)?;
        w.flush().map_err(io_err(&self.path))
    }
}

impl Drop for JsonlSink {
    fn drop(&mut self) {
        if let Ok(w) = self.writer.get_mut() {
            let _ = w.flush();
        }
    }
}

pub(crate) fn csv_file_name(kind: &str) -> &'static str {
    match kind {
        "round" => "rounds.csv",
        "agent" => "agents.csv",
        "profile" => "profile.csv",
        _ => "rss.csv",
    }
}

/// One CSV file per record kind inside a directory, each with a header row.
/// Files are created on the first record of their kind.
#[derive(Debug)]
pub struct CsvSink {
    dir: PathBuf,
    writers: Mutex<HashMap<&'static str, csv::Writer<File>>>,
}

impl CsvSink {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self, TelemetryError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self {
            dir,
            writers: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl RecordSink for CsvSink {
    fn write(&self, record: &Record) -> Result<(), TelemetryError> {
        let kind = record.kind();
        let path = self.dir.join(csv_file_name(kind));
        let to_err = |e: csv::Error| TelemetryError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        };
        let mut writers = self.writers.lock().map_err(|_| TelemetryError::Poisoned)?;
        if !writers.contains_key(kind) {
            let mut w = csv::Writer::from_path(&path).map_err(to_err)?;
            w.write_record(Record::csv_header(kind)).map_err(to_err)?;
            writers.insert(kind, w);
        }
        let w = writers.get_mut(kind).expect("inserted above");
        w.write_record(record.csv_fields()).map_err(to_err)
    }

    fn flush(&self) -> Result<(), TelemetryError> {
        let mut writers = self.writers.lock().map_err(|_| TelemetryError::Poisoned)?;
        for (kind, w) in writers.iter_mut() {
            w.flush()
                .map_err(io_err(&self.dir.join(csv_file_name(kind))))?;
        }
        Ok(())
    }
}

impl Drop for CsvSink {
    fn drop(&mut self) {
        if let Ok(writers) = self.writers.get_mut() {
            for w in writers.values_mut() {
                let _ = w.flush();
            }
        }
    }
}
