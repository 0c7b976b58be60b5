use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TelemetryError;

/// Global model state after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    #[serde(rename = "t")]
    pub round: u64,
    #[serde(rename = "sampled")]
    pub sampled_ids: Vec<usize>,
    #[serde(rename = "loss")]
    pub global_loss: f64,
    #[serde(rename = "acc")]
    pub global_accuracy: f64,
    #[serde(rename = "wall_ms")]
    pub wall_time_ms: u64,
}

/// One local epoch of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    #[serde(rename = "t")]
    pub round: u64,
    #[serde(rename = "agent")]
    pub agent_id: usize,
    #[serde(rename = "epoch")]
    pub local_epoch: usize,
    #[serde(rename = "loss")]
    pub train_loss: f64,
    #[serde(rename = "acc")]
    pub train_accuracy: f64,
    #[serde(rename = "shard")]
    pub shard_size: usize,
}

/// One row of a profiler report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub action: String,
    #[serde(rename = "mean_s")]
    pub mean_duration_s: f64,
    #[serde(rename = "calls")]
    pub num_calls: u64,
    pub total_s: f64,
    #[serde(rename = "pct")]
    pub percentage: f64,
}

/// Process memory sampled at the end of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssSample {
    pub t: u64,
    pub rss_kib: u64,
}

/// Anything a sink can store, discriminated by `kind` on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Round(RoundReport),
    Agent(AgentRecord),
    Profile(ProfileEntry),
    Rss(RssSample),
}

impl Record {
    pub fn kind(&self) -> &'static str {
        match self {
            Record::Round(_) => "round",
            Record::Agent(_) => "agent",
            Record::Profile(_) => "profile",
            Record::Rss(_) => "rss",
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialise")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    pub(crate) fn csv_header(kind: &str) -> &'static [&'static str] {
        match kind {
            "round" => &["t", "sampled", "loss", "acc", "wall_ms"],
            "agent" => &["t", "agent", "epoch", "loss", "acc", "shard"],
            "profile" => &["action", "mean_s", "calls", "total_s", "pct"],
            _ => &["t", "rss_kib"],
        }
    }

    pub(crate) fn csv_fields(&self) -> Vec<String> {
        match self {
            Record::Round(r) => vec![
                r.round.to_string(),
                serde_json::to_string(&r.sampled_ids).unwrap(),
                r.global_loss.to_string(),
                r.global_accuracy.to_string(),
                r.wall_time_ms.to_string(),
            ],
            Record::Agent(a) => vec![
                a.round.to_string(),
                a.agent_id.to_string(),
                a.local_epoch.to_string(),
                a.train_loss.to_string(),
                a.train_accuracy.to_string(),
                a.shard_size.to_string(),
            ],
            Record::Profile(p) => vec![
                p.action.clone(),
                p.mean_duration_s.to_string(),
                p.num_calls.to_string(),
                p.total_s.to_string(),
                p.percentage.to_string(),
            ],
            Record::Rss(r) => vec![r.t.to_string(), r.rss_kib.to_string()],
        }
    }

    pub(crate) fn from_csv_fields(kind: &str, f: &csv::StringRecord) -> Result<Self, String> {
        fn get<T: std::str::FromStr>(f: &csv::StringRecord, i: usize) -> Result<T, String> {
            let cell = f.get(i).ok_or_else(|| format!("missing column {i}"))?;
            cell.parse()
                .map_err(|_| format!("bad value {cell:?} in column {i}"))
        }
        Ok(match kind {
            "round" => Record::Round(RoundReport {
                round: get(f, 0)?,
                sampled_ids: serde_json::from_str(f.get(1).unwrap_or(""))
                    .map_err(|e| e.to_string())?,
                global_loss: get(f, 2)?,
                global_accuracy: get(f, 3)?,
                wall_time_ms: get(f, 4)?,
            }),
            "agent" => Record::Agent(AgentRecord {
                round: get(f, 0)?,
                agent_id: get(f, 1)?,
                local_epoch: get(f, 2)?,
                train_loss: get(f, 3)?,
                train_accuracy: get(f, 4)?,
                shard_size: get(f, 5)?,
            }),
            "profile" => Record::Profile(ProfileEntry {
                action: get(f, 0)?,
                mean_duration_s: get(f, 1)?,
                num_calls: get(f, 2)?,
                total_s: get(f, 3)?,
                percentage: get(f, 4)?,
            }),
            "rss" => Record::Rss(RssSample {
                t: get(f, 0)?,
                rss_kib: get(f, 1)?,
            }),
            other => return Err(format!("unknown record kind {other}")),
        })
    }
}

/// Parses JSON Lines text; blank lines are skipped.
pub fn parse_jsonl(text: &str) -> Result<Vec<Record>, TelemetryError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            Record::from_json_line(l).map_err(|e| TelemetryError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Record>, TelemetryError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TelemetryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_jsonl(&text)
}

/// Reads every `<kind>.csv` written by a [`super::CsvSink`] in `dir`.
pub fn read_csv_dir(dir: impl AsRef<Path>) -> Result<Vec<Record>, TelemetryError> {
    let mut out = Vec::new();
    for kind in ["round", "agent", "profile", "rss"] {
        let path = dir.as_ref().join(super::sinks::csv_file_name(kind));
        if !path.exists() {
            continue;
        }
        let mut reader = csv::Reader::from_path(&path).map_err(|e| TelemetryError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| TelemetryError::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
            out.push(Record::from_csv_fields(kind, &row).map_err(|message| {
                TelemetryError::Parse {
                    line: i + 2,
                    message,
                }
            })?);
        }
    }
    Ok(out)
}
