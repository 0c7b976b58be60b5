//! Experiment configuration files.
//!
//! A config is one JSON document with the sections `dataset`, `partition`,
//! `agents`, `sampling`, `aggregation`, `model`, `training`, `pretrain`,
//! `telemetry` and a top-level `seed`. Parsing walks the whole document and
//! reports every problem it finds, each tagged with a dotted field path.
//! Unknown keys are errors.
//!
//! Only `dataset.source`, `agents.count` and `training.global_epochs` are
//! required. Everything else has a default, and [`ExperimentConfigFile::to_resolved_json`]
//! writes all of them out explicitly.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use fedsim_core::federated::{AggregatorKind, ConfigIssue, FLConfig, SamplerKind, Weighting};
use fedsim_core::{ModelKind, ModelSpec, PartitionScheme, TrainingMode};

pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Why a config file could not be turned into an experiment.
#[derive(Debug)]
pub enum ConfigError {
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    Invalid(Vec<ConfigIssue>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Read { path, source } => write!(f, "cannot read {}: {source}", path.display()),
            Self::Syntax {
                line,
                column,
                message,
            } => {
                write!(f, "syntax error at line {line}, column {column}: {message}")
            }
            Self::Invalid(issues) => {
                write!(f, "{} problem(s) in config:", issues.len())?;
                for issue in issues {
                    write!(f, "\n  {issue}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSection {
    Synth {
        num_classes: usize,
        num_features: usize,
        train_samples: usize,
        test_samples: usize,
        spread: f64,
        /// Seed for the generator; derived from the root seed when absent.
        data_seed: Option<u64>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv {
        train_path: PathBuf,
        test_path: PathBuf,
        has_header: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Iid,
    Niid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionSection {
    pub scheme: PartitionKind,
    pub niid_factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentsSection {
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingSection {
    pub fraction: f64,
    pub kind: SamplerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregationSection {
    pub kind: AggregatorKind,
    pub weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub hidden_dims: Vec<usize>,
    pub mode: TrainingMode,
    pub pretrained_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingSection {
    pub global_epochs: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

/// Centralised training used by the `pretrain` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TelemetryFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetrySection {
    pub format: TelemetryFormat,
    pub rss_sampling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfigFile {
    pub dataset: DatasetSection,
    pub partition: PartitionSection,
    pub agents: AgentsSection,
    pub sampling: SamplingSection,
    pub aggregation: AggregationSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub pretrain: PretrainSection,
    pub telemetry: TelemetrySection,
    pub seed: u64,
}

impl ExperimentConfigFile {
    /// Every default written out, paths absolute, so the copy reproduces the run.
    pub fn to_resolved_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    /// Model architecture for data with `input_dim` features and `num_classes` labels.
    pub fn model_spec(
        &self,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<ModelSpec, ConfigError> {
        let hidden = match self.model.kind {
            ModelKind::Linear => Vec::new(),
            ModelKind::Mlp => self.model.hidden_dims.clone(),
        };
        ModelSpec::new(self.model.kind, input_dim, hidden, num_classes)
            .map_err(|e| ConfigError::Invalid(vec![ConfigIssue::new("model", e.to_string())]))
    }

    pub fn fl_config(&self, spec: ModelSpec) -> FLConfig {
        let mut c = FLConfig::new(spec);
        c.num_agents = self.agents.count;
        c.global_epochs = self.training.global_epochs;
        c.local_epochs = self.training.local_epochs;
        c.sample_fraction = self.sampling.fraction;
        c.sampler = self.sampling.kind;
        c.aggregator = self.aggregation.kind;
        c.weighting = self.aggregation.weighting;
        c.batch_size = self.training.batch_size;
        c.lr = self.training.lr;
        c.mode = self.model.mode;
        c.pretrained_path = self.model.pretrained_path.clone();
        c.partition = self.partition_scheme();
        c.seed = self.seed;
        c
    }

    pub fn partition_scheme(&self) -> PartitionScheme {
        match self.partition.scheme {
            PartitionKind::Iid => PartitionScheme::Iid,
            PartitionKind::Niid => PartitionScheme::NonIid {
                niid_factor: self.partition.niid_factor,
            },
        }
    }
}

/// Reads and validates a config file. Relative paths inside it are taken
/// relative to the file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfigFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = std::path::absolute(&base).unwrap_or(base);
    parse_config(&text, &base)
}

/// Parses and validates config text, resolving relative paths against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfigFile, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut issues = Vec::new();
    let Some(root) = value.as_object() else {
        return Err(ConfigError::Invalid(vec![ConfigIssue::new(
            "(root)",
            "expected an object",
        )]));
    };
    let mut cx = Cx {
        issues: &mut issues,
        base,
    };
    let cfg = cx.file(root);
    if let Some(cfg) = &cfg {
        issues.extend(semantic_issues(cfg));
    }
    match cfg {
        Some(cfg) if issues.is_empty() => Ok(cfg),
        _ => Err(ConfigError::Invalid(issues)),
    }
}

/// Invariants that hold between fields, checked through the same rules the
/// experiment runner applies.
fn semantic_issues(cfg: &ExperimentConfigFile) -> Vec<ConfigIssue> {
    let mut out = Vec::new();
    if cfg.model.kind == ModelKind::Mlp && cfg.model.hidden_dims.is_empty() {
        out.push(ConfigIssue::new(
            "model.hidden_dims",
            "an mlp needs at least one hidden layer",
        ));
    }
    if cfg.model.hidden_dims.contains(&0) {
        out.push(ConfigIssue::new(
            "model.hidden_dims",
            "layer widths must be at least 1",
        ));
    }
    if cfg.model.mode == TrainingMode::Scratch && cfg.model.pretrained_path.is_some() {
        out.push(ConfigIssue::new(
            "model.pretrained_path",
            "only used with mode finetune or feature_extract",
        ));
    }
    if let DatasetSection::Synth {
        num_classes,
        num_features,
        train_samples,
        test_samples,
        spread,
        ..
    } = cfg.dataset
    {
        if num_classes < 2 {
            out.push(ConfigIssue::new(
                "dataset.num_classes",
                "must be at least 2",
            ));
        }
        if num_features == 0 {
            out.push(ConfigIssue::new(
                "dataset.num_features",
                "must be at least 1",
            ));
        }
        if train_samples == 0 {
            out.push(ConfigIssue::new(
                "dataset.train_samples",
                "must be at least 1",
            ));
        }
        if test_samples == 0 {
            out.push(ConfigIssue::new(
                "dataset.test_samples",
                "must be at least 1",
            ));
        }
        if !(spread.is_finite() && spread >= 0.0) {
            out.push(ConfigIssue::new(
                "dataset.spread",
                "must be a finite number >= 0",
            ));
        }
    }
    if cfg.pretrain.batch_size == 0 {
        out.push(ConfigIssue::new(
            "pretrain.batch_size",
            "must be at least 1",
        ));
    }
    if !(cfg.pretrain.lr.is_finite() && cfg.pretrain.lr >= 0.0) {
        out.push(ConfigIssue::new(
            "pretrain.lr",
            "must be a finite number >= 0",
        ));
    }
    // The FL-level rules need a model; a placeholder linear spec is enough
    // because none of them look at the architecture.
    let placeholder = ModelSpec::linear(1, 2).expect("valid spec");
    out.extend(cfg.fl_config(placeholder).issues());
    out
}

struct Cx<'a> {
    issues: &'a mut Vec<ConfigIssue>,
    base: &'a Path,
}

/// One JSON object being read; remembers which keys were consumed.
struct Obj<'v> {
    path: String,
    map: Option<&'v Map<String, Value>>,
    seen: BTreeSet<&'static str>,
}

impl<'a> Cx<'a> {
    fn issue(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ConfigIssue::new(field, message));
    }

    fn section<'v>(&mut self, parent: &mut Obj<'v>, key: &'static str) -> Obj<'v> {
        parent.seen.insert(key);
        let path = join(&parent.path, key);
        let map = match parent.map.and_then(|m| m.get(key)) {
            None | Some(Value::Null) => None,
            Some(Value::Object(m)) => Some(m),
            Some(_) => {
                self.issue(path.clone(), "expected an object");
                None
            }
        };
        Obj {
            path,
            map,
            seen: BTreeSet::new(),
        }
    }

    fn finish(&mut self, obj: Obj<'_>) {
        if let Some(map) = obj.map {
            for key in map.keys() {
                if !obj.seen.contains(key.as_str()) {
                    self.issue(join(&obj.path, key), "unknown key");
                }
            }
        }
    }

    fn raw<'v>(&mut self, obj: &mut Obj<'v>, key: &'static str) -> Option<&'v Value> {
        obj.seen.insert(key);
        obj.map.and_then(|m| m.get(key)).filter(|v| !v.is_null())
    }

    fn required<T>(&mut self, obj: &Obj<'_>, key: &str, v: Option<T>, present: bool) -> Option<T> {
        if !present {
            self.issue(join(&obj.path, key), "required");
        }
        v
    }

    fn uint(&mut self, obj: &mut Obj<'_>, key: &'static str) -> (Option<u64>, bool) {
        match self.raw(obj, key) {
            None => (None, false),
            Some(v) => match v.as_u64() {
                Some(n) => (Some(n), true),
                None => {
                    self.issue(
                        join(&obj.path, key),
                        format!("expected a non-negative integer, got {v}"),
                    );
                    (None, true)
                }
            },
        }
    }

    fn usize_or(&mut self, obj: &mut Obj<'_>, key: &'static str, default: usize) -> usize {
        self.uint(obj, key).0.map_or(default, |n| n as usize)
    }

    fn usize_req(&mut self, obj: &mut Obj<'_>, key: &'static str) -> Option<usize> {
        let (v, present) = self.uint(obj, key);
        self.required(obj, key, v.map(|n| n as usize), present)
    }

    fn float_or(&mut self, obj: &mut Obj<'_>, key: &'static str, default: f64) -> f64 {
        match self.raw(obj, key) {
            None => default,
            Some(v) => v.as_f64().unwrap_or_else(|| {
                self.issue(join(&obj.path, key), format!("expected a number, got {v}"));
                default
            }),
        }
    }

    fn bool_or(&mut self, obj: &mut Obj<'_>, key: &'static str, default: bool) -> bool {
        match self.raw(obj, key) {
            None => default,
            Some(v) => v.as_bool().unwrap_or_else(|| {
                self.issue(
                    join(&obj.path, key),
                    format!("expected true or false, got {v}"),
                );
                default
            }),
        }
    }

    fn string(&mut self, obj: &mut Obj<'_>, key: &'static str) -> (Option<String>, bool) {
        match self.raw(obj, key) {
            None => (None, false),
            Some(Value::String(s)) => (Some(s.clone()), true),
            Some(v) => {
                self.issue(join(&obj.path, key), format!("expected a string, got {v}"));
                (None, true)
            }
        }
    }

    fn path_opt(&mut self, obj: &mut Obj<'_>, key: &'static str) -> Option<PathBuf> {
        self.string(obj, key).0.map(|s| self.base.join(s))
    }

    fn path_req(&mut self, obj: &mut Obj<'_>, key: &'static str) -> Option<PathBuf> {
        let (s, present) = self.string(obj, key);
        self.required(obj, key, s.map(|s| self.base.join(s)), present)
    }

    fn choice<T: Copy>(
        &mut self,
        obj: &mut Obj<'_>,
        key: &'static str,
        options: &[(&str, T)],
        default: Option<T>,
    ) -> Option<T> {
        let (s, present) = self.string(obj, key);
        match s {
            Some(s) => match options.iter().find(|(name, _)| *name == s) {
                Some(&(_, v)) => Some(v),
                None => {
                    let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                    self.issue(
                        join(&obj.path, key),
                        format!("unknown value {s:?}, expected one of {}", names.join(", ")),
                    );
                    None
                }
            },
            None if present => None,
            None => match default {
                Some(d) => Some(d),
                None => {
                    self.issue(join(&obj.path, key), "required");
                    None
                }
            },
        }
    }

    fn file(&mut self, root: &Map<String, Value>) -> Option<ExperimentConfigFile> {
        let mut top = Obj {
            path: String::new(),
            map: Some(root),
            seen: BTreeSet::new(),
        };
        let dataset = self.dataset(&mut top);

        let mut o = self.section(&mut top, "partition");
        let scheme = self.choice(
            &mut o,
            "scheme",
            &[("iid", PartitionKind::Iid), ("niid", PartitionKind::Niid)],
            Some(PartitionKind::Iid),
        );
        let niid_factor = self.usize_or(&mut o, "niid_factor", 1);
        self.finish(o);

        let mut o = self.section(&mut top, "agents");
        let count = self.usize_req(&mut o, "count");
        self.finish(o);

        let mut o = self.section(&mut top, "sampling");
        let fraction = self.float_or(&mut o, "fraction", 1.0);
        let sampler = self.choice(
            &mut o,
            "kind",
            &[("random", SamplerKind::Random)],
            Some(SamplerKind::Random),
        );
        self.finish(o);

        let mut o = self.section(&mut top, "aggregation");
        let aggregator = self.choice(
            &mut o,
            "kind",
            &[
                ("fedavg", AggregatorKind::Fedavg),
                ("fedsgd", AggregatorKind::Fedsgd),
            ],
            Some(AggregatorKind::Fedavg),
        );
        let weighting = self.choice(
            &mut o,
            "weighting",
            &[
                ("uniform", Weighting::Uniform),
                ("by_shard_size", Weighting::ByShardSize),
            ],
            Some(Weighting::ByShardSize),
        );
        self.finish(o);

        let mut o = self.section(&mut top, "model");
        let kind = self.choice(
            &mut o,
            "kind",
            &[("linear", ModelKind::Linear), ("mlp", ModelKind::Mlp)],
            Some(ModelKind::Mlp),
        );
        let hidden_dims = self.hidden_dims(&mut o, kind);
        let mode = self.choice(
            &mut o,
            "mode",
            &[
                ("scratch", TrainingMode::Scratch),
                ("finetune", TrainingMode::Finetune),
                ("feature_extract", TrainingMode::FeatureExtract),
            ],
            Some(TrainingMode::Scratch),
        );
        let pretrained_path = self.path_opt(&mut o, "pretrained_path");
        self.finish(o);

        let mut o = self.section(&mut top, "training");
        let global_epochs = self.usize_req(&mut o, "global_epochs");
        let local_epochs = self.usize_or(&mut o, "local_epochs", 1);
        let batch_size = self.usize_or(&mut o, "batch_size", DEFAULT_BATCH_SIZE);
        let lr = self.float_or(&mut o, "lr", 0.1);
        self.finish(o);

        let mut o = self.section(&mut top, "pretrain");
        let pretrain = PretrainSection {
            epochs: self.usize_or(&mut o, "epochs", 5),
            batch_size: self.usize_or(&mut o, "batch_size", batch_size),
            lr: self.float_or(&mut o, "lr", lr),
        };
        self.finish(o);

        let mut o = self.section(&mut top, "telemetry");
        let format = self.choice(
            &mut o,
            "format",
            &[
                ("jsonl", TelemetryFormat::Jsonl),
                ("csv", TelemetryFormat::Csv),
            ],
            Some(TelemetryFormat::Jsonl),
        );
        let rss_sampling = self.bool_or(&mut o, "rss_sampling", false);
        self.finish(o);

        let seed = self.uint(&mut top, "seed").0.unwrap_or(0);
        self.finish(top);

        Some(ExperimentConfigFile {
            dataset: dataset?,
            partition: PartitionSection {
                scheme: scheme?,
                niid_factor,
            },
            agents: AgentsSection { count: count? },
            sampling: SamplingSection {
                fraction,
                kind: sampler?,
            },
            aggregation: AggregationSection {
                kind: aggregator?,
                weighting: weighting?,
            },
            model: ModelSection {
                kind: kind?,
                hidden_dims,
                mode: mode?,
                pretrained_path,
            },
            training: TrainingSection {
                global_epochs: global_epochs?,
                local_epochs,
                batch_size,
                lr,
            },
            pretrain,
            telemetry: TelemetrySection {
                format: format?,
                rss_sampling,
            },
            seed,
        })
    }

    fn hidden_dims(&mut self, o: &mut Obj<'_>, kind: Option<ModelKind>) -> Vec<usize> {
        let default = match kind {
            Some(ModelKind::Linear) => Vec::new(),
            _ => vec![64],
        };
        match self.raw(o, "hidden_dims") {
            None => default,
            Some(Value::Array(items)) => {
                let dims: Option<Vec<usize>> = items
                    .iter()
                    .map(|v| v.as_u64().map(|n| n as usize))
                    .collect();
                dims.unwrap_or_else(|| {
                    self.issue(
                        join(&o.path, "hidden_dims"),
                        "expected a list of positive integers",
                    );
                    default
                })
            }
            Some(v) => {
                self.issue(
                    join(&o.path, "hidden_dims"),
                    format!("expected a list, got {v}"),
                );
                default
            }
        }
    }

    fn dataset(&mut self, top: &mut Obj<'_>) -> Option<DatasetSection> {
        let mut o = self.section(top, "dataset");
        if o.map.is_none() {
            self.issue("dataset", "required");
            return None;
        }
        let source = self.choice(
            &mut o,
            "source",
            &[("synth", 0), ("idx", 1), ("csv", 2)],
            None,
        );
        let out = match source? {
            0 => {
                let data_seed = self.uint(&mut o, "data_seed").0;
                Some(DatasetSection::Synth {
                    num_classes: self.usize_or(&mut o, "num_classes", 4),
                    num_features: self.usize_or(&mut o, "num_features", 8),
                    train_samples: self.usize_or(&mut o, "train_samples", 2000),
                    test_samples: self.usize_or(&mut o, "test_samples", 500),
                    spread: self.float_or(&mut o, "spread", 0.3),
                    data_seed,
                })
            }
            1 => {
                let train_images = self.path_req(&mut o, "train_images");
                let train_labels = self.path_req(&mut o, "train_labels");
                let test_images = self.path_req(&mut o, "test_images");
                let test_labels = self.path_req(&mut o, "test_labels");
                Some(DatasetSection::Idx {
                    train_images: train_images?,
                    train_labels: train_labels?,
                    test_images: test_images?,
                    test_labels: test_labels?,
                })
            }
            _ => {
                let train_path = self.path_req(&mut o, "train_path");
                let test_path = self.path_req(&mut o, "test_path");
                let has_header = self.bool_or(&mut o, "has_header", true);
                Some(DatasetSection::Csv {
                    train_path: train_path?,
                    test_path: test_path?,
                    has_header,
                })
            }
        };
        self.finish(o);
        out
    }
}

fn join(parent: &str, key: &str) -> String {
    if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    }
}
