//! The `run`, `pretrain` and `inspect-partition` subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use fedsim_core::datamodules::{
    load_csv, load_idx, partition, shard_label_histogram, synth_blobs, DataError, PartitionPlan,
};
use fedsim_core::federated::{pretrain, PretrainConfig};
use fedsim_core::numerics::write_params;
use fedsim_core::rng::{derive_seed, Stream};
use fedsim_core::telemetry::{log_profile, CsvSink, JsonlSink, Profiler, RecordSink};
use fedsim_core::{run_experiment, FederatedError, LabeledDataset, RunOptions};

use crate::config::{
    load_config, ConfigError, DatasetSection, ExperimentConfigFile, TelemetryFormat,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;

/// A failed command, categorised by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Io(_) => EXIT_IO,
            Self::Divergence(_) => EXIT_DIVERGENCE,
            Self::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn io(what: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        Self::Io(format!("{what}: {e}"))
    }
}

impl From<FederatedError> for CliError {
    fn from(e: FederatedError) -> Self {
        let msg = e.to_string();
        match e {
            FederatedError::Config(issues) => Self::Config(ConfigError::Invalid(issues)),
            FederatedError::Incompatible(_) | FederatedError::PretrainedMismatch { .. } => {
                Self::Config(ConfigError::Invalid(vec![
                    fedsim_core::federated::ConfigIssue::new("model", msg),
                ]))
            }
            FederatedError::Divergence { .. } => Self::Divergence(msg),
            FederatedError::ParamFile { .. }
            | FederatedError::Data { .. }
            | FederatedError::Telemetry(_) => Self::Io(msg),
            _ => Self::Internal(msg),
        }
    }
}

fn data_err(what: &str) -> impl Fn(DataError) -> CliError + '_ {
    move |e| match e {
        DataError::Invalid(_) | DataError::TooManyParts { .. } => {
            CliError::Config(ConfigError::Invalid(vec![
                fedsim_core::federated::ConfigIssue::new("dataset", format!("{what}: {e}")),
            ]))
        }
        other => CliError::io(what, other),
    }
}

/// Loads the training and test sets named by the config.
pub fn load_datasets(
    cfg: &ExperimentConfigFile,
) -> Result<(LabeledDataset, LabeledDataset), CliError> {
    match &cfg.dataset {
        DatasetSection::Synth {
            num_classes,
            num_features,
            train_samples,
            test_samples,
            spread,
            data_seed,
        } => {
            let (train_seed, test_seed) = match data_seed {
                Some(s) => (
                    derive_seed(*s, Stream::Data { index: 0 }),
                    derive_seed(*s, Stream::Data { index: 1 }),
                ),
                None => (
                    derive_seed(cfg.seed, Stream::Data { index: 0 }),
                    derive_seed(cfg.seed, Stream::Data { index: 1 }),
                ),
            };
            let make = |n, seed| synth_blobs(n, *num_classes, *num_features, *spread, seed);
            Ok((
                make(*train_samples, train_seed).map_err(data_err("synthetic training set"))?,
                make(*test_samples, test_seed).map_err(data_err("synthetic test set"))?,
            ))
        }
        DatasetSection::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => Ok((
            load_idx(train_images, train_labels).map_err(data_err("training set"))?,
            load_idx(test_images, test_labels).map_err(data_err("test set"))?,
        )),
        DatasetSection::Csv {
            train_path,
            test_path,
            has_header,
        } => {
            let train = load_csv(train_path, *has_header).map_err(data_err("training set"))?;
            let test = load_csv(test_path, *has_header).map_err(data_err("test set"))?;
            // Both sets must agree on the label space the model is built for.
            let classes = train.num_classes().max(test.num_classes());
            let widen = |d: LabeledDataset| d.relabel(classes, |l| l);
            Ok((
                widen(train).map_err(data_err("training set"))?,
                widen(test).map_err(data_err("test set"))?,
            ))
        }
    }
}

fn load(config_path: &Path, seed: Option<u64>) -> Result<ExperimentConfigFile, CliError> {
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn refuse_existing(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        return Err(CliError::Io(format!(
            "{} already exists; refusing to overwrite",
            path.display()
        )));
    }
    Ok(())
}

/// A staging directory beside `target` that is renamed into place on success
/// and removed otherwise.
fn staging_dir(target: &Path) -> Result<tempfile::TempDir, CliError> {
    let parent = match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = target
        .file_name()
        .ok_or_else(|| CliError::Io(format!("{}: not a directory name", target.display())))?;
    tempfile::Builder::new()
        .prefix(&format!(".{}.partial-", name.to_string_lossy()))
        .tempdir_in(&parent)
        .map_err(|e| CliError::io(parent.display(), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

#[derive(Debug, Clone, Serialize)]
struct RunSummary {
    status: &'static str,
    exit_code: u8,
    threads: usize,
    #[serde(flatten)]
    report: serde_json::Value,
}

/// `fedsim run`: executes the experiment and fills `out_dir` with
/// `config.resolved.json`, telemetry, `profile.txt`, `final.flpv` and
/// `summary.json`. The directory appears only once everything is written.
pub fn cmd_run(
    config_path: &Path,
    out_dir: &Path,
    threads: usize,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let cfg = load(config_path, seed)?;
    refuse_existing(out_dir)?;
    let (train, test) = load_datasets(&cfg)?;
    let spec = cfg.model_spec(
        train.num_features(),
        train.num_classes().max(test.num_classes()),
    )?;
    let fl = cfg.fl_config(spec);

    let stage = staging_dir(out_dir)?;
    let dir = stage.path();
    write_text(&dir.join("config.resolved.json"), &cfg.to_resolved_json())?;

    let sink: Box<dyn RecordSink> = match cfg.telemetry.format {
        TelemetryFormat::Jsonl => {
            Box::new(JsonlSink::create(dir.join("telemetry.jsonl")).map_err(FederatedError::from)?)
        }
        TelemetryFormat::Csv => {
            Box::new(CsvSink::create(dir.join("telemetry")).map_err(FederatedError::from)?)
        }
    };
    let profiler = Profiler::new();
    let mut opts = RunOptions::new(sink.as_ref());
    opts.profiler = Some(&profiler);
    opts.threads = threads.max(1);
    opts.rss_sampling = cfg.telemetry.rss_sampling;
    let report = run_experiment(&fl, &train, &test, &opts)?;
    let threads = opts.threads;

    let profile = profiler.report().map_err(FederatedError::from)?;
    for entry in &profile.entries {
        log_profile(sink.as_ref(), entry).map_err(FederatedError::from)?;
    }
    sink.flush().map_err(FederatedError::from)?;
    drop(sink);
    write_text(&dir.join("profile.txt"), &profile.to_table())?;

    let final_path = dir.join("final.flpv");
    write_params(&final_path, &report.final_params)
        .map_err(|e| CliError::io(final_path.display(), e))?;
    let summary = RunSummary {
        status: "ok",
        exit_code: EXIT_OK,
        threads,
        report: report.to_json(),
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serialises");
    text.push('\n');
    write_text(&dir.join("summary.json"), &text)?;

    // Renaming publishes the finished directory in one step. A directory
    // created meanwhile by someone else makes the rename fail rather than merge.
    let staged = stage.keep();
    if let Err(e) = fs::rename(&staged, out_dir) {
        let _ = fs::remove_dir_all(&staged);
        return Err(CliError::io(out_dir.display(), e));
    }
    let fin = report.final_metrics();
    log::info!(
        "finished {} rounds: loss {:.6}, accuracy {:.4}; results in {}",
        report.rounds.len(),
        fin.loss,
        fin.accuracy,
        out_dir.display()
    );
    Ok(())
}

/// `fedsim pretrain`: centralised training on the config's training set,
/// written as an `FLPV` file for later finetune / feature_extract runs.
pub fn cmd_pretrain(
    config_path: &Path,
    out_path: &Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let cfg = load(config_path, seed)?;
    refuse_existing(out_path)?;
    let (train, test) = load_datasets(&cfg)?;
    let spec = cfg.model_spec(
        train.num_features(),
        train.num_classes().max(test.num_classes()),
    )?;
    let pc = PretrainConfig {
        epochs: cfg.pretrain.epochs,
        batch_size: cfg.pretrain.batch_size,
        lr: cfg.pretrain.lr,
        seed: cfg.seed,
    };
    let params = pretrain(&spec, &train, &pc, None)?;
    let mut tmp = out_path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    write_params(&tmp, &params).map_err(|e| CliError::io(tmp.display(), e))?;
    fs::rename(&tmp, out_path).map_err(|e| CliError::io(out_path.display(), e))?;
    log::info!(
        "wrote {} parameters to {}",
        params.len(),
        out_path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ShardHistogram {
    agent: usize,
    size: usize,
    labels: Vec<usize>,
}

/// `fedsim inspect-partition`: one JSON line per agent with its shard size
/// and label histogram, using exactly the split `run` would use.
pub fn cmd_inspect_partition(
    config_path: &Path,
    out_path: &Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let cfg = load(config_path, seed)?;
    refuse_existing(out_path)?;
    let (train, _) = load_datasets(&cfg)?;
    let plan = PartitionPlan {
        scheme: cfg.partition_scheme(),
        num_agents: cfg.agents.count,
        seed: derive_seed(cfg.seed, Stream::Partition),
    };
    let shards = partition(&train, &plan).map_err(data_err("partition"))?;
    let mut out = String::new();
    for s in &shards {
        let line = ShardHistogram {
            agent: s.owner(),
            size: s.len(),
            labels: shard_label_histogram(&train, s),
        };
        out.push_str(&serde_json::to_string(&line).expect("histogram serialises"));
        out.push('\n');
    }
    let mut f = fs::File::create_new(out_path).map_err(|e| CliError::io(out_path.display(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| CliError::io(out_path.display(), e))?;
    Ok(())
}
