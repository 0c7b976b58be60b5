use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use super::agent::{sample_agents, AgentState};
use super::aggregate::{aggregate_fedavg, aggregate_fedsgd, assign_weights};
use super::config::{AggregatorKind, ConfigIssue, FLConfig};
use super::training::{
    evaluate, local_gradient, local_train_profiled, AgentUpdate, GlobalModelState, LocalTraining,
};
use super::{FederatedError, Result};
use crate::datamodules::{partition, LabeledDataset, PartitionPlan};
use crate::numerics::{
    count_params, init_params, read_params, BatchMetrics, ParamCountReport, ParamVector,
    TrainableMask,
};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::telemetry::{
    process_rss_kib, AgentRecord, Profiler, Record, RecordSink, RoundReport, RssSample,
    ThreadProfiler,
};

/// Where an experiment reports to and how much parallelism it may use.
/// None of these change the experiment's numbers.
pub struct RunOptions<'a> {
    pub sink: &'a dyn RecordSink,
    pub profiler: Option<&'a Profiler>,
    /// Upper bound on concurrently training agents; 1 runs everything inline.
    pub threads: usize,
    /// Emit an `rss` record after every round.
    pub rss_sampling: bool,
}

impl<'a> RunOptions<'a> {
    pub fn new(sink: &'a dyn RecordSink) -> Self {
        Self {
            sink,
            profiler: None,
            threads: 1,
            rss_sampling: false,
        }
    }
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub aggregator: AggregatorKind,
    /// Global test metrics before the first round.
    pub initial: BatchMetrics,
    pub rounds: Vec<RoundReport>,
    pub final_params: ParamVector,
    pub param_counts: ParamCountReport,
    /// Parameter entries written by agents' optimiser steps, per round.
    pub updated_elements_per_round: Vec<u64>,
    pub shard_sizes: Vec<usize>,
}

impl ExperimentReport {
    pub fn final_metrics(&self) -> BatchMetrics {
        self.rounds
            .last()
            .map(|r| BatchMetrics {
                loss: r.global_loss,
                accuracy: r.global_accuracy,
            })
            .unwrap_or(self.initial)
    }

    /// Summary document; the parameters themselves are written separately.
    pub fn to_json(&self) -> serde_json::Value {
        let fin = self.final_metrics();
        json!({
            "aggregator_kind": self.aggregator.as_str(),
            "initial": self.initial,
            "final": fin,
            "rounds": self.rounds,
            "param_counts": self.param_counts,
            "updated_elements_per_round": self.updated_elements_per_round,
            "shard_sizes": self.shard_sizes,
            "num_params": self.final_params.len(),
        })
    }
}

fn check_compatible(config: &FLConfig, name: &str, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(FederatedError::Incompatible(format!("{name} set is empty")));
    }
    if data.num_features() != config.model.input_dim() {
        return Err(FederatedError::Incompatible(format!(
            "{name} set has {} features, model expects {}",
            data.num_features(),
            config.model.input_dim()
        )));
    }
    if let Some(&max) = data.labels().iter().max() {
        if max >= config.model.num_classes() {
            return Err(FederatedError::Incompatible(format!(
                "{name} set has label {max}, model has {} classes",
                config.model.num_classes()
            )));
        }
    }
    Ok(())
}

fn initial_params(config: &FLConfig) -> Result<ParamVector> {
    let expected = config.model.num_params();
    match (&config.pretrained_path, config.mode.needs_pretrained()) {
        (Some(path), true) => {
            let p = read_params(path).map_err(|source| FederatedError::ParamFile {
                path: path.display().to_string(),
                source,
            })?;
            if p.len() != expected {
                return Err(FederatedError::PretrainedMismatch {
                    expected,
                    found: p.len(),
                });
            }
            Ok(p)
        }
        _ => Ok(init_params(
            &config.model,
            derive_seed(config.seed, Stream::Init),
        )),
    }
}

fn with_scope<T>(p: Option<&ThreadProfiler<'_>>, label: &str, f: impl FnOnce() -> T) -> T {
    let _guard = p.map(|p| p.scope(label));
    f()
}

/// Runs one federated experiment end to end.
///
/// Partition, initialise (fresh or from the configured parameter file), then
/// for every round: sample agents, train them locally, weight, aggregate and
/// evaluate on `test`. Agent records and then the round record are written to
/// the sink after each round. The result depends only on `config`, `train` and
/// `test`.
pub fn run_experiment(
    config: &FLConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    opts: &RunOptions<'_>,
) -> Result<ExperimentReport> {
    config.validate()?;
    let main = opts.profiler.map(Profiler::thread);
    let prof = main.as_ref();

    let setup = prof.map(|p| p.scope("setup"));
    check_compatible(config, "training", train)?;
    check_compatible(config, "test", test)?;
    let plan = PartitionPlan {
        scheme: config.partition,
        num_agents: config.num_agents,
        seed: derive_seed(config.seed, Stream::Partition),
    };
    let shards = partition(train, &plan).map_err(|source| FederatedError::Data {
        context: "partitioning".into(),
        source,
    })?;
    let agents = AgentState::from_shards(shards);
    let shard_sizes: Vec<usize> = agents.iter().map(|a| a.shard.len()).collect();
    if config.aggregator == AggregatorKind::Fedsgd {
        let largest = shard_sizes.iter().copied().max().unwrap_or(0);
        if config.batch_size < largest {
            return Err(FederatedError::Config(vec![ConfigIssue::new(
                "training.batch_size",
                format!(
                    "fedsgd requires batch_size >= largest shard ({largest}), got {}",
                    config.batch_size
                ),
            )]));
        }
    }
    let mask = TrainableMask::for_spec(&config.model, config.mode);
    let mut global = GlobalModelState {
        round: 0,
        params: initial_params(config)?,
        spec: config.model.clone(),
    };
    let pool = if opts.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.threads)
                .build()
                .map_err(|e| FederatedError::Incompatible(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    drop(setup);

    let initial = with_scope(prof, "evaluate_initial", || {
        evaluate(&global, test, config.batch_size)
    })?;
    log::info!(
        "round 0: loss {:.6} acc {:.4}",
        initial.loss,
        initial.accuracy
    );

    let local_cfg = LocalTraining {
        epochs: config.local_epochs,
        batch_size: config.batch_size,
        lr: config.lr,
    };
    let mut rounds = Vec::with_capacity(config.global_epochs);
    let mut updated_elements_per_round = Vec::with_capacity(config.global_epochs);
    for t in 1..=config.global_epochs as u64 {
        let started = Instant::now();
        let round_scope = prof.map(|p| p.scope("round"));
        let sampled = with_scope(prof, "sample", || {
            sample_agents(
                &agents,
                config.sample_fraction,
                &mut stream_rng(config.seed, Stream::Sampling { round: t }),
            )
        })?;
        let train_agent = |agent: &AgentState, round: u64| -> Result<AgentUpdate> {
            match config.aggregator {
                AggregatorKind::Fedavg => {
                    let worker = opts.profiler.map(|p| p.thread_under("round/local_train"));
                    let mut rng = stream_rng(
                        config.seed,
                        Stream::Shuffle {
                            agent: agent.id as u64,
                            round,
                        },
                    );
                    local_train_profiled(
                        &global,
                        agent,
                        train,
                        &local_cfg,
                        &mask,
                        &mut rng,
                        worker.as_ref(),
                    )
                }
                AggregatorKind::Fedsgd => local_gradient(&global, agent, train, &mask),
            }
        };

        // Ids equal positions in `agents`.
        let chosen: Vec<&AgentState> = sampled.iter().map(|&id| &agents[id]).collect();
        let results: Vec<Result<AgentUpdate>> = with_scope(prof, "local_train", || match &pool {
            Some(pool) => pool.install(|| chosen.par_iter().map(|a| train_agent(a, t)).collect()),
            None => chosen.iter().map(|a| train_agent(a, t)).collect(),
        });
        let mut updates = results.into_iter().collect::<Result<Vec<_>>>()?;
        let params = with_scope(prof, "aggregate", || {
            assign_weights(&mut updates, config.weighting)?;
            match config.aggregator {
                AggregatorKind::Fedavg => aggregate_fedavg(&global.params, &updates),
                AggregatorKind::Fedsgd => aggregate_fedsgd(&global.params, &updates, config.lr),
            }
        })?;
        global.params = params;
        global.round = t;
        let metrics = with_scope(prof, "evaluate", || {
            evaluate(&global, test, config.batch_size)
        })?;
        drop(round_scope);

        for u in &updates {
            for m in &u.local_metrics {
                opts.sink.write(&Record::Agent(AgentRecord {
                    round: t,
                    agent_id: u.agent_id,
                    local_epoch: m.epoch,
                    train_loss: m.loss,
                    train_accuracy: m.accuracy,
                    shard_size: u.shard_size,
                }))?;
            }
        }
        let report = RoundReport {
            round: t,
            sampled_ids: sampled,
            global_loss: metrics.loss,
            global_accuracy: metrics.accuracy,
            wall_time_ms: started.elapsed().as_millis() as u64,
        };
        opts.sink.write(&Record::Round(report.clone()))?;
        if opts.rss_sampling {
            if let Some(rss_kib) = process_rss_kib() {
                opts.sink.write(&Record::Rss(RssSample { t, rss_kib }))?;
            }
        }
        log::info!(
            "round {t}: loss {:.6} acc {:.4}",
            metrics.loss,
            metrics.accuracy
        );
        updated_elements_per_round.push(updates.iter().map(|u| u.updated_elements).sum());
        rounds.push(report);
    }
    opts.sink.flush()?;

    Ok(ExperimentReport {
        aggregator: config.aggregator,
        initial,
        rounds,
        param_counts: count_params(&config.model, &mask),
        final_params: global.params,
        updated_elements_per_round,
        shard_sizes,
    })
}
