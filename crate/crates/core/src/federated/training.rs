use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentState, FederatedError, Result};
use crate::datamodules::LabeledDataset;
use crate::numerics::{
    forward, init_params, loss_and_gradient, per_sample_cross_entropy, sgd_step_in_place,
    write_params, BatchMetrics, ModelSpec, NumericsError, ParamVector, TrainableMask,
};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::telemetry::ThreadProfiler;

/// The server's model at the end of round `round` (0 = initialisation).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModelState {
    pub round: u64,
    pub params: ParamVector,
    pub spec: ModelSpec,
}

/// Hyperparameters of an agent's local optimisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

/// Mean training loss/accuracy over one local epoch (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// What an agent sends back to the server after a round.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentUpdate {
    pub agent_id: usize,
    /// Local minus global parameters (FedAvg) or the full-shard gradient (FedSGD).
    pub delta: ParamVector,
    /// Aggregation weight; zero until the server assigns it.
    pub weight: f64,
    pub local_metrics: Vec<EpochMetrics>,
    pub shard_size: usize,
    /// Parameter entries written by the agent's optimiser steps.
    pub updated_elements: u64,
}

enum EpochFailure {
    Diverged { epoch: usize, detail: String },
    Numerics(NumericsError),
}

/// Mini-batch SGD over `indices` for `cfg.epochs` epochs, reshuffling every epoch.
/// The trailing short batch of an epoch is kept.
#[allow(clippy::too_many_arguments)]
fn sgd_epochs<R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &mut ParamVector,
    dataset: &LabeledDataset,
    indices: &[usize],
    cfg: &LocalTraining,
    mask: &TrainableMask,
    rng: &mut R,
    profiler: Option<&ThreadProfiler<'_>>,
) -> std::result::Result<(Vec<EpochMetrics>, u64), EpochFailure> {
    let batch_size = cfg.batch_size.max(1);
    let mut order = indices.to_vec();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut updated = 0u64;
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut correct = 0.0;
        for chunk in order.chunks(batch_size) {
            let (x, y) = dataset.gather(chunk);
            let fb = profiler.map(|p| p.scope("forward_backward"));
            let (m, grad) =
                loss_and_gradient(spec, params, x.view(), &y, mask).map_err(|e| match e {
                    NumericsError::NonFinite { index } => EpochFailure::Diverged {
                        epoch,
                        detail: format!("non-finite gradient at parameter {index}"),
                    },
                    other => EpochFailure::Numerics(other),
                })?;
            drop(fb);
            if !m.loss.is_finite() {
                return Err(EpochFailure::Diverged {
                    epoch,
                    detail: format!("loss is {}", m.loss),
                });
            }
            let _step = profiler.map(|p| p.scope("optimizer_step"));
            updated += sgd_step_in_place(params, &grad, cfg.lr, mask).map_err(|e| match e {
                NumericsError::NonFinite { index } => EpochFailure::Diverged {
                    epoch,
                    detail: format!("parameter {index} overflowed"),
                },
                other => EpochFailure::Numerics(other),
            })? as u64;
            loss_sum += m.loss * chunk.len() as f64;
            correct += m.accuracy * chunk.len() as f64;
        }
        let n = order.len() as f64;
        metrics.push(EpochMetrics {
            epoch,
            loss: loss_sum / n,
            accuracy: correct / n,
        });
    }
    Ok((metrics, updated))
}

/// Trains a copy of the global model on the agent's shard and returns the
/// parameter delta. `global.round` is the round being built upon, so agent
/// errors name round `global.round + 1`.
pub fn local_train<R: Rng + ?Sized>(
    global: &GlobalModelState,
    agent: &AgentState,
    dataset: &LabeledDataset,
    cfg: &LocalTraining,
    mask: &TrainableMask,
    rng: &mut R,
) -> Result<AgentUpdate> {
    local_train_profiled(global, agent, dataset, cfg, mask, rng, None)
}

pub(crate) fn local_train_profiled<R: Rng + ?Sized>(
    global: &GlobalModelState,
    agent: &AgentState,
    dataset: &LabeledDataset,
    cfg: &LocalTraining,
    mask: &TrainableMask,
    rng: &mut R,
    profiler: Option<&ThreadProfiler<'_>>,
) -> Result<AgentUpdate> {
    let round = global.round + 1;
    let context = || format!("agent {} round {round}", agent.id);
    if agent.shard.is_empty() {
        return Err(FederatedError::Data {
            context: context(),
            source: crate::datamodules::DataError::NoSamples,
        });
    }
    let mut local = global.params.clone();
    let (local_metrics, updated_elements) = sgd_epochs(
        &global.spec,
        &mut local,
        dataset,
        agent.shard.indices(),
        cfg,
        mask,
        rng,
        profiler,
    )
    .map_err(|f| match f {
        EpochFailure::Diverged { epoch, detail } => FederatedError::Divergence {
            agent: agent.id,
            round,
            epoch,
            detail,
        },
        EpochFailure::Numerics(source) => FederatedError::Numerics {
            context: context(),
            source,
        },
    })?;
    let delta = local
        .sub(&global.params)
        .map_err(|source| FederatedError::Divergence {
            agent: agent.id,
            round,
            epoch: cfg.epochs,
            detail: source.to_string(),
        })?;
    Ok(AgentUpdate {
        agent_id: agent.id,
        delta,
        weight: 0.0,
        local_metrics,
        shard_size: agent.shard.len(),
        updated_elements,
    })
}

/// FedSGD client step: the masked gradient of the mean loss over the whole
/// shard at the global parameters, carried in `delta`.
pub fn local_gradient(
    global: &GlobalModelState,
    agent: &AgentState,
    dataset: &LabeledDataset,
    mask: &TrainableMask,
) -> Result<AgentUpdate> {
    let round = global.round + 1;
    let (x, y) = dataset.gather(agent.shard.indices());
    let (m, grad) =
        loss_and_gradient(&global.spec, &global.params, x.view(), &y, mask).map_err(|source| {
            match source {
                NumericsError::NonFinite { index } => FederatedError::Divergence {
                    agent: agent.id,
                    round,
                    epoch: 1,
                    detail: format!("non-finite gradient at parameter {index}"),
                },
                source => FederatedError::Numerics {
                    context: format!("agent {} round {round}", agent.id),
                    source,
                },
            }
        })?;
    if !m.loss.is_finite() {
        return Err(FederatedError::Divergence {
            agent: agent.id,
            round,
            epoch: 1,
            detail: format!("loss is {}", m.loss),
        });
    }
    Ok(AgentUpdate {
        agent_id: agent.id,
        updated_elements: mask.trainable_count(grad.len()) as u64,
        delta: grad,
        weight: 0.0,
        local_metrics: vec![EpochMetrics {
            epoch: 1,
            loss: m.loss,
            accuracy: m.accuracy,
        }],
        shard_size: agent.shard.len(),
    })
}

/// Loss and accuracy of the global model over the whole of `dataset`.
///
/// Per-sample losses are summed in sample order, so the batch size only
/// changes how the forward passes are chunked.
pub fn evaluate(
    global: &GlobalModelState,
    dataset: &LabeledDataset,
    batch_size: usize,
) -> Result<BatchMetrics> {
    let n = dataset.len();
    let all: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(n);
    let mut correct = 0usize;
    let numerics = |source| FederatedError::Numerics {
        context: format!("evaluation after round {}", global.round),
        source,
    };
    for chunk in all.chunks(batch_size.max(1)) {
        let (x, y) = dataset.gather(chunk);
        let logits = forward(&global.spec, &global.params, x.view()).map_err(numerics)?;
        let (l, c) = per_sample_cross_entropy(logits.view(), &y).map_err(numerics)?;
        losses.extend(l);
        correct += c;
    }
    Ok(BatchMetrics {
        loss: losses.iter().sum::<f64>() / n as f64,
        accuracy: correct as f64 / n as f64,
    })
}

/// Centralised (non-federated) training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Trains from the seeded initialisation on all of `dataset` and, if
/// `out_path` is given, writes the result as an `FLPV` file.
///
/// The initialisation is the one a scratch experiment with the same seed starts from.
pub fn pretrain(
    spec: &ModelSpec,
    dataset: &LabeledDataset,
    cfg: &PretrainConfig,
    out_path: Option<&Path>,
) -> Result<ParamVector> {
    if dataset.num_features() != spec.input_dim() {
        return Err(FederatedError::Incompatible(format!(
            "dataset has {} features, model expects {}",
            dataset.num_features(),
            spec.input_dim()
        )));
    }
    let mut params = init_params(spec, derive_seed(cfg.seed, Stream::Init));
    let mask = TrainableMask::all_trainable();
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let step = LocalTraining {
        epochs: 1,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
    };
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(
            cfg.seed,
            Stream::Pretrain {
                epoch: epoch as u64,
            },
        );
        sgd_epochs(
            spec,
            &mut params,
            dataset,
            &indices,
            &step,
            &mask,
            &mut rng,
            None,
        )
        .map_err(|f| match f {
            EpochFailure::Diverged { detail, .. } => FederatedError::Divergence {
                agent: 0,
                round: 0,
                epoch: epoch + 1,
                detail,
            },
            EpochFailure::Numerics(source) => FederatedError::Numerics {
                context: format!("pretraining epoch {}", epoch + 1),
                source,
            },
        })?;
    }
    if let Some(path) = out_path {
        write_params(path, &params).map_err(|source| FederatedError::ParamFile {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodules::{synth_blobs, Shard};
    use crate::numerics::{backward, read_params, sgd_step, TrainingMode};

    fn setup(spec: &ModelSpec, n: usize) -> (GlobalModelState, AgentState, LabeledDataset) {
        let data = synth_blobs(n, spec.num_classes(), spec.input_dim(), 0.4, 3).unwrap();
        let agent = AgentState::new(4, Shard::new(4, (0..n).collect()).unwrap());
        let global = GlobalModelState {
            round: 0,
            params: init_params(spec, 12),
            spec: spec.clone(),
        };
        (global, agent, data)
    }

    #[test]
    fn zero_lr_gives_zero_delta() {
        let spec = ModelSpec::mlp(3, vec![4], 3).unwrap();
        let (global, agent, data) = setup(&spec, 30);
        let cfg = LocalTraining {
            epochs: 2,
            batch_size: 7,
            lr: 0.0,
        };
        let u = local_train(
            &global,
            &agent,
            &data,
            &cfg,
            &TrainableMask::all_trainable(),
            &mut stream_rng(0, Stream::Init),
        )
        .unwrap();
        assert!(u.delta.iter().all(|&d| d == 0.0));
        assert_eq!(u.local_metrics.len(), 2);
        assert_eq!(u.local_metrics[1].epoch, 2);
        assert_eq!(u.shard_size, 30);
    }

    #[test]
    fn single_full_batch_epoch_is_one_gradient_step() {
        let spec = ModelSpec::linear(4, 3).unwrap();
        let (global, agent, data) = setup(&spec, 25);
        let lr = 0.3;
        let cfg = LocalTraining {
            epochs: 1,
            batch_size: 100,
            lr,
        };
        let mask = TrainableMask::all_trainable();
        let u = local_train(
            &global,
            &agent,
            &data,
            &cfg,
            &mask,
            &mut stream_rng(1, Stream::Init),
        )
        .unwrap();
        let (x, y) = data.gather(agent.shard.indices());
        let g = backward(&spec, &global.params, x.view(), &y, &mask).unwrap();
        for (d, gi) in u.delta.iter().zip(g.iter()) {
            assert!((d - (-lr * gi)).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_extract_delta_is_zero_on_frozen_ranges() {
        let spec = ModelSpec::mlp(3, vec![5], 3).unwrap();
        let (global, agent, data) = setup(&spec, 40);
        let mask = TrainableMask::for_spec(&spec, TrainingMode::FeatureExtract);
        let cfg = LocalTraining {
            epochs: 3,
            batch_size: 8,
            lr: 0.2,
        };
        let u = local_train(
            &global,
            &agent,
            &data,
            &cfg,
            &mask,
            &mut stream_rng(2, Stream::Init),
        )
        .unwrap();
        let head = spec.layers()[1].weights.start;
        assert!(u.delta.as_slice()[..head].iter().all(|&d| d == 0.0));
        assert!(u.delta.as_slice()[head..].iter().any(|&d| d != 0.0));
        // 3 epochs x 5 batches x trainable head entries
        assert_eq!(u.updated_elements, 3 * 5 * (5 * 3 + 3));
    }

    #[test]
    fn divergence_names_agent_round_epoch() {
        let spec = ModelSpec::linear(2, 2).unwrap();
        let mut data = synth_blobs(10, 2, 2, 0.1, 0).unwrap();
        // flipped labels keep the gradient away from zero until it overflows
        let flipped: Vec<usize> = data.labels().iter().map(|&l| 1 - l).collect();
        data = LabeledDataset::new(data.features().mapv(|v| v * 1e150), flipped, 2).unwrap();
        let agent = AgentState::new(2, Shard::new(2, (0..10).collect()).unwrap());
        let global = GlobalModelState {
            round: 6,
            params: init_params(&spec, 0),
            spec,
        };
        let cfg = LocalTraining {
            epochs: 3,
            batch_size: 10,
            lr: 1e160,
        };
        let err = local_train(
            &global,
            &agent,
            &data,
            &cfg,
            &TrainableMask::all_trainable(),
            &mut stream_rng(0, Stream::Init),
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                FederatedError::Divergence {
                    agent: 2,
                    round: 7,
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn local_gradient_matches_backward() {
        let spec = ModelSpec::mlp(3, vec![4], 3).unwrap();
        let (global, agent, data) = setup(&spec, 20);
        let mask = TrainableMask::all_trainable();
        let u = local_gradient(&global, &agent, &data, &mask).unwrap();
        let (x, y) = data.gather(agent.shard.indices());
        assert_eq!(
            u.delta,
            backward(&spec, &global.params, x.view(), &y, &mask).unwrap()
        );
        assert_eq!(u.local_metrics.len(), 1);
    }

    #[test]
    fn evaluation_is_batch_size_invariant() {
        let spec = ModelSpec::mlp(3, vec![6], 4).unwrap();
        let (global, _, data) = setup(&spec, 97);
        let full = evaluate(&global, &data, 1000).unwrap();
        let single = evaluate(&global, &data, 1).unwrap();
        assert!((full.loss - single.loss).abs() < 1e-10);
        assert_eq!(full.accuracy, single.accuracy);
        assert_eq!(
            evaluate(&global, &data, 13).unwrap(),
            evaluate(&global, &data, 13).unwrap()
        );
    }

    #[test]
    fn uniform_predictions_score_ln_c() {
        let spec = ModelSpec::mlp(3, vec![6], 4).unwrap();
        let (mut global, _, data) = setup(&spec, 40);
        global.params = ParamVector::zeros(spec.num_params());
        let m = evaluate(&global, &data, 16).unwrap();
        assert!((m.loss - 4f64.ln()).abs() < 1e-12);
        // every argmax tie resolves to class 0, which holds a quarter of the samples
        assert!((m.accuracy - 0.25).abs() < 1e-15);
    }

    #[test]
    fn pretrain_zero_epochs_writes_the_seeded_init() {
        let spec = ModelSpec::mlp(3, vec![4], 3).unwrap();
        let data = synth_blobs(30, 3, 3, 0.5, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("init.flpv");
        let cfg = PretrainConfig {
            epochs: 0,
            batch_size: 8,
            lr: 0.5,
            seed: 77,
        };
        let p = pretrain(&spec, &data, &cfg, Some(&path)).unwrap();
        assert_eq!(p, init_params(&spec, derive_seed(77, Stream::Init)));
        assert_eq!(read_params(&path).unwrap(), p);
    }

    #[test]
    fn pretrain_reduces_loss() {
        let spec = ModelSpec::mlp(4, vec![8], 4).unwrap();
        let data = synth_blobs(400, 4, 4, 0.3, 1).unwrap();
        let cfg = PretrainConfig {
            epochs: 10,
            batch_size: 16,
            lr: 0.2,
            seed: 3,
        };
        let trained = pretrain(&spec, &data, &cfg, None).unwrap();
        let before = GlobalModelState {
            round: 0,
            params: init_params(&spec, derive_seed(3, Stream::Init)),
            spec: spec.clone(),
        };
        let after = GlobalModelState {
            params: trained,
            ..before.clone()
        };
        assert!(
            evaluate(&after, &data, 64).unwrap().loss
                < 0.5 * evaluate(&before, &data, 64).unwrap().loss
        );
    }

    #[test]
    fn single_step_matches_sgd_step() {
        let spec = ModelSpec::linear(2, 2).unwrap();
        let (global, agent, data) = setup(&spec, 12);
        let mask = TrainableMask::all_trainable();
        let cfg = LocalTraining {
            epochs: 1,
            batch_size: 12,
            lr: 0.4,
        };
        let u = local_train(
            &global,
            &agent,
            &data,
            &cfg,
            &mask,
            &mut stream_rng(8, Stream::Init),
        )
        .unwrap();
        let (x, y) = data.gather(agent.shard.indices());
        let g = backward(&spec, &global.params, x.view(), &y, &mask).unwrap();
        let stepped = sgd_step(&global.params, &g, 0.4, &mask).unwrap();
        let local = global.params.add(&u.delta).unwrap();
        for (a, b) in local.iter().zip(stepped.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
