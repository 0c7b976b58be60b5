//! Server-side reduction of agent updates.
//!
//! Both aggregators reduce in ascending agent-id order whatever order the
//! updates arrive in, so results do not depend on training concurrency.

use super::config::Weighting;
use super::training::AgentUpdate;
use super::{FederatedError, Result};
use crate::numerics::ParamVector;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Aggregation weights for agents with the given shard sizes; they sum to one.
pub fn compute_weights(weighting: Weighting, shard_sizes: &[usize]) -> Result<Vec<f64>> {
    if shard_sizes.is_empty() {
        return Err(FederatedError::Aggregation("no updates to weight".into()));
    }
    match weighting {
        Weighting::Uniform => {
            let w = 1.0 / shard_sizes.len() as f64;
            Ok(vec![w; shard_sizes.len()])
        }
        Weighting::ByShardSize => {
            let total: usize = shard_sizes.iter().sum();
            if total == 0 {
                return Err(FederatedError::Aggregation(
                    "total shard size is zero".into(),
                ));
            }
            let total = total as f64;
            Ok(shard_sizes.iter().map(|&s| s as f64 / total).collect())
        }
    }
}

/// Fills in `weight` on every update from its shard size.
pub fn assign_weights(updates: &mut [AgentUpdate], weighting: Weighting) -> Result<()> {
    let sizes: Vec<usize> = updates.iter().map(|u| u.shard_size).collect();
    for (u, w) in updates.iter_mut().zip(compute_weights(weighting, &sizes)?) {
        u.weight = w;
    }
    Ok(())
}

/// `sum_i weight_i * delta_i` in ascending id order.
fn weighted_sum(global_len: usize, updates: &[AgentUpdate]) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(FederatedError::Aggregation(
            "no updates to aggregate".into(),
        ));
    }
    let mut ordered: Vec<&AgentUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.agent_id);
    if let Some(w) = ordered.windows(2).find(|w| w[0].agent_id == w[1].agent_id) {
        return Err(FederatedError::Aggregation(format!(
            "duplicate update from agent {}",
            w[0].agent_id
        )));
    }
    let mut sum = 0.0;
    for u in &ordered {
        if u.delta.len() != global_len {
            return Err(FederatedError::Aggregation(format!(
                "agent {} sent {} values, global model has {}",
                u.agent_id,
                u.delta.len(),
                global_len
            )));
        }
        if !(u.weight.is_finite() && u.weight >= 0.0) {
            return Err(FederatedError::Aggregation(format!(
                "agent {} has invalid weight {}",
                u.agent_id, u.weight
            )));
        }
        sum += u.weight;
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(FederatedError::Aggregation(format!(
            "weights sum to {sum}, expected 1"
        )));
    }
    let mut acc = vec![0.0; global_len];
    for u in ordered {
        for (a, d) in acc.iter_mut().zip(u.delta.iter()) {
            *a += u.weight * d;
        }
    }
    Ok(acc)
}

fn apply(global: &ParamVector, step: &[f64], scale: f64) -> Result<ParamVector> {
    let out: Vec<f64> = global
        .iter()
        .zip(step)
        // A zero step must leave the parameter bit-identical (frozen ranges).
        .map(|(&g, &s)| if s == 0.0 { g } else { g + scale * s })
        .collect();
    ParamVector::new(out).map_err(|source| FederatedError::Numerics {
        context: "aggregation".into(),
        source,
    })
}

/// FedAvg: `global + sum_i weight_i * delta_i`.
pub fn aggregate_fedavg(global: &ParamVector, updates: &[AgentUpdate]) -> Result<ParamVector> {
    let step = weighted_sum(global.len(), updates)?;
    apply(global, &step, 1.0)
}

/// FedSGD: each update's `delta` carries a full-shard gradient;
/// the result is `global - lr * sum_i weight_i * gradient_i`.
pub fn aggregate_fedsgd(
    global: &ParamVector,
    updates: &[AgentUpdate],
    lr: f64,
) -> Result<ParamVector> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(FederatedError::Aggregation(format!(
            "invalid learning rate {lr}"
        )));
    }
    let step = weighted_sum(global.len(), updates)?;
    apply(global, &step, -lr)
}
