//! Splitting a dataset into per-agent shards.
//!
//! * IID: a seeded, label-stratified permutation of all indices dealt
//!   round-robin, so shards match the global label distribution.
//! * Non-IID: indices sorted by `(label, index)` are cut into `K * f`
//!   contiguous blocks whose sizes differ by at most one; a seeded permutation
//!   of block ids hands every agent `f` blocks. Larger `f` means more, smaller
//!   label-pure blocks per agent, so each agent sees more distinct labels.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, LabeledDataset, Result, Shard};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionScheme {
    Iid,
    NonIid { niid_factor: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub num_agents: usize,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn iid(num_agents: usize, seed: u64) -> Self {
        Self {
            scheme: PartitionScheme::Iid,
            num_agents,
            seed,
        }
    }

    pub fn niid(num_agents: usize, niid_factor: usize, seed: u64) -> Self {
        Self {
            scheme: PartitionScheme::NonIid { niid_factor },
            num_agents,
            seed,
        }
    }
}

pub fn partition(dataset: &LabeledDataset, plan: &PartitionPlan) -> Result<Vec<Shard>> {
    match plan.scheme {
        PartitionScheme::Iid => partition_iid(dataset, plan.num_agents, plan.seed),
        PartitionScheme::NonIid { niid_factor } => {
            partition_niid(dataset, plan.num_agents, niid_factor, plan.seed)
        }
    }
}

pub fn partition_iid(dataset: &LabeledDataset, num_agents: usize, seed: u64) -> Result<Vec<Shard>> {
    let n = dataset.len();
    if num_agents == 0 || num_agents > n {
        return Err(DataError::TooManyParts {
            parts: num_agents,
            samples: n,
        });
    }
    // Shuffle within each class, then deal the classes one after another
    // with a running counter: every agent gets each class within one sample
    // of an even share.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = vec![Vec::new(); dataset.num_classes()];
    for (i, &label) in dataset.labels().iter().enumerate() {
        by_class[label].push(i);
    }
    let mut order = Vec::with_capacity(n);
    for mut class in by_class {
        class.shuffle(&mut rng);
        order.extend(class);
    }
    let mut buckets = vec![Vec::with_capacity(n / num_agents + 1); num_agents];
    for (i, idx) in order.into_iter().enumerate() {
        buckets[i % num_agents].push(idx);
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(owner, idx)| Shard::from_unsorted(owner, idx))
        .collect())
}

pub fn partition_niid(
    dataset: &LabeledDataset,
    num_agents: usize,
    niid_factor: usize,
    seed: u64,
) -> Result<Vec<Shard>> {
    let blocks = check_blocks(dataset, num_agents, niid_factor)?;
    let mut order: Vec<usize> = (0..blocks).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    partition_niid_with_block_order(dataset, num_agents, niid_factor, &order)
}

/// Non-IID split with an explicit block assignment: agent `k` receives blocks
/// `block_order[k*f .. (k+1)*f]`. `block_order` must be a permutation of `0..K*f`.
pub fn partition_niid_with_block_order(
    dataset: &LabeledDataset,
    num_agents: usize,
    niid_factor: usize,
    block_order: &[usize],
) -> Result<Vec<Shard>> {
    let blocks = check_blocks(dataset, num_agents, niid_factor)?;
    let mut seen = vec![false; blocks];
    if block_order.len() != blocks
        || !block_order
            .iter()
            .all(|&b| b < blocks && !std::mem::replace(&mut seen[b], true))
    {
        return Err(DataError::Invalid(format!(
            "block order must be a permutation of 0..{blocks}"
        )));
    }

    let labels = dataset.labels();
    let mut sorted: Vec<usize> = (0..dataset.len()).collect();
    sorted.sort_by_key(|&i| (labels[i], i));

    let n = sorted.len();
    let base = n / blocks;
    let extra = n % blocks;
    let mut bounds = Vec::with_capacity(blocks + 1);
    bounds.push(0);
    for b in 0..blocks {
        let size = base + usize::from(b < extra);
        bounds.push(bounds[b] + size);
    }

    Ok(block_order
        .chunks(niid_factor)
        .enumerate()
        .map(|(owner, assigned)| {
            let idx = assigned
                .iter()
                .flat_map(|&b| sorted[bounds[b]..bounds[b + 1]].iter().copied())
                .collect();
            Shard::from_unsorted(owner, idx)
        })
        .collect())
}

fn check_blocks(dataset: &LabeledDataset, num_agents: usize, niid_factor: usize) -> Result<usize> {
    if niid_factor == 0 {
        return Err(DataError::Invalid("niid_factor must be at least 1".into()));
    }
    let blocks = num_agents.saturating_mul(niid_factor);
    if num_agents == 0 || blocks > dataset.len() {
        return Err(DataError::TooManyParts {
            parts: blocks,
            samples: dataset.len(),
        });
    }
    Ok(blocks)
}
