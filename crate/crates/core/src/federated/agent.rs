use std::collections::BTreeMap;

use rand::Rng;

use super::{FederatedError, Result};
use crate::datamodules::Shard;

/// A simulated device: an id, its private shard, and free-form metadata for
/// extensions such as reputation scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub shard: Shard,
    pub metadata: BTreeMap<String, String>,
}

impl AgentState {
    pub fn new(id: usize, shard: Shard) -> Self {
        Self {
            id,
            shard,
            metadata: BTreeMap::new(),
        }
    }

    /// One agent per shard, with the shard's owner as id.
    pub fn from_shards(shards: Vec<Shard>) -> Vec<Self> {
        shards
            .into_iter()
            .map(|s| Self::new(s.owner(), s))
            .collect()
    }
}

/// `max(1, ceil(K * fraction))`, never more than `K`.
///
/// The product is nudged down by 1e-9 before rounding up so that fractions
/// such as 0.7 with K = 10 give 7, not 8.
pub fn sample_count(num_agents: usize, fraction: f64) -> usize {
    let raw = (num_agents as f64 * fraction - 1e-9).ceil();
    (raw.max(1.0) as usize).min(num_agents)
}

/// Picks `sample_count(K, fraction)` distinct agents uniformly without
/// replacement and returns their ids in ascending order.
pub fn sample_agents<R: Rng + ?Sized>(
    agents: &[AgentState],
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if agents.is_empty() {
        return Err(FederatedError::NoAgents);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FederatedError::Config(vec![super::ConfigIssue::new(
            "sampling.fraction",
            format!("must lie in (0, 1], got {fraction}"),
        )]));
    }
    let m = sample_count(agents.len(), fraction);
    let mut ids: Vec<usize> = rand::seq::index::sample(rng, agents.len(), m)
        .into_iter()
        .map(|i| agents[i].id)
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn agents(k: usize) -> Vec<AgentState> {
        (0..k)
            .map(|i| AgentState::new(i, Shard::new(i, vec![i]).unwrap()))
            .collect()
    }

    #[test]
    fn counts() {
        assert_eq!(sample_count(100, 0.1), 10);
        assert_eq!(sample_count(20, 0.25), 5);
        assert_eq!(sample_count(10, 0.7), 7);
        assert_eq!(sample_count(10, 0.71), 8);
        assert_eq!(sample_count(3, 0.01), 1);
        assert_eq!(sample_count(7, 1.0), 7);
    }

    #[test]
    fn hundred_agents_ten_percent() {
        let a = agents(100);
        let ids =
            sample_agents(&a, 0.1, &mut stream_rng(1, Stream::Sampling { round: 1 })).unwrap();
        assert_eq!(ids.len(), 10);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert!(ids.iter().all(|&i| i < 100));
    }

    #[test]
    fn full_fraction_takes_everyone() {
        let a = agents(9);
        let ids =
            sample_agents(&a, 1.0, &mut stream_rng(0, Stream::Sampling { round: 4 })).unwrap();
        assert_eq!(ids, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn errors() {
        let mut rng = stream_rng(0, Stream::Init);
        assert!(matches!(
            sample_agents(&[], 0.5, &mut rng),
            Err(FederatedError::NoAgents)
        ));
        assert!(sample_agents(&agents(3), 0.0, &mut rng).is_err());
    }

    #[test]
    fn same_round_same_set_and_rounds_vary() {
        let a = agents(50);
        let pick =
            |round| sample_agents(&a, 0.2, &mut stream_rng(9, Stream::Sampling { round })).unwrap();
        assert_eq!(pick(3), pick(3));
        assert!((1..20).any(|t| pick(t) != pick(t + 1)));
    }

    // Over 1000 rounds each agent's selection count should be Binomial(1000, 0.1).
    #[test]
    fn selection_frequency_matches_fraction() {
        let a = agents(40);
        let rounds = 1000u64;
        let mut hits = vec![0u32; 40];
        for t in 1..=rounds {
            for id in
                sample_agents(&a, 0.1, &mut stream_rng(5, Stream::Sampling { round: t })).unwrap()
            {
                hits[id] += 1;
            }
        }
        let mean = rounds as f64 * 0.1;
        let sigma = (rounds as f64 * 0.1 * 0.9).sqrt();
        // 40 cells at 3 sigma leave about a 10% chance of one outlier, so
        // allow two and bound everything at 4 sigma.
        let z: Vec<f64> = hits
            .iter()
            .map(|&h| (h as f64 - mean).abs() / sigma)
            .collect();
        assert!(z.iter().filter(|&&z| z > 3.0).count() <= 2, "{hits:?}");
        assert!(z.iter().all(|&z| z <= 4.0), "{hits:?}");
    }
}
