use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::ModelSpec;

/// How a model's parameters are initialised and which of them are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Random initialisation, everything trained.
    #[default]
    Scratch,
    /// Pretrained initialisation, everything trained.
    Finetune,
    /// Pretrained initialisation, only the classification layer trained.
    FeatureExtract,
}

impl TrainingMode {
    pub fn needs_pretrained(self) -> bool {
        !matches!(self, TrainingMode::Scratch)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingMode::Scratch => "scratch",
            TrainingMode::Finetune => "finetune",
            TrainingMode::FeatureExtract => "feature_extract",
        }
    }
}

/// Parameter index ranges excluded from gradient updates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableMask {
    mode: TrainingMode,
    frozen: Vec<Range<usize>>,
}

impl TrainableMask {
    /// A mask that freezes nothing.
    pub fn all_trainable() -> Self {
        Self {
            mode: TrainingMode::Scratch,
            frozen: Vec::new(),
        }
    }

    /// The mask implied by `mode` for `spec`.
    ///
    /// Feature extraction freezes every layer except the last one. A linear
    /// model's single layer is its classification layer, so nothing is frozen.
    pub fn for_spec(spec: &ModelSpec, mode: TrainingMode) -> Self {
        let frozen = match mode {
            TrainingMode::Scratch | TrainingMode::Finetune => Vec::new(),
            TrainingMode::FeatureExtract => {
                let head = spec.layers().last().map(|l| l.weights.start).unwrap_or(0);
                // one contiguous frozen range: everything before the head
                (head > 0).then_some(0..head).into_iter().collect()
            }
        };
        Self { mode, frozen }
    }

    pub fn mode(&self) -> TrainingMode {
        self.mode
    }

    pub fn frozen_ranges(&self) -> &[Range<usize>] {
        &self.frozen
    }

    pub fn is_frozen(&self, index: usize) -> bool {
        self.frozen.iter().any(|r| r.contains(&index))
    }

    /// Complement of the frozen ranges inside `[0, len)`, in ascending order.
    pub fn trainable_ranges(&self, len: usize) -> Vec<Range<usize>> {
        let mut frozen: Vec<Range<usize>> = self
            .frozen
            .iter()
            .map(|r| r.start.min(len)..r.end.min(len))
            .filter(|r| !r.is_empty())
            .collect();
        frozen.sort_by_key(|r| r.start);
        let mut out = Vec::new();
        let mut cursor = 0;
        for r in frozen {
            if r.start > cursor {
                out.push(cursor..r.start);
            }
            cursor = cursor.max(r.end);
        }
        if cursor < len {
            out.push(cursor..len);
        }
        out
    }

    pub fn trainable_count(&self, len: usize) -> usize {
        self.trainable_ranges(len).iter().map(|r| r.len()).sum()
    }

    /// Zeroes every frozen entry of `values`.
    pub(crate) fn zero_frozen(&self, values: &mut [f64]) {
        for r in &self.frozen {
            let end = r.end.min(values.len());
            let start = r.start.min(end);
            values[start..end].fill(0.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCountReport {
    pub trainable: usize,
    pub non_trainable: usize,
    pub total: usize,
}

pub fn count_params(spec: &ModelSpec, mask: &TrainableMask) -> ParamCountReport {
    let total = spec.num_params();
    let trainable = mask.trainable_count(total);
    ParamCountReport {
        trainable,
        non_trainable: total - trainable,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_accounting() {
        let spec = ModelSpec::mlp(784, vec![64], 10).unwrap();
        let scratch = count_params(
            &spec,
            &TrainableMask::for_spec(&spec, TrainingMode::Scratch),
        );
        assert_eq!(
            scratch,
            ParamCountReport {
                trainable: 50890,
                non_trainable: 0,
                total: 50890
            }
        );
        let fe = count_params(
            &spec,
            &TrainableMask::for_spec(&spec, TrainingMode::FeatureExtract),
        );
        assert_eq!(fe.trainable, 650);
        assert_eq!(fe.non_trainable, 50240);
        assert_eq!(fe.total, 50890);
    }

    #[test]
    fn linear_feature_extract_trains_everything() {
        let spec = ModelSpec::linear(5, 3).unwrap();
        let mask = TrainableMask::for_spec(&spec, TrainingMode::FeatureExtract);
        assert!(mask.frozen_ranges().is_empty());
        let report = count_params(&spec, &mask);
        assert_eq!(report.trainable, report.total);
        assert_eq!(report.non_trainable, 0);
    }

    #[test]
    fn finetune_freezes_nothing() {
        let spec = ModelSpec::mlp(3, vec![4, 4], 2).unwrap();
        let mask = TrainableMask::for_spec(&spec, TrainingMode::Finetune);
        assert!(mask.frozen_ranges().is_empty());
    }

    #[test]
    fn complement_ranges() {
        let mask = TrainableMask {
            mode: TrainingMode::FeatureExtract,
            frozen: vec![5..8, 0..2],
        };
        assert_eq!(mask.trainable_ranges(10), vec![2..5, 8..10]);
        assert_eq!(mask.trainable_count(10), 5);
        assert!(mask.is_frozen(6) && !mask.is_frozen(8));
    }
}
