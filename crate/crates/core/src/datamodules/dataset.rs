use ndarray::{Array2, ArrayView2, Axis};

use super::{DataError, Result};

/// Features plus integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(DataError::NoSamples);
        }
        if features.nrows() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DataError::InvalidLabel {
                index,
                label,
                num_classes,
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies the rows at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let x = self.features.select(Axis(0), indices);
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Same features, labels rewritten by `map`.
    pub fn relabel(&self, num_classes: usize, map: impl Fn(usize) -> usize) -> Result<Self> {
        Self::new(
            self.features.clone(),
            self.labels.iter().map(|&l| map(l)).collect(),
            num_classes,
        )
    }
}

/// The sample indices owned by one agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    owner: usize,
    indices: Vec<usize>,
}

impl Shard {
    /// `indices` must be strictly increasing.
    pub fn new(owner: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Invalid(format!(
                "shard {owner}: indices must be strictly increasing"
            )));
        }
        Ok(Self { owner, indices })
    }

    pub(crate) fn from_unsorted(owner: usize, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { owner, indices }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Per-class sample counts of `shard`.
///
/// # Panics
///
/// If the shard references an index outside `dataset`.
pub fn shard_label_histogram(dataset: &LabeledDataset, shard: &Shard) -> Vec<usize> {
    let mut h = vec![0; dataset.num_classes()];
    for &i in shard.indices() {
        h[dataset.labels()[i]] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn validates_construction() {
        assert!(matches!(
            LabeledDataset::new(Array2::zeros((0, 2)), vec![], 2),
            Err(DataError::NoSamples)
        ));
        assert!(matches!(
            LabeledDataset::new(Array2::zeros((2, 2)), vec![0, 2], 2),
            Err(DataError::InvalidLabel {
                index: 1,
                label: 2,
                ..
            })
        ));
        assert!(LabeledDataset::new(Array2::zeros((2, 2)), vec![0], 2).is_err());
    }

    #[test]
    fn shard_indices_must_increase() {
        assert!(Shard::new(0, vec![1, 1]).is_err());
        assert!(Shard::new(0, vec![2, 1]).is_err());
        assert!(Shard::new(0, vec![]).is_ok());
    }

    #[test]
    fn histograms() {
        let d =
            LabeledDataset::new(array![[0.0], [1.0], [2.0], [3.0]], vec![1, 0, 1, 2], 4).unwrap();
        assert_eq!(
            shard_label_histogram(&d, &Shard::new(0, vec![]).unwrap()),
            vec![0; 4]
        );
        assert_eq!(
            shard_label_histogram(&d, &Shard::new(0, vec![0, 2, 3]).unwrap()),
            vec![0, 2, 1, 0]
        );
        assert_eq!(d.label_histogram(), vec![1, 2, 1, 0]);
        let (x, y) = d.gather(&[3, 0]);
        assert_eq!(x, array![[3.0], [0.0]]);
        assert_eq!(y, vec![2, 1]);
    }
}
