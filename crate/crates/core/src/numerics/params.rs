use std::ops::Index;

use super::{NumericsError, Result, TrainableMask};

/// Flat, ordered model parameters. Also used for deltas and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(NumericsError::DimensionMismatch {
                what: "parameter vector length",
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        let out = self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect();
        finite(out)
    }

    /// `self + other`.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        let out = self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect();
        finite(out)
    }

    /// `self += scale * other`, accumulated in place.
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        self.check_len(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        if let Some(index) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { index });
        }
        Ok(())
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn finite(values: Vec<f64>) -> Result<ParamVector> {
    ParamVector::new(values)
}

/// One SGD step: `params[i] - lr * gradient[i]` on every unfrozen index.
pub fn sgd_step(
    params: &ParamVector,
    gradient: &ParamVector,
    lr: f64,
    mask: &TrainableMask,
) -> Result<ParamVector> {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, gradient, lr, mask)?;
    Ok(out)
}

/// In-place form of [`sgd_step`]. Returns the number of entries it updated.
///
/// On error `params` is left untouched.
pub fn sgd_step_in_place(
    params: &mut ParamVector,
    gradient: &ParamVector,
    lr: f64,
    mask: &TrainableMask,
) -> Result<usize> {
    params.check_len(gradient)?;
    if !lr.is_finite() || lr < 0.0 {
        return Err(NumericsError::InvalidLearningRate(lr));
    }
    if let Some(index) = gradient.0.iter().position(|g| !g.is_finite()) {
        return Err(NumericsError::NonFinite { index });
    }
    let mut updated = 0;
    let mut next = params.0.clone();
    for range in mask.trainable_ranges(params.len()) {
        for i in range {
            next[i] -= lr * gradient.0[i];
            updated += 1;
        }
    }
    if let Some(index) = next.iter().position(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite { index });
    }
    params.0 = next;
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{init_params, ModelSpec, TrainingMode};

    #[test]
    fn rejects_non_finite() {
        assert_eq!(
            ParamVector::new(vec![1.0, f64::NAN]),
            Err(NumericsError::NonFinite { index: 1 })
        );
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn zero_lr_is_identity() {
        let p = ParamVector::new(vec![0.1, -3.5, 1e-300]).unwrap();
        let g = ParamVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        let out = sgd_step(&p, &g, 0.0, &TrainableMask::all_trainable()).unwrap();
        for (a, b) in out.iter().zip(p.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn one_step_arithmetic() {
        let p = ParamVector::new(vec![1.0, 2.0]).unwrap();
        let g = ParamVector::new(vec![0.5, -0.5]).unwrap();
        let out = sgd_step(&p, &g, 0.1, &TrainableMask::all_trainable()).unwrap();
        assert_eq!(out.as_slice(), &[0.95, 2.05]);
    }

    #[test]
    fn rejects_bad_gradient() {
        let p = ParamVector::zeros(2);
        let g = ParamVector::from_vec_unchecked(vec![0.0, f64::NAN]);
        assert_eq!(
            sgd_step(&p, &g, 0.1, &TrainableMask::all_trainable()),
            Err(NumericsError::NonFinite { index: 1 })
        );
        let short = ParamVector::zeros(1);
        assert!(matches!(
            sgd_step(&p, &short, 0.1, &TrainableMask::all_trainable()),
            Err(NumericsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn frozen_prefix_survives_many_steps() {
        let spec = ModelSpec::mlp(6, vec![5, 4], 3).unwrap();
        let mask = TrainableMask::for_spec(&spec, TrainingMode::FeatureExtract);
        let start = init_params(&spec, 11);
        let grad = ParamVector::new(vec![0.25; spec.num_params()]).unwrap();
        let mut p = start.clone();
        for _ in 0..100 {
            p = sgd_step(&p, &grad, 0.01, &mask).unwrap();
        }
        let head = spec.layers().last().unwrap().weights.start;
        for i in 0..head {
            assert_eq!(p[i].to_bits(), start[i].to_bits());
        }
        assert!(p
            .iter()
            .skip(head)
            .zip(start.iter().skip(head))
            .all(|(a, b)| a != b));
    }
}
