use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{argmax, BatchMetrics};
use super::{NumericsError, ParamVector, Result, TrainableMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Architecture of a dense classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    kind: ModelKind,
    input_dim: usize,
    hidden_dims: Vec<usize>,
    num_classes: usize,
    activation: Activation,
}

/// Where one dense layer lives inside the flat parameter vector.
///
/// Weights are stored row-major as a `fan_in x fan_out` matrix, so a layer
/// computes `x W + b` for a row vector `x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

impl LayerLayout {
    /// The full `weights.start..bias.end` range.
    pub fn range(&self) -> Range<usize> {
        self.weights.start..self.bias.end
    }
}

impl ModelSpec {
    pub fn new(
        kind: ModelKind,
        input_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(NumericsError::InvalidSpec(
                "input_dim must be positive".into(),
            ));
        }
        if num_classes < 2 {
            return Err(NumericsError::InvalidSpec(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        match kind {
            ModelKind::Linear if !hidden_dims.is_empty() => {
                return Err(NumericsError::InvalidSpec(
                    "a linear model has no hidden layers".into(),
                ))
            }
            ModelKind::Mlp if hidden_dims.is_empty() => {
                return Err(NumericsError::InvalidSpec(
                    "an mlp needs at least one hidden layer".into(),
                ))
            }
            _ => {}
        }
        if hidden_dims.contains(&0) {
            return Err(NumericsError::InvalidSpec(
                "hidden layer widths must be positive".into(),
            ));
        }
        Ok(Self {
            kind,
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
        })
    }

    pub fn linear(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Linear, input_dim, Vec::new(), num_classes)
    }

    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Mlp, input_dim, hidden_dims, num_classes)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> Vec<LayerLayout> {
        let widths: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(self.num_classes))
            .collect();
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = offset..offset + fan_in * fan_out;
                let bias = weights.end..weights.end + fan_out;
                offset = bias.end;
                LayerLayout {
                    fan_in,
                    fan_out,
                    weights,
                    bias,
                }
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().last().map(|l| l.bias.end).unwrap_or(0)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(NumericsError::DimensionMismatch {
                what: "parameter count",
                expected: self.num_params(),
                found: params.len(),
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.input_dim {
            return Err(NumericsError::DimensionMismatch {
                what: "feature columns",
                expected: self.input_dim,
                found: batch.ncols(),
            });
        }
        Ok(())
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.num_params()];
    for layer in spec.layers() {
        let bound = 1.0 / (layer.fan_in as f64).sqrt();
        for v in &mut values[layer.weights] {
            *v = rng.random_range(-bound..bound);
        }
    }
    ParamVector::from_vec_unchecked(values)
}

fn layer_views<'a>(
    layer: &LayerLayout,
    params: &'a ParamVector,
) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let w = ArrayView2::from_shape(
        (layer.fan_in, layer.fan_out),
        &params.as_slice()[layer.weights.clone()],
    )
    .expect("layer layout matches parameter slice");
    let b = ArrayView1::from(&params.as_slice()[layer.bias.clone()]);
    (w, b)
}

/// Pre-activations of every layer. The last entry holds the logits.
fn forward_all(
    layers: &[LayerLayout],
    params: &ParamVector,
    batch: ArrayView2<'_, f64>,
) -> Vec<Array2<f64>> {
    let mut pre = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let (w, b) = layer_views(layer, params);
        let mut z = if i == 0 {
            batch.dot(&w)
        } else {
            relu(&pre[i - 1]).dot(&w)
        };
        z += &b;
        pre.push(z);
    }
    pre
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

/// Logits for every row of `batch`.
pub fn forward(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    spec.check_params(params)?;
    spec.check_batch(&batch)?;
    let layers = spec.layers();
    let mut pre = forward_all(&layers, params, batch);
    Ok(pre.pop().expect("at least one layer"))
}

/// Gradient of the mean cross-entropy with respect to `params`; frozen entries are zero.
pub fn backward(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: ArrayView2<'_, f64>,
    labels: &[usize],
    mask: &TrainableMask,
) -> Result<ParamVector> {
    loss_and_gradient(spec, params, batch, labels, mask).map(|(_, g)| g)
}

/// Batch loss/accuracy at `params` together with the masked gradient.
pub fn loss_and_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: ArrayView2<'_, f64>,
    labels: &[usize],
    mask: &TrainableMask,
) -> Result<(BatchMetrics, ParamVector)> {
    spec.check_params(params)?;
    spec.check_batch(&batch)?;
    let rows = batch.nrows();
    if rows == 0 {
        return Err(NumericsError::EmptyBatch);
    }
    if labels.len() != rows {
        return Err(NumericsError::DimensionMismatch {
            what: "label count",
            expected: rows,
            found: labels.len(),
        });
    }
    let layers = spec.layers();
    let pre = forward_all(&layers, params, batch);
    let logits = pre.last().expect("at least one layer");

    // dL/dlogits = (softmax - onehot) / rows
    let scale = 1.0 / rows as f64;
    let mut dz = Array2::<f64>::zeros(logits.raw_dim());
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (row, ((z, mut dz_row), &label)) in logits
        .outer_iter()
        .zip(dz.outer_iter_mut())
        .zip(labels)
        .enumerate()
    {
        if label >= spec.num_classes {
            return Err(NumericsError::LabelOutOfRange {
                row,
                label,
                num_classes: spec.num_classes,
            });
        }
        let (best, max) = argmax(z.iter().copied());
        let exps: Array1<f64> = z.mapv(|v| (v - max).exp());
        let sum = exps.sum();
        loss_sum += (max - z[label]) + sum.ln();
        if best == label {
            correct += 1;
        }
        for (j, (d, e)) in dz_row.iter_mut().zip(exps.iter()).enumerate() {
            let p = e / sum;
            *d = (if j == label { p - 1.0 } else { p }) * scale;
        }
    }
    let metrics = BatchMetrics {
        loss: loss_sum * scale,
        accuracy: correct as f64 * scale,
    };

    // Layers ending at or before this index are fully frozen and need no gradient.
    let first_trainable = mask
        .trainable_ranges(params.len())
        .first()
        .map(|r| r.start)
        .unwrap_or(params.len());

    let mut grad = vec![0.0; params.len()];
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        if layer.bias.end <= first_trainable {
            break;
        }
        let input = if l == 0 {
            batch.to_owned()
        } else {
            relu(&pre[l - 1])
        };
        let gw = input.t().dot(&dz);
        let gb = dz.sum_axis(Axis(0));
        for (dst, src) in grad[layer.weights.clone()].iter_mut().zip(gw.iter()) {
            *dst = *src;
        }
        for (dst, src) in grad[layer.bias.clone()].iter_mut().zip(gb.iter()) {
            *dst = *src;
        }
        if l > 0 {
            let (w, _) = layer_views(layer, params);
            let mut da = dz.dot(&w.t());
            da.zip_mut_with(&pre[l - 1], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            dz = da;
        }
    }
    mask.zero_frozen(&mut grad);
    let grad = ParamVector::new(grad)?;
    Ok((metrics, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cross_entropy, TrainingMode};
    use ndarray::array;
    use proptest::prelude::*;

    /// Explicit-loop forward pass used as an oracle.
    fn naive_forward(spec: &ModelSpec, params: &[f64], batch: &Array2<f64>) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for r in 0..batch.nrows() {
            let mut act: Vec<f64> = batch.row(r).to_vec();
            let layers = spec.layers();
            for (li, layer) in layers.iter().enumerate() {
                let mut next = vec![0.0; layer.fan_out];
                for (o, slot) in next.iter_mut().enumerate() {
                    let mut s = params[layer.bias.start + o];
                    for (i, a) in act.iter().enumerate() {
                        s += a * params[layer.weights.start + i * layer.fan_out + o];
                    }
                    *slot = if li + 1 < layers.len() { s.max(0.0) } else { s };
                }
                act = next;
            }
            out.push(act);
        }
        out
    }

    fn mean_loss(spec: &ModelSpec, p: &[f64], batch: &Array2<f64>, labels: &[usize]) -> f64 {
        let params = ParamVector::from_vec_unchecked(p.to_vec());
        let logits = forward(spec, &params, batch.view()).unwrap();
        cross_entropy(logits.view(), labels).unwrap().loss
    }

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn parameter_counts() {
        let linear = ModelSpec::linear(4, 3).unwrap();
        assert_eq!(linear.num_params(), 15);
        let p = init_params(&linear, 3);
        assert_eq!(p.len(), 15);
        assert!(p.as_slice()[12..].iter().all(|&b| b == 0.0));

        let mlp = ModelSpec::mlp(784, vec![64], 10).unwrap();
        assert_eq!(mlp.num_params(), 784 * 64 + 64 + 64 * 10 + 10);
        assert_eq!(mlp.num_params(), 50890);
    }

    #[test]
    fn layers_tile_the_parameter_vector() {
        let spec = ModelSpec::mlp(7, vec![5, 3, 4], 2).unwrap();
        let mut cursor = 0;
        for l in spec.layers() {
            assert_eq!(l.weights.start, cursor);
            assert_eq!(l.weights.end, l.bias.start);
            cursor = l.bias.end;
        }
        assert_eq!(cursor, spec.num_params());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = ModelSpec::mlp(9, vec![4], 3).unwrap();
        let a = init_params(&spec, 5);
        let b = init_params(&spec, 5);
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, init_params(&spec, 6));
        for l in spec.layers() {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            assert!(a.as_slice()[l.weights].iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(ModelSpec::linear(0, 3).is_err());
        assert!(ModelSpec::linear(3, 1).is_err());
        assert!(ModelSpec::mlp(3, vec![], 2).is_err());
        assert!(ModelSpec::mlp(3, vec![0], 2).is_err());
        assert!(ModelSpec::new(ModelKind::Linear, 3, vec![2], 2).is_err());
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let spec = ModelSpec::mlp(3, vec![4], 5).unwrap();
        let batch = array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]];
        let logits = forward(&spec, &ParamVector::zeros(spec.num_params()), batch.view()).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        assert_eq!(logits.dim(), (2, 5));
    }

    #[test]
    fn affine_arithmetic() {
        // 1 input, 2 classes: class 0 has weight 2 and bias 1.
        let spec = ModelSpec::linear(1, 2).unwrap();
        let params = ParamVector::new(vec![2.0, 0.0, 1.0, 0.0]).unwrap();
        let logits = forward(&spec, &params, array![[3.0]].view()).unwrap();
        assert_eq!(logits[[0, 0]], 7.0);
        assert_eq!(logits[[0, 1]], 0.0);
    }

    #[test]
    fn forward_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let spec = ModelSpec::mlp(6, vec![5, 4], 3).unwrap();
        let params = init_params(&spec, 1);
        let batch = random_batch(&mut rng, 4, 6);
        let fast = forward(&spec, &params, batch.view()).unwrap();
        let slow = naive_forward(&spec, params.as_slice(), &batch);
        for r in 0..4 {
            for c in 0..3 {
                assert!((fast[[r, c]] - slow[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_dimension_errors() {
        let spec = ModelSpec::linear(3, 2).unwrap();
        let params = init_params(&spec, 0);
        let bad = Array2::zeros((2, 4));
        assert!(matches!(
            forward(&spec, &params, bad.view()),
            Err(NumericsError::DimensionMismatch {
                expected: 3,
                found: 4,
                ..
            })
        ));
        assert!(forward(&spec, &ParamVector::zeros(3), Array2::zeros((1, 3)).view()).is_err());
    }

    #[test]
    fn saturated_optimum_has_vanishing_gradient() {
        let spec = ModelSpec::linear(2, 2).unwrap();
        // class 0 logit = 100*x0, class 1 logit = 100*x1
        let params = ParamVector::new(vec![100.0, 0.0, 0.0, 100.0, 0.0, 0.0]).unwrap();
        let batch = array![[1.0, 0.0], [0.0, 1.0]];
        let g = backward(
            &spec,
            &params,
            batch.view(),
            &[0, 1],
            &TrainableMask::all_trainable(),
        )
        .unwrap();
        assert!(g.l2_norm() < 1e-6);
    }

    #[test]
    fn feature_extract_zeroes_all_but_the_head() {
        let spec = ModelSpec::mlp(4, vec![3], 2).unwrap();
        let mask = TrainableMask::for_spec(&spec, TrainingMode::FeatureExtract);
        let params = init_params(&spec, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = random_batch(&mut rng, 5, 4);
        let g = backward(&spec, &params, batch.view(), &[0, 1, 1, 0, 1], &mask).unwrap();
        let head = spec.layers()[1].weights.start;
        assert!(g.as_slice()[..head].iter().all(|&v| v == 0.0));
        assert!(g.as_slice()[head..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gradient_matches_central_differences_small_mlp() {
        let spec = ModelSpec::mlp(4, vec![2], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = init_params(&spec, 8);
        let batch = random_batch(&mut rng, 3, 4);
        let labels = [0, 2, 1];
        let g = backward(
            &spec,
            &params,
            batch.view(),
            &labels,
            &TrainableMask::all_trainable(),
        )
        .unwrap();
        let h = 1e-5;
        let mut p = params.as_slice().to_vec();
        let mut max_rel: f64 = 0.0;
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + h;
            let up = mean_loss(&spec, &p, &batch, &labels);
            p[i] = orig - h;
            let down = mean_loss(&spec, &p, &batch, &labels);
            p[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (g[i] - fd).abs() / (g[i].abs().max(fd.abs()).max(1e-8));
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn loss_and_gradient_reports_batch_metrics() {
        let spec = ModelSpec::mlp(3, vec![4], 3).unwrap();
        let params = init_params(&spec, 21);
        let batch = array![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]];
        let labels = [1, 2];
        let (m, _) = loss_and_gradient(
            &spec,
            &params,
            batch.view(),
            &labels,
            &TrainableMask::all_trainable(),
        )
        .unwrap();
        let logits = forward(&spec, &params, batch.view()).unwrap();
        let direct = cross_entropy(logits.view(), &labels).unwrap();
        assert!((m.loss - direct.loss).abs() < 1e-15);
        assert_eq!(m.accuracy, direct.accuracy);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn loss_is_non_negative(seed in any::<u64>(), rows in 1usize..6, classes in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logits = Array2::from_shape_fn((rows, classes), |_| rng.random_range(-50.0..50.0));
            let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
            let m = cross_entropy(logits.view(), &labels).unwrap();
            prop_assert!(m.loss >= 0.0);
            prop_assert!((0.0..=1.0).contains(&m.accuracy));
        }

        #[test]
        fn pure_functions_are_bitwise_repeatable(seed in any::<u64>()) {
            let spec = ModelSpec::mlp(3, vec![4, 2], 3).unwrap();
            let params = init_params(&spec, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let batch = random_batch(&mut rng, 4, 3);
            let labels = [0, 1, 2, 1];
            let mask = TrainableMask::all_trainable();
            let a = backward(&spec, &params, batch.view(), &labels, &mask).unwrap();
            let b = backward(&spec, &params, batch.view(), &labels, &mask).unwrap();
            prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
