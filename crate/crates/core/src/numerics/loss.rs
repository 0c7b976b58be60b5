use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{NumericsError, Result};

/// Mean loss and accuracy over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean cross-entropy of `logits` against integer `labels`, plus top-1 accuracy.
///
/// Argmax ties go to the lowest class index.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<BatchMetrics> {
    let (losses, correct) = per_sample_cross_entropy(logits, labels)?;
    let n = losses.len() as f64;
    Ok(BatchMetrics {
        loss: losses.iter().sum::<f64>() / n,
        accuracy: correct as f64 / n,
    })
}

/// Per-row `-log softmax(logits)[label]` and the number of rows whose argmax
/// equals the label.
pub fn per_sample_cross_entropy(
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<(Vec<f64>, usize)> {
    let (rows, classes) = logits.dim();
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
    let mut losses = Vec::with_capacity(rows);
    let mut correct = 0;
    for (row, (z, &label)) in logits.outer_iter().zip(labels).enumerate() {
        if label >= classes {
            return Err(NumericsError::LabelOutOfRange {
                row,
                label,
                num_classes: classes,
            });
        }
        let (argmax, max) = argmax(z.iter().copied());
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        // (max - z[label]) >= 0 and ln(sum) >= 0 since sum includes exp(0).
        losses.push((max - z[label]) + sum.ln());
        if argmax == label {
            correct += 1;
        }
    }
    Ok((losses, correct))
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}
