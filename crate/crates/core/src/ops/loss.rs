//! Row-wise softmax with mean cross-entropy (multi-class log-loss).

use crate::error::{mismatch, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Mean negative log-probability of the true class.
    pub loss: f64,
    /// `N × classes`, each row summing to 1.
    pub probabilities: Tensor,
}

fn rows(logits: &Tensor) -> Result<(usize, usize)> {
    match *logits.dims() {
        [n, k] => Ok((n, k)),
        _ => Err(mismatch(format!("logits must be N × classes, got {:?}", logits.shape()))),
    }
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(mismatch(format!("{} labels for {n} rows of logits", labels.len())));
    }
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = rows(logits)?;
    let mut p = logits.clone();
    for row in p.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(p)
}

pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    let (n, k) = rows(logits)?;
    check_labels(labels, n, k)?;
    let probabilities = softmax(logits)?;
    let mut total = 0.0;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        // log p = z_y - max - log Σ exp(z - max), exact even when p underflows
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += log_z - (row[label] - max);
    }
    Ok(LossOutput {
        loss: total / n as f64,
        probabilities,
    })
}

/// Gradient of the mean loss with respect to the logits: `(p − onehot) / N`.
pub fn softmax_xent_backward(out: &LossOutput, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = rows(&out.probabilities)?;
    check_labels(labels, n, k)?;
    let inv_n = 1.0 / n as f64;
    let mut g = out.probabilities.clone();
    for (row, &label) in g.data_mut().chunks_exact_mut(k).zip(labels) {
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Tensor::new(&[3, 10], 0.7).unwrap();
        let out = softmax_xent(&logits, &[0, 4, 9]).unwrap();
        assert!((out.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_class_closed_form() {
        let logits = Tensor::from_vec(&[1, 2], vec![2.0, 0.0]).unwrap();
        let out = softmax_xent(&logits, &[1]).unwrap();
        let p0 = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((out.probabilities.data()[0] - p0).abs() < 1e-15);
        assert!((out.loss - (1.0 + 2f64.exp()).ln()).abs() < 1e-14);
        let g = softmax_xent_backward(&out, &[1]).unwrap();
        assert!((g.data()[0] - p0).abs() < 1e-15);
        assert!((g.data()[1] - (1.0 - p0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_one_and_shift_invariant() {
        let logits = Tensor::from_vec(&[2, 3], vec![1.0, -3.0, 500.0, 0.1, 0.2, -0.3]).unwrap();
        let out = softmax_xent(&logits, &[2, 0]).unwrap();
        for row in out.probabilities.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let shifted = softmax_xent(&logits.map(|v| v + 123.0), &[2, 0]).unwrap();
        assert!((shifted.loss - out.loss).abs() < 1e-9);
        assert!(out.loss >= 0.0);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::new(&[1, 3], 0.0).unwrap();
        assert!(matches!(
            softmax_xent(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }
}
