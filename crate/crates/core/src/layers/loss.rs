use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// `(probs − onehot) / N`
    pub grad: Tensor<T>,
    pub probs: Tensor<T>,
}

/// Row-wise softmax of `[N, K]` logits, computed in `f64` after subtracting
/// the row maximum.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(Error::invalid(format!(
            "softmax expects [N,K], got {:?}",
            logits.shape()
        )));
    }
    let k = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let (probs, _) = stable_row(row);
        out.extend(probs.into_iter().map(T::of));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Returns the probabilities and log-sum-exp of one row.
fn stable_row<T: Scalar>(row: &[T]) -> (Vec<f64>, f64) {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let lse = max + total.ln();
    (exps.into_iter().map(|e| e / total).collect(), lse)
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<LossOutput<T>> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::invalid(format!(
            "softmax_cross_entropy: logits {:?} vs {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(n * k);
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let (p, lse) = stable_row(row);
        loss += lse - row[label].as_f64();
        for (j, &pj) in p.iter().enumerate() {
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push(T::of((pj - target) / n as f64));
            probs.push(T::of(pj));
        }
    }
    Ok(LossOutput {
        loss: loss / n as f64,
        grad: Tensor::new(vec![n, k], grad)?,
        probs: Tensor::new(vec![n, k], probs)?,
    })
}
