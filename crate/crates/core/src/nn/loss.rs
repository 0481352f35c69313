use crate::error::{invalid, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean squared error and its gradient `2 (pred - target) / count`.
pub fn loss_mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    pred.same_shape(target, "mse")?;
    let count = pred.len() as f64;
    let mut loss = 0.0;
    let scale = T::from_f64_lossy(2.0 / count);
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.as_f64() * d.as_f64();
            d * scale
        })
        .collect();
    Ok((loss / count, Tensor::from_vec(pred.shape(), grad)?))
}

/// Mean softmax cross-entropy over the rows of `logits[N,K]`.
pub fn loss_softmax_xent<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(invalid!("{} labels for {n} rows", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(invalid!("label {bad} out of range for {k} classes"));
    }
    let mut grad = Tensor::zeros(&[n, k])?;
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (row, &label) in labels.iter().enumerate() {
        let z: Vec<f64> = logits.outer(row).iter().map(|v| v.as_f64()).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum_exp.ln();
        loss += log_norm - z[label];
        for (j, g) in grad.outer_mut(row).iter_mut().enumerate() {
            let p = (z[j] - log_norm).exp();
            let onehot = if j == label { 1.0 } else { 0.0 };
            *g = T::from_f64_lossy((p - onehot) * inv_n);
        }
    }
    Ok((loss * inv_n, grad))
}
