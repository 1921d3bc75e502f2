//! Terminal losses. Each returns the batch-mean loss and its gradient with
//! respect to the prediction tensor.

use crate::engine::tensor::Tensor;
use crate::error::{Error, Result};

/// Softmax cross-entropy over `[N, C]` logits with class-index labels.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[f32]) -> Result<(f32, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape(format!(
            "cross-entropy: logits {shape:?} for {} labels",
            labels.len()
        )));
    }
    let (n, c) = (shape[0], shape[1]);
    let mut grad = Tensor::zeros(shape);
    let mut total = 0f64;
    for (i, (row, g)) in logits
        .data()
        .chunks_exact(c)
        .zip(grad.data_mut().chunks_exact_mut(c))
        .enumerate()
    {
        let y = labels[i] as usize;
        if y >= c {
            return Err(Error::Shape(format!("label {y} outside {c} classes")));
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f32 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += (log_z - row[y]) as f64;
        for (j, (gv, v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - log_z).exp();
            *gv = (p - if j == y { 1.0 } else { 0.0 }) / n as f32;
        }
    }
    Ok(((total / n as f64) as f32, grad))
}

/// Mean squared error of a `[N, 1]` prediction.
pub fn mean_squared_error(pred: &Tensor, targets: &[f32]) -> Result<(f32, Tensor)> {
    let shape = pred.shape();
    if shape.len() != 2 || shape[1] != 1 || shape[0] != targets.len() {
        return Err(Error::Shape(format!(
            "mse: prediction {shape:?} for {} targets",
            targets.len()
        )));
    }
    let n = targets.len();
    let mut total = 0f64;
    let grad: Vec<f32> = pred
        .data()
        .iter()
        .zip(targets)
        .map(|(p, y)| {
            let r = p - y;
            total += (r as f64) * (r as f64);
            2.0 * r / n as f32
        })
        .collect();
    Ok(((total / n as f64) as f32, Tensor::new(shape.to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_zero_at_perfect_prediction() {
        let pred = Tensor::new(vec![3, 1], vec![1.0, -2.0, 0.5]).unwrap();
        let (loss, grad) = mean_squared_error(&pred, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Tensor::zeros(&[2, 4]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0.0, 3.0]).unwrap();
        assert!((loss - 4f32.ln()).abs() < 1e-6);
        assert!((grad.data()[0] - (0.25 - 1.0) / 2.0).abs() < 1e-7);
        assert!((grad.data()[1] - 0.125).abs() < 1e-7);
    }

    #[test]
    fn cross_entropy_gradient_matches_differences() {
        let logits = Tensor::new(vec![1, 3], vec![0.3, -1.2, 2.0]).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[1.0]).unwrap();
        let h = 1e-3;
        for j in 0..3 {
            let mut up = logits.clone();
            up.data_mut()[j] += h;
            let mut dn = logits.clone();
            dn.data_mut()[j] -= h;
            let fd = (softmax_cross_entropy(&up, &[1.0]).unwrap().0
                - softmax_cross_entropy(&dn, &[1.0]).unwrap().0)
                / (2.0 * h);
            assert!((fd - grad.data()[j]).abs() < 1e-3);
        }
    }

    #[test]
    fn label_out_of_range() {
        assert!(softmax_cross_entropy(&Tensor::zeros(&[1, 2]), &[2.0]).is_err());
    }
}
