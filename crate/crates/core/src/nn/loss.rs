use crate::error::{Error, Result};

/// Mean Huber loss and its gradient with respect to `pred`.
///
/// Per element `½e²` for `|e| ≤ δ` and `δ(|e| - ½δ)` beyond, with
/// `e = pred - target`; the gradient is `e/N` clipped to `±δ/N`.
pub fn huber_loss(pred: &[f64], target: &[f64], delta: f64) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParam(format!("huber delta must be positive, got {delta}")));
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let e = p - t;
            if e.abs() <= delta {
                loss += 0.5 * e * e;
                e / n
            } else {
                loss += delta * (e.abs() - 0.5 * delta);
                delta * e.signum() / n
            }
        })
        .collect();
    Ok((loss / n, grad))
}

/// Mean squared error `mean(e²)` and its gradient `2e/N`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let e = p - t;
            loss += e * e;
            2.0 * e / n
        })
        .collect();
    Ok((loss / n, grad))
}
