use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::nn::Parameters;

use super::{argmax_rows, backward, cross_entropy, forward_traced, NetworkParams, SceneGeometry};

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: NetworkParams,
    /// Full-batch loss at the start of each epoch, before its update.
    pub losses: Vec<f64>,
}

/// Mean over scenes of the per-scene mean cross-entropy, and its gradient.
pub fn loss_and_gradient(
    params: &NetworkParams,
    scenes: &[PointCloud],
    geometry: &[SceneGeometry],
) -> Result<(f64, NetworkParams)> {
    let mut grad = params.zeros_like();
    let scale = 1.0 / scenes.len() as f64;
    let mut loss = 0.0;
    for (cloud, geo) in scenes.iter().zip(geometry) {
        let labels = cloud.labels.as_ref().ok_or(Error::MissingLabels)?;
        let trace = forward_traced(params, cloud, geo)?;
        let (l, dlogits) = cross_entropy(&trace.logits, labels, params.config.n_classes, scale)?;
        loss += l * scale;
        backward(params, cloud, geo, &trace, &dlogits, &mut grad)?;
    }
    Ok((loss, grad))
}

/// Full-batch gradient descent: each epoch accumulates the gradient over all
/// scenes in order and takes one step of size `lr`.
pub fn train(params: &NetworkParams, scenes: &[PointCloud], epochs: usize, lr: f64) -> Result<TrainReport> {
    train_with(params, scenes, epochs, lr, |_, _, _| true)
}

/// Like [`train`], calling `on_epoch(epoch, loss, params)` after each loss
/// evaluation; returning `false` stops before that epoch's update.
pub fn train_with(
    params: &NetworkParams,
    scenes: &[PointCloud],
    epochs: usize,
    lr: f64,
    mut on_epoch: impl FnMut(usize, f64, &NetworkParams) -> bool,
) -> Result<TrainReport> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::Config(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    if scenes.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scenes.iter().any(|c| c.labels.is_none()) {
        return Err(Error::MissingLabels);
    }
    let geometry =
        scenes.iter().map(|c| SceneGeometry::build(&params.config, c)).collect::<Result<Vec<_>>>()?;
    let mut params = params.clone();
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (loss, grad) = loss_and_gradient(&params, scenes, &geometry)?;
        losses.push(loss);
        if !on_epoch(epoch, loss, &params) {
            break;
        }
        if lr > 0.0 {
            let mut theta = params.flatten();
            for (t, g) in theta.iter_mut().zip(grad.flatten()) {
                *t -= lr * g;
            }
            params.load_flat(&theta);
        }
    }
    Ok(TrainReport { params, losses })
}

/// Fraction of points whose predicted class equals the label.
pub fn accuracy(params: &NetworkParams, cloud: &PointCloud) -> Result<f64> {
    let labels = cloud.labels.as_ref().ok_or(Error::MissingLabels)?;
    let geo = SceneGeometry::build(&params.config, cloud)?;
    let logits = forward_traced(params, cloud, &geo)?.logits;
    let pred = argmax_rows(&logits, params.config.n_classes);
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}
