//! Next-sample forecasting of the delayed homodyne current.
//!
//! A record sampled at the loop delay `τ` is cut into overlapping windows of
//! five samples, each labelled with the sample that follows it. A 5-32-16-1
//! ReLU network is trained on standardised windows with Adam and early
//! stopping, and its quality is summarised by the Pearson correlation `r`
//! between predicted and actual currents.

mod dataset;
mod mlp;
mod record;
mod train;

pub use dataset::{build_dataset, WindowDataset};
pub use mlp::{
    forward, gradients, loss_mse, Gradients, Layer, MlpModel, Standardizer, TrainingMetadata,
    LAYER_SHAPES, WINDOW,
};
pub use record::HomodyneRecord;
pub use train::{fit_predictor, last_value_mse, predict_next, train, Hyperparams};

use crate::{Error, Result};

/// Pearson correlation of two equally long series.
pub fn correlation_r(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() || predicted.len() < 2 {
        return Err(Error::LengthMismatch(predicted.len(), actual.len()));
    }
    let n = predicted.len() as f64;
    let mp = predicted.iter().sum::<f64>() / n;
    let ma = actual.iter().sum::<f64>() / n;
    let (mut spp, mut saa, mut spa) = (0.0, 0.0, 0.0);
    for (p, a) in predicted.iter().zip(actual) {
        let (dp, da) = (p - mp, a - ma);
        spp += dp * dp;
        saa += da * da;
        spa += dp * da;
    }
    if !(spp > 0.0) || !(saa > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((spa / (spp * saa).sqrt()).clamp(-1.0, 1.0))
}

/// Restricts a raw correlation to `[0, 1]` before it enters a rate formula.
pub fn clamp_correlation(r: f64) -> f64 {
    let clamped = r.clamp(0.0, 1.0);
    if clamped != r {
        log::warn!("correlation r = {r:.4} clamped to {clamped} for the rate formula");
    }
    clamped
}
