//! Gaussian margin sampling and the proximity-sorted ("plus") assignment of
//! drawn margins to the samples of a mini-batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededStream;

/// One margin per batch sample, drawn from `N(mean, std²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginDraw {
    pub values: Vec<f64>,
    /// Keystream position of the generator right after the draw.
    pub stream_pos: u128,
}

/// Draws `n` independent margins from `N(mean, std²)`.
///
/// `std == 0` returns the constant vector without touching the stream, so
/// an elastic loss with zero spread follows the same arithmetic as the
/// fixed-margin loss it generalizes.
pub fn sample_margins(n: usize, mean: f64, std: f64, rng: &mut SeededStream) -> Result<MarginDraw> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot draw zero margins".into()));
    }
    if std < 0.0 || std.is_nan() {
        return Err(Error::NegativeSigma(std));
    }
    if !mean.is_finite() || !std.is_finite() {
        return Err(Error::NonFinite("margin distribution"));
    }
    let values = if std == 0.0 {
        vec![mean; n]
    } else {
        (0..n).map(|_| rng.normal(mean, std)).collect()
    };
    Ok(MarginDraw {
        values,
        stream_pos: rng.word_pos(),
    })
}

/// Pairs the largest margins with the samples farthest from their class
/// center (smallest target cosine) and returns the margins in the original
/// sample order.
///
/// Both sorts are stable, so equal cosines or equal margins keep their
/// original index order.
pub fn assign_margins_plus(margins: &[f64], cos_target: &[f64]) -> Result<Vec<f64>> {
    if margins.len() != cos_target.len() {
        return Err(Error::LengthMismatch {
            expected: cos_target.len(),
            actual: margins.len(),
        });
    }
    let mut by_cos: Vec<usize> = (0..cos_target.len()).collect();
    by_cos.sort_by(|&a, &b| cos_target[a].total_cmp(&cos_target[b]));

    let mut sorted = margins.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut out = vec![0.0; margins.len()];
    for (&sample, &margin) in by_cos.iter().zip(&sorted) {
        out[sample] = margin;
    }
    Ok(out)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
