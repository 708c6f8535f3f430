use rand::Rng;

use super::tape::log_softmax;
use crate::error::{invalid, Error, Result};

/// Softmax over the unmasked logits; masked entries get probability exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            what: "mask",
            expected: logits.len(),
            got: mask.len(),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(invalid("mask has no legal entry"));
    }
    Ok(log_softmax(logits, Some(mask))
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Inverse-CDF draw from `probs`; never returns a zero-probability index.
pub fn categorical_sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = Some(i);
            if u < acc {
                return i;
            }
        }
    }
    last.expect("distribution has no positive entry")
}

/// `ln probs[index]`; `-inf` for a zero-probability index.
pub fn categorical_logprob(probs: &[f64], index: usize) -> f64 {
    probs[index].ln()
}

/// First index of the maximum probability.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
