use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Best-vs-second-best uncertainty over a set of heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    /// Mean of `per_head_ratio`; 1 is maximally uncertain.
    pub eta: f64,
    /// Second-largest over largest probability, per head.
    pub per_head_ratio: Vec<f64>,
    pub d: usize,
}

/// Ratio of the two largest entries of one head.
pub fn head_ratio(probs: &[f64]) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::Dimension(format!(
            "uncertainty needs at least 2 classes per head, got {}",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Domain("head probabilities must be finite and non-negative".into()));
    }
    let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in probs {
        if p > best {
            second = best;
            best = p;
        } else if p > second {
            second = p;
        }
    }
    if best <= 0.0 {
        return Err(Error::Domain("head has no positive probability".into()));
    }
    Ok(second / best)
}

pub fn uncertainty<V: AsRef<[f64]>>(heads: &[V]) -> Result<UncertaintyScore> {
    if heads.is_empty() {
        return Err(Error::Dimension("uncertainty needs at least one head".into()));
    }
    let per_head_ratio = heads
        .iter()
        .map(|h| head_ratio(h.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let d = per_head_ratio.len();
    Ok(UncertaintyScore {
        eta: per_head_ratio.iter().sum::<f64>() / d as f64,
        per_head_ratio,
        d,
    })
}
