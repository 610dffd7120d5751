//! Conditioning-fidelity evaluation: generate from target features, measure, compare.

use serde::Serialize;

use crate::dataset::NormalizationParams;
use crate::stats::{conditioning_vector, ConditioningVector};
use crate::{Error, Graph, Result, NUM_FEATURES};

/// `1 - SS_res / SS_tot` over `(target, measured)` pairs. `NaN` when the targets are
/// constant, since the ratio is undefined.
pub fn r_squared(pairs: &[(f64, f64)]) -> f64 {
    let (res, tot) = sums_of_squares(pairs);
    if tot == 0.0 {
        f64::NAN
    } else {
        1.0 - res / tot
    }
}

fn sums_of_squares(pairs: &[(f64, f64)]) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let res = pairs.iter().map(|(t, m)| (t - m).powi(2)).sum();
    let tot = pairs.iter().map(|(t, _)| (t - mean).powi(2)).sum();
    (res, tot)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Per-feature R² in normalized feature space.
    pub r2: [f64; NUM_FEATURES],
    /// `1 - sum SS_res / sum SS_tot` pooled over all features.
    pub aggregate: f64,
    /// `(target, measured)` pairs per feature, one per generated sample.
    pub pairs: [Vec<(f64, f64)>; NUM_FEATURES],
    /// Generations that failed or decoded to a graph without edges.
    pub empty: usize,
}

impl EvalReport {
    pub fn samples(&self) -> usize {
        self.pairs[0].len()
    }

    /// True when no generation produced a usable graph.
    pub fn all_empty(&self) -> bool {
        self.empty == self.samples()
    }

    pub fn scatter_count(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }
}

/// Generates one graph per normalized target and compares its measured features with the
/// target. Failed or edgeless generations are measured as the all-zero raw feature vector.
pub fn evaluate(
    targets: &[[f64; NUM_FEATURES]],
    params: &NormalizationParams,
    mut generate: impl FnMut(&[f64; NUM_FEATURES]) -> Result<Graph>,
) -> Result<EvalReport> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one target".into()));
    }
    let mut pairs: [Vec<(f64, f64)>; NUM_FEATURES] = Default::default();
    let mut empty = 0;
    for t in targets {
        let measured = match generate(t).and_then(|g| conditioning_vector(&g)) {
            Ok(c) => c,
            Err(e) => {
                log::debug!("generation measured as empty: {e}");
                empty += 1;
                ConditioningVector::from_array([0.0; NUM_FEATURES])
            }
        };
        let m = params.normalize_features(&measured);
        for k in 0..NUM_FEATURES {
            pairs[k].push((t[k], m[k]));
        }
    }
    let r2 = std::array::from_fn(|k| r_squared(&pairs[k]));
    let (res, tot) = pairs
        .iter()
        .map(|p| sums_of_squares(p))
        .fold((0.0, 0.0), |(a, b), (r, t)| (a + r, b + t));
    let aggregate = if tot == 0.0 { f64::NAN } else { 1.0 - res / tot };
    if empty == targets.len() {
        log::warn!("every generation was empty");
    }
    Ok(EvalReport { r2, aggregate, pairs, empty })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_basics() {
        assert_eq!(r_squared(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]), 1.0);
        // constant prediction at the mean gives 0, elsewhere negative
        assert_eq!(r_squared(&[(1.0, 2.0), (3.0, 2.0)]), 0.0);
        assert!(r_squared(&[(1.0, 5.0), (3.0, 5.0)]) < 0.0);
        assert!(r_squared(&[(1.0, 1.0), (1.0, 1.0)]).is_nan());
    }
}
