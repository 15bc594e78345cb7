//! Prediction scoring against census truth: adjusted R², relative bias,
//! and mean squared error over area-level estimates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores of one set of area predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionMetrics {
    /// Adjusted R² over the in-sample areas, penalized by model size.
    pub r2_adj: f64,
    /// `mean(estimate − truth) / mean(truth)` over all scored areas.
    pub rel_bias: f64,
    /// `mean((estimate − truth)²)` over all scored areas.
    pub mse: f64,
    /// Areas scored for bias and MSE.
    pub n_areas: usize,
    /// Areas entering the adjusted R².
    pub n_in_sample: usize,
}

/// Score predictions against census truth.
///
/// The adjusted R² uses only the in-sample areas (where a direct estimate
/// informed the prediction) and penalizes by `p` fitted covariates; bias and
/// MSE cover every estimated area. Every estimated area must have a truth
/// value.
pub fn prediction_metrics(
    estimates: &BTreeMap<String, f64>,
    truth: &BTreeMap<String, f64>,
    in_sample: &BTreeSet<String>,
    p: usize,
) -> Result<PredictionMetrics> {
    if estimates.is_empty() {
        return Err(Error::InsufficientData("no estimates to score".into()));
    }
    let mut diffs = Vec::with_capacity(estimates.len());
    let mut truths = Vec::with_capacity(estimates.len());
    let mut in_pairs = Vec::new();
    for (area, &est) in estimates {
        let &t = truth
            .get(area)
            .ok_or_else(|| Error::InsufficientData(format!("area {area:?} has no truth value")))?;
        diffs.push(est - t);
        truths.push(t);
        if in_sample.contains(area) {
            in_pairs.push((est, t));
        }
    }

    let n_in = in_pairs.len();
    if n_in < p + 2 {
        return Err(Error::TooFewAreas {
            areas: n_in,
            needed: p + 2,
        });
    }
    let mean_in: f64 = in_pairs.iter().map(|&(_, t)| t).sum::<f64>() / n_in as f64;
    let ss_res: f64 = in_pairs.iter().map(|&(e, t)| (e - t) * (e - t)).sum();
    let ss_tot: f64 = in_pairs.iter().map(|&(_, t)| (t - mean_in) * (t - mean_in)).sum();
    let r2 = if ss_res == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    let r2_adj = 1.0 - (1.0 - r2) * (n_in as f64 - 1.0) / (n_in as f64 - p as f64 - 1.0);

    let n = diffs.len() as f64;
    let mean_truth = truths.iter().sum::<f64>() / n;
    let rel_bias = diffs.iter().sum::<f64>() / n / mean_truth;
    let mse = diffs.iter().map(|d| d * d).sum::<f64>() / n;

    Ok(PredictionMetrics {
        r2_adj,
        rel_bias,
        mse,
        n_areas: diffs.len(),
        n_in_sample: n_in,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    fn all_in(m: &BTreeMap<String, f64>) -> BTreeSet<String> {
        m.keys().cloned().collect()
    }

    #[test]
    fn perfect_predictions_score_one_zero_zero() {
        let truth = map(&[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)]);
        let m = prediction_metrics(&truth, &truth, &all_in(&truth), 1).unwrap();
        assert_abs_diff_eq!(m.r2_adj, 1.0);
        assert_abs_diff_eq!(m.rel_bias, 0.0);
        assert_abs_diff_eq!(m.mse, 0.0);
        assert_eq!((m.n_areas, m.n_in_sample), (4, 4));
    }

    #[test]
    fn constant_offset_has_closed_form() {
        let truth = map(&[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)]);
        let c = 0.5;
        let est: BTreeMap<String, f64> =
            truth.iter().map(|(k, v)| (k.clone(), v + c)).collect();
        let m = prediction_metrics(&est, &truth, &all_in(&truth), 1).unwrap();
        assert_abs_diff_eq!(m.rel_bias, c / 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mse, c * c, epsilon = 1e-12);
    }

    #[test]
    fn hand_computed_adjusted_r2() {
        let truth = map(&[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)]);
        let est = map(&[("a", 1.1), ("b", 1.9), ("c", 3.2), ("d", 3.8)]);
        let m = prediction_metrics(&est, &truth, &all_in(&truth), 1).unwrap();
        // SS_res = 0.1, SS_tot = 5 → R² = 0.98 → adj = 1 − 0.02·3/2 = 0.97.
        assert_abs_diff_eq!(m.r2_adj, 0.97, epsilon = 1e-12);
        assert_abs_diff_eq!(m.rel_bias, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mse, 0.025, epsilon = 1e-12);
    }

    #[test]
    fn out_of_sample_areas_skip_the_r2_but_not_the_bias() {
        let truth = map(&[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0), ("x", 10.0)]);
        let mut est = truth.clone();
        est.insert("x".into(), 12.0); // only the out-of-sample area is off
        let in_sample: BTreeSet<String> =
            ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let m = prediction_metrics(&est, &truth, &in_sample, 1).unwrap();
        assert_abs_diff_eq!(m.r2_adj, 1.0);
        assert_abs_diff_eq!(m.mse, 4.0 / 5.0, epsilon = 1e-12);
        assert_eq!((m.n_areas, m.n_in_sample), (5, 4));
    }

    #[test]
    fn too_few_in_sample_areas_is_an_error() {
        let truth = map(&[("a", 1.0), ("b", 2.0), ("c", 3.0)]);
        let err = prediction_metrics(&truth, &truth, &all_in(&truth), 2).unwrap_err();
        assert!(matches!(err, Error::TooFewAreas { areas: 3, needed: 4 }));
    }

    #[test]
    fn missing_truth_is_an_error() {
        let est = map(&[("a", 1.0), ("ghost", 2.0)]);
        let truth = map(&[("a", 1.0)]);
        assert!(prediction_metrics(&est, &truth, &all_in(&est), 0).is_err());
    }
}
