//! Parametric marginal models for encoded columns.
//!
//! The synthesizer fits one marginal distribution per encoded column; the
//! probability integral transform through its CDF carries data into the
//! latent Gaussian space and back. Gaussian marginals are the default. As a
//! sensitivity axis, the family can instead be selected per column among
//! {gaussian, uniform, beta, gamma} by minimizing a two-sample
//! Kolmogorov-Smirnov statistic.
//!
//! The KS comparison uses a deterministic "ideal sample" — the fitted
//! family's quantiles at the mid-probabilities `(i + 1/2) / m` — rather than
//! random draws, so family selection never consumes randomness and is
//! identical across runs.
//!
//! Beta and gamma are fitted by method of moments with support rescaling
//! (beta: observed range mapped to the unit interval; gamma: shifted to a
//! zero lower bound). Moments are cheap and deterministic; when they land
//! outside a family's valid parameter region the family simply drops out of
//! the selection.

use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::stats;

/// Number of quantile probes in the deterministic KS "ideal sample".
const KS_PROBES: usize = 201;

/// How marginal families are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalMode {
    /// Every column gets a Gaussian marginal (the default).
    Gaussian,
    /// Per column, the family with the smallest KS distance to the data.
    KsSelect,
}

/// A fitted marginal family with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MarginalFamily {
    /// Normal(mu, sd). `sd` is floored at a tiny positive value so constant
    /// columns stay usable (their PIT is 0.5 everywhere).
    Gaussian {
        /// Mean.
        mu: f64,
        /// Standard deviation (floored positive).
        sd: f64,
    },
    /// Uniform on `[lo, hi]`.
    Uniform {
        /// Lower endpoint.
        lo: f64,
        /// Upper endpoint.
        hi: f64,
    },
    /// Beta(alpha, beta) on the rescaled support `[lo, hi]`.
    Beta {
        /// First shape parameter.
        alpha: f64,
        /// Second shape parameter.
        beta: f64,
        /// Support lower endpoint.
        lo: f64,
        /// Support upper endpoint.
        hi: f64,
    },
    /// Gamma(shape, rate) on values shifted by `shift`.
    Gamma {
        /// Shape parameter.
        shape: f64,
        /// Rate parameter (1/scale).
        rate: f64,
        /// Support lower endpoint.
        shift: f64,
    },
}

/// A fitted marginal: family + cached KS distance from the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    /// The fitted family and parameters.
    pub family: MarginalFamily,
    /// KS distance against the training column (0 when not evaluated).
    pub ks: f64,
}

impl MarginalModel {
    /// Fit a marginal under the given mode. `values` must be finite and
    /// non-empty (absent cells are filtered by the caller).
    pub fn fit(values: &[f64], mode: MarginalMode) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData(
                "cannot fit a marginal to zero observed values".into(),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite value {bad} in marginal fit"
            )));
        }
        match mode {
            MarginalMode::Gaussian => Ok(MarginalModel {
                family: fit_gaussian(values),
                ks: 0.0,
            }),
            MarginalMode::KsSelect => Ok(Self::fit_ks_select(values)),
        }
    }

    /// Fit all candidate families and keep the one with the smallest KS
    /// distance (ties keep the earlier family in the candidate order:
    /// gaussian, uniform, beta, gamma).
    fn fit_ks_select(values: &[f64]) -> Self {
        let mut candidates = vec![fit_gaussian(values)];
        candidates.extend(fit_uniform(values));
        candidates.extend(fit_beta(values));
        candidates.extend(fit_gamma(values));

        let mut best: Option<MarginalModel> = None;
        for family in candidates {
            let model = MarginalModel { family, ks: 0.0 };
            let ideal: Vec<f64> = (0..KS_PROBES)
                .map(|i| model.quantile((i as f64 + 0.5) / KS_PROBES as f64))
                .collect();
            let Ok(ks) = stats::ks_two_sample(values, &ideal) else {
                continue;
            };
            if !ks.is_finite() {
                continue;
            }
            match &best {
                Some(b) if b.ks <= ks => {}
                _ => best = Some(MarginalModel { ks, ..model }),
            }
        }
        best.expect("gaussian candidate always fits")
    }

    /// CDF value in `[0, 1]`, monotone non-decreasing, saturating outside the
    /// support.
    pub fn cdf(&self, x: f64) -> f64 {
        match self.family {
            MarginalFamily::Gaussian { mu, sd } => stats::norm_cdf((x - mu) / sd),
            MarginalFamily::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            MarginalFamily::Beta { alpha, beta, lo, hi } => {
                let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
                statrs::distribution::Beta::new(alpha, beta)
                    .expect("validated at fit")
                    .cdf(t)
            }
            MarginalFamily::Gamma { shape, rate, shift } => {
                let y = (x - shift).max(0.0);
                statrs::distribution::Gamma::new(shape, rate)
                    .expect("validated at fit")
                    .cdf(y)
            }
        }
    }

    /// Quantile (inverse CDF). `p` is clamped into the open unit interval, so
    /// the result is always finite.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = stats::clamp_unit_open(p);
        match self.family {
            MarginalFamily::Gaussian { mu, sd } => mu + sd * stats::norm_quantile(p),
            MarginalFamily::Uniform { lo, hi } => lo + p * (hi - lo),
            MarginalFamily::Beta { alpha, beta, lo, hi } => {
                let dist = statrs::distribution::Beta::new(alpha, beta).expect("validated at fit");
                let t = stats::invert_cdf(|t| dist.cdf(t.clamp(0.0, 1.0)), p, 0.0, 1.0, 70)
                    .expect("beta cdf is monotone on [0,1]")
                    .clamp(0.0, 1.0);
                lo + t * (hi - lo)
            }
            MarginalFamily::Gamma { shape, rate, shift } => {
                let dist = statrs::distribution::Gamma::new(shape, rate).expect("validated at fit");
                let mean = shape / rate;
                let sd = shape.sqrt() / rate;
                let y = stats::invert_cdf(
                    |y| dist.cdf(y.max(0.0)),
                    p,
                    0.0,
                    (mean + 4.0 * sd).max(1e-6),
                    70,
                )
                .expect("gamma cdf is monotone on [0,inf)")
                .max(0.0);
                shift + y
            }
        }
    }
}

/// Floor for standard deviations so constant columns stay non-degenerate.
fn sd_floor(mu: f64) -> f64 {
    1e-9 * mu.abs().max(1.0)
}

fn fit_gaussian(values: &[f64]) -> MarginalFamily {
    let mu = stats::mean(values);
    let var = if values.len() < 2 {
        0.0
    } else {
        stats::variance(values)
    };
    MarginalFamily::Gaussian {
        mu,
        sd: var.sqrt().max(sd_floor(mu)),
    }
}

fn fit_uniform(values: &[f64]) -> Option<MarginalFamily> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi > lo).then_some(MarginalFamily::Uniform { lo, hi })
}

fn fit_beta(values: &[f64]) -> Option<MarginalFamily> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) || values.len() < 3 {
        return None;
    }
    // Widen the support slightly so every observation is interior.
    let lo = min - 1e-6 * range;
    let hi = max + 1e-6 * range;
    let t: Vec<f64> = values.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let m = stats::mean(&t);
    let v = stats::variance(&t);
    if !(v > 0.0) || v >= m * (1.0 - m) {
        return None;
    }
    let common = m * (1.0 - m) / v - 1.0;
    let alpha = m * common;
    let beta = (1.0 - m) * common;
    (alpha > 1e-6 && beta > 1e-6 && alpha.is_finite() && beta.is_finite())
        .then_some(MarginalFamily::Beta { alpha, beta, lo, hi })
}

fn fit_gamma(values: &[f64]) -> Option<MarginalFamily> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) || values.len() < 3 {
        return None;
    }
    let shift = min - 1e-6 * range;
    let y: Vec<f64> = values.iter().map(|v| v - shift).collect();
    let m = stats::mean(&y);
    let v = stats::variance(&y);
    if !(m > 0.0) || !(v > 0.0) {
        return None;
    }
    let shape = m * m / v;
    let rate = m / v;
    (shape > 1e-6 && rate > 1e-6 && shape.is_finite() && rate.is_finite())
        .then_some(MarginalFamily::Gamma { shape, rate, shift })
}
