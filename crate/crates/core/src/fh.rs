//! Area-level small-area estimation: direct survey estimates per zip, a
//! variance-components linking model on area covariates, and shrinkage
//! (EBLUP) predictions.
//!
//! The sampling model takes each area's direct estimate as the true area
//! mean plus sampling error with known variance; the linking model puts a
//! random area effect with variance `σ²_u` around a linear predictor `x'β`.
//! The fitted prediction blends the two:
//!
//! ```text
//! prediction_k = γ_k · direct_k + (1 − γ_k) · x_k'β,   γ_k = σ²_u / (σ²_u + σ²_e_k)
//! ```
//!
//! Out-of-sample areas (covariates but no survey rows) get the synthetic
//! part `x'β` alone. `σ²_u` is estimated by restricted maximum likelihood
//! (default) or plain maximum likelihood via Fisher scoring with
//! step-halving, clamped at zero.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::composite::{compute_composite, CompositeSpec};
use crate::error::{Error, Result};
use crate::schema::{AttrKind, GeoRole};
use crate::table::MicroTable;

/// Convergence tolerance on the variance-component score.
const TOL: f64 = 1e-8;
/// Fisher-scoring iteration cap.
const MAX_ITERS: usize = 200;

/// One area's data: direct estimate (in-sample only) and covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Area {
    /// Area (zip) label.
    pub id: String,
    /// Direct survey estimate; `None` for out-of-sample areas.
    pub direct: Option<f64>,
    /// Sampling variance of the direct estimate; present iff `direct` is.
    pub var_e: Option<f64>,
    /// Covariate vector (without intercept; the fit prepends one).
    pub x: Vec<f64>,
    /// The design-based cluster variance was unavailable and a unit-level
    /// (or floor) formula was substituted.
    pub variance_fallback: bool,
}

/// All areas of one estimation problem.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AreaData {
    /// Areas, in-sample first is *not* guaranteed; check `direct`.
    pub areas: Vec<Area>,
    /// Covariate names, aligned with every `Area::x`.
    pub covariate_names: Vec<String>,
}

impl AreaData {
    /// Ids of areas carrying a direct estimate.
    pub fn in_sample_ids(&self) -> BTreeSet<String> {
        self.areas
            .iter()
            .filter(|a| a.direct.is_some())
            .map(|a| a.id.clone())
            .collect()
    }

    /// Look an area up by id.
    pub fn area(&self, id: &str) -> Option<&Area> {
        self.areas.iter().find(|a| a.id == id)
    }
}

/// Variance-component estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FhMethod {
    /// Restricted maximum likelihood (default; unbiased-ish at small D).
    #[default]
    Reml,
    /// Plain maximum likelihood.
    Ml,
}

/// One Fisher-scoring step, for the convergence log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterLog {
    /// Iteration number (0 = initial point).
    pub iter: usize,
    /// Variance component at this step.
    pub sigma2_u: f64,
    /// (Restricted) log-likelihood, up to a constant.
    pub objective: f64,
    /// Score (gradient) at this step.
    pub gradient: f64,
}

/// A fitted area-level model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FhFit {
    /// Estimation method used.
    pub method: FhMethod,
    /// Coefficients on the raw covariate scale; `beta[0]` is the intercept.
    pub beta: Vec<f64>,
    /// Standard errors aligned with `beta`.
    pub beta_se: Vec<f64>,
    /// Covariate names (without the intercept).
    pub covariate_names: Vec<String>,
    /// Estimated variance of the area effects.
    pub sigma2_u: f64,
    /// Shrinkage factor per in-sample area.
    pub gamma: BTreeMap<String, f64>,
    /// Blended prediction per in-sample area.
    pub eblup: BTreeMap<String, f64>,
    /// Synthetic part `x'β` for every area in the fitted data.
    pub synthetic: BTreeMap<String, f64>,
    /// Direct estimates, echoed for reporting.
    pub direct: BTreeMap<String, f64>,
    /// Whether the score converged within the iteration cap. A `false` fit
    /// still carries the last iterate.
    pub converged: bool,
    /// Iterations used.
    pub iterations: usize,
    /// Score at the final iterate.
    pub final_gradient: f64,
    /// Per-iteration log.
    pub trace: Vec<IterLog>,
}

/// Numeric view of the model target: continuous values, or a binary
/// categorical attribute mapped to 0/1 (second class positive). Absent
/// continuous cells are `None`.
fn target_values(survey: &MicroTable, target: &str) -> Result<Vec<Option<f64>>> {
    let schema = survey.schema();
    let idx = schema.require(target)?;
    let attr = schema.attr(idx);
    match attr.kind {
        AttrKind::Continuous => Ok(survey.continuous(idx)?.to_vec()),
        AttrKind::Categorical => {
            if attr.classes.len() != 2 {
                return Err(Error::SpecInvalid(format!(
                    "target {target:?} must be continuous or binary, has {} classes",
                    attr.classes.len()
                )));
            }
            Ok(survey
                .categorical(idx)?
                .iter()
                .map(|&c| Some(f64::from(c == 1)))
                .collect())
        }
    }
}

/// Weighted (Hájek) direct estimates per zip with design-based sampling
/// variances.
///
/// The variance treats clusters as the resampling units, grouped by
/// stratum; a zip whose clusters cannot support that formula (fewer than
/// two clusters) falls back to the unit-level with-replacement formula and
/// is flagged. Exact-zero variances (degenerate zips) are floored at
/// `(range / (2(n_k + 1)))²`, where `range` spans the target over the whole
/// survey.
pub fn direct_estimates(survey: &MicroTable, target: &str) -> Result<AreaData> {
    let schema = survey.schema();
    let zip_idx = schema.require_role(GeoRole::ZipCode)?;
    let cluster_idx = schema.require_role(GeoRole::Cluster)?;
    let stratum_idx = schema.require_role(GeoRole::Stratum)?;
    let weights = survey.weights()?;
    let y = target_values(survey, target)?;
    let clusters = survey.categorical(cluster_idx)?;
    let strata = survey.categorical(stratum_idx)?;
    let zip_labels = &schema.attr(zip_idx).classes;

    let observed: Vec<f64> = y.iter().flatten().copied().collect();
    if observed.is_empty() {
        return Err(Error::EmptyColumn(target.to_string()));
    }
    let range = observed.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - observed.iter().fold(f64::INFINITY, |a, &b| a.min(b));

    let mut areas = Vec::new();
    for (&zip_code, rows) in &survey.group_by_class(zip_idx)? {
        let rows: Vec<usize> = rows.iter().copied().filter(|&r| y[r].is_some()).collect();
        let id = zip_labels[zip_code as usize].clone();
        let n = rows.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "zip {id:?} has {n} observed rows; need ≥ 2 for a variance"
            )));
        }
        let w_sum: f64 = rows.iter().map(|&r| weights[r]).sum();
        let theta: f64 = rows
            .iter()
            .map(|&r| weights[r] * y[r].expect("filtered"))
            .sum::<f64>()
            / w_sum;
        // Linearized residuals; they sum to zero within the zip.
        let z: Vec<f64> = rows
            .iter()
            .map(|&r| weights[r] * (y[r].expect("filtered") - theta) / w_sum)
            .collect();

        // Cluster totals of z, grouped by stratum.
        let mut cluster_totals: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for (&r, &zi) in rows.iter().zip(&z) {
            *cluster_totals.entry((strata[r], clusters[r])).or_insert(0.0) += zi;
        }
        let mut by_stratum: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for (&(s, _), &t) in &cluster_totals {
            by_stratum.entry(s).or_default().push(t);
        }
        let cluster_formula_ok =
            cluster_totals.len() >= 2 && by_stratum.values().all(|ts| ts.len() >= 2);

        let mut fallback = !cluster_formula_ok;
        let mut var = if cluster_formula_ok {
            by_stratum
                .values()
                .map(|ts| {
                    let m = ts.len() as f64;
                    let mean = ts.iter().sum::<f64>() / m;
                    m / (m - 1.0) * ts.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>()
                })
                .sum()
        } else {
            n as f64 / (n as f64 - 1.0) * z.iter().map(|zi| zi * zi).sum::<f64>()
        };
        if var <= 0.0 {
            if range <= 0.0 {
                return Err(Error::InsufficientData(format!(
                    "target {target:?} is constant; no variance can be estimated"
                )));
            }
            var = (range / (2.0 * (n as f64 + 1.0))).powi(2);
            fallback = true;
        }
        areas.push(Area {
            id,
            direct: Some(theta),
            var_e: Some(var),
            x: Vec::new(),
            variance_fallback: fallback,
        });
    }
    Ok(AreaData {
        areas,
        covariate_names: Vec::new(),
    })
}

/// Attach covariates to every area, appending out-of-sample areas for
/// covariate rows the survey never reached.
pub fn attach_covariates(
    mut data: AreaData,
    names: &[String],
    covariates: &BTreeMap<String, Vec<f64>>,
) -> Result<AreaData> {
    for (id, x) in covariates {
        if x.len() != names.len() {
            return Err(Error::SpecInvalid(format!(
                "area {id:?} has {} covariates, expected {}",
                x.len(),
                names.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SpecInvalid(format!(
                "area {id:?} has non-finite covariates"
            )));
        }
    }
    for area in &mut data.areas {
        let x = covariates
            .get(&area.id)
            .ok_or_else(|| Error::MissingCovariates(area.id.clone()))?;
        area.x = x.clone();
    }
    let known: BTreeSet<&str> = data.areas.iter().map(|a| a.id.as_str()).collect();
    let mut extra: Vec<Area> = covariates
        .iter()
        .filter(|(id, _)| !known.contains(id.as_str()))
        .map(|(id, x)| Area {
            id: id.clone(),
            direct: None,
            var_e: None,
            x: x.clone(),
            variance_fallback: false,
        })
        .collect();
    data.areas.append(&mut extra);
    data.covariate_names = names.to_vec();
    Ok(data)
}

/// The standardized in-sample design: `x` with intercept, `y`, variances.
struct Design {
    ids: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    d: Vec<f64>,
    /// Per-covariate (mean, sd) used for standardization.
    scale: Vec<(f64, f64)>,
}

fn build_design(data: &AreaData) -> Result<Design> {
    let ins: Vec<&Area> = data.areas.iter().filter(|a| a.direct.is_some()).collect();
    let p = data.covariate_names.len();
    let n = ins.len();
    if n < p + 2 {
        return Err(Error::TooFewAreas {
            areas: n,
            needed: p + 2,
        });
    }
    let mut scale = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = ins.iter().map(|a| a.x[j]).collect();
        let m = crate::stats::mean(&col);
        let sd = crate::stats::variance(&col).sqrt();
        if !(sd > 0.0) {
            return Err(Error::RankDeficientDesign(format!(
                "covariate {:?} is constant over the in-sample areas",
                data.covariate_names[j]
            )));
        }
        scale.push((m, sd));
    }
    let x = DMatrix::from_fn(n, p + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            (ins[i].x[j - 1] - scale[j - 1].0) / scale[j - 1].1
        }
    });
    let y = DVector::from_iterator(n, ins.iter().map(|a| a.direct.expect("in-sample")));
    let d: Vec<f64> = ins.iter().map(|a| a.var_e.expect("in-sample")).collect();
    Ok(Design {
        ids: ins.iter().map(|a| a.id.clone()).collect(),
        x,
        y,
        d,
        scale,
    })
}

/// Model state at one value of `σ²_u`: GLS coefficients, objective, score,
/// and Fisher information.
struct State {
    beta: DVector<f64>,
    xtvx_inv: DMatrix<f64>,
    objective: f64,
    score: f64,
    info: f64,
}

fn evaluate(design: &Design, sigma2_u: f64, method: FhMethod) -> Result<State> {
    let n = design.y.len();
    let p = design.x.ncols();
    let v: Vec<f64> = design.d.iter().map(|d| sigma2_u + d).collect();
    if v.iter().any(|&vk| !(vk > 0.0)) {
        return Err(Error::NumericalFailure(
            "non-positive total variance".into(),
        ));
    }
    let vinv_x = DMatrix::from_fn(n, p, |i, j| design.x[(i, j)] / v[i]);
    let xtvx = design.x.transpose() * &vinv_x;
    let chol = Cholesky::new(xtvx.clone()).ok_or_else(|| {
        Error::RankDeficientDesign("normal-equation matrix is not positive definite".into())
    })?;
    let xtvy = vinv_x.transpose() * &design.y;
    let beta = chol.solve(&xtvy);
    let r = &design.y - &design.x * &beta;

    let log_det_v: f64 = v.iter().map(|vk| vk.ln()).sum();
    let rss: f64 = r.iter().zip(&v).map(|(ri, vk)| ri * ri / vk).sum();
    let r2v2: f64 = r.iter().zip(&v).map(|(ri, vk)| (ri / vk) * (ri / vk)).sum();
    let xtvx_inv = chol.inverse();

    let (objective, score, info) = match method {
        FhMethod::Ml => {
            let tr_vinv: f64 = v.iter().map(|vk| 1.0 / vk).sum();
            let tr_vinv2: f64 = v.iter().map(|vk| 1.0 / (vk * vk)).sum();
            (
                -0.5 * (log_det_v + rss),
                0.5 * (r2v2 - tr_vinv),
                0.5 * tr_vinv2,
            )
        }
        FhMethod::Reml => {
            let log_det_xtvx =
                2.0 * chol.l().diagonal().iter().map(|l| l.ln()).sum::<f64>();
            // P = V⁻¹ − V⁻¹X (X'V⁻¹X)⁻¹ X'V⁻¹, built densely (D is small).
            let mut p_mat = &vinv_x * &xtvx_inv * vinv_x.transpose();
            p_mat.neg_mut();
            for i in 0..n {
                p_mat[(i, i)] += 1.0 / v[i];
            }
            let tr_p = p_mat.diagonal().sum();
            let tr_p2: f64 = p_mat.iter().map(|e| e * e).sum();
            (
                -0.5 * (log_det_v + log_det_xtvx + rss),
                0.5 * (r2v2 - tr_p),
                0.5 * tr_p2,
            )
        }
    };
    Ok(State {
        beta,
        xtvx_inv,
        objective,
        score,
        info,
    })
}

/// Fit the area-level model.
///
/// Fisher scoring on `σ²_u` with step-halving (the objective never
/// decreases across accepted steps) and clamping at zero. If the score has
/// not converged after the iteration cap, the fit is returned with
/// `converged = false` and the full trace — callers decide whether that is
/// fatal.
pub fn fit_fh(data: &AreaData, method: FhMethod) -> Result<FhFit> {
    let design = build_design(data)?;
    let n = design.y.len();
    let p = design.x.ncols();

    // Moment-based start: OLS residual variance less the mean sampling
    // variance, floored near zero.
    let ols = evaluate_with_unit_variances(&design)?;
    let r = &design.y - &design.x * &ols;
    let s2 = r.iter().map(|ri| ri * ri).sum::<f64>() / (n - p) as f64;
    let mean_d = design.d.iter().sum::<f64>() / n as f64;
    let mut sigma2_u = (s2 - mean_d).max(0.01 * s2).max(0.0);

    let mut trace = Vec::new();
    let mut state = evaluate(&design, sigma2_u, method)?;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..MAX_ITERS {
        iterations = iter + 1;
        trace.push(IterLog {
            iter,
            sigma2_u,
            objective: state.objective,
            gradient: state.score,
        });
        // KKT: interior score ≈ 0, or boundary with inward-pointing score.
        if state.score.abs() < TOL || (sigma2_u == 0.0 && state.score < 0.0) {
            converged = true;
            break;
        }
        let mut step = state.score / state.info;
        let mut next = (sigma2_u + step).max(0.0);
        let mut next_state = evaluate(&design, next, method)?;
        let mut halvings = 0;
        while next_state.objective < state.objective - 1e-12 && halvings < 60 {
            step *= 0.5;
            next = (sigma2_u + step).max(0.0);
            next_state = evaluate(&design, next, method)?;
            halvings += 1;
        }
        let moved = (next - sigma2_u).abs();
        sigma2_u = next;
        state = next_state;
        if moved < TOL * (1.0 + sigma2_u) {
            converged = true;
            trace.push(IterLog {
                iter: iter + 1,
                sigma2_u,
                objective: state.objective,
                gradient: state.score,
            });
            break;
        }
    }
    if !converged {
        log::warn!(
            "variance-component scoring hit the {MAX_ITERS}-iteration cap (score {:.3e})",
            state.score
        );
    }

    // De-standardize coefficients: raw β_j = b_j / s_j, intercept absorbs
    // the centering.
    let b = &state.beta;
    let mut beta = vec![0.0; p];
    let mut beta_se = vec![0.0; p];
    beta[0] = b[0];
    beta_se[0] = state.xtvx_inv[(0, 0)].max(0.0).sqrt();
    for j in 1..p {
        let (m, s) = design.scale[j - 1];
        beta[j] = b[j] / s;
        beta_se[j] = state.xtvx_inv[(j, j)].max(0.0).sqrt() / s;
        beta[0] -= b[j] * m / s;
    }

    // Synthetic parts on the standardized scale (exact for the EBLUP
    // identity), for every area with covariates.
    let xb_of = |area: &Area| -> f64 {
        let mut xb = b[0];
        for j in 1..p {
            let (m, s) = design.scale[j - 1];
            xb += b[j] * (area.x[j - 1] - m) / s;
        }
        xb
    };
    let mut gamma = BTreeMap::new();
    let mut eblup = BTreeMap::new();
    let mut synthetic = BTreeMap::new();
    let mut direct = BTreeMap::new();
    for area in &data.areas {
        synthetic.insert(area.id.clone(), xb_of(area));
        if let (Some(dir), Some(ve)) = (area.direct, area.var_e) {
            let g = sigma2_u / (sigma2_u + ve);
            gamma.insert(area.id.clone(), g);
            eblup.insert(area.id.clone(), g * dir + (1.0 - g) * synthetic[&area.id]);
            direct.insert(area.id.clone(), dir);
        }
    }
    let _ = design.ids;

    Ok(FhFit {
        method,
        beta,
        beta_se,
        covariate_names: data.covariate_names.clone(),
        sigma2_u,
        gamma,
        eblup,
        synthetic,
        direct,
        converged,
        iterations,
        final_gradient: state.score,
        trace,
    })
}

/// OLS coefficients (unit variances), for the moment-based starting value.
fn evaluate_with_unit_variances(design: &Design) -> Result<DVector<f64>> {
    let xtx = design.x.transpose() * &design.x;
    let chol = Cholesky::new(xtx).ok_or_else(|| {
        Error::RankDeficientDesign("normal-equation matrix is not positive definite".into())
    })?;
    Ok(chol.solve(&(design.x.transpose() * &design.y)))
}

/// Predictions for every area: blended (EBLUP) in-sample, synthetic `x'β`
/// out-of-sample.
pub fn predict_areas(fit: &FhFit, data: &AreaData) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for area in &data.areas {
        if let Some(e) = fit.eblup.get(&area.id) {
            out.insert(area.id.clone(), *e);
        } else if let Some(xb) = fit.synthetic.get(&area.id) {
            out.insert(area.id.clone(), *xb);
        } else {
            // An area the fit never saw: score it on the raw-coefficient
            // scale.
            if area.x.len() != fit.covariate_names.len() {
                return Err(Error::MissingCovariates(area.id.clone()));
            }
            let xb = fit.beta[0]
                + area
                    .x
                    .iter()
                    .zip(&fit.beta[1..])
                    .map(|(x, b)| x * b)
                    .sum::<f64>();
            out.insert(area.id.clone(), xb);
        }
    }
    Ok(out)
}

/// Everything [`augment`] produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentOutcome {
    /// Direct estimates + covariates per area.
    pub data: AreaData,
    /// The fitted model.
    pub fit: FhFit,
    /// Final prediction per area (every covariate row).
    pub predictions: BTreeMap<String, f64>,
    /// Mean shrinkage over in-sample areas — the sensitivity axis for
    /// sample-size sweeps.
    pub mean_gamma: f64,
}

/// End-to-end area-level estimation: derive the target (via the composite
/// spec when the column is absent), compute direct estimates, attach
/// covariates, fit, and predict every area.
pub fn augment(
    survey: &MicroTable,
    covariate_names: &[String],
    covariates: &BTreeMap<String, Vec<f64>>,
    target: &str,
    composite: Option<&CompositeSpec>,
    method: FhMethod,
) -> Result<AugmentOutcome> {
    let derived;
    let survey = if survey.schema().index_of(target).is_none() && composite.is_some() {
        derived = compute_composite(survey, composite.expect("checked"))?;
        &derived
    } else {
        survey
    };
    let data = direct_estimates(survey, target)?;
    let data = attach_covariates(data, covariate_names, covariates)?;
    let fit = fit_fh(&data, method)?;
    let predictions = predict_areas(&fit, &data)?;
    let mean_gamma = if fit.gamma.is_empty() {
        0.0
    } else {
        fit.gamma.values().sum::<f64>() / fit.gamma.len() as f64
    };
    Ok(AugmentOutcome {
        data,
        fit,
        predictions,
        mean_gamma,
    })
}

/// Read an area-covariate table: header `zip_id,<name>,...`, one row per
/// area.
pub fn read_covariates_csv(path: &Path) -> Result<(Vec<String>, BTreeMap<String, Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| Error::io("read", path, e))?;
    let headers = reader.headers().map_err(|e| Error::io("parse", path, e))?;
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::ParseError(format!(
            "{}: expected `zip_id` plus at least one covariate column",
            path.display()
        )));
    }
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::io("parse", path, e))?;
        let id = record
            .get(0)
            .ok_or_else(|| Error::ParseError("empty covariate row".into()))?
            .to_string();
        let mut x = Vec::with_capacity(names.len());
        for field in record.iter().skip(1) {
            x.push(field.trim().parse::<f64>().map_err(|e| {
                Error::ParseError(format!("area {id:?}: bad covariate {field:?}: {e}"))
            })?);
        }
        if out.insert(id.clone(), x).is_some() {
            return Err(Error::ParseError(format!("duplicate area {id:?}")));
        }
    }
    Ok((names, out))
}

/// Write an area-covariate table in the format [`read_covariates_csv`]
/// accepts.
pub fn write_covariates_csv(
    path: &Path,
    names: &[String],
    covariates: &BTreeMap<String, Vec<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io("write", path, e))?;
    let mut header = vec!["zip_id".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::io("write", path, e))?;
    for (id, x) in covariates {
        let mut row = vec![id.clone()];
        row.extend(x.iter().map(|v| format!("{v}")));
        w.write_record(&row).map_err(|e| Error::io("write", path, e))?;
    }
    w.flush().map_err(|e| Error::io("write", path, e))?;
    Ok(())
}
