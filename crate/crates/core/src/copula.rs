//! Gaussian-copula fitting and conditional synthetic-data sampling.
//!
//! Fitting: each encoded column gets a parametric marginal; the probability
//! integral transform `u = F(x)` followed by the normal quantile `z = Φ⁻¹(u)`
//! maps the data into a latent standard-normal space, where the dependence
//! structure is summarized by the Pearson correlation matrix Σ. Correlating
//! in the latent space (rather than on raw data) makes Σ a valid copula
//! parameter by construction; rows with absent cells contribute pairwise.
//! Σ is repaired to the nearest positive-semidefinite unit-diagonal matrix by
//! eigenvalue clipping and diagonal rescaling.
//!
//! Sampling: synthetic records are drawn per cluster by conditioning the
//! latent Gaussian on the (frequency-encoded) cluster identifier. With the
//! latent means fixed at 0 and unit variances, the conditional mean and
//! covariance for the remaining block are
//!
//! ```text
//! μ̄ = Σ_ab Σ_bb⁻¹ z_b          Σ̄ = Σ_aa − Σ_ab Σ_bb⁻¹ Σ_ba
//! ```
//!
//! Draws `v ~ N(μ̄, Σ̄)` come from a Cholesky factor (with a small diagonal
//! jitter ladder when Σ̄ is only semidefinite), map back through `Φ` and the
//! marginal quantiles, decode to class labels, and are rejected until the
//! declared constraints hold.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde_json::{json, Value};

use crate::encoding::{Encoder, EncodedTable, EncodingScheme};
use crate::error::{Error, Result};
use crate::marginal::{MarginalMode, MarginalModel};
use crate::rng::StreamRng;
use crate::schema::{AttrKind, Constraint, ConstraintSet, GeoRole};
use crate::stats;
use crate::table::{CellValue, MicroTable, Provenance, TableBuilder};

/// Diagonal jitter ladder tried when a covariance block fails to factor.
const JITTERS: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// Rejection budget per requested row when sampling under constraints.
const REJECTION_BUDGET_PER_ROW: usize = 1_000;

/// A fitted Gaussian copula for one fitting unit.
#[derive(Debug, Clone)]
pub struct CopulaModel {
    /// Marginal model per encoded column.
    pub marginals: Vec<MarginalModel>,
    /// Latent correlation matrix (unit diagonal, PSD after repair).
    pub sigma: DMatrix<f64>,
    /// Index of the conditioning column (the encoded cluster id), if any.
    pub cond_index: Option<usize>,
    /// Label of the fitting unit (country / stratum / zip id).
    pub unit_id: String,
    /// Smallest eigenvalue of the raw correlation matrix before repair.
    pub min_eigenvalue_before_repair: f64,
    /// Encoded columns that were numerically constant (correlation fixed at 0).
    pub constant_columns: Vec<usize>,
}

/// Conditional latent Gaussian over the non-conditioning block.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    /// Conditional mean (length `d` or `d-1`).
    pub mu: DVector<f64>,
    /// Conditional covariance.
    pub sigma: DMatrix<f64>,
    /// Encoded-column index for each coordinate of `mu`.
    pub indices: Vec<usize>,
}

impl CopulaModel {
    /// Fit marginals and the latent correlation matrix on an encoded fitting
    /// unit. Requires at least `d + 1` rows for `d` encoded columns.
    pub fn fit(
        encoded: &EncodedTable,
        unit_id: &str,
        cond_index: Option<usize>,
        mode: MarginalMode,
    ) -> Result<Self> {
        let d = encoded.n_cols();
        let n = encoded.n_rows;
        if d == 0 {
            return Err(Error::EmptyColumn(format!(
                "fitting unit {unit_id} has no encoded columns"
            )));
        }
        if n < d + 1 {
            return Err(Error::SmallSample(format!(
                "fitting unit {unit_id}: {n} rows for {d} encoded columns (need at least {})",
                d + 1
            )));
        }
        if let Some(b) = cond_index {
            if b >= d {
                return Err(Error::SpecInvalid(format!(
                    "conditioning column {b} out of range for {d} columns"
                )));
            }
        }

        let mut marginals = Vec::with_capacity(d);
        for (c, col) in encoded.values.iter().enumerate() {
            let observed: Vec<f64> = col.iter().copied().filter(|v| v.is_finite()).collect();
            if observed.is_empty() {
                return Err(Error::EmptyColumn(format!(
                    "fitting unit {unit_id}: encoded column {:?} has no observed values",
                    encoded.columns[c].name
                )));
            }
            marginals.push(MarginalModel::fit(&observed, mode)?);
        }

        // Latent scores: z = Φ⁻¹(F(x)); NaN marks absent cells.
        let mut latent: Vec<Vec<f64>> = Vec::with_capacity(d);
        for (c, col) in encoded.values.iter().enumerate() {
            let m = &marginals[c];
            latent.push(
                col.iter()
                    .map(|&x| {
                        if x.is_finite() {
                            let z = stats::norm_quantile(stats::clamp_unit_open(m.cdf(x)));
                            debug_assert!(z.is_finite());
                            z
                        } else {
                            f64::NAN
                        }
                    })
                    .collect(),
            );
        }

        let mut constant_columns = Vec::new();
        for (c, z) in latent.iter().enumerate() {
            let obs: Vec<f64> = z.iter().copied().filter(|v| v.is_finite()).collect();
            if obs.len() < 2 || stats::variance(&obs) <= 1e-24 {
                constant_columns.push(c);
            }
        }
        if !constant_columns.is_empty() {
            log::warn!(
                "fitting unit {unit_id}: {} constant encoded column(s); their correlations are 0",
                constant_columns.len()
            );
        }

        // Pairwise-complete Pearson correlation in latent space.
        let mut sigma = DMatrix::identity(d, d);
        for i in 0..d {
            for j in (i + 1)..d {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for r in 0..n {
                    let (a, b) = (latent[i][r], latent[j][r]);
                    if a.is_finite() && b.is_finite() {
                        xs.push(a);
                        ys.push(b);
                    }
                }
                let rho = stats::pearson(&xs, &ys);
                sigma[(i, j)] = rho;
                sigma[(j, i)] = rho;
            }
        }

        let (sigma, min_eig) = repair_psd(&sigma);
        Ok(CopulaModel {
            marginals,
            sigma,
            cond_index,
            unit_id: unit_id.to_string(),
            min_eigenvalue_before_repair: min_eig,
            constant_columns,
        })
    }

    /// Dimension of the copula.
    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    /// Condition the latent Gaussian on the encoded cluster value.
    ///
    /// Exact partitioned-Gaussian arithmetic with latent means 0 and unit
    /// variances: `μ̄ = Σ_ab z_b / Σ_bb`, `Σ̄ = Σ_aa − Σ_ab Σ_ba / Σ_bb`.
    pub fn condition(&self, cluster_value: f64) -> Result<ConditionalGaussian> {
        let b = self.cond_index.ok_or_else(|| {
            Error::SpecInvalid("model has no conditioning column".into())
        })?;
        let d = self.dim();
        let sigma_bb = self.sigma[(b, b)];
        if sigma_bb <= 1e-12 {
            return Err(Error::SingularConditioner(format!(
                "conditioning variance {sigma_bb} in unit {}",
                self.unit_id
            )));
        }
        let z_b = stats::norm_quantile(stats::clamp_unit_open(
            self.marginals[b].cdf(cluster_value),
        ));
        let indices: Vec<usize> = (0..d).filter(|&i| i != b).collect();
        let a = indices.len();
        let mut mu = DVector::zeros(a);
        let mut sigma = DMatrix::zeros(a, a);
        for (i, &ai) in indices.iter().enumerate() {
            mu[i] = self.sigma[(ai, b)] / sigma_bb * z_b;
            for (j, &aj) in indices.iter().enumerate() {
                sigma[(i, j)] =
                    self.sigma[(ai, aj)] - self.sigma[(ai, b)] * self.sigma[(b, aj)] / sigma_bb;
            }
        }
        Ok(ConditionalGaussian { mu, sigma, indices })
    }

    /// The unconditional latent Gaussian (used when there is no conditioning
    /// column, and as the documented fallback when conditioning is singular).
    pub fn unconditional(&self) -> ConditionalGaussian {
        let indices: Vec<usize> = match self.cond_index {
            Some(b) => (0..self.dim()).filter(|&i| i != b).collect(),
            None => (0..self.dim()).collect(),
        };
        let a = indices.len();
        let mut sigma = DMatrix::zeros(a, a);
        for (i, &ai) in indices.iter().enumerate() {
            for (j, &aj) in indices.iter().enumerate() {
                sigma[(i, j)] = self.sigma[(ai, aj)];
            }
        }
        ConditionalGaussian {
            mu: DVector::zeros(a),
            sigma,
            indices,
        }
    }

    /// Gaussian-copula density at an interior point of the unit cube:
    /// `(det Σ)^(-1/2) · exp(-½ zᵀ(Σ⁻¹ − I)z)` with `z = Φ⁻¹(u)`.
    pub fn density(&self, u: &[f64]) -> Result<f64> {
        let d = self.dim();
        if u.len() != d {
            return Err(Error::SpecInvalid(format!(
                "density point has {} coordinates, copula has {d}",
                u.len()
            )));
        }
        if u.iter().any(|&ui| !(ui > 0.0 && ui < 1.0)) {
            return Err(Error::NumericalFailure(
                "copula density needs a point strictly inside the unit cube".into(),
            ));
        }
        let chol = nalgebra::Cholesky::new(self.sigma.clone()).ok_or_else(|| {
            Error::SingularCovariance(format!(
                "correlation matrix of unit {} is not positive definite",
                self.unit_id
            ))
        })?;
        let det: f64 = chol.l().diagonal().iter().map(|v| v * v).product();
        let z = DVector::from_iterator(d, u.iter().map(|&ui| stats::norm_quantile(ui)));
        let solved = chol.solve(&z); // Σ⁻¹ z
        let quad = z.dot(&solved) - z.dot(&z); // zᵀ(Σ⁻¹ − I)z
        Ok(det.powf(-0.5) * (-0.5 * quad).exp())
    }

    /// Serialize marginal parameters and Σ (supports refitting workflows and
    /// audit).
    pub fn to_json(&self) -> Value {
        json!({
            "unit_id": self.unit_id,
            "marginals": self.marginals,
            "sigma": (0..self.dim())
                .map(|i| self.sigma.row(i).iter().copied().collect::<Vec<f64>>())
                .collect::<Vec<_>>(),
            "cond_index": self.cond_index,
            "min_eigenvalue_before_repair": self.min_eigenvalue_before_repair,
            "constant_columns": self.constant_columns,
        })
    }
}

/// Clip negative eigenvalues to zero and rescale to a unit diagonal.
/// Returns the repaired matrix and the smallest eigenvalue seen before
/// repair. Idempotent on already-PSD matrices up to floating-point noise.
pub fn repair_psd(sigma: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let d = sigma.nrows();
    let eig = nalgebra::SymmetricEigen::new(sigma.clone());
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig >= 0.0 {
        return (sigma.clone(), min_eig);
    }
    let clipped = DVector::from_iterator(d, eig.eigenvalues.iter().map(|&l| l.max(0.0)));
    let mut m = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    // Rescale to a unit diagonal; a column whose variance collapsed entirely
    // becomes an independent coordinate.
    for i in 0..d {
        let di = m[(i, i)];
        if di <= 1e-300 {
            for j in 0..d {
                m[(i, j)] = 0.0;
                m[(j, i)] = 0.0;
            }
            m[(i, i)] = 1.0;
        }
    }
    let scale: Vec<f64> = (0..d).map(|i| m[(i, i)].sqrt()).collect();
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] /= scale[i] * scale[j];
        }
    }
    // Exact symmetry and unit diagonal.
    for i in 0..d {
        m[(i, i)] = 1.0;
        for j in (i + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    (m, min_eig)
}

/// A Cholesky-based sampler for `N(mu, sigma)` with a jitter ladder.
pub struct GaussianSampler {
    mu: DVector<f64>,
    l: DMatrix<f64>,
}

impl GaussianSampler {
    /// Factor the covariance, adding diagonal jitter if needed.
    pub fn new(cond: &ConditionalGaussian) -> Result<Self> {
        let d = cond.sigma.nrows();
        for jitter in JITTERS {
            let mut s = cond.sigma.clone();
            for i in 0..d {
                s[(i, i)] += jitter;
            }
            if let Some(chol) = nalgebra::Cholesky::new(s) {
                if jitter > 0.0 {
                    log::debug!("covariance needed diagonal jitter {jitter}");
                }
                return Ok(GaussianSampler {
                    mu: cond.mu.clone(),
                    l: chol.l(),
                });
            }
        }
        Err(Error::SingularCovariance(format!(
            "conditional covariance failed to factor even with jitter {}",
            JITTERS[JITTERS.len() - 1]
        )))
    }

    /// One draw.
    pub fn draw(&self, rng: &mut StreamRng) -> DVector<f64> {
        let d = self.mu.len();
        let z = DVector::from_iterator(
            d,
            (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)),
        );
        &self.mu + &self.l * z
    }
}

/// Synthesis options for [`synthesize_survey`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittingLevel {
    /// One copula for the whole survey.
    Country,
    /// One copula per stratum (the default).
    Strata,
    /// One copula per zip code.
    Zip,
}

/// Draw `n` synthetic rows for one cluster from a fitted model.
///
/// Rows are drawn from the conditional latent Gaussian, mapped through the
/// marginals, decoded, and accepted only when every constraint holds. The
/// returned table is over the encoder's (sub-)schema with the cluster column
/// fixed to `cluster_class`.
pub fn sample_synthetic(
    model: &CopulaModel,
    encoder: &Encoder,
    cluster_attr: usize,
    cluster_class: u32,
    n: usize,
    constraints: &ConstraintSet,
    rng: &mut StreamRng,
) -> Result<MicroTable> {
    let schema = Arc::clone(encoder.schema());
    let cluster_label = schema.attr(cluster_attr).classes[cluster_class as usize].clone();
    let cond = match model.cond_index {
        None => model.unconditional(),
        Some(_) => {
            let x_b = encoder.encode_class(cluster_attr, cluster_class)?;
            match model.condition(x_b) {
                Ok(c) => c,
                Err(Error::SingularConditioner(msg)) => {
                    log::warn!("{msg}; falling back to the unconditional distribution");
                    model.unconditional()
                }
                Err(e) => return Err(e),
            }
        }
    };
    let sampler = GaussianSampler::new(&cond)?;

    // Encoded column index → decoded cell, assembled per draw.
    let mut builder = TableBuilder::new(Arc::clone(&schema));
    let budget = REJECTION_BUDGET_PER_ROW.saturating_mul(n.max(1));
    let mut spent = 0usize;
    let mut accepted = 0usize;
    let mut rejections: BTreeMap<String, usize> = BTreeMap::new();

    // Map each schema attribute to its encoded column span once.
    let spans = attr_spans(encoder, &schema);

    while accepted < n {
        if spent >= budget {
            for (label, count) in &rejections {
                log::warn!(
                    "cluster {cluster_label}: constraint {label} rejected {count} draws"
                );
            }
            return Err(Error::RejectionBudgetExceeded {
                cluster: cluster_label,
                budget,
            });
        }
        spent += 1;
        let v = sampler.draw(rng);

        // Encoded row: conditioned coordinates from the draw, the cluster
        // column pinned to the conditioning cluster.
        let mut encoded_row = vec![f64::NAN; model.dim()];
        for (k, &col) in cond.indices.iter().enumerate() {
            let u = stats::norm_cdf(v[k]);
            encoded_row[col] = model.marginals[col].quantile(u);
        }
        if let Some(b) = model.cond_index {
            encoded_row[b] = encoder.encode_class(cluster_attr, cluster_class)?;
        }

        // Decode to schema cells.
        let mut cells: Vec<CellValue> = Vec::with_capacity(schema.len());
        for (attr_idx, attr) in schema.attrs().iter().enumerate() {
            let span = &spans[attr_idx];
            match attr.kind {
                AttrKind::Continuous => {
                    let mut x = encoded_row[span.start];
                    if encoder.integer_valued(attr_idx) {
                        x = x.round();
                    }
                    if let Some([lo, hi]) = attr.bounds {
                        x = x.clamp(lo, hi);
                    }
                    cells.push(CellValue::Num(x));
                }
                AttrKind::Categorical => {
                    if attr_idx == cluster_attr {
                        cells.push(CellValue::Class(cluster_class));
                    } else if span.len() == 1 {
                        cells.push(CellValue::Class(
                            encoder.decode_value(attr_idx, encoded_row[span.start]),
                        ));
                    } else {
                        // One-hot block: arg-max, ties to the lowest class.
                        let mut best = 0u32;
                        let mut best_v = f64::NEG_INFINITY;
                        for (class, col) in span.clone().enumerate() {
                            if encoded_row[col] > best_v {
                                best_v = encoded_row[col];
                                best = class as u32;
                            }
                        }
                        cells.push(CellValue::Class(best));
                    }
                }
            }
        }

        match violated_constraint(&schema, &cells, constraints) {
            Some(label) => {
                *rejections.entry(label).or_insert(0) += 1;
            }
            None => {
                builder.push_row(&cells)?;
                accepted += 1;
            }
        }
    }
    builder.finish(Provenance::Synthetic)
}

/// Encoded-column span per schema attribute (one column, or a one-hot block).
/// The encoder lays encoded columns out in schema order.
fn attr_spans(encoder: &Encoder, schema: &crate::schema::Schema) -> Vec<std::ops::Range<usize>> {
    let mut spans = Vec::with_capacity(schema.len());
    let mut col = 0usize;
    for idx in 0..schema.len() {
        let width = encoder.encoded_width(idx);
        spans.push(col..col + width);
        col += width;
    }
    spans
}

/// First violated constraint's label, or `None` when all hold.
fn violated_constraint(
    schema: &crate::schema::Schema,
    cells: &[CellValue],
    constraints: &ConstraintSet,
) -> Option<String> {
    let value_of = |name: &str| -> Option<f64> {
        let idx = schema.index_of(name)?;
        match cells[idx] {
            CellValue::Num(v) => Some(v),
            _ => None,
        }
    };
    for c in &constraints.constraints {
        let ok = match c {
            Constraint::Range { attr, lo, hi } => match value_of(attr) {
                Some(v) => v >= *lo && v <= *hi,
                None => false,
            },
            Constraint::LinearSum { lhs, rhs } => {
                let sum: Option<f64> = lhs.iter().map(|a| value_of(a)).sum();
                match (sum, value_of(rhs)) {
                    (Some(s), Some(r)) => {
                        (s.round() - r.round()).abs() < 0.5
                    }
                    _ => false,
                }
            }
        };
        if !ok {
            return Some(c.label());
        }
    }
    None
}

/// Synthesize a full survey: fit an encoder + copula per fitting unit, then
/// draw each cluster's rows conditionally.
///
/// Structural columns are not synthesized: the cluster column is pinned to
/// the conditioning cluster; stratum, zip, and admin columns are derived from
/// the cluster (they are constant within it); the sampling weight is copied
/// from the cluster's observed weights (their mean — exact under a design
/// with a fixed within-cluster take); household identifiers are set to the
/// household attribute's missing class, since synthetic individuals belong to
/// no real household.
///
/// `rate` scales each cluster's synthetic row count (`n_j → max(1,
/// round(rate·n_j))`) for sample-size sensitivity runs.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_survey(
    survey: &MicroTable,
    level: FittingLevel,
    scheme: EncodingScheme,
    mode: MarginalMode,
    constraints: &ConstraintSet,
    rate: f64,
    rng: &StreamRng,
) -> Result<MicroTable> {
    if !(rate > 0.0) {
        return Err(Error::SpecInvalid(format!(
            "synthetic sampling rate {rate} must be positive"
        )));
    }
    let schema = survey.schema();
    constraints.validate(schema)?;
    let cluster_idx = schema.require_role(GeoRole::Cluster)?;

    // Structural lookups: cluster → stratum/zip/admin class, weight.
    let mut derived: Vec<(usize, BTreeMap<u32, u32>)> = Vec::new();
    for role in [GeoRole::Stratum, GeoRole::ZipCode, GeoRole::AdminArea] {
        if let Some(idx) = schema.role_index(role) {
            derived.push((idx, survey.class_map(cluster_idx, idx)?));
        }
    }
    let weight_idx = schema.role_index(GeoRole::Weight);
    let cluster_weight: BTreeMap<u32, f64> = match weight_idx {
        Some(widx) => {
            let codes = survey.categorical(cluster_idx)?;
            let w = survey.continuous(widx)?;
            let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
            for (r, &c) in codes.iter().enumerate() {
                let e = sums.entry(c).or_insert((0.0, 0));
                e.0 += w[r].expect("weights validated present");
                e.1 += 1;
            }
            sums.into_iter()
                .map(|(c, (s, k))| (c, s / k as f64))
                .collect()
        }
        None => BTreeMap::new(),
    };
    let household_missing: Option<(usize, u32)> = match schema.role_index(GeoRole::Household) {
        Some(idx) => {
            let missing = schema.attr(idx).missing_index().ok_or_else(|| {
                Error::SpecInvalid(format!(
                    "household column {:?} needs a missing class: synthetic individuals \
                     belong to no real household",
                    schema.attr(idx).name
                ))
            })?;
            Some((idx, missing))
        }
        None => None,
    };

    // Sub-schema for fitting: analytic attributes in schema order, cluster
    // id last (the conditioning column).
    let mut sub_names: Vec<&str> = schema
        .non_geo_indices()
        .into_iter()
        .map(|i| schema.attr(i).name.as_str())
        .collect();
    sub_names.push(schema.attr(cluster_idx).name.as_str());

    // Fitting units.
    let unit_groups: Vec<(String, Vec<usize>)> = match level {
        FittingLevel::Country => vec![("country".to_string(), (0..survey.n_rows()).collect())],
        FittingLevel::Strata => {
            let idx = schema.require_role(GeoRole::Stratum)?;
            survey
                .group_by_class(idx)?
                .into_iter()
                .map(|(c, rows)| (schema.attr(idx).classes[c as usize].clone(), rows))
                .collect()
        }
        FittingLevel::Zip => {
            let idx = schema.require_role(GeoRole::ZipCode)?;
            survey
                .group_by_class(idx)?
                .into_iter()
                .map(|(c, rows)| (schema.attr(idx).classes[c as usize].clone(), rows))
                .collect()
        }
    };

    let mut builder = TableBuilder::new(Arc::clone(schema));
    for (unit_id, rows) in unit_groups {
        let unit_table = survey.take_rows(&rows);
        let sub = unit_table.select(&sub_names)?;
        let sub_schema = Arc::clone(sub.schema());
        let sub_cluster = sub_schema.len() - 1;
        let cluster_name = sub_schema.attr(sub_cluster).name.clone();
        let encoder = Encoder::fit_with(
            &sub,
            scheme,
            &[(cluster_name.as_str(), EncodingScheme::Frequency)],
        )?;
        let encoded = encoder.transform(&sub)?;
        let cond_index = encoded
            .column_of_attr(sub_cluster)
            .expect("cluster column is encoded");
        let model = CopulaModel::fit(&encoded, &unit_id, Some(cond_index), mode)?;

        for (cluster_code, cluster_rows) in sub.group_by_class(sub_cluster)? {
            let n_true = cluster_rows.len();
            let n_syn = ((rate * n_true as f64).round() as usize).max(1);
            let cluster_label = &sub_schema.attr(sub_cluster).classes[cluster_code as usize];
            let mut cluster_rng = rng.child(&format!("synthesize/{unit_id}/{cluster_label}"));
            let drawn = sample_synthetic(
                &model,
                &encoder,
                sub_cluster,
                cluster_code,
                n_syn,
                constraints,
                &mut cluster_rng,
            )?;

            // Reassemble full-schema rows.
            let full_cluster_code = schema
                .attr(cluster_idx)
                .class_index(cluster_label)
                .expect("cluster class exists in the full schema");
            for r in 0..drawn.n_rows() {
                let mut cells = Vec::with_capacity(schema.len());
                for (idx, attr) in schema.attrs().iter().enumerate() {
                    if idx == cluster_idx {
                        cells.push(CellValue::Class(full_cluster_code));
                        continue;
                    }
                    if let Some((_, map)) = derived.iter().find(|(i, _)| *i == idx) {
                        cells.push(CellValue::Class(
                            *map.get(&full_cluster_code).expect("cluster seen in survey"),
                        ));
                        continue;
                    }
                    if Some(idx) == weight_idx {
                        cells.push(CellValue::Num(cluster_weight[&full_cluster_code]));
                        continue;
                    }
                    if let Some((hidx, missing)) = household_missing {
                        if idx == hidx {
                            cells.push(CellValue::Class(missing));
                            continue;
                        }
                    }
                    // Analytic attribute: copy from the drawn sub-row.
                    let sub_idx = drawn
                        .schema()
                        .index_of(&attr.name)
                        .expect("analytic attribute present in sub-schema");
                    match attr.kind {
                        AttrKind::Continuous => {
                            match drawn.continuous(sub_idx)?[r] {
                                Some(v) => cells.push(CellValue::Num(v)),
                                None => cells.push(CellValue::Absent),
                            }
                        }
                        AttrKind::Categorical => {
                            cells.push(CellValue::Class(drawn.categorical(sub_idx)?[r]));
                        }
                    }
                }
                builder.push_row(&cells)?;
            }
        }
    }
    builder.finish(Provenance::Synthetic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{AttributeSpec, Schema};
    use approx::assert_abs_diff_eq;

    fn encoded_from_columns(cols: Vec<(&str, Vec<f64>)>) -> EncodedTable {
        let n = cols[0].1.len();
        EncodedTable {
            columns: cols
                .iter()
                .enumerate()
                .map(|(i, (name, _))| crate::encoding::EncodedColumn {
                    attr_index: i,
                    name: name.to_string(),
                    part: crate::encoding::ColumnPart::Passthrough,
                })
                .collect(),
            values: cols.into_iter().map(|(_, v)| v).collect(),
            n_rows: n,
        }
    }

    #[test]
    fn comonotone_pair_has_unit_correlation() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 * 0.1).collect();
        let enc = encoded_from_columns(vec![("x", xs.clone()), ("y", xs)]);
        let m = CopulaModel::fit(&enc, "t", None, MarginalMode::Gaussian).unwrap();
        assert_abs_diff_eq!(m.sigma[(0, 1)], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn independent_columns_have_small_correlation() {
        let mut rng = StreamRng::derived(5, "copula/indep");
        let xs: Vec<f64> = (0..10_000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let ys: Vec<f64> = (0..10_000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let enc = encoded_from_columns(vec![("x", xs), ("y", ys)]);
        let m = CopulaModel::fit(&enc, "t", None, MarginalMode::Gaussian).unwrap();
        assert!(m.sigma[(0, 1)].abs() < 0.05, "rho = {}", m.sigma[(0, 1)]);
    }

    #[test]
    fn one_dimensional_sigma_is_one() {
        let enc = encoded_from_columns(vec![("x", vec![1.0, 2.0, 3.0, 4.0])]);
        let m = CopulaModel::fit(&enc, "t", None, MarginalMode::Gaussian).unwrap();
        assert_eq!(m.dim(), 1);
        assert_eq!(m.sigma[(0, 0)], 1.0);
    }

    #[test]
    fn small_sample_rejected() {
        let enc = encoded_from_columns(vec![
            ("a", vec![1.0, 2.0]),
            ("b", vec![2.0, 1.0]),
        ]);
        let err = CopulaModel::fit(&enc, "zip-07", None, MarginalMode::Gaussian).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::SmallSample(_)));
        assert!(msg.contains("zip-07"), "{msg}");
    }

    fn toy_model(rho: f64) -> CopulaModel {
        let mut sigma = DMatrix::identity(2, 2);
        sigma[(0, 1)] = rho;
        sigma[(1, 0)] = rho;
        CopulaModel {
            marginals: vec![
                MarginalModel::fit(&[0.0, 1.0, 2.0, 3.0], MarginalMode::Gaussian).unwrap(),
                MarginalModel::fit(&[0.0, 1.0, 2.0, 3.0], MarginalMode::Gaussian).unwrap(),
            ],
            sigma,
            cond_index: Some(1),
            unit_id: "toy".into(),
            min_eigenvalue_before_repair: 1.0 - rho.abs(),
            constant_columns: vec![],
        }
    }

    #[test]
    fn identity_sigma_condition_is_identity() {
        let m = toy_model(0.0);
        let c = m.condition(1.5).unwrap();
        assert_abs_diff_eq!(c.mu[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.sigma[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bivariate_condition_matches_closed_form() {
        let rho = 0.6;
        let m = toy_model(rho);
        // Condition on a value whose latent score is known:
        // marginal is N(1.5, sd); pick x so z_b = Φ⁻¹(F(x)).
        let x = 2.0;
        let z_b = stats::norm_quantile(m.marginals[1].cdf(x));
        let c = m.condition(x).unwrap();
        assert_abs_diff_eq!(c.mu[0], rho * z_b, epsilon = 1e-12);
        assert_abs_diff_eq!(c.sigma[(0, 0)], 1.0 - rho * rho, epsilon = 1e-12);
    }

    #[test]
    fn density_identity_sigma_is_one() {
        let m = toy_model(0.0);
        for u in [[0.5, 0.5], [0.1, 0.9], [0.73, 0.21]] {
            assert_abs_diff_eq!(m.density(&u).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn density_bivariate_center_reference() {
        let m = toy_model(0.5);
        // At u = (0.5, 0.5), z = 0, leaving only (det Σ)^(-1/2) = 1/√(1−ρ²).
        assert_abs_diff_eq!(
            m.density(&[0.5, 0.5]).unwrap(),
            1.0 / (1.0 - 0.25f64).sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn density_rejects_boundary_points() {
        let m = toy_model(0.2);
        assert!(m.density(&[0.0, 0.5]).is_err());
        assert!(m.density(&[0.5, 1.0]).is_err());
    }

    #[test]
    fn psd_repair_is_idempotent_on_psd_input() {
        let mut sigma = DMatrix::identity(3, 3);
        sigma[(0, 1)] = 0.4;
        sigma[(1, 0)] = 0.4;
        sigma[(1, 2)] = -0.3;
        sigma[(2, 1)] = -0.3;
        let (repaired, min_eig) = repair_psd(&sigma);
        assert!(min_eig > 0.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(repaired[(i, j)], sigma[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn psd_repair_fixes_indefinite_matrix() {
        // Pairwise correlations that no joint distribution can have.
        let mut sigma = DMatrix::identity(3, 3);
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            sigma[(i, j)] = -0.9;
            sigma[(j, i)] = -0.9;
        }
        let (repaired, min_eig) = repair_psd(&sigma);
        assert!(min_eig < -1e-6);
        let eig = nalgebra::SymmetricEigen::new(repaired.clone());
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12));
        for i in 0..3 {
            assert_abs_diff_eq!(repaired[(i, i)], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sampler_survives_semidefinite_covariance() {
        let cond = ConditionalGaussian {
            mu: DVector::zeros(2),
            sigma: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            indices: vec![0, 1],
        };
        let s = GaussianSampler::new(&cond).unwrap();
        let mut rng = StreamRng::derived(9, "copula/semidef");
        let v = s.draw(&mut rng);
        assert_abs_diff_eq!(v[0], v[1], epsilon = 1e-2);
    }

    /// Survey fixture: 2 strata × 2 clusters × ~30 rows with one categorical
    /// and one continuous analytic attribute.
    fn survey_fixture() -> MicroTable {
        let schema = Arc::new(
            Schema::new(vec![
                AttributeSpec::categorical("stratum", &["s1", "s2"]).with_role(GeoRole::Stratum),
                AttributeSpec::categorical("cluster", &["c1", "c2", "c3", "c4"])
                    .with_role(GeoRole::Cluster),
                AttributeSpec::categorical("zip", &["z1", "z2", "z3", "z4"])
                    .with_role(GeoRole::ZipCode),
                AttributeSpec::continuous("age", Some([0.0, 100.0])),
                AttributeSpec::categorical("edu", &["low", "high"]),
                AttributeSpec::continuous("w", None).with_role(GeoRole::Weight),
            ])
            .unwrap(),
        );
        let mut b = TableBuilder::new(Arc::clone(&schema));
        let mut rng = StreamRng::derived(77, "copula/fixture");
        for cluster in 0..4u32 {
            let stratum = cluster / 2;
            let n = 25 + 5 * cluster as usize;
            for _ in 0..n {
                let age = 30.0
                    + 8.0 * cluster as f64
                    + 10.0 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                let edu = if rng.random::<f64>() < 0.3 + 0.15 * cluster as f64 {
                    1
                } else {
                    0
                };
                b.push_row(&[
                    CellValue::Class(stratum),
                    CellValue::Class(cluster),
                    CellValue::Class(cluster), // one zip per cluster
                    CellValue::Num(age.clamp(0.0, 100.0)),
                    CellValue::Class(edu),
                    CellValue::Num(2.5),
                ])
                .unwrap();
            }
        }
        b.finish(Provenance::True).unwrap()
    }

    #[test]
    fn synthesized_survey_preserves_cluster_histogram() {
        let survey = survey_fixture();
        let rng = StreamRng::derived(101, "copula/synth");
        let synth = synthesize_survey(
            &survey,
            FittingLevel::Strata,
            EncodingScheme::Frequency,
            MarginalMode::Gaussian,
            &ConstraintSet::empty(),
            1.0,
            &rng,
        )
        .unwrap();
        assert_eq!(synth.n_rows(), survey.n_rows());
        assert_eq!(synth.provenance(), Provenance::Synthetic);
        let cl = survey.schema().require_role(GeoRole::Cluster).unwrap();
        let mut true_hist: BTreeMap<u32, usize> = BTreeMap::new();
        let mut syn_hist: BTreeMap<u32, usize> = BTreeMap::new();
        for &c in survey.categorical(cl).unwrap() {
            *true_hist.entry(c).or_insert(0) += 1;
        }
        for &c in synth.categorical(cl).unwrap() {
            *syn_hist.entry(c).or_insert(0) += 1;
        }
        assert_eq!(true_hist, syn_hist);
    }

    #[test]
    fn synthesized_structural_columns_are_derived() {
        let survey = survey_fixture();
        let rng = StreamRng::derived(102, "copula/synth2");
        let synth = synthesize_survey(
            &survey,
            FittingLevel::Country,
            EncodingScheme::Frequency,
            MarginalMode::Gaussian,
            &ConstraintSet::empty(),
            1.0,
            &rng,
        )
        .unwrap();
        let schema = synth.schema();
        let cl = schema.require_role(GeoRole::Cluster).unwrap();
        let zip = schema.require_role(GeoRole::ZipCode).unwrap();
        let st = schema.require_role(GeoRole::Stratum).unwrap();
        for r in 0..synth.n_rows() {
            let c = synth.categorical(cl).unwrap()[r];
            assert_eq!(synth.categorical(zip).unwrap()[r], c, "zip follows cluster");
            assert_eq!(synth.categorical(st).unwrap()[r], c / 2);
        }
        assert_eq!(synth.weights().unwrap(), vec![2.5; synth.n_rows()]);
    }

    #[test]
    fn rate_scales_cluster_counts() {
        let survey = survey_fixture();
        let rng = StreamRng::derived(103, "copula/rate");
        let synth = synthesize_survey(
            &survey,
            FittingLevel::Strata,
            EncodingScheme::Frequency,
            MarginalMode::Gaussian,
            &ConstraintSet::empty(),
            2.0,
            &rng,
        )
        .unwrap();
        assert_eq!(synth.n_rows(), 2 * survey.n_rows());
    }

    #[test]
    fn determinism_same_seed_same_table() {
        let survey = survey_fixture();
        let a = synthesize_survey(
            &survey,
            FittingLevel::Strata,
            EncodingScheme::Frequency,
            MarginalMode::Gaussian,
            &ConstraintSet::empty(),
            1.0,
            &StreamRng::derived(7, "synth"),
        )
        .unwrap();
        let b = synthesize_survey(
            &survey,
            FittingLevel::Strata,
            EncodingScheme::Frequency,
            MarginalMode::Gaussian,
            &ConstraintSet::empty(),
            1.0,
            &StreamRng::derived(7, "synth"),
        )
        .unwrap();
        for col in 0..a.n_cols() {
            assert_eq!(a.column(col), b.column(col));
        }
    }

    #[test]
    fn range_constraint_holds_on_every_row() {
        let survey = survey_fixture();
        let constraints = ConstraintSet {
            constraints: vec![Constraint::Range {
                attr: "age".into(),
                lo: 25.0,
                hi: 75.0,
            }],
        };
        let rng = StreamRng::derived(104, "copula/constr");
        let synth = synthesize_survey(
            &survey,
            FittingLevel::Strata,
            EncodingScheme::Frequency,
            MarginalMode::Gaussian,
            &constraints,
            1.0,
            &rng,
        )
        .unwrap();
        let age = synth.schema().require("age").unwrap();
        for v in synth.continuous(age).unwrap().iter().flatten() {
            assert!(*v >= 25.0 && *v <= 75.0);
        }
    }

    #[test]
    fn impossible_constraint_exhausts_budget() {
        let survey = survey_fixture();
        let constraints = ConstraintSet {
            constraints: vec![Constraint::Range {
                attr: "age".into(),
                lo: -10.0,
                hi: -5.0,
            }],
        };
        let rng = StreamRng::derived(105, "copula/budget");
        let err = synthesize_survey(
            &survey,
            FittingLevel::Strata,
            EncodingScheme::Frequency,
            MarginalMode::Gaussian,
            &constraints,
            1.0,
            &rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::RejectionBudgetExceeded { .. }), "{err}");
    }

    #[test]
    fn onehot_level_also_roundtrips() {
        let survey = survey_fixture();
        let rng = StreamRng::derived(106, "copula/onehot");
        let synth = synthesize_survey(
            &survey,
            FittingLevel::Strata,
            EncodingScheme::OneHot,
            MarginalMode::Gaussian,
            &ConstraintSet::empty(),
            1.0,
            &rng,
        )
        .unwrap();
        assert_eq!(synth.n_rows(), survey.n_rows());
    }
}
