//! Distributional utility: normalized Kullback–Leibler divergence per
//! (attribute, zip) cell.
//!
//! For each analytic attribute and each zip code, the census rows of that
//! zip give the reference distribution `P` and the evaluated survey's rows
//! give `Q`; the score is `Z = 1 / (1 + D_KL(P‖Q))` with the divergence in
//! bits, so `Z ∈ (0, 1]` and `Z = 1` exactly when the distributions agree.
//! Continuous attributes are discretized into 20 equal-width bins spanning
//! the census range. Cells where either side has no rows stay empty.
//!
//! `D_KL(P‖Q)` is infinite when the survey assigns zero mass to a class the
//! census populates; only in that case is a Jeffreys (add-½) pseudo-count
//! applied to the survey side. The census side is never smoothed, and cells
//! with agreeing supports are never smoothed, which keeps `Z = 1` exact for
//! identical distributions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttrKind, GeoRole};
use crate::table::MicroTable;

/// Bins used to discretize continuous attributes.
pub const CONTINUOUS_BINS: usize = 20;

/// Normalized-KL scores per attribute × zip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlGrid {
    /// Row labels: analytic attributes, ordered by class count (ascending).
    pub attrs: Vec<String>,
    /// Column labels: zip codes, ordered by survey sample size (descending).
    pub zips: Vec<String>,
    /// `z[row][col]`; `None` when the cell has no census or no survey rows.
    pub z: Vec<Vec<Option<f64>>>,
    /// Survey rows per zip, aligned with `zips`. Averaged across replicates
    /// this becomes fractional.
    pub sample_sizes: Vec<f64>,
    /// Mean over the populated cells.
    pub overall: f64,
}

/// `D_KL(P‖Q)` in bits. Terms with `p = 0` contribute nothing; the caller
/// must ensure `q > 0` wherever `p > 0`.
pub fn kl_bits(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).log2())
        .sum()
}

/// `Z = 1 / (1 + D_KL)` from raw cell masses, applying the conditional
/// survey-side Jeffreys smoothing. Returns `None` if either side is empty.
pub fn z_kl(census_counts: &[f64], survey_counts: &[f64]) -> Option<f64> {
    let cn: f64 = census_counts.iter().sum();
    let sn: f64 = survey_counts.iter().sum();
    if cn <= 0.0 || sn <= 0.0 {
        return None;
    }
    let p: Vec<f64> = census_counts.iter().map(|c| c / cn).collect();
    let needs_smoothing = census_counts
        .iter()
        .zip(survey_counts)
        .any(|(&c, &s)| c > 0.0 && s <= 0.0);
    let q: Vec<f64> = if needs_smoothing {
        let denom = sn + 0.5 * survey_counts.len() as f64;
        survey_counts.iter().map(|s| (s + 0.5) / denom).collect()
    } else {
        survey_counts.iter().map(|s| s / sn).collect()
    };
    Some(1.0 / (1.0 + kl_bits(&p, &q)))
}

/// How many cells an attribute's distribution has.
fn cell_count(table: &MicroTable, idx: usize) -> usize {
    match table.schema().attr(idx).kind {
        AttrKind::Categorical => table.schema().attr(idx).classes.len(),
        AttrKind::Continuous => CONTINUOUS_BINS,
    }
}

/// Equal-width bin of `x` over `[lo, hi]`, clamped into range.
fn bin_of(x: f64, lo: f64, hi: f64) -> usize {
    let width = (hi - lo) / CONTINUOUS_BINS as f64;
    if !(width > 0.0) {
        return 0;
    }
    (((x - lo) / width).floor() as isize).clamp(0, CONTINUOUS_BINS as isize - 1) as usize
}

/// Per-zip cell masses of one attribute: `counts[zip][cell]`. Continuous
/// cells are binned over `range`; absent cells contribute nothing.
fn masses(
    table: &MicroTable,
    idx: usize,
    zips: &[u32],
    n_zips: usize,
    range: (f64, f64),
    weights: Option<&[f64]>,
) -> Result<Vec<Vec<f64>>> {
    let n_cells = cell_count(table, idx);
    let mut out = vec![vec![0.0; n_cells]; n_zips];
    let w = |r: usize| weights.map_or(1.0, |w| w[r]);
    match table.schema().attr(idx).kind {
        AttrKind::Categorical => {
            for (r, &c) in table.categorical(idx)?.iter().enumerate() {
                out[zips[r] as usize][c as usize] += w(r);
            }
        }
        AttrKind::Continuous => {
            for (r, v) in table.continuous(idx)?.iter().enumerate() {
                if let Some(x) = v {
                    out[zips[r] as usize][bin_of(*x, range.0, range.1)] += w(r);
                }
            }
        }
    }
    Ok(out)
}

/// Census range of a continuous attribute (finite values only).
fn census_range(census: &MicroTable, idx: usize) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in census.continuous(idx)?.iter().flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if lo > hi {
        return Err(Error::EmptyColumn(
            census.schema().attr(idx).name.clone(),
        ));
    }
    Ok((lo, hi))
}

/// The normalized-KL grid of a survey against the census.
///
/// Rows are the survey's analytic (non-geography) attributes, each of which
/// must exist in the census with the same kind and class vocabulary. With
/// `use_weights` the survey-side masses are design-weighted; the census side
/// is always raw counts.
pub fn kl_grid(survey: &MicroTable, census: &MicroTable, use_weights: bool) -> Result<KlGrid> {
    let s_schema = survey.schema();
    let c_schema = census.schema();
    let s_zip = s_schema.require_role(GeoRole::ZipCode)?;
    let c_zip = c_schema.require_role(GeoRole::ZipCode)?;
    if s_schema.attr(s_zip).classes != c_schema.attr(c_zip).classes {
        return Err(Error::SchemaMismatch(
            "survey and census disagree on the zip vocabulary".into(),
        ));
    }
    let zip_labels = &s_schema.attr(s_zip).classes;
    let n_zips = zip_labels.len();

    // Attribute rows, with their census twins, ordered by class count.
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for si in s_schema.non_geo_indices() {
        let name = &s_schema.attr(si).name;
        let ci = c_schema.require(name)?;
        let (sa, ca) = (s_schema.attr(si), c_schema.attr(ci));
        if sa.kind != ca.kind || sa.classes != ca.classes {
            return Err(Error::SchemaMismatch(format!(
                "attribute {name:?} differs between survey and census"
            )));
        }
        rows.push((si, ci));
    }
    rows.sort_by_key(|&(si, _)| (cell_count(survey, si), si));

    let weights = if use_weights {
        Some(survey.weights()?)
    } else {
        None
    };
    let s_zips = survey.categorical(s_zip)?;
    let c_zips = census.categorical(c_zip)?;

    let mut sample_sizes: Vec<f64> = vec![0.0; n_zips];
    for &z in s_zips {
        sample_sizes[z as usize] += 1.0;
    }

    let cells: Vec<Vec<Option<f64>>> = rows
        .par_iter()
        .map(|&(si, ci)| -> Result<Vec<Option<f64>>> {
            let range = match s_schema.attr(si).kind {
                AttrKind::Continuous => census_range(census, ci)?,
                AttrKind::Categorical => (0.0, 0.0),
            };
            let p = masses(census, ci, c_zips, n_zips, range, None)?;
            let q = masses(survey, si, s_zips, n_zips, range, weights.as_deref())?;
            Ok((0..n_zips).map(|k| z_kl(&p[k], &q[k])).collect())
        })
        .collect::<Result<_>>()?;

    // Column order: sample size descending, label ascending on ties.
    let mut col_order: Vec<usize> = (0..n_zips).collect();
    col_order.sort_by(|&a, &b| {
        sample_sizes[b]
            .total_cmp(&sample_sizes[a])
            .then_with(|| zip_labels[a].cmp(&zip_labels[b]))
    });

    let z: Vec<Vec<Option<f64>>> = cells
        .iter()
        .map(|row| col_order.iter().map(|&k| row[k]).collect())
        .collect();
    let populated: Vec<f64> = z.iter().flatten().flatten().copied().collect();
    let overall = mean_or_nan(&populated);

    Ok(KlGrid {
        attrs: rows
            .iter()
            .map(|&(si, _)| s_schema.attr(si).name.clone())
            .collect(),
        zips: col_order.iter().map(|&k| zip_labels[k].clone()).collect(),
        z,
        sample_sizes: col_order.iter().map(|&k| sample_sizes[k]).collect(),
        overall,
    })
}

fn mean_or_nan(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

impl KlGrid {
    /// The score of one cell by labels.
    pub fn cell(&self, attr: &str, zip: &str) -> Option<f64> {
        let r = self.attrs.iter().position(|a| a == attr)?;
        let c = self.zips.iter().position(|z| z == zip)?;
        self.z[r][c]
    }

    /// Average several replicate grids cell-wise. Empty cells are skipped
    /// per cell; columns are re-ordered by mean sample size.
    pub fn average(grids: &[KlGrid]) -> Result<KlGrid> {
        let first = grids
            .first()
            .ok_or_else(|| Error::InsufficientData("no grids to average".into()))?;
        for g in grids {
            if g.attrs != first.attrs {
                return Err(Error::SchemaMismatch(
                    "grids disagree on attribute rows".into(),
                ));
            }
        }
        let attrs = first.attrs.clone();
        let mut zip_labels: Vec<String> = first.zips.clone();
        zip_labels.sort();

        let n_r = attrs.len();
        let n_c = zip_labels.len();
        let mut sums = vec![vec![0.0; n_c]; n_r];
        let mut hits = vec![vec![0usize; n_c]; n_r];
        let mut size_sums = vec![0.0; n_c];
        for g in grids {
            // Map this grid's column order onto the sorted labels.
            let mut col_of = vec![usize::MAX; n_c];
            for (gc, label) in g.zips.iter().enumerate() {
                let c = zip_labels
                    .binary_search(label)
                    .map_err(|_| Error::SchemaMismatch("grids disagree on zips".into()))?;
                col_of[c] = gc;
            }
            for (c, &gc) in col_of.iter().enumerate() {
                if gc == usize::MAX {
                    return Err(Error::SchemaMismatch("grids disagree on zips".into()));
                }
                size_sums[c] += g.sample_sizes[gc];
                for r in 0..n_r {
                    if let Some(v) = g.z[r][gc] {
                        sums[r][c] += v;
                        hits[r][c] += 1;
                    }
                }
            }
        }
        let n = grids.len() as f64;
        let sample_sizes: Vec<f64> = size_sums.iter().map(|s| s / n).collect();
        let cells: Vec<Vec<Option<f64>>> = (0..n_r)
            .map(|r| {
                (0..n_c)
                    .map(|c| (hits[r][c] > 0).then(|| sums[r][c] / hits[r][c] as f64))
                    .collect()
            })
            .collect();

        let mut col_order: Vec<usize> = (0..n_c).collect();
        col_order.sort_by(|&a, &b| {
            sample_sizes[b]
                .total_cmp(&sample_sizes[a])
                .then_with(|| zip_labels[a].cmp(&zip_labels[b]))
        });
        let z: Vec<Vec<Option<f64>>> = cells
            .iter()
            .map(|row| col_order.iter().map(|&c| row[c]).collect())
            .collect();
        let populated: Vec<f64> = z.iter().flatten().flatten().copied().collect();
        let overall = mean_or_nan(&populated);
        Ok(KlGrid {
            attrs,
            zips: col_order.iter().map(|&c| zip_labels[c].clone()).collect(),
            sample_sizes: col_order.iter().map(|&c| sample_sizes[c]).collect(),
            z,
            overall,
        })
    }
}
