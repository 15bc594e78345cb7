//! DHS-style cluster displacement (geomasking).
//!
//! Each cluster point is displaced by a random angle and a random distance —
//! up to 2 km for urban clusters and up to 5 km for rural ones, except a
//! once-per-run 1% subset of rural clusters that may move up to 10 km. A
//! displaced point falling outside the cluster's original admin area is
//! rejected and redrawn (both angle and distance) until it lands inside,
//! which keeps every masked location within the admin area published with
//! the data. The zip code attached to the cluster's records is then looked
//! up at the masked point, so a displacement that crosses a zip boundary
//! silently reassigns all of the cluster's records to the neighboring zip —
//! the mechanism that both drives geomasking's privacy gain and breaks
//! small-area statistics.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{GeoContext, Point};
use crate::rng::StreamRng;
use crate::schema::GeoRole;
use crate::table::{Column, MicroTable, Provenance};

/// Displacement caps and the rejection budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeomaskParams {
    /// Maximum displacement for urban clusters (meters).
    pub urban_max_m: f64,
    /// Maximum displacement for ordinary rural clusters (meters).
    pub rural_max_m: f64,
    /// Maximum displacement for the far-displaced rural subset (meters).
    pub rural_far_max_m: f64,
    /// Fraction of rural clusters drawn (once per run) into the far subset.
    pub rural_far_fraction: f64,
    /// Resampling attempts per cluster before giving up.
    pub max_rejection_iters: usize,
}

impl Default for GeomaskParams {
    fn default() -> Self {
        GeomaskParams {
            urban_max_m: 2_000.0,
            rural_max_m: 5_000.0,
            rural_far_max_m: 10_000.0,
            rural_far_fraction: 0.01,
            max_rejection_iters: 10_000,
        }
    }
}

impl GeomaskParams {
    /// Check caps and fractions.
    pub fn validate(&self) -> Result<()> {
        if !(self.urban_max_m > 0.0 && self.rural_max_m > 0.0 && self.rural_far_max_m > 0.0) {
            return Err(Error::SpecInvalid("displacement caps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rural_far_fraction) {
            return Err(Error::SpecInvalid(format!(
                "rural far fraction {} outside [0, 1]",
                self.rural_far_fraction
            )));
        }
        if self.max_rejection_iters == 0 {
            return Err(Error::SpecInvalid("rejection budget must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Per-cluster displacement record for the run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Displacement {
    /// Accepted displacement angle in radians.
    pub angle_rad: f64,
    /// Accepted displacement distance in meters.
    pub distance_m: f64,
    /// Loop iterations until a point inside the admin area was found.
    pub iterations: usize,
    /// Whether the cluster was in the far-displaced rural subset.
    pub far_rural: bool,
    /// Whether the masked point falls in a different zip.
    pub zip_changed: bool,
}

/// Masked cluster locations and their zip reassignments.
#[derive(Debug, Clone)]
pub struct MaskedGeo {
    /// Cluster id → displaced point.
    pub masked_points: BTreeMap<String, Point>,
    /// Cluster id → zip id at the masked point.
    pub reassigned_zip: BTreeMap<String, String>,
    /// Cluster id → displacement record.
    pub log: BTreeMap<String, Displacement>,
}

impl MaskedGeo {
    /// Displacement log as JSON (one entry per cluster).
    pub fn log_json(&self) -> Value {
        json!(self
            .log
            .iter()
            .map(|(cluster, d)| {
                json!({
                    "cluster": cluster,
                    "angle_rad": d.angle_rad,
                    "distance_m": d.distance_m,
                    "iterations": d.iterations,
                    "far_rural": d.far_rural,
                    "zip_changed": d.zip_changed,
                    "masked_zip": self.reassigned_zip[cluster],
                })
            })
            .collect::<Vec<_>>())
    }

    /// Fraction of clusters whose zip changed.
    pub fn reassigned_fraction(&self) -> f64 {
        if self.log.is_empty() {
            return 0.0;
        }
        self.log.values().filter(|d| d.zip_changed).count() as f64 / self.log.len() as f64
    }
}

/// Displace the flagged clusters of a geography.
///
/// `urban` flags each cluster id to displace (the survey's clusters, or the
/// whole frame); every flagged cluster must exist in `geo`. The
/// far-displaced rural subset is drawn once up front (Bernoulli per rural
/// cluster, in cluster-id order) so that a cluster's rejection loop cannot
/// shift which set later clusters fall in.
pub fn displace_clusters(
    geo: &GeoContext,
    urban: &BTreeMap<String, bool>,
    params: &GeomaskParams,
    rng: &StreamRng,
) -> Result<MaskedGeo> {
    params.validate()?;

    // Far subset, drawn once per run.
    let mut far_rng = rng.child("geomask/far-set");
    let far: BTreeMap<&str, bool> = urban
        .iter()
        .map(|(cluster, &is_urban)| {
            let in_far =
                !is_urban && far_rng.random::<f64>() < params.rural_far_fraction;
            (cluster.as_str(), in_far)
        })
        .collect();

    let mut masked_points = BTreeMap::new();
    let mut reassigned_zip = BTreeMap::new();
    let mut log = BTreeMap::new();
    for cluster in urban.keys() {
        let origin = geo.cluster_point(cluster)?;
        let admin = geo.admin_of(cluster)?;
        let area = &geo.admin_areas()[admin];
        let cap = if urban[cluster] {
            params.urban_max_m
        } else if far[cluster.as_str()] {
            params.rural_far_max_m
        } else {
            params.rural_max_m
        };

        let mut crng = rng.child(&format!("geomask/{cluster}"));
        let mut accepted = None;
        for iter in 1..=params.max_rejection_iters {
            let angle = crng.random_range(0.0..360.0) * std::f64::consts::PI / 180.0;
            let dist = crng.random_range(0.0..=cap);
            let candidate = Point {
                x: origin.x + dist * angle.cos(),
                y: origin.y + dist * angle.sin(),
            };
            if area.contains(&candidate) {
                accepted = Some((candidate, angle, dist, iter));
                break;
            }
        }
        let Some((point, angle, dist, iterations)) = accepted else {
            return Err(Error::RejectionBudgetExceeded {
                cluster: cluster.clone(),
                budget: params.max_rejection_iters,
            });
        };

        let original_zip = geo.zip_of(cluster)?;
        let masked_zip = geo.find_zip(&point).unwrap_or(original_zip);
        log.insert(
            cluster.clone(),
            Displacement {
                angle_rad: angle,
                distance_m: dist,
                iterations,
                far_rural: far[cluster.as_str()],
                zip_changed: masked_zip != original_zip,
            },
        );
        masked_points.insert(cluster.clone(), point);
        reassigned_zip.insert(cluster.clone(), masked_zip.to_string());
    }
    Ok(MaskedGeo {
        masked_points,
        reassigned_zip,
        log,
    })
}

/// Rewrite a survey's zip column from the masked geography. All other cells
/// are identical to the input; provenance becomes `Geomasked`.
pub fn apply_mask(survey: &MicroTable, masked: &MaskedGeo) -> Result<MicroTable> {
    let schema = survey.schema();
    let cluster_idx = schema.require_role(GeoRole::Cluster)?;
    let zip_idx = schema.require_role(GeoRole::ZipCode)?;
    let clusters = survey.categorical(cluster_idx)?;
    let zip_attr = schema.attr(zip_idx);

    let mut new_zip: Vec<u32> = Vec::with_capacity(survey.n_rows());
    for &c in clusters {
        let label = &schema.attr(cluster_idx).classes[c as usize];
        let masked_zip = masked
            .reassigned_zip
            .get(label)
            .ok_or_else(|| Error::UnknownCluster(label.clone()))?;
        let code = zip_attr.class_index(masked_zip).ok_or_else(|| {
            Error::SchemaMismatch(format!(
                "masked zip {masked_zip:?} is not a declared class of {:?}",
                zip_attr.name
            ))
        })?;
        new_zip.push(code);
    }

    let mut columns: Vec<Column> = (0..survey.n_cols())
        .map(|c| survey.column(c).clone())
        .collect();
    columns[zip_idx] = Column::Categorical(new_zip);
    MicroTable::new(std::sync::Arc::clone(schema), columns, Provenance::Geomasked)
}

/// Urban/rural flags per cluster, read from a categorical column that is
/// constant within each cluster (e.g. an urbanicity attribute where class
/// index 0 means urban).
pub fn urban_flags_from_column(
    table: &MicroTable,
    urban_attr: &str,
    urban_class: &str,
) -> Result<BTreeMap<String, bool>> {
    let schema = table.schema();
    let cluster_idx = schema.require_role(GeoRole::Cluster)?;
    let attr_idx = schema.require(urban_attr)?;
    let urban_code = schema
        .attr(attr_idx)
        .class_index(urban_class)
        .ok_or_else(|| Error::UnknownClass {
            attr: urban_attr.to_string(),
            class: urban_class.to_string(),
        })?;
    let map = table.class_map(cluster_idx, attr_idx)?;
    Ok(map
        .into_iter()
        .map(|(cluster, v)| {
            (
                schema.attr(cluster_idx).classes[cluster as usize].clone(),
                v == urban_code,
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Polygon;
    use crate::population::{generate_population, PopulationSpec};
    use crate::sampling::{draw_sample, SamplingDesign};
    use approx::assert_abs_diff_eq;

    fn huge_area_geo(origin: Point) -> GeoContext {
        let big = Polygon::rect(-1e7, -1e7, 1e7, 1e7);
        GeoContext::new(
            [("c0".to_string(), origin)].into(),
            [("a0".to_string(), big.clone())].into(),
            [("z0".to_string(), big)].into(),
        )
        .unwrap()
    }

    #[test]
    fn displacement_formula_matches_hand_computation() {
        // With a huge admin area the first draw is always accepted; check
        // x' = x + d·cos(θ), y' = y + d·sin(θ) against a replayed stream.
        let geo = huge_area_geo(Point::new(0.0, 0.0));
        let urban = [("c0".to_string(), true)].into();
        let rng = StreamRng::derived(42, "mask");
        let masked =
            displace_clusters(&geo, &urban, &GeomaskParams::default(), &rng).unwrap();
        let d = &masked.log["c0"];
        assert_eq!(d.iterations, 1);
        let p = masked.masked_points["c0"];
        assert_abs_diff_eq!(p.x, d.distance_m * d.angle_rad.cos(), epsilon = 1e-9);
        assert_abs_diff_eq!(p.y, d.distance_m * d.angle_rad.sin(), epsilon = 1e-9);
        assert!(d.angle_rad >= 0.0 && d.angle_rad < 2.0 * std::f64::consts::PI);
    }

    #[test]
    fn urban_distance_capped_at_2km() {
        for seed in 0..50 {
            let geo = huge_area_geo(Point::new(0.0, 0.0));
            let urban = [("c0".to_string(), true)].into();
            let rng = StreamRng::derived(seed, "mask");
            let masked =
                displace_clusters(&geo, &urban, &GeomaskParams::default(), &rng).unwrap();
            let d = masked.masked_points["c0"].distance(&Point::new(0.0, 0.0));
            assert!(d <= 2_000.0 + 1e-9, "urban displacement {d} exceeds cap");
        }
    }

    #[test]
    fn rural_distance_capped_at_5km_or_10km() {
        let mut far_seen = false;
        let mut near_max: f64 = 0.0;
        for seed in 0..600 {
            let geo = huge_area_geo(Point::new(0.0, 0.0));
            let urban = [("c0".to_string(), false)].into();
            let rng = StreamRng::derived(seed, "mask");
            let masked =
                displace_clusters(&geo, &urban, &GeomaskParams::default(), &rng).unwrap();
            let dist = masked.masked_points["c0"].distance(&Point::new(0.0, 0.0));
            if masked.log["c0"].far_rural {
                far_seen = true;
                assert!(dist <= 10_000.0 + 1e-9);
            } else {
                assert!(dist <= 5_000.0 + 1e-9, "rural displacement {dist}");
                near_max = near_max.max(dist);
            }
        }
        // Bernoulli(0.01) over 600 runs: overwhelmingly likely to appear.
        assert!(far_seen, "far rural subset never drawn in 600 runs");
        assert!(near_max > 4_000.0, "rural displacements suspiciously short");
    }

    #[test]
    fn masked_points_stay_inside_admin_area() {
        // Small admin area forces many rejections; containment must hold.
        let area = Polygon::rect(0.0, 0.0, 3_000.0, 3_000.0);
        let geo = GeoContext::new(
            [("c0".to_string(), Point::new(200.0, 200.0))].into(),
            [("a0".to_string(), area.clone())].into(),
            [("z0".to_string(), area.clone())].into(),
        )
        .unwrap();
        let urban = [("c0".to_string(), false)].into();
        for seed in 0..50 {
            let rng = StreamRng::derived(seed, "mask");
            let masked =
                displace_clusters(&geo, &urban, &GeomaskParams::default(), &rng).unwrap();
            assert!(area.contains(&masked.masked_points["c0"]));
        }
    }

    #[test]
    fn impossible_containment_exhausts_budget() {
        // Cluster sits in a sliver; with a 2 km minimum cap and a tiny
        // budget, acceptance is unlikely enough to trip the error.
        let sliver = Polygon::rect(0.0, 0.0, 1.0, 1.0);
        let geo = GeoContext::new(
            [("c0".to_string(), Point::new(0.5, 0.5))].into(),
            [("a0".to_string(), sliver.clone())].into(),
            [("z0".to_string(), sliver)].into(),
        )
        .unwrap();
        let urban = [("c0".to_string(), true)].into();
        let params = GeomaskParams {
            max_rejection_iters: 50,
            ..GeomaskParams::default()
        };
        let err = displace_clusters(&geo, &urban, &params, &StreamRng::derived(1, "mask"))
            .unwrap_err();
        assert!(matches!(err, Error::RejectionBudgetExceeded { .. }), "{err}");
    }

    /// Desk-scale population, sample, and mask fixture.
    fn desk_mask(seed: u64) -> (MicroTable, MaskedGeo, MicroTable) {
        let spec = PopulationSpec::desk_default();
        let rng = StreamRng::derived(seed, "pipeline");
        let (pop, geo) = generate_population(&spec, &rng.child("pop")).unwrap();
        let draw = draw_sample(&pop, &SamplingDesign::default(), &rng.child("sample")).unwrap();
        let urban = urban_flags_from_column(&draw.survey, "urbanicity", "urban").unwrap();
        let masked = displace_clusters(
            &geo,
            &urban,
            &GeomaskParams::default(),
            &rng.child("mask"),
        )
        .unwrap();
        let geomasked = apply_mask(&draw.survey, &masked).unwrap();
        (draw.survey, masked, geomasked)
    }

    #[test]
    fn non_spatial_columns_identical_after_masking() {
        let (survey, _, geomasked) = desk_mask(3);
        assert_eq!(geomasked.provenance(), Provenance::Geomasked);
        let zip_idx = survey.schema().require_role(GeoRole::ZipCode).unwrap();
        for c in 0..survey.n_cols() {
            if c != zip_idx {
                assert_eq!(survey.column(c), geomasked.column(c), "column {c} changed");
            }
        }
    }

    #[test]
    fn row_level_zip_changes_match_cluster_reassignments() {
        let (survey, masked, geomasked) = desk_mask(4);
        let schema = survey.schema();
        let zip_idx = schema.require_role(GeoRole::ZipCode).unwrap();
        let cl_idx = schema.require_role(GeoRole::Cluster).unwrap();
        let before = survey.categorical(zip_idx).unwrap();
        let after = geomasked.categorical(zip_idx).unwrap();
        let clusters = survey.categorical(cl_idx).unwrap();
        let changed_rows = (0..survey.n_rows()).filter(|&r| before[r] != after[r]).count();
        let expected: usize = (0..survey.n_rows())
            .filter(|&r| {
                let label = &schema.attr(cl_idx).classes[clusters[r] as usize];
                masked.log[label].zip_changed
            })
            .count();
        assert_eq!(changed_rows, expected);
    }

    #[test]
    fn desk_geography_reassigns_about_thirty_percent() {
        // Average over replicates: tile sizes were chosen so both urban
        // (2 km cap, 2 km tiles) and rural (5 km cap, 5 km tiles) land near
        // the roughly-one-third reassignment level typical of DHS-style
        // displacement over fine zip grids.
        let spec = PopulationSpec::desk_default();
        let mut fractions = Vec::new();
        for seed in 0..30 {
            let rng = StreamRng::derived(seed, "mask-rep");
            let (pop, geo) = generate_population(&spec, &rng.child("pop")).unwrap();
            let urban = urban_flags_from_column(&pop, "urbanicity", "urban").unwrap();
            let masked = displace_clusters(
                &geo,
                &urban,
                &GeomaskParams::default(),
                &rng.child("mask"),
            )
            .unwrap();
            fractions.push(masked.reassigned_fraction());
        }
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        assert!(
            (0.20..=0.40).contains(&mean),
            "mean reassigned fraction {mean} outside the ±10 pp band around 30%"
        );
    }

    #[test]
    fn identity_mask_changes_only_provenance() {
        let (survey, masked, _) = desk_mask(5);
        // Force every cluster back to its original zip.
        let schema = survey.schema();
        let cl_idx = schema.require_role(GeoRole::Cluster).unwrap();
        let zip_idx = schema.require_role(GeoRole::ZipCode).unwrap();
        let map = survey.class_map(cl_idx, zip_idx).unwrap();
        let mut identity = masked.clone();
        for (code, zip_code) in map {
            let cluster = schema.attr(cl_idx).classes[code as usize].clone();
            let zip = schema.attr(zip_idx).classes[zip_code as usize].clone();
            identity.reassigned_zip.insert(cluster, zip);
        }
        let out = apply_mask(&survey, &identity).unwrap();
        for c in 0..survey.n_cols() {
            assert_eq!(survey.column(c), out.column(c));
        }
        assert_eq!(out.provenance(), Provenance::Geomasked);
    }

    #[test]
    fn unknown_cluster_is_an_error() {
        let (survey, mut masked, _) = desk_mask(6);
        masked.reassigned_zip.clear();
        let err = apply_mask(&survey, &masked).unwrap_err();
        assert!(matches!(err, Error::UnknownCluster(_)));
    }
}
