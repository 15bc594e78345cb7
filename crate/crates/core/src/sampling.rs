//! Stratified two-stage cluster sampling with PPS first stage.
//!
//! Within each stratum, clusters (PSUs) are selected by systematic
//! probability-proportional-to-size sampling on a randomly permuted list —
//! a without-replacement scheme whose first-stage inclusion probability is
//! exactly `π_j = n_s · M_j / M_s` whenever no cluster is large enough to be
//! a certainty selection (clusters with `n · M_j ≥ M` are selected outright
//! and the remainder re-normalized). Within each selected cluster, `m`
//! households are drawn by simple random sampling without replacement
//! (`π_{h|j} = m / M_j`), and every member of a sampled household enters the
//! survey. The design weight attached to each record is the inverse
//! inclusion probability of its household:
//!
//! ```text
//! w = 1 / (π_{h|j} · π_j)
//! ```
//!
//! Clusters with fewer than `min_psu_households` households are discarded
//! before selection and can never appear in a draw.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::schema::{AttributeSpec, GeoRole, Schema};
use crate::table::{CellValue, Column, MicroTable, Provenance, TableBuilder};

/// Size measure for the PPS first stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PpsMeasure {
    /// Number of households in the cluster.
    #[default]
    HouseholdCount,
}

/// Two-stage design parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingDesign {
    /// Clusters to select per stratum.
    pub n_s: usize,
    /// Households to select per cluster.
    #[serde(default = "default_m")]
    pub m: usize,
    /// PPS size measure.
    #[serde(default)]
    pub pps_measure: PpsMeasure,
    /// Clusters with fewer households than this are discarded before
    /// selection.
    #[serde(default = "default_min_psu")]
    pub min_psu_households: usize,
}

fn default_m() -> usize {
    10
}
fn default_min_psu() -> usize {
    10
}

impl Default for SamplingDesign {
    fn default() -> Self {
        SamplingDesign {
            n_s: 3,
            m: default_m(),
            pps_measure: PpsMeasure::HouseholdCount,
            min_psu_households: default_min_psu(),
        }
    }
}

impl SamplingDesign {
    fn validate(&self) -> Result<()> {
        if self.n_s == 0 || self.m == 0 {
            return Err(Error::SpecInvalid(
                "sampling design needs n_s ≥ 1 and m ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// One selected cluster with its first-stage inclusion probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectedCluster {
    /// Stratum label.
    pub stratum: String,
    /// Cluster label.
    pub cluster: String,
    /// First-stage inclusion probability π_j.
    pub pi_j: f64,
    /// Eligible household count M_j.
    pub households: usize,
    /// Whether the cluster was a certainty selection (π_j = 1 forced by
    /// size).
    pub certainty: bool,
}

/// A drawn sample: the survey table plus the selection record.
#[derive(Debug, Clone)]
pub struct SampleDraw {
    /// Survey of all members of the sampled households, with a weight
    /// column appended.
    pub survey: MicroTable,
    /// Selected clusters in (stratum, cluster) order.
    pub selected: Vec<SelectedCluster>,
}

impl SampleDraw {
    /// Selection record as JSON (persisted next to the survey CSV).
    pub fn manifest_json(&self, design: &SamplingDesign) -> Value {
        json!({
            "design": design,
            "n_rows": self.survey.n_rows(),
            "selected_clusters": self.selected,
        })
    }
}

/// Draw a stratified two-stage sample from a population table.
pub fn draw_sample(
    pop: &MicroTable,
    design: &SamplingDesign,
    rng: &StreamRng,
) -> Result<SampleDraw> {
    design.validate()?;
    if pop.provenance() != Provenance::Population {
        return Err(Error::SpecInvalid(format!(
            "sampling expects a population table, got provenance {}",
            pop.provenance()
        )));
    }
    let schema = pop.schema();
    let stratum_idx = schema.require_role(GeoRole::Stratum)?;
    let cluster_idx = schema.require_role(GeoRole::Cluster)?;
    let household_idx = schema.require_role(GeoRole::Household)?;
    if schema.role_index(GeoRole::Weight).is_some() {
        return Err(Error::SpecInvalid(
            "population table already carries a weight column".into(),
        ));
    }

    // Survey schema: population schema + design weight.
    let mut attrs = schema.attrs().to_vec();
    attrs.push(AttributeSpec::continuous("weight", None).with_role(GeoRole::Weight));
    let survey_schema = Arc::new(Schema::new(attrs)?);

    let strata = pop.group_by_class(stratum_idx)?;
    let cluster_codes = pop.categorical(cluster_idx)?;
    let household_codes = pop.categorical(household_idx)?;

    let mut selected = Vec::new();
    let mut survey_rows: Vec<(usize, f64)> = Vec::new(); // (population row, weight)

    for (stratum_code, stratum_rows) in strata {
        let stratum_label = &schema.attr(stratum_idx).classes[stratum_code as usize];

        // Cluster → household → member rows, all keyed by class code so the
        // iteration order is deterministic.
        let mut clusters: BTreeMap<u32, BTreeMap<u32, Vec<usize>>> = BTreeMap::new();
        for &r in &stratum_rows {
            clusters
                .entry(cluster_codes[r])
                .or_default()
                .entry(household_codes[r])
                .or_default()
                .push(r);
        }

        // Discard small PSUs.
        let eligible: Vec<(u32, usize)> = clusters
            .iter()
            .filter(|(_, hh)| hh.len() >= design.min_psu_households)
            .map(|(&c, hh)| (c, hh.len()))
            .collect();
        if eligible.len() < design.n_s {
            return Err(Error::InsufficientPsus {
                stratum: stratum_label.clone(),
                available: eligible.len(),
                needed: design.n_s,
            });
        }

        let mut stage_rng = rng.child(&format!("stage1/{stratum_label}"));
        let chosen = systematic_pps(&eligible, design.n_s, &mut stage_rng);

        for (cluster_code, m_j, pi_j, certainty) in chosen {
            let cluster_label = &schema.attr(cluster_idx).classes[cluster_code as usize];
            let households = &clusters[&cluster_code];
            if households.len() < design.m {
                return Err(Error::InsufficientHouseholds {
                    cluster: cluster_label.clone(),
                    available: households.len(),
                    needed: design.m,
                });
            }
            // SRSWOR of m households.
            let mut hh_codes: Vec<u32> = households.keys().copied().collect();
            let mut hh_rng = rng.child(&format!("stage2/{cluster_label}"));
            hh_codes.shuffle(&mut *hh_rng);
            let mut sampled: Vec<u32> = hh_codes.into_iter().take(design.m).collect();
            sampled.sort_unstable();

            let pi_h = design.m as f64 / m_j as f64;
            let w = 1.0 / (pi_h * pi_j);
            for hh in sampled {
                for &r in &households[&hh] {
                    survey_rows.push((r, w));
                }
            }
            selected.push(SelectedCluster {
                stratum: stratum_label.clone(),
                cluster: cluster_label.clone(),
                pi_j,
                households: m_j,
                certainty,
            });
        }
    }

    // Assemble the survey table (population row order within household).
    let mut builder = TableBuilder::new(Arc::clone(&survey_schema));
    for (r, w) in survey_rows {
        let mut cells = Vec::with_capacity(survey_schema.len());
        for c in 0..pop.n_cols() {
            cells.push(match pop.column(c) {
                Column::Continuous(v) => match v[r] {
                    Some(x) => CellValue::Num(x),
                    None => CellValue::Absent,
                },
                Column::Categorical(v) => CellValue::Class(v[r]),
            });
        }
        cells.push(CellValue::Num(w));
        builder.push_row(&cells)?;
    }
    let survey = builder.finish(Provenance::True)?;
    Ok(SampleDraw { survey, selected })
}

/// Systematic PPS on a random permutation with certainty selection.
///
/// Returns `(cluster code, size, π_j, certainty)` for each selected cluster,
/// in cluster-code order. Certainty clusters (size so large that
/// `n · M_j ≥ M`) are removed first with π = 1; the rest are selected by a
/// single systematic pass, giving exactly `π_j = n' · M_j / M'` over the
/// remainder.
fn systematic_pps(
    eligible: &[(u32, usize)],
    n_s: usize,
    rng: &mut StreamRng,
) -> Vec<(u32, usize, f64, bool)> {
    let mut remaining: Vec<(u32, usize)> = eligible.to_vec();
    let mut out: Vec<(u32, usize, f64, bool)> = Vec::new();
    let mut n = n_s;

    // Certainty loop: removing a large cluster can promote others.
    loop {
        if n == 0 {
            break;
        }
        let total: usize = remaining.iter().map(|&(_, s)| s).sum();
        let certain: Vec<usize> = remaining
            .iter()
            .enumerate()
            .filter(|(_, &(_, s))| n * s >= total)
            .map(|(i, _)| i)
            .collect();
        if certain.is_empty() {
            break;
        }
        for &i in certain.iter().rev() {
            let (code, size) = remaining.remove(i);
            out.push((code, size, 1.0, true));
            n -= 1;
        }
    }

    if n > 0 {
        let total: usize = remaining.iter().map(|&(_, s)| s).sum();
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        order.shuffle(&mut **rng);
        let step = total as f64 / n as f64;
        let start: f64 = rng.random_range(0.0..step);
        let mut hits = (0..n).map(|k| start + k as f64 * step).peekable();
        let mut cum = 0.0;
        for &i in &order {
            let (code, size) = remaining[i];
            let hi = cum + size as f64;
            let mut took = false;
            while let Some(&h) = hits.peek() {
                if h < hi {
                    debug_assert!(h >= cum, "systematic hits are ordered");
                    debug_assert!(!took, "no cluster can be hit twice when n·max ≤ total");
                    took = true;
                    hits.next();
                } else {
                    break;
                }
            }
            if took {
                let pi = n as f64 * size as f64 / total as f64;
                out.push((code, size, pi.min(1.0), false));
            }
            cum = hi;
        }
    }
    out.sort_by_key(|&(code, ..)| code);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{generate_population, PopulationSpec, StratumSpec};
    use approx::assert_abs_diff_eq;

    /// Population with explicit structure: strata of clusters with chosen
    /// household counts, each household of size 1.
    fn pop_with(households_per_cluster: &[&[usize]]) -> MicroTable {
        let n_strata = households_per_cluster.len();
        let max_clusters = households_per_cluster.iter().map(|c| c.len()).max().unwrap();
        let max_hh = households_per_cluster
            .iter()
            .flat_map(|c| c.iter())
            .copied()
            .max()
            .unwrap();
        let strata: Vec<String> = (0..n_strata).map(|t| format!("s{t}")).collect();
        let clusters: Vec<String> = (0..n_strata)
            .flat_map(|t| (0..max_clusters).map(move |p| format!("c{t}{p}")))
            .collect();
        let mut hh: Vec<String> = (0..n_strata)
            .flat_map(|t| {
                (0..max_clusters).flat_map(move |p| {
                    (0..max_hh).map(move |h| format!("h{t}{p}{h:03}"))
                })
            })
            .collect();
        hh.push("(none)".into());
        let zips: Vec<String> = (0..n_strata).map(|t| format!("z{t}")).collect();
        fn refs(v: &[String]) -> Vec<&str> {
            v.iter().map(String::as_str).collect()
        }
        let schema = Arc::new(
            Schema::new(vec![
                AttributeSpec::categorical("stratum", &refs(&strata)).with_role(GeoRole::Stratum),
                AttributeSpec::categorical("cluster", &refs(&clusters))
                    .with_role(GeoRole::Cluster),
                AttributeSpec::categorical("zip", &refs(&zips)).with_role(GeoRole::ZipCode),
                AttributeSpec::categorical("household", &refs(&hh))
                    .with_role(GeoRole::Household)
                    .with_missing("(none)"),
                AttributeSpec::continuous("x", None),
            ])
            .unwrap(),
        );
        let mut b = TableBuilder::new(Arc::clone(&schema));
        for (t, cluster_sizes) in households_per_cluster.iter().enumerate() {
            for (p, &n_hh) in cluster_sizes.iter().enumerate() {
                for h in 0..n_hh {
                    let hh_code = ((t * max_clusters + p) * max_hh + h) as u32;
                    b.push_row(&[
                        CellValue::Class(t as u32),
                        CellValue::Class((t * max_clusters + p) as u32),
                        CellValue::Class(t as u32),
                        CellValue::Class(hh_code),
                        CellValue::Num(h as f64),
                    ])
                    .unwrap();
                }
            }
        }
        b.finish(Provenance::Population).unwrap()
    }

    #[test]
    fn census_case_all_weights_one() {
        // 1 stratum, 1 PSU of 10 households, n_s = 1, m = 10.
        let pop = pop_with(&[&[10]]);
        let design = SamplingDesign {
            n_s: 1,
            ..SamplingDesign::default()
        };
        let draw = draw_sample(&pop, &design, &StreamRng::derived(1, "s")).unwrap();
        assert_eq!(draw.survey.n_rows(), 10);
        assert_eq!(draw.selected.len(), 1);
        assert_abs_diff_eq!(draw.selected[0].pi_j, 1.0);
        for w in draw.survey.weights().unwrap() {
            assert_abs_diff_eq!(w, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_equal_psus_weight_is_four() {
        // 1 stratum, 2 equal PSUs, n_s = 1, m = 5 of 10 → w = 1/(0.5·0.5).
        let pop = pop_with(&[&[10, 10]]);
        let design = SamplingDesign {
            n_s: 1,
            m: 5,
            ..SamplingDesign::default()
        };
        let draw = draw_sample(&pop, &design, &StreamRng::derived(2, "s")).unwrap();
        assert_eq!(draw.survey.n_rows(), 5);
        for w in draw.survey.weights().unwrap() {
            assert_abs_diff_eq!(w, 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn small_psus_are_discarded_and_never_sampled() {
        // Second PSU has 9 households (below the minimum of 10).
        let pop = pop_with(&[&[12, 9, 15]]);
        let design = SamplingDesign {
            n_s: 2,
            ..SamplingDesign::default()
        };
        for seed in 0..20 {
            let draw = draw_sample(&pop, &design, &StreamRng::derived(seed, "s")).unwrap();
            assert_eq!(draw.selected.len(), 2);
            for sc in &draw.selected {
                assert_ne!(sc.cluster, "c01", "discarded PSU was sampled");
            }
        }
    }

    #[test]
    fn insufficient_psus_is_an_error() {
        let pop = pop_with(&[&[12, 9]]);
        let design = SamplingDesign {
            n_s: 2,
            ..SamplingDesign::default()
        };
        let err = draw_sample(&pop, &design, &StreamRng::derived(3, "s")).unwrap_err();
        match err {
            Error::InsufficientPsus {
                stratum,
                available,
                needed,
            } => {
                assert_eq!(stratum, "s0");
                assert_eq!((available, needed), (1, 2));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn insufficient_households_is_an_error() {
        let pop = pop_with(&[&[12]]);
        let design = SamplingDesign {
            n_s: 1,
            m: 13,
            min_psu_households: 5,
            ..SamplingDesign::default()
        };
        let err = draw_sample(&pop, &design, &StreamRng::derived(4, "s")).unwrap_err();
        assert!(matches!(err, Error::InsufficientHouseholds { .. }), "{err}");
    }

    #[test]
    fn certainty_selection_handles_oversized_cluster() {
        let eligible: Vec<(u32, usize)> = vec![(0, 100), (1, 10), (2, 10), (3, 10), (4, 10)];
        let mut rng = StreamRng::derived(5, "s/pps");
        let chosen = systematic_pps(&eligible, 2, &mut rng);
        assert_eq!(chosen.len(), 2);
        let big = chosen.iter().find(|c| c.0 == 0).expect("big cluster");
        assert!(big.3, "oversized cluster must be a certainty selection");
        assert_abs_diff_eq!(big.2, 1.0);
        let other = chosen.iter().find(|c| c.0 != 0).unwrap();
        assert_abs_diff_eq!(other.2, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn systematic_pps_matches_size_proportions() {
        // Sizes 10:20:30 with n_s = 1 → selection frequencies ∝ size.
        let eligible: Vec<(u32, usize)> = vec![(0, 10), (1, 20), (2, 30)];
        let reps = 6_000;
        let mut counts = [0usize; 3];
        for seed in 0..reps {
            let mut rng = StreamRng::derived(seed as u64, "s/freq");
            let chosen = systematic_pps(&eligible, 1, &mut rng);
            counts[chosen[0].0 as usize] += 1;
        }
        for (k, p) in [(0usize, 10.0 / 60.0), (1, 20.0 / 60.0), (2, 30.0 / 60.0)] {
            let expect = reps as f64 * p;
            let sigma = (reps as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (counts[k] as f64 - expect).abs() < 4.0 * sigma,
                "cluster {k}: {} vs {expect}",
                counts[k]
            );
        }
    }

    #[test]
    fn weights_constant_within_cluster_and_ht_estimates_population() {
        let spec = PopulationSpec {
            strata: vec![
                StratumSpec {
                    name: "a".into(),
                    urban: true,
                },
                StratumSpec {
                    name: "b".into(),
                    urban: false,
                },
            ],
            psus_per_stratum: 8,
            households_per_psu: [10, 20],
            household_size: [1, 4],
            admins_per_stratum: 1,
            zips_per_admin_side: 2,
            urban_tile_m: 2_000.0,
            rural_tile_m: 5_000.0,
            attributes: vec![],
            constraints: crate::schema::ConstraintSet::empty(),
        };
        let (pop, _) = generate_population(&spec, &StreamRng::derived(6, "pop")).unwrap();
        let design = SamplingDesign {
            n_s: 3,
            ..SamplingDesign::default()
        };

        // Weights constant within cluster.
        let draw = draw_sample(&pop, &design, &StreamRng::derived(7, "s")).unwrap();
        let cl = draw.survey.schema().require_role(GeoRole::Cluster).unwrap();
        let codes = draw.survey.categorical(cl).unwrap();
        let w = draw.survey.weights().unwrap();
        let mut per_cluster: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, &c) in codes.iter().enumerate() {
            let e = per_cluster.entry(c).or_insert(w[i]);
            assert_abs_diff_eq!(*e, w[i], epsilon = 1e-12);
        }

        // Horvitz–Thompson: the weighted row count estimates the number of
        // individuals living in eligible households. Small PSUs are excluded
        // from the frame, so compare against the eligible sub-population.
        let hh_idx = pop.schema().require_role(GeoRole::Household).unwrap();
        let cl_idx = pop.schema().require_role(GeoRole::Cluster).unwrap();
        let hh_codes = pop.categorical(hh_idx).unwrap();
        let cl_codes = pop.categorical(cl_idx).unwrap();
        let mut hh_per_cluster: BTreeMap<u32, std::collections::BTreeSet<u32>> = BTreeMap::new();
        for r in 0..pop.n_rows() {
            hh_per_cluster.entry(cl_codes[r]).or_default().insert(hh_codes[r]);
        }
        let eligible_pop: usize = (0..pop.n_rows())
            .filter(|&r| hh_per_cluster[&cl_codes[r]].len() >= design.min_psu_households)
            .count();

        let reps = 100;
        let mut rel_err_sum = 0.0;
        for seed in 0..reps {
            let draw = draw_sample(&pop, &design, &StreamRng::derived(seed, "ht")).unwrap();
            let est: f64 = draw.survey.weights().unwrap().iter().sum();
            rel_err_sum += (est - eligible_pop as f64) / eligible_pop as f64;
        }
        let mean_rel_err = rel_err_sum / reps as f64;
        assert!(
            mean_rel_err.abs() < 0.02,
            "HT estimator biased: mean relative error {mean_rel_err}"
        );
    }

    #[test]
    fn all_household_members_enter_the_sample() {
        let spec = PopulationSpec {
            strata: vec![StratumSpec {
                name: "only".into(),
                urban: true,
            }],
            psus_per_stratum: 4,
            households_per_psu: [12, 12],
            household_size: [2, 5],
            admins_per_stratum: 1,
            zips_per_admin_side: 1,
            urban_tile_m: 2_000.0,
            rural_tile_m: 5_000.0,
            attributes: vec![],
            constraints: crate::schema::ConstraintSet::empty(),
        };
        let (pop, _) = generate_population(&spec, &StreamRng::derived(8, "pop")).unwrap();
        let design = SamplingDesign {
            n_s: 2,
            m: 6,
            ..SamplingDesign::default()
        };
        let draw = draw_sample(&pop, &design, &StreamRng::derived(9, "s")).unwrap();
        // Every sampled household appears with its full population size.
        let hh_idx = pop.schema().require_role(GeoRole::Household).unwrap();
        let mut pop_sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for &h in pop.categorical(hh_idx).unwrap() {
            *pop_sizes.entry(h).or_insert(0) += 1;
        }
        let s_hh = draw.survey.schema().require_role(GeoRole::Household).unwrap();
        let mut samp_sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for &h in draw.survey.categorical(s_hh).unwrap() {
            *samp_sizes.entry(h).or_insert(0) += 1;
        }
        assert_eq!(samp_sizes.len(), 2 * 6);
        for (hh, n) in samp_sizes {
            assert_eq!(n, pop_sizes[&hh], "household {hh} partially sampled");
        }
    }

    #[test]
    fn determinism_and_manifest() {
        let pop = pop_with(&[&[10, 12, 14], &[11, 13, 15]]);
        let design = SamplingDesign {
            n_s: 2,
            m: 10,
            ..SamplingDesign::default()
        };
        let a = draw_sample(&pop, &design, &StreamRng::derived(11, "s")).unwrap();
        let b = draw_sample(&pop, &design, &StreamRng::derived(11, "s")).unwrap();
        for c in 0..a.survey.n_cols() {
            assert_eq!(a.survey.column(c), b.survey.column(c));
        }
        let manifest = a.manifest_json(&design);
        assert_eq!(manifest["selected_clusters"].as_array().unwrap().len(), 4);
        assert_eq!(manifest["design"]["n_s"], 2);
    }
}
