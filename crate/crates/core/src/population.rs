//! Parameterized pseudo-population generation.
//!
//! The generator stands in for a census extract: it lays out a tiled
//! geography (strata as horizontal bands, admin areas as blocks of zip-code
//! tiles), fills clusters with households and individuals, and draws
//! attribute values with stratum- and cluster-level effects so that records
//! from the same place look alike — the structure every downstream stage
//! (sampling, geomasking, synthesis, risk and utility measurement) feeds on.
//!
//! Attribute mechanics:
//!
//! * continuous: `x = base_mean + stratum_shift + cluster_shift + sd·ε`,
//!   clamped into the declared bounds; `ε` standard normal, optionally
//!   correlated with an earlier continuous attribute;
//! * categorical: per-cluster class probabilities are a softmax of
//!   `ln(base_prob) + stratum_effect·g_stratum + cluster_effect·g_cluster`
//!   with independent standard-normal `g` per class, plus an optional
//!   missing-value rate.
//!
//! Besides the declared attributes, every population carries structural
//! columns (stratum, cluster, zip, admin area, household id) and a built-in
//! demographic block: urbanicity (constant per stratum), sex, and the
//! household-size triple `n_members = n_female + n_male`, which gives the
//! synthesizer's constraint machinery something real to enforce.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GeoContext, Point, Polygon};
use crate::rng::StreamRng;
use crate::schema::{AttributeSpec, ConstraintSet, GeoRole, Schema};
use crate::table::{CellValue, MicroTable, Provenance, TableBuilder};

/// Marker class used for household ids of records that belong to no real
/// household (synthetic individuals).
pub const NO_HOUSEHOLD: &str = "(none)";

/// One stratum of the population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumSpec {
    /// Stratum name (unique).
    pub name: String,
    /// Urban strata get the small geomasking radius and the small zip tiles.
    pub urban: bool,
}

/// Where an attribute varies: per household (all members share the value) or
/// per individual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationLevel {
    Household,
    Individual,
}

/// Correlate a continuous attribute's latent noise with an earlier one's.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelateWith {
    /// Name of the (earlier) continuous attribute to correlate with.
    pub attr: String,
    /// Latent correlation in [-1, 1].
    pub rho: f64,
}

/// Generative rule for one declared attribute.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttrGen {
    Continuous {
        name: String,
        #[serde(default)]
        bounds: Option<[f64; 2]>,
        base_mean: f64,
        sd: f64,
        #[serde(default)]
        stratum_sd: f64,
        #[serde(default)]
        cluster_sd: f64,
        #[serde(default = "default_individual")]
        level: VariationLevel,
        #[serde(default)]
        correlate_with: Option<CorrelateWith>,
    },
    Categorical {
        name: String,
        classes: Vec<String>,
        base_probs: Vec<f64>,
        #[serde(default)]
        stratum_effect: f64,
        #[serde(default)]
        cluster_effect: f64,
        #[serde(default)]
        missing_rate: f64,
        #[serde(default)]
        missing_class: Option<String>,
        #[serde(default = "default_individual")]
        level: VariationLevel,
    },
}

fn default_individual() -> VariationLevel {
    VariationLevel::Individual
}

impl AttrGen {
    fn name(&self) -> &str {
        match self {
            AttrGen::Continuous { name, .. } => name,
            AttrGen::Categorical { name, .. } => name,
        }
    }
}

/// Full population + geography specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationSpec {
    /// Strata, in band order (bottom to top).
    pub strata: Vec<StratumSpec>,
    /// Clusters (PSUs) per stratum.
    pub psus_per_stratum: usize,
    /// Households per cluster, inclusive uniform range.
    pub households_per_psu: [usize; 2],
    /// Household size, inclusive uniform range.
    pub household_size: [usize; 2],
    /// Admin areas per stratum band.
    #[serde(default = "default_admins")]
    pub admins_per_stratum: usize,
    /// Zip tiles per admin-area side (`k` → `k × k` zips per admin area).
    #[serde(default = "default_zip_side")]
    pub zips_per_admin_side: usize,
    /// Zip tile edge in meters for urban strata.
    #[serde(default = "default_urban_tile")]
    pub urban_tile_m: f64,
    /// Zip tile edge in meters for rural strata.
    #[serde(default = "default_rural_tile")]
    pub rural_tile_m: f64,
    /// Declared attributes, generated in order.
    pub attributes: Vec<AttrGen>,
    /// Value constraints declared for downstream synthesis.
    #[serde(default = "ConstraintSet::empty")]
    pub constraints: ConstraintSet,
}

fn default_admins() -> usize {
    3
}
fn default_zip_side() -> usize {
    2
}
fn default_urban_tile() -> f64 {
    2_000.0
}
fn default_rural_tile() -> f64 {
    5_000.0
}

/// Desk-scale default specification (12 strata, alternating urban/rural,
/// ~5,000 individuals).
pub const DESK_SPEC_JSON: &str = include_str!("../assets/desk_population.json");

impl PopulationSpec {
    /// The built-in desk-scale specification.
    pub fn desk_default() -> Self {
        serde_json::from_str(DESK_SPEC_JSON).expect("embedded desk spec parses")
    }

    /// Load a specification from a JSON file.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io("reading population spec", path, e))?;
        let spec: PopulationSpec = serde_json::from_str(&text)
            .map_err(|e| Error::SpecInvalid(format!("population spec {path:?}: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Validate internal consistency.
    pub fn validate(&self) -> Result<()> {
        if self.strata.is_empty() {
            return Err(Error::SpecInvalid("no strata declared".into()));
        }
        let mut names: Vec<&str> = self.strata.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.strata.len() {
            return Err(Error::SpecInvalid("duplicate stratum names".into()));
        }
        if self.psus_per_stratum == 0 {
            return Err(Error::SpecInvalid("psus_per_stratum must be ≥ 1".into()));
        }
        for ([lo, hi], what) in [
            (self.households_per_psu, "households_per_psu"),
            (self.household_size, "household_size"),
        ] {
            if lo == 0 || lo > hi {
                return Err(Error::SpecInvalid(format!(
                    "{what} range [{lo}, {hi}] must satisfy 1 ≤ lo ≤ hi"
                )));
            }
        }
        if self.admins_per_stratum == 0 || self.zips_per_admin_side == 0 {
            return Err(Error::SpecInvalid("geography needs ≥ 1 admin and zip tile".into()));
        }
        if !(self.urban_tile_m > 0.0) || !(self.rural_tile_m > 0.0) {
            return Err(Error::SpecInvalid("tile edges must be positive".into()));
        }

        let reserved = [
            "stratum", "cluster", "zip", "admin", "household", "urbanicity", "sex",
            "n_members", "n_female", "n_male", "weight",
        ];
        let mut seen: Vec<&str> = Vec::new();
        for attr in &self.attributes {
            let name = attr.name();
            if reserved.contains(&name) {
                return Err(Error::SpecInvalid(format!(
                    "attribute name {name:?} is reserved for a structural column"
                )));
            }
            if seen.contains(&name) {
                return Err(Error::SpecInvalid(format!("duplicate attribute {name:?}")));
            }
            match attr {
                AttrGen::Continuous {
                    name,
                    bounds,
                    sd,
                    stratum_sd,
                    cluster_sd,
                    correlate_with,
                    ..
                } => {
                    if !(*sd >= 0.0) || !(*stratum_sd >= 0.0) || !(*cluster_sd >= 0.0) {
                        return Err(Error::SpecInvalid(format!(
                            "attribute {name:?}: standard deviations must be ≥ 0"
                        )));
                    }
                    if let Some([lo, hi]) = bounds {
                        if !(lo < hi) {
                            return Err(Error::SpecInvalid(format!(
                                "attribute {name:?}: bounds [{lo}, {hi}] not ordered"
                            )));
                        }
                    }
                    if let Some(c) = correlate_with {
                        if !(-1.0..=1.0).contains(&c.rho) {
                            return Err(Error::SpecInvalid(format!(
                                "attribute {name:?}: correlation {} outside [-1, 1]",
                                c.rho
                            )));
                        }
                        let ok = self.attributes.iter().take_while(|a| a.name() != *name).any(
                            |a| matches!(a, AttrGen::Continuous { name: n, .. } if *n == c.attr),
                        );
                        if !ok {
                            return Err(Error::SpecInvalid(format!(
                                "attribute {name:?} correlates with {:?}, which is not an \
                                 earlier continuous attribute",
                                c.attr
                            )));
                        }
                    }
                }
                AttrGen::Categorical {
                    name,
                    classes,
                    base_probs,
                    missing_rate,
                    missing_class,
                    ..
                } => {
                    if classes.is_empty() || classes.len() != base_probs.len() {
                        return Err(Error::SpecInvalid(format!(
                            "attribute {name:?}: classes and base_probs must align"
                        )));
                    }
                    if base_probs.iter().any(|&p| !(p > 0.0)) {
                        return Err(Error::SpecInvalid(format!(
                            "attribute {name:?}: base probabilities must be positive"
                        )));
                    }
                    let total: f64 = base_probs.iter().sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return Err(Error::SpecInvalid(format!(
                            "attribute {name:?}: base probabilities sum to {total}, not 1"
                        )));
                    }
                    if !(0.0..1.0).contains(missing_rate) {
                        return Err(Error::SpecInvalid(format!(
                            "attribute {name:?}: missing rate {missing_rate} outside [0, 1)"
                        )));
                    }
                    if *missing_rate > 0.0 && missing_class.is_none() {
                        return Err(Error::SpecInvalid(format!(
                            "attribute {name:?}: missing_rate > 0 needs a missing_class"
                        )));
                    }
                    if let Some(mc) = missing_class {
                        if classes.contains(mc) {
                            return Err(Error::SpecInvalid(format!(
                                "attribute {name:?}: missing class {mc:?} collides with a \
                                 declared class"
                            )));
                        }
                    }
                }
            }
            seen.push(name);
        }
        Ok(())
    }

    /// Number of zip tiles per stratum.
    fn zips_per_stratum(&self) -> usize {
        self.admins_per_stratum * self.zips_per_admin_side * self.zips_per_admin_side
    }

    /// Schema of the generated population (structural columns, the built-in
    /// demographic block, then the declared attributes).
    pub fn schema(&self) -> Result<Arc<Schema>> {
        let stratum_names: Vec<String> = self.strata.iter().map(|s| s.name.clone()).collect();
        let mut cluster_ids = Vec::new();
        let mut zip_ids = Vec::new();
        let mut admin_ids = Vec::new();
        for (t, _) in self.strata.iter().enumerate() {
            for p in 0..self.psus_per_stratum {
                cluster_ids.push(cluster_id(t, p));
            }
            for a in 0..self.admins_per_stratum {
                admin_ids.push(admin_id(t, a));
                for z in 0..self.zips_per_admin_side * self.zips_per_admin_side {
                    zip_ids.push(zip_id(t, a, z));
                }
            }
        }
        let max_size = self.household_size[1] as f64;

        fn as_refs(v: &[String]) -> Vec<&str> {
            v.iter().map(String::as_str).collect()
        }
        let mut attrs = vec![
            AttributeSpec::categorical("stratum", &as_refs(&stratum_names))
                .with_role(GeoRole::Stratum),
            AttributeSpec::categorical("cluster", &as_refs(&cluster_ids))
                .with_role(GeoRole::Cluster),
            AttributeSpec::categorical("zip", &as_refs(&zip_ids)).with_role(GeoRole::ZipCode),
            AttributeSpec::categorical("admin", &as_refs(&admin_ids))
                .with_role(GeoRole::AdminArea),
            {
                let mut hh: Vec<String> = Vec::new();
                for (t, _) in self.strata.iter().enumerate() {
                    for p in 0..self.psus_per_stratum {
                        // Household ids are pre-declared up to the maximum
                        // count; unused ids stay unobserved.
                        for h in 0..self.households_per_psu[1] {
                            hh.push(household_id(t, p, h));
                        }
                    }
                }
                hh.push(NO_HOUSEHOLD.to_string());
                AttributeSpec::categorical("household", &as_refs(&hh))
                    .with_role(GeoRole::Household)
                    .with_missing(NO_HOUSEHOLD)
            },
            AttributeSpec::categorical("urbanicity", &["urban", "rural"]),
            AttributeSpec::categorical("sex", &["female", "male"]),
            AttributeSpec::continuous("n_members", Some([1.0, max_size])),
            AttributeSpec::continuous("n_female", Some([0.0, max_size])),
            AttributeSpec::continuous("n_male", Some([0.0, max_size])),
        ];
        for gen in &self.attributes {
            attrs.push(match gen {
                AttrGen::Continuous { name, bounds, .. } => {
                    AttributeSpec::continuous(name, *bounds)
                }
                AttrGen::Categorical {
                    name,
                    classes,
                    missing_class,
                    ..
                } => {
                    let mut all: Vec<&str> = classes.iter().map(|s| s.as_str()).collect();
                    if let Some(mc) = missing_class {
                        all.push(mc);
                    }
                    let spec = AttributeSpec::categorical(name, &all);
                    match missing_class {
                        Some(mc) => spec.with_missing(mc),
                        None => spec,
                    }
                }
            });
        }
        Ok(Arc::new(Schema::new(attrs)?))
    }
}

fn cluster_id(stratum: usize, psu: usize) -> String {
    format!("c{stratum:02}{psu:02}")
}
fn household_id(stratum: usize, psu: usize, hh: usize) -> String {
    format!("h{stratum:02}{psu:02}{hh:03}")
}
fn admin_id(stratum: usize, admin: usize) -> String {
    format!("a{stratum:02}{admin}")
}
fn zip_id(stratum: usize, admin: usize, zip: usize) -> String {
    format!("z{stratum:02}{admin}{zip}")
}

/// Lay out the tiled geography and sample one point per cluster uniformly
/// inside its zip tile.
type Geography = (
    Vec<(String, Point)>,
    Vec<(String, Polygon)>,
    Vec<(String, Polygon)>,
);

fn build_geography(spec: &PopulationSpec, rng: &StreamRng) -> Geography {
    let side = spec.zips_per_admin_side;
    let mut admin_areas = Vec::new();
    let mut zip_areas = Vec::new();
    let mut cluster_points = Vec::new();
    // zip tile rectangle per (stratum, zip-in-stratum) for point sampling.
    let mut zip_rects: Vec<[f64; 4]> = Vec::new();
    let mut y0 = 0.0;
    for (t, stratum) in spec.strata.iter().enumerate() {
        let tile = if stratum.urban {
            spec.urban_tile_m
        } else {
            spec.rural_tile_m
        };
        let band_h = side as f64 * tile;
        for a in 0..spec.admins_per_stratum {
            let x0 = a as f64 * band_h; // admin blocks are side×side tiles, square
            admin_areas.push((
                admin_id(t, a),
                Polygon::rect(x0, y0, x0 + band_h, y0 + band_h),
            ));
            for zy in 0..side {
                for zx in 0..side {
                    let z = zy * side + zx;
                    let zx0 = x0 + zx as f64 * tile;
                    let zy0 = y0 + zy as f64 * tile;
                    zip_areas.push((
                        zip_id(t, a, z),
                        Polygon::rect(zx0, zy0, zx0 + tile, zy0 + tile),
                    ));
                    zip_rects.push([zx0, zy0, zx0 + tile, zy0 + tile]);
                }
            }
        }
        y0 += band_h;
    }

    // Cluster → zip assignment: round-robin over the stratum's zip tiles.
    let zips_per_stratum = spec.zips_per_stratum();
    let mut point_rng = rng.child("geography/points");
    for (t, _) in spec.strata.iter().enumerate() {
        for p in 0..spec.psus_per_stratum {
            let zip_in_stratum = p % zips_per_stratum;
            let zip_global = t * zips_per_stratum + zip_in_stratum;
            let [x0c, y0c, x1c, y1c] = zip_rects[zip_global];
            // Shrink by a hair so points never sit on a shared tile edge.
            let eps = 1e-6 * (x1c - x0c);
            let x = point_rng.random_range(x0c + eps..x1c - eps);
            let y = point_rng.random_range(y0c + eps..y1c - eps);
            cluster_points.push((cluster_id(t, p), Point { x, y }));
        }
    }
    (cluster_points, admin_areas, zip_areas)
}

/// Generate the pseudo-population and its geography.
pub fn generate_population(
    spec: &PopulationSpec,
    rng: &StreamRng,
) -> Result<(MicroTable, GeoContext)> {
    spec.validate()?;
    let schema = spec.schema()?;
    let (cluster_points, admin_areas, zip_areas) = build_geography(spec, rng);
    let geo = GeoContext::new(
        cluster_points.into_iter().collect(),
        admin_areas.into_iter().collect(),
        zip_areas.into_iter().collect(),
    )?;

    let zips_per_stratum = spec.zips_per_stratum();
    let admins_offset = |t: usize, zip_in_stratum: usize| -> (u32, u32) {
        let admin_in_stratum = zip_in_stratum / (spec.zips_per_admin_side * spec.zips_per_admin_side);
        (
            (t * spec.admins_per_stratum + admin_in_stratum) as u32,
            (t * zips_per_stratum + zip_in_stratum) as u32,
        )
    };

    // Continuous attrs appear in declared order; latent noise is kept per
    // individual so later attributes can correlate with earlier ones.
    let n_attrs = spec.attributes.len();
    let mut builder = TableBuilder::new(Arc::clone(&schema));
    let base_cols = schema.len() - n_attrs;

    // Per-stratum effects drawn once.
    struct StratumEffects {
        continuous_shift: Vec<f64>,
        class_logit: Vec<Vec<f64>>,
    }
    let mut stratum_effects = Vec::with_capacity(spec.strata.len());
    for stratum in &spec.strata {
        let mut srng = rng.child(&format!("effects/stratum/{}", stratum.name));
        let mut continuous_shift = Vec::with_capacity(n_attrs);
        let mut class_logit = Vec::with_capacity(n_attrs);
        for gen in &spec.attributes {
            match gen {
                AttrGen::Continuous { stratum_sd, .. } => {
                    continuous_shift.push(
                        stratum_sd * srng.sample::<f64, _>(rand_distr::StandardNormal),
                    );
                    class_logit.push(Vec::new());
                }
                AttrGen::Categorical {
                    classes,
                    stratum_effect,
                    ..
                } => {
                    continuous_shift.push(0.0);
                    class_logit.push(
                        (0..classes.len())
                            .map(|_| {
                                stratum_effect
                                    * srng.sample::<f64, _>(rand_distr::StandardNormal)
                            })
                            .collect(),
                    );
                }
            }
        }
        stratum_effects.push(StratumEffects {
            continuous_shift,
            class_logit,
        });
    }

    for (t, stratum) in spec.strata.iter().enumerate() {
        let urb_class = if stratum.urban { 0u32 } else { 1u32 };
        for p in 0..spec.psus_per_stratum {
            let cid = cluster_id(t, p);
            let mut crng = rng.child(&format!("cluster/{cid}"));
            let cluster_code = (t * spec.psus_per_stratum + p) as u32;
            let zip_in_stratum = p % zips_per_stratum;
            let (admin_code, zip_code) = admins_offset(t, zip_in_stratum);

            // Per-cluster effects and class probabilities.
            let mut cont_shift = Vec::with_capacity(n_attrs);
            let mut class_probs: Vec<Vec<f64>> = Vec::with_capacity(n_attrs);
            for (ai, gen) in spec.attributes.iter().enumerate() {
                match gen {
                    AttrGen::Continuous { cluster_sd, .. } => {
                        cont_shift.push(
                            cluster_sd * crng.sample::<f64, _>(rand_distr::StandardNormal),
                        );
                        class_probs.push(Vec::new());
                    }
                    AttrGen::Categorical {
                        base_probs,
                        cluster_effect,
                        ..
                    } => {
                        cont_shift.push(0.0);
                        let logits: Vec<f64> = base_probs
                            .iter()
                            .zip(&stratum_effects[t].class_logit[ai])
                            .map(|(&p0, &se)| {
                                p0.ln()
                                    + se
                                    + cluster_effect
                                        * crng.sample::<f64, _>(rand_distr::StandardNormal)
                            })
                            .collect();
                        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let mut probs: Vec<f64> =
                            logits.iter().map(|l| (l - max).exp()).collect();
                        let total: f64 = probs.iter().sum();
                        for q in &mut probs {
                            *q /= total;
                        }
                        class_probs.push(probs);
                    }
                }
            }

            let n_households =
                crng.random_range(spec.households_per_psu[0]..=spec.households_per_psu[1]);
            for h in 0..n_households {
                let hh_code = ((t * spec.psus_per_stratum + p) * spec.households_per_psu[1] + h)
                    as u32;
                let size =
                    crng.random_range(spec.household_size[0]..=spec.household_size[1]);
                let n_female = (0..size).filter(|_| crng.random::<bool>()).count();
                let n_male = size - n_female;

                // Household-level attribute values, shared by all members.
                let mut hh_values: Vec<Option<CellValue>> = vec![None; n_attrs];
                for (ai, gen) in spec.attributes.iter().enumerate() {
                    if level_of(gen) == VariationLevel::Household {
                        hh_values[ai] = Some(draw_attr(
                            gen,
                            ai,
                            &stratum_effects[t].continuous_shift,
                            &cont_shift,
                            &class_probs,
                            &mut crng,
                            &mut Vec::new(),
                        ));
                    }
                }

                for member in 0..size {
                    let sex = if member < n_female { 0u32 } else { 1u32 };
                    let mut cells = Vec::with_capacity(schema.len());
                    cells.push(CellValue::Class(t as u32));
                    cells.push(CellValue::Class(cluster_code));
                    cells.push(CellValue::Class(zip_code));
                    cells.push(CellValue::Class(admin_code));
                    cells.push(CellValue::Class(hh_code));
                    cells.push(CellValue::Class(urb_class));
                    cells.push(CellValue::Class(sex));
                    cells.push(CellValue::Num(size as f64));
                    cells.push(CellValue::Num(n_female as f64));
                    cells.push(CellValue::Num(n_male as f64));
                    debug_assert_eq!(cells.len(), base_cols);

                    let mut latents: Vec<(usize, f64)> = Vec::new();
                    for (ai, gen) in spec.attributes.iter().enumerate() {
                        let cell = match &hh_values[ai] {
                            Some(v) => v.clone(),
                            None => draw_attr(
                                gen,
                                ai,
                                &stratum_effects[t].continuous_shift,
                                &cont_shift,
                                &class_probs,
                                &mut crng,
                                &mut latents,
                            ),
                        };
                        cells.push(cell);
                    }
                    builder.push_row(&cells)?;
                }
            }
        }
    }
    let table = builder.finish(Provenance::Population)?;
    Ok((table, geo))
}

fn level_of(gen: &AttrGen) -> VariationLevel {
    match gen {
        AttrGen::Continuous { level, .. } => *level,
        AttrGen::Categorical { level, .. } => *level,
    }
}

/// Draw one attribute value. `latents` records (attr index, ε) pairs of
/// continuous attributes drawn so far for this individual.
fn draw_attr(
    gen: &AttrGen,
    ai: usize,
    stratum_shift: &[f64],
    cluster_shift: &[f64],
    class_probs: &[Vec<f64>],
    rng: &mut StreamRng,
    latents: &mut Vec<(usize, f64)>,
) -> CellValue {
    match gen {
        AttrGen::Continuous {
            bounds,
            base_mean,
            sd,
            correlate_with,
            ..
        } => {
            let fresh: f64 = rng.sample(rand_distr::StandardNormal);
            let eps = match correlate_with {
                Some(c) => {
                    // Validation guarantees the referenced attribute is an
                    // earlier continuous one; household-level references
                    // (no latent recorded) fall back to fresh noise.
                    match latents.iter().rev().find(|(idx, _)| *idx < ai).copied() {
                        Some((_, eref)) => c.rho * eref + (1.0 - c.rho * c.rho).sqrt() * fresh,
                        None => fresh,
                    }
                }
                None => fresh,
            };
            latents.push((ai, eps));
            let mut x = base_mean + stratum_shift[ai] + cluster_shift[ai] + sd * eps;
            if let Some([lo, hi]) = bounds {
                x = x.clamp(*lo, *hi);
            }
            CellValue::Num(x)
        }
        AttrGen::Categorical {
            classes,
            missing_rate,
            ..
        } => {
            if *missing_rate > 0.0 && rng.random::<f64>() < *missing_rate {
                // The missing class is appended after the declared classes.
                return CellValue::Class(classes.len() as u32);
            }
            let probs = &class_probs[ai];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return CellValue::Class(k as u32);
                }
            }
            CellValue::Class((probs.len() - 1) as u32)
        }
    }
}
