//! The replicated simulation study: generate one pseudo-population, then
//! for each replicate draw a survey, geomask it, synthesize it, and score
//! privacy (uniqueness, re-identification attack), distributional utility
//! (normalized KL), the composite indicator, and area-level estimation for
//! all three survey types. Results land as long-format CSVs plus a manifest
//! with content hashes.
//!
//! Determinism: the population uses the stream `population` of the master
//! seed; replicate `r` uses `replicate/{r}` with fixed child streams per
//! stage, so replicates can run in any order (or in parallel) and still
//! produce byte-identical result files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::composite::{composite_report, compute_composite, CompositeLevelReport, CompositeSpec};
use crate::copula::{synthesize_survey, FittingLevel};
use crate::encoding::EncodingScheme;
use crate::error::{Error, Result};
use crate::fh::{augment, write_covariates_csv, FhMethod};
use crate::forest::ForestParams;
use crate::geo::GeoContext;
use crate::geomask::{apply_mask, displace_clusters, urban_flags_from_column, GeomaskParams};
use crate::kl::kl_grid;
use crate::marginal::MarginalMode;
use crate::metrics::prediction_metrics;
use crate::population::{generate_population, PopulationSpec};
use crate::rng::StreamRng;
use crate::risk::{
    attack_all_strata, default_attr_order, population_uniqueness, reidentified_uniqueness,
};
use crate::sampling::{draw_sample, SamplingDesign};
use crate::schema::{ConstraintSet, GeoRole};
use crate::table::MicroTable;

/// Synthesis knobs of a study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisOptions {
    /// Sub-population the copula is fitted on.
    pub level: FittingLevel,
    /// Categorical encoding scheme.
    pub scheme: EncodingScheme,
    /// Marginal-family selection.
    pub marginals: MarginalMode,
    /// Synthetic sampling-rate multiplier (scales per-cluster row counts).
    pub rate: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            level: FittingLevel::Strata,
            scheme: EncodingScheme::Frequency,
            marginals: MarginalMode::Gaussian,
            rate: 1.0,
        }
    }
}

/// Full configuration of a study run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Number of replicates.
    pub replicates: usize,
    /// Master seed; all randomness derives from it.
    pub master_seed: u64,
    /// Population spec JSON; `None` uses the bundled desk-scale spec.
    pub population_spec: Option<PathBuf>,
    /// Two-stage sampling design.
    pub design: SamplingDesign,
    /// Displacement parameters.
    pub geomask: GeomaskParams,
    /// Synthesis options.
    pub synthesis: SynthesisOptions,
    /// Attack-forest hyperparameters.
    pub attack: ForestParams,
    /// Composite spec JSON; `None` uses the bundled 19-indicator spec.
    pub composite_spec: Option<PathBuf>,
    /// Area covariates CSV; `None` derives zip aggregates from the census.
    pub covariates: Option<PathBuf>,
    /// Where results are written.
    pub output_dir: PathBuf,
    /// Use design weights for the survey-side KL distributions.
    pub kl_weighted: bool,
    /// Persist per-replicate survey tables under `reps/`.
    pub keep_intermediates: bool,
    /// Abort the study on the first replicate error instead of recording it.
    pub fail_fast: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            replicates: 100,
            master_seed: 0,
            population_spec: None,
            design: SamplingDesign::default(),
            geomask: GeomaskParams::default(),
            synthesis: SynthesisOptions::default(),
            attack: ForestParams::default(),
            composite_spec: None,
            covariates: None,
            output_dir: PathBuf::from("study-out"),
            kl_weighted: false,
            keep_intermediates: false,
            fail_fast: false,
        }
    }
}

impl StudyConfig {
    /// Load a config from JSON.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<StudyConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io("read", path, e))?;
        let config: StudyConfig =
            serde_json::from_str(&text).map_err(|e| Error::io("parse", path, e))?;
        Ok(config)
    }

    /// Check invariants and referenced paths.
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::SpecInvalid("a study needs ≥ 1 replicate".into()));
        }
        if !(self.synthesis.rate > 0.0) {
            return Err(Error::SpecInvalid(format!(
                "synthesis rate {} must be positive",
                self.synthesis.rate
            )));
        }
        self.geomask.validate()?;
        for path in [&self.population_spec, &self.composite_spec, &self.covariates]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                return Err(Error::SpecInvalid(format!(
                    "referenced path {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

/// One output file, hashed for the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory.
    pub path: String,
    /// SHA-256 of the file contents.
    pub sha256: String,
    /// File size.
    pub bytes: u64,
}

/// A recorded per-replicate stage failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageError {
    /// Replicate index.
    pub replicate: usize,
    /// Stage name.
    pub stage: String,
    /// Error message.
    pub message: String,
}

/// Everything needed to audit or reproduce a run. Timings are informative
/// only; the result CSVs themselves are byte-deterministic in
/// `(config, master_seed)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Crate version that produced the run.
    pub version: String,
    /// Config snapshot.
    pub config: StudyConfig,
    /// Stream label per replicate (`replicate/{r}` under the master seed).
    pub replicate_streams: Vec<String>,
    /// Replicates with no stage errors.
    pub replicates_succeeded: usize,
    /// Output files with content hashes.
    pub artifacts: Vec<ArtifactEntry>,
    /// Stage failures, if any.
    pub errors: Vec<StageError>,
    /// Wall-clock milliseconds per stage, summed over replicates.
    pub stage_millis: BTreeMap<String, u64>,
}

/// Long-format result rows of one replicate.
#[derive(Debug, Default)]
struct ReplicateOutput {
    replicate: usize,
    /// (survey_type, attribute, zip, zip sample size, z).
    kl_cells: Vec<(String, String, String, f64, f64)>,
    /// (survey_type, overall z).
    kl_overall: Vec<(String, f64)>,
    /// (survey_type, prefix length, attribute, Ξ).
    uniqueness: Vec<(String, usize, String, f64)>,
    /// (trained_on, stratum, n_eval, zip cardinality, model acc, guess acc, degenerate).
    attack: Vec<(String, String, usize, usize, f64, f64, bool)>,
    composite: Vec<CompositeLevelReport>,
    /// (survey_type, σ²_u, mean γ, adj R², rel bias, MSE, converged, in-sample, areas).
    sae: Vec<(String, f64, f64, f64, f64, f64, bool, usize, usize)>,
    errors: Vec<StageError>,
    stage_millis: Vec<(&'static str, u64)>,
}

/// Shared study inputs, computed once.
struct StudyContext {
    population: MicroTable,
    geo: GeoContext,
    composite: CompositeSpec,
    /// Row constraints declared by the population spec, enforced during
    /// synthesis.
    constraints: ConstraintSet,
    covariate_names: Vec<String>,
    covariates: BTreeMap<String, Vec<f64>>,
    /// Census mean of the composite per zip.
    truth: BTreeMap<String, f64>,
}

/// Zip-level census aggregates used as stand-in area covariates: mean
/// income, mean age, and mean household size. Continuous means are used
/// (rather than class shares) so the design stays full-rank even when only
/// a handful of small areas are sampled.
///
/// Every declared zip gets a row. A zip tile with no census households
/// (possible on sparse geographies, and reachable by displaced clusters)
/// falls back to the overall census means, so area-level fits never see an
/// estimate without covariates.
pub fn census_covariates(census: &MicroTable) -> Result<(Vec<String>, BTreeMap<String, Vec<f64>>)> {
    let schema = census.schema();
    let zip_idx = schema.require_role(GeoRole::ZipCode)?;
    let zip_labels = &schema.attr(zip_idx).classes;
    let income = census.continuous(schema.require("income")?)?;
    let age = census.continuous(schema.require("age")?)?;
    let members = census.continuous(schema.require("n_members")?)?;

    let mean_over = |rows: &[usize], col: &[Option<f64>]| {
        rows.iter().map(|&r| col[r].unwrap_or(0.0)).sum::<f64>() / rows.len() as f64
    };
    let all_rows: Vec<usize> = (0..census.n_rows()).collect();
    let overall = vec![
        mean_over(&all_rows, income),
        mean_over(&all_rows, age),
        mean_over(&all_rows, members),
    ];

    let by_class = census.group_by_class(zip_idx)?;
    let mut out = BTreeMap::new();
    for (code, label) in zip_labels.iter().enumerate() {
        let values = match by_class.get(&(code as u32)) {
            Some(rows) => vec![
                mean_over(rows, income),
                mean_over(rows, age),
                mean_over(rows, members),
            ],
            None => overall.clone(),
        };
        out.insert(label.clone(), values);
    }
    Ok((
        vec![
            "mean_income".to_string(),
            "mean_age".to_string(),
            "mean_household_size".to_string(),
        ],
        out,
    ))
}

/// Census mean of a binary column per zip.
fn census_truth(census: &MicroTable, target: &str) -> Result<BTreeMap<String, f64>> {
    let schema = census.schema();
    let zip_idx = schema.require_role(GeoRole::ZipCode)?;
    let zip_labels = &schema.attr(zip_idx).classes;
    let idx = schema.require(target)?;
    let col = census.categorical(idx)?;
    let mut out = BTreeMap::new();
    for (&zip, rows) in &census.group_by_class(zip_idx)? {
        let yes = rows.iter().filter(|&&r| col[r] == 1).count() as f64;
        out.insert(zip_labels[zip as usize].clone(), yes / rows.len() as f64);
    }
    Ok(out)
}

/// Run one replicate; stage failures abort the replicate but keep the rows
/// gathered so far.
fn run_replicate(r: usize, config: &StudyConfig, ctx: &StudyContext) -> ReplicateOutput {
    let mut out = ReplicateOutput {
        replicate: r,
        ..Default::default()
    };
    let rng = StreamRng::derived(config.master_seed, &format!("replicate/{r}"));

    macro_rules! stage {
        ($name:literal, $expr:expr) => {{
            let started = Instant::now();
            let result = $expr;
            out.stage_millis
                .push(($name, started.elapsed().as_millis() as u64));
            match result {
                Ok(v) => v,
                Err(e) => {
                    out.errors.push(StageError {
                        replicate: r,
                        stage: $name.to_string(),
                        message: e.to_string(),
                    });
                    return out;
                }
            }
        }};
    }

    let survey = stage!(
        "sample",
        draw_sample(&ctx.population, &config.design, &rng.child("sample")).map(|d| d.survey)
    );

    let geomasked = stage!("geomask", {
        urban_flags_from_column(&survey, "urbanicity", "urban").and_then(|urban| {
            displace_clusters(&ctx.geo, &urban, &config.geomask, &rng.child("geomask"))
                .and_then(|masked| apply_mask(&survey, &masked))
        })
    });

    let (survey_aug, synthetic_aug, synthetic, geomasked_aug) = stage!("synthesize", {
        compute_composite(&survey, &ctx.composite).and_then(|survey_aug| {
            let synthetic_aug = synthesize_survey(
                &survey_aug,
                config.synthesis.level,
                config.synthesis.scheme,
                config.synthesis.marginals,
                &ctx.constraints,
                config.synthesis.rate,
                &rng.child("synthesize"),
            )?;
            let raw_names: Vec<&str> = survey
                .schema()
                .attrs()
                .iter()
                .map(|a| a.name.as_str())
                .collect();
            let synthetic = synthetic_aug.select(&raw_names)?;
            let geomasked_aug = compute_composite(&geomasked, &ctx.composite)?;
            Ok((survey_aug, synthetic_aug, synthetic, geomasked_aug))
        })
    });

    stage!("utility", {
        (|| -> Result<()> {
            for (ty, table) in [
                ("true", &survey),
                ("geomasked", &geomasked),
                ("synthetic", &synthetic),
            ] {
                let grid = kl_grid(table, &ctx.population, config.kl_weighted)?;
                for (row, attr) in grid.z.iter().zip(&grid.attrs) {
                    for ((cell, zip), size) in row.iter().zip(&grid.zips).zip(&grid.sample_sizes)
                    {
                        if let Some(z) = cell {
                            out.kl_cells.push((
                                ty.to_string(),
                                attr.clone(),
                                zip.clone(),
                                *size,
                                *z,
                            ));
                        }
                    }
                }
                out.kl_overall.push((ty.to_string(), grid.overall));
            }
            Ok(())
        })()
    });

    stage!("risk", {
        (|| -> Result<()> {
            let attrs = default_attr_order(survey.schema())?;
            for (ty, table) in [
                ("true", &survey),
                ("geomasked", &geomasked),
                ("synthetic", &synthetic),
            ] {
                let curve = population_uniqueness(table, &ctx.population, &attrs)?;
                for (k, xi) in curve.xi.iter().enumerate() {
                    out.uniqueness
                        .push((ty.to_string(), k + 1, attrs[k].clone(), *xi));
                }
            }
            let reid = reidentified_uniqueness(
                &synthetic,
                &survey,
                &ctx.population,
                &attrs,
                &config.attack,
                &rng.child("attack/reid"),
            )?;
            for (k, xi) in reid.xi.iter().enumerate() {
                out.uniqueness
                    .push(("reidentified".to_string(), k + 1, attrs[k].clone(), *xi));
            }
            for (trained_on, table) in [("geomasked", &geomasked), ("synthetic", &synthetic)] {
                let results = attack_all_strata(
                    table,
                    &survey,
                    &config.attack,
                    &rng.child(&format!("attack/{trained_on}")),
                )?;
                for a in results {
                    out.attack.push((
                        trained_on.to_string(),
                        a.stratum,
                        a.n_eval,
                        a.zip_cardinality,
                        a.model_accuracy,
                        a.guess_accuracy,
                        a.degenerate,
                    ));
                }
            }
            Ok(())
        })()
    });

    stage!("composite", {
        composite_report(&synthetic_aug, &survey_aug, &ctx.composite)
            .map(|rows| out.composite = rows)
    });

    stage!("sae", {
        (|| -> Result<()> {
            for (ty, table) in [
                ("true", &survey_aug),
                ("geomasked", &geomasked_aug),
                ("synthetic", &synthetic_aug),
            ] {
                let outcome = augment(
                    table,
                    &ctx.covariate_names,
                    &ctx.covariates,
                    &ctx.composite.name,
                    None,
                    FhMethod::Reml,
                )?;
                // Score only areas that exist in the census: a displaced
                // cluster can land in an unpopulated zip tile, which has an
                // estimate but no defined truth.
                let scored: BTreeMap<String, f64> = outcome
                    .predictions
                    .iter()
                    .filter(|(area, _)| ctx.truth.contains_key(*area))
                    .map(|(area, &v)| (area.clone(), v))
                    .collect();
                let metrics = prediction_metrics(
                    &scored,
                    &ctx.truth,
                    &outcome.data.in_sample_ids(),
                    ctx.covariate_names.len(),
                )?;
                out.sae.push((
                    ty.to_string(),
                    outcome.fit.sigma2_u,
                    outcome.mean_gamma,
                    metrics.r2_adj,
                    metrics.rel_bias,
                    metrics.mse,
                    outcome.fit.converged,
                    metrics.n_in_sample,
                    metrics.n_areas,
                ));
            }
            Ok(())
        })()
    });

    if config.keep_intermediates {
        stage!("io", {
            (|| -> Result<()> {
                let dir = config.output_dir.join(format!("reps/rep{r:03}"));
                std::fs::create_dir_all(&dir).map_err(|e| Error::io("write", &dir, e))?;
                survey.schema().to_json_file(&dir.join("survey.schema.json"))?;
                survey.write_csv(&dir.join("true.csv"))?;
                geomasked.write_csv(&dir.join("geomasked.csv"))?;
                synthetic.write_csv(&dir.join("synthetic.csv"))?;
                Ok(())
            })()
        });
    }

    out
}

fn write_csv<F>(path: &Path, header: &[&str], mut write_rows: F) -> Result<()>
where
    F: FnMut(&mut csv::Writer<std::fs::File>) -> Result<()>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io("write", path, e))?;
    w.write_record(header).map_err(|e| Error::io("write", path, e))?;
    write_rows(&mut w)?;
    w.flush().map_err(|e| Error::io("write", path, e))?;
    Ok(())
}

fn record(w: &mut csv::Writer<std::fs::File>, fields: &[String]) -> Result<()> {
    w.write_record(fields)
        .map_err(|e| Error::ParseError(format!("csv write failed: {e}")))
}

/// Run the full study: generate the population, run every replicate,
/// persist long-format results and the manifest (written to
/// `output_dir/manifest.json`).
pub fn run_study(config: &StudyConfig) -> Result<RunManifest> {
    config.validate()?;
    let out_dir = &config.output_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io("write", out_dir, e))?;

    let mut stage_millis: BTreeMap<String, u64> = BTreeMap::new();
    let started = Instant::now();

    // Shared inputs.
    let pop_spec = match &config.population_spec {
        Some(path) => PopulationSpec::from_json_file(path)?,
        None => PopulationSpec::desk_default(),
    };
    let composite = match &config.composite_spec {
        Some(path) => CompositeSpec::from_json_file(path)?,
        None => CompositeSpec::desk_default(),
    };
    let (population, geo) = generate_population(
        &pop_spec,
        &StreamRng::derived(config.master_seed, "population"),
    )?;
    let census_aug = compute_composite(&population, &composite)?;
    let truth = census_truth(&census_aug, &composite.name)?;
    let (covariate_names, covariates) = match &config.covariates {
        Some(path) => crate::fh::read_covariates_csv(path)?,
        None => census_covariates(&population)?,
    };
    *stage_millis.entry("population".into()).or_default() +=
        started.elapsed().as_millis() as u64;

    let ctx = StudyContext {
        population,
        geo,
        composite,
        constraints: pop_spec.constraints.clone(),
        covariate_names,
        covariates,
        truth,
    };

    // Replicates: embarrassingly parallel, collected in replicate order.
    let outputs: Vec<ReplicateOutput> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(r, config, &ctx))
        .collect();

    let mut errors: Vec<StageError> = Vec::new();
    for o in &outputs {
        for (stage, ms) in &o.stage_millis {
            *stage_millis.entry((*stage).to_string()).or_default() += ms;
        }
        errors.extend(o.errors.iter().cloned());
    }
    if config.fail_fast {
        if let Some(e) = errors.first() {
            return Err(Error::PipelineStage {
                replicate: e.replicate,
                stage: e.stage.clone(),
                message: e.message.clone(),
            });
        }
    }

    // Shared artifacts.
    let mut artifacts: Vec<PathBuf> = Vec::new();
    let schema_path = out_dir.join("population.schema.json");
    ctx.population.schema().to_json_file(&schema_path)?;
    let pop_path = out_dir.join("population.csv");
    ctx.population.write_csv(&pop_path)?;
    let geo_path = out_dir.join("geography.geojson");
    ctx.geo.to_geojson_file(&geo_path)?;
    let cov_path = out_dir.join("covariates.csv");
    write_covariates_csv(&cov_path, &ctx.covariate_names, &ctx.covariates)?;
    let truth_path = out_dir.join("truth.csv");
    write_csv(&truth_path, &["zip", "value"], |w| {
        for (zip, v) in &ctx.truth {
            record(w, &[zip.clone(), v.to_string()])?;
        }
        Ok(())
    })?;
    artifacts.extend([schema_path, pop_path, geo_path, cov_path, truth_path]);

    // Long-format results, ordered by replicate.
    let results_dir = out_dir.join("results");
    std::fs::create_dir_all(&results_dir).map_err(|e| Error::io("write", &results_dir, e))?;

    let p = results_dir.join("kl_cells.csv");
    write_csv(
        &p,
        &["replicate", "survey_type", "attribute", "zip", "sample_size", "z"],
        |w| {
            for o in &outputs {
                for (ty, attr, zip, size, z) in &o.kl_cells {
                    record(
                        w,
                        &[
                            o.replicate.to_string(),
                            ty.clone(),
                            attr.clone(),
                            zip.clone(),
                            size.to_string(),
                            z.to_string(),
                        ],
                    )?;
                }
            }
            Ok(())
        },
    )?;
    artifacts.push(p);

    let p = results_dir.join("kl_overall.csv");
    write_csv(&p, &["replicate", "survey_type", "z_overall"], |w| {
        for o in &outputs {
            for (ty, z) in &o.kl_overall {
                record(w, &[o.replicate.to_string(), ty.clone(), z.to_string()])?;
            }
        }
        Ok(())
    })?;
    artifacts.push(p);

    let p = results_dir.join("uniqueness.csv");
    write_csv(
        &p,
        &["replicate", "survey_type", "prefix_len", "attribute", "xi"],
        |w| {
            for o in &outputs {
                for (ty, k, attr, xi) in &o.uniqueness {
                    record(
                        w,
                        &[
                            o.replicate.to_string(),
                            ty.clone(),
                            k.to_string(),
                            attr.clone(),
                            xi.to_string(),
                        ],
                    )?;
                }
            }
            Ok(())
        },
    )?;
    artifacts.push(p);

    let p = results_dir.join("attack.csv");
    write_csv(
        &p,
        &[
            "replicate",
            "trained_on",
            "stratum",
            "n_eval",
            "zip_cardinality",
            "model_accuracy",
            "guess_accuracy",
            "degenerate",
        ],
        |w| {
            for o in &outputs {
                for (on, stratum, n, card, acc, guess, degen) in &o.attack {
                    record(
                        w,
                        &[
                            o.replicate.to_string(),
                            on.clone(),
                            stratum.clone(),
                            n.to_string(),
                            card.to_string(),
                            acc.to_string(),
                            guess.to_string(),
                            degen.to_string(),
                        ],
                    )?;
                }
            }
            Ok(())
        },
    )?;
    artifacts.push(p);

    let p = results_dir.join("composite.csv");
    write_csv(
        &p,
        &[
            "replicate",
            "level",
            "name",
            "rho",
            "z_kl",
            "incidence_direct",
            "incidence_recomputed",
            "incidence_true",
        ],
        |w| {
            for o in &outputs {
                for row in &o.composite {
                    record(
                        w,
                        &[
                            o.replicate.to_string(),
                            row.level.as_str().to_string(),
                            row.name.clone(),
                            row.rho.to_string(),
                            row.z_kl.to_string(),
                            row.incidence_direct.to_string(),
                            row.incidence_recomputed.to_string(),
                            row.incidence_true.to_string(),
                        ],
                    )?;
                }
            }
            Ok(())
        },
    )?;
    artifacts.push(p);

    let p = results_dir.join("sae.csv");
    write_csv(
        &p,
        &[
            "replicate",
            "survey_type",
            "sigma2_u",
            "mean_gamma",
            "r2_adj",
            "rel_bias",
            "mse",
            "converged",
            "n_in_sample",
            "n_areas",
        ],
        |w| {
            for o in &outputs {
                for (ty, s2, g, r2, bias, mse, conv, n_in, n_areas) in &o.sae {
                    record(
                        w,
                        &[
                            o.replicate.to_string(),
                            ty.clone(),
                            s2.to_string(),
                            g.to_string(),
                            r2.to_string(),
                            bias.to_string(),
                            mse.to_string(),
                            conv.to_string(),
                            n_in.to_string(),
                            n_areas.to_string(),
                        ],
                    )?;
                }
            }
            Ok(())
        },
    )?;
    artifacts.push(p);

    if config.keep_intermediates {
        for o in &outputs {
            let dir = out_dir.join(format!("reps/rep{:03}", o.replicate));
            for name in ["survey.schema.json", "true.csv", "geomasked.csv", "synthetic.csv"] {
                let path = dir.join(name);
                if path.exists() {
                    artifacts.push(path);
                }
            }
        }
    }

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        replicate_streams: (0..config.replicates)
            .map(|r| format!("replicate/{r}"))
            .collect(),
        replicates_succeeded: outputs.iter().filter(|o| o.errors.is_empty()).count(),
        artifacts: artifacts
            .iter()
            .map(|path| hash_artifact(out_dir, path))
            .collect::<Result<_>>()?,
        errors,
        stage_millis,
    };
    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::io("write", &manifest_path, e))?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io("write", &manifest_path, e))?;
    Ok(manifest)
}

fn hash_artifact(base: &Path, path: &Path) -> Result<ArtifactEntry> {
    let bytes = std::fs::read(path).map_err(|e| Error::io("read", path, e))?;
    let digest = sha2::Sha256::digest(&bytes);
    let rel = path.strip_prefix(base).unwrap_or(path);
    Ok(ArtifactEntry {
        path: rel.to_string_lossy().replace('\\', "/"),
        sha256: hex::encode(digest),
        bytes: bytes.len() as u64,
    })
}

/// A tiny population spec for smoke tests: 2 strata, handful of clusters.
pub fn smoke_population_spec() -> PopulationSpec {
    let mut spec = PopulationSpec::desk_default();
    spec.strata.truncate(2);
    spec.psus_per_stratum = 6;
    spec.households_per_psu = [10, 14];
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config(dir: &Path, n: usize, seed: u64) -> StudyConfig {
        let spec_path = dir.join("pop_spec.json");
        let spec = smoke_population_spec();
        std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
        StudyConfig {
            replicates: n,
            master_seed: seed,
            population_spec: Some(spec_path),
            attack: ForestParams {
                n_trees: 20,
                ..Default::default()
            },
            output_dir: dir.join("out"),
            keep_intermediates: true,
            ..Default::default()
        }
    }

    #[test]
    fn smoke_study_emits_all_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let config = smoke_config(dir.path(), 1, 7);
        let manifest = run_study(&config).unwrap();
        assert_eq!(manifest.replicates_succeeded, 1, "errors: {:?}", manifest.errors);
        for name in [
            "results/kl_cells.csv",
            "results/kl_overall.csv",
            "results/uniqueness.csv",
            "results/attack.csv",
            "results/composite.csv",
            "results/sae.csv",
            "population.csv",
            "covariates.csv",
            "truth.csv",
            "geography.geojson",
            "reps/rep000/true.csv",
        ] {
            assert!(
                manifest.artifacts.iter().any(|a| a.path == name),
                "missing artifact {name}"
            );
            assert!(config.output_dir.join(name).exists(), "file absent: {name}");
        }
        assert!(config.output_dir.join("manifest.json").exists());
        // Every artifact hash matches its file.
        for a in &manifest.artifacts {
            let again = hash_artifact(&config.output_dir, &config.output_dir.join(&a.path)).unwrap();
            assert_eq!(again.sha256, a.sha256);
        }
    }

    #[test]
    fn same_seed_reproduces_result_csvs_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = smoke_config(dir.path(), 2, 11);
        config.keep_intermediates = false;
        run_study(&config).unwrap();
        let first: Vec<(String, Vec<u8>)> = result_files(&config.output_dir);
        std::fs::remove_dir_all(&config.output_dir).unwrap();
        run_study(&config).unwrap();
        let second = result_files(&config.output_dir);
        assert_eq!(first.len(), second.len());
        for ((name_a, bytes_a), (name_b, bytes_b)) in first.iter().zip(&second) {
            assert_eq!(name_a, name_b);
            assert_eq!(bytes_a, bytes_b, "{name_a} differs between runs");
        }
    }

    fn result_files(out: &Path) -> Vec<(String, Vec<u8>)> {
        let mut names: Vec<String> = std::fs::read_dir(out.join("results"))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
            .collect();
        names.sort();
        names
            .into_iter()
            .map(|n| {
                let bytes = std::fs::read(out.join("results").join(&n)).unwrap();
                (n, bytes)
            })
            .collect()
    }

    #[test]
    fn different_seed_changes_results() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = smoke_config(dir.path(), 1, 1);
        a.keep_intermediates = false;
        run_study(&a).unwrap();
        let first = result_files(&a.output_dir);
        std::fs::remove_dir_all(&a.output_dir).unwrap();
        let mut b = smoke_config(dir.path(), 1, 2);
        b.keep_intermediates = false;
        b.output_dir = a.output_dir.clone();
        run_study(&b).unwrap();
        let second = result_files(&b.output_dir);
        assert!(
            first
                .iter()
                .zip(&second)
                .any(|((_, x), (_, y))| x != y),
            "different seeds should change some result file"
        );
    }

    /// The bundled composite must stay interior on the bundled population:
    /// an OR of 19 indicators saturates easily, and a near-constant target
    /// starves both the area-level model and the agreement report.
    #[test]
    fn desk_composite_incidence_is_interior() {
        let spec = PopulationSpec::desk_default();
        let (pop, _) = crate::population::generate_population(
            &spec,
            &StreamRng::derived(3, "population"),
        )
        .unwrap();
        let cspec = CompositeSpec::desk_default();
        let aug = compute_composite(&pop, &cspec).unwrap();
        let schema = aug.schema();
        let incidence = |name: &str| -> f64 {
            let col = aug.categorical(schema.require(name).unwrap()).unwrap();
            col.iter().filter(|&&c| c == 1).count() as f64 / col.len() as f64
        };
        for (level, name) in cspec.level_names() {
            let inc = incidence(&name);
            match level {
                crate::composite::Level::Indicator => assert!(
                    inc > 0.0 && inc < 0.5,
                    "indicator {name} incidence {inc} out of band"
                ),
                crate::composite::Level::Dimension => assert!(
                    inc > 0.02 && inc < 0.6,
                    "dimension {name} incidence {inc} out of band"
                ),
                crate::composite::Level::Composite => assert!(
                    inc > 0.25 && inc < 0.85,
                    "composite incidence {inc} out of band"
                ),
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = StudyConfig {
            replicates: 0,
            ..Default::default()
        };
        assert!(config.validate().is_err());
        config.replicates = 1;
        config.population_spec = Some(PathBuf::from("/nonexistent/spec.json"));
        assert!(config.validate().is_err());
    }
}
