//! Subcommand CLI over the `microsdc` library. Every pipeline stage reads
//! and writes plain files (CSV tables with JSON schema sidecars, GeoJSON
//! geography), so any stage can be re-run in isolation and chained runs
//! reproduce the fused `study` command number-for-number.
//!
//! Randomness: stage commands take `--seed` (the master seed) and
//! `--replicate`; they derive the same per-stage streams the study runner
//! uses, so `sample --seed 1 --replicate 0` draws exactly replicate 0 of
//! `study --seed 1`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use microsdc::composite::CompositeSpec;
use microsdc::copula::FittingLevel;
use microsdc::encoding::EncodingScheme;
use microsdc::fh::{augment, read_covariates_csv, FhMethod};
use microsdc::geo::GeoContext;
use microsdc::geomask::{apply_mask, displace_clusters, urban_flags_from_column, GeomaskParams};
use microsdc::kl::kl_grid;
use microsdc::marginal::MarginalMode;
use microsdc::population::{generate_population, PopulationSpec};
use microsdc::rng::StreamRng;
use microsdc::risk::{
    attack_all_strata, default_attr_order, population_uniqueness, reidentified_uniqueness,
};
use microsdc::sampling::{draw_sample, SamplingDesign};
use microsdc::study::{run_study, StudyConfig};
use microsdc::table::{MicroTable, Provenance};
use microsdc::{synthesize_survey, Error, ForestParams, Result};

#[derive(Parser)]
#[command(
    name = "microsdc",
    version,
    about = "Survey sampling, geomasking, copula-based synthetic microdata, \
             and privacy/utility evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a pseudo-population and its geography.
    Popgen(PopgenArgs),
    /// Draw a stratified two-stage cluster sample.
    Sample(SampleArgs),
    /// Displace cluster locations and reassign zip codes.
    Geomask(GeomaskArgs),
    /// Fit per-cluster copulas and draw a synthetic survey.
    Synthesize(SynthesizeArgs),
    /// Population-uniqueness curves and re-identification attacks.
    Risk(RiskArgs),
    /// Per-attribute, per-zip normalized KL agreement with the census.
    Utility(UtilityArgs),
    /// Area-level model fit and per-zip predictions.
    Sae(SaeArgs),
    /// Run the full N-replicate study.
    Study(StudyArgs),
}

/// Common seed/stream coordinates for stage commands.
#[derive(Args)]
struct StreamArgs {
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replicate index whose streams to reproduce.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
}

impl StreamArgs {
    fn rng(&self) -> StreamRng {
        StreamRng::derived(self.seed, &format!("replicate/{}", self.replicate))
    }
}

#[derive(Args)]
struct PopgenArgs {
    /// Population spec JSON (bundled desk-scale spec when omitted).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (population.csv, population.schema.json,
    /// geography.geojson).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    /// Population CSV (schema sidecar `<stem>.schema.json`).
    #[arg(long)]
    population: PathBuf,
    /// Explicit population schema path.
    #[arg(long)]
    population_schema: Option<PathBuf>,
    /// Sampling design JSON (defaults when omitted).
    #[arg(long)]
    design: Option<PathBuf>,
    /// Clusters per stratum (overrides the design file).
    #[arg(long)]
    n_s: Option<usize>,
    /// Households per cluster (overrides the design file).
    #[arg(long)]
    m: Option<usize>,
    #[command(flatten)]
    stream: StreamArgs,
    /// Output survey CSV (schema sidecar written next to it).
    #[arg(long)]
    out: PathBuf,
    /// Also write the cluster-selection record here.
    #[arg(long)]
    selection: Option<PathBuf>,
}

#[derive(Args)]
struct GeomaskArgs {
    /// Survey CSV (schema sidecar `<stem>.schema.json`).
    #[arg(long)]
    survey: PathBuf,
    /// Explicit survey schema path.
    #[arg(long)]
    survey_schema: Option<PathBuf>,
    /// Geography GeoJSON from `popgen`.
    #[arg(long)]
    geography: PathBuf,
    /// Displacement parameters JSON (defaults when omitted).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Attribute whose class marks urban clusters.
    #[arg(long, default_value = "urbanicity")]
    urban_attr: String,
    /// Class label marking urban clusters.
    #[arg(long, default_value = "urban")]
    urban_class: String,
    #[command(flatten)]
    stream: StreamArgs,
    /// Output masked survey CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Survey CSV (schema sidecar `<stem>.schema.json`).
    #[arg(long)]
    survey: PathBuf,
    /// Explicit survey schema path.
    #[arg(long)]
    survey_schema: Option<PathBuf>,
    /// Copula fitting level: country | strata | zip.
    #[arg(long, default_value = "strata")]
    level: String,
    /// Categorical encoding: frequency | ordinal | onehot.
    #[arg(long, default_value = "frequency")]
    scheme: String,
    /// Marginal selection: gaussian | ks_select.
    #[arg(long, default_value = "gaussian")]
    marginals: String,
    /// Synthetic sampling-rate multiplier.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Row-constraint set JSON (none when omitted).
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Composite spec JSON used to append derived columns before fitting
    /// (bundled spec when omitted; the study runner does the same).
    #[arg(long)]
    composite: Option<PathBuf>,
    /// Fit on the survey as-is, without appending composite columns.
    #[arg(long)]
    no_composite: bool,
    #[command(flatten)]
    stream: StreamArgs,
    /// Output synthetic survey CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RiskArgs {
    /// Survey to measure (the true survey for attack evaluation).
    #[arg(long)]
    survey: PathBuf,
    /// Explicit survey schema path.
    #[arg(long)]
    survey_schema: Option<PathBuf>,
    /// Label written to the survey_type column.
    #[arg(long, default_value = "survey")]
    label: String,
    /// Population CSV (schema sidecar `<stem>.schema.json`).
    #[arg(long)]
    population: PathBuf,
    /// Explicit population schema path.
    #[arg(long)]
    population_schema: Option<PathBuf>,
    /// Comma-separated attribute order (zip-first default when omitted).
    #[arg(long, value_delimiter = ',')]
    attrs: Option<Vec<String>>,
    /// Synthetic survey for the re-identified curve.
    #[arg(long)]
    reid_from: Option<PathBuf>,
    /// Perturbed survey to train the zip-prediction attack on.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Label of the training table: geomasked | synthetic.
    #[arg(long, default_value = "geomasked")]
    trained_on: String,
    /// Attack results CSV (required with --train).
    #[arg(long)]
    attack_out: Option<PathBuf>,
    /// Trees per attack forest.
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[command(flatten)]
    stream: StreamArgs,
    /// Uniqueness-curve CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct UtilityArgs {
    /// Survey CSV (schema sidecar `<stem>.schema.json`).
    #[arg(long)]
    survey: PathBuf,
    /// Explicit survey schema path.
    #[arg(long)]
    survey_schema: Option<PathBuf>,
    /// Census CSV (schema sidecar `<stem>.schema.json`).
    #[arg(long)]
    census: PathBuf,
    /// Explicit census schema path.
    #[arg(long)]
    census_schema: Option<PathBuf>,
    /// Weight the survey-side distributions by design weights.
    #[arg(long)]
    weighted: bool,
    /// Per-cell CSV (attribute, zip, sample_size, z).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SaeArgs {
    /// Survey CSV (schema sidecar `<stem>.schema.json`).
    #[arg(long)]
    survey: PathBuf,
    /// Explicit survey schema path.
    #[arg(long)]
    survey_schema: Option<PathBuf>,
    /// Area covariates CSV (zip_id, cov_1, ...).
    #[arg(long)]
    covariates: PathBuf,
    /// Target column (derived via the composite spec when absent).
    #[arg(long, default_value = "unmet_basic_needs")]
    target: String,
    /// Composite spec JSON (bundled spec when omitted).
    #[arg(long)]
    composite: Option<PathBuf>,
    /// Variance-component method: reml | ml.
    #[arg(long, default_value = "reml")]
    method: String,
    /// Synthetic sampling rates to sweep: synthesize the survey at each
    /// rate, refit, and tabulate shrinkage against rate.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    #[command(flatten)]
    stream: StreamArgs,
    /// Fit JSON (plain mode) or rate-sweep CSV (with --rates).
    #[arg(long)]
    out: PathBuf,
    /// Also write per-zip predictions here (plain mode).
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    /// Study config JSON (defaults when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of replicates.
    #[arg(long)]
    replicates: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Population spec JSON.
    #[arg(long)]
    population_spec: Option<PathBuf>,
    /// Composite spec JSON.
    #[arg(long)]
    composite_spec: Option<PathBuf>,
    /// Area covariates CSV.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Copula fitting level: country | strata | zip.
    #[arg(long)]
    level: Option<String>,
    /// Categorical encoding: frequency | ordinal | onehot.
    #[arg(long)]
    scheme: Option<String>,
    /// Marginal selection: gaussian | ks_select.
    #[arg(long)]
    marginals: Option<String>,
    /// Synthetic sampling-rate multiplier.
    #[arg(long)]
    rate: Option<f64>,
    /// Weight survey-side KL distributions.
    #[arg(long)]
    kl_weighted: bool,
    /// Keep per-replicate survey tables.
    #[arg(long)]
    keep_intermediates: bool,
    /// Abort on the first replicate error.
    #[arg(long)]
    fail_fast: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(workers) = std::env::var("MICROSDC_WORKERS") {
        match workers.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: MICROSDC_WORKERS={workers} is not a positive integer");
                return ExitCode::FAILURE;
            }
        }
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Popgen(args) => popgen(args),
        Command::Sample(args) => sample(args),
        Command::Geomask(args) => geomask(args),
        Command::Synthesize(args) => synthesize(args),
        Command::Risk(args) => risk(args),
        Command::Utility(args) => utility(args),
        Command::Sae(args) => sae(args),
        Command::Study(args) => study(args),
    }?;
    Ok(ExitCode::SUCCESS)
}

/// Parse a serde-named enum variant from a CLI string.
fn parse_variant<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::SpecInvalid(format!("unknown {what} {s:?}")))
}

/// `survey.csv` → `survey.schema.json` unless an explicit path was given.
fn sidecar(csv: &Path, explicit: Option<&PathBuf>) -> PathBuf {
    match explicit {
        Some(p) => p.clone(),
        None => csv.with_extension("schema.json"),
    }
}

fn load_table(csv: &Path, schema: Option<&PathBuf>, provenance: Provenance) -> Result<MicroTable> {
    MicroTable::load_csv(csv, &sidecar(csv, schema), provenance)
}

fn write_table(table: &MicroTable, csv: &Path) -> Result<()> {
    if let Some(dir) = csv.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io("write", dir, e))?;
        }
    }
    table.write_csv(csv)?;
    table.schema().to_json_file(&sidecar(csv, None))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io("read", path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::io("parse", path, e))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::io("write", path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io("write", path, e))
}

fn composite_spec(path: Option<&PathBuf>) -> Result<CompositeSpec> {
    match path {
        Some(p) => CompositeSpec::from_json_file(p),
        None => Ok(CompositeSpec::desk_default()),
    }
}

fn popgen(args: PopgenArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => PopulationSpec::from_json_file(path)?,
        None => PopulationSpec::desk_default(),
    };
    let rng = StreamRng::derived(args.seed, "population");
    let (population, geo) = generate_population(&spec, &rng)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io("write", &args.out, e))?;
    write_table(&population, &args.out.join("population.csv"))?;
    geo.to_geojson_file(&args.out.join("geography.geojson"))?;
    println!(
        "population: {} rows, {} zips, {} clusters",
        population.n_rows(),
        geo.zip_areas().len(),
        geo.cluster_points().len()
    );
    Ok(())
}

fn sample(args: SampleArgs) -> Result<()> {
    let population = load_table(
        &args.population,
        args.population_schema.as_ref(),
        Provenance::Population,
    )?;
    let mut design: SamplingDesign = match &args.design {
        Some(path) => read_json(path)?,
        None => SamplingDesign::default(),
    };
    if let Some(n_s) = args.n_s {
        design.n_s = n_s;
    }
    if let Some(m) = args.m {
        design.m = m;
    }
    let draw = draw_sample(&population, &design, &args.stream.rng().child("sample"))?;
    write_table(&draw.survey, &args.out)?;
    if let Some(path) = &args.selection {
        let text = serde_json::to_string_pretty(&draw.manifest_json(&design))
            .map_err(|e| Error::io("write", path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io("write", path, e))?;
    }
    println!(
        "survey: {} rows from {} clusters",
        draw.survey.n_rows(),
        draw.selected.len()
    );
    Ok(())
}

fn geomask(args: GeomaskArgs) -> Result<()> {
    let survey = load_table(&args.survey, args.survey_schema.as_ref(), Provenance::True)?;
    let geo = GeoContext::from_geojson_file(&args.geography)?;
    let params: GeomaskParams = match &args.params {
        Some(path) => read_json(path)?,
        None => GeomaskParams::default(),
    };
    let urban = urban_flags_from_column(&survey, &args.urban_attr, &args.urban_class)?;
    let masked = displace_clusters(&geo, &urban, &params, &args.stream.rng().child("geomask"))?;
    let geomasked = apply_mask(&survey, &masked)?;
    write_table(&geomasked, &args.out)?;
    let changed = masked.log.values().filter(|d| d.zip_changed).count();
    println!(
        "geomasked: {} of {} clusters assigned a new zip",
        changed,
        masked.log.len()
    );
    Ok(())
}

fn synthesize(args: SynthesizeArgs) -> Result<()> {
    let survey = load_table(&args.survey, args.survey_schema.as_ref(), Provenance::True)?;
    let constraints = match &args.constraints {
        Some(path) => microsdc::ConstraintSet::from_json_file(path)?,
        None => microsdc::ConstraintSet::empty(),
    };
    let level: FittingLevel = parse_variant("fitting level", &args.level)?;
    let scheme: EncodingScheme = parse_variant("encoding scheme", &args.scheme)?;
    let marginals: MarginalMode = parse_variant("marginal mode", &args.marginals)?;
    let rng = args.stream.rng();

    // Mirror the study runner: append composite columns, fit, then project
    // back onto the survey's own attributes.
    let fitted = if args.no_composite {
        survey.clone()
    } else {
        microsdc::compute_composite(&survey, &composite_spec(args.composite.as_ref())?)?
    };
    let synthetic_aug = synthesize_survey(
        &fitted,
        level,
        scheme,
        marginals,
        &constraints,
        args.rate,
        &rng.child("synthesize"),
    )?;
    let raw_names: Vec<&str> = survey
        .schema()
        .attrs()
        .iter()
        .map(|a| a.name.as_str())
        .collect();
    let synthetic = synthetic_aug.select(&raw_names)?;
    write_table(&synthetic, &args.out)?;
    println!("synthetic: {} rows", synthetic.n_rows());
    Ok(())
}

fn risk(args: RiskArgs) -> Result<()> {
    let survey = load_table(&args.survey, args.survey_schema.as_ref(), Provenance::True)?;
    let population = load_table(
        &args.population,
        args.population_schema.as_ref(),
        Provenance::Population,
    )?;
    let attrs = match &args.attrs {
        Some(list) => list.clone(),
        None => default_attr_order(survey.schema())?,
    };
    let params = ForestParams {
        n_trees: args.trees,
        ..ForestParams::default()
    };
    let rng = args.stream.rng();

    let mut w = csv::Writer::from_path(&args.out).map_err(|e| Error::io("write", &args.out, e))?;
    w.write_record(["survey_type", "prefix_len", "attribute", "xi"])
        .map_err(|e| Error::io("write", &args.out, e))?;
    let curve = population_uniqueness(&survey, &population, &attrs)?;
    for (k, xi) in curve.xi.iter().enumerate() {
        w.write_record([
            args.label.as_str(),
            &(k + 1).to_string(),
            &attrs[k],
            &xi.to_string(),
        ])
        .map_err(|e| Error::io("write", &args.out, e))?;
    }
    if let Some(path) = &args.reid_from {
        let synthetic = load_table(path, None, Provenance::Synthetic)?;
        let reid = reidentified_uniqueness(
            &synthetic,
            &survey,
            &population,
            &attrs,
            &params,
            &rng.child("attack/reid"),
        )?;
        for (k, xi) in reid.xi.iter().enumerate() {
            w.write_record([
                "reidentified",
                &(k + 1).to_string(),
                &attrs[k],
                &xi.to_string(),
            ])
            .map_err(|e| Error::io("write", &args.out, e))?;
        }
    }
    w.flush().map_err(|e| Error::io("write", &args.out, e))?;

    if let Some(path) = &args.train {
        let out = args.attack_out.as_ref().ok_or_else(|| {
            Error::SpecInvalid("--train needs --attack-out for the results".into())
        })?;
        let provenance = if args.trained_on == "synthetic" {
            Provenance::Synthetic
        } else {
            Provenance::Geomasked
        };
        let train = load_table(path, None, provenance)?;
        let results = attack_all_strata(
            &train,
            &survey,
            &params,
            &rng.child(&format!("attack/{}", args.trained_on)),
        )?;
        let mut w = csv::Writer::from_path(out).map_err(|e| Error::io("write", out, e))?;
        w.write_record([
            "trained_on",
            "stratum",
            "n_eval",
            "zip_cardinality",
            "model_accuracy",
            "guess_accuracy",
            "degenerate",
        ])
        .map_err(|e| Error::io("write", out, e))?;
        for a in results {
            w.write_record([
                args.trained_on.as_str(),
                &a.stratum,
                &a.n_eval.to_string(),
                &a.zip_cardinality.to_string(),
                &a.model_accuracy.to_string(),
                &a.guess_accuracy.to_string(),
                &a.degenerate.to_string(),
            ])
            .map_err(|e| Error::io("write", out, e))?;
        }
        w.flush().map_err(|e| Error::io("write", out, e))?;
    }
    Ok(())
}

fn utility(args: UtilityArgs) -> Result<()> {
    let survey = load_table(&args.survey, args.survey_schema.as_ref(), Provenance::True)?;
    let census = load_table(
        &args.census,
        args.census_schema.as_ref(),
        Provenance::Population,
    )?;
    let grid = kl_grid(&survey, &census, args.weighted)?;
    let mut w = csv::Writer::from_path(&args.out).map_err(|e| Error::io("write", &args.out, e))?;
    w.write_record(["attribute", "zip", "sample_size", "z"])
        .map_err(|e| Error::io("write", &args.out, e))?;
    for (row, attr) in grid.z.iter().zip(&grid.attrs) {
        for ((cell, zip), size) in row.iter().zip(&grid.zips).zip(&grid.sample_sizes) {
            if let Some(z) = cell {
                w.write_record([attr.as_str(), zip, &size.to_string(), &z.to_string()])
                    .map_err(|e| Error::io("write", &args.out, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("write", &args.out, e))?;
    println!("z_overall={}", grid.overall);
    Ok(())
}

fn sae(args: SaeArgs) -> Result<()> {
    let survey = load_table(&args.survey, args.survey_schema.as_ref(), Provenance::True)?;
    let (names, covariates) = read_covariates_csv(&args.covariates)?;
    let method: FhMethod = parse_variant("method", &args.method)?;
    let spec = composite_spec(args.composite.as_ref())?;

    if let Some(rates) = &args.rates {
        // Rate sweep: synthesize the survey at each rate and tabulate the
        // model's shrinkage against the synthetic sample size.
        let rng = args.stream.rng();
        let fitted = microsdc::compute_composite(&survey, &spec)?;
        let mut w =
            csv::Writer::from_path(&args.out).map_err(|e| Error::io("write", &args.out, e))?;
        w.write_record(["rate", "n_rows", "sigma2_u", "mean_gamma", "converged"])
            .map_err(|e| Error::io("write", &args.out, e))?;
        for &rate in rates {
            let synthetic = synthesize_survey(
                &fitted,
                FittingLevel::Strata,
                EncodingScheme::Frequency,
                MarginalMode::Gaussian,
                &microsdc::ConstraintSet::empty(),
                rate,
                &rng.child(&format!("synthesize/{rate}")),
            )?;
            let outcome = augment(&synthetic, &names, &covariates, &args.target, Some(&spec), method)?;
            w.write_record([
                rate.to_string(),
                synthetic.n_rows().to_string(),
                outcome.fit.sigma2_u.to_string(),
                outcome.mean_gamma.to_string(),
                outcome.fit.converged.to_string(),
            ])
            .map_err(|e| Error::io("write", &args.out, e))?;
        }
        w.flush().map_err(|e| Error::io("write", &args.out, e))?;
        return Ok(());
    }

    let outcome = augment(&survey, &names, &covariates, &args.target, Some(&spec), method)?;
    write_json(&outcome.fit, &args.out)?;
    if let Some(path) = &args.predictions {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io("write", path, e))?;
        w.write_record(["zip", "prediction", "in_sample"])
            .map_err(|e| Error::io("write", path, e))?;
        let in_sample = outcome.data.in_sample_ids();
        for (zip, pred) in &outcome.predictions {
            w.write_record([
                zip.as_str(),
                &pred.to_string(),
                &in_sample.contains(zip).to_string(),
            ])
            .map_err(|e| Error::io("write", path, e))?;
        }
        w.flush().map_err(|e| Error::io("write", path, e))?;
    }
    println!(
        "sigma2_u={} mean_gamma={} converged={}",
        outcome.fit.sigma2_u, outcome.mean_gamma, outcome.fit.converged
    );
    Ok(())
}

fn study(args: StudyArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => StudyConfig::from_json_file(path)?,
        None => StudyConfig::default(),
    };
    if let Some(n) = args.replicates {
        config.replicates = n;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(p) = args.population_spec {
        config.population_spec = Some(p);
    }
    if let Some(p) = args.composite_spec {
        config.composite_spec = Some(p);
    }
    if let Some(p) = args.covariates {
        config.covariates = Some(p);
    }
    if let Some(s) = &args.level {
        config.synthesis.level = parse_variant("fitting level", s)?;
    }
    if let Some(s) = &args.scheme {
        config.synthesis.scheme = parse_variant("encoding scheme", s)?;
    }
    if let Some(s) = &args.marginals {
        config.synthesis.marginals = parse_variant("marginal mode", s)?;
    }
    if let Some(rate) = args.rate {
        config.synthesis.rate = rate;
    }
    if args.kl_weighted {
        config.kl_weighted = true;
    }
    if args.keep_intermediates {
        config.keep_intermediates = true;
    }
    if args.fail_fast {
        config.fail_fast = true;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }

    let manifest = run_study(&config)?;
    let failed = config.replicates - manifest.replicates_succeeded;
    println!(
        "study: {}/{} replicates succeeded, {} artifacts, results in {}",
        manifest.replicates_succeeded,
        config.replicates,
        manifest.artifacts.len(),
        config.output_dir.display()
    );
    if failed > 0 {
        let mut by_stage: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &manifest.errors {
            *by_stage.entry(e.stage.as_str()).or_default() += 1;
        }
        eprintln!("{failed} replicate(s) failed:");
        for (stage, count) in by_stage {
            eprintln!("  stage {stage}: {count} failure(s)");
        }
        for e in manifest.errors.iter().take(5) {
            eprintln!("  replicate {} ({}): {}", e.replicate, e.stage, e.message);
        }
        if manifest.replicates_succeeded > 0 {
            std::process::exit(2);
        }
        return Err(Error::PipelineStage {
            replicate: manifest.errors[0].replicate,
            stage: manifest.errors[0].stage.clone(),
            message: manifest.errors[0].message.clone(),
        });
    }
    Ok(())
}
