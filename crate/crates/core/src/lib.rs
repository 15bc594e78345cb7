//! Microdata dissemination toolkit: draw complex-design survey samples from a
//! pseudo-population, anonymize them by cluster displacement (geomasking) or by
//! Gaussian-copula synthetic data generation, and score the result on privacy
//! risk (population uniqueness, re-identification attack) and utility
//! (normalized KL divergence, composite indicators, Fay-Herriot survey
//! augmentation).
//!
//! The crate is organized around a small set of immutable data structures
//! ([`MicroTable`], [`Schema`], [`GeoContext`]) that every stage consumes and
//! produces, plus a seeded, portable PRNG contract ([`rng`]) that makes whole
//! simulation studies byte-reproducible. The [`study`] module ties the stages
//! into an N-replicate simulation runner; the `microsdc` binary exposes each
//! stage as a CLI subcommand.

pub mod composite;
pub mod copula;
pub mod encoding;
pub mod error;
pub mod fh;
pub mod forest;
pub mod geo;
pub mod geomask;
pub mod kl;
pub mod marginal;
pub mod metrics;
pub mod population;
pub mod risk;
pub mod rng;
pub mod sampling;
pub mod schema;
pub mod stats;
pub mod study;
pub mod table;

pub use copula::{
    sample_synthetic, synthesize_survey, ConditionalGaussian, CopulaModel, FittingLevel,
    GaussianSampler,
};
pub use encoding::{EncodedTable, Encoder, EncodingScheme};
pub use composite::{compute_composite, composite_report, CompositeLevelReport, CompositeSpec};
pub use error::{Error, Result};
pub use fh::{
    attach_covariates, augment, direct_estimates, fit_fh, predict_areas, Area, AreaData,
    AugmentOutcome, FhFit, FhMethod,
};
pub use forest::{Forest, ForestParams};
pub use kl::{kl_grid, KlGrid};
pub use metrics::{prediction_metrics, PredictionMetrics};
pub use geo::{point_in_polygon, GeoContext, Point, Polygon};
pub use geomask::{
    apply_mask, displace_clusters, urban_flags_from_column, GeomaskParams, MaskedGeo,
};
pub use marginal::{MarginalFamily, MarginalMode, MarginalModel};
pub use population::{generate_population, AttrGen, PopulationSpec, StratumSpec};
pub use risk::{
    attack_all_strata, default_attr_order, evaluate_attack, population_uniqueness,
    reidentified_uniqueness, train_attack, AttackModel, StratumAttack, UniquenessCurve,
};
pub use rng::StreamRng;
pub use sampling::{draw_sample, SampleDraw, SamplingDesign, SelectedCluster};
pub use schema::{AttrKind, AttributeSpec, Constraint, ConstraintSet, GeoRole, Schema};
pub use study::{run_study, RunManifest, StudyConfig, SynthesisOptions};
pub use table::{CellValue, Column, MicroTable, Provenance, TableBuilder};
