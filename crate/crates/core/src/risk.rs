//! Privacy-risk measurement: population uniqueness and the zip-code
//! re-identification attack.
//!
//! **Population uniqueness.** A respondent is *unique* when their attribute
//! tuple occurs exactly once in the population. The share of unique
//! respondents, Ξ, is traced over growing attribute prefixes (zip code
//! first by default, then the analytic attributes in schema order), giving
//! the risk curve: a released tuple that is population-unique identifies its
//! person outright. Tuples are hash-counted over the population, so a survey
//! tuple that never occurs in the population — e.g. because geomasking moved
//! its zip, or because the value was synthesized — counts as *not* unique.
//!
//! **Re-identification attack.** Per stratum, a random forest is trained on
//! the perturbed (geomasked or synthetic) survey to predict the zip code
//! from the analytic attributes, then scored on the true survey against a
//! random-guess baseline that draws zips from the perturbed data's zip
//! frequencies. Attaching the attack's predicted zips to the true survey
//! and re-running the uniqueness computation yields the "re-identified"
//! curve: how much of the masked geography an adversary wins back.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{Encoder, EncodingScheme};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestParams};
use crate::rng::StreamRng;
use crate::schema::{GeoRole, Schema};
use crate::table::{Column, MicroTable};

/// Share of respondents unique in the population, per attribute prefix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniquenessCurve {
    /// Attribute order used; prefix `k` covers `attrs[..k]`.
    pub attrs: Vec<String>,
    /// Ξ at each prefix length 1..=d.
    pub xi: Vec<f64>,
    /// Survey rows measured.
    pub n_rows: usize,
}

impl UniquenessCurve {
    /// Ξ at the full attribute set.
    pub fn full(&self) -> f64 {
        *self.xi.last().expect("curve has at least one prefix")
    }
}

/// Default uniqueness attribute order: zip code first, then the analytic
/// (non-geography) attributes in schema order.
pub fn default_attr_order(schema: &Schema) -> Result<Vec<String>> {
    let zip = schema.require_role(GeoRole::ZipCode)?;
    let mut attrs = vec![schema.attr(zip).name.clone()];
    for idx in schema.non_geo_indices() {
        attrs.push(schema.attr(idx).name.clone());
    }
    Ok(attrs)
}

/// Stable per-cell key: class index for categorical cells, bit pattern for
/// continuous ones, and a reserved sentinel for absent cells.
fn cell_keys(table: &MicroTable, idx: usize) -> Result<Vec<u64>> {
    const ABSENT: u64 = u64::MAX ^ 0x5bd1_e995;
    Ok(match table.column(idx) {
        Column::Categorical(codes) => codes.iter().map(|&c| c as u64).collect(),
        Column::Continuous(values) => values
            .iter()
            .map(|v| match v {
                Some(x) => x.to_bits(),
                None => ABSENT,
            })
            .collect(),
    })
}

/// Check that `attrs` exist in both tables with matching kind and class
/// vocabulary, returning (survey index, population index) pairs.
fn align_attrs(
    survey: &MicroTable,
    population: &MicroTable,
    attrs: &[String],
) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::with_capacity(attrs.len());
    for name in attrs {
        let si = survey.schema().require(name)?;
        let pi = population.schema().require(name)?;
        let sa = survey.schema().attr(si);
        let pa = population.schema().attr(pi);
        if sa.kind != pa.kind || sa.classes != pa.classes {
            return Err(Error::SchemaMismatch(format!(
                "attribute {name:?} differs between survey and population"
            )));
        }
        pairs.push((si, pi));
    }
    Ok(pairs)
}

/// The population-uniqueness curve of a survey.
pub fn population_uniqueness(
    survey: &MicroTable,
    population: &MicroTable,
    attrs: &[String],
) -> Result<UniquenessCurve> {
    if attrs.is_empty() {
        return Err(Error::SpecInvalid("uniqueness needs ≥ 1 attribute".into()));
    }
    let pairs = align_attrs(survey, population, attrs)?;
    let n = survey.n_rows();
    let d = attrs.len();

    let survey_keys: Vec<Vec<u64>> =
        pairs.iter().map(|&(si, _)| cell_keys(survey, si)).collect::<Result<_>>()?;
    let pop_keys: Vec<Vec<u64>> =
        pairs.iter().map(|&(_, pi)| cell_keys(population, pi)).collect::<Result<_>>()?;

    let mut xi = Vec::with_capacity(d);
    let mut pop_prefix: Vec<Vec<u64>> = vec![Vec::with_capacity(d); population.n_rows()];
    let mut survey_prefix: Vec<Vec<u64>> = vec![Vec::with_capacity(d); n];
    for k in 0..d {
        for (r, prefix) in pop_prefix.iter_mut().enumerate() {
            prefix.push(pop_keys[k][r]);
        }
        for (r, prefix) in survey_prefix.iter_mut().enumerate() {
            prefix.push(survey_keys[k][r]);
        }
        let mut counts: HashMap<&[u64], u32> = HashMap::with_capacity(pop_prefix.len());
        for prefix in &pop_prefix {
            *counts.entry(prefix.as_slice()).or_insert(0) += 1;
        }
        let unique = survey_prefix
            .iter()
            .filter(|p| counts.get(p.as_slice()) == Some(&1))
            .count();
        xi.push(if n == 0 { 0.0 } else { unique as f64 / n as f64 });
    }
    Ok(UniquenessCurve {
        attrs: attrs.to_vec(),
        xi,
        n_rows: n,
    })
}

/// A per-stratum attack model: forest + the encoder its features came from.
pub struct AttackModel {
    forest: Forest,
    encoder: Encoder,
    feature_names: Vec<String>,
    /// Stratum label the model belongs to.
    pub stratum: String,
    /// Global zip class per compact forest label.
    labels: Vec<u32>,
    /// Training-frequency of each compact label (the guess distribution).
    label_freq: Vec<f64>,
}

/// Attack scores for one stratum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumAttack {
    /// Stratum label.
    pub stratum: String,
    /// True-survey rows scored.
    pub n_eval: usize,
    /// Distinct zip labels seen in training.
    pub zip_cardinality: usize,
    /// Share of rows whose predicted zip equals the true zip.
    pub model_accuracy: f64,
    /// Accuracy of drawing zips from the training zip frequencies.
    pub guess_accuracy: f64,
    /// Single-zip training stratum (model degenerates to a constant).
    pub degenerate: bool,
}

/// Project a stratum's rows and encode the analytic attributes as forest
/// features (frequency encoding; lenient so foreign tables can be scored).
fn stratum_features(
    table: &MicroTable,
    stratum_code: u32,
    encoder: Option<&Encoder>,
) -> Result<(MicroTable, Encoder, Vec<Vec<f64>>)> {
    let schema = table.schema();
    let stratum_idx = schema.require_role(GeoRole::Stratum)?;
    let rows: Vec<usize> = table
        .categorical(stratum_idx)?
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == stratum_code)
        .map(|(r, _)| r)
        .collect();
    if rows.is_empty() {
        return Err(Error::DegenerateStratum(format!(
            "stratum {:?} has no rows",
            schema.attr(stratum_idx).classes[stratum_code as usize]
        )));
    }
    let names: Vec<&str> = schema
        .non_geo_indices()
        .into_iter()
        .map(|i| schema.attr(i).name.as_str())
        .collect();
    let sub = table.take_rows(&rows).select(&names)?;
    let enc = match encoder {
        Some(e) => e.clone(),
        None => Encoder::fit(&sub, EncodingScheme::Frequency)?,
    };
    let encoded = enc.transform_lenient(&sub)?;
    Ok((sub, enc, encoded.values))
}

/// Zip labels of a stratum's rows.
fn stratum_zips(table: &MicroTable, stratum_code: u32) -> Result<Vec<u32>> {
    let schema = table.schema();
    let stratum_idx = schema.require_role(GeoRole::Stratum)?;
    let zip_idx = schema.require_role(GeoRole::ZipCode)?;
    let strata = table.categorical(stratum_idx)?;
    Ok(table
        .categorical(zip_idx)?
        .iter()
        .zip(strata)
        .filter(|(_, &s)| s == stratum_code)
        .map(|(&z, _)| z)
        .collect())
}

/// Train the per-stratum zip predictor on a perturbed survey.
pub fn train_attack(
    perturbed: &MicroTable,
    stratum_code: u32,
    params: &ForestParams,
    rng: &StreamRng,
) -> Result<AttackModel> {
    let schema = perturbed.schema();
    let stratum_idx = schema.require_role(GeoRole::Stratum)?;
    let stratum_label = schema.attr(stratum_idx).classes[stratum_code as usize].clone();

    let (_, encoder, features) = stratum_features(perturbed, stratum_code, None)?;
    let zips = stratum_zips(perturbed, stratum_code)?;

    // Compact label space over the zips observed in training.
    let mut labels: Vec<u32> = zips.clone();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::DegenerateStratum(format!(
            "stratum {stratum_label:?} has a single zip label in training"
        )));
    }
    let compact: Vec<u32> = zips
        .iter()
        .map(|z| labels.binary_search(z).expect("zip in label set") as u32)
        .collect();
    let mut label_freq = vec![0.0; labels.len()];
    for &c in &compact {
        label_freq[c as usize] += 1.0;
    }
    for f in &mut label_freq {
        *f /= compact.len() as f64;
    }

    let forest = Forest::train(
        &features,
        &compact,
        labels.len() as u32,
        params,
        &rng.child(&format!("forest/{stratum_label}")),
    )?;
    let feature_names = encoder
        .schema()
        .attrs()
        .iter()
        .map(|a| a.name.clone())
        .collect();
    Ok(AttackModel {
        forest,
        encoder,
        feature_names,
        stratum: stratum_label,
        labels,
        label_freq,
    })
}

impl AttackModel {
    /// Predict global zip classes for a stratum of a (true) survey.
    pub fn predict(&self, survey: &MicroTable, stratum_code: u32) -> Result<Vec<u32>> {
        let (sub, _, features) = stratum_features(survey, stratum_code, Some(&self.encoder))?;
        let names: Vec<String> = sub.schema().attrs().iter().map(|a| a.name.clone()).collect();
        if names != self.feature_names {
            return Err(Error::SchemaMismatch(
                "attack features differ between training and scoring tables".into(),
            ));
        }
        Ok(self
            .forest
            .predict(&features)?
            .into_iter()
            .map(|c| self.labels[c as usize])
            .collect())
    }

    /// Draw one random-guess zip from the training frequencies.
    fn guess(&self, rng: &mut StreamRng) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (c, &p) in self.label_freq.iter().enumerate() {
            acc += p;
            if u < acc {
                return self.labels[c];
            }
        }
        *self.labels.last().expect("non-empty label set")
    }
}

/// Score a trained model on the true survey.
pub fn evaluate_attack(
    model: &AttackModel,
    true_survey: &MicroTable,
    stratum_code: u32,
    rng: &StreamRng,
) -> Result<StratumAttack> {
    let truth = stratum_zips(true_survey, stratum_code)?;
    let predicted = model.predict(true_survey, stratum_code)?;
    debug_assert_eq!(truth.len(), predicted.len());
    let n = truth.len();
    let hits = predicted.iter().zip(&truth).filter(|(a, b)| a == b).count();

    let mut guess_rng = rng.child(&format!("guess/{}", model.stratum));
    let guess_hits = truth
        .iter()
        .filter(|&&z| model.guess(&mut guess_rng) == z)
        .count();

    Ok(StratumAttack {
        stratum: model.stratum.clone(),
        n_eval: n,
        zip_cardinality: model.labels.len(),
        model_accuracy: hits as f64 / n as f64,
        guess_accuracy: guess_hits as f64 / n as f64,
        degenerate: false,
    })
}

/// Train and evaluate the attack for every stratum of the perturbed survey.
/// Single-zip strata are scored by their constant prediction and flagged.
pub fn attack_all_strata(
    perturbed: &MicroTable,
    true_survey: &MicroTable,
    params: &ForestParams,
    rng: &StreamRng,
) -> Result<Vec<StratumAttack>> {
    let schema = perturbed.schema();
    let stratum_idx = schema.require_role(GeoRole::Stratum)?;
    let mut out = Vec::new();
    for (&stratum_code, _) in &perturbed.group_by_class(stratum_idx)? {
        match train_attack(perturbed, stratum_code, params, rng) {
            Ok(model) => out.push(evaluate_attack(&model, true_survey, stratum_code, rng)?),
            Err(Error::DegenerateStratum(_)) => {
                let label = schema.attr(stratum_idx).classes[stratum_code as usize].clone();
                let constant = stratum_zips(perturbed, stratum_code)?[0];
                let truth = stratum_zips(true_survey, stratum_code)?;
                let n = truth.len();
                let hits = truth.iter().filter(|&&z| z == constant).count();
                let acc = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
                out.push(StratumAttack {
                    stratum: label,
                    n_eval: n,
                    zip_cardinality: 1,
                    model_accuracy: acc,
                    guess_accuracy: acc,
                    degenerate: true,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Replace the survey's zip column with per-row predictions.
pub fn with_predicted_zips(survey: &MicroTable, predicted: &[u32]) -> Result<MicroTable> {
    let schema = survey.schema();
    let zip_idx = schema.require_role(GeoRole::ZipCode)?;
    if predicted.len() != survey.n_rows() {
        return Err(Error::SchemaMismatch(format!(
            "{} predictions for {} rows",
            predicted.len(),
            survey.n_rows()
        )));
    }
    let mut columns: Vec<Column> = (0..survey.n_cols())
        .map(|c| survey.column(c).clone())
        .collect();
    columns[zip_idx] = Column::Categorical(predicted.to_vec());
    MicroTable::new(
        std::sync::Arc::clone(schema),
        columns,
        survey.provenance(),
    )
}

/// The "re-identified" uniqueness curve: train the attack on the synthetic
/// survey, predict zips for the true survey, attach them, and measure
/// population uniqueness of the result.
pub fn reidentified_uniqueness(
    synthetic: &MicroTable,
    true_survey: &MicroTable,
    population: &MicroTable,
    attrs: &[String],
    params: &ForestParams,
    rng: &StreamRng,
) -> Result<UniquenessCurve> {
    let schema = true_survey.schema();
    let stratum_idx = schema.require_role(GeoRole::Stratum)?;
    let strata_codes = true_survey.categorical(stratum_idx)?.to_vec();

    let mut predicted: Vec<Option<u32>> = vec![None; true_survey.n_rows()];
    for (&stratum_code, rows) in &true_survey.group_by_class(stratum_idx)? {
        match train_attack(synthetic, stratum_code, params, rng) {
            Ok(model) => {
                let preds = model.predict(true_survey, stratum_code)?;
                for (slot, pred) in rows.iter().zip(preds) {
                    predicted[*slot] = Some(pred);
                }
            }
            Err(Error::DegenerateStratum(_)) => {
                let constant = stratum_zips(synthetic, stratum_code)?.first().copied();
                let constant = constant.ok_or_else(|| {
                    Error::DegenerateStratum(format!(
                        "stratum {:?} absent from the synthetic survey",
                        schema.attr(stratum_idx).classes[stratum_code as usize]
                    ))
                })?;
                for &slot in rows {
                    predicted[slot] = Some(constant);
                }
            }
            Err(e) => return Err(e),
        }
    }
    debug_assert!(strata_codes.len() == predicted.len());
    let predicted: Vec<u32> = predicted
        .into_iter()
        .map(|p| p.expect("every row's stratum was visited"))
        .collect();
    let reidentified = with_predicted_zips(true_survey, &predicted)?;
    population_uniqueness(&reidentified, population, attrs)
}
