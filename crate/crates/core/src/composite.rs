//! Composite welfare indicator: named boolean indicators derived from
//! attributes, OR-aggregated into dimensions and one overall composite.
//!
//! An identified need in any indicator makes its dimension positive, and a
//! positive dimension makes the composite positive. The derived columns can
//! be appended to a survey before synthesis (so a synthesizer reproduces
//! them *directly*), and later recomputed from the synthesized attributes;
//! [`composite_report`] compares the two routes level by level — row-level
//! agreement (Pearson ρ), distributional agreement (normalized KL of the
//! binary distribution, recomputed side as reference), and incidence.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kl::z_kl;
use crate::schema::{AttrKind, AttributeSpec, Schema};
use crate::stats::pearson;
use crate::table::{Column, MicroTable};

/// Comparison evaluated by an indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredicateOp {
    /// Categorical equality.
    Eq,
    /// Categorical inequality.
    Ne,
    /// Continuous strictly-below.
    Lt,
    /// Continuous at-or-below.
    Le,
    /// Continuous strictly-above.
    Gt,
    /// Continuous at-or-above.
    Ge,
    /// Categorical membership.
    In,
}

/// One boolean indicator over a single attribute.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorSpec {
    /// Output column name.
    pub name: String,
    /// Source attribute.
    pub attr: String,
    /// Comparison.
    pub op: PredicateOp,
    /// Threshold for `lt`/`le`/`gt`/`ge`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Class label for `eq`/`ne`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    /// Class labels for `in`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

/// A named group of indicators.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionSpec {
    /// Output column name.
    pub name: String,
    /// Indicator names the dimension ORs together.
    pub indicators: Vec<String>,
}

/// The full indicator → dimension → composite hierarchy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeSpec {
    /// Output column name of the overall composite.
    pub name: String,
    /// All indicators.
    pub indicators: Vec<IndicatorSpec>,
    /// All dimensions; together they define the composite.
    pub dimensions: Vec<DimensionSpec>,
}

/// Bundled example spec sized to the bundled population: 19 indicators in
/// 4 dimensions over the desk attributes.
const DESK_COMPOSITE_JSON: &str = include_str!("../assets/desk_composite.json");

/// Aggregation level of a reported row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// A single indicator.
    Indicator,
    /// An OR of indicators.
    Dimension,
    /// The OR of all dimensions.
    Composite,
}

impl Level {
    /// Lowercase name used in reports.
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Indicator => "indicator",
            Level::Dimension => "dimension",
            Level::Composite => "composite",
        }
    }
}

/// Agreement between directly-synthesized and recomputed values at one level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositeLevelReport {
    /// Aggregation level.
    pub level: Level,
    /// Column name.
    pub name: String,
    /// Row-level Pearson correlation, direct vs recomputed (1 when the two
    /// columns are identical, even if constant).
    pub rho: f64,
    /// Normalized KL of the binary distribution, recomputed as reference.
    pub z_kl: f64,
    /// Positive share among directly-synthesized values.
    pub incidence_direct: f64,
    /// Positive share among values recomputed from synthesized attributes.
    pub incidence_recomputed: f64,
    /// Positive share recomputed from the true survey.
    pub incidence_true: f64,
}

impl CompositeSpec {
    /// The bundled desk-scale example spec.
    pub fn desk_default() -> CompositeSpec {
        serde_json::from_str(DESK_COMPOSITE_JSON).expect("bundled composite spec parses")
    }

    /// Load a spec from a JSON file.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<CompositeSpec> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io("read", path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::io("parse", path, e))
    }

    /// Names of all derived columns: indicators, then dimensions, then the
    /// composite.
    pub fn level_names(&self) -> Vec<(Level, String)> {
        let mut names = Vec::new();
        for i in &self.indicators {
            names.push((Level::Indicator, i.name.clone()));
        }
        for d in &self.dimensions {
            names.push((Level::Dimension, d.name.clone()));
        }
        names.push((Level::Composite, self.name.clone()));
        names
    }

    /// Check internal consistency and compatibility with a schema.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.indicators.is_empty() || self.dimensions.is_empty() {
            return Err(Error::SpecInvalid(
                "composite spec needs ≥ 1 indicator and ≥ 1 dimension".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for (_, name) in self.level_names() {
            if !seen.insert(name.clone()) {
                return Err(Error::SpecInvalid(format!(
                    "duplicate derived column name {name:?}"
                )));
            }
            if schema.index_of(&name).is_some() {
                return Err(Error::SpecInvalid(format!(
                    "derived column {name:?} collides with an existing attribute"
                )));
            }
        }
        for ind in &self.indicators {
            let idx = schema.require(&ind.attr).map_err(|_| {
                Error::SpecInvalid(format!(
                    "indicator {:?} references unknown attribute {:?}",
                    ind.name, ind.attr
                ))
            })?;
            let attr = schema.attr(idx);
            match ind.op {
                PredicateOp::Eq | PredicateOp::Ne => {
                    let class = ind.class.as_deref().ok_or_else(|| {
                        Error::SpecInvalid(format!("indicator {:?} needs `class`", ind.name))
                    })?;
                    require_class(attr, &ind.name, class)?;
                }
                PredicateOp::In => {
                    let classes = ind.classes.as_deref().ok_or_else(|| {
                        Error::SpecInvalid(format!("indicator {:?} needs `classes`", ind.name))
                    })?;
                    if classes.is_empty() {
                        return Err(Error::SpecInvalid(format!(
                            "indicator {:?} has an empty class list",
                            ind.name
                        )));
                    }
                    for class in classes {
                        require_class(attr, &ind.name, class)?;
                    }
                }
                PredicateOp::Lt | PredicateOp::Le | PredicateOp::Gt | PredicateOp::Ge => {
                    if attr.kind != AttrKind::Continuous {
                        return Err(Error::SpecInvalid(format!(
                            "indicator {:?} compares the categorical attribute {:?} numerically",
                            ind.name, ind.attr
                        )));
                    }
                    if !ind.value.is_some_and(f64::is_finite) {
                        return Err(Error::SpecInvalid(format!(
                            "indicator {:?} needs a finite `value`",
                            ind.name
                        )));
                    }
                }
            }
        }
        let indicator_names: BTreeSet<&str> =
            self.indicators.iter().map(|i| i.name.as_str()).collect();
        for dim in &self.dimensions {
            if dim.indicators.is_empty() {
                return Err(Error::SpecInvalid(format!(
                    "dimension {:?} groups no indicators",
                    dim.name
                )));
            }
            for name in &dim.indicators {
                if !indicator_names.contains(name.as_str()) {
                    return Err(Error::SpecInvalid(format!(
                        "dimension {:?} references unknown indicator {name:?}",
                        dim.name
                    )));
                }
            }
        }
        Ok(())
    }
}

fn require_class(attr: &AttributeSpec, indicator: &str, class: &str) -> Result<()> {
    if attr.kind != AttrKind::Categorical {
        return Err(Error::SpecInvalid(format!(
            "indicator {indicator:?} compares the continuous attribute {:?} by class",
            attr.name
        )));
    }
    if attr.class_index(class).is_none() {
        return Err(Error::UnknownClass {
            attr: attr.name.clone(),
            class: class.to_string(),
        });
    }
    Ok(())
}

/// Evaluate one indicator per row. Absent continuous cells are `false`.
fn evaluate_indicator(table: &MicroTable, ind: &IndicatorSpec) -> Result<Vec<bool>> {
    let schema = table.schema();
    let idx = schema.require(&ind.attr)?;
    let attr = schema.attr(idx);
    Ok(match ind.op {
        PredicateOp::Eq | PredicateOp::Ne => {
            let target = attr
                .class_index(ind.class.as_deref().unwrap_or_default())
                .ok_or_else(|| Error::UnknownClass {
                    attr: attr.name.clone(),
                    class: ind.class.clone().unwrap_or_default(),
                })?;
            let want_eq = ind.op == PredicateOp::Eq;
            table
                .categorical(idx)?
                .iter()
                .map(|&c| (c == target) == want_eq)
                .collect()
        }
        PredicateOp::In => {
            let mut targets = BTreeSet::new();
            for class in ind.classes.as_deref().unwrap_or_default() {
                targets.insert(attr.class_index(class).ok_or_else(|| Error::UnknownClass {
                    attr: attr.name.clone(),
                    class: class.clone(),
                })?);
            }
            table
                .categorical(idx)?
                .iter()
                .map(|c| targets.contains(c))
                .collect()
        }
        PredicateOp::Lt | PredicateOp::Le | PredicateOp::Gt | PredicateOp::Ge => {
            let t = ind.value.unwrap_or(f64::NAN);
            let test = move |x: f64| match ind.op {
                PredicateOp::Lt => x < t,
                PredicateOp::Le => x <= t,
                PredicateOp::Gt => x > t,
                PredicateOp::Ge => x >= t,
                _ => unreachable!(),
            };
            table
                .continuous(idx)?
                .iter()
                .map(|v| v.is_some_and(test))
                .collect()
        }
    })
}

/// All level columns recomputed from the table's attributes, in
/// [`CompositeSpec::level_names`] order.
fn evaluate_levels(table: &MicroTable, spec: &CompositeSpec) -> Result<Vec<Vec<bool>>> {
    let n = table.n_rows();
    let mut indicator_cols = Vec::with_capacity(spec.indicators.len());
    for ind in &spec.indicators {
        indicator_cols.push(evaluate_indicator(table, ind)?);
    }
    let col_of: std::collections::BTreeMap<&str, usize> = spec
        .indicators
        .iter()
        .enumerate()
        .map(|(i, ind)| (ind.name.as_str(), i))
        .collect();
    let mut out = indicator_cols.clone();
    let mut composite = vec![false; n];
    for dim in &spec.dimensions {
        let mut agg = vec![false; n];
        for name in &dim.indicators {
            let col = &indicator_cols[col_of[name.as_str()]];
            for (a, &b) in agg.iter_mut().zip(col) {
                *a |= b;
            }
        }
        for (c, &a) in composite.iter_mut().zip(&agg) {
            *c |= a;
        }
        out.push(agg);
    }
    out.push(composite);
    Ok(out)
}

/// Append the derived indicator, dimension, and composite columns to a
/// table. Each derived column is categorical with classes `no`/`yes`.
pub fn compute_composite(table: &MicroTable, spec: &CompositeSpec) -> Result<MicroTable> {
    spec.validate(table.schema())?;
    let levels = evaluate_levels(table, spec)?;
    let mut attrs = table.schema().attrs().to_vec();
    let mut columns: Vec<Column> = (0..table.n_cols()).map(|c| table.column(c).clone()).collect();
    for ((_, name), values) in spec.level_names().into_iter().zip(levels) {
        attrs.push(AttributeSpec::categorical(&name, &["no", "yes"]));
        columns.push(Column::Categorical(
            values.into_iter().map(u32::from).collect(),
        ));
    }
    MicroTable::new(
        Arc::new(Schema::new(attrs)?),
        columns,
        table.provenance(),
    )
}

/// Read a derived boolean column back from a table, if present.
fn direct_column(table: &MicroTable, name: &str) -> Result<Option<Vec<bool>>> {
    let schema = table.schema();
    let Some(idx) = schema.index_of(name) else {
        return Ok(None);
    };
    let attr = schema.attr(idx);
    let yes = attr.class_index("yes").ok_or_else(|| {
        Error::SchemaMismatch(format!("column {name:?} is not a no/yes indicator"))
    })?;
    Ok(Some(
        table.categorical(idx)?.iter().map(|&c| c == yes).collect(),
    ))
}

fn incidence(values: &[bool]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().filter(|&&v| v).count() as f64 / values.len() as f64
}

/// Compare directly-synthesized level columns against levels recomputed
/// from the synthesized attributes, per level. Synthetic columns that were
/// not directly synthesized fall back to their recomputed values (scoring a
/// trivial ρ = 1 there).
pub fn composite_report(
    synthetic: &MicroTable,
    true_survey: &MicroTable,
    spec: &CompositeSpec,
) -> Result<Vec<CompositeLevelReport>> {
    if synthetic.n_rows() == 0 || true_survey.n_rows() == 0 {
        return Err(Error::InsufficientData(
            "composite report needs rows on both sides".into(),
        ));
    }
    let recomputed = evaluate_levels(synthetic, spec)?;
    let true_levels = evaluate_levels(true_survey, spec)?;
    let mut out = Vec::new();
    for (k, (level, name)) in spec.level_names().into_iter().enumerate() {
        let recomp = &recomputed[k];
        let direct = direct_column(synthetic, &name)?.unwrap_or_else(|| recomp.clone());
        let rho = if direct == *recomp {
            1.0
        } else {
            let a: Vec<f64> = direct.iter().map(|&b| f64::from(u8::from(b))).collect();
            let b: Vec<f64> = recomp.iter().map(|&b| f64::from(u8::from(b))).collect();
            pearson(&a, &b)
        };
        let counts = |v: &[bool]| {
            let yes = v.iter().filter(|&&b| b).count() as f64;
            [v.len() as f64 - yes, yes]
        };
        let z = z_kl(&counts(recomp), &counts(&direct))
            .expect("both sides verified non-empty");
        out.push(CompositeLevelReport {
            level,
            name,
            rho,
            z_kl: z,
            incidence_direct: incidence(&direct),
            incidence_recomputed: incidence(recomp),
            incidence_true: incidence(&true_levels[k]),
        });
    }
    Ok(out)
}
