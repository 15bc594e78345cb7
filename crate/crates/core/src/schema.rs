//! Schema: per-attribute metadata shared by every table in a study.
//!
//! A [`Schema`] is an ordered list of [`AttributeSpec`]s. Each attribute is
//! continuous (optionally bounded) or categorical (with a closed class-label
//! set). Categorical non-response is a first-class label declared in the
//! schema (`missing_class`), so "missing" survives encoding, synthesis, and
//! evaluation like any other class; missing continuous values are simply
//! absent cells.
//!
//! Columns that play a structural role in the survey design (stratum, cluster,
//! zip code, admin area, household, weight) are tagged with a [`GeoRole`];
//! at most one column per role. Analysis stages use the roles to decide what
//! is an analytic attribute and what is design plumbing.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Structural role of a column in the survey design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoRole {
    /// Sampling-design stratum (first-stage selection is independent per stratum).
    Stratum,
    /// Primary sampling unit (cluster) identifier.
    Cluster,
    /// Small-area identifier published with the data; the target of masking.
    ZipCode,
    /// Administrative area that displacement must stay inside.
    AdminArea,
    /// Household identifier (second-stage unit).
    Household,
    /// Sampling weight.
    Weight,
}

impl GeoRole {
    /// All roles, in a fixed order.
    pub const ALL: [GeoRole; 6] = [
        GeoRole::Stratum,
        GeoRole::Cluster,
        GeoRole::ZipCode,
        GeoRole::AdminArea,
        GeoRole::Household,
        GeoRole::Weight,
    ];
}

/// Whether an attribute is continuous or categorical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    Continuous,
    Categorical,
}

/// Metadata for one column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeSpec {
    /// Column name (unique within a schema).
    pub name: String,
    /// Continuous or categorical.
    pub kind: AttrKind,
    /// Closed class-label set (categorical only). Order is the schema order
    /// used for ordinal encoding and tie-breaking.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    /// Censoring interval `[lo, hi]` (continuous only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
    /// Structural role, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo_role: Option<GeoRole>,
    /// The class label that represents non-response (categorical only).
    /// Empty CSV cells load as this label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_class: Option<String>,
}

impl AttributeSpec {
    /// A continuous attribute with optional bounds.
    pub fn continuous(name: &str, bounds: Option<[f64; 2]>) -> Self {
        AttributeSpec {
            name: name.to_string(),
            kind: AttrKind::Continuous,
            classes: Vec::new(),
            bounds,
            geo_role: None,
            missing_class: None,
        }
    }

    /// A categorical attribute over the given labels.
    pub fn categorical<S: AsRef<str>>(name: &str, classes: &[S]) -> Self {
        AttributeSpec {
            name: name.to_string(),
            kind: AttrKind::Categorical,
            classes: classes.iter().map(|c| c.as_ref().to_string()).collect(),
            bounds: None,
            geo_role: None,
            missing_class: None,
        }
    }

    /// Same attribute with a structural role attached.
    pub fn with_role(mut self, role: GeoRole) -> Self {
        self.geo_role = Some(role);
        self
    }

    /// Same attribute with a missing/non-response label (must be a declared class).
    pub fn with_missing(mut self, label: &str) -> Self {
        self.missing_class = Some(label.to_string());
        self
    }

    /// Index of `label` in this attribute's class list.
    pub fn class_index(&self, label: &str) -> Option<u32> {
        self.classes.iter().position(|c| c == label).map(|i| i as u32)
    }

    /// Index of the missing class, when declared.
    pub fn missing_index(&self) -> Option<u32> {
        self.missing_class.as_deref().and_then(|m| self.class_index(m))
    }
}

/// Ordered attribute list plus derived lookup maps.
#[derive(Debug, Clone, Serialize)]
#[serde(into = "SchemaJson")]
pub struct Schema {
    attributes: Vec<AttributeSpec>,
    by_name: BTreeMap<String, usize>,
    by_role: BTreeMap<GeoRole, usize>,
}

/// On-disk form: `{"attributes": [...]}`.
#[derive(Serialize, Deserialize)]
struct SchemaJson {
    attributes: Vec<AttributeSpec>,
}

impl From<Schema> for SchemaJson {
    fn from(s: Schema) -> Self {
        SchemaJson {
            attributes: s.attributes,
        }
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let raw = SchemaJson::deserialize(deserializer)?;
        Schema::new(raw.attributes).map_err(serde::de::Error::custom)
    }
}

impl Schema {
    /// Validate and index an attribute list.
    pub fn new(attributes: Vec<AttributeSpec>) -> Result<Self> {
        let mut by_name = BTreeMap::new();
        let mut by_role = BTreeMap::new();
        for (i, a) in attributes.iter().enumerate() {
            if by_name.insert(a.name.clone(), i).is_some() {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate attribute name {:?}",
                    a.name
                )));
            }
            match a.kind {
                AttrKind::Categorical => {
                    if a.classes.is_empty() {
                        return Err(Error::SchemaMismatch(format!(
                            "categorical attribute {:?} declares no classes",
                            a.name
                        )));
                    }
                    let mut seen = std::collections::BTreeSet::new();
                    for c in &a.classes {
                        if !seen.insert(c) {
                            return Err(Error::SchemaMismatch(format!(
                                "attribute {:?} declares class {:?} twice",
                                a.name, c
                            )));
                        }
                    }
                    if a.bounds.is_some() {
                        return Err(Error::SchemaMismatch(format!(
                            "categorical attribute {:?} cannot carry bounds",
                            a.name
                        )));
                    }
                    if let Some(m) = &a.missing_class {
                        if a.class_index(m).is_none() {
                            return Err(Error::SchemaMismatch(format!(
                                "attribute {:?}: missing class {:?} not among declared classes",
                                a.name, m
                            )));
                        }
                    }
                }
                AttrKind::Continuous => {
                    if !a.classes.is_empty() {
                        return Err(Error::SchemaMismatch(format!(
                            "continuous attribute {:?} cannot declare classes",
                            a.name
                        )));
                    }
                    if a.missing_class.is_some() {
                        return Err(Error::SchemaMismatch(format!(
                            "continuous attribute {:?} cannot declare a missing class",
                            a.name
                        )));
                    }
                    if let Some([lo, hi]) = a.bounds {
                        if !(lo <= hi) {
                            return Err(Error::SchemaMismatch(format!(
                                "attribute {:?}: bounds [{lo}, {hi}] out of order",
                                a.name
                            )));
                        }
                    }
                }
            }
            if let Some(role) = a.geo_role {
                if role == GeoRole::Weight && a.kind != AttrKind::Continuous {
                    return Err(Error::SchemaMismatch(format!(
                        "weight column {:?} must be continuous",
                        a.name
                    )));
                }
                if role != GeoRole::Weight && a.kind != AttrKind::Categorical {
                    return Err(Error::SchemaMismatch(format!(
                        "column {:?} with role {role:?} must be categorical",
                        a.name
                    )));
                }
                if by_role.insert(role, i).is_some() {
                    return Err(Error::SchemaMismatch(format!(
                        "two columns declare role {role:?}"
                    )));
                }
            }
        }
        Ok(Schema {
            attributes,
            by_name,
            by_role,
        })
    }

    /// Number of attributes.
    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    /// True when the schema has no attributes.
    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    /// Attribute at position `idx`.
    pub fn attr(&self, idx: usize) -> &AttributeSpec {
        &self.attributes[idx]
    }

    /// All attributes in order.
    pub fn attrs(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    /// Position of the attribute named `name`.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Like [`Schema::index_of`] but with a schema-mismatch error.
    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::SchemaMismatch(format!("unknown attribute {name:?}")))
    }

    /// Column index carrying `role`, if declared.
    pub fn role_index(&self, role: GeoRole) -> Option<usize> {
        self.by_role.get(&role).copied()
    }

    /// Like [`Schema::role_index`] but with a schema-mismatch error.
    pub fn require_role(&self, role: GeoRole) -> Result<usize> {
        self.role_index(role)
            .ok_or_else(|| Error::SchemaMismatch(format!("no column declares role {role:?}")))
    }

    /// Indices of attributes with no structural role, in schema order.
    /// These are the analytic attributes that metrics run over.
    pub fn non_geo_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.attributes[i].geo_role.is_none())
            .collect()
    }

    /// Build a new schema keeping `indices` in the given order.
    pub fn project(&self, indices: &[usize]) -> Result<Arc<Schema>> {
        let attrs = indices.iter().map(|&i| self.attributes[i].clone()).collect();
        Ok(Arc::new(Schema::new(attrs)?))
    }

    /// Read a JSON schema sidecar.
    pub fn from_json_file(path: &Path) -> Result<Arc<Schema>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io("read", path, e))?;
        let schema: Schema =
            serde_json::from_str(&text).map_err(|e| Error::io("parse", path, e))?;
        Ok(Arc::new(schema))
    }

    /// Write the JSON schema sidecar.
    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&SchemaJson {
            attributes: self.attributes.clone(),
        })
        .expect("schema serializes");
        std::fs::write(path, text).map_err(|e| Error::io("write", path, e))
    }
}

/// A single row-level predicate used for synthesis rejection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constraint {
    /// Continuous attribute must lie in `[lo, hi]`.
    Range {
        /// Attribute name.
        attr: String,
        /// Lower bound (inclusive).
        lo: f64,
        /// Upper bound (inclusive).
        hi: f64,
    },
    /// The `lhs` attributes must sum to the `rhs` attribute. Values are
    /// rounded to the nearest integer before comparison: the constraint
    /// expresses count arithmetic (e.g. female + male members = household
    /// size), and synthesized counts are real-valued until rounded.
    LinearSum {
        /// Attributes on the left-hand side of the sum.
        lhs: Vec<String>,
        /// Attribute the sum must equal.
        rhs: String,
    },
}

impl Constraint {
    /// Names of every attribute the constraint references.
    pub fn referenced(&self) -> Vec<&str> {
        match self {
            Constraint::Range { attr, .. } => vec![attr.as_str()],
            Constraint::LinearSum { lhs, rhs } => lhs
                .iter()
                .map(String::as_str)
                .chain(std::iter::once(rhs.as_str()))
                .collect(),
        }
    }

    /// Short label used in rejection diagnostics.
    pub fn label(&self) -> String {
        match self {
            Constraint::Range { attr, lo, hi } => format!("range({attr} in [{lo}, {hi}])"),
            Constraint::LinearSum { lhs, rhs } => {
                format!("linear_sum({} = {rhs})", lhs.join(" + "))
            }
        }
    }
}

/// An ordered list of constraints, validated against a schema.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConstraintSet {
    /// The constraints, checked in order.
    pub constraints: Vec<Constraint>,
}

impl ConstraintSet {
    /// The empty constraint set.
    pub fn empty() -> Self {
        ConstraintSet {
            constraints: Vec::new(),
        }
    }

    /// Check that every referenced attribute exists and is continuous.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        for c in &self.constraints {
            for name in c.referenced() {
                let idx = schema.require(name)?;
                if schema.attr(idx).kind != AttrKind::Continuous {
                    return Err(Error::SpecInvalid(format!(
                        "constraint {} references non-continuous attribute {name:?}",
                        c.label()
                    )));
                }
            }
            if let Constraint::Range { lo, hi, .. } = c {
                if !(lo <= hi) {
                    return Err(Error::SpecInvalid(format!(
                        "constraint {} has inverted bounds",
                        c.label()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Read from a JSON file of the form `{"constraints": [...]}`.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io("read", path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::io("parse", path, e))
    }
}
