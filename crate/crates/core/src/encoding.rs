//! Categorical ↔ continuous encoding.
//!
//! The synthesizer operates on all-continuous tables, so categorical
//! attributes are transformed to numbers and back:
//!
//! * **frequency** (default): each observed class gets an interval of `[0, 1)`
//!   whose width is its observed proportion, intervals ordered by descending
//!   proportion (ties broken by schema class order); the class is represented
//!   by its interval midpoint. Decoding maps a value to the class whose
//!   interval contains it, clamping below 0 to the first class and at/above 1
//!   to the last.
//! * **ordinal**: a class's rank is its position in the schema class order;
//!   decoding rounds to the nearest rank, clamped to the declared range.
//! * **one-hot**: one indicator column per declared class; decoding takes the
//!   arg-max (ties to the lowest class index).
//!
//! Classes declared in the schema but never observed receive no frequency
//! interval — they can never be synthesized under midpoint sampling — and are
//! logged as a warning at fit time.
//!
//! Continuous attributes pass through unencoded, with one exception on the
//! way back: a column whose observed training values were all whole numbers
//! is treated as a count and decoded by rounding, so synthesized counts stay
//! integer-valued (and sum constraints can hold exactly).

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::schema::{AttrKind, Schema};
use crate::table::{CellValue, MicroTable, Provenance, TableBuilder};

/// Encoding scheme for categorical attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingScheme {
    /// Proportion-width intervals on `[0, 1)` (the default).
    Frequency,
    /// Schema-order integer ranks.
    Ordinal,
    /// One indicator column per class.
    OneHot,
}

/// One frequency-encoding interval: class `class` owns `[lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
struct FreqInterval {
    class: u32,
    lo: f64,
    hi: f64,
}

impl FreqInterval {
    fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Per-attribute codebook.
#[derive(Debug, Clone, PartialEq)]
enum Codebook {
    Frequency {
        /// Intervals in descending-width order (contiguous, starting at 0).
        intervals: Vec<FreqInterval>,
        /// class index → interval position, `None` for unobserved classes.
        by_class: Vec<Option<usize>>,
    },
    Ordinal {
        n_classes: u32,
    },
    OneHot {
        n_classes: u32,
    },
}

/// What one encoded column holds.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnPart {
    /// A continuous source column, passed through.
    Passthrough,
    /// A frequency- or ordinal-encoded categorical column.
    Encoded,
    /// One indicator of a one-hot block (the class index it flags).
    OneHot(u32),
}

/// Metadata for one column of an [`EncodedTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedColumn {
    /// Index of the source attribute in the source schema.
    pub attr_index: usize,
    /// Column name: the attribute name, or `attr=class` for one-hot parts.
    pub name: String,
    /// What the column holds.
    pub part: ColumnPart,
}

/// An all-continuous view of a table. Absent continuous cells are `NaN`.
#[derive(Debug, Clone)]
pub struct EncodedTable {
    /// Column metadata, in output order.
    pub columns: Vec<EncodedColumn>,
    /// Column-major values; `values[c][r]`.
    pub values: Vec<Vec<f64>>,
    /// Number of rows.
    pub n_rows: usize,
}

impl EncodedTable {
    /// Number of encoded columns (`|P| + |Q|`, or `|P| + Σ classes` with
    /// one-hot blocks).
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// Index of the encoded column for source attribute `attr_index`
    /// (first part for one-hot blocks).
    pub fn column_of_attr(&self, attr_index: usize) -> Option<usize> {
        self.columns.iter().position(|c| c.attr_index == attr_index)
    }
}

/// Fitted encoder: per-attribute codebooks over a schema.
#[derive(Debug, Clone)]
pub struct Encoder {
    schema: Arc<Schema>,
    scheme: EncodingScheme,
    codebooks: Vec<Option<Codebook>>,
    /// Continuous attributes whose observed training values were all whole
    /// numbers (counts); decoding rounds them back to integers.
    integer_valued: Vec<bool>,
}

impl Encoder {
    /// Fit codebooks on the observed data with one scheme for every
    /// categorical attribute.
    pub fn fit(table: &MicroTable, scheme: EncodingScheme) -> Result<Self> {
        Self::fit_with(table, scheme, &[])
    }

    /// Fit codebooks, overriding the scheme for the named attributes (used to
    /// keep the conditioning cluster column frequency-encoded regardless of
    /// the study's scheme axis).
    pub fn fit_with(
        table: &MicroTable,
        scheme: EncodingScheme,
        overrides: &[(&str, EncodingScheme)],
    ) -> Result<Self> {
        let schema = Arc::clone(table.schema());
        if table.n_rows() == 0 {
            return Err(Error::EmptyColumn(
                "cannot fit an encoder on an empty table".into(),
            ));
        }
        let mut codebooks = Vec::with_capacity(schema.len());
        let mut integer_valued = vec![false; schema.len()];
        for (idx, attr) in schema.attrs().iter().enumerate() {
            if attr.kind == AttrKind::Continuous {
                // Count-like columns (every observed value a whole number)
                // are decoded back to integers so synthesis preserves the
                // column's arithmetic type.
                let mut observed_any = false;
                let all_integral = table.continuous(idx)?.iter().flatten().all(|&v| {
                    observed_any = true;
                    v.fract() == 0.0
                });
                integer_valued[idx] = observed_any && all_integral;
                codebooks.push(None);
                continue;
            }
            let attr_scheme = overrides
                .iter()
                .find(|(n, _)| *n == attr.name)
                .map(|(_, s)| *s)
                .unwrap_or(scheme);
            let k = attr.classes.len() as u32;
            let book = match attr_scheme {
                EncodingScheme::Ordinal => Codebook::Ordinal { n_classes: k },
                EncodingScheme::OneHot => Codebook::OneHot { n_classes: k },
                EncodingScheme::Frequency => {
                    let codes = table.categorical(idx)?;
                    let mut counts = vec![0usize; k as usize];
                    for &c in codes {
                        counts[c as usize] += 1;
                    }
                    let observed: Vec<u32> = (0..k).filter(|&c| counts[c as usize] > 0).collect();
                    if observed.is_empty() {
                        return Err(Error::EmptyColumn(attr.name.clone()));
                    }
                    let unobserved = k as usize - observed.len();
                    if unobserved > 0 {
                        log::warn!(
                            "attribute {:?}: {unobserved} declared class(es) unobserved; \
                             they receive no frequency interval and cannot be synthesized",
                            attr.name
                        );
                    }
                    // Descending proportion, ties by schema class order.
                    let mut order = observed;
                    order.sort_by(|&a, &b| {
                        counts[b as usize]
                            .cmp(&counts[a as usize])
                            .then(a.cmp(&b))
                    });
                    let n = codes.len() as f64;
                    let mut intervals = Vec::with_capacity(order.len());
                    let mut lo = 0.0;
                    for (pos, &class) in order.iter().enumerate() {
                        let hi = if pos + 1 == order.len() {
                            1.0
                        } else {
                            lo + counts[class as usize] as f64 / n
                        };
                        intervals.push(FreqInterval { class, lo, hi });
                        lo = hi;
                    }
                    let mut by_class = vec![None; k as usize];
                    for (pos, iv) in intervals.iter().enumerate() {
                        by_class[iv.class as usize] = Some(pos);
                    }
                    Codebook::Frequency {
                        intervals,
                        by_class,
                    }
                }
            };
            codebooks.push(Some(book));
        }
        Ok(Encoder {
            schema,
            scheme,
            codebooks,
            integer_valued,
        })
    }

    /// Whether a continuous attribute's training column was integer-valued
    /// (decoding rounds such columns).
    pub fn integer_valued(&self, attr_index: usize) -> bool {
        self.integer_valued[attr_index]
    }

    /// The schema the encoder was fitted on.
    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    /// The default scheme the encoder was fitted with.
    pub fn scheme(&self) -> EncodingScheme {
        self.scheme
    }

    /// Number of encoded columns attribute `attr_index` produces (1, or the
    /// class count for a one-hot block).
    pub fn encoded_width(&self, attr_index: usize) -> usize {
        match &self.codebooks[attr_index] {
            Some(Codebook::OneHot { n_classes }) => *n_classes as usize,
            _ => 1,
        }
    }

    /// Encode a single categorical cell. Strict: unobserved classes under
    /// frequency encoding are an error.
    pub fn encode_class(&self, attr_index: usize, class: u32) -> Result<f64> {
        match self.codebooks[attr_index]
            .as_ref()
            .expect("categorical attribute has a codebook")
        {
            Codebook::Frequency { intervals, by_class } => by_class[class as usize]
                .map(|pos| intervals[pos].midpoint())
                .ok_or_else(|| Error::UnknownClass {
                    attr: self.schema.attr(attr_index).name.clone(),
                    class: self.schema.attr(attr_index).classes[class as usize].clone(),
                }),
            Codebook::Ordinal { .. } => Ok(class as f64),
            Codebook::OneHot { .. } => Err(Error::SpecInvalid(
                "one-hot attributes encode to a block, not a scalar".into(),
            )),
        }
    }

    /// Encode a categorical cell, mapping classes without a frequency
    /// interval to the missing class's midpoint when available, else to 0.5.
    /// Used when applying a codebook fitted on one table to another (e.g.
    /// scoring the attack model on the true survey).
    fn encode_class_lenient(&self, attr_index: usize, class: u32) -> f64 {
        match self.codebooks[attr_index]
            .as_ref()
            .expect("categorical attribute has a codebook")
        {
            Codebook::Frequency { intervals, by_class } => {
                if let Some(pos) = by_class[class as usize] {
                    return intervals[pos].midpoint();
                }
                let fallback = self.schema.attr(attr_index).missing_index();
                if let Some(pos) = fallback.and_then(|m| by_class[m as usize]) {
                    intervals[pos].midpoint()
                } else {
                    0.5
                }
            }
            Codebook::Ordinal { .. } => class as f64,
            Codebook::OneHot { .. } => unreachable!("one-hot handled block-wise"),
        }
    }

    /// Decode an encoded scalar back to a class index (total via clamping).
    pub fn decode_value(&self, attr_index: usize, value: f64) -> u32 {
        match self.codebooks[attr_index]
            .as_ref()
            .expect("categorical attribute has a codebook")
        {
            Codebook::Frequency { intervals, .. } => {
                if value < 0.0 {
                    return intervals.first().expect("non-empty codebook").class;
                }
                if value >= 1.0 {
                    return intervals.last().expect("non-empty codebook").class;
                }
                let pos = intervals.partition_point(|iv| iv.hi <= value);
                intervals[pos.min(intervals.len() - 1)].class
            }
            Codebook::Ordinal { n_classes } => (value.round().max(0.0) as u32).min(n_classes - 1),
            Codebook::OneHot { .. } => unreachable!("one-hot handled block-wise"),
        }
    }

    /// Transform a table into its all-continuous encoded form (strict).
    pub fn transform(&self, table: &MicroTable) -> Result<EncodedTable> {
        self.transform_impl(table, false)
    }

    /// Transform with lenient handling of unobserved classes (see
    /// [`Encoder::encode_class_lenient`]).
    pub fn transform_lenient(&self, table: &MicroTable) -> Result<EncodedTable> {
        self.transform_impl(table, true)
    }

    fn transform_impl(&self, table: &MicroTable, lenient: bool) -> Result<EncodedTable> {
        if !Arc::ptr_eq(table.schema(), &self.schema) && table.schema().len() != self.schema.len()
        {
            return Err(Error::SchemaMismatch(
                "table schema does not match the encoder's schema".into(),
            ));
        }
        let n = table.n_rows();
        let mut columns = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for (idx, attr) in self.schema.attrs().iter().enumerate() {
            match &self.codebooks[idx] {
                None => {
                    let src = table.continuous(idx)?;
                    columns.push(EncodedColumn {
                        attr_index: idx,
                        name: attr.name.clone(),
                        part: ColumnPart::Passthrough,
                    });
                    values.push(src.iter().map(|v| v.unwrap_or(f64::NAN)).collect());
                }
                Some(Codebook::OneHot { n_classes }) => {
                    let codes = table.categorical(idx)?;
                    for class in 0..*n_classes {
                        columns.push(EncodedColumn {
                            attr_index: idx,
                            name: format!("{}={}", attr.name, attr.classes[class as usize]),
                            part: ColumnPart::OneHot(class),
                        });
                        values.push(
                            codes
                                .iter()
                                .map(|&c| if c == class { 1.0 } else { 0.0 })
                                .collect(),
                        );
                    }
                }
                Some(_) => {
                    let codes = table.categorical(idx)?;
                    let mut out = Vec::with_capacity(n);
                    for &c in codes {
                        let v = if lenient {
                            self.encode_class_lenient(idx, c)
                        } else {
                            self.encode_class(idx, c)?
                        };
                        out.push(v);
                    }
                    columns.push(EncodedColumn {
                        attr_index: idx,
                        name: attr.name.clone(),
                        part: ColumnPart::Encoded,
                    });
                    values.push(out);
                }
            }
        }
        Ok(EncodedTable {
            columns,
            values,
            n_rows: n,
        })
    }

    /// Back-transform an encoded table to a [`MicroTable`]. Total: encoded
    /// categorical values are clamped into the codebook, continuous
    /// passthrough values are clamped into the attribute bounds, `NaN`
    /// becomes an absent cell.
    pub fn back_transform(&self, table: &EncodedTable, provenance: Provenance) -> Result<MicroTable> {
        for v in table.values.iter().flatten() {
            if v.is_infinite() {
                return Err(Error::NumericalFailure(
                    "non-finite encoded value in back-transform".into(),
                ));
            }
        }
        let mut builder = TableBuilder::new(Arc::clone(&self.schema));
        let mut row_cells: Vec<CellValue> = Vec::with_capacity(self.schema.len());
        for row in 0..table.n_rows {
            row_cells.clear();
            let mut col = 0usize;
            for (idx, attr) in self.schema.attrs().iter().enumerate() {
                match &self.codebooks[idx] {
                    None => {
                        let v = table.values[col][row];
                        col += 1;
                        if v.is_nan() {
                            row_cells.push(CellValue::Absent);
                        } else {
                            let v = if self.integer_valued[idx] { v.round() } else { v };
                            let v = match attr.bounds {
                                Some([lo, hi]) => v.clamp(lo, hi),
                                None => v,
                            };
                            row_cells.push(CellValue::Num(v));
                        }
                    }
                    Some(Codebook::OneHot { n_classes }) => {
                        let mut best = 0u32;
                        let mut best_v = f64::NEG_INFINITY;
                        for class in 0..*n_classes {
                            let v = table.values[col + class as usize][row];
                            if v > best_v {
                                best_v = v;
                                best = class;
                            }
                        }
                        col += *n_classes as usize;
                        row_cells.push(CellValue::Class(best));
                    }
                    Some(_) => {
                        let v = table.values[col][row];
                        col += 1;
                        row_cells.push(CellValue::Class(self.decode_value(idx, v)));
                    }
                }
            }
            builder.push_row(&row_cells)?;
        }
        builder.finish(provenance)
    }

    /// Serialize the codebooks (for audit / reuse across replicates).
    pub fn to_json(&self) -> Value {
        let mut books = BTreeMap::new();
        for (idx, book) in self.codebooks.iter().enumerate() {
            let Some(book) = book else { continue };
            let name = &self.schema.attr(idx).name;
            let value = match book {
                Codebook::Frequency { intervals, .. } => json!({
                    "scheme": "frequency",
                    "intervals": intervals.iter().map(|iv| json!({
                        "class": self.schema.attr(idx).classes[iv.class as usize],
                        "lo": iv.lo,
                        "hi": iv.hi,
                    })).collect::<Vec<_>>(),
                }),
                Codebook::Ordinal { n_classes } => {
                    json!({"scheme": "ordinal", "n_classes": n_classes})
                }
                Codebook::OneHot { n_classes } => {
                    json!({"scheme": "onehot", "n_classes": n_classes})
                }
            };
            books.insert(name.clone(), value);
        }
        let integers: Vec<&str> = self
            .integer_valued
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f)
            .map(|(idx, _)| self.schema.attr(idx).name.as_str())
            .collect();
        json!({"codebooks": books, "integer_valued": integers})
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::AttributeSpec;
    use approx::assert_abs_diff_eq;

    /// 10 rows: A×5, B×3, C×2 plus one continuous column.
    fn toy() -> MicroTable {
        let schema = Arc::new(
            Schema::new(vec![
                AttributeSpec::categorical("abc", &["A", "B", "C"]),
                AttributeSpec::continuous("x", None),
            ])
            .unwrap(),
        );
        let mut b = TableBuilder::new(Arc::clone(&schema));
        let pattern = [0u32, 0, 0, 0, 0, 1, 1, 1, 2, 2];
        for (i, &c) in pattern.iter().enumerate() {
            b.push_row(&[CellValue::Class(c), CellValue::Num(i as f64)]).unwrap();
        }
        b.finish(Provenance::True).unwrap()
    }

    #[test]
    fn frequency_intervals_match_worked_example() {
        // A:50%, B:30%, C:20% → A=[0,0.5), B=[0.5,0.8), C=[0.8,1.0];
        // midpoints 0.25, 0.65, 0.9.
        let enc = Encoder::fit(&toy(), EncodingScheme::Frequency).unwrap();
        assert_abs_diff_eq!(enc.encode_class(0, 0).unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(enc.encode_class(0, 1).unwrap(), 0.65, epsilon = 1e-12);
        assert_abs_diff_eq!(enc.encode_class(0, 2).unwrap(), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn frequency_decode_by_interval_with_clamping() {
        let enc = Encoder::fit(&toy(), EncodingScheme::Frequency).unwrap();
        assert_eq!(enc.decode_value(0, 0.6), 1); // "B"
        assert_eq!(enc.decode_value(0, -0.2), 0); // clamped to "A"
        assert_eq!(enc.decode_value(0, 1.7), 2); // clamped to "C"
        assert_eq!(enc.decode_value(0, 0.0), 0);
        assert_eq!(enc.decode_value(0, 0.8), 2);
    }

    #[test]
    fn single_class_column_gets_unit_interval() {
        let schema = Arc::new(
            Schema::new(vec![AttributeSpec::categorical("only", &["solo"])]).unwrap(),
        );
        let mut b = TableBuilder::new(Arc::clone(&schema));
        for _ in 0..4 {
            b.push_row(&[CellValue::Class(0)]).unwrap();
        }
        let t = b.finish(Provenance::True).unwrap();
        let enc = Encoder::fit(&t, EncodingScheme::Frequency).unwrap();
        assert_abs_diff_eq!(enc.encode_class(0, 0).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(enc.decode_value(0, 0.99), 0);
    }

    #[test]
    fn exact_tie_broken_by_schema_order() {
        let schema = Arc::new(
            Schema::new(vec![AttributeSpec::categorical("t", &["later", "earlier"])]).unwrap(),
        );
        let mut b = TableBuilder::new(Arc::clone(&schema));
        for c in [0u32, 1, 0, 1] {
            b.push_row(&[CellValue::Class(c)]).unwrap();
        }
        let t = b.finish(Provenance::True).unwrap();
        let enc = Encoder::fit(&t, EncodingScheme::Frequency).unwrap();
        // 50/50 tie → schema order: "later" (index 0) takes [0, 0.5).
        assert_abs_diff_eq!(enc.encode_class(0, 0).unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(enc.encode_class(0, 1).unwrap(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn interval_widths_sum_to_one_and_are_non_increasing() {
        let enc = Encoder::fit(&toy(), EncodingScheme::Frequency).unwrap();
        let Some(Codebook::Frequency { intervals, .. }) = &enc.codebooks[0] else {
            panic!("frequency codebook expected");
        };
        let total: f64 = intervals.iter().map(|iv| iv.hi - iv.lo).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        for w in intervals.windows(2) {
            assert!(w[0].hi - w[0].lo >= w[1].hi - w[1].lo - 1e-12);
        }
    }

    #[test]
    fn roundtrip_identity_all_schemes() {
        let t = toy();
        for scheme in [
            EncodingScheme::Frequency,
            EncodingScheme::Ordinal,
            EncodingScheme::OneHot,
        ] {
            let enc = Encoder::fit(&t, scheme).unwrap();
            let encoded = enc.transform(&t).unwrap();
            let back = enc.back_transform(&encoded, Provenance::True).unwrap();
            assert_eq!(back.categorical(0).unwrap(), t.categorical(0).unwrap());
            assert_eq!(back.continuous(1).unwrap(), t.continuous(1).unwrap());
        }
    }

    #[test]
    fn onehot_width_is_class_count() {
        let t = toy();
        let enc = Encoder::fit(&t, EncodingScheme::OneHot).unwrap();
        let encoded = enc.transform(&t).unwrap();
        assert_eq!(encoded.n_cols(), 3 + 1);
        let enc_f = Encoder::fit(&t, EncodingScheme::Frequency).unwrap();
        assert_eq!(enc_f.transform(&t).unwrap().n_cols(), 2);
    }

    #[test]
    fn ordinal_decode_rounds_and_clamps() {
        let t = toy();
        let enc = Encoder::fit(&t, EncodingScheme::Ordinal).unwrap();
        assert_eq!(enc.decode_value(0, 1.4), 1);
        assert_eq!(enc.decode_value(0, 1.6), 2);
        assert_eq!(enc.decode_value(0, -3.0), 0);
        assert_eq!(enc.decode_value(0, 9.0), 2);
    }

    #[test]
    fn unobserved_class_strict_vs_lenient() {
        let schema = Arc::new(
            Schema::new(vec![AttributeSpec::categorical(
                "c",
                &["seen", "unseen", "(missing)"],
            )
            .with_missing("(missing)")])
            .unwrap(),
        );
        let mut b = TableBuilder::new(Arc::clone(&schema));
        for c in [0u32, 0, 2] {
            b.push_row(&[CellValue::Class(c)]).unwrap();
        }
        let t = b.finish(Provenance::True).unwrap();
        let enc = Encoder::fit(&t, EncodingScheme::Frequency).unwrap();
        assert!(matches!(
            enc.encode_class(0, 1),
            Err(Error::UnknownClass { .. })
        ));
        // Lenient: falls back to the missing class's midpoint.
        let missing_mid = enc.encode_class(0, 2).unwrap();
        assert_abs_diff_eq!(enc.encode_class_lenient(0, 1), missing_mid, epsilon = 1e-12);
    }

    #[test]
    fn distribution_preserved_under_uniform_draws() {
        use rand::Rng;
        let t = toy();
        let enc = Encoder::fit(&t, EncodingScheme::Frequency).unwrap();
        let mut rng = crate::rng::StreamRng::derived(3, "encoding/unif");
        let n = 30_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[enc.decode_value(0, rng.random::<f64>()) as usize] += 1;
        }
        // 3σ multinomial bounds around (0.5, 0.3, 0.2).
        for (observed, p) in counts.iter().zip([0.5, 0.3, 0.2]) {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                ((*observed as f64) - n as f64 * p).abs() < 3.0 * sigma,
                "class count {observed} too far from {}",
                n as f64 * p
            );
        }
    }

    #[test]
    fn scheme_override_pins_one_column() {
        let t = toy();
        let enc = Encoder::fit_with(&t, EncodingScheme::OneHot, &[("abc", EncodingScheme::Frequency)])
            .unwrap();
        let encoded = enc.transform(&t).unwrap();
        // abc stays a single frequency column despite the one-hot default.
        assert_eq!(encoded.n_cols(), 2);
        assert_abs_diff_eq!(encoded.values[0][0], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn codebook_json_lists_intervals() {
        let enc = Encoder::fit(&toy(), EncodingScheme::Frequency).unwrap();
        let v = enc.to_json();
        let intervals = v["codebooks"]["abc"]["intervals"].as_array().unwrap();
        assert_eq!(intervals.len(), 3);
        assert_eq!(intervals[0]["class"], "A");
    }
}
