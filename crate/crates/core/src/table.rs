//! `MicroTable`: an immutable, schema-tagged rectangular table of individual
//! records, stored column-major.
//!
//! Categorical cells are stored as `u32` indices into the attribute's class
//! list; continuous cells as `Option<f64>` (`None` = absent / non-response).
//! Tables round-trip through RFC-4180 CSV with a JSON schema sidecar; floats
//! are written with Rust's shortest round-trip formatting, which is the
//! canonical float format for every artifact this crate emits.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::schema::{AttrKind, GeoRole, Schema};

/// Where a table came from in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// The pseudo-population (census stand-in).
    Population,
    /// A survey drawn from the population, unperturbed.
    True,
    /// A survey with displaced cluster locations / reassigned zips.
    Geomasked,
    /// A synthetic survey sampled from a fitted copula.
    Synthetic,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Provenance::Population => "population",
            Provenance::True => "true",
            Provenance::Geomasked => "geomasked",
            Provenance::Synthetic => "synthetic",
        };
        f.write_str(s)
    }
}

/// One column of cell values.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    /// Continuous values; `None` is an absent cell.
    Continuous(Vec<Option<f64>>),
    /// Categorical class indices into the attribute's class list.
    Categorical(Vec<u32>),
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Continuous(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }
}

/// A schema-tagged table of records.
#[derive(Debug, Clone)]
pub struct MicroTable {
    schema: Arc<Schema>,
    columns: Vec<Column>,
    provenance: Provenance,
}

impl MicroTable {
    /// Build a table from columns, validating every cell against the schema.
    pub fn new(schema: Arc<Schema>, columns: Vec<Column>, provenance: Provenance) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} columns for a {}-attribute schema",
                columns.len(),
                schema.len()
            )));
        }
        let n = columns.first().map_or(0, Column::len);
        for (i, col) in columns.iter().enumerate() {
            let attr = schema.attr(i);
            if col.len() != n {
                return Err(Error::SchemaMismatch(format!(
                    "column {:?} has {} rows, expected {n}",
                    attr.name,
                    col.len()
                )));
            }
            match (attr.kind, col) {
                (AttrKind::Continuous, Column::Continuous(vals)) => {
                    for v in vals.iter().flatten() {
                        if !v.is_finite() {
                            return Err(Error::SchemaMismatch(format!(
                                "column {:?} holds a non-finite value",
                                attr.name
                            )));
                        }
                        if let Some([lo, hi]) = attr.bounds {
                            if *v < lo || *v > hi {
                                return Err(Error::SchemaMismatch(format!(
                                    "column {:?} value {v} outside bounds [{lo}, {hi}]",
                                    attr.name
                                )));
                            }
                        }
                        if attr.geo_role == Some(GeoRole::Weight) && *v <= 0.0 {
                            return Err(Error::SchemaMismatch(format!(
                                "weight column {:?} holds non-positive value {v}",
                                attr.name
                            )));
                        }
                    }
                    if attr.geo_role == Some(GeoRole::Weight) && vals.iter().any(Option::is_none) {
                        return Err(Error::SchemaMismatch(format!(
                            "weight column {:?} has absent cells",
                            attr.name
                        )));
                    }
                }
                (AttrKind::Categorical, Column::Categorical(codes)) => {
                    let k = attr.classes.len() as u32;
                    if let Some(&bad) = codes.iter().find(|&&c| c >= k) {
                        return Err(Error::SchemaMismatch(format!(
                            "column {:?} holds class index {bad}, but only {k} classes declared",
                            attr.name
                        )));
                    }
                }
                _ => {
                    return Err(Error::SchemaMismatch(format!(
                        "column {:?} storage does not match its declared kind",
                        attr.name
                    )));
                }
            }
        }
        Ok(MicroTable {
            schema,
            columns,
            provenance,
        })
    }

    /// The schema.
    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    /// Number of rows.
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    /// Number of columns.
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// Provenance tag.
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Same table with a different provenance tag.
    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }

    /// Column at index `idx`.
    pub fn column(&self, idx: usize) -> &Column {
        &self.columns[idx]
    }

    /// Continuous column values, or a schema-mismatch error.
    pub fn continuous(&self, idx: usize) -> Result<&[Option<f64>]> {
        match &self.columns[idx] {
            Column::Continuous(v) => Ok(v),
            Column::Categorical(_) => Err(Error::SchemaMismatch(format!(
                "attribute {:?} is categorical, expected continuous",
                self.schema.attr(idx).name
            ))),
        }
    }

    /// Categorical class codes, or a schema-mismatch error.
    pub fn categorical(&self, idx: usize) -> Result<&[u32]> {
        match &self.columns[idx] {
            Column::Categorical(v) => Ok(v),
            Column::Continuous(_) => Err(Error::SchemaMismatch(format!(
                "attribute {:?} is continuous, expected categorical",
                self.schema.attr(idx).name
            ))),
        }
    }

    /// Class label of a categorical cell.
    pub fn label(&self, row: usize, col: usize) -> Result<&str> {
        let code = self.categorical(col)?[row] as usize;
        Ok(&self.schema.attr(col).classes[code])
    }

    /// Weight column values (role = weight); all present and positive by
    /// construction.
    pub fn weights(&self) -> Result<Vec<f64>> {
        let idx = self.schema.require_role(GeoRole::Weight)?;
        Ok(self
            .continuous(idx)?
            .iter()
            .map(|v| v.expect("weights validated present"))
            .collect())
    }

    /// Keep the rows whose index appears in `rows` (in the given order).
    pub fn take_rows(&self, rows: &[usize]) -> MicroTable {
        let columns = self
            .columns
            .iter()
            .map(|col| match col {
                Column::Continuous(v) => Column::Continuous(rows.iter().map(|&r| v[r]).collect()),
                Column::Categorical(v) => Column::Categorical(rows.iter().map(|&r| v[r]).collect()),
            })
            .collect();
        MicroTable {
            schema: Arc::clone(&self.schema),
            columns,
            provenance: self.provenance,
        }
    }

    /// Project onto the named attributes (new schema, columns reordered).
    pub fn select(&self, names: &[&str]) -> Result<MicroTable> {
        let indices: Vec<usize> = names
            .iter()
            .map(|n| self.schema.require(n))
            .collect::<Result<_>>()?;
        let schema = self.schema.project(&indices)?;
        let columns = indices.iter().map(|&i| self.columns[i].clone()).collect();
        Ok(MicroTable {
            schema,
            columns,
            provenance: self.provenance,
        })
    }

    /// Row indices grouped by the class code of categorical column `idx`,
    /// in class order. Classes with no rows are omitted.
    pub fn group_by_class(&self, idx: usize) -> Result<BTreeMap<u32, Vec<usize>>> {
        let codes = self.categorical(idx)?;
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (row, &code) in codes.iter().enumerate() {
            groups.entry(code).or_default().push(row);
        }
        Ok(groups)
    }

    /// Map each class of categorical column `from` to the single class of
    /// categorical column `to` observed with it (e.g. cluster → zip).
    /// Errors if a `from` class co-occurs with two different `to` classes.
    pub fn class_map(&self, from: usize, to: usize) -> Result<BTreeMap<u32, u32>> {
        let f = self.categorical(from)?;
        let t = self.categorical(to)?;
        let mut map = BTreeMap::new();
        for row in 0..self.n_rows() {
            match map.entry(f[row]) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(t[row]);
                }
                std::collections::btree_map::Entry::Occupied(e) => {
                    if *e.get() != t[row] {
                        return Err(Error::SchemaMismatch(format!(
                            "class {:?} of {:?} maps to two classes of {:?}",
                            self.schema.attr(from).classes[f[row] as usize],
                            self.schema.attr(from).name,
                            self.schema.attr(to).name,
                        )));
                    }
                }
            }
        }
        Ok(map)
    }

    /// Load a CSV file against a JSON schema sidecar.
    pub fn load_csv(csv_path: &Path, schema_path: &Path, provenance: Provenance) -> Result<Self> {
        let schema = Schema::from_json_file(schema_path)?;
        Self::read_csv(csv_path, schema, provenance)
    }

    /// Load a CSV file against an already-parsed schema.
    pub fn read_csv(path: &Path, schema: Arc<Schema>, provenance: Provenance) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::io("read", path, e))?;

        let headers = reader
            .headers()
            .map_err(|e| Error::io("parse", path, e))?
            .clone();
        if headers.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "CSV has {} columns, schema declares {}",
                headers.len(),
                schema.len()
            )));
        }
        for (i, h) in headers.iter().enumerate() {
            if h != schema.attr(i).name {
                return Err(Error::SchemaMismatch(format!(
                    "CSV column {i} is {h:?}, schema declares {:?}",
                    schema.attr(i).name
                )));
            }
        }

        let mut columns: Vec<Column> = schema
            .attrs()
            .iter()
            .map(|a| match a.kind {
                AttrKind::Continuous => Column::Continuous(Vec::new()),
                AttrKind::Categorical => Column::Categorical(Vec::new()),
            })
            .collect();

        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::io("parse", path, e))?;
            if record.len() != schema.len() {
                return Err(Error::ParseError(format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    record.len(),
                    schema.len()
                )));
            }
            for (i, cell) in record.iter().enumerate() {
                let attr = schema.attr(i);
                match &mut columns[i] {
                    Column::Continuous(vals) => {
                        if cell.is_empty() {
                            vals.push(None);
                        } else {
                            let v: f64 = cell.parse().map_err(|_| {
                                Error::ParseError(format!(
                                    "row {}, column {:?}: {cell:?} is not a number",
                                    line + 2,
                                    attr.name
                                ))
                            })?;
                            vals.push(Some(v));
                        }
                    }
                    Column::Categorical(codes) => {
                        let code = if cell.is_empty() {
                            attr.missing_index().ok_or_else(|| {
                                Error::SchemaMismatch(format!(
                                    "row {}, column {:?}: empty cell but no missing class declared",
                                    line + 2,
                                    attr.name
                                ))
                            })?
                        } else {
                            attr.class_index(cell).ok_or_else(|| {
                                Error::SchemaMismatch(format!(
                                    "row {}, column {:?}: class {cell:?} not declared",
                                    line + 2,
                                    attr.name
                                ))
                            })?
                        };
                        codes.push(code);
                    }
                }
            }
        }
        MicroTable::new(schema, columns, provenance)
    }

    /// Write the table as CSV (header row, canonical float format, absent
    /// cells empty).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io("write", path, e))?;
        let names: Vec<&str> = self.schema.attrs().iter().map(|a| a.name.as_str()).collect();
        w.write_record(&names).map_err(|e| Error::io("write", path, e))?;
        let mut record: Vec<String> = Vec::with_capacity(self.n_cols());
        for row in 0..self.n_rows() {
            record.clear();
            for (i, col) in self.columns.iter().enumerate() {
                match col {
                    Column::Continuous(v) => {
                        record.push(v[row].map(|x| x.to_string()).unwrap_or_default())
                    }
                    Column::Categorical(v) => {
                        record.push(self.schema.attr(i).classes[v[row] as usize].clone())
                    }
                }
            }
            w.write_record(&record).map_err(|e| Error::io("write", path, e))?;
        }
        w.flush().map_err(|e| Error::io("write", path, e))
    }
}

/// Incrementally builds a table row by row (used by generators and samplers).
#[derive(Debug)]
pub struct TableBuilder {
    schema: Arc<Schema>,
    columns: Vec<Column>,
}

impl TableBuilder {
    /// Start an empty table for `schema`.
    pub fn new(schema: Arc<Schema>) -> Self {
        let columns = schema
            .attrs()
            .iter()
            .map(|a| match a.kind {
                AttrKind::Continuous => Column::Continuous(Vec::new()),
                AttrKind::Categorical => Column::Categorical(Vec::new()),
            })
            .collect();
        TableBuilder { schema, columns }
    }

    /// Append one row. `cells` must be in schema order; see [`CellValue`].
    pub fn push_row(&mut self, cells: &[CellValue]) -> Result<()> {
        if cells.len() != self.columns.len() {
            return Err(Error::SchemaMismatch(format!(
                "row has {} cells, schema declares {}",
                cells.len(),
                self.columns.len()
            )));
        }
        for (col, cell) in self.columns.iter_mut().zip(cells) {
            match (col, cell) {
                (Column::Continuous(v), CellValue::Num(x)) => v.push(Some(*x)),
                (Column::Continuous(v), CellValue::Absent) => v.push(None),
                (Column::Categorical(v), CellValue::Class(c)) => v.push(*c),
                _ => {
                    return Err(Error::SchemaMismatch(
                        "cell value does not match column kind".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Validate and freeze the table.
    pub fn finish(self, provenance: Provenance) -> Result<MicroTable> {
        MicroTable::new(self.schema, self.columns, provenance)
    }
}

/// One cell handed to [`TableBuilder::push_row`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellValue {
    /// A continuous value.
    Num(f64),
    /// An absent continuous cell.
    Absent,
    /// A categorical class index.
    Class(u32),
}
