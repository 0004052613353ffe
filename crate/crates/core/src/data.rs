//! Column schemas, the encoded dataset table, and CSV ingestion/emission.
//!
//! Records are encoded into the unit-norm domain every sensitivity argument
//! relies on: continuous columns are min-max scaled to `[0, 1]`, categorical
//! and label columns become one-hot groups, and the whole row is multiplied
//! by `row_scale = 1/sqrt(#continuous + #groups)` so an in-range record has
//! L2 norm at most 1. Rows that still exceed norm 1 (out-of-range values)
//! are clipped and reported in the [`IngestLog`].

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::privacy::clip_l2_in_place;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Column {
    Continuous { name: String, min: f64, max: f64 },
    Categorical { name: String, categories: Vec<String> },
    Label { name: String, classes: Vec<String> },
}

impl Column {
    pub fn name(&self) -> &str {
        match self {
            Column::Continuous { name, .. }
            | Column::Categorical { name, .. }
            | Column::Label { name, .. } => name,
        }
    }

    /// Number of encoded dimensions.
    pub fn width(&self) -> usize {
        match self {
            Column::Continuous { .. } => 1,
            Column::Categorical { categories, .. } => categories.len(),
            Column::Label { classes, .. } => classes.len(),
        }
    }

    fn categories(&self) -> Option<&[String]> {
        match self {
            Column::Continuous { .. } => None,
            Column::Categorical { categories, .. } => Some(categories),
            Column::Label { classes, .. } => Some(classes),
        }
    }
}

/// One decoded cell: a continuous value or a category index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct ColumnSchema {
    columns: Vec<Column>,
    offsets: Vec<usize>,
    width: usize,
    row_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    columns: Vec<Column>,
}

impl TryFrom<SchemaRepr> for ColumnSchema {
    type Error = Error;
    fn try_from(r: SchemaRepr) -> Result<Self> {
        ColumnSchema::new(r.columns)
    }
}

impl From<ColumnSchema> for SchemaRepr {
    fn from(s: ColumnSchema) -> Self {
        SchemaRepr { columns: s.columns }
    }
}

impl ColumnSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Schema("schema has no columns".into()));
        }
        let mut names = HashSet::new();
        let mut labels = 0;
        for c in &columns {
            if !names.insert(c.name().to_string()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name())));
            }
            match c {
                Column::Continuous { name, min, max } => {
                    if !(min.is_finite() && max.is_finite() && min < max) {
                        return Err(Error::Schema(format!(
                            "column `{name}` needs finite min < max, got [{min}, {max}]"
                        )));
                    }
                }
                Column::Categorical { name, categories: cats }
                | Column::Label { name, classes: cats } => {
                    if cats.len() < 2 {
                        return Err(Error::Schema(format!(
                            "column `{name}` needs at least 2 categories"
                        )));
                    }
                    let distinct: HashSet<_> = cats.iter().collect();
                    if distinct.len() != cats.len() {
                        return Err(Error::Schema(format!("column `{name}` repeats a category")));
                    }
                }
            }
            if matches!(c, Column::Label { .. }) {
                labels += 1;
            }
        }
        if labels > 1 {
            return Err(Error::Schema("at most one label column is supported".into()));
        }
        let mut offsets = Vec::with_capacity(columns.len());
        let mut width = 0;
        for c in &columns {
            offsets.push(width);
            width += c.width();
        }
        let row_scale = 1.0 / (columns.len() as f64).sqrt();
        Ok(ColumnSchema {
            columns,
            offsets,
            width,
            row_scale,
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    /// Encoded row width.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row_scale(&self) -> f64 {
        self.row_scale
    }

    /// Encoded offset of column `i`.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn label_index(&self) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| matches!(c, Column::Label { .. }))
    }

    pub fn label_classes(&self) -> Option<&[String]> {
        self.label_index()
            .and_then(|i| self.columns[i].categories())
    }

    /// Encodes one record; returns the row and its pre-clip norm.
    pub fn encode(&self, record: &[Value]) -> Result<(Vec<f64>, f64)> {
        if record.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.columns.len(),
                actual: record.len(),
            });
        }
        let mut row = vec![0.0; self.width];
        for ((c, &off), v) in self.columns.iter().zip(&self.offsets).zip(record) {
            match (c, *v) {
                (Column::Continuous { min, max, .. }, Value::Num(x)) => {
                    row[off] = (x - min) / (max - min) * self.row_scale;
                }
                (Column::Continuous { name, .. }, Value::Cat(_)) => {
                    return Err(Error::Schema(format!("column `{name}` expects a number")));
                }
                (_, Value::Cat(k)) if k < c.width() => row[off + k] = self.row_scale,
                (_, _) => {
                    return Err(Error::Schema(format!(
                        "column `{}` expects a category index below {}",
                        c.name(),
                        c.width()
                    )));
                }
            }
        }
        let norm = clip_l2_in_place(&mut row, 1.0);
        Ok((row, norm))
    }

    /// Decodes an encoded row: continuous columns are unscaled and clamped
    /// to their declared range, one-hot groups take their argmax.
    pub fn decode(&self, row: &[f64]) -> Vec<Value> {
        self.columns
            .iter()
            .zip(&self.offsets)
            .map(|(c, &off)| match c {
                Column::Continuous { min, max, .. } => {
                    let u = (row[off] / self.row_scale).clamp(0.0, 1.0);
                    Value::Num(min + u * (max - min))
                }
                _ => Value::Cat(argmax(&row[off..off + c.width()])),
            })
            .collect()
    }

    /// Snaps a generated row onto the schema's valid set: continuous cells
    /// clamped to `[0, row_scale]`, one-hot groups replaced by their argmax.
    pub fn canonicalize(&self, row: &mut [f64]) {
        for (c, &off) in self.columns.iter().zip(&self.offsets) {
            match c {
                Column::Continuous { .. } => row[off] = row[off].clamp(0.0, self.row_scale),
                _ => {
                    let group = &mut row[off..off + c.width()];
                    let k = argmax(group);
                    group.iter_mut().for_each(|x| *x = 0.0);
                    group[k] = self.row_scale;
                }
            }
        }
    }

    fn parse_cell(&self, col: usize, raw: &str, row: usize) -> Result<Value> {
        let c = &self.columns[col];
        match c {
            Column::Continuous { name, .. } => {
                let x: f64 = raw.trim().parse().map_err(|_| Error::UnparsableCell {
                    row,
                    column: name.clone(),
                    value: raw.to_string(),
                })?;
                if !x.is_finite() {
                    return Err(Error::UnparsableCell {
                        row,
                        column: name.clone(),
                        value: raw.to_string(),
                    });
                }
                Ok(Value::Num(x))
            }
            _ => {
                let cats = c.categories().unwrap_or_default();
                let raw = raw.trim();
                cats.iter()
                    .position(|k| k == raw)
                    .map(Value::Cat)
                    .ok_or_else(|| Error::UnknownCategory {
                        row,
                        column: c.name().to_string(),
                        value: raw.to_string(),
                    })
            }
        }
    }

    fn format_cell(&self, col: usize, v: Value) -> String {
        match (v, self.columns[col].categories()) {
            (Value::Num(x), _) => format!("{x}"),
            (Value::Cat(k), Some(cats)) => cats[k].clone(),
            (Value::Cat(k), None) => format!("{k}"),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Rows clipped during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestLog {
    pub rows: usize,
    /// `(row index, pre-clip norm)` for every row rescaled to norm 1.
    pub clipped: Vec<(usize, f64)>,
}

/// An encoded dataset: row-major matrix in the unit-norm domain plus schema.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    schema: ColumnSchema,
    matrix: Matrix,
}

impl DatasetTable {
    pub fn new(schema: ColumnSchema, matrix: Matrix) -> Result<Self> {
        if matrix.cols() != schema.width() {
            return Err(Error::DimensionMismatch {
                expected: schema.width(),
                actual: matrix.cols(),
            });
        }
        Ok(DatasetTable { schema, matrix })
    }

    pub fn from_records(schema: ColumnSchema, records: &[Vec<Value>]) -> Result<(Self, IngestLog)> {
        let mut matrix = Matrix::zeros(0, schema.width());
        let mut log = IngestLog {
            rows: records.len(),
            clipped: Vec::new(),
        };
        for (i, r) in records.iter().enumerate() {
            let (row, norm) = schema.encode(r)?;
            if norm > 1.0 {
                log.clipped.push((i, norm));
            }
            matrix.push_row(&row)?;
        }
        Ok((DatasetTable { schema, matrix }, log))
    }

    pub fn schema(&self) -> &ColumnSchema {
        &self.schema
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn select_rows(&self, idx: &[usize]) -> DatasetTable {
        DatasetTable {
            schema: self.schema.clone(),
            matrix: self.matrix.select_rows(idx),
        }
    }

    pub fn records(&self) -> Vec<Vec<Value>> {
        self.matrix.iter_rows().map(|r| self.schema.decode(r)).collect()
    }

    /// Class index of every row, if the schema has a label column.
    pub fn labels(&self) -> Option<Vec<usize>> {
        let li = self.schema.label_index()?;
        let off = self.schema.offset(li);
        let w = self.schema.columns()[li].width();
        Some(
            self.matrix
                .iter_rows()
                .map(|r| argmax(&r[off..off + w]))
                .collect(),
        )
    }

    /// Class name → relative frequency.
    pub fn label_frequencies(&self) -> Option<BTreeMap<String, f64>> {
        let classes = self.schema.label_classes()?;
        let labels = self.labels()?;
        let mut counts = vec![0usize; classes.len()];
        for l in &labels {
            counts[*l] += 1;
        }
        let n = labels.len().max(1) as f64;
        Some(
            classes
                .iter()
                .zip(counts)
                .map(|(c, k)| (c.clone(), k as f64 / n))
                .collect(),
        )
    }

    /// Non-label columns on their `[0, 1]` scale, one-hot groups as 0/1.
    pub fn features(&self) -> Matrix {
        let li = self.schema.label_index();
        let scale = self.schema.row_scale();
        let keep: Vec<usize> = self
            .schema
            .columns()
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != li)
            .flat_map(|(i, c)| {
                let off = self.schema.offset(i);
                off..off + c.width()
            })
            .collect();
        let mut out = Matrix::zeros(0, keep.len());
        for r in self.matrix.iter_rows() {
            let f: Vec<f64> = keep.iter().map(|&j| r[j] / scale).collect();
            out.push_row(&f).expect("width fixed above");
        }
        out
    }

    pub fn max_row_norm(&self) -> f64 {
        self.matrix.iter_rows().map(norm2).fold(0.0, f64::max)
    }
}

/// Reads a headered CSV, applying the schema's scaling and one-hot expansion.
pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<(DatasetTable, IngestLog)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let positions = schema
        .columns()
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h.trim() == c.name())
                .ok_or_else(|| Error::MissingColumn(c.name().to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = i + 1;
        let values = positions
            .iter()
            .enumerate()
            .map(|(col, &pos)| schema.parse_cell(col, rec.get(pos).unwrap_or(""), row_no))
            .collect::<Result<Vec<_>>>()?;
        records.push(values);
    }
    DatasetTable::from_records(schema.clone(), &records)
}

pub fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<(DatasetTable, IngestLog)> {
    let file = std::fs::File::open(path)?;
    let out = read_csv(file, schema)?;
    if out.0.n_rows() == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(out)
}

pub fn write_csv<W: Write>(table: &DatasetTable, writer: W) -> Result<()> {
    let schema = table.schema();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(schema.columns().iter().map(|c| c.name()))?;
    for rec in table.records() {
        w.write_record(
            rec.iter()
                .enumerate()
                .map(|(i, v)| schema.format_cell(i, *v)),
        )?;
    }
    w.flush()?;
    Ok(())
}
