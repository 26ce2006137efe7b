//! Mixed-type tables: explicit schemas, validated rows, CSV persistence and
//! seeded splitting.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Continuous,
}

/// One column of a table. Binary columns are categorical with two labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl ColumnSpec {
    pub fn categorical<S: Into<String>>(name: &str, categories: impl IntoIterator<Item = S>) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }

    pub fn continuous(name: &str) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
            categories: Vec::new(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == ColumnKind::Categorical
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            ColumnKind::Categorical => {
                if self.categories.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical column '{}' needs at least 2 categories",
                        self.name
                    )));
                }
                let mut seen = HashSet::new();
                for c in &self.categories {
                    if !seen.insert(c.as_str()) {
                        return Err(Error::Schema(format!(
                            "duplicate category '{}' in column '{}'",
                            c, self.name
                        )));
                    }
                }
            }
            ColumnKind::Continuous => {
                if !self.categories.is_empty() {
                    return Err(Error::Schema(format!(
                        "continuous column '{}' must not declare categories",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ordered column metadata plus an optional categorical target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
    #[serde(default, rename = "target", skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl TableSchema {
    pub fn new(columns: Vec<ColumnSpec>, target: Option<String>) -> Result<Self> {
        let schema = TableSchema { columns, target };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Schema("schema has no columns".into()));
        }
        let mut names = HashSet::new();
        for col in &self.columns {
            col.validate()?;
            if !names.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name '{}'", col.name)));
            }
        }
        if let Some(target) = &self.target {
            match self.column_index(target) {
                None => {
                    return Err(Error::Schema(format!("target column '{target}' not in schema")))
                }
                Some(i) if !self.columns[i].is_categorical() => {
                    return Err(Error::Schema(format!(
                        "target column '{target}' must be categorical"
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let schema: TableSchema = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn categorical_indices(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| self.columns[i].is_categorical())
            .collect()
    }

    pub fn continuous_indices(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| !self.columns[i].is_categorical())
            .collect()
    }
}

/// A single cell: a category index into the column's label list, or a finite
/// real value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Category(usize),
    Value(f64),
}

impl Cell {
    pub fn category(self) -> Option<usize> {
        match self {
            Cell::Category(c) => Some(c),
            Cell::Value(_) => None,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(v),
            Cell::Category(_) => None,
        }
    }
}

/// Validated row-major table. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    schema: TableSchema,
    rows: Vec<Vec<Cell>>,
}

impl DataTable {
    pub fn new(schema: TableSchema, rows: Vec<Vec<Cell>>) -> Result<Self> {
        schema.validate()?;
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Data(format!(
                    "row {} has {} cells, schema has {} columns",
                    r + 1,
                    row.len(),
                    schema.len()
                )));
            }
            for (cell, col) in row.iter().zip(&schema.columns) {
                match (cell, col.kind) {
                    (Cell::Category(c), ColumnKind::Categorical) if *c < col.categories.len() => {}
                    (Cell::Value(v), ColumnKind::Continuous) if v.is_finite() => {}
                    _ => {
                        return Err(Error::Data(format!(
                            "row {}, column {}: invalid cell {:?}",
                            r + 1,
                            col.name,
                            cell
                        )))
                    }
                }
            }
        }
        Ok(DataTable { schema, rows })
    }

    /// Build from labels/strings, validating each cell like `load_csv`.
    pub fn from_strings(schema: TableSchema, rows: &[Vec<String>]) -> Result<Self> {
        let parsed = rows
            .iter()
            .enumerate()
            .map(|(r, row)| parse_row(&schema, row.iter().map(String::as_str), r + 1, "<memory>"))
            .collect::<Result<Vec<_>>>()?;
        DataTable::new(schema, parsed)
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Cell] {
        &self.rows[i]
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Category indices of a categorical column.
    pub fn categorical_column(&self, col: usize) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| r[col].category().expect("categorical column"))
            .collect()
    }

    /// Values of a continuous column.
    pub fn continuous_column(&self, col: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r[col].value().expect("continuous column"))
            .collect()
    }

    /// New table with the given rows (by index, repeats allowed).
    pub fn select(&self, indices: &[usize]) -> DataTable {
        DataTable {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Render a cell as its CSV text.
    pub fn cell_text(&self, row: usize, col: usize) -> String {
        match self.rows[row][col] {
            Cell::Category(c) => self.schema.columns[col].categories[c].clone(),
            Cell::Value(v) => format_value(v),
        }
    }
}

/// Shortest decimal that round-trips the f64 exactly.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

fn parse_row<'a>(
    schema: &TableSchema,
    cells: impl Iterator<Item = &'a str>,
    row_no: usize,
    path: &str,
) -> Result<Vec<Cell>> {
    let mut out = Vec::with_capacity(schema.len());
    for (text, col) in cells.zip(&schema.columns) {
        let cell_err = |message: String| Error::Cell {
            path: path.to_string(),
            row: row_no,
            column: col.name.clone(),
            message,
        };
        let cell = match col.kind {
            ColumnKind::Categorical => match col.category_index(text) {
                Some(i) => Cell::Category(i),
                None if text.is_empty() => return Err(cell_err("missing value".into())),
                None => return Err(cell_err(format!("unknown category label '{text}'"))),
            },
            ColumnKind::Continuous => {
                let trimmed = text.trim();
                if trimmed.is_empty() {
                    return Err(cell_err("missing value".into()));
                }
                match trimmed.parse::<f64>() {
                    Ok(v) if v.is_finite() => Cell::Value(v),
                    Ok(_) => return Err(cell_err(format!("non-finite number '{text}'"))),
                    Err(_) => return Err(cell_err(format!("unparseable number '{text}'"))),
                }
            }
        };
        out.push(cell);
    }
    Ok(out)
}

/// Read a CSV with a mandatory header. Columns may appear in any order and are
/// reordered to schema order.
pub fn load_csv(path: impl AsRef<Path>, schema: &TableSchema) -> Result<DataTable> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(Error::Data(format!("{display}: empty file (no header row)"))),
        Some(h) => h?,
    };
    let header: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if position.insert(h.as_str(), i).is_some() {
            return Err(Error::Data(format!("{display}: duplicate header column '{h}'")));
        }
    }
    for h in &header {
        if schema.column_index(h).is_none() {
            return Err(Error::Data(format!("{display}: column '{h}' is not in the schema")));
        }
    }
    let order = schema
        .columns
        .iter()
        .map(|c| {
            position.get(c.name.as_str()).copied().ok_or_else(|| {
                Error::Data(format!("{display}: missing column '{}'", c.name))
            })
        })
        .collect::<Result<Vec<usize>>>()?;

    let mut rows = Vec::new();
    for (r, record) in records.enumerate() {
        let record = record?;
        let row_no = r + 1;
        if record.len() != header.len() {
            return Err(Error::Data(format!(
                "{display}: row {row_no} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        let cells = order.iter().map(|&i| &record[i]);
        rows.push(parse_row(schema, cells, row_no, &display)?);
    }
    DataTable::new(schema.clone(), rows)
}

/// Write the table as CSV with a header row, schema column order.
pub fn save_csv(data: &DataTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer.write_record(data.schema.columns.iter().map(|c| c.name.as_str()))?;
    for r in 0..data.n_rows() {
        writer.write_record((0..data.n_cols()).map(|c| data.cell_text(r, c)))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Seeded shuffle split. The training side gets `round(n * (1 - f))` rows
/// (kept within `[1, n-1]`), the test side the rest; both keep file order.
pub fn train_test_split(
    data: &DataTable,
    test_fraction: f64,
    seed: u64,
) -> Result<(DataTable, DataTable)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = data.n_rows();
    if n < 4 {
        return Err(Error::Data(format!("need at least 4 rows to split, got {n}")));
    }
    let n_train = ((n as f64 * (1.0 - test_fraction)).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, test) = idx.split_at_mut(n_train);
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.select(train), data.select(test)))
}

/// Per-class quotas for a stratified draw of `n` out of `counts`, by the
/// largest-remainder rule. Each quota is within one of the exact proportion.
pub(crate) fn proportional_quotas(counts: &[usize], n: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let exact: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 * n as f64 / total as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = n - assigned;
    for &k in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if quotas[k] < counts[k] {
            quotas[k] += 1;
            remaining -= 1;
        }
    }
    quotas
}

/// Draw `n` rows keeping each class of `strat_column` at its source proportion
/// (within one row). Selected rows keep their original order.
pub fn stratified_subsample(
    data: &DataTable,
    n: usize,
    strat_column: &str,
    seed: u64,
) -> Result<DataTable> {
    let col = data
        .schema
        .column_index(strat_column)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown column '{strat_column}'")))?;
    if !data.schema.columns[col].is_categorical() {
        return Err(Error::InvalidArgument(format!(
            "stratification column '{strat_column}' is not categorical"
        )));
    }
    if n > data.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "requested {n} rows from a table of {}",
            data.n_rows()
        )));
    }
    let n_classes = data.schema.columns[col].categories.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, row) in data.rows.iter().enumerate() {
        members[row[col].category().expect("categorical")].push(i);
    }
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = proportional_quotas(&counts, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (rows, quota) in members.iter_mut().zip(quotas) {
        rows.shuffle(&mut rng);
        chosen.extend_from_slice(&rows[..quota]);
    }
    chosen.sort_unstable();
    Ok(data.select(&chosen))
}
