//! Tabular data: schema, cells, CSV ingestion, preprocessing and the
//! synthetic three-cluster generator.

mod io;
mod preprocess;
mod synth;

pub use io::{load_csv, load_schema, write_csv, write_schema, MISSING_SENTINEL};
pub use preprocess::{
    drop_outliers_3sigma, fit_standardizer, impute_median, split, ColumnStats, Fill, Imputer,
    Standardizer, StdConvention,
};
pub use synth::{gen_synthetic, SyntheticSpec};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("header mismatch at column {index}: expected `{expected}`, found `{found}`")]
    HeaderMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("row {row}: expected {expected} cells, found {found}")]
    Arity {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Numeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: unknown level `{value}`")]
    UnknownLevel {
        row: usize,
        column: String,
        value: String,
    },
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    Fraction(f64),
    #[error("split of {n} rows at fraction {fraction} leaves an empty partition")]
    EmptyPartition { n: usize, fraction: f64 },
    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("column `{0}` has fewer than two observed values")]
    TooFewValues(String),
    #[error("column `{0}` is entirely missing")]
    AllMissing(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("empty dataset")]
    Empty,
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Feature,
    Response,
    Identifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

impl ColumnSpec {
    pub fn continuous(name: &str, role: ColumnRole) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
            role,
            levels: Vec::new(),
        }
    }

    pub fn discrete(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Discrete,
            role: ColumnRole::Feature,
            levels: levels.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Ordered list of columns with exactly one continuous response.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    columns: Vec<ColumnSpec>,
}

#[derive(Serialize, Deserialize)]
struct SchemaEntry {
    kind: ColumnKind,
    role: ColumnRole,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    levels: Vec<String>,
}

impl Serialize for Schema {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: IndexMap<&str, SchemaEntry> = self
            .columns
            .iter()
            .map(|c| {
                (
                    c.name.as_str(),
                    SchemaEntry {
                        kind: c.kind,
                        role: c.role,
                        levels: c.levels.clone(),
                    },
                )
            })
            .collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = IndexMap::<String, SchemaEntry>::deserialize(d)?;
        let columns = map
            .into_iter()
            .map(|(name, e)| ColumnSpec {
                name,
                kind: e.kind,
                role: e.role,
                levels: e.levels,
            })
            .collect();
        Schema::new(columns).map_err(serde::de::Error::custom)
    }
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self, DataError> {
        let responses: Vec<_> = columns
            .iter()
            .filter(|c| c.role == ColumnRole::Response)
            .collect();
        if responses.len() != 1 {
            return Err(DataError::Schema(format!(
                "expected exactly one response column, found {}",
                responses.len()
            )));
        }
        if responses[0].kind != ColumnKind::Continuous {
            return Err(DataError::Schema(format!(
                "response `{}` must be continuous",
                responses[0].name
            )));
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(DataError::Schema(format!("duplicate column `{}`", c.name)));
            }
            match c.kind {
                ColumnKind::Discrete => {
                    if c.levels.is_empty() {
                        return Err(DataError::Schema(format!(
                            "discrete column `{}` has no levels",
                            c.name
                        )));
                    }
                    for (j, l) in c.levels.iter().enumerate() {
                        if c.levels[..j].contains(l) {
                            return Err(DataError::Schema(format!(
                                "discrete column `{}` repeats level `{l}`",
                                c.name
                            )));
                        }
                    }
                }
                ColumnKind::Continuous => {
                    if !c.levels.is_empty() {
                        return Err(DataError::Schema(format!(
                            "continuous column `{}` declares levels",
                            c.name
                        )));
                    }
                }
            }
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn response_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.role == ColumnRole::Response)
            .expect("validated schema has a response")
    }

    pub fn identifier_index(&self) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.role == ColumnRole::Identifier)
    }

    /// Column indices of all features, in schema order.
    pub fn feature_indices(&self) -> Vec<usize> {
        self.indices_where(|c| c.role == ColumnRole::Feature)
    }

    pub fn continuous_features(&self) -> Vec<usize> {
        self.indices_where(|c| c.role == ColumnRole::Feature && c.kind == ColumnKind::Continuous)
    }

    pub fn discrete_features(&self) -> Vec<usize> {
        self.indices_where(|c| c.role == ColumnRole::Feature && c.kind == ColumnKind::Discrete)
    }

    fn indices_where(&self, f: impl Fn(&ColumnSpec) -> bool) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| f(c))
            .map(|(i, _)| i)
            .collect()
    }

    /// Keeps only the named features (plus response and identifier columns).
    pub fn restrict_features(&self, keep: &[String]) -> Result<(Schema, Vec<usize>), DataError> {
        for k in keep {
            match self.index_of(k) {
                Some(i) if self.columns[i].role == ColumnRole::Feature => {}
                _ => return Err(DataError::UnknownColumn(k.clone())),
            }
        }
        let idx: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role != ColumnRole::Feature || keep.contains(&c.name))
            .map(|(i, _)| i)
            .collect();
        let cols = idx.iter().map(|&i| self.columns[i].clone()).collect();
        Ok((Schema::new(cols)?, idx))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Real(f64),
    Category(usize),
    Text(String),
    Missing,
}

impl Cell {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Cell::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_category(&self) -> Option<usize> {
        match self {
            Cell::Category(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
}

/// Rows of cells under a schema. `row_ids` carry each row's position in the
/// originally loaded table so subsets stay traceable.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub rows: Vec<Vec<Cell>>,
    pub row_ids: Vec<usize>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<Vec<Cell>>, provenance: &str) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        let row_ids = (0..rows.len()).collect();
        let ds = Self {
            schema,
            rows,
            row_ids,
            provenance: provenance.to_string(),
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<(), DataError> {
        let cols = self.schema.columns();
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != cols.len() {
                return Err(DataError::Arity {
                    row: r,
                    expected: cols.len(),
                    found: row.len(),
                });
            }
            for (c, cell) in row.iter().enumerate() {
                let spec = &cols[c];
                let ok = match (cell, spec.kind) {
                    (Cell::Missing, _) => true,
                    (Cell::Text(_), _) => spec.role == ColumnRole::Identifier,
                    (Cell::Real(v), ColumnKind::Continuous) => v.is_finite(),
                    (Cell::Category(i), ColumnKind::Discrete) => *i < spec.levels.len(),
                    _ => false,
                };
                if !ok {
                    return Err(DataError::Schema(format!(
                        "row {r}, column `{}`: cell {cell:?} does not fit the column",
                        spec.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Subset of rows, in the order given. May be empty.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn column_reals(&self, col: usize) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r[col].as_real()).collect()
    }

    pub fn response(&self) -> Vec<Option<f64>> {
        self.column_reals(self.schema.response_index())
    }

    /// Instance identifier: the identifier cell when the schema has one,
    /// otherwise the original row position.
    pub fn instance_id(&self, row: usize) -> String {
        match self.schema.identifier_index().map(|c| &self.rows[row][c]) {
            Some(Cell::Text(s)) => s.clone(),
            Some(Cell::Real(v)) => format!("{v}"),
            _ => self.row_ids[row].to_string(),
        }
    }

    pub fn project_features(&self, keep: &[String]) -> Result<Dataset, DataError> {
        let (schema, idx) = self.schema.restrict_features(keep)?;
        Ok(Dataset {
            schema,
            rows: self
                .rows
                .iter()
                .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
                .collect(),
            row_ids: self.row_ids.clone(),
            provenance: self.provenance.clone(),
        })
    }

    /// Splits every row into its model-facing parts. Fails on missing cells.
    pub fn model_rows(&self) -> Result<Vec<ModelRow>, DataError> {
        let layout = FeatureLayout::from_schema(&self.schema);
        let resp = self.schema.response_index();
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let (x_cont, x_disc) = layout.split_row(&self.schema, row).ok_or_else(|| {
                    DataError::Schema(format!("row {r} has missing feature cells"))
                })?;
                let y = row[resp].as_real();
                Ok(ModelRow { x_cont, x_disc, y })
            })
            .collect()
    }
}

/// One record split into continuous and discrete feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRow {
    pub x_cont: Vec<f64>,
    pub x_disc: Vec<usize>,
    pub y: Option<f64>,
}

/// Maps between schema feature columns, the (continuous, discrete) split
/// used by the surrogate, and the one-hot encoded vector used by the
/// regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub feature_names: Vec<String>,
    pub continuous: Vec<String>,
    pub discrete: Vec<String>,
    pub cardinalities: Vec<usize>,
    /// Per feature in schema order: (is_discrete, index into continuous or discrete).
    slots: Vec<(bool, usize)>,
}

impl FeatureLayout {
    pub fn from_schema(schema: &Schema) -> Self {
        let mut out = FeatureLayout {
            feature_names: Vec::new(),
            continuous: Vec::new(),
            discrete: Vec::new(),
            cardinalities: Vec::new(),
            slots: Vec::new(),
        };
        for &i in &schema.feature_indices() {
            let c = &schema.columns()[i];
            out.feature_names.push(c.name.clone());
            match c.kind {
                ColumnKind::Continuous => {
                    out.slots.push((false, out.continuous.len()));
                    out.continuous.push(c.name.clone());
                }
                ColumnKind::Discrete => {
                    out.slots.push((true, out.discrete.len()));
                    out.discrete.push(c.name.clone());
                    out.cardinalities.push(c.levels.len());
                }
            }
        }
        out
    }

    pub fn d_cont(&self) -> usize {
        self.continuous.len()
    }

    /// Width of the regressor input vector.
    pub fn encoded_width(&self) -> usize {
        self.continuous.len() + self.cardinalities.iter().sum::<usize>()
    }

    pub fn continuous_index(&self, name: &str) -> Option<usize> {
        self.continuous.iter().position(|c| c == name)
    }

    /// Names of each encoded slot, e.g. `SEX=2` for one-hot slots.
    pub fn encoded_names(&self, schema: &Schema) -> Vec<String> {
        let mut out = Vec::with_capacity(self.encoded_width());
        for (name, &(disc, j)) in self.feature_names.iter().zip(&self.slots) {
            if disc {
                let col = &schema.columns()[schema.index_of(name).expect("layout from schema")];
                for l in 0..self.cardinalities[j] {
                    out.push(format!("{name}={}", col.levels[l]));
                }
            } else {
                out.push(name.clone());
            }
        }
        out
    }

    /// For each encoded slot, the index of the schema feature it came from.
    pub fn slot_owner(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.encoded_width());
        for (f, &(disc, j)) in self.slots.iter().enumerate() {
            let width = if disc { self.cardinalities[j] } else { 1 };
            out.extend(std::iter::repeat_n(f, width));
        }
        out
    }

    /// One-hot encodes a (continuous, discrete) pair in schema feature order.
    pub fn encode(&self, x_cont: &[f64], x_disc: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.encoded_width());
        for &(disc, j) in &self.slots {
            if disc {
                let card = self.cardinalities[j];
                out.extend((0..card).map(|l| if l == x_disc[j] { 1.0 } else { 0.0 }));
            } else {
                out.push(x_cont[j]);
            }
        }
        out
    }

    fn split_row(&self, schema: &Schema, row: &[Cell]) -> Option<(Vec<f64>, Vec<usize>)> {
        let mut x_cont = vec![0.0; self.continuous.len()];
        let mut x_disc = vec![0; self.discrete.len()];
        for (name, &(disc, j)) in self.feature_names.iter().zip(&self.slots) {
            let cell = &row[schema.index_of(name)?];
            if disc {
                x_disc[j] = cell.as_category()?;
            } else {
                x_cont[j] = cell.as_real()?;
            }
        }
        Some((x_cont, x_disc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(vec![
            ColumnSpec::continuous("a", ColumnRole::Feature),
            ColumnSpec::discrete("s", &["m", "f"]),
            ColumnSpec::continuous("b", ColumnRole::Feature),
            ColumnSpec::continuous("y", ColumnRole::Response),
        ])
        .unwrap()
    }

    #[test]
    fn schema_requires_single_continuous_response() {
        let none = Schema::new(vec![ColumnSpec::continuous("a", ColumnRole::Feature)]);
        assert!(matches!(none, Err(DataError::Schema(_))));
        let mut disc = ColumnSpec::discrete("y", &["0", "1"]);
        disc.role = ColumnRole::Response;
        assert!(Schema::new(vec![disc]).is_err());
    }

    #[test]
    fn schema_rejects_bad_levels() {
        let empty = ColumnSpec::discrete("s", &[]);
        let dup = ColumnSpec::discrete("s", &["a", "a"]);
        let y = ColumnSpec::continuous("y", ColumnRole::Response);
        assert!(Schema::new(vec![empty, y.clone()]).is_err());
        assert!(Schema::new(vec![dup, y]).is_err());
    }

    #[test]
    fn schema_json_keeps_column_order() {
        let s = schema();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.find("\"a\"").unwrap() < text.find("\"s\"").unwrap());
        let back: Schema = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn layout_encodes_one_hot_in_schema_order() {
        let s = schema();
        let layout = FeatureLayout::from_schema(&s);
        assert_eq!(layout.continuous, vec!["a", "b"]);
        assert_eq!(layout.encoded_width(), 4);
        assert_eq!(layout.encode(&[1.5, -2.0], &[1]), vec![1.5, 0.0, 1.0, -2.0]);
        assert_eq!(layout.slot_owner(), vec![0, 1, 1, 2]);
        assert_eq!(layout.encoded_names(&s), vec!["a", "s=m", "s=f", "b"]);
    }

    #[test]
    fn dataset_rejects_out_of_range_category() {
        let rows = vec![vec![
            Cell::Real(1.0),
            Cell::Category(2),
            Cell::Real(0.0),
            Cell::Real(0.0),
        ]];
        assert!(Dataset::new(schema(), rows, "t").is_err());
    }
}
