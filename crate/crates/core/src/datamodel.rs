//! Relational catalog, cell values and the columnar [`Dataframe`] that carries
//! query results from the data-access step into a compute function.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataError {
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("duplicate column: {0}")]
    DuplicateColumn(String),
    #[error("invalid identifier: {0:?}")]
    InvalidName(String),
    #[error("column {column}: expected {expected} values, found {actual}")]
    LengthMismatch {
        column: String,
        expected: usize,
        actual: usize,
    },
    #[error("column {column}: value at row {row} does not match type {expected}")]
    TypeMismatch {
        column: String,
        row: usize,
        expected: ValueType,
    },
    #[error("primary key {0} is not a column of the table")]
    UnknownPrimaryKey(String),
}

/// Column types of the personal-data catalog.
///
/// `Timestamp` is microseconds since the Unix epoch. `Asset` is a logical
/// type: the store holds a text asset ID which is swapped for the asset bytes
/// right before compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueType {
    Int64,
    Float64,
    Text,
    Bytes,
    Timestamp,
    TextList,
    Asset,
}

impl ValueType {
    pub fn admits(self, value: &Value) -> bool {
        matches!(
            (self, value),
            (ValueType::Int64, Value::Int64(_))
                | (ValueType::Float64, Value::Float64(_))
                | (ValueType::Text, Value::Text(_))
                | (ValueType::Asset, Value::Text(_))
                | (ValueType::Bytes, Value::Bytes(_))
                | (ValueType::Timestamp, Value::Timestamp(_))
                | (ValueType::TextList, Value::TextList(_))
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ValueType::Int64 => "Int64",
            ValueType::Float64 => "Float64",
            ValueType::Text => "Text",
            ValueType::Bytes => "Bytes",
            ValueType::Timestamp => "Timestamp",
            ValueType::TextList => "TextList",
            ValueType::Asset => "Asset",
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single non-null cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Int64(i64),
    Float64(f64),
    Text(String),
    Bytes(Vec<u8>),
    Timestamp(i64),
    TextList(Vec<String>),
}

impl Value {
    /// The natural column type of this value. Text asset IDs report `Text`.
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Int64(_) => ValueType::Int64,
            Value::Float64(_) => ValueType::Float64,
            Value::Text(_) => ValueType::Text,
            Value::Bytes(_) => ValueType::Bytes,
            Value::Timestamp(_) => ValueType::Timestamp,
            Value::TextList(_) => ValueType::TextList,
        }
    }

    /// Total order between two values of the same variant.
    ///
    /// Floats use IEEE total ordering, text and bytes compare
    /// byte-lexicographically, lists compare element-wise. Values of different
    /// variants are ordered by variant so the function stays total.
    pub fn compare(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Int64(a), Value::Int64(b)) => a.cmp(b),
            (Value::Timestamp(a), Value::Timestamp(b)) => a.cmp(b),
            (Value::Float64(a), Value::Float64(b)) => a.total_cmp(b),
            (Value::Text(a), Value::Text(b)) => a.as_bytes().cmp(b.as_bytes()),
            (Value::Bytes(a), Value::Bytes(b)) => a.cmp(b),
            (Value::TextList(a), Value::TextList(b)) => a.cmp(b),
            _ => self.variant_rank().cmp(&other.variant_rank()),
        }
    }

    fn variant_rank(&self) -> u8 {
        match self {
            Value::Int64(_) => 0,
            Value::Float64(_) => 1,
            Value::Text(_) => 2,
            Value::Bytes(_) => 3,
            Value::Timestamp(_) => 4,
            Value::TextList(_) => 5,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }
}

// Float64 cells compare bit-wise so that round-trip checks are exact.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Float64(a), Value::Float64(b)) => a.to_bits() == b.to_bits(),
            (Value::Int64(a), Value::Int64(b)) => a == b,
            (Value::Timestamp(a), Value::Timestamp(b)) => a == b,
            (Value::Text(a), Value::Text(b)) => a == b,
            (Value::Bytes(a), Value::Bytes(b)) => a == b,
            (Value::TextList(a), Value::TextList(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

/// Whether `name` is a valid table or column identifier.
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub vtype: ValueType,
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, vtype: ValueType) -> Self {
        Self {
            name: name.into(),
            vtype,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnSchema>,
    pub primary_key: Option<String>,
}

impl TableSchema {
    pub fn new(
        name: impl Into<String>,
        columns: Vec<ColumnSchema>,
        primary_key: Option<&str>,
    ) -> Result<Self, DataError> {
        let name = name.into();
        if !is_identifier(&name) {
            return Err(DataError::InvalidName(name));
        }
        let mut seen = HashSet::new();
        for col in &columns {
            if !is_identifier(&col.name) {
                return Err(DataError::InvalidName(col.name.clone()));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(DataError::DuplicateColumn(col.name.clone()));
            }
        }
        if let Some(pk) = primary_key {
            if !seen.contains(pk) {
                return Err(DataError::UnknownPrimaryKey(pk.to_string()));
            }
        }
        Ok(Self {
            name,
            columns,
            primary_key: primary_key.map(str::to_string),
        })
    }

    /// Position of a column, matched ASCII case-insensitively.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

/// The built-in catalog: Contact, Location, Photos, KeyTable, in that order.
pub fn catalog_builtin() -> Vec<TableSchema> {
    use ValueType::*;
    let table = |name: &str, cols: &[(&str, ValueType)], pk: Option<&str>| {
        TableSchema::new(
            name,
            cols.iter().map(|(n, t)| ColumnSchema::new(*n, *t)).collect(),
            pk,
        )
        .expect("built-in schema is well formed")
    };
    vec![
        table(
            "Contact",
            &[
                ("contactId", Text),
                ("givenName", Text),
                ("familyName", Text),
                ("phoneNumbers", TextList),
            ],
            Some("contactId"),
        ),
        table(
            "Location",
            &[
                ("longitude", Float64),
                ("latitude", Float64),
                ("timestamp", Timestamp),
            ],
            None,
        ),
        table(
            "Photos",
            &[
                ("asset", Asset),
                ("creationDate", Timestamp),
                ("mediaType", Text),
            ],
            None,
        ),
        table("KeyTable", &[("key", Bytes), ("date", Timestamp)], None),
    ]
}

/// Look a table up by name, ASCII case-insensitively.
pub fn find_table<'a>(catalog: &'a [TableSchema], name: &str) -> Option<&'a TableSchema> {
    catalog.iter().find(|t| t.name.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub vtype: ValueType,
    pub values: Vec<Value>,
}

impl Column {
    pub fn new(name: impl Into<String>, vtype: ValueType, values: Vec<Value>) -> Self {
        Self {
            name: name.into(),
            vtype,
            values,
        }
    }
}

/// Columnar, null-free table value.
///
/// Equality is column-wise on `(name, vtype, values)` plus the row count,
/// with floats compared bit-wise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataframe {
    columns: Vec<Column>,
    row_count: usize,
}

impl Dataframe {
    pub fn empty() -> Self {
        Self {
            columns: Vec::new(),
            row_count: 0,
        }
    }

    /// Build a frame from columns; the row count is taken from the first column.
    pub fn new(columns: Vec<Column>) -> Result<Self, DataError> {
        let rows = columns.first().map_or(0, |c| c.values.len());
        Self::with_row_count(rows, columns)
    }

    /// Build a frame with an explicit row count. This is the only way to
    /// express a frame with rows but no columns.
    pub fn with_row_count(row_count: usize, columns: Vec<Column>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for col in &columns {
            if !seen.insert(col.name.as_str()) {
                return Err(DataError::DuplicateColumn(col.name.clone()));
            }
            if col.values.len() != row_count {
                return Err(DataError::LengthMismatch {
                    column: col.name.clone(),
                    expected: row_count,
                    actual: col.values.len(),
                });
            }
            if let Some(row) = col.values.iter().position(|v| !col.vtype.admits(v)) {
                return Err(DataError::TypeMismatch {
                    column: col.name.clone(),
                    row,
                    expected: col.vtype,
                });
            }
        }
        Ok(Self { columns, row_count })
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn into_columns(self) -> Vec<Column> {
        self.columns
    }

    /// Look a column up by exact name.
    pub fn column(&self, name: &str) -> Result<&Column, DataError> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    /// Returns the type and values of the named column, in row order.
    pub fn df_column(&self, name: &str) -> Result<(ValueType, &[Value]), DataError> {
        self.column(name).map(|c| (c.vtype, c.values.as_slice()))
    }

    pub fn row(&self, index: usize) -> Option<Vec<&Value>> {
        (index < self.row_count).then(|| self.columns.iter().map(|c| &c.values[index]).collect())
    }
}
