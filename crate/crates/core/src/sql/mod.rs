//! The SQL subset used to describe the data a dataflow reads.

mod ast;
pub mod corpus;
mod exec;
mod lexer;
mod parser;
mod validate;

use thiserror::Error;

use crate::datamodel::{TableSchema, ValueType};

pub use ast::{CmpOp, Direction, OrderBy, Predicate, Projection, QueryAst};
pub use exec::execute;
pub use parser::parse;
pub use validate::{validate, ValidatedQuery};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SqlError {
    #[error("syntax error at byte {offset}: expected {expected}, found {found}")]
    Syntax {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("unknown table: {0}")]
    UnknownTable(String),
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("duplicate column in projection: {0}")]
    DuplicateColumn(String),
    #[error("column {column} has type {column_type}; cannot compare with {literal_type} literal")]
    TypeMismatch {
        column: String,
        column_type: ValueType,
        literal_type: ValueType,
    },
    #[error("snapshot of {found} does not match query over {expected}")]
    SchemaMismatch { expected: String, found: String },
}

/// Parse and validate in one step.
pub fn prepare(sql: &str, catalog: &[TableSchema]) -> Result<ValidatedQuery, SqlError> {
    validate(&parse(sql)?, catalog)
}
