use super::ast::{CmpOp, Direction, OrderBy, Predicate, Projection, QueryAst};
use super::SqlError;
use crate::datamodel::{find_table, TableSchema, Value, ValueType};

/// A query whose names are resolved against a schema.
///
/// Table and column names are matched ASCII case-insensitively and rewritten
/// to their catalog spelling; `*` is expanded in schema order and literals are
/// promoted to the column type.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedQuery {
    ast: QueryAst,
    schema: TableSchema,
    pub(crate) projection: Vec<usize>,
    pub(crate) filter: Option<BoundPredicate>,
    pub(crate) order: Option<(usize, Direction)>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum BoundPredicate {
    Compare { column: usize, op: CmpOp, literal: Value },
    And(Box<BoundPredicate>, Box<BoundPredicate>),
    Or(Box<BoundPredicate>, Box<BoundPredicate>),
}

impl ValidatedQuery {
    pub fn ast(&self) -> &QueryAst {
        &self.ast
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn table(&self) -> &str {
        &self.schema.name
    }

    /// Tables read by this query. Always a single table.
    pub fn tables_touched(&self) -> Vec<String> {
        vec![self.schema.name.clone()]
    }

    pub fn limit(&self) -> Option<u64> {
        self.ast.limit
    }

    /// Canonical text of the resolved query.
    pub fn normalized(&self) -> String {
        self.ast.to_string()
    }
}

pub fn validate(ast: &QueryAst, catalog: &[TableSchema]) -> Result<ValidatedQuery, SqlError> {
    let schema = find_table(catalog, &ast.table)
        .ok_or_else(|| SqlError::UnknownTable(ast.table.clone()))?
        .clone();

    let resolve = |name: &str| {
        schema
            .column_index(name)
            .ok_or_else(|| SqlError::UnknownColumn(name.to_string()))
    };

    let projection: Vec<usize> = match &ast.projection {
        Projection::All => (0..schema.columns.len()).collect(),
        Projection::Columns(cols) => {
            let mut idx = Vec::with_capacity(cols.len());
            for name in cols {
                let i = resolve(name)?;
                if idx.contains(&i) {
                    return Err(SqlError::DuplicateColumn(schema.columns[i].name.clone()));
                }
                idx.push(i);
            }
            idx
        }
    };

    let (filter, bound) = match &ast.filter {
        Some(pred) => {
            let (p, b) = bind(pred, &schema)?;
            (Some(p), Some(b))
        }
        None => (None, None),
    };

    let order_by = match &ast.order_by {
        Some(o) => {
            let i = resolve(&o.column)?;
            Some((i, o.direction))
        }
        None => None,
    };

    let canonical = QueryAst {
        projection: Projection::Columns(
            projection
                .iter()
                .map(|&i| schema.columns[i].name.clone())
                .collect(),
        ),
        table: schema.name.clone(),
        filter,
        order_by: order_by.map(|(i, direction)| OrderBy {
            column: schema.columns[i].name.clone(),
            direction,
        }),
        limit: ast.limit,
    };

    Ok(ValidatedQuery {
        ast: canonical,
        schema,
        projection,
        filter: bound,
        order: order_by,
    })
}

fn bind(pred: &Predicate, schema: &TableSchema) -> Result<(Predicate, BoundPredicate), SqlError> {
    Ok(match pred {
        Predicate::Compare {
            column,
            op,
            literal,
        } => {
            let idx = schema
                .column_index(column)
                .ok_or_else(|| SqlError::UnknownColumn(column.clone()))?;
            let col = &schema.columns[idx];
            let literal = promote(literal, col.vtype).ok_or_else(|| SqlError::TypeMismatch {
                column: col.name.clone(),
                column_type: col.vtype,
                literal_type: literal.value_type(),
            })?;
            (
                Predicate::compare(col.name.clone(), *op, literal.clone()),
                BoundPredicate::Compare {
                    column: idx,
                    op: *op,
                    literal,
                },
            )
        }
        Predicate::And(l, r) => {
            let (lp, lb) = bind(l, schema)?;
            let (rp, rb) = bind(r, schema)?;
            (lp.and(rp), BoundPredicate::And(Box::new(lb), Box::new(rb)))
        }
        Predicate::Or(l, r) => {
            let (lp, lb) = bind(l, schema)?;
            let (rp, rb) = bind(r, schema)?;
            (lp.or(rp), BoundPredicate::Or(Box::new(lb), Box::new(rb)))
        }
        Predicate::Paren(inner) => {
            let (p, b) = bind(inner, schema)?;
            (p.paren(), b)
        }
    })
}

/// Coerce a parsed literal to the column's cell representation.
fn promote(literal: &Value, column: ValueType) -> Option<Value> {
    match (column, literal) {
        (ValueType::Int64, Value::Int64(v)) => Some(Value::Int64(*v)),
        (ValueType::Float64, Value::Float64(v)) => Some(Value::Float64(*v)),
        (ValueType::Float64, Value::Int64(v)) => Some(Value::Float64(*v as f64)),
        (ValueType::Timestamp, Value::Int64(v)) => Some(Value::Timestamp(*v)),
        (ValueType::Timestamp, Value::Timestamp(v)) => Some(Value::Timestamp(*v)),
        (ValueType::Text | ValueType::Asset, Value::Text(s)) => Some(Value::Text(s.clone())),
        (ValueType::Bytes, Value::Bytes(b)) => Some(Value::Bytes(b.clone())),
        _ => None,
    }
}
