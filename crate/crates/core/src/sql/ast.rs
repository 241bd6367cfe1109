use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datamodel::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Predicate {
    Compare {
        column: String,
        op: CmpOp,
        literal: Value,
    },
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
    Paren(Box<Predicate>),
}

impl Predicate {
    pub fn compare(column: impl Into<String>, op: CmpOp, literal: Value) -> Self {
        Predicate::Compare {
            column: column.into(),
            op,
            literal,
        }
    }

    pub fn and(self, rhs: Predicate) -> Self {
        Predicate::And(Box::new(self), Box::new(rhs))
    }

    pub fn or(self, rhs: Predicate) -> Self {
        Predicate::Or(Box::new(self), Box::new(rhs))
    }

    pub fn paren(self) -> Self {
        Predicate::Paren(Box::new(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderBy {
    pub column: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Projection {
    All,
    Columns(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAst {
    pub projection: Projection,
    pub table: String,
    pub filter: Option<Predicate>,
    pub order_by: Option<OrderBy>,
    pub limit: Option<u64>,
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Compare {
                column,
                op,
                literal,
            } => {
                write!(f, "{column} {} ", op.symbol())?;
                write_literal(f, literal)
            }
            Predicate::And(l, r) => write!(f, "{l} AND {r}"),
            Predicate::Or(l, r) => write!(f, "{l} OR {r}"),
            Predicate::Paren(p) => write!(f, "({p})"),
        }
    }
}

fn write_literal(f: &mut fmt::Formatter<'_>, literal: &Value) -> fmt::Result {
    match literal {
        Value::Int64(v) | Value::Timestamp(v) => write!(f, "{v}"),
        Value::Float64(v) => {
            // Display gives the shortest round-tripping digits; keep a '.' so
            // the lexer reads it back as a float.
            let s = v.to_string();
            if s.contains(['.', 'e', 'E']) {
                f.write_str(&s)
            } else {
                write!(f, "{s}.0")
            }
        }
        Value::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
        Value::Bytes(b) => write!(f, "X'{}'", hex::encode(b)),
        Value::TextList(items) => {
            // Not expressible in the grammar; rendered for diagnostics only.
            write!(f, "[{}]", items.join(", "))
        }
    }
}

/// Renders the query in canonical form: upper-case keywords, single spaces.
impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        match &self.projection {
            Projection::All => f.write_str("*")?,
            Projection::Columns(cols) => f.write_str(&cols.join(", "))?,
        }
        write!(f, " FROM {}", self.table)?;
        if let Some(pred) = &self.filter {
            write!(f, " WHERE {pred}")?;
        }
        if let Some(order) = &self.order_by {
            let dir = match order.direction {
                Direction::Asc => "ASC",
                Direction::Desc => "DESC",
            };
            write!(f, " ORDER BY {} {dir}", order.column)?;
        }
        if let Some(limit) = self.limit {
            write!(f, " LIMIT {limit}")?;
        }
        Ok(())
    }
}
