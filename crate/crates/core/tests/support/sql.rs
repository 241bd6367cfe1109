//! Random `Sample` tables and queries, plus a naive row-loop evaluator.

use std::cmp::Ordering;

use escrow_core::datamodel::{ColumnSchema, TableSchema, Value, ValueType};
use proptest::prelude::*;

pub const COLS: [(&str, ValueType); 6] = [
    ("id", ValueType::Int64),
    ("score", ValueType::Float64),
    ("label", ValueType::Text),
    ("blob", ValueType::Bytes),
    ("ts", ValueType::Timestamp),
    ("tags", ValueType::TextList),
];

pub fn schema() -> TableSchema {
    TableSchema::new(
        "Sample",
        COLS.iter().map(|(n, t)| ColumnSchema::new(*n, *t)).collect(),
        None,
    )
    .unwrap()
}

#[derive(Debug, Clone)]
pub enum Lit {
    Int(i64),
    Float(f64),
    Text(String),
    Hex(Vec<u8>),
}

#[derive(Debug, Clone)]
pub enum Pred {
    Leaf { col: usize, op: &'static str, lit: Lit },
    And(Box<Pred>, Box<Pred>),
    Or(Box<Pred>, Box<Pred>),
}

#[derive(Debug, Clone)]
pub struct Query {
    pub projection: Option<Vec<usize>>,
    pub filter: Option<Pred>,
    pub order: Option<(usize, bool)>,
    pub limit: Option<u64>,
    // rendering noise
    pub upper_keywords: bool,
    pub shout_names: bool,
    pub extra_parens: Vec<bool>,
}

// ---- generators -------------------------------------------------------

fn text_value() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["", "a", "b", "ab", "B", "O'Brien", "é"]).prop_map(String::from)
}

fn float_value() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![-2.5, -0.0, 0.0, 0.5, 1.0, 3.0, f64::NAN, f64::INFINITY, -1e-3])
}

fn cell(ty: ValueType) -> BoxedStrategy<Value> {
    match ty {
        ValueType::Int64 => (-4i64..4).prop_map(Value::Int64).boxed(),
        ValueType::Float64 => float_value().prop_map(Value::Float64).boxed(),
        ValueType::Text => text_value().prop_map(Value::Text).boxed(),
        ValueType::Bytes => prop::collection::vec(0u8..3, 0..3).prop_map(Value::Bytes).boxed(),
        ValueType::Timestamp => (0i64..6).prop_map(Value::Timestamp).boxed(),
        ValueType::TextList => prop::collection::vec(text_value(), 0..3).prop_map(Value::TextList).boxed(),
        ValueType::Asset => unreachable!(),
    }
}

pub fn row() -> impl Strategy<Value = Vec<Value>> {
    COLS.iter().map(|(_, t)| cell(*t)).collect::<Vec<_>>()
}

fn literal_for(col: usize) -> BoxedStrategy<Lit> {
    match COLS[col].1 {
        ValueType::Int64 | ValueType::Timestamp => (-5i64..7).prop_map(Lit::Int).boxed(),
        ValueType::Float64 => prop_oneof![
            prop::sample::select(vec![-2.5, 0.0, 0.5, 1.0, 2.75, -1e-3]).prop_map(Lit::Float),
            (-3i64..4).prop_map(Lit::Int),
        ]
        .boxed(),
        ValueType::Text => text_value().prop_map(Lit::Text).boxed(),
        ValueType::Bytes => prop::collection::vec(0u8..3, 0..3).prop_map(Lit::Hex).boxed(),
        _ => unreachable!(),
    }
}

fn leaf() -> impl Strategy<Value = Pred> {
    // the list column is not comparable
    (0usize..5)
        .prop_flat_map(|col| {
            (
                Just(col),
                prop::sample::select(vec!["=", "==", "!=", "<>", "<", "<=", ">", ">="]),
                literal_for(col),
            )
        })
        .prop_map(|(col, op, lit)| Pred::Leaf { col, op, lit })
}

fn predicate() -> impl Strategy<Value = Pred> {
    leaf().prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Pred::And(Box::new(a), Box::new(b))),
            (inner.clone(), inner).prop_map(|(a, b)| Pred::Or(Box::new(a), Box::new(b))),
        ]
    })
}

pub fn query() -> impl Strategy<Value = Query> {
    (
        prop::option::of(
            (Just((0..COLS.len()).collect::<Vec<usize>>()).prop_shuffle(), 1..=COLS.len()).prop_map(
                |(mut cols, n)| {
                    cols.truncate(n);
                    cols
                },
            ),
        ),
        prop::option::of(predicate()),
        prop::option::of((0usize..COLS.len(), any::<bool>())),
        prop::option::of(0u64..25),
        any::<bool>(),
        any::<bool>(),
        prop::collection::vec(any::<bool>(), 16),
    )
        .prop_map(|(projection, filter, order, limit, upper_keywords, shout_names, extra_parens)| Query {
            projection,
            filter,
            order,
            limit,
            upper_keywords,
            shout_names,
            extra_parens,
        })
}

// ---- rendering --------------------------------------------------------

fn render_lit(lit: &Lit) -> String {
    match lit {
        Lit::Int(i) => i.to_string(),
        Lit::Float(f) => format!("{f:?}"),
        Lit::Text(s) => format!("'{}'", s.replace('\'', "''")),
        Lit::Hex(b) => format!("X'{}'", hex::encode(b)),
    }
}

impl Query {
    fn kw(&self, k: &str) -> String {
        if self.upper_keywords {
            k.to_string()
        } else {
            k.to_ascii_lowercase()
        }
    }

    fn name(&self, col: usize) -> String {
        if self.shout_names {
            COLS[col].0.to_ascii_uppercase()
        } else {
            COLS[col].0.to_string()
        }
    }

    fn render_pred(&self, p: &Pred, counter: &mut usize) -> String {
        *counter += 1;
        let paren = self.extra_parens[*counter % self.extra_parens.len()];
        let text = match p {
            Pred::Leaf { col, op, lit } => format!("{} {op} {}", self.name(*col), render_lit(lit)),
            Pred::And(a, b) => {
                // OR binds looser than AND, so OR operands need parentheses here
                let wrap = |q: &Pred, s: String| match q {
                    Pred::Or(..) => format!("({s})"),
                    _ => s,
                };
                let l = self.render_pred(a, counter);
                let r = self.render_pred(b, counter);
                let r = if matches!(**b, Pred::And(..)) { format!("({r})") } else { r };
                format!("{} {} {}", wrap(a, l), self.kw("AND"), wrap(b, r))
            }
            Pred::Or(a, b) => {
                let l = self.render_pred(a, counter);
                let r = self.render_pred(b, counter);
                let r = if matches!(**b, Pred::Or(..)) { format!("({r})") } else { r };
                format!("{l} {} {r}", self.kw("OR"))
            }
        };
        if paren {
            format!("({text})")
        } else {
            text
        }
    }

    pub fn render(&self) -> String {
        let proj = match &self.projection {
            None => "*".to_string(),
            Some(cols) => cols.iter().map(|&c| self.name(c)).collect::<Vec<_>>().join(", "),
        };
        let table = if self.shout_names { "SAMPLE" } else { "Sample" };
        let mut sql = format!("{} {proj} {} {table}", self.kw("SELECT"), self.kw("FROM"));
        if let Some(p) = &self.filter {
            sql += &format!(" {} {}", self.kw("WHERE"), self.render_pred(p, &mut 0));
        }
        if let Some((col, desc)) = self.order {
            sql += &format!(" {} {} {}", self.kw("ORDER"), self.kw("BY"), self.name(col));
            if desc {
                sql += &format!(" {}", self.kw("DESC"));
            } else if self.upper_keywords {
                sql += " ASC";
            }
        }
        if let Some(n) = self.limit {
            sql += &format!(" {} {n}", self.kw("LIMIT"));
        }
        sql
    }
}

// ---- oracle -----------------------------------------------------------

fn oracle_cmp(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Int64(x), Value::Int64(y)) | (Value::Timestamp(x), Value::Timestamp(y)) => x.cmp(y),
        (Value::Float64(x), Value::Float64(y)) => x.total_cmp(y),
        (Value::Text(x), Value::Text(y)) => x.cmp(y),
        (Value::Bytes(x), Value::Bytes(y)) => x.cmp(y),
        (Value::TextList(x), Value::TextList(y)) => x.cmp(y),
        _ => panic!("oracle compared {a:?} with {b:?}"),
    }
}

fn lit_as(lit: &Lit, ty: ValueType) -> Value {
    match (lit, ty) {
        (Lit::Int(i), ValueType::Int64) => Value::Int64(*i),
        (Lit::Int(i), ValueType::Timestamp) => Value::Timestamp(*i),
        (Lit::Int(i), ValueType::Float64) => Value::Float64(*i as f64),
        (Lit::Float(f), ValueType::Float64) => Value::Float64(*f),
        (Lit::Text(s), ValueType::Text) => Value::Text(s.clone()),
        (Lit::Hex(b), ValueType::Bytes) => Value::Bytes(b.clone()),
        _ => panic!("literal {lit:?} does not fit {ty:?}"),
    }
}

fn holds(p: &Pred, row: &[Value]) -> bool {
    match p {
        Pred::Leaf { col, op, lit } => {
            let ord = oracle_cmp(&row[*col], &lit_as(lit, COLS[*col].1));
            match *op {
                "=" | "==" => ord == Ordering::Equal,
                "!=" | "<>" => ord != Ordering::Equal,
                "<" => ord == Ordering::Less,
                "<=" => ord != Ordering::Greater,
                ">" => ord == Ordering::Greater,
                ">=" => ord != Ordering::Less,
                _ => unreachable!(),
            }
        }
        Pred::And(a, b) => holds(a, row) && holds(b, row),
        Pred::Or(a, b) => holds(a, row) || holds(b, row),
    }
}

pub fn oracle(q: &Query, rows: &[Vec<Value>]) -> Vec<Vec<Value>> {
    let mut kept: Vec<&Vec<Value>> = rows
        .iter()
        .filter(|r| q.filter.as_ref().is_none_or(|p| holds(p, r)))
        .collect();
    if let Some((col, desc)) = q.order {
        // insertion sort: stable by construction
        let mut sorted: Vec<&Vec<Value>> = Vec::with_capacity(kept.len());
        for r in kept {
            let pos = sorted
                .iter()
                .position(|s| {
                    let ord = oracle_cmp(&r[col], &s[col]);
                    if desc {
                        ord == Ordering::Greater
                    } else {
                        ord == Ordering::Less
                    }
                })
                .unwrap_or(sorted.len());
            sorted.insert(pos, r);
        }
        kept = sorted;
    }
    if let Some(n) = q.limit {
        kept.truncate(n as usize);
    }
    let cols: Vec<usize> = q.projection.clone().unwrap_or_else(|| (0..COLS.len()).collect());
    cols.iter().map(|&c| kept.iter().map(|r| r[c].clone()).collect()).collect()
}


/// Run `q` through the engine and compare with the oracle, names included.
pub fn check(q: &Query, rows: &[Vec<Value>]) -> Result<(), String> {
    let sql_text = q.render();
    let validated = escrow_core::sql::prepare(&sql_text, &[schema()]).map_err(|e| format!("{sql_text}: {e}"))?;
    let snapshot = escrow_core::store::TableSnapshot::from_rows(schema(), rows.to_vec(), 1);
    let df = escrow_core::sql::execute(&validated, &snapshot).map_err(|e| format!("{sql_text}: {e}"))?;

    let got: Vec<Vec<Value>> = df.columns().iter().map(|c| c.values.clone()).collect();
    if got != oracle(q, rows) {
        return Err(format!("{sql_text}: result differs from oracle"));
    }
    let names: Vec<&str> = df.columns().iter().map(|c| c.name.as_str()).collect();
    let expected: Vec<&str> = q
        .projection
        .clone()
        .unwrap_or_else(|| (0..COLS.len()).collect())
        .iter()
        .map(|&c| COLS[c].0)
        .collect();
    if names != expected {
        return Err(format!("{sql_text}: columns {names:?}, expected {expected:?}"));
    }
    Ok(())
}
