use std::cmp::Ordering;

use super::ast::{CmpOp, Direction};
use super::validate::{BoundPredicate, ValidatedQuery};
use super::SqlError;
use crate::datamodel::{Column, Dataframe, Value};
use crate::store::TableSnapshot;

/// Run a validated query over a snapshot.
///
/// Filter, then stable sort (ties keep insertion order, `DESC` only flips the
/// comparator), then limit, then project.
pub fn execute(query: &ValidatedQuery, snapshot: &TableSnapshot) -> Result<Dataframe, SqlError> {
    if snapshot.schema() != query.schema() {
        return Err(SqlError::SchemaMismatch {
            expected: query.table().to_string(),
            found: snapshot.schema().name.clone(),
        });
    }
    let columns = snapshot.columns();

    let mut rows: Vec<usize> = match &query.filter {
        Some(pred) => (0..snapshot.row_count())
            .filter(|&row| eval(pred, columns, row))
            .collect(),
        None => (0..snapshot.row_count()).collect(),
    };

    if let Some((col, direction)) = query.order {
        let values = &columns[col];
        match direction {
            Direction::Asc => rows.sort_by(|&a, &b| values[a].compare(&values[b])),
            Direction::Desc => rows.sort_by(|&a, &b| values[a].compare(&values[b]).reverse()),
        }
    }

    if let Some(limit) = query.limit() {
        rows.truncate(usize::try_from(limit).unwrap_or(usize::MAX));
    }

    let schema = query.schema();
    let out = query
        .projection
        .iter()
        .map(|&col| {
            let source = &columns[col];
            Column::new(
                schema.columns[col].name.clone(),
                schema.columns[col].vtype,
                rows.iter().map(|&r| source[r].clone()).collect(),
            )
        })
        .collect();
    Ok(Dataframe::with_row_count(rows.len(), out).expect("projection of a valid snapshot"))
}

fn eval(pred: &BoundPredicate, columns: &[Vec<Value>], row: usize) -> bool {
    match pred {
        BoundPredicate::Compare {
            column,
            op,
            literal,
        } => op_holds(*op, columns[*column][row].compare(literal)),
        BoundPredicate::And(l, r) => eval(l, columns, row) && eval(r, columns, row),
        BoundPredicate::Or(l, r) => eval(l, columns, row) || eval(r, columns, row),
    }
}

fn op_holds(op: CmpOp, ord: Ordering) -> bool {
    match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::catalog_builtin;
    use crate::sql::prepare;
    use crate::store::TableSnapshot;

    fn location(timestamps: &[i64]) -> TableSnapshot {
        let schema = catalog_builtin()[1].clone();
        let rows = timestamps
            .iter()
            .map(|&t| {
                vec![
                    Value::Float64(-87.0 - t as f64 / 10.0),
                    Value::Float64(41.0 + t as f64 / 10.0),
                    Value::Timestamp(t),
                ]
            })
            .collect::<Vec<_>>();
        TableSnapshot::from_rows(schema, rows, 1)
    }

    fn photos(media: &[&str]) -> TableSnapshot {
        let schema = catalog_builtin()[2].clone();
        let rows = media
            .iter()
            .enumerate()
            .map(|(i, m)| {
                vec![
                    Value::Text(format!("p{i}")),
                    // creation dates decrease with insertion order
                    Value::Timestamp(1000 - i as i64),
                    Value::Text(m.to_string()),
                ]
            })
            .collect();
        TableSnapshot::from_rows(schema, rows, 1)
    }

    #[test]
    fn empty_snapshot_keeps_projection() {
        let q = prepare(
            "SELECT longitude, latitude FROM Location ORDER BY timestamp DESC LIMIT 1",
            &catalog_builtin(),
        )
        .unwrap();
        let df = execute(&q, &location(&[])).unwrap();
        assert_eq!(df.row_count(), 0);
        let names: Vec<_> = df.columns().iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["longitude", "latitude"]);
    }

    #[test]
    fn latest_location_with_desc() {
        let q = prepare(
            "SELECT longitude, latitude, timestamp FROM Location ORDER BY timestamp DESC LIMIT 1",
            &catalog_builtin(),
        )
        .unwrap();
        let df = execute(&q, &location(&[2, 3, 1])).unwrap();
        assert_eq!(df.row_count(), 1);
        assert_eq!(df.df_column("timestamp").unwrap().1, &[Value::Timestamp(3)]);
        assert_eq!(df.df_column("latitude").unwrap().1, &[Value::Float64(41.3)]);
    }

    #[test]
    fn image_filter_orders_by_creation_date() {
        let q = prepare(
            "SELECT asset FROM Photos WHERE mediaType=='image' ORDER BY creationDate",
            &catalog_builtin(),
        )
        .unwrap();
        let df = execute(&q, &photos(&["image", "video", "image"])).unwrap();
        assert_eq!(
            df.df_column("asset").unwrap().1,
            &[Value::Text("p2".into()), Value::Text("p0".into())]
        );
    }

    #[test]
    fn ties_keep_insertion_order_in_both_directions() {
        let asc = prepare("SELECT * FROM Location ORDER BY latitude", &catalog_builtin()).unwrap();
        let desc = prepare("SELECT * FROM Location ORDER BY latitude DESC", &catalog_builtin()).unwrap();
        let schema = catalog_builtin()[1].clone();
        let rows: Vec<Vec<Value>> = [(1.0, 1), (0.0, 2), (1.0, 3), (0.0, 4)]
            .iter()
            .map(|&(lat, t)| vec![Value::Float64(0.0), Value::Float64(lat), Value::Timestamp(t)])
            .collect();
        let snap = TableSnapshot::from_rows(schema, rows, 1);
        let ts = |df: Dataframe| df.df_column("timestamp").unwrap().1.to_vec();
        let t = |v: &[i64]| v.iter().map(|&x| Value::Timestamp(x)).collect::<Vec<_>>();
        assert_eq!(ts(execute(&asc, &snap).unwrap()), t(&[2, 4, 1, 3]));
        assert_eq!(ts(execute(&desc, &snap).unwrap()), t(&[1, 3, 2, 4]));
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let q = prepare("SELECT * FROM Location", &catalog_builtin()).unwrap();
        assert!(matches!(
            execute(&q, &photos(&[])),
            Err(SqlError::SchemaMismatch { .. })
        ));
    }
}
