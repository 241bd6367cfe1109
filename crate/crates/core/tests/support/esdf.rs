//! Arbitrary Dataframes over every encodable column type.

use escrow_core::datamodel::{Column, Dataframe, Value, ValueType};
use escrow_core::offload::{deserialize_df, serialize_df};
use proptest::prelude::*;

const TYPES: [ValueType; 6] = [
    ValueType::Int64,
    ValueType::Float64,
    ValueType::Text,
    ValueType::Bytes,
    ValueType::Timestamp,
    ValueType::TextList,
];

fn value(ty: ValueType) -> BoxedStrategy<Value> {
    match ty {
        ValueType::Int64 => any::<i64>().prop_map(Value::Int64).boxed(),
        // arbitrary bit patterns, NaN payloads included
        ValueType::Float64 => any::<u64>().prop_map(|b| Value::Float64(f64::from_bits(b))).boxed(),
        ValueType::Text => ".{0,12}".prop_map(Value::Text).boxed(),
        ValueType::Bytes => prop::collection::vec(any::<u8>(), 0..40).prop_map(Value::Bytes).boxed(),
        ValueType::Timestamp => any::<i64>().prop_map(Value::Timestamp).boxed(),
        ValueType::TextList => prop::collection::vec(".{0,6}", 0..4).prop_map(Value::TextList).boxed(),
        ValueType::Asset => unreachable!(),
    }
}

pub fn dataframe() -> impl Strategy<Value = Dataframe> {
    (0usize..6, 0usize..20).prop_flat_map(|(ncols, nrows)| {
        prop::collection::vec(prop::sample::select(TYPES.to_vec()), ncols).prop_flat_map(move |types| {
            let cols: Vec<_> = types
                .into_iter()
                .enumerate()
                .map(|(i, ty)| {
                    prop::collection::vec(value(ty), nrows)
                        .prop_map(move |values| Column::new(format!("c{i}"), ty, values))
                })
                .collect();
            cols.prop_map(move |cols| Dataframe::with_row_count(nrows, cols).unwrap())
        })
    })
}

/// Decode what was encoded and re-encode it to the same bytes.
pub fn check_round_trip(df: &Dataframe) -> Result<(), String> {
    let bytes = serialize_df(df);
    let back = deserialize_df(&bytes).map_err(|e| e.to_string())?;
    if &back != df {
        return Err(format!("decoded frame differs: {df:?}"));
    }
    if serialize_df(&back) != bytes {
        return Err("re-encoding is not byte-stable".into());
    }
    Ok(())
}
