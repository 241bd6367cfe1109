//! ESDF, the binary Dataframe encoding used on the offload wire.
//!
//! All integers are little-endian.
//!
//! ```text
//! "ESDF" | version u16 = 1 | n_cols u32 | n_rows u64
//! per column: name_len u16 | name utf8 | type_tag u8 | values
//!   Int64, Float64, Timestamp: 8 bytes per cell (Float64 as IEEE-754 bits)
//!   Text, Bytes:               u32 len | bytes per cell
//!   TextList:                  u16 item_count, then u32 len | bytes per item
//! ```
//!
//! Asset columns are expected to be materialized before encoding; an
//! unmaterialized Asset column is written as Text.

use thiserror::Error;

use crate::datamodel::{Column, Dataframe, Value, ValueType};

pub const MAGIC: &[u8; 4] = b"ESDF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 18;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EsdfError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported ESDF version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated input at byte {offset}")]
    Truncated { offset: usize },
    #[error("column {column} holds fewer values than the header declares")]
    LengthMismatch { column: String },
    #[error("unknown type tag {tag} at byte {offset}")]
    UnknownTypeTag { tag: u8, offset: usize },
    #[error("invalid utf-8 at byte {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("duplicate column {0}")]
    DuplicateColumn(String),
    #[error("{count} trailing bytes after the last column")]
    TrailingBytes { count: usize },
}

fn type_tag(vtype: ValueType) -> u8 {
    match vtype {
        ValueType::Int64 => 1,
        ValueType::Float64 => 2,
        ValueType::Text | ValueType::Asset => 3,
        ValueType::Bytes => 4,
        ValueType::Timestamp => 5,
        ValueType::TextList => 6,
    }
}

fn tag_type(tag: u8) -> Option<ValueType> {
    Some(match tag {
        1 => ValueType::Int64,
        2 => ValueType::Float64,
        3 => ValueType::Text,
        4 => ValueType::Bytes,
        5 => ValueType::Timestamp,
        6 => ValueType::TextList,
        _ => return None,
    })
}

/// Exact encoded size of a frame.
pub fn encoded_len(df: &Dataframe) -> usize {
    let mut n = HEADER_LEN;
    for col in df.columns() {
        n += 2 + col.name.len() + 1;
        for v in &col.values {
            n += match v {
                Value::Int64(_) | Value::Float64(_) | Value::Timestamp(_) => 8,
                Value::Text(s) => 4 + s.len(),
                Value::Bytes(b) => 4 + b.len(),
                Value::TextList(items) => 2 + items.iter().map(|s| 4 + s.len()).sum::<usize>(),
            };
        }
    }
    n
}

/// Encode a frame. Equal frames encode to identical bytes.
///
/// Panics if a name, cell or list exceeds its length field (64 KiB names,
/// 4 GiB cells, 65535 list items).
pub fn serialize_df(df: &Dataframe) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(df));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(df.column_count() as u32).to_le_bytes());
    out.extend_from_slice(&(df.row_count() as u64).to_le_bytes());
    for col in df.columns() {
        let name_len = u16::try_from(col.name.len()).expect("column name fits u16");
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(col.name.as_bytes());
        out.push(type_tag(col.vtype));
        for v in &col.values {
            match v {
                Value::Int64(x) | Value::Timestamp(x) => out.extend_from_slice(&x.to_le_bytes()),
                Value::Float64(x) => out.extend_from_slice(&x.to_bits().to_le_bytes()),
                Value::Text(s) => put_blob(&mut out, s.as_bytes()),
                Value::Bytes(b) => put_blob(&mut out, b),
                Value::TextList(items) => {
                    let count = u16::try_from(items.len()).expect("list length fits u16");
                    out.extend_from_slice(&count.to_le_bytes());
                    for item in items {
                        put_blob(&mut out, item.as_bytes());
                    }
                }
            }
        }
    }
    out
}

fn put_blob(out: &mut Vec<u8>, bytes: &[u8]) {
    let len = u32::try_from(bytes.len()).expect("cell fits u32");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn blob(&mut self) -> Option<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn text(&mut self) -> Result<Option<String>, EsdfError> {
        let Some(n) = self.u32() else { return Ok(None) };
        let start = self.pos;
        let Some(b) = self.take(n as usize) else { return Ok(None) };
        std::str::from_utf8(b)
            .map(|s| Some(s.to_string()))
            .map_err(|_| EsdfError::InvalidUtf8 { offset: start })
    }
}

pub fn deserialize_df(bytes: &[u8]) -> Result<Dataframe, EsdfError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let truncated = |cur: &Cursor| EsdfError::Truncated { offset: cur.pos };

    let magic = cur.take(4).ok_or(EsdfError::Truncated { offset: 0 })?;
    if magic != MAGIC {
        return Err(EsdfError::BadMagic);
    }
    let version = cur.u16().ok_or_else(|| truncated(&cur))?;
    if version != VERSION {
        return Err(EsdfError::UnsupportedVersion(version));
    }
    let n_cols = cur.u32().ok_or_else(|| truncated(&cur))? as usize;
    let n_rows = cur.u64().ok_or_else(|| truncated(&cur))?;
    let n_rows = usize::try_from(n_rows).map_err(|_| truncated(&cur))?;

    // Every cell takes at least two bytes, so this bounds allocations on
    // hostile headers.
    let mut columns: Vec<Column> = Vec::with_capacity(n_cols.min(cur.remaining() / 3));
    for _ in 0..n_cols {
        let name_len = cur.u16().ok_or_else(|| truncated(&cur))? as usize;
        let name_at = cur.pos;
        let name = cur.take(name_len).ok_or_else(|| truncated(&cur))?;
        let name = std::str::from_utf8(name)
            .map_err(|_| EsdfError::InvalidUtf8 { offset: name_at })?
            .to_string();
        if columns.iter().any(|c| c.name == name) {
            return Err(EsdfError::DuplicateColumn(name));
        }
        let tag_at = cur.pos;
        let tag = cur.u8().ok_or_else(|| truncated(&cur))?;
        let vtype = tag_type(tag).ok_or(EsdfError::UnknownTypeTag { tag, offset: tag_at })?;

        let short = || EsdfError::LengthMismatch { column: name.clone() };
        let mut values = Vec::with_capacity(n_rows.min(cur.remaining() / 2));
        for _ in 0..n_rows {
            let v = match vtype {
                ValueType::Int64 => Value::Int64(cur.u64().ok_or_else(short)? as i64),
                ValueType::Timestamp => Value::Timestamp(cur.u64().ok_or_else(short)? as i64),
                ValueType::Float64 => Value::Float64(f64::from_bits(cur.u64().ok_or_else(short)?)),
                ValueType::Text => Value::Text(cur.text()?.ok_or_else(short)?),
                ValueType::Bytes => Value::Bytes(cur.blob().ok_or_else(short)?.to_vec()),
                ValueType::TextList => {
                    let count = cur.u16().ok_or_else(short)?;
                    let mut items = Vec::with_capacity(count as usize);
                    for _ in 0..count {
                        items.push(cur.text()?.ok_or_else(short)?);
                    }
                    Value::TextList(items)
                }
                ValueType::Asset => unreachable!("no tag decodes to Asset"),
            };
            values.push(v);
        }
        columns.push(Column::new(name, vtype, values));
    }
    if cur.remaining() != 0 {
        return Err(EsdfError::TrailingBytes {
            count: cur.remaining(),
        });
    }
    Ok(Dataframe::with_row_count(n_rows, columns).expect("decoded columns are consistent"))
}
