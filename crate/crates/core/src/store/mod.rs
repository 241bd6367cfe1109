//! In-memory personal-data store.
//!
//! Writers are serialized behind one lock and bump a store-wide version.
//! Readers take [`TableSnapshot`]s, which share column storage with the
//! store; a write after a snapshot copies the table first, so a snapshot
//! never changes.

mod fixtures;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{catalog_builtin, find_table, Column, Dataframe, TableSchema, Value, ValueType};

pub use fixtures::{load_fixtures, write_fixtures, FixtureError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("duplicate asset id: {0}")]
    DuplicateAssetId(String),
    #[error("duplicate primary key in {table}: {key}")]
    DuplicatePrimaryKey { table: String, key: String },
    #[error("coordinate out of range: longitude {longitude}, latitude {latitude}")]
    OutOfRangeCoordinate { longitude: f64, latitude: f64 },
    #[error("unknown table: {0}")]
    UnknownTable(String),
    #[error("missing asset: {0}")]
    MissingAsset(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub contact_id: String,
    pub given_name: String,
    pub family_name: String,
    pub phone_numbers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotoRecord {
    pub asset_id: String,
    pub bytes: Vec<u8>,
    pub creation_date: i64,
    pub media_type: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationUpdate {
    pub longitude: f64,
    pub latitude: f64,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub key: Vec<u8>,
    pub date: i64,
}

/// The device-side data sources the store ingests from.
///
/// Location updates are not loaded by [`Store::init`]; the caller feeds them
/// through [`Store::record_location`] to control time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataProvider {
    pub contacts: Vec<ContactRecord>,
    pub photos: Vec<PhotoRecord>,
    pub location_updates: Vec<LocationUpdate>,
    pub keys: Vec<KeyRecord>,
}

/// Asset ID to blob map; blobs never enter the columnar tables.
#[derive(Debug, Clone, Default)]
pub struct AssetStore {
    blobs: HashMap<String, Arc<[u8]>>,
}

impl AssetStore {
    pub fn get(&self, id: &str) -> Option<&[u8]> {
        self.blobs.get(id).map(|b| &**b)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, blob: impl Into<Arc<[u8]>>) -> Result<(), StoreError> {
        let id = id.into();
        if self.blobs.contains_key(&id) {
            return Err(StoreError::DuplicateAssetId(id));
        }
        self.blobs.insert(id, blob.into());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableLoad {
    pub table: String,
    pub row_count: usize,
    pub load_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub tables: Vec<TableLoad>,
}

impl InitReport {
    pub fn table(&self, name: &str) -> Option<&TableLoad> {
        self.tables.iter().find(|t| t.table == name)
    }
}

/// Immutable view of one table at a store version.
#[derive(Debug, Clone)]
pub struct TableSnapshot {
    schema: Arc<TableSchema>,
    columns: Arc<Vec<Vec<Value>>>,
    row_count: usize,
    version: u64,
}

impl TableSnapshot {
    /// Build a free-standing snapshot from row-major data.
    ///
    /// Panics if a row's arity or cell types disagree with the schema.
    pub fn from_rows(schema: TableSchema, rows: Vec<Vec<Value>>, version: u64) -> Self {
        let mut columns = vec![Vec::with_capacity(rows.len()); schema.columns.len()];
        let row_count = rows.len();
        for row in rows {
            assert_eq!(row.len(), schema.columns.len(), "row arity");
            for (i, v) in row.into_iter().enumerate() {
                assert!(schema.columns[i].vtype.admits(&v), "cell type for {}", schema.columns[i].name);
                columns[i].push(v);
            }
        }
        Self {
            schema: Arc::new(schema),
            columns: Arc::new(columns),
            row_count,
            version,
        }
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn columns(&self) -> &[Vec<Value>] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn to_dataframe(&self) -> Dataframe {
        let cols = self
            .schema
            .columns
            .iter()
            .zip(self.columns.iter())
            .map(|(c, v)| Column::new(c.name.clone(), c.vtype, v.clone()))
            .collect();
        Dataframe::with_row_count(self.row_count, cols).expect("snapshot is well formed")
    }

    /// Same schema and cells; versions may differ.
    pub fn same_contents(&self, other: &TableSnapshot) -> bool {
        self.schema == other.schema && self.columns == other.columns
    }
}

#[derive(Debug)]
struct TableState {
    schema: Arc<TableSchema>,
    columns: Arc<Vec<Vec<Value>>>,
    row_count: usize,
}

impl TableState {
    fn new(schema: TableSchema) -> Self {
        let n = schema.columns.len();
        Self {
            schema: Arc::new(schema),
            columns: Arc::new(vec![Vec::new(); n]),
            row_count: 0,
        }
    }

    fn append(&mut self, row: Vec<Value>) {
        let columns = Arc::make_mut(&mut self.columns);
        for (col, v) in columns.iter_mut().zip(row) {
            col.push(v);
        }
        self.row_count += 1;
    }
}

#[derive(Debug)]
struct Tables {
    by_name: Vec<TableState>,
    version: u64,
}

pub struct Store {
    catalog: Vec<TableSchema>,
    tables: RwLock<Tables>,
    assets: AssetStore,
    direct_snapshots: AtomicU64,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("version", &self.version())
            .field("assets", &self.assets.len())
            .finish()
    }
}

impl Store {
    /// Load contacts, photo asset IDs and keys from the provider.
    ///
    /// The Location table starts empty.
    pub fn init(provider: &DataProvider) -> Result<(Store, InitReport), StoreError> {
        let catalog = catalog_builtin();
        let mut tables: Vec<TableState> = catalog.iter().cloned().map(TableState::new).collect();
        let mut report = InitReport::default();
        let index = |name: &str| catalog.iter().position(|t| t.name == name).expect("builtin table");

        let started = Instant::now();
        let contact = &mut tables[index("Contact")];
        let mut seen = HashSet::with_capacity(provider.contacts.len());
        for c in &provider.contacts {
            if !seen.insert(c.contact_id.as_str()) {
                return Err(StoreError::DuplicatePrimaryKey {
                    table: "Contact".into(),
                    key: c.contact_id.clone(),
                });
            }
            contact.append(vec![
                Value::Text(c.contact_id.clone()),
                Value::Text(c.given_name.clone()),
                Value::Text(c.family_name.clone()),
                Value::TextList(c.phone_numbers.clone()),
            ]);
        }
        report.tables.push(TableLoad {
            table: "Contact".into(),
            row_count: contact.row_count,
            load_seconds: started.elapsed().as_secs_f64(),
        });

        let started = Instant::now();
        report.tables.push(TableLoad {
            table: "Location".into(),
            row_count: 0,
            load_seconds: started.elapsed().as_secs_f64(),
        });

        let started = Instant::now();
        let mut assets = AssetStore::default();
        let photos = &mut tables[index("Photos")];
        for p in &provider.photos {
            assets.insert(p.asset_id.clone(), p.bytes.as_slice())?;
            photos.append(vec![
                Value::Text(p.asset_id.clone()),
                Value::Timestamp(p.creation_date),
                Value::Text(p.media_type.clone()),
            ]);
        }
        report.tables.push(TableLoad {
            table: "Photos".into(),
            row_count: photos.row_count,
            load_seconds: started.elapsed().as_secs_f64(),
        });

        let started = Instant::now();
        let keys = &mut tables[index("KeyTable")];
        for k in &provider.keys {
            keys.append(vec![Value::Bytes(k.key.clone()), Value::Timestamp(k.date)]);
        }
        report.tables.push(TableLoad {
            table: "KeyTable".into(),
            row_count: keys.row_count,
            load_seconds: started.elapsed().as_secs_f64(),
        });

        let store = Store {
            catalog,
            tables: RwLock::new(Tables {
                by_name: tables,
                version: 1,
            }),
            assets,
            direct_snapshots: AtomicU64::new(0),
        };
        Ok((store, report))
    }

    pub fn catalog(&self) -> &[TableSchema] {
        &self.catalog
    }

    pub fn assets(&self) -> &AssetStore {
        &self.assets
    }

    pub fn version(&self) -> u64 {
        self.tables.read().version
    }

    /// Append one location fix. Returns the new store version.
    pub fn record_location(&self, longitude: f64, latitude: f64, timestamp: i64) -> Result<u64, StoreError> {
        if !(-180.0..=180.0).contains(&longitude) || !(-90.0..=90.0).contains(&latitude) {
            return Err(StoreError::OutOfRangeCoordinate { longitude, latitude });
        }
        let mut tables = self.tables.write();
        let idx = tables
            .by_name
            .iter()
            .position(|t| t.schema.name == "Location")
            .expect("builtin table");
        tables.by_name[idx].append(vec![
            Value::Float64(longitude),
            Value::Float64(latitude),
            Value::Timestamp(timestamp),
        ]);
        tables.version += 1;
        Ok(tables.version)
    }

    /// Apply a batch of updates, stopping at the first invalid one.
    pub fn record_locations(&self, updates: &[LocationUpdate]) -> Result<u64, StoreError> {
        let mut version = self.version();
        for u in updates {
            version = self.record_location(u.longitude, u.latitude, u.timestamp)?;
        }
        Ok(version)
    }

    /// Consistent read of one table at the current version.
    pub fn snapshot(&self, table: &str) -> Result<TableSnapshot, StoreError> {
        self.direct_snapshots.fetch_add(1, Ordering::Relaxed);
        self.read_table(table)
    }

    /// Number of [`Store::snapshot`] calls made from outside the escrow.
    pub fn direct_snapshot_count(&self) -> u64 {
        self.direct_snapshots.load(Ordering::Relaxed)
    }

    pub(crate) fn read_table(&self, table: &str) -> Result<TableSnapshot, StoreError> {
        let schema = find_table(&self.catalog, table).ok_or_else(|| StoreError::UnknownTable(table.to_string()))?;
        let tables = self.tables.read();
        let state = tables
            .by_name
            .iter()
            .find(|t| t.schema.name == schema.name)
            .expect("catalog and tables agree");
        Ok(TableSnapshot {
            schema: state.schema.clone(),
            columns: state.columns.clone(),
            row_count: state.row_count,
            version: tables.version,
        })
    }
}

/// Replace every Asset column's IDs with the asset bytes.
///
/// The column type becomes `Bytes`; other columns and row order are kept.
pub fn materialize_assets(df: Dataframe, assets: &AssetStore) -> Result<Dataframe, StoreError> {
    if !df.columns().iter().any(|c| c.vtype == ValueType::Asset) {
        return Ok(df);
    }
    let rows = df.row_count();
    let mut out = Vec::with_capacity(df.column_count());
    for col in df.into_columns() {
        if col.vtype != ValueType::Asset {
            out.push(col);
            continue;
        }
        let mut values = Vec::with_capacity(col.values.len());
        for v in &col.values {
            let id = v.as_text().expect("asset column holds ids");
            let blob = assets.get(id).ok_or_else(|| StoreError::MissingAsset(id.to_string()))?;
            values.push(Value::Bytes(blob.to_vec()));
        }
        out.push(Column::new(col.name, ValueType::Bytes, values));
    }
    Ok(Dataframe::with_row_count(rows, out).expect("materialization keeps shape"))
}
