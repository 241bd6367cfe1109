//! Provider fixture directories.
//!
//! ```text
//! contacts.jsonl   {"contactId", "givenName", "familyName", "phoneNumbers": [..]}
//! photos.jsonl     {"asset", "file", "creationDate", "mediaType"}
//! photos/<file>    raw asset bytes
//! locations.jsonl  {"longitude", "latitude", "timestamp"}
//! keys.jsonl       {"key": "<hex>", "date"}
//! ```
//!
//! Timestamps are integer microseconds since the Unix epoch. A missing file
//! means an empty source.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ContactRecord, DataProvider, KeyRecord, LocationUpdate, PhotoRecord};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ContactLine {
    contact_id: String,
    given_name: String,
    family_name: String,
    phone_numbers: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct PhotoLine {
    asset: String,
    file: String,
    creation_date: i64,
    media_type: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocationLine {
    longitude: f64,
    latitude: f64,
    timestamp: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyLine {
    key: String,
    date: i64,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FixtureError> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(FixtureError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| FixtureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| FixtureError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn load_fixtures(dir: &Path) -> Result<DataProvider, FixtureError> {
    if !dir.is_dir() {
        return Err(FixtureError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "fixture directory not found"),
        });
    }
    let contacts = read_jsonl::<ContactLine>(&dir.join("contacts.jsonl"))?
        .into_iter()
        .map(|c| ContactRecord {
            contact_id: c.contact_id,
            given_name: c.given_name,
            family_name: c.family_name,
            phone_numbers: c.phone_numbers,
        })
        .collect();

    let manifest = dir.join("photos.jsonl");
    let mut photos = Vec::new();
    for (i, p) in read_jsonl::<PhotoLine>(&manifest)?.into_iter().enumerate() {
        if p.file.contains(['/', '\\']) || p.file.starts_with('.') {
            return Err(FixtureError::Parse {
                path: manifest.clone(),
                line: i + 1,
                message: format!("file name {:?} must be a plain name inside photos/", p.file),
            });
        }
        let blob_path = dir.join("photos").join(&p.file);
        let bytes = fs::read(&blob_path).map_err(|source| FixtureError::Io {
            path: blob_path.clone(),
            source,
        })?;
        photos.push(PhotoRecord {
            asset_id: p.asset,
            bytes,
            creation_date: p.creation_date,
            media_type: p.media_type,
        });
    }

    let location_updates = read_jsonl::<LocationLine>(&dir.join("locations.jsonl"))?
        .into_iter()
        .map(|l| LocationUpdate {
            longitude: l.longitude,
            latitude: l.latitude,
            timestamp: l.timestamp,
        })
        .collect();

    let keys_path = dir.join("keys.jsonl");
    let mut keys = Vec::new();
    for (i, k) in read_jsonl::<KeyLine>(&keys_path)?.into_iter().enumerate() {
        let key = hex::decode(&k.key).map_err(|e| FixtureError::Parse {
            path: keys_path.clone(),
            line: i + 1,
            message: format!("key is not hex: {e}"),
        })?;
        keys.push(KeyRecord { key, date: k.date });
    }

    Ok(DataProvider {
        contacts,
        photos,
        location_updates,
        keys,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), FixtureError> {
    let io = |source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Write a provider in the fixture layout. Photo blobs go to `photos/<asset>.bin`.
pub fn write_fixtures(provider: &DataProvider, dir: &Path) -> Result<(), FixtureError> {
    let photos_dir = dir.join("photos");
    fs::create_dir_all(&photos_dir).map_err(|source| FixtureError::Io {
        path: photos_dir.clone(),
        source,
    })?;
    write_jsonl(
        &dir.join("contacts.jsonl"),
        provider.contacts.iter().map(|c| ContactLine {
            contact_id: c.contact_id.clone(),
            given_name: c.given_name.clone(),
            family_name: c.family_name.clone(),
            phone_numbers: c.phone_numbers.clone(),
        }),
    )?;
    let mut lines = Vec::with_capacity(provider.photos.len());
    for p in &provider.photos {
        let file = format!("{}.bin", p.asset_id);
        let path = photos_dir.join(&file);
        fs::write(&path, &p.bytes).map_err(|source| FixtureError::Io { path, source })?;
        lines.push(PhotoLine {
            asset: p.asset_id.clone(),
            file,
            creation_date: p.creation_date,
            media_type: p.media_type.clone(),
        });
    }
    write_jsonl(&dir.join("photos.jsonl"), lines)?;
    write_jsonl(
        &dir.join("locations.jsonl"),
        provider.location_updates.iter().map(|l| LocationLine {
            longitude: l.longitude,
            latitude: l.latitude,
            timestamp: l.timestamp,
        }),
    )?;
    write_jsonl(
        &dir.join("keys.jsonl"),
        provider.keys.iter().map(|k| KeyLine {
            key: hex::encode(&k.key),
            date: k.date,
        }),
    )
}
