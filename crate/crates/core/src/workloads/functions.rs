//! Reference compute functions. External services are replaced by
//! deterministic mocks so outputs can be recomputed independently.

use std::collections::BTreeSet;
use std::hint::black_box;
use std::sync::{Arc, OnceLock};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::synth::{phone_number, PHONE_SPACE};
use crate::compute::{ComputeError, ComputeFn, ComputeRegistry, RunOutput};
use crate::datamodel::{Dataframe, Value, ValueType};
use crate::offload::serialize_df;

pub const IDENTITY: &str = "identity/v1";
pub const CONTACTS_TUPLES: &str = "contacts_tuples/v1";
pub const GET_WEATHER: &str = "get_weather/v1";
pub const CLASSIFY: &str = "classify/v1";
pub const CONTACT_DISCOVERY: &str = "contact_discovery/v1";
pub const COVID_SHARE: &str = "covid_share/v1";

pub const ESDF_CONTENT_TYPE: &str = "application/x-esdf";
pub const TUPLES_CONTENT_TYPE: &str = "application/x-contact-tuples";

/// Hash passes per image in the classify stub.
pub const DEFAULT_CLASSIFY_PASSES: u32 = 4;

const DIRECTORY_SEED: u64 = 0x5167_4e41;
const DIRECTORY_SIZE: usize = 30_000;

fn bad_shape(msg: impl Into<String>) -> ComputeError {
    ComputeError::BadShape(msg.into())
}

fn column<'a>(df: &'a Dataframe, name: &str, ty: ValueType) -> Result<&'a [Value], ComputeError> {
    let (vtype, values) = df.df_column(name).map_err(|e| bad_shape(e.to_string()))?;
    if vtype != ty {
        return Err(bad_shape(format!("column {name} is {vtype}, expected {ty}")));
    }
    Ok(values)
}

/// Copies the dataframe out unchanged.
pub fn wf_identity(df: &Dataframe) -> Result<RunOutput, ComputeError> {
    Ok(RunOutput::new(ESDF_CONTENT_TYPE, serialize_df(df)))
}

/// `u32 count`, then per row: `u32 len | givenName`, `u32 len | familyName`,
/// `u16 n | (u32 len | phone)*n`. Little-endian.
pub fn wf_contacts_to_tuples(df: &Dataframe) -> Result<RunOutput, ComputeError> {
    let given = column(df, "givenName", ValueType::Text)?;
    let family = column(df, "familyName", ValueType::Text)?;
    let phones = column(df, "phoneNumbers", ValueType::TextList)?;

    fn put_str(out: &mut Vec<u8>, s: &str) {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }

    let mut out = Vec::new();
    out.extend_from_slice(&(df.row_count() as u32).to_le_bytes());
    for ((g, f), p) in given.iter().zip(family).zip(phones) {
        let (Value::Text(g), Value::Text(f), Value::TextList(p)) = (g, f, p) else {
            return Err(bad_shape("unexpected value type"));
        };
        put_str(&mut out, g);
        put_str(&mut out, f);
        let n = u16::try_from(p.len()).map_err(|_| bad_shape("too many phone numbers"))?;
        out.extend_from_slice(&n.to_le_bytes());
        for phone in p {
            put_str(&mut out, phone);
        }
    }
    Ok(RunOutput::new(TUPLES_CONTENT_TYPE, out))
}

/// Mock temperature in hundredths of a degree for a location rounded to
/// 0.1 degree: `-3000 + h % 7501`, with `h` the first 8 bytes (LE) of
/// SHA-256(`weather:{lat*10}:{lon*10}`).
pub fn mock_temperature_centi(latitude: f64, longitude: f64) -> i64 {
    let lat = (latitude * 10.0).round() as i64;
    let lon = (longitude * 10.0).round() as i64;
    let digest = Sha256::digest(format!("weather:{lat}:{lon}"));
    let h = u64::from_le_bytes(digest[..8].try_into().unwrap());
    -3000 + (h % 7501) as i64
}

fn format_centi(v: i64) -> String {
    let sign = if v < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", v.abs() / 100, v.abs() % 100)
}

pub fn wf_weather(df: &Dataframe) -> Result<RunOutput, ComputeError> {
    let lat = column(df, "latitude", ValueType::Float64)?;
    let lon = column(df, "longitude", ValueType::Float64)?;
    if df.row_count() != 1 {
        return Err(bad_shape(format!("expected exactly 1 location, got {}", df.row_count())));
    }
    let (Some(lat), Some(lon)) = (lat[0].as_f64(), lon[0].as_f64()) else {
        return Err(bad_shape("coordinates must be floats"));
    };
    let body = format!(
        "{{\"latitude\":{:.1},\"longitude\":{:.1},\"temperature_c\":{}}}",
        (lat * 10.0).round() / 10.0,
        (lon * 10.0).round() / 10.0,
        format_centi(mock_temperature_centi(lat, lon))
    );
    Ok(RunOutput::new("application/json", body.into_bytes()))
}

/// One prediction line for an image:
/// `{index}\tclass-{a} {c1}%\tclass-{b} {c2}%` where, with `d` the SHA-256
/// of the image, `a = u64le(d[0..8]) % 1000`, `b = u64le(d[8..16]) % 1000`
/// (bumped by one if equal to `a`), `c1 = 50 + u16le(d[16..18]) % 5000`
/// hundredths and `c2 = (10000 - c1) * d[18] / 255` hundredths.
pub fn classify_line(index: usize, image: &[u8]) -> String {
    let d = Sha256::digest(image);
    let a = u64::from_le_bytes(d[0..8].try_into().unwrap()) % 1000;
    let mut b = u64::from_le_bytes(d[8..16].try_into().unwrap()) % 1000;
    if b == a {
        b = (b + 1) % 1000;
    }
    let c1 = 5000 + u64::from(u16::from_le_bytes([d[16], d[17]])) % 5000;
    let c2 = (10_000 - c1) * u64::from(d[18]) / 255;
    format!(
        "{index}\tclass-{a} {}%\tclass-{b} {}%",
        format_centi(c1 as i64),
        format_centi(c2 as i64)
    )
}

/// Chained hashing over the image, `passes` times; cost grows with size.
fn busy_work(image: &[u8], passes: u32) -> [u8; 32] {
    let mut acc = [0u8; 32];
    for _ in 0..passes {
        let mut h = Sha256::new();
        h.update(acc);
        h.update(image);
        acc = h.finalize().into();
    }
    black_box(acc)
}

pub fn wf_classify_with(df: &Dataframe, passes: u32) -> Result<RunOutput, ComputeError> {
    if df.column_count() != 1 {
        return Err(bad_shape(format!("expected one image column, got {}", df.column_count())));
    }
    let col = &df.columns()[0];
    if col.vtype != ValueType::Bytes {
        return Err(bad_shape(format!("image column is {}, expected Bytes", col.vtype)));
    }
    let mut out = String::new();
    for (i, v) in col.values.iter().enumerate() {
        let image = v.as_bytes().ok_or_else(|| bad_shape("image is not bytes"))?;
        busy_work(image, passes);
        out.push_str(&classify_line(i, image));
        out.push('\n');
    }
    Ok(RunOutput::new("text/plain", out.into_bytes()))
}

pub fn wf_classify(df: &Dataframe) -> Result<RunOutput, ComputeError> {
    wf_classify_with(df, DEFAULT_CLASSIFY_PASSES)
}

/// The mock service's registered users: numbers drawn from a fixed seed.
pub fn default_directory() -> &'static BTreeSet<String> {
    static DIR: OnceLock<BTreeSet<String>> = OnceLock::new();
    DIR.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(DIRECTORY_SEED);
        (0..DIRECTORY_SIZE).map(|_| phone_number(rng.gen_range(0..PHONE_SPACE))).collect()
    })
}

/// Sorted, de-duplicated numbers found in `directory`, one per line.
pub fn contact_discovery(df: &Dataframe, directory: &BTreeSet<String>) -> Result<RunOutput, ComputeError> {
    let phones = column(df, "phoneNumbers", ValueType::TextList)?;
    let mut found = BTreeSet::new();
    for v in phones {
        let Value::TextList(list) = v else {
            return Err(bad_shape("phoneNumbers is not a list"));
        };
        found.extend(list.iter().filter(|p| directory.contains(*p)).cloned());
    }
    let mut out = String::new();
    for p in found {
        out.push_str(&p);
        out.push('\n');
    }
    Ok(RunOutput::new("text/plain", out.into_bytes()))
}

pub fn wf_contact_discovery(df: &Dataframe) -> Result<RunOutput, ComputeError> {
    contact_discovery(df, default_directory())
}

/// Stand-in for the health authority's key server.
#[derive(Debug, Default)]
pub struct KeySink {
    keys: Mutex<Vec<(Vec<u8>, i64)>>,
}

impl KeySink {
    pub fn global() -> &'static KeySink {
        static SINK: OnceLock<KeySink> = OnceLock::new();
        SINK.get_or_init(KeySink::default)
    }

    pub fn len(&self) -> usize {
        self.keys.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn received(&self) -> Vec<(Vec<u8>, i64)> {
        self.keys.lock().clone()
    }
}

/// Posts the keys to `sink` and answers `{"acknowledged":n}`.
pub fn covid_share(df: &Dataframe, sink: &KeySink) -> Result<RunOutput, ComputeError> {
    let keys = column(df, "key", ValueType::Bytes)?;
    let dates = column(df, "date", ValueType::Timestamp)?;
    let mut batch = Vec::with_capacity(keys.len());
    for (k, d) in keys.iter().zip(dates) {
        let (Value::Bytes(k), Value::Timestamp(d)) = (k, d) else {
            return Err(bad_shape("unexpected key row"));
        };
        batch.push((k.clone(), *d));
    }
    let n = batch.len();
    sink.keys.lock().extend(batch);
    Ok(RunOutput::new("application/json", format!("{{\"acknowledged\":{n}}}").into_bytes()))
}

pub fn wf_covid_share(df: &Dataframe) -> Result<RunOutput, ComputeError> {
    covid_share(df, KeySink::global())
}

/// All reference functions, with classify using `classify_passes`.
pub fn standard_functions(classify_passes: u32) -> Vec<(&'static str, ComputeFn)> {
    vec![
        (IDENTITY, Arc::new(wf_identity) as ComputeFn),
        (CONTACTS_TUPLES, Arc::new(wf_contacts_to_tuples)),
        (GET_WEATHER, Arc::new(wf_weather)),
        (CLASSIFY, Arc::new(move |df: &Dataframe| wf_classify_with(df, classify_passes))),
        (CONTACT_DISCOVERY, Arc::new(wf_contact_discovery)),
        (COVID_SHARE, Arc::new(wf_covid_share)),
    ]
}

pub fn standard_registry() -> ComputeRegistry {
    registry_with_passes(DEFAULT_CLASSIFY_PASSES)
}

pub fn registry_with_passes(classify_passes: u32) -> ComputeRegistry {
    let mut reg = ComputeRegistry::new();
    for (sig, f) in standard_functions(classify_passes) {
        reg.register_arc(sig, f, true).expect("signatures are distinct");
    }
    reg
}
