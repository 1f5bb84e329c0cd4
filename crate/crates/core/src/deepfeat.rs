//! Externally computed deep embeddings, keyed by `(image id, pyramid level)`.
//!
//! Each record carries 2000 values: 1000 from the first extractor followed
//! by 1000 from the second. This crate never runs a network; vectors arrive
//! through one of two interchange files.
//!
//! Binary (`.phfd`), all integers little-endian:
//!
//! ```text
//! magic     4 bytes  "PHFD"
//! version   u16      1
//! meta_len  u32
//! meta      meta_len bytes of UTF-8 JSON (see StoreMetadata)
//! records   until end of file:
//!   id_len  u16
//!   id      id_len bytes UTF-8
//!   level   u8       0..=3
//!   values  2000 × f32 (IEEE-754)
//! ```
//!
//! CSV: an optional first line `# <metadata JSON>`, a header
//! `id,level,f0,...,f1999`, then one record per line.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dwt::PYRAMID_LEVELS;
use crate::error::{Error, Result};
use crate::fsutil::{self, Reader};
use crate::imagecore::DatasetManifest;

pub const MAGIC: &[u8; 4] = b"PHFD";
pub const FORMAT_VERSION: u16 = 1;

/// Values per extractor.
pub const EXTRACTOR_DIM: usize = 1000;
/// Values per record.
pub const DEEP_DIM: usize = 2 * EXTRACTOR_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMetadata {
    /// Names of the two extractors, in record order.
    pub extractors: Vec<String>,
    #[serde(default)]
    pub stub: bool,
    #[serde(default)]
    pub created_by: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Anything else the producer recorded (layer choice, resize policy, ...).
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

fn default_dim() -> usize {
    DEEP_DIM
}

impl Default for StoreMetadata {
    fn default() -> Self {
        StoreMetadata {
            extractors: vec!["unknown".into(), "unknown".into()],
            stub: false,
            created_by: String::new(),
            dim: DEEP_DIM,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepFeatureRecord {
    pub id: String,
    pub level: u8,
    pub values: Vec<f32>,
}

impl DeepFeatureRecord {
    fn validate(&self) -> Result<()> {
        if self.level as usize >= PYRAMID_LEVELS {
            return Err(Error::validation(format!(
                "record ({}, {}): level must be 0..={}",
                self.id,
                self.level,
                PYRAMID_LEVELS - 1
            )));
        }
        if self.values.len() != DEEP_DIM {
            return Err(Error::validation(format!(
                "record ({}, {}) has {} values, expected {DEEP_DIM}",
                self.id,
                self.level,
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "record ({}, {}) has a non-finite value at index {i}",
                self.id, self.level
            )));
        }
        Ok(())
    }
}

/// Validated, immutable-after-load collection of deep feature records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeepFeatureStore {
    metadata: StoreMetadata,
    records: BTreeMap<(String, u8), Vec<f32>>,
}

impl DeepFeatureStore {
    pub fn new(metadata: StoreMetadata) -> Self {
        DeepFeatureStore {
            metadata,
            records: BTreeMap::new(),
        }
    }

    pub fn metadata(&self) -> &StoreMetadata {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_stub(&self) -> bool {
        self.metadata.stub
    }

    pub fn insert(&mut self, record: DeepFeatureRecord) -> Result<()> {
        record.validate()?;
        let key = (record.id, record.level);
        if self.records.contains_key(&key) {
            return Err(Error::validation(format!("duplicate record ({}, {})", key.0, key.1)));
        }
        self.records.insert(key, record.values);
        Ok(())
    }

    pub fn lookup(&self, id: &str, level: u8) -> Result<&[f32]> {
        self.records
            .get(&(id.to_string(), level))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingDeep(vec![(id.to_string(), level)]))
    }

    pub fn records(&self) -> impl Iterator<Item = (&str, u8, &[f32])> {
        self.records
            .iter()
            .map(|((id, level), v)| (id.as_str(), *level, v.as_slice()))
    }

    /// Every `(id, level)` the manifest needs but the store lacks.
    pub fn missing_keys(&self, manifest: &DatasetManifest) -> Vec<(String, u8)> {
        let mut missing = Vec::new();
        for entry in manifest.entries() {
            for level in 0..PYRAMID_LEVELS as u8 {
                if !self.records.contains_key(&(entry.id.clone(), level)) {
                    missing.push((entry.id.clone(), level));
                }
            }
        }
        missing
    }

    pub fn check_complete(&self, manifest: &DatasetManifest) -> Result<()> {
        let missing = self.missing_keys(manifest);
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingDeep(missing))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        let mut out = Vec::with_capacity(10 + meta.len() + self.records.len() * (DEEP_DIM * 4 + 32));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        for ((id, level), values) in &self.records {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.push(*level);
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "deep feature store");
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::format("deep feature store: bad magic, expected PHFD"));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "deep feature store: unsupported version {version}"
            )));
        }
        let meta_len = r.u32()? as usize;
        let metadata: StoreMetadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::format(format!("deep feature store metadata: {e}")))?;
        if metadata.dim != DEEP_DIM {
            return Err(Error::validation(format!(
                "deep feature store declares {} values per record, expected {DEEP_DIM}",
                metadata.dim
            )));
        }
        let mut store = DeepFeatureStore::new(metadata);
        while !r.is_empty() {
            let id_len = r.u16()? as usize;
            let id = r.string(id_len)?;
            let level = r.u8()?;
            let payload = r
                .take(DEEP_DIM * 4)
                .map_err(|_| Error::format(format!("deep feature store: truncated record ({id}, {level})")))?;
            let values = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.insert(DeepFeatureRecord { id, level, values })?;
        }
        Ok(store)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# ");
        out.push_str(&serde_json::to_string(&self.metadata).expect("metadata serializes"));
        out.push('\n');
        out.push_str("id,level");
        for i in 0..DEEP_DIM {
            out.push_str(&format!(",f{i}"));
        }
        out.push('\n');
        for ((id, level), values) in &self.records {
            out.push_str(id);
            out.push_str(&format!(",{level}"));
            for v in values {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .peekable();
        let mut metadata = StoreMetadata::default();
        if let Some((_, first)) = lines.peek() {
            if let Some(json) = first.strip_prefix('#') {
                metadata = serde_json::from_str(json.trim())
                    .map_err(|e| Error::format(format!("deep feature CSV metadata: {e}")))?;
                lines.next();
            }
        }
        match lines.next() {
            Some((_, header)) if header.starts_with("id,level") => {}
            _ => return Err(Error::format("deep feature CSV: expected header `id,level,f0,...`")),
        }
        let mut store = DeepFeatureStore::new(metadata);
        for (lineno, line) in lines {
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or_default().trim().to_string();
            let level: u8 = fields
                .next()
                .and_then(|l| l.trim().parse().ok())
                .ok_or_else(|| Error::format(format!("deep feature CSV line {}: bad level", lineno + 1)))?;
            let values = fields
                .map(|f| f.trim().parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(format!("deep feature CSV line {} ({id}, {level}): {e}", lineno + 1)))?;
            store.insert(DeepFeatureRecord { id, level, values })?;
        }
        Ok(store)
    }
}

/// Reads a store, choosing the CSV parser for `.csv` files and the binary
/// format otherwise.
pub fn read_store(path: &Path) -> Result<DeepFeatureStore> {
    let bytes = fsutil::read(path)?;
    if is_csv(path) {
        let text = String::from_utf8(bytes).map_err(|_| Error::format(format!("{}: not UTF-8", path.display())))?;
        DeepFeatureStore::from_csv(&text)
    } else {
        DeepFeatureStore::from_bytes(&bytes)
    }
}

pub fn write_store(store: &DeepFeatureStore, path: &Path) -> Result<()> {
    if is_csv(path) {
        fsutil::write_atomic(path, store.to_csv().as_bytes())
    } else {
        fsutil::write_atomic(path, &store.to_bytes())
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// All-zero records for every manifest image and level, flagged as a stub.
pub fn zero_stub_store(manifest: &DatasetManifest) -> DeepFeatureStore {
    let mut store = DeepFeatureStore::new(StoreMetadata {
        extractors: vec!["stub".into(), "stub".into()],
        stub: true,
        created_by: format!("pyramid-hybrid {}", env!("CARGO_PKG_VERSION")),
        dim: DEEP_DIM,
        extra: BTreeMap::new(),
    });
    for entry in manifest.entries() {
        for level in 0..PYRAMID_LEVELS as u8 {
            store.records.insert((entry.id.clone(), level), vec![0.0; DEEP_DIM]);
        }
    }
    store
}
