//! Per-image feature fusion over the wavelet pyramid.
//!
//! Every pyramid level contributes 2945 columns in a fixed order: the 1000
//! values of deep extractor A, the 1000 of extractor B, then for channels
//! R, G, B in turn the 256-bin LPQ histogram followed by the 59-bin LBP
//! histogram. Levels are concatenated raw first, giving 11,780 columns.

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deepfeat::{DeepFeatureStore, EXTRACTOR_DIM};
use crate::dwt::{build_pyramid, texture_plane, PyramidLevel, Wavelet, PYRAMID_LEVELS};
use crate::error::{Error, Result};
use crate::fsutil::{self, Reader};
use crate::imagecore::{decode_image, Channel, DatasetManifest, Image, Label};
use crate::lbp::{lbp_histogram, LBP_BINS};
use crate::lpq::{lpq_histogram, LpqConfig, LPQ_BINS};
use crate::scalar::Scalar;

pub const CHANNEL_TEXTURAL_DIM: usize = LPQ_BINS + LBP_BINS;
pub const TEXTURAL_DIM: usize = 3 * CHANNEL_TEXTURAL_DIM;
pub const LEVEL_DIM: usize = 2 * EXTRACTOR_DIM + TEXTURAL_DIM;
pub const FEATURE_DIM: usize = PYRAMID_LEVELS * LEVEL_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    DeepA,
    DeepB,
    Lpq,
    Lbp,
}

impl Source {
    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Source::DeepA,
            1 => Source::DeepB,
            2 => Source::Lpq,
            3 => Source::Lbp,
            _ => return Err(Error::format(format!("unknown column source code {code}"))),
        })
    }

    pub fn is_deep(self) -> bool {
        matches!(self, Source::DeepA | Source::DeepB)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::DeepA => "deepA",
            Source::DeepB => "deepB",
            Source::Lpq => "lpq",
            Source::Lbp => "lbp",
        })
    }
}

/// Provenance of one feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnDescriptor {
    pub source: Source,
    pub level: u8,
    pub channel: Option<Channel>,
    pub local: u16,
}

impl fmt::Display for ColumnDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.channel {
            Some(c) => write!(f, "{}_L{}_{}_{}", self.source, self.level, c, self.local),
            None => write!(f, "{}_L{}_{}", self.source, self.level, self.local),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    columns: Vec<ColumnDescriptor>,
}

impl FeatureLayout {
    /// The fixed 11,780-column layout.
    pub fn standard() -> Self {
        let mut columns = Vec::with_capacity(FEATURE_DIM);
        for level in 0..PYRAMID_LEVELS as u8 {
            for source in [Source::DeepA, Source::DeepB] {
                columns.extend((0..EXTRACTOR_DIM as u16).map(|local| ColumnDescriptor {
                    source,
                    level,
                    channel: None,
                    local,
                }));
            }
            for channel in Channel::ALL {
                for (source, bins) in [(Source::Lpq, LPQ_BINS), (Source::Lbp, LBP_BINS)] {
                    columns.extend((0..bins as u16).map(|local| ColumnDescriptor {
                        source,
                        level,
                        channel: Some(channel),
                        local,
                    }));
                }
            }
        }
        debug_assert_eq!(columns.len(), FEATURE_DIM);
        FeatureLayout { columns }
    }

    pub fn from_columns(columns: Vec<ColumnDescriptor>) -> Self {
        FeatureLayout { columns }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[ColumnDescriptor] {
        &self.columns
    }

    pub fn get(&self, index: usize) -> Option<&ColumnDescriptor> {
        self.columns.get(index)
    }

    /// Inverse of [`Self::get`] for the standard layout, computed arithmetically.
    pub fn standard_index(desc: &ColumnDescriptor) -> Option<usize> {
        let level = desc.level as usize;
        let local = desc.local as usize;
        if level >= PYRAMID_LEVELS {
            return None;
        }
        let base = level * LEVEL_DIM;
        let offset = match (desc.source, desc.channel) {
            (Source::DeepA, None) if local < EXTRACTOR_DIM => local,
            (Source::DeepB, None) if local < EXTRACTOR_DIM => EXTRACTOR_DIM + local,
            (Source::Lpq, Some(c)) if local < LPQ_BINS => 2 * EXTRACTOR_DIM + c.index() * CHANNEL_TEXTURAL_DIM + local,
            (Source::Lbp, Some(c)) if local < LBP_BINS => {
                2 * EXTRACTOR_DIM + c.index() * CHANNEL_TEXTURAL_DIM + LPQ_BINS + local
            }
            _ => return None,
        };
        Some(base + offset)
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.columns.len() * 5);
        for c in &self.columns {
            out.push(c.source.code());
            out.push(c.level);
            out.push(c.channel.map_or(0, |ch| ch.index() as u8 + 1));
            out.extend_from_slice(&c.local.to_le_bytes());
        }
        out
    }

    /// Short digest identifying this exact column layout.
    pub fn hash(&self) -> String {
        fsutil::sha256_hex(&self.encode())[..16].to_string()
    }

    pub fn select(&self, indices: &[usize]) -> FeatureLayout {
        FeatureLayout {
            columns: indices.iter().map(|&i| self.columns[i]).collect(),
        }
    }
}

/// Settings that change extracted values; hashed into cache keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FeatureConfig {
    pub lpq: LpqConfig,
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.lpq.validate()
    }

    pub fn hash(&self) -> String {
        let json =
            serde_json::to_string(&(self, "db4-periodic", env!("CARGO_PKG_VERSION"))).expect("config serializes");
        fsutil::sha256_hex(json.as_bytes())[..16].to_string()
    }
}

/// LPQ then LBP histogram for each of R, G, B: 945 values.
pub fn textural_features<T: Scalar>(level: &PyramidLevel<T>, lpq: &LpqConfig) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(TEXTURAL_DIM);
    for plane in level {
        let lpq_hist = lpq_histogram(plane, lpq)?;
        out.extend(lpq_hist.bins.iter().map(|&b| T::of(b as f64)));
        let lbp_hist = lbp_histogram(plane)?;
        out.extend(lbp_hist.bins.iter().map(|&b| T::of(b as f64)));
    }
    Ok(out)
}

/// Textural part of all four levels (4 × 945 values).
pub fn pyramid_textural_features<T: Scalar>(img: &Image, cfg: &FeatureConfig) -> Result<Vec<T>> {
    let pyramid = build_pyramid(img, &Wavelet::<T>::db4())?;
    let mut out = Vec::with_capacity(PYRAMID_LEVELS * TEXTURAL_DIM);
    for (k, level) in pyramid.levels().iter().enumerate() {
        let planes = level.clone().map(|p| texture_plane(k, &p));
        out.extend(textural_features(&planes, &cfg.lpq)?);
    }
    Ok(out)
}

fn assemble_row<T: Scalar>(id: &str, textural: &[T], store: &DeepFeatureStore) -> Result<Vec<T>> {
    let mut row = Vec::with_capacity(FEATURE_DIM);
    for level in 0..PYRAMID_LEVELS {
        let deep = store.lookup(id, level as u8)?;
        row.extend(deep.iter().map(|&v| T::of(v as f64)));
        row.extend_from_slice(&textural[level * TEXTURAL_DIM..(level + 1) * TEXTURAL_DIM]);
    }
    Ok(row)
}

/// The full 11,780-value vector for one image.
pub fn fuse_image<T: Scalar>(img: &Image, store: &DeepFeatureStore, cfg: &FeatureConfig) -> Result<Vec<T>> {
    for level in 0..PYRAMID_LEVELS as u8 {
        store.lookup(img.id(), level)?;
    }
    let textural = pyramid_textural_features(img, cfg)?;
    assemble_row(img.id(), &textural, store)
}

/// On-disk cache of per-image textural features keyed by file content and
/// feature configuration.
#[derive(Debug, Clone)]
pub struct TexturalCache {
    dir: PathBuf,
}

const CACHE_MAGIC: &[u8; 4] = b"PHTC";

impl TexturalCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TexturalCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, content_hash: &str, cfg: &FeatureConfig) -> PathBuf {
        self.dir
            .join("textural")
            .join(format!("{}-{}.bin", &content_hash[..32], cfg.hash()))
    }

    fn get(&self, content_hash: &str, cfg: &FeatureConfig) -> Option<Vec<f32>> {
        let bytes = std::fs::read(self.path(content_hash, cfg)).ok()?;
        let mut r = Reader::new(&bytes, "textural cache");
        if r.take(4).ok()? != CACHE_MAGIC {
            return None;
        }
        let n = r.u32().ok()? as usize;
        if n != PYRAMID_LEVELS * TEXTURAL_DIM {
            return None;
        }
        (0..n).map(|_| r.f32().ok()).collect()
    }

    fn put(&self, content_hash: &str, cfg: &FeatureConfig, values: &[f32]) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 + values.len() * 4);
        bytes.extend_from_slice(CACHE_MAGIC);
        bytes.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fsutil::write_atomic(&self.path(content_hash, cfg), &bytes)
    }
}

/// Dense feature matrix with row identities and column provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    pub values: Array2<T>,
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    pub layout: FeatureLayout,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(values: Array2<T>, ids: Vec<String>, labels: Vec<Label>, layout: FeatureLayout) -> Result<Self> {
        let (rows, cols) = values.dim();
        if ids.len() != rows || labels.len() != rows {
            return Err(Error::validation(format!(
                "matrix has {rows} rows but {} ids and {} labels",
                ids.len(),
                labels.len()
            )));
        }
        if layout.len() != cols {
            return Err(Error::validation(format!(
                "matrix has {cols} columns but the layout describes {}",
                layout.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("feature matrix contains non-finite values"));
        }
        Ok(FeatureMatrix {
            values,
            ids,
            labels,
            layout,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
}

/// Fuses every manifest image. Rows follow manifest order and the result does
/// not depend on the number of worker threads.
pub fn fuse_dataset<T: Scalar>(
    manifest: &DatasetManifest,
    store: &DeepFeatureStore,
    cfg: &FeatureConfig,
    cache: Option<&TexturalCache>,
) -> Result<FeatureMatrix<T>> {
    cfg.validate()?;
    store.check_complete(manifest)?;

    let rows: Vec<Vec<T>> = manifest
        .entries()
        .par_iter()
        .map(|entry| {
            let path = manifest.path_of(entry);
            let bytes = fsutil::read(&path)?;
            let content_hash = fsutil::sha256_hex(&bytes);
            let cached = cache.and_then(|c| c.get(&content_hash, cfg));
            let textural: Vec<T> = match cached {
                Some(v) => v.into_iter().map(|x| T::of(x as f64)).collect(),
                None => {
                    let img = decode_image(&bytes, &path, entry.id.clone())?;
                    let v = pyramid_textural_features::<T>(&img, cfg)?;
                    if let Some(c) = cache {
                        let as_f32: Vec<f32> = v.iter().map(|x| x.to_f64_lossy() as f32).collect();
                        c.put(&content_hash, cfg, &as_f32)?;
                    }
                    v
                }
            };
            assemble_row(&entry.id, &textural, store)
        })
        .collect::<Result<_>>()?;

    let mut values = Array2::<T>::zeros((rows.len(), FEATURE_DIM));
    for (mut dst, row) in values.outer_iter_mut().zip(&rows) {
        dst.iter_mut().zip(row).for_each(|(d, &s)| *d = s);
    }
    FeatureMatrix::new(
        values,
        manifest.entries().iter().map(|e| e.id.clone()).collect(),
        manifest.labels(),
        FeatureLayout::standard(),
    )
}

pub const MATRIX_MAGIC: &[u8; 4] = b"PHFM";
pub const MATRIX_VERSION: u16 = 1;

/// Binary feature-matrix file:
///
/// ```text
/// magic "PHFM", version u16, rows u32, cols u32,
/// values      rows × cols f32, row-major
/// layout      cols × (source u8, level u8, channel u8 [0 = none, 1..3 = R,G,B], local u16)
/// labels      rows × u8
/// ids         rows × (len u16, UTF-8 bytes)
/// provenance  len u32, UTF-8 JSON
/// ```
pub fn matrix_to_bytes<T: Scalar>(m: &FeatureMatrix<T>, provenance: &serde_json::Value) -> Vec<u8> {
    let (rows, cols) = m.values.dim();
    let mut out = Vec::with_capacity(16 + rows * cols * 4 + cols * 5 + rows * 40);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in m.values.iter() {
        out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    out.extend_from_slice(&m.layout.encode());
    out.extend_from_slice(&m.labels);
    for id in &m.ids {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    let prov = serde_json::to_vec(provenance).expect("provenance serializes");
    out.extend_from_slice(&(prov.len() as u32).to_le_bytes());
    out.extend_from_slice(&prov);
    out
}

pub fn matrix_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(FeatureMatrix<T>, serde_json::Value)> {
    let mut r = Reader::new(bytes, "feature matrix");
    if r.take(4)? != MATRIX_MAGIC {
        return Err(Error::format("feature matrix: bad magic, expected PHFM"));
    }
    let version = r.u16()?;
    if version != MATRIX_VERSION {
        return Err(Error::format(format!("feature matrix: unsupported version {version}")));
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let raw = r.take(rows * cols * 4)?;
    let values = Array2::from_shape_vec(
        (rows, cols),
        raw.chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
    )
    .map_err(|e| Error::format(format!("feature matrix: {e}")))?;
    let mut columns = Vec::with_capacity(cols);
    for _ in 0..cols {
        let source = Source::from_code(r.u8()?)?;
        let level = r.u8()?;
        let channel = match r.u8()? {
            0 => None,
            c @ 1..=3 => Some(Channel::ALL[c as usize - 1]),
            c => return Err(Error::format(format!("feature matrix: bad channel code {c}"))),
        };
        let local = r.u16()?;
        columns.push(ColumnDescriptor {
            source,
            level,
            channel,
            local,
        });
    }
    let labels = r.take(rows)?.to_vec();
    let mut ids = Vec::with_capacity(rows);
    for _ in 0..rows {
        let len = r.u16()? as usize;
        ids.push(r.string(len)?);
    }
    let prov_len = r.u32()? as usize;
    let provenance = serde_json::from_slice(r.take(prov_len)?)
        .map_err(|e| Error::format(format!("feature matrix provenance: {e}")))?;
    let m = FeatureMatrix::new(values, ids, labels, FeatureLayout::from_columns(columns))?;
    Ok((m, provenance))
}

pub fn write_matrix<T: Scalar>(m: &FeatureMatrix<T>, provenance: &serde_json::Value, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &matrix_to_bytes(m, provenance))
}

pub fn read_matrix<T: Scalar>(path: &Path) -> Result<(FeatureMatrix<T>, serde_json::Value)> {
    matrix_from_bytes(&fsutil::read(path)?)
}

/// CSV export: header `id,label,<column names>`.
pub fn matrix_to_csv<T: Scalar>(m: &FeatureMatrix<T>) -> String {
    let mut out = String::from("id,label");
    for c in m.layout.columns() {
        out.push(',');
        out.push_str(&c.to_string());
    }
    out.push('\n');
    for ((row, id), label) in m.values.outer_iter().zip(&m.ids).zip(&m.labels) {
        out.push_str(&format!("{id},{label}"));
        for v in row {
            out.push_str(&format!(",{}", v.to_f64_lossy() as f32));
        }
        out.push('\n');
    }
    out
}
