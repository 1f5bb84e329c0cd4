//! Image loading, dataset manifests and channel handling.
//!
//! Images are decoded at their native resolution; nothing is resized or
//! colour-converted apart from replicating single-channel inputs to RGB.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smallest accepted side length (the db4 filter has 8 taps).
pub const MIN_SIDE: u32 = 8;

/// An RGB raster with its dataset identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    id: String,
    pixels: RgbImage,
}

impl Image {
    pub fn new(id: impl Into<String>, pixels: RgbImage) -> Result<Self> {
        let id = id.into();
        let (w, h) = pixels.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::validation(format!("image {id} has zero size")));
        }
        if w < MIN_SIDE || h < MIN_SIDE {
            return Err(Error::validation(format!(
                "image {id} is {w}x{h}; both sides must be at least {MIN_SIDE}"
            )));
        }
        Ok(Image { id, pixels })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn height(&self) -> usize {
        self.pixels.height() as usize
    }

    pub fn width(&self) -> usize {
        self.pixels.width() as usize
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Channel::R => "R",
            Channel::G => "G",
            Channel::B => "B",
        };
        f.write_str(s)
    }
}

/// One colour channel as a real-valued `H×W` array.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPlane<T> {
    pub channel: Channel,
    pub values: Array2<T>,
}

impl<T: Scalar> ChannelPlane<T> {
    pub fn new(channel: Channel, values: Array2<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "channel {channel} plane contains non-finite values"
            )));
        }
        Ok(ChannelPlane { channel, values })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Decodes a JPEG or PNG file. Grayscale inputs are replicated to three channels.
pub fn load_image(path: &Path, id: impl Into<String>) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path, id)
}

/// Decodes an in-memory JPEG/PNG; `path` is only used for error messages.
pub fn decode_image(bytes: &[u8], path: &Path, id: impl Into<String>) -> Result<Image> {
    let dynamic = image::load_from_memory(bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if dynamic.width() == 0 || dynamic.height() == 0 {
        return Err(Error::validation(format!("image {} has zero size", path.display())));
    }
    Image::new(id, dynamic.to_rgb8())
}

/// Class label: 0 = benign, 1 = malignant (the positive class).
pub type Label = u8;

pub const CLASS_NAMES: [&str; 2] = ["benign", "malignant"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
}

/// Sorted, validated list of `(image id, label)` pairs relative to a dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetLayout {
    /// Two class subdirectories; alphabetical order gives labels 0 and 1.
    ClassSubdirs,
    /// A `manifest.csv` at the root with header `id,label`.
    CsvManifest,
}

impl DatasetManifest {
    /// Builds a manifest from arbitrary entries, sorting by id and validating
    /// uniqueness, labels and class presence.
    pub fn from_entries(root: impl Into<PathBuf>, mut entries: Vec<ManifestEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        let mut seen = BTreeSet::new();
        for e in &entries {
            if e.label > 1 {
                return Err(Error::validation(format!(
                    "label {} for {} is not 0 or 1",
                    e.label, e.id
                )));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::validation(format!("duplicate image id {}", e.id)));
            }
        }
        for (label, name) in CLASS_NAMES.iter().enumerate() {
            if !entries.iter().any(|e| e.label as usize == label) {
                return Err(Error::validation(format!("class {label} ({name}) is empty")));
            }
        }
        Ok(DatasetManifest {
            root: root.into(),
            entries,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for e in &self.entries {
            counts[e.label as usize] += 1;
        }
        counts
    }

    pub fn path_of(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.id)
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<Image> {
        load_image(&self.path_of(entry), entry.id.clone())
    }
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("jpg" | "jpeg" | "png")
    )
}

fn relative_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Scans a dataset root into a sorted manifest.
pub fn scan_dataset(root: &Path, layout: DatasetLayout) -> Result<DatasetManifest> {
    match layout {
        DatasetLayout::ClassSubdirs => scan_class_subdirs(root),
        DatasetLayout::CsvManifest => read_manifest_csv(root, &root.join("manifest.csv")),
    }
}

fn scan_class_subdirs(root: &Path) -> Result<DatasetManifest> {
    let read = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut class_dirs = Vec::new();
    for entry in read {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            class_dirs.push(entry.path());
        }
    }
    class_dirs.sort();
    if class_dirs.len() != 2 {
        return Err(Error::validation(format!(
            "{} must contain exactly two class subdirectories, found {}",
            root.display(),
            class_dirs.len()
        )));
    }

    let mut entries = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let before = entries.len();
        for item in walkdir::WalkDir::new(dir).sort_by_file_name() {
            let item = item.map_err(|e| {
                let path = e.path().unwrap_or(dir).to_path_buf();
                Error::io(path, e.into())
            })?;
            if item.file_type().is_file() && is_image_file(item.path()) {
                entries.push(ManifestEntry {
                    id: relative_id(root, item.path()),
                    label: label as Label,
                });
            }
        }
        if entries.len() == before {
            return Err(Error::validation(format!(
                "class directory {} contains no images",
                dir.display()
            )));
        }
    }
    DatasetManifest::from_entries(root, entries)
}

/// Reads an `id,label` CSV; ids are paths relative to `root`.
pub fn read_manifest_csv(root: &Path, csv_path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == "id,label" => {}
        _ => {
            return Err(Error::format(format!(
                "{}: expected header `id,label`",
                csv_path.display()
            )))
        }
    }
    let mut entries = Vec::new();
    for (lineno, line) in lines {
        let (id, label) = line
            .trim()
            .rsplit_once(',')
            .ok_or_else(|| Error::format(format!("{}:{}: expected `id,label`", csv_path.display(), lineno + 1)))?;
        let label: Label = label.trim().parse().map_err(|_| {
            Error::validation(format!(
                "{}:{}: label `{label}` is not 0 or 1",
                csv_path.display(),
                lineno + 1
            ))
        })?;
        entries.push(ManifestEntry {
            id: id.trim().to_string(),
            label,
        });
    }
    DatasetManifest::from_entries(root, entries)
}

/// Splits an image into its R, G and B planes, converting intensities exactly.
pub fn split_channels<T: Scalar>(img: &Image) -> [ChannelPlane<T>; 3] {
    let (h, w) = (img.height(), img.width());
    Channel::ALL.map(|channel| {
        let c = channel.index();
        let values = Array2::from_shape_fn((h, w), |(y, x)| {
            T::of(img.pixels.get_pixel(x as u32, y as u32)[c] as f64)
        });
        ChannelPlane { channel, values }
    })
}

/// Inverse of [`split_channels`] for planes holding integer intensities in `[0, 255]`.
pub fn merge_channels<T: Scalar>(id: &str, planes: &[ChannelPlane<T>; 3]) -> Result<Image> {
    let (h, w) = planes[0].dim();
    if planes.iter().any(|p| p.dim() != (h, w)) {
        return Err(Error::validation("channel planes differ in size"));
    }
    let mut out = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        for plane in planes {
            let v = plane.values[(y as usize, x as usize)].to_f64_lossy();
            px[plane.channel.index()] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Image::new(id, out)
}
