//! IDX file I/O, labeled image datasets and per-class subsampling.
//!
//! IDX layout: a 4-byte big-endian magic (`0x00000803` for images,
//! `0x00000801` for labels), one big-endian `u32` per dimension, then raw
//! unsigned bytes. Synthetic datasets are written in the same layout.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// A 28x28 grayscale raster with values in `[0, 1]`, row-major.
#[derive(Clone, PartialEq)]
pub struct Image {
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(Error::Shape(format!("image needs {IMAGE_PIXELS} pixels, got {}", pixels.len())));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Image { pixels })
    }

    pub fn zeros() -> Self {
        Image {
            pixels: vec![0.0; IMAGE_PIXELS],
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        debug_assert_eq!(bytes.len(), IMAGE_PIXELS);
        Image {
            pixels: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    /// Rounds to the nearest of 256 levels, clamped to `[0, 255]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| to_byte(p)).collect()
    }

    /// Snaps every pixel to the 8-bit grid the IDX format can store.
    pub fn quantized(&self) -> Image {
        Image::from_bytes(&self.to_bytes())
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMAGE_SIDE + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * IMAGE_SIDE + col] = value.clamp(0.0, 1.0);
    }

    /// Quarter turn counter-clockwise about the raster center.
    pub fn rotate90(&self) -> Image {
        let mut out = Image::zeros();
        for r in 0..IMAGE_SIDE {
            for c in 0..IMAGE_SIDE {
                out.pixels[r * IMAGE_SIDE + c] = self.get(c, IMAGE_SIDE - 1 - r);
            }
        }
        out
    }
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const RAMP: &[u8] = b" .:-=+*#%@";
        writeln!(f, "Image [")?;
        for r in 0..IMAGE_SIDE {
            let line: String = (0..IMAGE_SIDE)
                .map(|c| RAMP[((self.get(r, c) * 9.0).round() as usize).min(9)] as char)
                .collect();
            writeln!(f, "  {line}")?;
        }
        write!(f, "]")
    }
}

pub fn to_byte(p: f64) -> u8 {
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<LabeledImage>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(items: Vec<LabeledImage>, provenance: Provenance) -> Self {
        Dataset { items, provenance }
    }

    pub fn empty(provenance: Provenance) -> Self {
        Dataset::new(Vec::new(), provenance)
    }

    pub fn from_parts(images: Vec<Image>, labels: Vec<u8>, provenance: Provenance) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Data(format!("{} images but {} labels", images.len(), labels.len())));
        }
        let items = images
            .into_iter()
            .zip(labels)
            .map(|(image, label)| LabeledImage { image, label })
            .collect();
        Ok(Dataset::new(items, provenance))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for it in &self.items {
            counts[it.label as usize] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<u8> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn take(&self, n: usize) -> Dataset {
        Dataset::new(self.items.iter().take(n).cloned().collect(), self.provenance)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset::new(indices.iter().map(|&i| self.items[i].clone()).collect(), self.provenance)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::Path(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn parse_idx_images(bytes: &[u8], name: &str) -> Result<Vec<Image>> {
    let magic = be_u32(bytes, 0).ok_or_else(|| Error::format(name, "truncated header"))?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(name, format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let (count, rows, cols) = match (be_u32(bytes, 4), be_u32(bytes, 8), be_u32(bytes, 12)) {
        (Some(n), Some(r), Some(c)) => (n as usize, r as usize, c as usize),
        _ => return Err(Error::format(name, "truncated header")),
    };
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::format(name, format!("images are {rows}x{cols}, expected 28x28")));
    }
    let payload = &bytes[16..];
    if payload.len() != count * IMAGE_PIXELS {
        return Err(Error::format(
            name,
            format!("payload has {} bytes, header promises {}", payload.len(), count * IMAGE_PIXELS),
        ));
    }
    Ok(payload.chunks_exact(IMAGE_PIXELS).map(Image::from_bytes).collect())
}

pub fn parse_idx_labels(bytes: &[u8], name: &str) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0).ok_or_else(|| Error::format(name, "truncated header"))?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(name, format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4).ok_or_else(|| Error::format(name, "truncated header"))? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::format(
            name,
            format!("payload has {} bytes, header promises {count}", payload.len()),
        ));
    }
    if let Some(bad) = payload.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::format(name, format!("label {bad} is not a digit class")));
    }
    Ok(payload.to_vec())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<Image>> {
    let path = path.as_ref();
    parse_idx_images(&read_file(path)?, &path.display().to_string())
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_idx_labels(&read_file(path)?, &path.display().to_string())
}

pub fn encode_idx_images(images: &[Image]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * IMAGE_PIXELS);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    for img in images {
        out.extend(img.to_bytes());
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Paths of an images/labels IDX pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFiles {
    pub images: PathBuf,
    pub labels: PathBuf,
}

impl DatasetFiles {
    pub fn new(images: impl Into<PathBuf>, labels: impl Into<PathBuf>) -> Self {
        DatasetFiles {
            images: images.into(),
            labels: labels.into(),
        }
    }

    /// `<dir>/<prefix>-images-idx3-ubyte` and `<dir>/<prefix>-labels-idx1-ubyte`.
    pub fn with_prefix(dir: impl AsRef<Path>, prefix: &str) -> Self {
        let dir = dir.as_ref();
        DatasetFiles::new(
            dir.join(format!("{prefix}-images-idx3-ubyte")),
            dir.join(format!("{prefix}-labels-idx1-ubyte")),
        )
    }

    /// The official MNIST file names inside `dir`.
    pub fn mnist_train(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetFiles::new(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))
    }

    pub fn mnist_test(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetFiles::new(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))
    }
}

pub fn load_dataset(files: &DatasetFiles, provenance: Provenance) -> Result<Dataset> {
    let images = load_idx_images(&files.images)?;
    let labels = load_idx_labels(&files.labels)?;
    if images.len() != labels.len() {
        return Err(Error::format(
            files.labels.display().to_string(),
            format!("{} labels for {} images", labels.len(), images.len()),
        ));
    }
    Dataset::from_parts(images, labels, provenance)
}

/// Writes both IDX files. Pixels are rounded to 8 bits.
pub fn save_dataset(ds: &Dataset, files: &DatasetFiles) -> Result<()> {
    let images: Vec<Image> = ds.items.iter().map(|i| i.image.clone()).collect();
    for path in [&files.images, &files.labels] {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(&files.images, encode_idx_images(&images)).map_err(|e| Error::io(&files.images, e))?;
    fs::write(&files.labels, encode_idx_labels(&ds.labels())).map_err(|e| Error::io(&files.labels, e))?;
    Ok(())
}

/// Indices of `k` items per class: the first `k` of a seeded shuffle of each
/// class's indices, grouped by class in ascending order.
pub fn sample_indices_per_class(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(k * NUM_CLASSES);
    for class in 0..NUM_CLASSES {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] as usize == class).collect();
        if members.len() < k {
            return Err(Error::Sampling(format!(
                "class {class} has {} members, {k} requested",
                members.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..k]);
    }
    Ok(out)
}

pub fn sample_per_class(ds: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    let idx = sample_indices_per_class(&ds.labels(), k, seed)?;
    Ok(ds.subset(&idx))
}
