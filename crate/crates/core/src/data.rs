//! MNIST ingestion from IDX files and deterministic mini-batching.
//!
//! IDX layout: a big-endian `u32` magic (`0x00000803` for images,
//! `0x00000801` for labels), one big-endian `u32` per dimension, then raw
//! unsigned bytes in row-major order. Files may also be gzip-compressed.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::quant::Rng;
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Shuffle streams are `SHUFFLE_STREAM_BASE + epoch`.
pub const SHUFFLE_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated, expected {expected} bytes of {what} but found {found}")]
    Truncated { path: PathBuf, what: &'static str, expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no {split} files found in {dir} (tried {tried})")]
    Missing { dir: PathBuf, split: Split, tried: String },
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let io_err = |source| DataError::Io { path: path.to_path_buf(), source };
    let mut file = BufReader::new(File::open(path).map_err(io_err)?);
    let mut raw = Vec::new();
    file.read_to_end(&mut raw).map_err(io_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io_err)?;
        return Ok(out);
    }
    Ok(raw)
}

/// Parses an IDX header and returns the dimension sizes and the payload.
fn parse_idx<'a>(path: &Path, bytes: &'a [u8], magic: u32, rank: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let truncated = |what, expected, found| DataError::Truncated { path: path.to_path_buf(), what, expected, found };
    let header_len = 4 * (1 + rank);
    if bytes.len() < 4 {
        return Err(truncated("header", header_len, bytes.len()));
    }
    let word = |i: usize| u32::from_be_bytes([bytes[4 * i], bytes[4 * i + 1], bytes[4 * i + 2], bytes[4 * i + 3]]);
    let found = word(0);
    if found != magic {
        return Err(DataError::BadMagic { path: path.to_path_buf(), expected: magic, found });
    }
    if bytes.len() < header_len {
        return Err(truncated("header", header_len, bytes.len()));
    }
    let dims: Vec<usize> = (1..=rank).map(|i| word(i) as usize).collect();
    let payload_len: usize = dims.iter().product();
    let payload = &bytes[header_len..];
    if payload.len() < payload_len {
        return Err(truncated("payload", payload_len, payload.len()));
    }
    Ok((dims, &payload[..payload_len]))
}

/// Reads an IDX image file into `[N, rows, cols]` with pixels scaled to `[0, 1]`.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let (dims, payload) = parse_idx(path, &bytes, IMAGES_MAGIC, 3)?;
    if dims.iter().any(|&d| d == 0) {
        return Err(DataError::DimensionMismatch(format!("{}: empty image dimensions {dims:?}", path.display())));
    }
    let pixels = payload.iter().map(|&p| p as f32 / 255.0).collect();
    Tensor::new(dims, pixels).map_err(|e| DataError::DimensionMismatch(e.to_string()))
}

/// Reads an IDX label file.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let (_, payload) = parse_idx(path, &bytes, LABELS_MAGIC, 1)?;
    Ok(payload.to_vec())
}

/// Images with their labels. Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<u8>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u8>, classes: usize, split: Split) -> Result<Self> {
        if images.rank() != 3 || images.shape()[0] != labels.len() {
            return Err(DataError::DimensionMismatch(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(DataError::DimensionMismatch(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Dataset { images, labels, classes, split })
    }

    /// Loads the standard MNIST files for `split` from `dir`, raw or gzipped.
    pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<Self> {
        let dir = dir.as_ref();
        let images = find_file(dir, split, "images-idx3-ubyte")?;
        let labels = find_file(dir, split, "labels-idx1-ubyte")?;
        Dataset::new(load_idx_images(images)?, load_idx_labels(labels)?, 10, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn image_hw(&self) -> (usize, usize) {
        (self.images.shape()[1], self.images.shape()[2])
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// The first `n` samples (all of them if `n` exceeds the size).
    pub fn subset(&self, n: usize) -> Dataset {
        let n = n.min(self.len()).max(1);
        let (h, w) = self.image_hw();
        let images = Tensor::new(vec![n, h, w], self.images.data()[..n * h * w].to_vec())
            .expect("prefix of a valid tensor");
        Dataset { images, labels: self.labels[..n].to_vec(), classes: self.classes, split: self.split }
    }

    /// Stacks the selected images into `[B, 1, H, W]`.
    pub fn gather_images(&self, indices: &[usize]) -> Tensor {
        let (h, w) = self.image_hw();
        let plane = h * w;
        let mut data = Vec::with_capacity(indices.len() * plane);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * plane..(i + 1) * plane]);
        }
        Tensor::new(vec![indices.len(), 1, h, w], data).expect("gathered shape")
    }

    /// One-hot rows `[B, classes]` for the selected samples.
    pub fn one_hot(&self, indices: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(&[indices.len(), self.classes]);
        for (row, &i) in indices.iter().enumerate() {
            t.data_mut()[row * self.classes + self.labels[i] as usize] = 1.0;
        }
        t
    }

    /// Mini-batches of one epoch in a shuffled order keyed by `(seed, epoch)`.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: u64) -> Batches<'_> {
        Batches { data: self, order: batch_order(self.len(), batch_size, seed, epoch).into_iter() }
    }
}

fn find_file(dir: &Path, split: Split, stem: &str) -> Result<PathBuf> {
    let prefix = split.prefix();
    let dotted = stem.replacen('-', ".", 1);
    let candidates = [
        format!("{prefix}-{stem}"),
        format!("{prefix}-{stem}.gz"),
        format!("{prefix}-{dotted}"),
        format!("{prefix}-{dotted}.gz"),
    ];
    candidates
        .iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
        .ok_or_else(|| DataError::Missing { dir: dir.to_path_buf(), split, tried: candidates.join(", ") })
}

/// Sample indices per batch: a permutation of `0..n` cut into chunks of
/// `batch_size`, the last chunk possibly shorter.
pub fn batch_order(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::with_stream(seed, SHUFFLE_STREAM_BASE + epoch);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// `[B, 1, H, W]`
    pub images: Tensor,
    pub labels: Vec<u8>,
    /// One-hot `[B, classes]`
    pub targets: Tensor,
}

pub struct Batches<'a> {
    data: &'a Dataset,
    order: std::vec::IntoIter<Vec<usize>>,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let indices = self.order.next()?;
        Some(Batch {
            images: self.data.gather_images(&indices),
            labels: indices.iter().map(|&i| self.data.labels[i]).collect(),
            targets: self.data.one_hot(&indices),
            indices,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.order.size_hint()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(payload);
        out
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let path = dir.join(name);
        File::create(&path).unwrap().write_all(bytes).unwrap();
        path
    }

    #[test]
    fn single_image_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let mut pixels = vec![0u8; 4];
        pixels[2] = 255;
        let path = write(dir.path(), "img", &idx_bytes(IMAGES_MAGIC, &[1, 2, 2], &pixels));
        let t = load_idx_images(&path).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let bad = write(dir.path(), "bad", &idx_bytes(0, &[1, 1, 1], &[0]));
        assert!(matches!(load_idx_images(&bad), Err(DataError::BadMagic { found: 0, .. })));
        let short = write(dir.path(), "short", &idx_bytes(IMAGES_MAGIC, &[2, 2, 2], &[0; 5]));
        let err = load_idx_images(&short).unwrap_err();
        assert!(matches!(err, DataError::Truncated { expected: 8, found: 5, .. }), "{err}");
        let header = write(dir.path(), "header", &IMAGES_MAGIC.to_be_bytes()[..]);
        assert!(matches!(load_idx_images(&header), Err(DataError::Truncated { what: "header", .. })));
        let labels_as_images = write(dir.path(), "lbl", &idx_bytes(LABELS_MAGIC, &[1], &[3]));
        assert!(matches!(load_idx_images(&labels_as_images), Err(DataError::BadMagic { .. })));
        assert!(matches!(load_idx_labels(dir.path().join("nope")), Err(DataError::Io { .. })));

        let images = Tensor::zeros(&[2, 1, 1]);
        assert!(matches!(Dataset::new(images, vec![1], 10, Split::Test), Err(DataError::DimensionMismatch(_))));
    }

    #[test]
    fn gzip_and_raw_agree() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = idx_bytes(LABELS_MAGIC, &[3], &[7, 1, 4]);
        let raw = write(dir.path(), "raw", &bytes);
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&bytes).unwrap();
        let gz = write(dir.path(), "gz", &enc.finish().unwrap());
        assert_eq!(load_idx_labels(raw).unwrap(), vec![7, 1, 4]);
        assert_eq!(load_idx_labels(gz).unwrap(), vec![7, 1, 4]);
    }

    #[test]
    fn batch_sizes_and_permutation() {
        let sizes: Vec<usize> = batch_order(10, 4, 1, 1).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(batch_order(10, 4, 1, 1), batch_order(10, 4, 1, 1));
        let mut all: Vec<usize> = batch_order(1000, 128, 5, 3).concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_ne!(batch_order(1000, 1000, 5, 3), batch_order(1000, 1000, 5, 4));
    }

    #[test]
    fn batches_carry_one_hot_targets() {
        let images = Tensor::new(vec![3, 1, 2], vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let data = Dataset::new(images, vec![2, 0, 1], 3, Split::Train).unwrap();
        let batches: Vec<Batch> = data.batches(2, 0, 1).collect();
        assert_eq!(batches.len(), 2);
        for b in &batches {
            for (row, &i) in b.indices.iter().enumerate() {
                assert_eq!(b.images.data()[row * 2..row * 2 + 2], data.images().data()[i * 2..i * 2 + 2]);
                let onehot = &b.targets.data()[row * 3..row * 3 + 3];
                assert_eq!(onehot.iter().sum::<f32>(), 1.0);
                assert_eq!(onehot[data.label(i) as usize], 1.0);
            }
        }
        assert_eq!(data.subset(2).labels(), &[2, 0]);
    }
}
