//! Small-image corpora in idx and cifar-binary layout.
//!
//! idx: big-endian header, magic `0x00000803` with dims `n h w` for images and
//! `0x00000801` with dim `n` for labels, then one byte per value.
//! cifar-binary: a sequence of 3073-byte records, one label byte followed by
//! 1024 red, 1024 green and 1024 blue pixel bytes.
//!
//! Pixels are mapped to `[0, 1]` by dividing by 255.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    Idx,
    CifarBinary,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idx" => Ok(DatasetFormat::Idx),
            "cifar-binary" => Ok(DatasetFormat::CifarBinary),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset format '{other}' (expected idx or cifar-binary)"
            ))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::Idx => "idx",
            DatasetFormat::CifarBinary => "cifar-binary",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `(n, c, h, w)`, values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, split: Split, classes: usize) -> Result<Self> {
        let (n, ..) = images.dims4()?;
        if n != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{n} images, {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside {classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            split,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(c, h, w)` of one image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Result<Self> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let idx: Vec<usize> = (0..n).collect();
        Dataset::new(
            self.images.gather_batch(&idx)?,
            self.labels[..n].to_vec(),
            self.split,
            self.classes,
        )
    }

    /// Same samples at a lower resolution.
    pub fn downscale(&self, h: usize, w: usize) -> Result<Self> {
        Ok(Dataset {
            images: crate::surgery::downscale_image(&self.images, (h, w))?,
            ..self.clone()
        })
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn truncated(path: &Path, detail: String) -> Error {
    Error::Truncated {
        path: path.into(),
        detail,
    }
}

/// Parses an idx header, returning the declared dims and the body.
fn idx_header<'a>(bytes: &'a [u8], path: &Path, magic: u32, rank: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let head = 4 + 4 * rank;
    if bytes.len() < 4 {
        return Err(truncated(path, format!("{} bytes, no magic", bytes.len())));
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if found != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: magic.into(),
            found: found.into(),
        });
    }
    if bytes.len() < head {
        return Err(truncated(path, format!("header needs {head} bytes, file has {}", bytes.len())));
    }
    let dims: Vec<usize> = bytes[4..head]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let body = &bytes[head..];
    let want: usize = dims.iter().product();
    if body.len() < want {
        return Err(truncated(path, format!("dims {dims:?} declare {want} values, file has {}", body.len())));
    }
    if body.len() > want {
        return Err(Error::RecordCount {
            path: path.into(),
            detail: format!("dims {dims:?} declare {want} values, file has {}", body.len()),
        });
    }
    Ok((dims, body))
}

fn to_unit(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| b as f32 / 255.0).collect()
}

/// Loads an idx image file and its label file.
pub fn load_idx(images: &Path, labels: &Path, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let img_bytes = read(images)?;
    let (dims, pixels) = idx_header(&img_bytes, images, IDX_IMAGES_MAGIC, 3)?;
    let lab_bytes = read(labels)?;
    let (ldims, lab) = idx_header(&lab_bytes, labels, IDX_LABELS_MAGIC, 1)?;
    if dims[0] != ldims[0] {
        return Err(Error::RecordCount {
            path: labels.into(),
            detail: format!("{} labels for {} images in {}", ldims[0], dims[0], images.display()),
        });
    }
    let n = limit.map_or(dims[0], |l| l.min(dims[0]));
    let (h, w) = (dims[1], dims[2]);
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Data {
            path: images.into(),
            detail: format!("empty image set {dims:?}"),
        });
    }
    let labels_vec: Vec<usize> = lab[..n].iter().map(|&b| b as usize).collect();
    let classes = labels_vec.iter().max().map_or(1, |m| m + 1);
    Dataset::new(
        Tensor::new(vec![n, 1, h, w], to_unit(&pixels[..n * h * w]))?,
        labels_vec,
        split,
        classes,
    )
}

/// Loads and concatenates cifar-binary batch files.
pub fn load_cifar(files: &[PathBuf], split: Split, limit: Option<usize>) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let cap = limit.unwrap_or(usize::MAX);
    for path in files {
        if labels.len() >= cap {
            break;
        }
        let bytes = read(path)?;
        if bytes.len() < CIFAR_RECORD {
            return Err(truncated(path, format!("{} bytes, one record is {CIFAR_RECORD}", bytes.len())));
        }
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(truncated(
                path,
                format!("{} bytes is not a whole number of {CIFAR_RECORD}-byte records", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            if labels.len() >= cap {
                break;
            }
            if rec[0] as usize >= CIFAR_CLASSES {
                return Err(Error::Data {
                    path: path.clone(),
                    detail: format!("label byte {} in record {}", rec[0], labels.len()),
                });
            }
            labels.push(rec[0] as usize);
            pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no cifar records loaded".into()));
    }
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, 3, CIFAR_SIDE, CIFAR_SIDE], pixels)?,
        labels,
        split,
        CIFAR_CLASSES,
    )
}

/// Conventional file names inside a dataset directory.
pub fn dataset_files(dir: &Path, format: DatasetFormat, split: Split) -> Vec<PathBuf> {
    match (format, split) {
        (DatasetFormat::Idx, Split::Train) => vec![
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        ],
        (DatasetFormat::Idx, Split::Test) => vec![
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        ],
        (DatasetFormat::CifarBinary, Split::Train) => {
            (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
        }
        (DatasetFormat::CifarBinary, Split::Test) => vec![dir.join("test_batch.bin")],
    }
}

/// Loads one split from a directory holding the conventional file names.
/// Missing cifar training batches after the first are skipped.
pub fn load_dataset(dir: &Path, format: DatasetFormat, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let files = dataset_files(dir, format, split);
    match format {
        DatasetFormat::Idx => load_idx(&files[0], &files[1], split, limit),
        DatasetFormat::CifarBinary => {
            let present: Vec<PathBuf> = files
                .iter()
                .enumerate()
                .filter(|(i, p)| *i == 0 || p.exists())
                .map(|(_, p)| p.clone())
                .collect();
            load_cifar(&present, split, limit)
        }
    }
}

/// Encodes `(label, 3x32x32 bytes)` samples as cifar-binary records.
pub fn encode_cifar(samples: &[(u8, Vec<u8>)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * CIFAR_RECORD);
    for (label, px) in samples {
        assert_eq!(px.len(), CIFAR_RECORD - 1);
        out.push(*label);
        out.extend_from_slice(px);
    }
    out
}

/// Encodes an idx image file.
pub fn encode_idx_images(n: usize, h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), n * h * w);
    let mut out = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [n, h, w] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
