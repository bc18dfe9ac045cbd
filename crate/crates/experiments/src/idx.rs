//! Reader for the IDX files used by MNIST and Fashion-MNIST.

use std::path::Path;

use teleport_core::models::{Batch, Dataset};
use teleport_core::rng::{stream, streams};
use teleport_core::Mat;

use crate::error::{CoreContext, ExpError, IdxError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";

/// Images as columns (pixels × count) scaled to [0, 1], with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxDataset {
    pub images: Mat,
    pub labels: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
}

struct Reader<'a> {
    file: &'a str,
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn need(&self, end: usize) -> Result<(), IdxError> {
        if self.bytes.len() < end {
            return Err(IdxError::Truncated {
                file: self.file.to_string(),
                offset: self.bytes.len(),
                needed: end,
            });
        }
        Ok(())
    }

    fn u32_at(&self, offset: usize) -> Result<u32, IdxError> {
        self.need(offset + 4)?;
        let b = &self.bytes[offset..offset + 4];
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&self, expected: u32) -> Result<(), IdxError> {
        let found = self.u32_at(0)?;
        if found != expected {
            return Err(IdxError::BadMagic {
                file: self.file.to_string(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

/// Parses an image file: magic, count, rows, cols, then `count·rows·cols` unsigned bytes.
pub fn parse_images(file: &str, bytes: &[u8]) -> Result<(Mat, usize, usize), IdxError> {
    let r = Reader { file, bytes };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32_at(4)? as usize;
    let rows = r.u32_at(8)? as usize;
    let cols = r.u32_at(12)? as usize;
    let pixels = rows * cols;
    r.need(16 + count * pixels)?;
    let data = &bytes[16..];
    let images = Mat::from_fn(pixels, count, |i, j| {
        f64::from(data[j * pixels + i]) / 255.0
    });
    Ok((images, rows, cols))
}

/// Parses a label file: magic, count, then `count` unsigned bytes, each below `classes`.
pub fn parse_labels(file: &str, bytes: &[u8], classes: usize) -> Result<Vec<usize>, IdxError> {
    let r = Reader { file, bytes };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32_at(4)? as usize;
    r.need(8 + count)?;
    bytes[8..8 + count]
        .iter()
        .enumerate()
        .map(|(index, &label)| {
            if usize::from(label) < classes {
                Ok(usize::from(label))
            } else {
                Err(IdxError::LabelOutOfRange {
                    file: file.to_string(),
                    index,
                    label,
                    classes,
                })
            }
        })
        .collect()
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<IdxDataset> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| ExpError::io(p, e));
    let (image_bytes, label_bytes) = (read(images)?, read(labels)?);
    let (images_mat, rows, cols) = parse_images(&images.display().to_string(), &image_bytes)?;
    let labels = parse_labels(&labels.display().to_string(), &label_bytes, CLASSES)?;
    if labels.len() != images_mat.cols() {
        return Err(IdxError::CountMismatch {
            images: images_mat.cols(),
            labels: labels.len(),
        }
        .into());
    }
    Ok(IdxDataset {
        images: images_mat,
        labels,
        rows,
        cols,
    })
}

/// Loads the training files of an MNIST-layout directory.
pub fn load_dir(dir: &Path) -> Result<IdxDataset> {
    load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))
}

impl IdxDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn into_dataset(self) -> Result<Dataset> {
        Batch::classification(self.images, self.labels, CLASSES).context("building the IDX dataset")
    }
}

/// The first `n` samples after a shuffle seeded from the data stream of `seed`.
pub fn subset(data: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    data.shuffled_subset(n, &mut stream(seed, streams::DATA))
        .context("subsetting the dataset")
}
