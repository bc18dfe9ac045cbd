use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::Mat;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// d_L × k regression targets.
    Regression(Mat),
    /// One class label per column.
    Labels(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(y) => y.cols(),
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Regression(y) => Targets::Regression(y.select_columns(idx)),
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Inputs stored column-wise (d₀ × k) with matching targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Mat,
    pub y: Targets,
}

impl Batch {
    pub fn new(x: Mat, y: Targets) -> Result<Self> {
        if x.cols() != y.len() {
            return Err(Error::ShapeMismatch {
                op: "batch",
                lhs: x.shape(),
                rhs: (1, y.len()),
            });
        }
        Ok(Self { x, y })
    }

    /// Builds a classification batch, checking labels against the class count.
    pub fn classification(x: Mat, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Self::new(x, Targets::Labels(labels))
    }

    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(Self {
            x: self.x.select_columns(idx),
            y: self.y.select(idx),
        })
    }
}

/// Full sample pool; a [`Batch`] that also knows how to split and minibatch itself.
pub type Dataset = Batch;

impl Batch {
    /// Deterministic shuffle followed by taking the first `n` samples.
    pub fn shuffled_subset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Self> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx.truncate(n.min(self.len()));
        self.select(&idx)
    }

    /// First `round(frac·n)` samples and the rest.
    pub fn split(&self, frac: f64) -> Result<(Self, Self)> {
        let n = self.len();
        let cut = ((n as f64) * frac).round() as usize;
        if cut == 0 || cut >= n {
            return Err(Error::InvalidConfig(format!(
                "split fraction {frac} leaves an empty side of {n} samples"
            )));
        }
        let a: Vec<usize> = (0..cut).collect();
        let b: Vec<usize> = (cut..n).collect();
        Ok((self.select(&a)?, self.select(&b)?))
    }

    /// Minibatch index lists for one epoch; the final short batch is kept.
    pub fn epoch_batches<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
    }
}

/// Uniform-[0,1] inputs and regression targets.
pub fn uniform_regression<R: Rng + ?Sized>(
    d_in: usize,
    d_out: usize,
    count: usize,
    rng: &mut R,
) -> Result<Batch> {
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    if d_in == 0 || d_out == 0 {
        return Err(Error::EmptyMatrix {
            rows: d_in.min(d_out),
            cols: count,
        });
    }
    let x = Mat::from_fn(d_in, count, |_, _| rng.random::<f64>());
    let y = Mat::from_fn(d_out, count, |_, _| rng.random::<f64>());
    Batch::new(x, Targets::Regression(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn labels_validated() {
        let x = Mat::zeros(2, 2);
        assert_eq!(
            Batch::classification(x, vec![0, 10], 10).unwrap_err(),
            Error::LabelOutOfRange {
                label: 10,
                classes: 10
            }
        );
    }

    #[test]
    fn split_and_batches_cover_everything() {
        let d = uniform_regression(3, 2, 10, &mut seeded(1)).unwrap();
        let (a, b) = d.split(0.8).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut seen: Vec<usize> = d.epoch_batches(3, &mut seeded(2)).concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn synthetic_is_seeded() {
        let a = uniform_regression(5, 8, 4, &mut seeded(9)).unwrap();
        let b = uniform_regression(5, 8, 4, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        assert!(uniform_regression(5, 8, 0, &mut seeded(9)).is_err());
    }
}
