//! Mini-batch sources for the fit driver.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Sampling;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// One data mini-batch; `y` is present for paired tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: DMatrix<f64>,
    pub y: Option<DMatrix<f64>>,
}

pub trait BatchSource {
    /// Column counts of the left view and, if paired, the right view.
    fn dims(&self) -> (usize, Option<usize>);

    fn next_batch(&mut self, size: usize) -> Result<Batch>;
}

/// Draws rows from an in-memory dataset, either as seeded per-epoch
/// permutations or independently with replacement.
#[derive(Debug, Clone)]
pub struct DatasetSampler {
    x: DMatrix<f64>,
    y: Option<DMatrix<f64>>,
    sampling: Sampling,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

/// Stream used for with-replacement draws; epoch permutations use the
/// epoch number.
const REPLACEMENT_STREAM: u64 = u64::MAX;

impl DatasetSampler {
    pub fn new(x: DMatrix<f64>, y: Option<DMatrix<f64>>, sampling: Sampling, seed: u64) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::EmptyData);
        }
        if let Some(y) = &y {
            if y.nrows() != x.nrows() {
                return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.nrows() });
            }
        }
        let mut s = Self {
            x,
            y,
            sampling,
            seed,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            rng: rng::stream(seed, Purpose::Sampling, REPLACEMENT_STREAM),
        };
        if sampling == Sampling::EpochShuffle {
            s.shuffle();
        }
        Ok(s)
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    fn shuffle(&mut self) {
        let mut r = rng::stream(self.seed, Purpose::Sampling, self.epoch);
        self.order = (0..self.x.nrows()).collect();
        self.order.shuffle(&mut r);
        self.cursor = 0;
    }

    fn next_index(&mut self) -> usize {
        match self.sampling {
            Sampling::WithReplacement => self.rng.random_range(0..self.x.nrows()),
            Sampling::EpochShuffle => {
                if self.cursor == self.order.len() {
                    self.epoch += 1;
                    self.shuffle();
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            }
        }
    }
}

impl BatchSource for DatasetSampler {
    fn dims(&self) -> (usize, Option<usize>) {
        (self.x.ncols(), self.y.as_ref().map(|y| y.ncols()))
    }

    fn next_batch(&mut self, size: usize) -> Result<Batch> {
        let idx: Vec<usize> = (0..size).map(|_| self.next_index()).collect();
        Ok(Batch {
            x: self.x.select_rows(&idx),
            y: self.y.as_ref().map(|y| y.select_rows(&idx)),
        })
    }
}

/// Endless zero-mean Gaussian stream with a given covariance. With a split
/// point the first `split` coordinates form the left view and the rest the
/// right view.
#[derive(Debug, Clone)]
pub struct GaussianSource {
    factor: DMatrix<f64>,
    split: Option<usize>,
    rng: ChaCha8Rng,
}

impl GaussianSource {
    pub fn new(covariance: &DMatrix<f64>, split: Option<usize>, seed: u64) -> Result<Self> {
        let d = covariance.nrows();
        if covariance.ncols() != d || d == 0 {
            return Err(Error::InvalidArgument("covariance must be square and non-empty".into()));
        }
        if let Some(s) = split {
            if s == 0 || s >= d {
                return Err(Error::InvalidArgument(format!("split {s} must lie strictly inside 0..{d}")));
            }
        }
        let factor = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPsd("covariance is not positive definite".into()))?
            .l();
        Ok(Self { factor, split, rng: rng::stream(seed, Purpose::Synthetic, 0) })
    }

    /// `n` rows of the joint vector, without splitting.
    pub fn sample(&mut self, n: usize) -> DMatrix<f64> {
        let d = self.factor.nrows();
        let z = DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(&mut self.rng));
        (&self.factor * z).transpose()
    }
}

impl BatchSource for GaussianSource {
    fn dims(&self) -> (usize, Option<usize>) {
        let d = self.factor.nrows();
        match self.split {
            Some(s) => (s, Some(d - s)),
            None => (d, None),
        }
    }

    fn next_batch(&mut self, size: usize) -> Result<Batch> {
        let all = self.sample(size);
        Ok(match self.split {
            Some(s) => Batch {
                x: all.columns(0, s).into_owned(),
                y: Some(all.columns(s, all.ncols() - s).into_owned()),
            },
            None => Batch { x: all, y: None },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_shuffle_visits_every_row_once_per_epoch() {
        let x = DMatrix::from_fn(7, 1, |r, _| r as f64);
        let mut s = DatasetSampler::new(x, None, Sampling::EpochShuffle, 3).unwrap();
        let b = s.next_batch(7).unwrap();
        let mut seen: Vec<i64> = b.x.iter().map(|v| *v as i64).collect();
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        let again = s.next_batch(7).unwrap();
        assert_ne!(b.x, again.x);
    }

    #[test]
    fn samplers_are_seeded() {
        let x = DMatrix::from_fn(50, 2, |r, c| (r * 2 + c) as f64);
        for sampling in [Sampling::EpochShuffle, Sampling::WithReplacement] {
            let mut a = DatasetSampler::new(x.clone(), None, sampling, 9).unwrap();
            let mut b = DatasetSampler::new(x.clone(), None, sampling, 9).unwrap();
            for _ in 0..5 {
                assert_eq!(a.next_batch(13).unwrap(), b.next_batch(13).unwrap());
            }
        }
    }

    #[test]
    fn paired_rows_stay_aligned() {
        let x = DMatrix::from_fn(20, 1, |r, _| r as f64);
        let y = DMatrix::from_fn(20, 2, |r, c| (10 * r + c) as f64);
        let mut s = DatasetSampler::new(x, Some(y), Sampling::WithReplacement, 1).unwrap();
        let b = s.next_batch(30).unwrap();
        let y = b.y.unwrap();
        for r in 0..30 {
            assert_eq!(y[(r, 0)], 10.0 * b.x[(r, 0)]);
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(
            DatasetSampler::new(DMatrix::zeros(0, 3), None, Sampling::EpochShuffle, 0),
            Err(Error::EmptyData)
        ));
    }

    #[test]
    fn gaussian_source_matches_covariance() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let mut s = GaussianSource::new(&c, Some(1), 4).unwrap();
        let b = s.next_batch(40_000).unwrap();
        let (x, y) = (b.x, b.y.unwrap());
        let n = x.nrows() as f64;
        assert!((x.norm_squared() / n - 2.0).abs() < 0.05);
        assert!((y.norm_squared() / n - 1.0).abs() < 0.03);
        assert!((x.dot(&y) / n - 0.6).abs() < 0.03);
    }
}
