//! Functions in the span of random features.
//!
//! A [`CoefficientModel`] holds `k` functions as an ordered list of feature
//! blocks with one `count x k` coefficient matrix each. Only block indices
//! and coefficients are stored; frequencies regenerate from the run seed
//! unless caching is switched on.

use std::borrow::Cow;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{FeatureBlock, KernelSpec};
use crate::linalg;
use crate::rng::{self, Purpose};

/// Rows per parallel evaluation chunk.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub index: u64,
    /// `count x k`
    pub alpha: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct CoefficientModel {
    k: usize,
    spec: KernelSpec,
    run_seed: u64,
    blocks: Vec<Block>,
    store_frequencies: bool,
    cache: Vec<FeatureBlock>,
}

impl PartialEq for CoefficientModel {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.spec == other.spec
            && self.run_seed == other.run_seed
            && self.blocks == other.blocks
            && self.store_frequencies == other.store_frequencies
    }
}

/// Seeded model with one orthonormal-coefficient block at index 0.
pub fn init_model(spec: &KernelSpec, k: usize, count: usize, seed: u64) -> Result<CoefficientModel> {
    CoefficientModel::init_with_stream(spec, k, count, seed, 0)
}

impl CoefficientModel {
    /// A model with no blocks; evaluates to zero everywhere.
    pub fn empty(spec: KernelSpec, k: usize, run_seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(Self { k, spec, run_seed, blocks: Vec::new(), store_frequencies: false, cache: Vec::new() })
    }

    /// Like [`init_model`] but draws the initial coefficients from the given
    /// init stream, so paired models can share feature seeds yet start apart.
    pub fn init_with_stream(
        spec: &KernelSpec,
        k: usize,
        count: usize,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if count < k {
            return Err(Error::InvalidArgument(format!(
                "initial block needs at least k={k} features, got {count}"
            )));
        }
        let block = FeatureBlock::regenerate(spec, seed, 0, count)?;
        let mut rng = rng::stream(seed, Purpose::Init, stream);
        let gauss = DMatrix::from_fn(count, k, |_, _| StandardNormal.sample(&mut rng));
        let q = gauss.qr().q();
        let alpha = q / block.scale;
        let mut model = Self::empty(*spec, k, seed)?;
        model.append_block(&block, alpha)?;
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn run_seed(&self) -> u64 {
        self.run_seed
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_features(&self) -> usize {
        self.blocks.iter().map(|b| b.alpha.nrows()).sum()
    }

    pub fn store_frequencies(&self) -> bool {
        self.store_frequencies
    }

    /// Switches frequency caching on or off. Evaluation results do not change.
    pub fn set_store_frequencies(&mut self, store: bool) -> Result<()> {
        self.store_frequencies = store;
        self.cache.clear();
        if store {
            for b in &self.blocks {
                let fb = FeatureBlock::regenerate(&self.spec, self.run_seed, b.index, b.alpha.nrows())?;
                self.cache.push(fb);
            }
        }
        Ok(())
    }

    /// Feature block at position `pos`, cached or regenerated.
    pub fn feature_block(&self, pos: usize) -> Result<Cow<'_, FeatureBlock>> {
        if let Some(fb) = self.cache.get(pos) {
            return Ok(Cow::Borrowed(fb));
        }
        let b = self
            .blocks
            .get(pos)
            .ok_or_else(|| Error::InvalidArgument(format!("no block at position {pos}")))?;
        Ok(Cow::Owned(FeatureBlock::regenerate(&self.spec, self.run_seed, b.index, b.alpha.nrows())?))
    }

    /// Generates the block that would be appended next.
    pub fn next_block(&self, count: usize) -> Result<FeatureBlock> {
        FeatureBlock::regenerate(&self.spec, self.run_seed, self.blocks.len() as u64, count)
    }

    /// `m x k` evaluations; rows accumulate blocks in ascending index order.
    pub fn evaluate(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.spec.dim {
            return Err(Error::DimensionMismatch { expected: self.spec.dim, got: x.ncols() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("evaluation input".into()));
        }
        let m = x.nrows();
        let starts: Vec<usize> = (0..m).step_by(EVAL_CHUNK).collect();
        let parts: Vec<Result<DMatrix<f64>>> = starts
            .par_iter()
            .map(|&start| {
                let len = EVAL_CHUNK.min(m - start);
                let sub = x.rows(start, len).into_owned();
                self.evaluate_rows(&sub)
            })
            .collect();
        let mut out = DMatrix::zeros(m, self.k);
        for (&start, part) in starts.iter().zip(parts) {
            let part = part?;
            out.rows_mut(start, part.nrows()).copy_from(&part);
        }
        Ok(out)
    }

    fn evaluate_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(x.nrows(), self.k);
        for (pos, b) in self.blocks.iter().enumerate() {
            let fb = self.feature_block(pos)?;
            fb.accumulate(x, &b.alpha, &mut out);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteBlock { block: b.index });
            }
        }
        Ok(out)
    }

    /// Appends the next block; its index must follow the last one.
    pub fn append_block(&mut self, block: &FeatureBlock, alpha: DMatrix<f64>) -> Result<()> {
        let expected = self.blocks.len() as u64;
        if block.block_index != expected {
            return Err(Error::InvalidArgument(format!(
                "block index {} is not contiguous; expected {expected}",
                block.block_index
            )));
        }
        if block.dim != self.spec.dim || block.family != self.spec.family || block.seed != self.run_seed {
            return Err(Error::InvalidArgument("feature block does not belong to this model".into()));
        }
        if alpha.nrows() != block.count {
            return Err(Error::DimensionMismatch { expected: block.count, got: alpha.nrows() });
        }
        if alpha.ncols() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, got: alpha.ncols() });
        }
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("appended coefficients".into()));
        }
        if self.store_frequencies {
            self.cache.push(block.clone());
        }
        self.blocks.push(Block { index: block.block_index, alpha });
        Ok(())
    }

    /// Adds `alpha_add` into the coefficients of an existing block.
    pub fn add_to_block(&mut self, pos: usize, alpha_add: &DMatrix<f64>) -> Result<()> {
        let k = self.k;
        let b = self
            .blocks
            .get_mut(pos)
            .ok_or_else(|| Error::InvalidArgument(format!("no block at position {pos}")))?;
        if alpha_add.shape() != (b.alpha.nrows(), k) {
            return Err(Error::DimensionMismatch { expected: b.alpha.nrows(), got: alpha_add.nrows() });
        }
        b.alpha += alpha_add;
        Ok(())
    }

    /// Right-multiplies every coefficient matrix by `m` (`k x k`).
    pub fn scale_all(&mut self, m: &DMatrix<f64>) -> Result<()> {
        if m.shape() != (self.k, self.k) {
            return Err(Error::DimensionMismatch { expected: self.k, got: m.nrows() });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scale matrix".into()));
        }
        for b in &mut self.blocks {
            b.alpha = linalg::mul(&b.alpha, m);
        }
        Ok(())
    }

    /// Keeps only the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() || cols.iter().any(|&c| c >= self.k) {
            return Err(Error::InvalidArgument("column selection out of range".into()));
        }
        let mut out = self.clone();
        out.k = cols.len();
        for b in &mut out.blocks {
            b.alpha = b.alpha.select_columns(cols);
        }
        Ok(out)
    }

    /// Model over hand-built feature blocks, kept in the cache so they are
    /// never regenerated.
    #[cfg(test)]
    pub(crate) fn from_cached_blocks(
        spec: KernelSpec,
        k: usize,
        run_seed: u64,
        blocks: Vec<(FeatureBlock, DMatrix<f64>)>,
    ) -> Self {
        let mut model = Self::empty(spec, k, run_seed).unwrap();
        model.store_frequencies = true;
        for (fb, alpha) in blocks {
            model.blocks.push(Block { index: fb.block_index, alpha });
            model.cache.push(fb);
        }
        model
    }

    pub(crate) fn from_parts(
        k: usize,
        spec: KernelSpec,
        run_seed: u64,
        blocks: Vec<Block>,
        store_frequencies: bool,
    ) -> Result<Self> {
        let mut model = Self::empty(spec, k, run_seed)?;
        for (i, b) in blocks.iter().enumerate() {
            if b.index != i as u64 {
                return Err(Error::Format(format!("block {i} has index {}", b.index)));
            }
            if b.alpha.ncols() != k || b.alpha.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("block {i} has invalid coefficients")));
            }
        }
        model.blocks = blocks;
        model.set_store_frequencies(store_frequencies)?;
        Ok(model)
    }
}

/// Two coefficient models trained jointly (left and right singular or
/// canonical functions).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedModel {
    pub left: CoefficientModel,
    pub right: CoefficientModel,
}

impl PairedModel {
    pub fn new(left: CoefficientModel, right: CoefficientModel) -> Result<Self> {
        if left.k() != right.k() {
            return Err(Error::InvalidArgument(format!(
                "paired models disagree on k: {} vs {}",
                left.k(),
                right.k()
            )));
        }
        Ok(Self { left, right })
    }

    /// Both sides share the feature seed and start from different
    /// orthonormal coefficients.
    pub fn init(
        left: &KernelSpec,
        right: &KernelSpec,
        k: usize,
        count_left: usize,
        count_right: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::new(
            CoefficientModel::init_with_stream(left, k, count_left, seed, 0)?,
            CoefficientModel::init_with_stream(right, k, count_right, seed, 1)?,
        )
    }

    pub fn k(&self) -> usize {
        self.left.k()
    }

    pub fn swapped(&self) -> Self {
        Self { left: self.right.clone(), right: self.left.clone() }
    }
}
