//! Kernels and seeded random Fourier features.
//!
//! Shift-invariant kernels are approximated by features
//! `sqrt(2) cos(w.x + b)` with `w` drawn from the kernel's spectral density
//! and `b` uniform on `[0, 2pi)`. The linear kernel uses the identity map.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `exp(-|x-y|^2 / (2 s^2))`
    Gaussian,
    /// `exp(-|x-y|_1 / s)`
    Laplacian,
    /// `prod_i 1 / (1 + ((x_i - y_i) / s)^2)`
    Cauchy,
    /// `<x, y>`
    Linear,
}

impl KernelFamily {
    pub fn is_fourier(self) -> bool {
        !matches!(self, KernelFamily::Linear)
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "laplacian" => Ok(Self::Laplacian),
            "cauchy" => Ok(Self::Cauchy),
            "linear" => Ok(Self::Linear),
            other => Err(Error::InvalidArgument(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// How random Fourier features are laid out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureForm {
    /// One random phase per frequency.
    #[default]
    Phase,
    /// Frequencies come in pairs evaluated as `cos` and `sin`.
    SinCosPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
    pub dim: usize,
    #[serde(default)]
    pub feature_form: FeatureForm,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("kernel dimension must be at least 1".into()));
        }
        if family.is_fourier() && !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { family, bandwidth, dim, feature_form: FeatureForm::Phase })
    }

    pub fn gaussian(bandwidth: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, bandwidth, dim)
    }

    pub fn linear(dim: usize) -> Self {
        Self { family: KernelFamily::Linear, bandwidth: 1.0, dim, feature_form: FeatureForm::Phase }
    }

    pub fn with_feature_form(mut self, form: FeatureForm) -> Self {
        self.feature_form = form;
        self
    }

    /// `sup_x k(x, x)`; unbounded for the linear kernel.
    pub fn kappa_bound(&self) -> f64 {
        if self.family.is_fourier() {
            1.0
        } else {
            f64::INFINITY
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        kernel_eval(self, x, y)
    }

    /// Gram matrix over the rows of `a` against the rows of `b`.
    pub fn gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_cols(self.dim, a)?;
        check_cols(self.dim, b)?;
        let ra = rows_of(a);
        let rb = rows_of(b);
        let mut out = DMatrix::zeros(a.nrows(), b.nrows());
        for (i, x) in ra.iter().enumerate() {
            for (j, y) in rb.iter().enumerate() {
                out[(i, j)] = kernel_eval(self, x, y)?;
            }
        }
        Ok(out)
    }
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn check_cols(dim: usize, m: &DMatrix<f64>) -> Result<()> {
    if m.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: m.ncols() });
    }
    Ok(())
}

/// Closed-form kernel value.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != spec.dim {
        return Err(Error::DimensionMismatch { expected: spec.dim, got: x.len() });
    }
    if y.len() != spec.dim {
        return Err(Error::DimensionMismatch { expected: spec.dim, got: y.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel input".into()));
    }
    let s = spec.bandwidth;
    let diffs = x.iter().zip(y).map(|(a, b)| a - b);
    let value = match spec.family {
        KernelFamily::Gaussian => {
            let d2: f64 = diffs.map(|d| d * d).sum();
            (-d2 / (2.0 * s * s)).exp()
        }
        KernelFamily::Laplacian => {
            let d1: f64 = diffs.map(f64::abs).sum();
            (-d1 / s).exp()
        }
        KernelFamily::Cauchy => diffs.map(|d| 1.0 / (1.0 + (d / s) * (d / s))).product(),
        KernelFamily::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
    };
    Ok(value)
}

/// Median pairwise Euclidean distance over a seeded subsample of rows.
pub fn median_bandwidth(data: &DMatrix<f64>, subsample: usize, seed: u64) -> Result<f64> {
    let n = data.nrows();
    if n < 2 || subsample < 2 {
        return Err(Error::InvalidArgument(
            "median bandwidth needs at least two rows and a subsample of at least two".into(),
        ));
    }
    let m = subsample.min(n);
    // partial Fisher-Yates
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(seed, Purpose::Subsample, 0);
    for i in 0..m {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(m);
    idx.sort_unstable();
    let rows: Vec<Vec<f64>> = idx.iter().map(|&r| data.row(r).iter().copied().collect()).collect();
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            let d2: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    let med = median(&mut dists);
    if !(med > 0.0) {
        return Err(Error::InvalidArgument(
            "median pairwise distance is zero; sampled points are identical".into(),
        ));
    }
    Ok(med)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    let len = values.len();
    let cmp = |a: &f64, b: &f64| a.total_cmp(b);
    let mid = len / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, cmp);
    let upper = *upper;
    if len % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// One mini-batch of random features, regenerable from `(seed, block_index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub block_index: u64,
    pub seed: u64,
    pub count: usize,
    pub dim: usize,
    pub family: KernelFamily,
    /// `count x dim`; empty for the linear kernel.
    pub frequencies: DMatrix<f64>,
    pub phases: Vec<f64>,
    /// `1/sqrt(count)` for Fourier families, 1 for the identity map.
    pub scale: f64,
}

impl FeatureBlock {
    /// Identity feature block used by the linear kernel.
    pub fn identity(dim: usize, block_index: u64, seed: u64) -> Self {
        Self {
            block_index,
            seed,
            count: dim,
            dim,
            family: KernelFamily::Linear,
            frequencies: DMatrix::zeros(0, dim),
            phases: Vec::new(),
            scale: 1.0,
        }
    }

    /// The block for `(spec, seed, block_index)`; identity for the linear kernel.
    pub fn regenerate(spec: &KernelSpec, seed: u64, block_index: u64, count: usize) -> Result<Self> {
        if spec.family.is_fourier() {
            sample_feature_block(spec, seed, block_index, count)
        } else {
            if count != spec.dim {
                return Err(Error::InvalidArgument(format!(
                    "linear kernel blocks have exactly dim={} features, got {count}",
                    spec.dim
                )));
            }
            Ok(Self::identity(spec.dim, block_index, seed))
        }
    }

    /// Features of every row of `x`, `x.nrows() x count`.
    pub fn feature_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        feature_matrix(self, x)
    }

    /// `out += features(x) * alpha`, summing features in ascending order.
    pub(crate) fn accumulate(&self, x: &DMatrix<f64>, alpha: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        if !self.family.is_fourier() {
            crate::linalg::add_mul(out, x, alpha);
            return;
        }
        let m = x.nrows();
        let mut col = vec![0.0; m];
        for c in 0..self.count {
            self.feature_column(x, c, &mut col);
            for j in 0..alpha.ncols() {
                let w = alpha[(c, j)];
                for (o, f) in out.column_mut(j).iter_mut().zip(&col) {
                    *o += f * w;
                }
            }
        }
    }

    /// Values of feature `c` at every row of `x`.
    fn feature_column(&self, x: &DMatrix<f64>, c: usize, out: &mut [f64]) {
        let m = x.nrows();
        let amp = self.scale * std::f64::consts::SQRT_2;
        let b = self.phases[c];
        let xs = x.as_slice();
        out.fill(b);
        for d in 0..self.dim {
            let w = self.frequencies[(c, d)];
            for (z, xv) in out.iter_mut().zip(&xs[d * m..(d + 1) * m]) {
                *z += w * xv;
            }
        }
        for z in out.iter_mut() {
            *z = amp * z.cos();
        }
    }

    fn features_unchecked(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if !self.family.is_fourier() {
            return x.clone();
        }
        let m = x.nrows();
        let mut out = DMatrix::zeros(m, self.count);
        for c in 0..self.count {
            let mut col = vec![0.0; m];
            self.feature_column(x, c, &mut col);
            out.column_mut(c).copy_from_slice(&col);
        }
        out
    }
}

/// Seeded random Fourier features for a shift-invariant kernel.
///
/// Row `c` of the block consumes a fixed window of the `(seed, block_index)`
/// stream, so blocks (and rows) regenerate independently of call order.
pub fn sample_feature_block(
    spec: &KernelSpec,
    seed: u64,
    block_index: u64,
    count: usize,
) -> Result<FeatureBlock> {
    if !spec.family.is_fourier() {
        return Err(Error::InvalidArgument(
            "linear kernel has no random features; use the identity block".into(),
        ));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("feature count must be at least 1".into()));
    }
    let pairs = spec.feature_form == FeatureForm::SinCosPairs;
    if pairs && !count.is_multiple_of(2) {
        return Err(Error::InvalidArgument("sin/cos pair features need an even count".into()));
    }
    let dim = spec.dim;
    let inv_bw = 1.0 / spec.bandwidth;
    let mut rng = rng::stream(seed, Purpose::Features, block_index);
    // two u64 draws per coordinate plus two for the phase, four words each
    let words_per_row = 4 * (dim as u128 + 1);
    let mut frequencies = DMatrix::zeros(count, dim);
    let mut phases = vec![0.0; count];
    let draw_rows = if pairs { count / 2 } else { count };
    for row in 0..draw_rows {
        rng.set_word_pos(row as u128 * words_per_row);
        let target = if pairs { 2 * row } else { row };
        for d in 0..dim {
            frequencies[(target, d)] = draw_frequency(spec.family, &mut rng) * inv_bw;
        }
        let u = rng::open_unit(&mut rng);
        let _ = rng::open_unit(&mut rng);
        if pairs {
            for d in 0..dim {
                frequencies[(target + 1, d)] = frequencies[(target, d)];
            }
            phases[target] = 0.0;
            phases[target + 1] = 1.5 * PI;
        } else {
            phases[target] = 2.0 * PI * u;
        }
    }
    Ok(FeatureBlock {
        block_index,
        seed,
        count,
        dim,
        family: spec.family,
        frequencies,
        phases,
        scale: 1.0 / (count as f64).sqrt(),
    })
}

/// One spectral draw at unit bandwidth. Always consumes two uniforms.
fn draw_frequency(family: KernelFamily, rng: &mut ChaCha8Rng) -> f64 {
    let u1 = rng::open_unit(rng);
    let u2 = rng::open_unit(rng);
    match family {
        // Box-Muller
        KernelFamily::Gaussian => (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos(),
        // standard Cauchy by inverse CDF
        KernelFamily::Laplacian => (PI * (u1 - 0.5)).tan(),
        // Laplace(0, 1) by inverse CDF
        KernelFamily::Cauchy => {
            let c = u1 - 0.5;
            -c.signum() * (1.0 - 2.0 * c.abs()).ln()
        }
        KernelFamily::Linear => unreachable!("linear kernel has no spectral density"),
    }
}

/// Feature evaluation of the rows of `x`.
pub fn feature_matrix(block: &FeatureBlock, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != block.dim {
        return Err(Error::DimensionMismatch { expected: block.dim, got: x.ncols() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature input".into()));
    }
    Ok(block.features_unchecked(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn gaussian_values() {
        let k = KernelSpec::gaussian(1.0, 2).unwrap();
        assert_eq!(k.eval(&[3.0, -2.0], &[3.0, -2.0]).unwrap(), 1.0);
        let v = k.eval(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!(close(v, (-1.0f64).exp(), 1e-15));
        assert!(close(v, 0.367879, 1e-6));
    }

    #[test]
    fn laplacian_and_cauchy_values() {
        let l = KernelSpec::new(KernelFamily::Laplacian, 1.0, 1).unwrap();
        assert!(close(l.eval(&[0.0], &[1.0]).unwrap(), (-1.0f64).exp(), 1e-15));
        let c = KernelSpec::new(KernelFamily::Cauchy, 2.0, 2).unwrap();
        assert_eq!(c.eval(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(close(c.eval(&[0.0, 0.0], &[2.0, 0.0]).unwrap(), 0.5, 1e-15));
        let lin = KernelSpec::linear(2);
        assert_eq!(lin.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
    }

    #[test]
    fn kernel_errors() {
        let k = KernelSpec::gaussian(1.0, 2).unwrap();
        assert!(matches!(k.eval(&[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(k.eval(&[f64::NAN, 0.0], &[1.0, 2.0]), Err(Error::NonFinite(_))));
        assert!(KernelSpec::gaussian(0.0, 2).is_err());
        assert!(KernelSpec::gaussian(1.0, 0).is_err());
    }

    #[test]
    fn kappa() {
        assert_eq!(KernelSpec::gaussian(3.0, 4).unwrap().kappa_bound(), 1.0);
        assert!(KernelSpec::linear(2).kappa_bound().is_infinite());
    }

    #[test]
    fn median_small_cases() {
        let two = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        assert_eq!(median_bandwidth(&two, 10, 0).unwrap(), 2.0);
        let three = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        assert_eq!(median_bandwidth(&three, 3, 5).unwrap(), 2.0);
        let same = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(median_bandwidth(&same, 3, 0).is_err());
        assert!(median_bandwidth(&two, 1, 0).is_err());
    }

    #[test]
    fn median_even_count_averages() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&mut v), 2.5);
    }

    #[test]
    fn median_bandwidth_is_deterministic() {
        let data = DMatrix::from_fn(50, 3, |r, c| ((r * 7 + c * 3) % 11) as f64);
        let a = median_bandwidth(&data, 20, 4).unwrap();
        let b = median_bandwidth(&data, 20, 4).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn blocks_regenerate_bit_identically() {
        let k = KernelSpec::gaussian(1.5, 3).unwrap();
        let a = sample_feature_block(&k, 1, 0, 16).unwrap();
        let b = sample_feature_block(&k, 1, 0, 16).unwrap();
        assert_eq!(a, b);
        let c = sample_feature_block(&k, 1, 1, 16).unwrap();
        assert_ne!(a.frequencies, c.frequencies);
        // a row depends only on its own window of the stream
        let short = sample_feature_block(&k, 1, 0, 4).unwrap();
        for r in 0..4 {
            assert_eq!(short.frequencies.row(r), a.frequencies.row(r));
            assert_eq!(short.phases[r], a.phases[r]);
        }
    }

    #[test]
    fn linear_family_has_no_random_block() {
        let k = KernelSpec::linear(3);
        assert!(sample_feature_block(&k, 0, 0, 3).is_err());
        let block = FeatureBlock::regenerate(&k, 0, 0, 3).unwrap();
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.25]);
        assert_eq!(block.feature_matrix(&x).unwrap(), x);
        assert!(FeatureBlock::regenerate(&k, 0, 0, 4).is_err());
    }

    #[test]
    fn zero_frequency_feature_is_constant_sqrt2() {
        let block = FeatureBlock {
            block_index: 0,
            seed: 0,
            count: 1,
            dim: 2,
            family: KernelFamily::Gaussian,
            frequencies: DMatrix::zeros(1, 2),
            phases: vec![0.0],
            scale: 1.0,
        };
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -4.0, 0.0, 9.0, 9.0]);
        let phi = block.feature_matrix(&x).unwrap();
        for v in phi.iter() {
            assert_eq!(*v, std::f64::consts::SQRT_2);
        }
    }

    #[test]
    fn feature_matrix_dimension_check() {
        let k = KernelSpec::gaussian(1.0, 2).unwrap();
        let b = sample_feature_block(&k, 0, 0, 8).unwrap();
        assert!(b.feature_matrix(&DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn features_are_bounded() {
        for family in [KernelFamily::Gaussian, KernelFamily::Laplacian, KernelFamily::Cauchy] {
            let k = KernelSpec::new(family, 0.7, 2).unwrap();
            let b = sample_feature_block(&k, 3, 2, 64).unwrap();
            let x = DMatrix::from_fn(20, 2, |r, c| (r as f64 - 10.0) * 0.3 + c as f64);
            let phi = b.feature_matrix(&x).unwrap();
            for v in phi.iter() {
                assert!((v / b.scale).abs() <= std::f64::consts::SQRT_2 + 1e-15);
            }
            assert!(b.phases.iter().all(|p| (0.0..2.0 * PI).contains(p)));
        }
    }

    #[test]
    fn gaussian_frequency_variance() {
        let k = KernelSpec::gaussian(2.0, 2).unwrap();
        let b = sample_feature_block(&k, 11, 0, 100_000).unwrap();
        for d in 0..2 {
            let col = b.frequencies.column(d);
            let mean = col.mean();
            let var = col.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (col.len() - 1) as f64;
            assert!((var - 0.25).abs() <= 0.05 * 0.25, "variance {var}");
        }
    }

    #[test]
    fn sin_cos_pairs_approximate_kernel() {
        let k = KernelSpec::gaussian(1.0, 2).unwrap().with_feature_form(FeatureForm::SinCosPairs);
        let b = sample_feature_block(&k, 5, 0, 20_000).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 1.0, 0.4]);
        let phi = b.feature_matrix(&x).unwrap();
        let approx = phi.row(0).dot(&phi.row(1));
        let exact = k.eval(&[0.3, -0.2], &[1.0, 0.4]).unwrap();
        assert!((approx - exact).abs() < 0.05);
        let self_ip = phi.row(0).dot(&phi.row(0));
        assert!((self_ip - 1.0).abs() < 1e-12);
        assert!(sample_feature_block(&k, 5, 0, 3).is_err());
    }
}
