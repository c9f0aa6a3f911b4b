//! Property checks shared by the proptest suite and the acceptance run.
#![allow(dead_code)]

use dskca::diagnostics::{cos2_subspace_gram, sin2_subspace_empirical};
use dskca::linalg;
use dskca::{init_model, FeatureBlock, KernelFamily, KernelSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![
        Just(KernelFamily::Gaussian),
        Just(KernelFamily::Laplacian),
        Just(KernelFamily::Cauchy),
        Just(KernelFamily::Linear),
    ]
}

pub fn fourier_family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![Just(KernelFamily::Gaussian), Just(KernelFamily::Laplacian), Just(KernelFamily::Cauchy)]
}

pub fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

/// Well-conditioned `k x k`: rotation times a diagonal in `[0.5, 2]` times
/// another rotation.
pub fn invertible(k: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (matrix(k, k, 1.0), matrix(k, k, 1.0), prop::collection::vec(0.5f64..2.0, k)).prop_filter_map(
        "degenerate rotation",
        move |(a, b, d)| {
            let qa = linalg::orthonormal_basis(&(a + DMatrix::identity(k, k) * 0.1), "a").ok()?;
            let qb = linalg::orthonormal_basis(&(b + DMatrix::identity(k, k) * 0.1), "b").ok()?;
            Some(qa * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)) * qb)
        },
    )
}

pub fn gram_is_psd(
    family: KernelFamily,
    bandwidth: f64,
    points: &DMatrix<f64>,
) -> Result<(), TestCaseError> {
    let spec = KernelSpec::new(family, bandwidth, points.ncols()).unwrap();
    let g = spec.gram(points, points).unwrap();
    prop_assert!((&g - g.transpose()).amax() == 0.0, "gram not symmetric");
    let scale = g.amax().max(1.0);
    let lmin = linalg::lambda_min(&g);
    prop_assert!(lmin >= -1e-10 * scale * points.nrows() as f64, "lambda_min {lmin}");
    Ok(())
}

pub fn empirical_angle_is_basis_invariant(
    ev: &DMatrix<f64>,
    eh: &DMatrix<f64>,
    m1: &DMatrix<f64>,
    m2: &DMatrix<f64>,
) -> Result<(), TestCaseError> {
    let base = match sin2_subspace_empirical(ev, eh) {
        Ok(v) => v,
        Err(_) => return Err(TestCaseError::reject("rank deficient draw")),
    };
    let moved = sin2_subspace_empirical(&(ev * m1), &(eh * m2)).unwrap();
    prop_assert!((base - moved).abs() <= 1e-10, "{base} vs {moved}");
    prop_assert!((-1e-9..=1.0 + 1e-9).contains(&base));
    Ok(())
}

/// Points spaced at least 1 apart with bandwidth 0.6 give a gram matrix
/// close to the identity.
pub fn spread_points(offsets: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(offsets.len(), 1, |i, _| 1.5 * i as f64 + 0.5 * offsets[i])
}

pub fn gram_angle_is_basis_invariant(
    points: &DMatrix<f64>,
    v: &DMatrix<f64>,
    g: &DMatrix<f64>,
    m1: &DMatrix<f64>,
    m2: &DMatrix<f64>,
) -> Result<(), TestCaseError> {
    let gram = KernelSpec::gaussian(0.6, 1).unwrap().gram(points, points).unwrap();
    let base = match cos2_subspace_gram(v, g, &gram) {
        Ok(c) => c,
        Err(_) => return Err(TestCaseError::reject("rank deficient draw")),
    };
    let moved = cos2_subspace_gram(&(v * m1), &(g * m2), &gram).unwrap();
    prop_assert!((base - moved).abs() <= 1e-10, "{base} vs {moved}");
    Ok(())
}

pub fn scale_all_is_linear(
    seed: u64,
    bandwidth: f64,
    m: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<(), TestCaseError> {
    let k = m.nrows();
    let spec = KernelSpec::gaussian(bandwidth, x.ncols()).unwrap();
    let mut model = init_model(&spec, k, 16, seed).unwrap();
    let block = model.next_block(16).unwrap();
    model.append_block(&block, DMatrix::from_fn(16, k, |r, c| ((r * 3 + c) % 7) as f64 - 3.0)).unwrap();
    let before = model.evaluate(x).unwrap();
    model.scale_all(m).unwrap();
    let after = model.evaluate(x).unwrap();
    let err = (after - before * m).amax();
    prop_assert!(err <= 1e-12, "linearity error {err}");
    Ok(())
}

pub fn regeneration_is_bit_exact(
    family: KernelFamily,
    bandwidth: f64,
    dim: usize,
    seed: u64,
    index: u64,
    count: usize,
) -> Result<(), TestCaseError> {
    let spec = KernelSpec::new(family, bandwidth, dim).unwrap();
    let count = if family.is_fourier() { count } else { dim };
    let first = FeatureBlock::regenerate(&spec, seed, index, count).unwrap();
    // an unrelated block in between must not disturb the stream
    let _ = FeatureBlock::regenerate(&spec, seed, index + 1, count).unwrap();
    let again = FeatureBlock::regenerate(&spec, seed, index, count).unwrap();
    let bits = |b: &FeatureBlock| -> Vec<u64> {
        b.frequencies.iter().chain(&b.phases).map(|v| v.to_bits()).collect()
    };
    prop_assert_eq!(bits(&first), bits(&again));

    let mut model = init_model(&spec, 1, count, seed).unwrap();
    let x = DMatrix::from_fn(5, dim, |r, c| (r as f64 - 2.0) * 0.4 + c as f64 * 0.1);
    let plain = model.evaluate(&x).unwrap();
    model.set_store_frequencies(true).unwrap();
    let cached = model.evaluate(&x).unwrap();
    prop_assert!(plain.iter().zip(cached.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    Ok(())
}
