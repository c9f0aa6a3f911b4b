use dskca::diagnostics::sin2_subspace_empirical;
use dskca::oracles::dense_svd_topk;
use dskca::rng::{self, Purpose};
use dskca::solvers::{fit, DatasetSampler, Sampling, StepSchedule, Task, TrainConfig};
use dskca::{linalg, KernelSpec};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

fn rotation(d: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, Purpose::Synthetic, 5);
    linalg::orthonormal_basis(&DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut r)), "q").unwrap()
}

#[test]
fn ksvd_recovers_singular_subspaces_of_a_fixed_matrix() {
    let (p, q) = (20, 15);
    let sv = [1.0, 0.7, 0.3, 0.2, 0.1];
    let m = rotation(p, 1).columns(0, 5) * DMatrix::from_diagonal(&DVector::from_row_slice(&sv))
        * rotation(q, 2).columns(0, 5).transpose();
    let (u, _, v) = dense_svd_topk(&m, 2).unwrap();
    // rows sqrt(p) e_i paired with sqrt(p) m_i, so the cross moment is M
    let s = (p as f64).sqrt();
    let mut sampler =
        DatasetSampler::new(DMatrix::identity(p, p) * s, Some(&m * s), Sampling::EpochShuffle, 3).unwrap();
    let mut config = TrainConfig::new(2, 2000, StepSchedule::new(0.1, 0.001).unwrap(), 4);
    config.data_batch = 5;
    config.feature_batch = p;
    config.total_features = p;
    let out = fit(Task::Ksvd, &KernelSpec::linear(p), Some(&KernelSpec::linear(q)), &mut sampler, &config, None)
        .unwrap();
    let pair = out.model.paired().unwrap();
    let left = pair.left.evaluate(&DMatrix::identity(p, p)).unwrap();
    let right = pair.right.evaluate(&DMatrix::identity(q, q)).unwrap();
    let (sl, sr) = (sin2_subspace_empirical(&u, &left).unwrap(), sin2_subspace_empirical(&v, &right).unwrap());
    assert!(sl <= 1e-2 && sr <= 1e-2, "left {sl}, right {sr}");
}
