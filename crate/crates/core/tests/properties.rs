mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_matrices_are_psd(
        family in family(),
        bandwidth in 0.2f64..5.0,
        points in (1usize..4).prop_flat_map(|d| matrix(12, d, 3.0)),
    ) {
        gram_is_psd(family, bandwidth, &points)?;
    }

    #[test]
    fn empirical_angle_ignores_basis(
        ev in matrix(40, 3, 1.0),
        eh in matrix(40, 3, 1.0),
        m1 in invertible(3),
        m2 in invertible(3),
    ) {
        empirical_angle_is_basis_invariant(&ev, &eh, &m1, &m2)?;
    }

    #[test]
    fn gram_angle_ignores_basis(
        offsets in prop::collection::vec(-1.0f64..1.0, 5),
        v in matrix(5, 2, 1.0),
        g in matrix(5, 2, 1.0),
        m1 in invertible(2),
        m2 in invertible(2),
    ) {
        gram_angle_is_basis_invariant(&spread_points(&offsets), &v, &g, &m1, &m2)?;
    }

    #[test]
    fn evaluate_is_linear_under_scale_all(
        seed in any::<u64>(),
        bandwidth in 0.3f64..3.0,
        m in matrix(3, 3, 2.0),
        x in matrix(6, 2, 2.0),
    ) {
        scale_all_is_linear(seed, bandwidth, &m, &x)?;
    }

    #[test]
    fn regenerated_blocks_are_bit_identical(
        family in family(),
        bandwidth in 0.1f64..10.0,
        dim in 1usize..5,
        seed in any::<u64>(),
        index in 0u64..1_000_000,
        count in 1usize..40,
    ) {
        regeneration_is_bit_exact(family, bandwidth, dim, seed, index, count)?;
    }
}

#[test]
fn fourier_strategy_excludes_linear() {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::TestRunner;
    let mut runner = TestRunner::deterministic();
    for _ in 0..20 {
        let f = fourier_family().new_tree(&mut runner).unwrap().current();
        assert!(f.is_fourier());
    }
}
