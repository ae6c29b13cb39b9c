use approx::assert_relative_eq;
use num_complex::Complex64;
use proptest::prelude::*;

use dps_hybrid::fully_connected::{
    factor_double_phase, hybrid_lowrank, rescale_feasible, DPS_MAX_MODULUS,
};
use dps_hybrid::linalg::{frob_sq, max_modulus, CMat};
use dps_hybrid::partial::{
    fixed_block_mapping, greedy_mapping, hybrid_partial, kmeans_mapping, mapping_objective,
    KMEANS_MAX_ITER,
};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = CMat> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), rows * cols).prop_map(move |v| {
        CMat::from_iterator(rows, cols, v.into_iter().map(|(re, im)| Complex64::new(re, im)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn double_phase_reconstructs_entry(r in 0.0f64..=2.0, phase in -3.2f64..3.2) {
        let z = Complex64::from_polar(r, phase);
        let pair = factor_double_phase(z).unwrap();
        let back = pair.value();
        prop_assert!((back - z).norm() < 1e-9);
    }

    #[test]
    fn double_phase_rejects_large_modulus(r in 2.001f64..10.0, phase in -3.2f64..3.2) {
        prop_assert!(factor_double_phase(Complex64::from_polar(r, phase)).is_err());
    }

    #[test]
    fn rescaled_lowrank_is_dps_feasible(f in matrix(12, 4), n_rf in 1usize..=4) {
        let low = hybrid_lowrank(&f, n_rf).unwrap();
        let (f_rf, f_bb, _) = rescale_feasible(&low.f_rf, &low.f_bb).unwrap();
        prop_assert!(max_modulus(&f_rf) <= DPS_MAX_MODULUS + 1e-12);
        let err = frob_sq(&(&f_rf * &f_bb - &low.f_hat));
        prop_assert!(err <= 1e-9 * frob_sq(&low.f_hat).max(1.0));
    }

    #[test]
    fn dynamic_mappings_are_partitions(f in matrix(10, 3), n_rf in 2usize..5) {
        for mapping in [
            greedy_mapping(&f, n_rf).unwrap().mapping,
            kmeans_mapping(&f, n_rf, KMEANS_MAX_ITER).unwrap().mapping,
        ] {
            let mut seen: Vec<usize> = mapping.clusters().iter().flatten().copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..10).collect::<Vec<_>>());
            prop_assert!(mapping.clusters().iter().all(|c| !c.is_empty()));
        }
    }

    #[test]
    fn partial_residual_identity(f in matrix(8, 3)) {
        let mapping = fixed_block_mapping(8, 4).unwrap();
        let hybrid = hybrid_partial(&f, &mapping).unwrap();
        mapping.check_analog(&hybrid.f_rf).unwrap();
        let total = frob_sq(&f);
        assert_relative_eq!(
            mapping_objective(&f, &mapping) + hybrid.residual,
            total,
            epsilon = 1e-9 * total.max(1.0)
        );
        prop_assert!(frob_sq(&(&hybrid.f_rf * &hybrid.f_bb)) <= total * (1.0 + 1e-9));
    }
}
