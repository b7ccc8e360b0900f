//! Property tests for the algebraic invariants.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use vbil_core::expfam::{mean_to_natural, natural_to_mean};
use vbil_core::linalg::{duplication_matrix, vech};
use vbil_core::models::{tilde_forward, tilde_inverse};

fn small_reals() -> impl Strategy<Value = f64> {
    (-3.0f64..3.0).prop_filter("finite", |v| v.is_finite())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn natural_mean_maps_are_mutual_inverses(
        d in 1usize..=4,
        seed_vals in prop::collection::vec(small_reals(), 30),
    ) {
        let mu = DVector::from_fn(d, |i, _| seed_vals[i]);
        let l = DMatrix::from_fn(d, d, |i, j| {
            if i > j {
                0.3 * seed_vals[4 + i * 4 + j]
            } else if i == j {
                0.5 + seed_vals[20 + i].abs()
            } else {
                0.0
            }
        });
        let sigma = &l * l.transpose();
        let lambda = mean_to_natural(&mu, &sigma);
        let (mu2, sigma2) = natural_to_mean(lambda.as_slice(), d).unwrap();
        prop_assert!((mu2 - &mu).amax() < 1e-10);
        prop_assert!((sigma2 - &sigma).amax() < 1e-10);
    }

    #[test]
    fn duplication_matrix_reconstructs_vec_of_symmetric(
        d in 1usize..=5,
        vals in prop::collection::vec(small_reals(), 25),
    ) {
        let a_raw = DMatrix::from_fn(d, d, |i, j| vals[i * 5 + j]);
        let a = (&a_raw + a_raw.transpose()) * 0.5;
        let dd = duplication_matrix(d);
        let rebuilt = &dd * vech(&a);
        let vec_a = DVector::from_column_slice(a.as_slice());
        prop_assert!((rebuilt - vec_a).amax() == 0.0);
    }

    #[test]
    fn stable_reparameterization_roundtrips(
        alpha in 1.1001f64..1.9999,
        beta in -0.999f64..0.999,
        gamma in 0.01f64..10.0,
        delta in -10.0f64..10.0,
    ) {
        let t = tilde_forward(alpha, beta, gamma, delta).unwrap();
        let (a, b, g, d) = tilde_inverse(&t);
        prop_assert!((a - alpha).abs() < 1e-9);
        prop_assert!((b - beta).abs() < 1e-9);
        prop_assert!((g - gamma).abs() < 1e-9 * gamma.max(1.0));
        prop_assert!((d - delta).abs() < 1e-12);
    }
}
