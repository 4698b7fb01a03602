use nalgebra::DMatrix;
use proptest::prelude::*;

use structbayes::experiments::{generate_noise, restricted_constants, NoiseKind};
use structbayes::instances::{effective_sparsity, gaussian_design, DesignOperator};
use structbayes::marginal::{exact_posterior_table, log_marginal, radial_integral};
use structbayes::prior::{model_index_log_pmf, PriorConfig};
use structbayes::rng::stream;
use structbayes::ModelFamily;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shrinkage_moments_are_ordered(d in 1usize..12, m in 0.0f64..30.0, lambda in 0.0f64..6.0) {
        let r = radial_integral(d, m, lambda).unwrap();
        prop_assert!(r.log_value.is_finite());
        prop_assert!(r.mean_shrink > 0.0 && r.mean_shrink <= 1.0 + 1e-12);
        prop_assert!(r.mean_shrink_sq <= r.mean_shrink + 1e-12);
        prop_assert!(r.mean_shrink_sq >= r.mean_shrink * r.mean_shrink - 1e-12);
    }

    #[test]
    fn radial_integral_decreases_in_lambda(d in 1usize..8, m in 0.0f64..10.0, lambda in 0.01f64..4.0) {
        // N(d, m, lambda) / lambda is the integral of exp(-lambda ||t||) times a Gaussian, so it is decreasing.
        let a = radial_integral(d, m, lambda).unwrap().log_value - lambda.ln();
        let b = radial_integral(d, m, lambda * 1.5).unwrap().log_value - (lambda * 1.5).ln();
        prop_assert!(b < a + 1e-12);
    }

    #[test]
    fn log_marginal_is_invariant_to_reparametrization(seed in 0u64..1000, scale in 0.2f64..5.0) {
        let x = gaussian_design(9, 3, seed);
        let mut rot = gaussian_design(3, 3, seed + 1);
        rot *= scale;
        let y: Vec<f64> = (0..9).map(|i| ((i * 7 + seed as usize) % 5) as f64 - 2.0).collect();
        let a = DesignOperator::new(x.clone(), || "x".into()).unwrap();
        let b = DesignOperator::new(&x * rot, || "xr".into());
        prop_assume!(b.is_ok());
        let la = log_marginal(&a, &y, 1.0).unwrap();
        let lb = log_marginal(&b.unwrap(), &y, 1.0).unwrap();
        prop_assert!((la - lb).abs() < 1e-8 * la.abs().max(1.0));
    }

    #[test]
    fn prior_pmf_is_normalized(lambda in 0.1f64..5.0, d in 0.1f64..5.0, n in 3usize..9) {
        let pmf = model_index_log_pmf(&ModelFamily::sbm(n), &PriorConfig::new(lambda, d).unwrap()).unwrap();
        let total: f64 = pmf.iter().map(|p| p.1.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_table_is_normalized(seed in 0u64..500, d in 0.5f64..4.0) {
        let fam = ModelFamily::sparse_regression(gaussian_design(10, 4, seed));
        let y: Vec<f64> = (0..10).map(|i| (((i as u64 + seed) * 2654435761) % 97) as f64 / 20.0 - 2.4).collect();
        let table = exact_posterior_table(&fam, &y, &PriorConfig::new(1.0, d).unwrap(), 1_000_000).unwrap();
        let total: f64 = table.entries.iter().map(|e| e.log_weight.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert_eq!(table.entries.len(), 15);
    }

    #[test]
    fn compatibility_dominates_scaled_eigenvalue(seed in 0u64..200, s in 1usize..3) {
        // ||b||_1 <= sqrt(t) ||b||_2 on t coordinates gives kappa1 >= sqrt(s / t) kappa2.
        let x = gaussian_design(12, 6, seed);
        let r = restricted_constants(&x, s, 0.0).unwrap();
        let t = r.support_size as f64;
        prop_assert!(r.kappa1 + 1e-12 >= (s as f64 / t).sqrt() * r.kappa2);
        prop_assert!(r.kappa1 <= r.kappa2 * (s as f64).sqrt() + 1e-12);
    }

    #[test]
    fn effective_sparsity_is_monotone(q in 0.05f64..1.0, k in 0.1f64..10.0, p in 2usize..200, n in 2usize..500) {
        let a = effective_sparsity(q, k, p, n);
        let b = effective_sparsity(q, k * 1.5, p, n);
        prop_assert!(a <= b && b <= p);
    }

    #[test]
    fn graph_noise_is_binary_and_symmetric(n in 2usize..10, seed in 0u64..100, p in 0.0f64..1.0) {
        let theta = vec![p; n * (n - 1)];
        let a = generate_noise(NoiseKind::BernoulliGraph, &theta, &mut stream(seed)).unwrap();
        let cell = |i: usize, j: usize| i * (n - 1) + if j < i { j } else { j - 1 };
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    prop_assert!(a[cell(i, j)] == 0.0 || a[cell(i, j)] == 1.0);
                    prop_assert_eq!(a[cell(i, j)], a[cell(j, i)]);
                }
            }
        }
    }
}

#[test]
fn identity_design_has_unit_constants() {
    let x = DMatrix::<f64>::identity(5, 5) * 5f64.sqrt();
    let r = restricted_constants(&x, 1, 1.0).unwrap();
    assert!((r.kappa2 - 1.0).abs() < 1e-12);
    assert!((r.kappa1 - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
}
