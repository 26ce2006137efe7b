mod common;

use common::oracles::rdp_quadrature;
use dpcgans_core::gan::{fit, PrivacyConfig, TrainingConfig};
use dpcgans_core::privacy::{default_orders, eps_from_rdp, epsilon_after, rdp_per_step};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integer_orders_match_quadrature(q in 0.001..0.3f64, sigma in 0.6..8.0f64, alpha in 2u32..40) {
        let a = alpha as f64;
        let want = rdp_quadrature(q, sigma, a);
        let got = rdp_per_step(q, sigma, a);
        prop_assert!((got - want).abs() <= 1e-6 * want, "{got} vs {want}");
    }

    #[test]
    fn fractional_orders_bound_from_above(q in 0.001..0.3f64, sigma in 0.6..8.0f64, alpha in 1.2..20.0f64) {
        prop_assume!(alpha.fract() > 0.05);
        prop_assert!(rdp_per_step(q, sigma, alpha) >= rdp_quadrature(q, sigma, alpha) * (1.0 - 1e-9));
    }

    #[test]
    fn rdp_monotone_in_q_and_sigma(q in 0.001..0.5f64, dq in 0.0..0.5f64, sigma in 0.5..10.0f64, ds in 0.0..5.0f64) {
        for &a in &default_orders() {
            let base = rdp_per_step(q, sigma, a);
            prop_assert!(rdp_per_step((q + dq).min(1.0), sigma, a) >= base * (1.0 - 1e-12));
            prop_assert!(rdp_per_step(q, sigma + ds, a) <= base * (1.0 + 1e-12));
        }
    }

    #[test]
    fn epsilon_monotone_in_steps_and_delta(
        q in 0.001..0.5f64,
        sigma in 0.5..10.0f64,
        steps in 1u64..100_000,
        extra in 0u64..100_000,
        delta in 1e-10..1e-2f64,
    ) {
        prop_assert!(epsilon_after(q, sigma, steps, delta) <= epsilon_after(q, sigma, steps + extra, delta));
        prop_assert!(epsilon_after(q, sigma, steps, delta) >= epsilon_after(q, sigma, steps, delta * 10.0));
        let orders = default_orders();
        let rdp: Vec<f64> = orders.iter().map(|&a| rdp_per_step(q, sigma, a) * steps as f64).collect();
        let eps = eps_from_rdp(&orders, &rdp, delta);
        for (a, r) in orders.iter().zip(&rdp) {
            prop_assert!(eps <= eps_from_rdp(&[*a], &[*r], delta));
        }
    }
}

#[test]
fn accounting_ignores_batch_contents() {
    let cfg = TrainingConfig {
        epochs: 2,
        batch_size: 20,
        noise_dim: 8,
        generator_hidden: vec![8],
        discriminator_hidden: vec![8],
        privacy: PrivacyConfig::with_epsilon(3.0),
        seed: 1,
        ..Default::default()
    };
    let a = fit(&common::dependent_pair_table(100, 1), cfg.clone()).unwrap();
    let b = fit(&common::dependent_pair_table(100, 2), TrainingConfig { seed: 9, ..cfg }).unwrap();
    assert_eq!(a.accountant, b.accountant);
    assert_eq!(a.privacy.noise_multiplier, b.privacy.noise_multiplier);
}
