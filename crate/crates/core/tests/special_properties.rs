use bravo_core::special::{gamma_tail_ratio, mills_ratio, normal_cdf, normal_pdf, poisson_cdf, poisson_pmf};
use proptest::prelude::*;

proptest! {
    #[test]
    fn normal_cdf_is_symmetric(u in -8.0f64..8.0) {
        prop_assert!((normal_cdf(u) + normal_cdf(-u) - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn mills_ratio_is_decreasing(u in -30.0f64..200.0, du in 1e-3f64..5.0) {
        prop_assert!(mills_ratio(u + du).unwrap() < mills_ratio(u).unwrap());
    }

    #[test]
    fn mills_ratio_obeys_tail_bounds(u in 0.5f64..1e4) {
        // u/(1 + u²) ≤ R(u) ≤ 1/u; for large u the gap to the lower bound is
        // below rounding.
        let r = mills_ratio(u).unwrap();
        prop_assert!(r <= 1.0 / u && r >= u / (1.0 + u * u));
    }

    #[test]
    fn mills_ratio_agrees_with_quotient_where_representable(u in -5.0f64..5.0) {
        let direct = normal_cdf(-u) / normal_pdf(u);
        prop_assert!((mills_ratio(u).unwrap() / direct - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn poisson_cdf_is_consistent_with_pmf(mean in 0.5f64..200.0, i in 1u64..400) {
        let step = poisson_cdf(i, mean).unwrap() - poisson_cdf(i - 1, mean).unwrap();
        let pmf = poisson_pmf(i, mean);
        prop_assert!((step - pmf).abs() <= 1e-13 + 1e-10 * pmf);
    }
}

#[test]
fn summation_and_gamma_identity_meet_at_the_switch() {
    // Just below and above the summation limit the two routes must agree.
    let mean = 10_000.5;
    for i in [9_990u64, 10_000, 10_001, 10_050, 10_200] {
        let via_sum: f64 = if i <= 10_000 {
            poisson_cdf(i, mean).unwrap()
        } else {
            poisson_cdf(10_000, mean).unwrap() + (10_001..=i).map(|j| poisson_pmf(j, mean)).sum::<f64>()
        };
        let via_identity = if i <= 10_000 {
            poisson_pmf(i, mean) * gamma_tail_ratio(i, mean).unwrap()
        } else {
            poisson_cdf(i, mean).unwrap()
        };
        assert!((via_sum - via_identity).abs() <= 1e-12, "i = {i}: {via_sum} vs {via_identity}");
    }
}

#[test]
fn mills_ratio_rejects_unrepresentable_arguments() {
    assert!(mills_ratio(-40.0).is_err());
    assert!(mills_ratio(f64::NAN).is_err());
    assert!((mills_ratio(0.0).unwrap() - (std::f64::consts::FRAC_PI_2).sqrt()).abs() < 1e-15);
}
