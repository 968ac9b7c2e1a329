use bravo_core::chain::{build_mmsk, d_pi, d_pi_marked, output_stats, stationary, MarkedNormalization, MmskParams};
use bravo_core::qed::delay_prob_limit;
use bravo_core::sim::{
    empirical_delay_prob, empirical_occupancy, simulate_marked_ratio, simulate_ratio, EstimateQuality, InitialState,
    SimConfig,
};
use bravo_core::BirthDeathChain;

fn mmsk(s: u64, k: u64, rho: f64) -> BirthDeathChain {
    build_mmsk(MmskParams::new(s, k, rho).unwrap()).unwrap()
}

fn config(chain: &BirthDeathChain, seed: u64, replications: usize, batches: usize) -> SimConfig {
    let mut c = SimConfig::for_chain(chain, seed).unwrap();
    c.replications = replications;
    c.batch_count = batches;
    c
}

#[test]
fn marked_half_thinning_matches_formula() {
    let chain = mmsk(2, 2, 0.8);
    let marks = [0.5; 4];
    let formula = d_pi_marked(&chain, &marks, MarkedNormalization::CountedDepartures).unwrap().ratio;
    let est = simulate_marked_ratio(&chain, &marks, &config(&chain, 31, 8, 100)).unwrap();
    assert_eq!(est.quality, EstimateQuality::Ok);
    assert!((est.ratio_estimate - formula).abs() <= 3.0 * est.standard_error, "{} ± {} vs {formula}", est.ratio_estimate, est.standard_error);
}

#[test]
fn moderate_multiserver_matches_exact() {
    let chain = mmsk(5, 7, 1.0);
    let exact = d_pi(&chain).unwrap();
    let est = simulate_ratio(&chain, &config(&chain, 8, 8, 100)).unwrap();
    assert!((est.ratio_estimate - exact).abs() <= 3.0 * est.standard_error);
}

#[test]
fn rate_law() {
    let chain = mmsk(3, 4, 1.1);
    let dist = stationary(&chain).unwrap();
    let rate = output_stats(&chain, &dist).departure_rate;
    let est = simulate_ratio(&chain, &config(&chain, 12, 4, 50)).unwrap();
    assert!((est.mean_rate_estimate - rate).abs() <= 3.0 * est.mean_rate_standard_error);
}

#[test]
fn occupancy_law_in_total_variation() {
    for chain in [mmsk(4, 6, 0.9), mmsk(20, 30, 1.0)] {
        let pi = stationary(&chain).unwrap().probabilities;
        let mut c = config(&chain, 5, 2, 20);
        c.batch_length = 5e5 / output_stats(&chain, &stationary(&chain).unwrap()).departure_rate / 20.0;
        let occ = empirical_occupancy(&chain, &c).unwrap();
        let tv: f64 = 0.5 * pi.iter().zip(&occ).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tv <= 0.01, "total variation {tv}");
    }
}

#[test]
fn standard_error_scales_with_batch_total() {
    let chain = mmsk(2, 3, 1.0);
    let mut base = config(&chain, 40, 4, 50);
    base.batch_length = 200.0;
    let mut doubled = base;
    doubled.replications = 8;
    let a = simulate_ratio(&chain, &base).unwrap().standard_error;
    let b = simulate_ratio(&chain, &doubled).unwrap().standard_error;
    let ratio = a / b;
    let expected = 2.0_f64.sqrt();
    assert!(ratio > expected / 1.5 && ratio < expected * 1.5, "se ratio {ratio}");
}

#[test]
fn delay_probability_matches_stationary_tail_and_limit() {
    let chain = mmsk(4, 3, 0.9);
    let exact = stationary(&chain).unwrap().tail_mass(4);
    let est = empirical_delay_prob(&chain, 4, &config(&chain, 3, 4, 50)).unwrap();
    assert!((est.estimate - exact).abs() <= 3.0 * est.standard_error, "{} vs {exact}", est.estimate);

    let s = 400;
    let big = build_mmsk(MmskParams::from_qed(s, 1.0, 1.0).unwrap()).unwrap();
    let mut c = config(&big, 17, 4, 20);
    c.batch_length = 50.0;
    c.warmup_time = 20.0;
    let est = empirical_delay_prob(&big, s as usize, &c).unwrap();
    let limit = delay_prob_limit(1.0, 1.0).unwrap();
    assert!((est.estimate - limit).abs() <= 0.03, "{} vs {limit}", est.estimate);
}

#[test]
fn fixed_initial_state_with_warmup_is_unbiased() {
    let chain = mmsk(1, 0, 1.0);
    let mut c = config(&chain, 2, 4, 100);
    c.initial_state = InitialState::Fixed(0);
    c.batch_length = 1000.0;
    let est = simulate_ratio(&chain, &c).unwrap();
    assert!((est.ratio_estimate - 0.5).abs() <= 3.0 * est.standard_error);
}

#[test]
fn identical_seed_gives_identical_estimate() {
    let chain = mmsk(2, 2, 0.8);
    let c = config(&chain, 123, 3, 20);
    let a = simulate_marked_ratio(&chain, &[0.5; 4], &c).unwrap();
    let b = simulate_marked_ratio(&chain, &[0.5; 4], &c).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    let mut other = c;
    other.master_seed = 124;
    assert_ne!(a, simulate_marked_ratio(&chain, &[0.5; 4], &other).unwrap());
}
