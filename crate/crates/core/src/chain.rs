//! Finite birth–death chains and the exact limiting variance-to-mean ratio of
//! their death-counting process.
//!
//! For a chain on `{0, …, J}` with birth rates `λ_0..λ_{J−1}` and death rates
//! `μ_1..μ_J`, the ratio is
//!
//! ```text
//! D = 1 − 2 Σ_i (P_i − Λ*_i) (1 − λ*/(π_i λ_i) (P_i − Λ*_i))
//! ```
//!
//! with `λ* = Σ μ_j π_j` and `Λ*_i = Σ_{j≤i} μ_j π_j / λ*`. All quotients by
//! `π_i` are carried as recursively updated ratios so that chains whose
//! stationary law spans more than the f64 exponent range stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative tolerance when deciding that all birth rates are equal.
pub const CONSTANT_BIRTH_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathChain {
    birth_rates: Vec<f64>,
    death_rates: Vec<f64>,
}

impl BirthDeathChain {
    /// `birth_rates[i]` is λ_i (out of state i), `death_rates[i]` is μ_{i+1}
    /// (out of state i + 1). Both must have the same length J ≥ 1 and hold
    /// strictly positive finite rates.
    pub fn new(birth_rates: Vec<f64>, death_rates: Vec<f64>) -> Result<Self> {
        if birth_rates.is_empty() {
            return Err(invalid("a birth-death chain needs at least one state above zero"));
        }
        if birth_rates.len() != death_rates.len() {
            return Err(invalid(format!(
                "expected as many death rates as birth rates, got {} and {}",
                death_rates.len(),
                birth_rates.len()
            )));
        }
        if let Some((i, r)) = birth_rates.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
            return Err(invalid(format!("birth rate lambda_{i} = {r} must be positive and finite")));
        }
        if let Some((i, r)) = death_rates.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
            return Err(invalid(format!("death rate mu_{} = {r} must be positive and finite", i + 1)));
        }
        Ok(Self { birth_rates, death_rates })
    }

    /// J: the largest state.
    pub fn num_states_above_zero(&self) -> usize {
        self.birth_rates.len()
    }

    pub fn birth_rates(&self) -> &[f64] {
        &self.birth_rates
    }

    pub fn death_rates(&self) -> &[f64] {
        &self.death_rates
    }

    /// λ_i, defined for i < J.
    pub fn birth_rate(&self, state: usize) -> f64 {
        self.birth_rates[state]
    }

    /// μ_i, defined for 1 ≤ i ≤ J.
    pub fn death_rate(&self, state: usize) -> f64 {
        self.death_rates[state - 1]
    }

    /// The common birth rate, or the first index that deviates from λ_0.
    pub fn constant_birth_rate(&self) -> Result<f64> {
        let expected = self.birth_rates[0];
        for (index, &value) in self.birth_rates.iter().enumerate() {
            if (value - expected).abs() > CONSTANT_BIRTH_RTOL * expected.abs() {
                return Err(Error::NonConstantBirths { index, value, expected });
            }
        }
        Ok(expected)
    }

    /// Same chain with every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.birth_rates.iter().map(|r| r * factor).collect(),
            self.death_rates.iter().map(|r| r * factor).collect(),
        )
    }
}

/// `M/M/s/K` with per-server service rate 1 and arrival rate `s·ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmskParams {
    pub servers: u64,
    pub buffer: u64,
    pub traffic_intensity: f64,
}

impl MmskParams {
    pub fn new(servers: u64, buffer: u64, traffic_intensity: f64) -> Result<Self> {
        let params = Self { servers, buffer, traffic_intensity };
        params.validate()?;
        Ok(params)
    }

    /// Halfin–Whitt scaling: ρ = 1 − β/√s and K = ⌈η√s⌉.
    pub fn from_qed(servers: u64, beta: f64, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite() && beta.is_finite()) {
            return Err(invalid(format!("need finite beta and eta >= 0, got beta = {beta}, eta = {eta}")));
        }
        let root = (servers as f64).sqrt();
        Self::new(servers, (eta * root).ceil() as u64, 1.0 - beta / root)
    }

    pub fn validate(&self) -> Result<()> {
        if self.servers < 1 {
            return Err(invalid(format!("servers must be >= 1, got {}", self.servers)));
        }
        if !(self.traffic_intensity > 0.0 && self.traffic_intensity.is_finite()) {
            return Err(invalid(format!("traffic intensity must be positive and finite, got {}", self.traffic_intensity)));
        }
        Ok(())
    }

    /// J = s + K.
    pub fn num_states_above_zero(&self) -> u64 {
        self.servers + self.buffer
    }
}

/// Chain for `M/M/s/K`: birth rate sρ in every state below J, death rate
/// min(i, s) in state i.
pub fn build_mmsk(params: MmskParams) -> Result<BirthDeathChain> {
    params.validate()?;
    let states = params.num_states_above_zero() as usize;
    let arrival = params.servers as f64 * params.traffic_intensity;
    let deaths = (1..=states as u64).map(|i| i.min(params.servers) as f64).collect();
    BirthDeathChain::new(vec![arrival; states], deaths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub probabilities: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// ln π_i, finite even where `probabilities[i]` underflows to zero.
    pub log_probabilities: Vec<f64>,
}

impl StationaryDistribution {
    pub fn num_states_above_zero(&self) -> usize {
        self.probabilities.len() - 1
    }

    /// π_J.
    pub fn top(&self) -> f64 {
        *self.probabilities.last().expect("distribution is non-empty")
    }

    /// Σ_{j ≥ from} π_j, summed from the top for accuracy.
    pub fn tail_mass(&self, from: usize) -> f64 {
        self.probabilities.iter().skip(from).rev().sum()
    }
}

/// Stationary law from detailed balance, accumulated in log space and
/// normalised after subtracting the maximum.
pub fn stationary(chain: &BirthDeathChain) -> Result<StationaryDistribution> {
    let states = chain.num_states_above_zero();
    let mut log_weights = Vec::with_capacity(states + 1);
    log_weights.push(0.0_f64);
    let mut acc = 0.0_f64;
    for i in 0..states {
        acc += chain.birth_rates[i].ln() - chain.death_rates[i].ln();
        log_weights.push(acc);
    }
    let peak = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|w| (w - peak).exp()).collect();
    let normalizer: f64 = weights.iter().sum();
    if !(normalizer.is_finite() && normalizer > 0.0) {
        return Err(Error::DegenerateNormalizer);
    }
    let log_normalizer = normalizer.ln() + peak;
    let probabilities: Vec<f64> = weights.iter().map(|w| w / normalizer).collect();
    let mut cumulative = Vec::with_capacity(states + 1);
    let mut running = 0.0;
    for p in &probabilities {
        running += p;
        cumulative.push(running);
    }
    Ok(StationaryDistribution {
        probabilities,
        cumulative,
        log_probabilities: log_weights.iter().map(|w| w - log_normalizer).collect(),
    })
}

/// Departure rate and cumulative departure fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputStats {
    pub departure_rate: f64,
    pub cumulative_departure_fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRatioResult {
    pub departure_rate: f64,
    pub cumulative_departure_fractions: Vec<f64>,
    pub ratio: f64,
}

/// λ* = Σ μ_j π_j and Λ*_i = Σ_{j≤i} μ_j π_j / λ*.
pub fn output_stats(chain: &BirthDeathChain, dist: &StationaryDistribution) -> OutputStats {
    let flows: Vec<f64> = (1..=chain.num_states_above_zero())
        .map(|j| chain.death_rate(j) * dist.probabilities[j])
        .collect();
    let departure_rate: f64 = flows.iter().sum();
    let mut cumulative = Vec::with_capacity(flows.len() + 1);
    cumulative.push(0.0);
    let mut running = 0.0;
    for f in &flows {
        running += f;
        cumulative.push(running / departure_rate);
    }
    OutputStats { departure_rate, cumulative_departure_fractions: cumulative }
}

/// Which departure rate normalises the marked-departure formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkedNormalization {
    /// λ* and Λ*_i over counted deaths only: λ* = Σ μ_j π_j q_j.
    #[default]
    CountedDepartures,
    /// λ* and Λ*_i over all deaths, marks entering only through q_{i+1}.
    AllDeaths,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkedRatio {
    pub ratio: f64,
    pub counted_departure_rate: f64,
    pub normalization: MarkedNormalization,
    /// Always true: the marked formula is not backed by a published derivation.
    pub experimental: bool,
}

/// Shared evaluation of
/// `1 − 2 Σ_{i<J} (P_i − Λ_i)(q_{i+1} − λ/(π_i λ_i)(P_i − Λ_i))`
/// where Λ and λ come from death flows weighted by `flow_marks`.
fn ratio_sum(chain: &BirthDeathChain, dist: &StationaryDistribution, term_marks: &[f64], flow_marks: &[f64]) -> Result<(f64, f64)> {
    let states = chain.num_states_above_zero();
    let rate: f64 = (1..=states)
        .map(|j| chain.death_rate(j) * dist.probabilities[j] * flow_marks[j - 1])
        .sum();
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(invalid("the counted departure rate is zero"));
    }
    // gap_ratio = (P_i − Λ_i)/π_i, carried without dividing by π_i. The forward
    // recursion loses accuracy where π falls and the backward one where π
    // rises, so each state takes whichever side of the median it is on.
    //   forward:  r_i = r_{i−1} μ_i/λ_{i−1} + 1 − μ_i q_i/λ,   r_0 = 1
    //   backward: b_i = λ_i/μ_{i+1} (μ_{i+1} q_{i+1}/λ − 1 + b_{i+1}),   b_J = 0
    let mut backward = vec![0.0_f64; states + 1];
    for i in (0..states).rev() {
        let mu = chain.death_rate(i + 1);
        backward[i] = chain.birth_rate(i) / mu * (mu * flow_marks[i] / rate - 1.0 + backward[i + 1]);
    }
    let mut forward = 1.0_f64;
    let mut total = 0.0_f64;
    for i in 0..states {
        if i > 0 {
            forward = forward * chain.death_rate(i) / chain.birth_rate(i - 1) + 1.0
                - chain.death_rate(i) * flow_marks[i - 1] / rate;
        }
        let gap_ratio = if dist.cumulative[i] <= 0.5 { forward } else { backward[i] };
        let gap = gap_ratio * dist.probabilities[i];
        if gap != 0.0 {
            total += gap * (term_marks[i] - rate / chain.birth_rate(i) * gap_ratio);
        }
    }
    // The i = J term vanishes because P_J = Λ_J = 1.
    let ratio = 1.0 - 2.0 * total;
    if !ratio.is_finite() {
        return Err(Error::NonFinite("departure ratio"));
    }
    Ok((ratio, rate))
}

/// Exact limiting variance-to-mean ratio of the death-counting process.
pub fn d_pi(chain: &BirthDeathChain) -> Result<f64> {
    let dist = stationary(chain)?;
    d_pi_with(chain, &dist)
}

/// [`d_pi`] with a precomputed stationary distribution.
pub fn d_pi_with(chain: &BirthDeathChain, dist: &StationaryDistribution) -> Result<f64> {
    let ones = vec![1.0; chain.num_states_above_zero()];
    Ok(ratio_sum(chain, dist, &ones, &ones)?.0)
}

/// Constant-birth form `1 − 2 π_J/(1 − π_J) Σ_i P_i (1 − π_J P_i/π_i)`.
pub fn d_pi_constant_birth(chain: &BirthDeathChain) -> Result<f64> {
    let dist = stationary(chain)?;
    d_pi_constant_birth_with(chain, &dist)
}

pub fn d_pi_constant_birth_with(chain: &BirthDeathChain, dist: &StationaryDistribution) -> Result<f64> {
    let birth = chain.constant_birth_rate()?;
    let top = dist.top();
    // cum_ratio = P_i/π_i = 1 + (P_{i−1}/π_{i−1}) · μ_i/λ
    let states = chain.num_states_above_zero();
    let mut cum_ratio = 1.0_f64;
    let mut total = 0.0_f64;
    for i in 0..=states {
        if i > 0 {
            cum_ratio = 1.0 + cum_ratio * chain.death_rate(i) / birth;
        }
        // π_J P_i/π_i, recomputed in log space once the ratio overflows.
        let scaled = if cum_ratio.is_finite() {
            top * cum_ratio
        } else {
            (dist.log_probabilities[states] - dist.log_probabilities[i]).exp() * dist.cumulative[i]
        };
        total += dist.cumulative[i] * (1.0 - scaled);
    }
    let ratio = 1.0 - 2.0 * top / (1.0 - top) * total;
    if !ratio.is_finite() {
        return Err(Error::NonFinite("departure ratio"));
    }
    Ok(ratio)
}

/// Lower bound `(1/2 − π_J)/(1 − π_J)`, valid for constant-birth chains.
pub fn d_pi_lower_bound(dist: &StationaryDistribution) -> f64 {
    let top = dist.top();
    (0.5 - top) / (1.0 - top)
}

/// Marked-departure ratio: a death out of state j is counted with probability
/// `marks[j − 1]` (q_j), and the formula uses q_{i+1} in the i-th term.
pub fn d_pi_marked(chain: &BirthDeathChain, marks: &[f64], normalization: MarkedNormalization) -> Result<MarkedRatio> {
    let states = chain.num_states_above_zero();
    if marks.len() != states {
        return Err(invalid(format!("expected {states} counting probabilities, got {}", marks.len())));
    }
    if let Some((j, q)) = marks.iter().enumerate().find(|(_, q)| !(0.0..=1.0).contains(*q)) {
        return Err(invalid(format!("counting probability q_{} = {q} is outside [0, 1]", j + 1)));
    }
    let dist = stationary(chain)?;
    let ones = vec![1.0; states];
    let flow_marks = match normalization {
        MarkedNormalization::CountedDepartures => marks,
        MarkedNormalization::AllDeaths => &ones[..],
    };
    let (ratio, _) = ratio_sum(chain, &dist, marks, flow_marks)?;
    let counted_departure_rate = (1..=states)
        .map(|j| chain.death_rate(j) * dist.probabilities[j] * marks[j - 1])
        .sum();
    Ok(MarkedRatio { ratio, counted_departure_rate, normalization, experimental: true })
}

/// Everything at once: stationary law, λ*, Λ*, and D.
pub fn evaluate(chain: &BirthDeathChain) -> Result<(StationaryDistribution, OutputRatioResult)> {
    let dist = stationary(chain)?;
    let stats = output_stats(chain, &dist);
    let ratio = d_pi_with(chain, &dist)?;
    Ok((
        dist,
        OutputRatioResult {
            departure_rate: stats.departure_rate,
            cumulative_departure_fractions: stats.cumulative_departure_fractions,
            ratio,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> BirthDeathChain {
        BirthDeathChain::new(vec![1.0], vec![1.0]).unwrap()
    }

    fn mmsk(s: u64, k: u64, rho: f64) -> BirthDeathChain {
        build_mmsk(MmskParams::new(s, k, rho).unwrap()).unwrap()
    }

    #[test]
    fn rejects_malformed_chains() {
        assert!(BirthDeathChain::new(vec![], vec![]).is_err());
        assert!(BirthDeathChain::new(vec![1.0, 1.0], vec![1.0]).is_err());
        assert!(BirthDeathChain::new(vec![1.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(BirthDeathChain::new(vec![1.0], vec![f64::NAN]).is_err());
        assert!(BirthDeathChain::new(vec![1.0], vec![-2.0]).is_err());
    }

    #[test]
    fn mmsk_construction() {
        let c = mmsk(1, 0, 1.0);
        assert_eq!(c.birth_rates(), &[1.0]);
        assert_eq!(c.death_rates(), &[1.0]);

        let c = mmsk(2, 1, 1.0);
        assert_eq!(c.birth_rates(), &[2.0, 2.0, 2.0]);
        assert_eq!(c.death_rates(), &[1.0, 2.0, 2.0]);

        let d = stationary(&mmsk(4, 2, 0.5)).unwrap();
        let p = &d.probabilities;
        assert!((p[1] / p[0] - 2.0).abs() < 1e-12);
        assert!((p[5] / p[4] - 0.5).abs() < 1e-12);
        // Ratios follow sρ/(i+1) below s and ρ above.
        for i in 0..6 {
            let expected = if i < 4 { 2.0 / (i + 1) as f64 } else { 0.5 };
            assert!((p[i + 1] / p[i] - expected).abs() < 1e-12, "i = {i}");
        }
    }

    #[test]
    fn mmsk_rejects_bad_parameters() {
        assert!(MmskParams::new(0, 1, 1.0).is_err());
        assert!(MmskParams::new(1, 1, 0.0).is_err());
        assert!(MmskParams::new(1, 1, -1.0).is_err());
        assert!(MmskParams::new(1, 1, f64::INFINITY).is_err());
    }

    #[test]
    fn from_qed_scaling() {
        let p = MmskParams::from_qed(10_000, 1.0, 1.0).unwrap();
        assert_eq!(p.buffer, 100);
        assert!((p.traffic_intensity - 0.99).abs() < 1e-15);
    }

    #[test]
    fn stationary_examples() {
        let d = stationary(&two_state()).unwrap();
        assert_eq!(d.probabilities, vec![0.5, 0.5]);

        for k in [0_u64, 3, 10, 250] {
            let d = stationary(&mmsk(1, k, 1.0)).unwrap();
            for p in &d.probabilities {
                assert!((p - 1.0 / (k + 2) as f64).abs() < 1e-15);
            }
        }

        let d = stationary(&mmsk(2, 1, 1.0)).unwrap();
        let expected = [1.0, 2.0, 2.0, 2.0].map(|w| w / 7.0);
        for (p, e) in d.probabilities.iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
        assert!((d.cumulative[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stationary_survives_huge_dynamic_range() {
        let d = stationary(&mmsk(20_000, 150, 1.0)).unwrap();
        let sum: f64 = d.probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(d.probabilities[0], 0.0);
        assert!(d.log_probabilities[0].is_finite());
        assert!(d.log_probabilities[0] < -10_000.0);
    }

    #[test]
    fn output_stats_examples() {
        let c = two_state();
        let d = stationary(&c).unwrap();
        let o = output_stats(&c, &d);
        assert_eq!(o.departure_rate, 0.5);
        assert_eq!(o.cumulative_departure_fractions, vec![0.0, 1.0]);

        let c = mmsk(3, 4, 0.8);
        let d = stationary(&c).unwrap();
        let o = output_stats(&c, &d);
        let lambda = c.birth_rate(0);
        assert!((o.departure_rate - lambda * (1.0 - d.top())).abs() < 1e-12);
        for i in 1..=c.num_states_above_zero() {
            let expected = d.cumulative[i - 1] / (1.0 - d.top());
            assert!((o.cumulative_departure_fractions[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn renewal_two_state_ratio() {
        // Departures are a renewal process with Exp(1) + Exp(1) lifetimes: var/mean² = 2/4.
        assert!((d_pi(&two_state()).unwrap() - 0.5).abs() < 1e-15);
        assert!((d_pi_constant_birth(&two_state()).unwrap() - 0.5).abs() < 1e-15);
        let d = stationary(&two_state()).unwrap();
        assert_eq!(d_pi_lower_bound(&d), 0.0);
    }

    #[test]
    fn single_server_critical_limit() {
        let v = d_pi(&mmsk(1, 2000, 1.0)).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 0.01, "{v}");
    }

    #[test]
    fn formula_forms_agree_on_small_multiserver() {
        let c = mmsk(2, 1, 1.0);
        let a = d_pi(&c).unwrap();
        let b = d_pi_constant_birth(&c).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn qed_critical_point_at_moderate_scale() {
        // 2/3 − L(1) = 0.619281444...
        let v = d_pi_constant_birth(&mmsk(400, 20, 1.0)).unwrap();
        assert!((v - 0.619_281_444).abs() < 0.05, "{v}");
    }

    #[test]
    fn constant_birth_form_rejects_varying_births() {
        let c = BirthDeathChain::new(vec![1.0, 1.0, 1.5], vec![1.0, 1.0, 1.0]).unwrap();
        match d_pi_constant_birth(&c) {
            Err(Error::NonConstantBirths { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
        let nearly = BirthDeathChain::new(vec![1.0, 1.0 + 1e-14], vec![1.0, 1.0]).unwrap();
        assert!(d_pi_constant_birth(&nearly).is_ok());
    }

    #[test]
    fn lower_bound_limits() {
        let dist = |top: f64| StationaryDistribution {
            probabilities: vec![1.0 - top, top],
            cumulative: vec![1.0 - top, 1.0],
            log_probabilities: vec![(1.0 - top).ln(), top.ln()],
        };
        assert_eq!(d_pi_lower_bound(&dist(0.5)), 0.0);
        assert!((d_pi_lower_bound(&dist(1e-12)) - 0.5).abs() < 1e-11);
    }

    #[test]
    fn marked_reduces_to_unmarked() {
        let c = mmsk(3, 4, 0.9);
        let plain = d_pi(&c).unwrap();
        let ones = vec![1.0; c.num_states_above_zero()];
        for norm in [MarkedNormalization::CountedDepartures, MarkedNormalization::AllDeaths] {
            let m = d_pi_marked(&c, &ones, norm).unwrap();
            assert!((m.ratio - plain).abs() < 1e-12);
            assert!(m.experimental);
        }
    }

    #[test]
    fn marked_input_validation() {
        let c = mmsk(1, 2, 1.0);
        assert!(d_pi_marked(&c, &[1.0, 1.0], MarkedNormalization::default()).is_err());
        assert!(d_pi_marked(&c, &[1.0, 1.5, 0.0], MarkedNormalization::default()).is_err());
        assert!(d_pi_marked(&c, &[0.0, 0.0, 0.0], MarkedNormalization::default()).is_err());
    }

    #[test]
    fn heavily_loaded_and_lightly_loaded_tails() {
        // ρ far from 1 behaves like a reversible single- or infinite-server system.
        for rho in [0.05, 20.0] {
            let v = d_pi(&mmsk(50, 50, rho)).unwrap();
            assert!((v - 1.0).abs() < 0.05, "rho = {rho}: {v}");
        }
    }

    #[test]
    fn infinite_server_truncation_approaches_one() {
        let mut prev_gap = f64::INFINITY;
        for s in [10_u64, 100, 1000] {
            let v = d_pi(&mmsk(s, 0, 0.2)).unwrap();
            let gap = (v - 1.0).abs();
            assert!(gap <= prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-6);
    }
}
