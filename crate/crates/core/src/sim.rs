//! Event-by-event simulation of a birth–death chain with batch-means output
//! analysis.
//!
//! Nothing here touches the closed forms in [`crate::chain`] except to sample
//! an initial state from the stationary law when asked to. Each replication
//! owns ChaCha stream `2r` for the event skeleton and stream `2r + 1` for
//! departure marks, so a marked run and an unmarked run with the same seed
//! follow the same trajectory, and the result does not depend on how many
//! threads execute the replications.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{output_stats, stationary, BirthDeathChain};
use crate::error::{invalid, Error, Result};

pub const MIN_BATCH_COUNT: usize = 20;
const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Fixed(usize),
    StationarySampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub master_seed: u64,
    pub warmup_time: f64,
    pub batch_count: usize,
    pub batch_length: f64,
    pub replications: usize,
    pub initial_state: InitialState,
}

impl SimConfig {
    /// Defaults scaled to the chain: batches of about 10⁴ departures and a
    /// warmup of 100 relaxation times `J / min rate`.
    pub fn for_chain(chain: &BirthDeathChain, master_seed: u64) -> Result<Self> {
        let dist = stationary(chain)?;
        let rate = output_stats(chain, &dist).departure_rate;
        let slowest = chain
            .birth_rates()
            .iter()
            .chain(chain.death_rates())
            .copied()
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            master_seed,
            warmup_time: 100.0 * chain.num_states_above_zero() as f64 / slowest,
            batch_count: 50,
            batch_length: 1e4 / rate,
            replications: 4,
            initial_state: InitialState::StationarySampled,
        })
    }

    pub fn validate(&self, chain: &BirthDeathChain) -> Result<()> {
        if self.batch_count < MIN_BATCH_COUNT {
            return Err(invalid(format!("batch_count must be at least {MIN_BATCH_COUNT}, got {}", self.batch_count)));
        }
        if !(self.warmup_time >= 0.0 && self.warmup_time.is_finite()) {
            return Err(invalid(format!("warmup_time must be non-negative, got {}", self.warmup_time)));
        }
        if !(self.batch_length > 0.0 && self.batch_length.is_finite()) {
            return Err(invalid(format!("batch_length must be positive, got {}", self.batch_length)));
        }
        if self.replications == 0 {
            return Err(invalid("replications must be at least 1"));
        }
        if let InitialState::Fixed(x) = self.initial_state {
            if x > chain.num_states_above_zero() {
                return Err(invalid(format!("initial state {x} is outside 0..={}", chain.num_states_above_zero())));
            }
        }
        Ok(())
    }

    fn horizon(&self) -> f64 {
        self.warmup_time + self.batch_count as f64 * self.batch_length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedProvenance {
    pub master_seed: u64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum EstimateQuality {
    Ok,
    /// The estimate is returned but should not be trusted.
    LowQuality(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub ratio_estimate: f64,
    pub standard_error: f64,
    pub ci95: (f64, f64),
    /// Counted departures after warmup, over all replications.
    pub total_departures: u64,
    pub mean_rate_estimate: f64,
    pub mean_rate_standard_error: f64,
    pub seed_provenance: SeedProvenance,
    pub quality: EstimateQuality,
}

/// Time-average estimate of a probability, with a batch-means standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub ci95: (f64, f64),
    pub seed_provenance: SeedProvenance,
}

struct Replication {
    /// Counted departures per batch.
    counts: Vec<u64>,
    /// Time spent in states ≥ the threshold, per batch.
    high_time: Vec<f64>,
    /// Post-warmup time spent in each state.
    occupancy: Vec<f64>,
}

fn exponential(rng: &mut ChaCha20Rng, rate: f64) -> f64 {
    // 1 − U lies in (0, 1], so the logarithm is finite.
    -(1.0 - rng.random::<f64>()).ln() / rate
}

fn sample_index(cumulative: &[f64], u: f64) -> usize {
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

struct Clock<'a> {
    config: &'a SimConfig,
    threshold: usize,
}

impl Clock<'_> {
    /// Books the sojourn `[from, to)` in `state` into occupancy and per-batch time.
    fn book(&self, rep: &mut Replication, state: usize, from: f64, to: f64) {
        let w = self.config.warmup_time;
        let end = self.config.horizon();
        let (a, b) = (from.max(w), to.min(end));
        if b <= a {
            return;
        }
        rep.occupancy[state] += b - a;
        if state < self.threshold {
            return;
        }
        let len = self.config.batch_length;
        let mut t = a;
        while t < b {
            let k = (((t - w) / len) as usize).min(self.config.batch_count - 1);
            let edge = (w + (k + 1) as f64 * len).min(b);
            rep.high_time[k] += edge - t;
            if edge <= t {
                break;
            }
            t = edge;
        }
    }
}

fn run_replication(
    chain: &BirthDeathChain,
    cumulative: &[f64],
    marks: Option<&[f64]>,
    config: &SimConfig,
    threshold: usize,
    index: usize,
) -> Replication {
    let mut events = ChaCha20Rng::seed_from_u64(config.master_seed);
    events.set_stream(2 * index as u64);
    let mut mark_rng = ChaCha20Rng::seed_from_u64(config.master_seed);
    mark_rng.set_stream(2 * index as u64 + 1);

    let top = chain.num_states_above_zero();
    let mut state = match config.initial_state {
        InitialState::Fixed(x) => x,
        InitialState::StationarySampled => sample_index(cumulative, events.random::<f64>()),
    };
    let mut rep = Replication {
        counts: vec![0; config.batch_count],
        high_time: vec![0.0; config.batch_count],
        occupancy: vec![0.0; top + 1],
    };
    let clock = Clock { config, threshold };
    let horizon = config.horizon();
    let mut t = 0.0_f64;
    loop {
        let up = if state < top { chain.birth_rate(state) } else { 0.0 };
        let down = if state > 0 { chain.death_rate(state) } else { 0.0 };
        let total = up + down;
        let next = t + exponential(&mut events, total);
        clock.book(&mut rep, state, t, next);
        if next >= horizon {
            break;
        }
        t = next;
        if events.random::<f64>() * total < up {
            state += 1;
        } else {
            let counted = match marks {
                Some(q) => mark_rng.random::<f64>() < q[state - 1],
                None => true,
            };
            if counted && t >= config.warmup_time {
                let k = (((t - config.warmup_time) / config.batch_length) as usize).min(config.batch_count - 1);
                rep.counts[k] += 1;
            }
            state -= 1;
        }
    }
    rep
}

fn run_all(chain: &BirthDeathChain, marks: Option<&[f64]>, config: &SimConfig, threshold: usize) -> Result<Vec<Replication>> {
    config.validate(chain)?;
    let dist = stationary(chain)?;
    let cumulative = dist.cumulative;
    // `collect` keeps replication order, so the reduction below is fixed.
    Ok((0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(chain, &cumulative, marks, config, threshold, r))
        .collect())
}

fn estimate_ratio(reps: &[Replication], config: &SimConfig) -> Result<SimEstimate> {
    let n = config.batch_count as f64;
    let r = reps.len() as f64;
    let total: u64 = reps.iter().flat_map(|x| x.counts.iter()).sum();
    if total == 0 {
        return Err(Error::DegenerateEstimate("no counted departures after warmup".into()));
    }
    let mean_count = total as f64 / (n * r);

    // Pooled within-replication variance of batch counts, and the variance
    // of that estimate from the fourth central moment.
    let mut pooled = 0.0;
    let mut var_of_var = 0.0;
    let mut empty_batches = 0usize;
    for rep in reps {
        let m = rep.counts.iter().sum::<u64>() as f64 / n;
        let (mut m2, mut m4) = (0.0, 0.0);
        for &c in &rep.counts {
            let d = c as f64 - m;
            m2 += d * d;
            m4 += d * d * d * d;
        }
        let s2 = m2 / (n - 1.0);
        m4 /= n;
        let mut v = (m4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n;
        if v <= 0.0 {
            v = 2.0 * s2 * s2 / (n - 1.0);
        }
        pooled += s2 / r;
        var_of_var += v / (r * r);
        empty_batches += rep.counts.iter().filter(|&&c| c == 0).count();
    }
    let ratio_estimate = pooled / mean_count;
    let standard_error = var_of_var.sqrt() / mean_count;
    let quality = if empty_batches > 0 {
        EstimateQuality::LowQuality(format!("{empty_batches} batches recorded no counted departures"))
    } else if pooled == 0.0 {
        EstimateQuality::LowQuality("batch counts have zero variance".into())
    } else {
        EstimateQuality::Ok
    };

    let mut all_var = 0.0;
    for c in reps.iter().flat_map(|x| x.counts.iter()) {
        let d = *c as f64 - mean_count;
        all_var += d * d;
    }
    all_var /= n * r - 1.0;
    Ok(SimEstimate {
        ratio_estimate,
        standard_error,
        ci95: (ratio_estimate - Z_95 * standard_error, ratio_estimate + Z_95 * standard_error),
        total_departures: total,
        mean_rate_estimate: mean_count / config.batch_length,
        mean_rate_standard_error: (all_var / (n * r)).sqrt() / config.batch_length,
        seed_provenance: SeedProvenance { master_seed: config.master_seed, replications: config.replications },
        quality,
    })
}

/// Estimated departure variance-to-mean ratio.
pub fn simulate_ratio(chain: &BirthDeathChain, config: &SimConfig) -> Result<SimEstimate> {
    let reps = run_all(chain, None, config, usize::MAX)?;
    estimate_ratio(&reps, config)
}

/// As [`simulate_ratio`], counting a death out of state j with probability `marks[j − 1]`.
pub fn simulate_marked_ratio(chain: &BirthDeathChain, marks: &[f64], config: &SimConfig) -> Result<SimEstimate> {
    let states = chain.num_states_above_zero();
    if marks.len() != states {
        return Err(invalid(format!("expected {states} counting probabilities, got {}", marks.len())));
    }
    if let Some((j, q)) = marks.iter().enumerate().find(|(_, q)| !(0.0..=1.0).contains(*q)) {
        return Err(invalid(format!("counting probability q_{} = {q} is outside [0, 1]", j + 1)));
    }
    let reps = run_all(chain, Some(marks), config, usize::MAX)?;
    estimate_ratio(&reps, config)
}

/// Fraction of post-warmup time spent in states `≥ servers`.
pub fn empirical_delay_prob(chain: &BirthDeathChain, servers: usize, config: &SimConfig) -> Result<ProbabilityEstimate> {
    if servers > chain.num_states_above_zero() {
        return Err(invalid(format!("servers = {servers} exceeds the top state {}", chain.num_states_above_zero())));
    }
    let reps = run_all(chain, None, config, servers)?;
    let fractions: Vec<f64> = reps
        .iter()
        .flat_map(|x| x.high_time.iter().map(|t| t / config.batch_length))
        .collect();
    let m = fractions.len() as f64;
    let estimate = fractions.iter().sum::<f64>() / m;
    let var = fractions.iter().map(|f| (f - estimate).powi(2)).sum::<f64>() / (m - 1.0);
    let standard_error = (var / m).sqrt();
    Ok(ProbabilityEstimate {
        estimate,
        standard_error,
        ci95: (estimate - Z_95 * standard_error, estimate + Z_95 * standard_error),
        seed_provenance: SeedProvenance { master_seed: config.master_seed, replications: config.replications },
    })
}

/// Long-run fraction of post-warmup time spent in each state.
pub fn empirical_occupancy(chain: &BirthDeathChain, config: &SimConfig) -> Result<Vec<f64>> {
    let reps = run_all(chain, None, config, usize::MAX)?;
    let mut time = vec![0.0; chain.num_states_above_zero() + 1];
    for rep in &reps {
        for (acc, t) in time.iter_mut().zip(&rep.occupancy) {
            *acc += t;
        }
    }
    let total: f64 = time.iter().sum();
    Ok(time.into_iter().map(|t| t / total).collect())
}
