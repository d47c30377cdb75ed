//! Deterministic activation and delay sampling.
//!
//! Every draw is a pure function of `(seed, purpose, step)`: each step gets a
//! fresh counter-keyed stream, so schedules are random-access and two runs
//! with the same seed consume identical randomness regardless of what else
//! they compute.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAG_ACTIVATION: u64 = 1;
const TAG_DELAY: u64 = 2;
const TAG_WINDOW: u64 = 3;

/// Stream keyed by `(seed, tag, k)`.
pub(crate) fn stream_rng(seed: u64, tag: u64, k: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&tag.to_le_bytes());
    bytes[16..24].copy_from_slice(&k.to_le_bytes());
    bytes[24..32].copy_from_slice(&0x5eed_cafe_f00d_u64.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// How stale a read may be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayModel {
    /// Always read the latest commit.
    Zero,
    /// Each agent block's staleness drawn uniformly from `{0, ..., min(bound, k)}`.
    UniformIid,
    /// Constant lag (clamped to `k` early on).
    FixedLag(usize),
}

/// Which agent wakes up at step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationOrder {
    /// I.i.d. draws from the probability vector.
    Random,
    /// Cyclic order 0, 1, ..., N-1.
    RoundRobin,
    /// Per window of this many steps, every agent appears a fixed number of
    /// times proportional to its probability; the window is shuffled.
    FairWindow(usize),
}

/// Activation law, delay law and seed for one asynchronous run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsyncSchedule {
    pub probabilities: Vec<f64>,
    pub seed: u64,
    /// Upper bound on every sampled staleness.
    pub delay_bound: usize,
    pub delay_model: DelayModel,
    pub order: ActivationOrder,
    /// Whether the active agent's reads of its own cells may be stale.
    pub own_reads_stale: bool,
}

impl AsyncSchedule {
    pub fn new(
        probabilities: Vec<f64>,
        seed: u64,
        delay_bound: usize,
        delay_model: DelayModel,
        order: ActivationOrder,
    ) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidParams("probability vector is empty".into()));
        }
        if probabilities.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidParams(
                "activation probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!(
                "activation probabilities must sum to 1, got {total}"
            )));
        }
        if let DelayModel::FixedLag(lag) = delay_model {
            if lag > delay_bound {
                return Err(Error::InvalidParams(format!(
                    "fixed lag {lag} exceeds the delay bound {delay_bound}"
                )));
            }
        }
        if let ActivationOrder::FairWindow(w) = order {
            if w == 0 {
                return Err(Error::InvalidParams("fairness window must be >= 1".into()));
            }
        }
        Ok(Self {
            probabilities,
            seed,
            delay_bound,
            delay_model,
            order,
            own_reads_stale: true,
        })
    }

    /// Uniform activation over `n` agents.
    pub fn uniform(n: usize, seed: u64, delay_bound: usize, delay_model: DelayModel) -> Self {
        Self::new(
            vec![1.0 / n as f64; n],
            seed,
            delay_bound,
            delay_model,
            ActivationOrder::Random,
        )
        .expect("uniform law is valid")
    }

    pub fn n_agents(&self) -> usize {
        self.probabilities.len()
    }

    pub fn p_min(&self) -> f64 {
        self.probabilities.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// The agent active at step `k`; deterministic in `(seed, k)`.
    pub fn sample_activation(&self, k: u64) -> usize {
        let n = self.n_agents();
        match self.order {
            ActivationOrder::RoundRobin => (k % n as u64) as usize,
            ActivationOrder::Random => {
                let mut rng = stream_rng(self.seed, TAG_ACTIVATION, k);
                categorical(&self.probabilities, rng.gen::<f64>())
            }
            ActivationOrder::FairWindow(w) => {
                let window = k / w as u64;
                let pool = self.window_pool(w, window);
                pool[(k % w as u64) as usize]
            }
        }
    }

    /// Balanced activation pool for one fairness window: agent `i` appears
    /// about `w * p_i` times (largest-remainder rounding), order shuffled.
    fn window_pool(&self, w: usize, window: u64) -> Vec<usize> {
        let n = self.n_agents();
        let mut counts = vec![0usize; n];
        let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(n);
        let mut assigned = 0usize;
        for i in 0..n {
            let exact = w as f64 * self.probabilities[i];
            counts[i] = exact.floor() as usize;
            assigned += counts[i];
            remainders.push((exact - exact.floor(), i));
        }
        remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for idx in 0..(w - assigned) {
            counts[remainders[idx % n].1] += 1;
        }
        let mut pool = Vec::with_capacity(w);
        for (i, &c) in counts.iter().enumerate() {
            pool.extend(std::iter::repeat_n(i, c));
        }
        let mut rng = stream_rng(self.seed, TAG_WINDOW, window);
        pool.shuffle(&mut rng);
        pool
    }

    /// Per-agent staleness for the reads performed at step `k`. Every entry
    /// is `<= min(delay_bound, k)`.
    pub fn delays(&self, k: u64) -> Vec<usize> {
        let n = self.n_agents();
        let cap = (self.delay_bound as u64).min(k) as usize;
        match self.delay_model {
            DelayModel::Zero => vec![0; n],
            DelayModel::FixedLag(lag) => vec![lag.min(cap); n],
            DelayModel::UniformIid => {
                let mut rng = stream_rng(self.seed, TAG_DELAY, k);
                (0..n).map(|_| rng.gen_range(0..=cap)).collect()
            }
        }
    }
}

fn categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_law_always_picks_the_mass_point() {
        let s = AsyncSchedule::new(
            vec![1.0, 0.0, 0.0],
            3,
            0,
            DelayModel::Zero,
            ActivationOrder::Random,
        )
        .unwrap();
        for k in 0..100 {
            assert_eq!(s.sample_activation(k), 0);
        }
    }

    #[test]
    fn same_seed_gives_identical_sequences() {
        let make = || AsyncSchedule::uniform(5, 99, 4, DelayModel::UniformIid);
        let a = make();
        let b = make();
        for k in 0..1000 {
            assert_eq!(a.sample_activation(k), b.sample_activation(k));
            assert_eq!(a.delays(k), b.delays(k));
        }
    }

    #[test]
    fn empirical_frequencies_concentrate() {
        let n = 8;
        let s = AsyncSchedule::uniform(n, 7, 0, DelayModel::Zero);
        let draws = 100_000u64;
        let mut counts = vec![0u64; n];
        for k in 0..draws {
            counts[s.sample_activation(k)] += 1;
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!(
                (0.115..=0.135).contains(&freq),
                "frequency {freq} outside the binomial band"
            );
        }
    }

    #[test]
    fn delays_respect_bound_and_clamp_early() {
        let s = AsyncSchedule::uniform(4, 11, 4, DelayModel::UniformIid);
        for k in 0..2000u64 {
            for (j, d) in s.delays(k).into_iter().enumerate() {
                assert!(d <= 4, "agent {j} delay {d} above bound");
                assert!(d as u64 <= k, "delay {d} reaches before step 0 at k = {k}");
            }
        }
    }

    #[test]
    fn fair_window_balances_counts() {
        let n = 8;
        let w = 20 * n;
        let s = AsyncSchedule::new(
            vec![1.0 / n as f64; n],
            21,
            0,
            DelayModel::Zero,
            ActivationOrder::FairWindow(w),
        )
        .unwrap();
        let mut counts = vec![0usize; n];
        for k in 0..w as u64 {
            counts[s.sample_activation(k)] += 1;
        }
        assert!(counts.iter().all(|&c| c == 20), "unbalanced window: {counts:?}");
    }

    #[test]
    fn round_robin_is_cyclic() {
        let s = AsyncSchedule::new(
            vec![0.25; 4],
            0,
            0,
            DelayModel::Zero,
            ActivationOrder::RoundRobin,
        )
        .unwrap();
        let picked: Vec<usize> = (0..8).map(|k| s.sample_activation(k)).collect();
        assert_eq!(picked, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn invalid_laws_rejected() {
        assert!(AsyncSchedule::new(
            vec![0.5, 0.4],
            0,
            0,
            DelayModel::Zero,
            ActivationOrder::Random
        )
        .is_err());
        assert!(AsyncSchedule::new(
            vec![0.5, 0.5],
            0,
            2,
            DelayModel::FixedLag(3),
            ActivationOrder::Random
        )
        .is_err());
    }
}
