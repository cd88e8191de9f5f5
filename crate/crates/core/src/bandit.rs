//! EXP3 over difficulty clusters, with min-max reward normalization and the
//! IDU-drop reward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights are rescaled by their sum once any exceeds this.
pub const WEIGHT_RESCALE_ABOVE: f64 = 1e12;
/// Relative floor that keeps every weight strictly positive.
const WEIGHT_FLOOR_RATIO: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    Argmax,
    Sample,
}

#[derive(Debug, Clone)]
pub struct BanditState {
    weights: Vec<f64>,
    gamma: f64,
    /// Additive share of EXP3.S; zero gives plain EXP3.
    epsilon: f64,
    reward_min: f64,
    reward_max: f64,
    /// Number of rewards normalized so far.
    iteration: usize,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl BanditState {
    pub fn new(num_arms: usize, gamma: f64, seed: u64) -> Result<Self> {
        Self::with_epsilon(num_arms, gamma, 0.0, seed)
    }

    pub fn with_epsilon(num_arms: usize, gamma: f64, epsilon: f64, seed: u64) -> Result<Self> {
        if num_arms == 0 {
            return Err(Error::domain("num_arms", "at least one arm required"));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::domain("gamma", format!("must lie in (0, 1], got {gamma}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::domain("epsilon", format!("must be nonnegative, got {epsilon}")));
        }
        Ok(Self {
            weights: vec![1.0; num_arms],
            gamma,
            epsilon,
            reward_min: f64::INFINITY,
            reward_max: f64::NEG_INFINITY,
            iteration: 0,
            rng_seed: seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Start from explicit weights (tests and replay).
    pub fn with_weights(weights: Vec<f64>, gamma: f64, seed: u64) -> Result<Self> {
        let mut s = Self::new(weights.len(), gamma, seed)?;
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::domain("weights", "weights must be positive and finite"));
        }
        s.weights = weights;
        Ok(s)
    }

    pub fn num_arms(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn reward_range(&self) -> (f64, f64) {
        (self.reward_min, self.reward_max)
    }

    /// `DC(i) = (1-γ) w_i / Σw + γ/K`.
    pub fn arm_probabilities(&self) -> Result<Vec<f64>> {
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::domain("weights", format!("total weight is {total}")));
        }
        let k = self.weights.len() as f64;
        Ok(self
            .weights
            .iter()
            .map(|w| (1.0 - self.gamma) * (w / total) + self.gamma / k)
            .collect())
    }

    pub fn select_arm(&mut self, mode: SelectMode) -> Result<usize> {
        let probs = self.arm_probabilities()?;
        Ok(match mode {
            SelectMode::Argmax => argmax(&probs),
            SelectMode::Sample => {
                let u: f64 = self.rng.random();
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        })
    }

    /// Map a raw reward into `[-1, 1]` against the running extrema, which
    /// absorb `raw` first. The first reward is only clamped.
    pub fn normalize_reward(&mut self, raw: f64) -> f64 {
        self.iteration += 1;
        self.reward_min = self.reward_min.min(raw);
        self.reward_max = self.reward_max.max(raw);
        if self.iteration == 1 {
            return raw.clamp(-1.0, 1.0);
        }
        let span = self.reward_max - self.reward_min;
        if span <= 0.0 {
            return 0.0;
        }
        (2.0 * (raw - self.reward_min) / span - 1.0).clamp(-1.0, 1.0)
    }

    /// `w_i ← w_i exp(γ/K · r / DC_i)` for the chosen arm.
    pub fn update_weight(&mut self, arm: usize, reward: f64, prob_of_chosen: f64) -> Result<()> {
        if arm >= self.weights.len() {
            return Err(Error::domain("arm", format!("{arm} out of range")));
        }
        if !(prob_of_chosen > 0.0) {
            return Err(Error::domain("prob_of_chosen", format!("must be positive, got {prob_of_chosen}")));
        }
        let k = self.weights.len() as f64;
        let share = if self.epsilon > 0.0 {
            self.epsilon / k * self.weights.iter().sum::<f64>()
        } else {
            0.0
        };
        self.weights[arm] *= (self.gamma / k * reward / prob_of_chosen).exp();
        if share > 0.0 {
            for w in self.weights.iter_mut() {
                *w += share;
            }
        }

        let max = self.weights.iter().copied().fold(0.0, f64::max);
        if !(1.0 / WEIGHT_RESCALE_ABOVE..=WEIGHT_RESCALE_ABOVE).contains(&max) {
            let total: f64 = self.weights.iter().sum();
            for w in self.weights.iter_mut() {
                *w /= total;
            }
        }
        let max = self.weights.iter().copied().fold(0.0, f64::max);
        if !max.is_finite() || max <= 0.0 {
            return Err(Error::Numeric(format!("bandit weights degenerated: {:?}", self.weights)));
        }
        let floor = max * WEIGHT_FLOOR_RATIO;
        for w in self.weights.iter_mut() {
            if *w < floor {
                *w = floor;
            }
        }
        Ok(())
    }
}

/// Highest entry, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean IDU drop over a trained batch.
pub fn info_gain_reward(idu_before: &[f64], idu_after: &[f64]) -> Result<f64> {
    if idu_before.len() != idu_after.len() {
        return Err(Error::domain(
            "idu_after",
            format!("length {} differs from {}", idu_after.len(), idu_before.len()),
        ));
    }
    if idu_before.is_empty() {
        return Err(Error::domain("idu_before", "empty batch"));
    }
    let sum: f64 = idu_before.iter().zip(idu_after).map(|(b, a)| b - a).sum();
    Ok(sum / idu_before.len() as f64)
}
