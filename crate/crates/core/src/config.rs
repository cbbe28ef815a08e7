//! Guard hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thresholds and coefficients of the guard, plus the simulator knobs that
/// shape a run (`k_samples`, `k_votes`, `learning_rate`).
///
/// `Default` gives the reference hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardConfig {
    /// Flip-rate coefficient of the α factor.
    pub lambda1: f64,
    /// Trigger penalty: γ = 1 − λ₂ under C1, δ = 1 − λ₂/2 under C2.
    pub lambda2: f64,
    /// Flip-rate threshold (HadComp, at-risk routing, MPS activation).
    pub tau_fr: f64,
    /// Match-rate threshold used by C1 and C2.
    pub tau_mr: f64,
    /// Floor of the FRS weight.
    pub w_min: f64,
    /// Upper bound of the minority mixing coefficient β.
    pub beta_max: f64,
    /// Minority answers need at least `⌊k / divisor⌋` votes.
    pub minority_threshold_divisor: u32,
    /// Reward given to responses whose answer is in the minority set.
    pub epsilon: f64,
    /// Consecutive calm steps after which MPS switches off for good.
    pub t_steady: u32,
    /// History window W.
    pub window: u32,
    /// Sliding-mean match-rate threshold of the high-risk flag.
    pub theta_mr: f64,
    /// Skip probability for high-risk problems.
    pub p_skip: f64,
    /// At most `⌊max_skip_fraction · N⌋` problems are skipped per step.
    pub max_skip_fraction: f64,
    /// Responses per problem used for the policy update.
    pub k_samples: u32,
    /// Responses per problem used for voting and monitoring.
    pub k_votes: u32,
    /// Step size of the surrogate update on logits.
    pub learning_rate: f64,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            lambda1: 0.5,
            lambda2: 0.3,
            tau_fr: 0.3,
            tau_mr: 0.6,
            w_min: 0.1,
            beta_max: 0.3,
            minority_threshold_divisor: 4,
            epsilon: 0.1,
            t_steady: 3,
            window: 5,
            theta_mr: 0.5,
            p_skip: 0.7,
            max_skip_fraction: 0.25,
            k_samples: 32,
            k_votes: 64,
            learning_rate: DEFAULT_LEARNING_RATE,
        }
    }
}

/// Default surrogate step size. See the README for how it was chosen.
pub const DEFAULT_LEARNING_RATE: f64 = 0.0004;

/// Names accepted by [`GuardConfig::set`] (and by sweep grids).
pub const GUARD_KEYS: &[&str] = &[
    "lambda1",
    "lambda2",
    "tau_fr",
    "tau_mr",
    "w_min",
    "beta_max",
    "minority_threshold_divisor",
    "epsilon",
    "t_steady",
    "window",
    "theta_mr",
    "p_skip",
    "max_skip_fraction",
    "k_samples",
    "k_votes",
    "learning_rate",
];

impl GuardConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("tau_fr", self.tau_fr),
            ("tau_mr", self.tau_mr),
            ("w_min", self.w_min),
            ("beta_max", self.beta_max),
            ("epsilon", self.epsilon),
            ("theta_mr", self.theta_mr),
            ("p_skip", self.p_skip),
            ("max_skip_fraction", self.max_skip_fraction),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name}={v} must lie in [0, 1]")));
            }
        }
        let positive = [
            (
                "minority_threshold_divisor",
                self.minority_threshold_divisor,
            ),
            ("window", self.window),
            ("k_samples", self.k_samples),
            ("k_votes", self.k_votes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.k_samples > self.k_votes {
            return Err(Error::Config(format!(
                "k_samples={} exceeds k_votes={}; the update batch is a subset of the vote batch",
                self.k_samples, self.k_votes
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate={} must be positive and finite",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.window as usize
    }

    /// Overwrite one field by name. Integer fields reject fractional values.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let as_u32 = |v: f64| -> Result<u32> {
            if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                Err(Error::Config(format!(
                    "{key} expects a non-negative integer, got {v}"
                )))
            } else {
                Ok(v as u32)
            }
        };
        match key {
            "lambda1" => self.lambda1 = value,
            "lambda2" => self.lambda2 = value,
            "tau_fr" => self.tau_fr = value,
            "tau_mr" => self.tau_mr = value,
            "w_min" => self.w_min = value,
            "beta_max" => self.beta_max = value,
            "minority_threshold_divisor" => self.minority_threshold_divisor = as_u32(value)?,
            "epsilon" => self.epsilon = value,
            "t_steady" => self.t_steady = as_u32(value)?,
            "window" => self.window = as_u32(value)?,
            "theta_mr" => self.theta_mr = value,
            "p_skip" => self.p_skip = value,
            "max_skip_fraction" => self.max_skip_fraction = value,
            "k_samples" => self.k_samples = as_u32(value)?,
            "k_votes" => self.k_votes = as_u32(value)?,
            "learning_rate" => self.learning_rate = value,
            other => return Err(Error::Config(format!("unknown guard parameter `{other}`"))),
        }
        Ok(())
    }
}
