//! Label-free per-problem monitoring: majority-vote pseudo-labels, match
//! rates, windowed flip rates, the competition latch, and sliding-mean
//! match rates.
//!
//! Nothing here looks at ground truth. The states of distinct problems are
//! independent; a single state must be fed its batches in step order.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::GuardConfig;
use crate::error::{Error, Result};

/// Index of an answer within a problem's answer support. Ordering is used
/// for tie-breaking, so it must be stable within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerId(pub u32);

impl fmt::Display for AnswerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProblemId(pub u32);

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One step's sampled answers for one problem, as vote counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub problem_id: ProblemId,
    pub counts: BTreeMap<AnswerId, u32>,
    pub k: u32,
}

impl RolloutBatch {
    /// Build a batch from counts, checking that they sum to `k`.
    pub fn new(problem_id: ProblemId, counts: BTreeMap<AnswerId, u32>, k: u32) -> Result<Self> {
        let batch = RolloutBatch {
            problem_id,
            counts,
            k,
        };
        batch.validate()?;
        Ok(batch)
    }

    /// Tally raw responses into a batch.
    pub fn from_responses(problem_id: ProblemId, responses: &[AnswerId]) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for &a in responses {
            *counts.entry(a).or_insert(0) += 1;
        }
        Self::new(problem_id, counts, responses.len() as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.counts.is_empty() {
            return Err(Error::MalformedBatch(format!(
                "problem {}: empty batch (k={}, {} answers)",
                self.problem_id,
                self.k,
                self.counts.len()
            )));
        }
        let total: u64 = self.counts.values().map(|&c| c as u64).sum();
        if total != self.k as u64 {
            return Err(Error::MalformedBatch(format!(
                "problem {}: counts sum to {total} but k={}",
                self.problem_id, self.k
            )));
        }
        Ok(())
    }

    /// Check every answer lies in `0..support_size`.
    pub fn check_support(&self, support_size: u32) -> Result<()> {
        match self.counts.keys().find(|a| a.0 >= support_size) {
            Some(a) => Err(Error::MalformedBatch(format!(
                "problem {}: answer {a} outside support of size {support_size}",
                self.problem_id
            ))),
            None => Ok(()),
        }
    }

    pub fn count(&self, answer: AnswerId) -> u32 {
        self.counts.get(&answer).copied().unwrap_or(0)
    }
}

/// Majority-vote pseudo-label and its match rate.
///
/// Ties go to the smallest [`AnswerId`].
pub fn majority_vote(batch: &RolloutBatch) -> Result<(AnswerId, f64)> {
    batch.validate()?;
    let mut best: Option<(AnswerId, u32)> = None;
    for (&a, &c) in &batch.counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((a, c));
        }
    }
    let (label, count) = best.expect("validated batch is non-empty");
    Ok((label, count as f64 / batch.k as f64))
}

/// Fraction of the last `min(t, window)` transitions of `history` in which
/// the label changed. Zero when fewer than two entries exist.
pub fn windowed_flip_rate(history: &[AnswerId], window: usize) -> f64 {
    let window = window.max(1);
    if history.len() < 2 {
        return 0.0;
    }
    let transitions = (history.len() - 1).min(window);
    let tail = &history[history.len() - transitions - 1..];
    let flips = tail.windows(2).filter(|p| p[0] != p[1]).count();
    flips as f64 / transitions as f64
}

/// Fraction of problems whose label differs between two consecutive steps.
pub fn batch_flip_rate(
    previous: &BTreeMap<ProblemId, AnswerId>,
    current: &BTreeMap<ProblemId, AnswerId>,
) -> Result<f64> {
    if previous.is_empty() {
        return Err(Error::Contract(
            "batch flip rate of an empty problem set".into(),
        ));
    }
    if previous.len() != current.len() || !previous.keys().eq(current.keys()) {
        return Err(Error::Contract(
            "batch flip rate needs identical problem sets at both steps".into(),
        ));
    }
    let changed = previous
        .iter()
        .zip(current.values())
        .filter(|((_, a), b)| a != b)
        .count();
    Ok(changed as f64 / previous.len() as f64)
}

/// Batch-level match rate: pooled fraction of all sampled responses that
/// agree with their own problem's majority vote. Coincides with the mean of
/// per-problem match rates when every batch has the same `k`.
pub fn pooled_match_rate(batches: &[RolloutBatch]) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::Contract(
            "pooled match rate of an empty batch set".into(),
        ));
    }
    let mut matched = 0u64;
    let mut total = 0u64;
    for b in batches {
        let (label, _) = majority_vote(b)?;
        matched += b.count(label) as u64;
        total += b.k as u64;
    }
    Ok(matched as f64 / total as f64)
}

/// Everything the guard tracks about one problem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemState {
    pub pseudo_history: Vec<AnswerId>,
    pub mr_history: Vec<f64>,
    pub fr: f64,
    /// Latched once the windowed flip rate exceeds `tau_fr`.
    pub had_comp: bool,
    pub mr_bar: f64,
    /// Consecutive calm steps (`fr <= tau_fr`) since competition was seen.
    pub steady_below_count: u32,
    pub mps_deactivated: bool,
    /// Steps on which the C2 penalty was applied; capped at `window`.
    pub delta_trigger_count: u32,
}

impl ProblemState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn history_len(&self) -> usize {
        self.pseudo_history.len()
    }

    pub fn pseudo_label(&self) -> Option<AnswerId> {
        self.pseudo_history.last().copied()
    }

    pub fn match_rate(&self) -> Option<f64> {
        self.mr_history.last().copied()
    }

    pub fn check_invariants(&self, config: &GuardConfig) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.pseudo_history.len() != self.mr_history.len() {
            return Err(Error::Contract(format!(
                "pseudo-label history ({}) and match-rate history ({}) differ in length",
                self.pseudo_history.len(),
                self.mr_history.len()
            )));
        }
        if !unit(self.fr) || !unit(self.mr_bar) || !self.mr_history.iter().all(|&m| unit(m)) {
            return Err(Error::Contract("state fraction outside [0, 1]".into()));
        }
        if self.delta_trigger_count > config.window {
            return Err(Error::Contract(format!(
                "delta trigger count {} exceeds window {}",
                self.delta_trigger_count, config.window
            )));
        }
        Ok(())
    }

    /// Fold one vote batch into the state.
    ///
    /// HadComp is updated here, before any trigger of the same step is
    /// evaluated. The steady counter only runs once competition has been
    /// seen, so warm-up steps with `fr = 0` never switch MPS off.
    pub fn observe(&mut self, batch: &RolloutBatch, config: &GuardConfig) -> Result<()> {
        self.check_invariants(config)?;
        let (label, mr) = majority_vote(batch)?;
        let w = config.window_len();

        self.pseudo_history.push(label);
        self.mr_history.push(mr);
        self.fr = windowed_flip_rate(&self.pseudo_history, w);
        if self.fr > config.tau_fr {
            self.had_comp = true;
        }

        let n = self.mr_history.len().min(w);
        let tail = &self.mr_history[self.mr_history.len() - n..];
        self.mr_bar = tail.iter().sum::<f64>() / n as f64;

        if self.fr <= config.tau_fr {
            if self.had_comp {
                self.steady_below_count = self.steady_below_count.saturating_add(1);
            }
        } else {
            self.steady_below_count = 0;
        }
        if self.steady_below_count >= config.t_steady {
            self.mps_deactivated = true;
        }
        Ok(())
    }
}

/// Functional form of [`ProblemState::observe`].
pub fn update_problem_state(
    state: &ProblemState,
    batch: &RolloutBatch,
    config: &GuardConfig,
) -> Result<ProblemState> {
    let mut next = state.clone();
    next.observe(batch, config)?;
    Ok(next)
}
