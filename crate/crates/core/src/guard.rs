//! Decision logic of the guard: reward weights (FRS), minority sets and
//! mixing coefficients (MPS), the high-risk flag and skip selection (RCSU),
//! and the router that assembles all of it into a per-step plan.
//!
//! Everything here is a pure function of monitor state, except the C2
//! trigger counter, which [`commit_plan`] advances after a plan is applied.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::GuardConfig;
use crate::error::{Error, Result};
use crate::monitor::{majority_vote, AnswerId, ProblemId, ProblemState, RolloutBatch};

/// Decomposed reward weight `w = max(w_min, α·γ·δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrsWeight {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    /// High confidence while the label is still flipping.
    pub c1: bool,
    /// Never-contested problem with a long, confident history (penalty applied).
    pub c2: bool,
    pub weight: f64,
}

impl FrsWeight {
    pub const IDENTITY: FrsWeight = FrsWeight {
        alpha: 1.0,
        gamma: 1.0,
        delta: 1.0,
        c1: false,
        c2: false,
        weight: 1.0,
    };
}

/// Flip-rate-aware reward weight for a problem whose state already includes
/// the current step.
///
/// HadComp is read as of the current step, i.e. it also counts the current
/// flip rate. With monitor-before-trigger ordering this is what the stored
/// latch holds anyway; it makes C1 and C2 exclusive for any input state.
pub fn frs_weight(state: &ProblemState, mr: f64, config: &GuardConfig) -> FrsWeight {
    let fr = state.fr;
    let had_comp = state.had_comp || fr > config.tau_fr;

    let alpha = 1.0 - config.lambda1 * fr;
    let c1 = mr > config.tau_mr && fr > config.tau_fr;
    let c2 = !had_comp
        && state.history_len() >= config.window_len()
        && state.mr_bar > config.tau_mr
        && state.delta_trigger_count < config.window;
    let gamma = if c1 { 1.0 - config.lambda2 } else { 1.0 };
    let delta = if c2 { 1.0 - config.lambda2 / 2.0 } else { 1.0 };

    FrsWeight {
        alpha,
        gamma,
        delta,
        c1,
        c2,
        weight: (alpha * gamma * delta).max(config.w_min),
    }
}

/// Answers other than the pseudo-label holding at least `⌊k / divisor⌋`
/// votes, where `k` is the vote-batch size.
pub fn minority_set(
    batch: &RolloutBatch,
    pseudo_label: AnswerId,
    config: &GuardConfig,
) -> Result<BTreeSet<AnswerId>> {
    batch.validate()?;
    if batch.count(pseudo_label) == 0 {
        return Err(Error::Contract(format!(
            "problem {}: pseudo-label {pseudo_label} has no votes in the batch",
            batch.problem_id
        )));
    }
    let threshold = batch.k / config.minority_threshold_divisor;
    Ok(batch
        .counts
        .iter()
        .filter(|&(&a, &c)| a != pseudo_label && c >= threshold)
        .map(|(&a, _)| a)
        .collect())
}

/// Mixing weight of the minority objective: `β_max · fr` while the problem
/// is unstable and MPS has not been switched off, zero otherwise.
pub fn mps_coefficient(state: &ProblemState, config: &GuardConfig) -> f64 {
    if state.mps_deactivated || state.fr <= config.tau_fr {
        0.0
    } else {
        (config.beta_max * state.fr).clamp(0.0, config.beta_max)
    }
}

/// Once contested, enough history, and confidently re-locked.
pub fn rcsu_high_risk(state: &ProblemState, config: &GuardConfig) -> bool {
    state.had_comp && state.history_len() >= config.window_len() && state.mr_bar > config.theta_mr
}

/// Most problems that may be skipped in a step of `n` problems.
pub fn skip_cap(n: usize, config: &GuardConfig) -> usize {
    (config.max_skip_fraction * n as f64 + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Path {
    Stable,
    AtRisk,
    HighRisk,
}

/// The router's directives for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub problem_id: ProblemId,
    pub pseudo_label: AnswerId,
    pub path: Path,
    pub frs: FrsWeight,
    pub minority_set: BTreeSet<AnswerId>,
    pub beta: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub entries: Vec<PlanEntry>,
}

impl StepPlan {
    pub fn skipped_count(&self) -> usize {
        self.entries.iter().filter(|e| e.skipped).count()
    }

    pub fn entry(&self, problem_id: ProblemId) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.problem_id == problem_id)
    }
}

/// Route every problem for the current step.
///
/// `states[i]` must already have observed `batches[i]`. High-risk problems
/// are skipped independently with probability `p_skip`; if more than the cap
/// come up, a uniformly random subset of exactly the cap stays skipped. The
/// result depends only on the inputs and the state of `rng`.
pub fn build_step_plan<R: Rng + ?Sized>(
    states: &[ProblemState],
    batches: &[RolloutBatch],
    config: &GuardConfig,
    rng: &mut R,
) -> Result<StepPlan> {
    if states.len() != batches.len() {
        return Err(Error::Contract(format!(
            "{} states but {} batches",
            states.len(),
            batches.len()
        )));
    }
    let mut labels = Vec::with_capacity(batches.len());
    for (state, batch) in states.iter().zip(batches) {
        let (label, mr) = majority_vote(batch)?;
        if state.pseudo_label() != Some(label) {
            return Err(Error::Contract(format!(
                "problem {}: state has not observed the current batch",
                batch.problem_id
            )));
        }
        labels.push((label, mr));
    }

    let high_risk: Vec<bool> = states.iter().map(|s| rcsu_high_risk(s, config)).collect();
    let mut candidates: Vec<usize> = Vec::new();
    for (i, &hr) in high_risk.iter().enumerate() {
        if hr && rng.random::<f64>() < config.p_skip {
            candidates.push(i);
        }
    }
    let cap = skip_cap(states.len(), config);
    if candidates.len() > cap {
        let mut keep: Vec<usize> = index::sample(rng, candidates.len(), cap)
            .into_iter()
            .map(|j| candidates[j])
            .collect();
        keep.sort_unstable();
        candidates = keep;
    }
    let mut skipped = vec![false; states.len()];
    for i in candidates {
        skipped[i] = true;
    }

    let mut entries = Vec::with_capacity(states.len());
    for (i, (state, batch)) in states.iter().zip(batches).enumerate() {
        let (label, mr) = labels[i];
        let path = if high_risk[i] {
            Path::HighRisk
        } else if state.fr > config.tau_fr {
            Path::AtRisk
        } else {
            Path::Stable
        };
        let frs = frs_weight(state, mr, config);
        let beta = mps_coefficient(state, config);
        let minority_set = if beta > 0.0 {
            minority_set(batch, label, config)?
        } else {
            BTreeSet::new()
        };
        entries.push(PlanEntry {
            problem_id: batch.problem_id,
            pseudo_label: label,
            path,
            frs,
            minority_set,
            beta,
            skipped: skipped[i],
        });
    }
    Ok(StepPlan { entries })
}

/// Advance per-problem counters for a plan that has been applied: every
/// non-skipped problem whose C2 penalty was used counts one trigger.
pub fn commit_plan(
    states: &mut [ProblemState],
    plan: &StepPlan,
    config: &GuardConfig,
) -> Result<()> {
    if states.len() != plan.entries.len() {
        return Err(Error::Contract(format!(
            "{} states but {} plan entries",
            states.len(),
            plan.entries.len()
        )));
    }
    for (state, entry) in states.iter_mut().zip(&plan.entries) {
        if entry.frs.c2 && !entry.skipped {
            state.delta_trigger_count = (state.delta_trigger_count + 1).min(config.window);
        }
    }
    Ok(())
}
