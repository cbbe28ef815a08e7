//! Synthetic stand-in for the policy being trained.
//!
//! Each problem owns a categorical distribution over a small answer support,
//! parameterised by logits. Rollouts are independent draws from the softmax;
//! the update is a group-mean-centred advantage applied to the logits of the
//! sampled answers, which keeps the winner-takes-all reinforcement of
//! majority-vote rewards.
//!
//! With advantages that sum to zero over the group, adding `η·Σ A` to each
//! sampled answer's logit is exactly the REINFORCE gradient of the softmax
//! (the `−π` term of `∇ log π` cancels).

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{GuardConfig, DEFAULT_LEARNING_RATE};
use crate::error::{Error, Result};
use crate::guard::PlanEntry;
use crate::monitor::{AnswerId, ProblemId, RolloutBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProblem {
    pub problem_id: ProblemId,
    pub support_size: u32,
    pub ground_truth: AnswerId,
    /// The one plausible wrong answer competing with the truth.
    pub distractor: AnswerId,
    pub initial_logits: Vec<f64>,
}

/// Logits for every problem, indexed by `ProblemId`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub logits: Vec<Vec<f64>>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Truth and distractor compete; initial pass@1 in [0.3, 0.7].
    ModerateMismatch,
    /// Truth is nearly never sampled; initial pass@1 below 0.1.
    NearZero,
    /// Truth dominates; initial pass@1 above 0.9.
    NearPerfect,
}

impl Regime {
    /// Band the mean initial pass@1 must fall in, as `(low, high)`.
    pub fn band(self) -> (f64, f64) {
        match self {
            Regime::ModerateMismatch => (0.3, 0.7),
            Regime::NearZero => (0.0, 0.1),
            Regime::NearPerfect => (0.9, 1.0),
        }
    }

    fn truth_level(self) -> f64 {
        match self {
            Regime::ModerateMismatch => 0.0,
            Regime::NearZero => -4.5,
            Regime::NearPerfect => 4.5,
        }
    }

    fn in_band(self, p: f64) -> bool {
        match self {
            Regime::ModerateMismatch => (0.3..=0.7).contains(&p),
            Regime::NearZero => p < 0.1,
            Regime::NearPerfect => p > 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub regime: Regime,
    pub n_problems: u32,
    pub support_size: u32,
    /// Mean initial logit of the distractor, relative to a neutral truth.
    pub distractor_strength: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            regime: Regime::ModerateMismatch,
            n_problems: 200,
            support_size: 4,
            distractor_strength: 0.0,
            seed: 0,
        }
    }
}

// Logit spreads of the generator.
const TRUTH_SPREAD: f64 = 0.1;
const DISTRACTOR_SPREAD: f64 = 0.1;
const BACKGROUND_LEVEL: f64 = -2.0;
const BACKGROUND_SPREAD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub problems: Vec<SyntheticProblem>,
    pub policy: PolicyState,
}

impl Scenario {
    pub fn mean_expected_pass_at_1(&self) -> f64 {
        mean_expected_pass_at_1(&self.policy, &self.problems)
    }
}

/// Build a population of problems for a regime.
///
/// Every problem gets a uniformly placed truth, one distractor, and a weak
/// background over the remaining answers. Fails if the realised mean
/// initial pass@1 misses the regime's band.
pub fn generate_scenario<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<Scenario> {
    if spec.n_problems == 0 {
        return Err(Error::Config("scenario needs at least one problem".into()));
    }
    if spec.support_size < 2 {
        return Err(Error::Config(format!(
            "support_size={} must be at least 2",
            spec.support_size
        )));
    }
    if !spec.distractor_strength.is_finite() {
        return Err(Error::Config("distractor_strength must be finite".into()));
    }
    let truth_noise = Normal::new(0.0, TRUTH_SPREAD).expect("valid spread");
    let distractor_noise = Normal::new(0.0, DISTRACTOR_SPREAD).expect("valid spread");
    let background = Normal::new(BACKGROUND_LEVEL, BACKGROUND_SPREAD).expect("valid spread");

    let n = spec.support_size;
    let mut problems = Vec::with_capacity(spec.n_problems as usize);
    for i in 0..spec.n_problems {
        let truth = rng.random_range(0..n);
        let mut distractor = rng.random_range(0..n - 1);
        if distractor >= truth {
            distractor += 1;
        }
        let logits: Vec<f64> = (0..n)
            .map(|a| {
                if a == truth {
                    spec.regime.truth_level() + truth_noise.sample(rng)
                } else if a == distractor {
                    spec.distractor_strength + distractor_noise.sample(rng)
                } else {
                    background.sample(rng)
                }
            })
            .collect();
        problems.push(SyntheticProblem {
            problem_id: ProblemId(i),
            support_size: n,
            ground_truth: AnswerId(truth),
            distractor: AnswerId(distractor),
            initial_logits: logits,
        });
    }
    let policy = PolicyState {
        logits: problems.iter().map(|p| p.initial_logits.clone()).collect(),
        learning_rate: DEFAULT_LEARNING_RATE,
    };
    let scenario = Scenario { problems, policy };
    let p = scenario.mean_expected_pass_at_1();
    if !spec.regime.in_band(p) {
        let (lo, hi) = spec.regime.band();
        return Err(Error::Config(format!(
            "{:?} with distractor_strength={} gives mean initial pass@1 {p:.3}, outside [{lo}, {hi}]",
            spec.regime, spec.distractor_strength
        )));
    }
    Ok(scenario)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl PolicyState {
    pub fn problem_logits(&self, problem_id: ProblemId) -> Result<&[f64]> {
        self.logits
            .get(problem_id.0 as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Contract(format!("unknown problem {problem_id}")))
    }

    pub fn probabilities(&self, problem_id: ProblemId) -> Result<Vec<f64>> {
        Ok(softmax(self.problem_logits(problem_id)?))
    }
}

/// `k` independent draws from the problem's current distribution, in draw order.
pub fn sample_responses<R: Rng + ?Sized>(
    policy: &PolicyState,
    problem_id: ProblemId,
    k: u32,
    rng: &mut R,
) -> Result<Vec<AnswerId>> {
    let probs = policy.probabilities(problem_id)?;
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cdf.push(acc);
    }
    let last = probs.len() - 1;
    Ok((0..k)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let a = cdf.partition_point(|&c| c <= u).min(last);
            AnswerId(a as u32)
        })
        .collect())
}

pub fn sample_rollouts<R: Rng + ?Sized>(
    policy: &PolicyState,
    problem_id: ProblemId,
    k: u32,
    rng: &mut R,
) -> Result<RolloutBatch> {
    if k == 0 {
        return Err(Error::MalformedBatch("cannot sample k = 0 rollouts".into()));
    }
    RolloutBatch::from_responses(problem_id, &sample_responses(policy, problem_id, k, rng)?)
}

/// Group-relative surrogate update for one problem.
///
/// Two reward channels are centred separately over the `k` responses of
/// `batch`: the weighted majority reward `w·1[a = ŷ]` and the minority
/// reward `ε·1[a ∈ M]`. Each sampled answer's logit moves by
/// `η·[(1−β)·A_mv + β·A_min]` per occurrence. Skipped entries leave the
/// policy untouched.
pub fn apply_surrogate_update(
    policy: &mut PolicyState,
    batch: &RolloutBatch,
    entry: &PlanEntry,
    config: &GuardConfig,
) -> Result<()> {
    if batch.problem_id != entry.problem_id {
        return Err(Error::Contract(format!(
            "plan entry for problem {} applied to batch of problem {}",
            entry.problem_id, batch.problem_id
        )));
    }
    batch.validate()?;
    if entry.skipped {
        return Ok(());
    }
    let eta = policy.learning_rate;
    let logits = policy
        .logits
        .get_mut(batch.problem_id.0 as usize)
        .ok_or_else(|| Error::Contract(format!("unknown problem {}", batch.problem_id)))?;
    batch.check_support(logits.len() as u32)?;

    let deltas = surrogate_deltas(
        batch,
        entry.pseudo_label,
        &entry.minority_set,
        entry.frs.weight,
        entry.beta,
        config.epsilon,
    );
    for (a, d) in deltas {
        logits[a.0 as usize] += eta * d;
    }
    Ok(())
}

/// Per-answer logit change before scaling by the learning rate.
pub fn surrogate_deltas(
    batch: &RolloutBatch,
    pseudo_label: AnswerId,
    minority: &BTreeSet<AnswerId>,
    weight: f64,
    beta: f64,
    epsilon: f64,
) -> Vec<(AnswerId, f64)> {
    let k = batch.k as f64;
    let mv = |a: AnswerId| if a == pseudo_label { weight } else { 0.0 };
    let min = |a: AnswerId| if minority.contains(&a) { epsilon } else { 0.0 };
    let mean_mv: f64 = batch
        .counts
        .iter()
        .map(|(&a, &c)| mv(a) * c as f64)
        .sum::<f64>()
        / k;
    let mean_min: f64 = batch
        .counts
        .iter()
        .map(|(&a, &c)| min(a) * c as f64)
        .sum::<f64>()
        / k;
    batch
        .counts
        .iter()
        .map(|(&a, &c)| {
            let adv = (1.0 - beta) * (mv(a) - mean_mv) + beta * (min(a) - mean_min);
            (a, c as f64 * adv)
        })
        .collect()
}

/// Exact single-sample success probability: softmax mass on the truth.
pub fn expected_pass_at_1(policy: &PolicyState, problem: &SyntheticProblem) -> Result<f64> {
    let probs = policy.probabilities(problem.problem_id)?;
    probs
        .get(problem.ground_truth.0 as usize)
        .copied()
        .ok_or_else(|| {
            Error::Contract(format!(
                "ground truth outside support of problem {}",
                problem.problem_id
            ))
        })
}

/// Empirical pass@1 from `n` sampled responses.
pub fn estimate_pass_at_1<R: Rng + ?Sized>(
    policy: &PolicyState,
    problem: &SyntheticProblem,
    n: u32,
    rng: &mut R,
) -> Result<f64> {
    let responses = sample_responses(policy, problem.problem_id, n, rng)?;
    Ok(responses
        .iter()
        .filter(|&&a| a == problem.ground_truth)
        .count() as f64
        / n as f64)
}

pub fn mean_expected_pass_at_1(policy: &PolicyState, problems: &[SyntheticProblem]) -> f64 {
    let total: f64 = problems
        .iter()
        .map(|p| expected_pass_at_1(policy, p).unwrap_or(0.0))
        .sum();
    total / problems.len().max(1) as f64
}
