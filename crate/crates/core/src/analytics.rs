//! Measurements over trajectories: label accuracy, the six-way fate
//! taxonomy, correct-vote rates, batch flip/match curves, and the
//! early-vs-late scissor statistics of degraded problems.
//!
//! All functions here read records and never modify them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monitor::{AnswerId, ProblemId, RolloutBatch};

/// One `(step, problem)` row of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub step: u32,
    pub problem_id: ProblemId,
    pub pseudo_label: AnswerId,
    pub mr: f64,
    pub fr: f64,
    pub had_comp: bool,
    pub weight: f64,
    pub beta: f64,
    pub skipped: bool,
    /// Label accuracy; absent when the producer had no ground truth.
    pub la: Option<f64>,
    pub vote_counts: BTreeMap<AnswerId, u32>,
}

impl TrajectoryRecord {
    pub fn votes(&self) -> Result<RolloutBatch> {
        let k = self.vote_counts.values().sum();
        RolloutBatch::new(self.problem_id, self.vote_counts.clone(), k)
    }
}

/// Fraction of the batch's responses equal to the ground truth.
pub fn label_accuracy(
    batch: &RolloutBatch,
    ground_truth: AnswerId,
    support_size: Option<u32>,
) -> Result<f64> {
    batch.validate()?;
    if let Some(n) = support_size {
        if ground_truth.0 >= n {
            return Err(Error::Contract(format!(
                "ground truth {ground_truth} outside support of size {n}"
            )));
        }
    }
    Ok(batch.count(ground_truth) as f64 / batch.k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    StableAlwaysRight,
    Degraded,
    Learned,
    MarginalDegraded,
    MarginalStable,
    AlwaysWrong,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::StableAlwaysRight,
        Category::Degraded,
        Category::Learned,
        Category::MarginalDegraded,
        Category::MarginalStable,
        Category::AlwaysWrong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::StableAlwaysRight => "StableAR",
            Category::Degraded => "Degraded",
            Category::Learned => "Learned",
            Category::MarginalDegraded => "MarginalDegraded",
            Category::MarginalStable => "MarginalStable",
            Category::AlwaysWrong => "AlwaysWrong",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Checkpoints averaged for the initial and final label accuracy.
pub const INITIAL_CHECKPOINTS: usize = 3;
pub const FINAL_CHECKPOINTS: usize = 5;

// Thresholds are compared as if in exact decimal arithmetic.
const EPS: f64 = 1e-9;

fn ge(x: f64, t: f64) -> bool {
    x >= t - EPS
}

fn lt(x: f64, t: f64) -> bool {
    x < t - EPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Categorization {
    pub category: Category,
    pub ila: f64,
    pub fla: f64,
    /// No row of the taxonomy matched; binned as Marginal Stable.
    pub fallback: bool,
}

/// Classify an `(ILA, FLA)` pair, rows evaluated top-down.
pub fn categorize_pair(ila: f64, fla: f64) -> Categorization {
    let mid = ge(ila, 0.15) && lt(ila, 0.7);
    let rows = [
        (Category::StableAlwaysRight, ge(ila, 0.7) && ge(fla, 0.6)),
        (Category::Degraded, ge(ila, 0.5) && lt(fla, ila - 0.2)),
        (Category::Learned, lt(ila, 0.15) && ge(fla, 0.5)),
        (Category::MarginalDegraded, mid && lt(fla, ila - 0.15)),
        (Category::MarginalStable, mid && ge(fla, ila - 0.15)),
        (Category::AlwaysWrong, lt(ila, 0.15) && lt(fla, 0.5)),
    ];
    match rows.iter().find(|r| r.1) {
        Some(&(category, _)) => Categorization {
            category,
            ila,
            fla,
            fallback: false,
        },
        None => Categorization {
            category: Category::MarginalStable,
            ila,
            fla,
            fallback: true,
        },
    }
}

/// ILA is the mean of the first three checkpoints, FLA the mean of the last five.
pub fn categorize_problem(la_series: &[f64]) -> Result<Categorization> {
    let needed = INITIAL_CHECKPOINTS + FINAL_CHECKPOINTS;
    if la_series.len() < needed {
        return Err(Error::InsufficientHistory {
            needed,
            got: la_series.len(),
        });
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let ila = mean(&la_series[..INITIAL_CHECKPOINTS]);
    let fla = mean(&la_series[la_series.len() - FINAL_CHECKPOINTS..]);
    Ok(categorize_pair(ila, fla))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FateBreakdown {
    pub n: usize,
    pub stable_always_right: f64,
    pub degraded: f64,
    pub learned: f64,
    pub marginal_degraded: f64,
    pub marginal_stable: f64,
    pub always_wrong: f64,
    pub total_degraded: f64,
    /// Learned over Degraded; `None` when nothing degraded.
    pub ld_ratio: Option<f64>,
    pub fallback_count: usize,
}

impl FateBreakdown {
    pub fn fraction(&self, c: Category) -> f64 {
        match c {
            Category::StableAlwaysRight => self.stable_always_right,
            Category::Degraded => self.degraded,
            Category::Learned => self.learned,
            Category::MarginalDegraded => self.marginal_degraded,
            Category::MarginalStable => self.marginal_stable,
            Category::AlwaysWrong => self.always_wrong,
        }
    }
}

pub fn fate_breakdown(categorized: &[Categorization]) -> Result<FateBreakdown> {
    if categorized.is_empty() {
        return Err(Error::Contract("fate breakdown of zero problems".into()));
    }
    let n = categorized.len();
    let frac =
        |c: Category| categorized.iter().filter(|x| x.category == c).count() as f64 / n as f64;
    let degraded = frac(Category::Degraded);
    let learned = frac(Category::Learned);
    let marginal_degraded = frac(Category::MarginalDegraded);
    Ok(FateBreakdown {
        n,
        stable_always_right: frac(Category::StableAlwaysRight),
        degraded,
        learned,
        marginal_degraded,
        marginal_stable: frac(Category::MarginalStable),
        always_wrong: frac(Category::AlwaysWrong),
        total_degraded: degraded + marginal_degraded,
        ld_ratio: (degraded > 0.0).then(|| learned / degraded),
        fallback_count: categorized.iter().filter(|x| x.fallback).count(),
    })
}

/// Fraction of the given records whose pseudo-label is the ground truth.
pub fn correct_vote_rate(records: &[&TrajectoryRecord], ground_truth: AnswerId) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Contract("correct-vote rate of zero records".into()));
    }
    Ok(records
        .iter()
        .filter(|r| r.pseudo_label == ground_truth)
        .count() as f64
        / records.len() as f64)
}

/// Records grouped per problem, each group in step order.
pub fn by_problem(records: &[TrajectoryRecord]) -> BTreeMap<ProblemId, Vec<&TrajectoryRecord>> {
    let mut out: BTreeMap<ProblemId, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.problem_id).or_default().push(r);
    }
    for v in out.values_mut() {
        v.sort_by_key(|r| r.step);
    }
    out
}

/// Normalised training progress of `step`.
pub fn progress(step: u32, total_steps: u32) -> f64 {
    if total_steps == 0 {
        0.0
    } else {
        step as f64 / total_steps as f64
    }
}

/// Correct-vote rate per progress bin, pooled over `problems`.
/// Bin `b` covers progress in `[b/bins, (b+1)/bins)`; the last bin is closed.
pub fn correct_vote_curve(
    grouped: &BTreeMap<ProblemId, Vec<&TrajectoryRecord>>,
    truths: &BTreeMap<ProblemId, AnswerId>,
    problems: &BTreeSet<ProblemId>,
    total_steps: u32,
    bins: usize,
) -> Vec<Option<f64>> {
    let mut hits = vec![0usize; bins];
    let mut seen = vec![0usize; bins];
    for pid in problems {
        let (Some(rs), Some(&truth)) = (grouped.get(pid), truths.get(pid)) else {
            continue;
        };
        for r in rs {
            let b = ((progress(r.step, total_steps) * bins as f64) as usize).min(bins - 1);
            seen[b] += 1;
            if r.pseudo_label == truth {
                hits[b] += 1;
            }
        }
    }
    hits.iter()
        .zip(&seen)
        .map(|(&h, &s)| (s > 0).then(|| h as f64 / s as f64))
        .collect()
}

/// Sliding mean of `mr` over the last `window` entries, at every step.
pub fn sliding_mean(mr: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..mr.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let tail = &mr[lo..=i];
            tail.iter().sum::<f64>() / tail.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseBounds {
    /// Steps with progress below this are early.
    pub early_end: f64,
    /// Steps with progress at or above this are late.
    pub late_start: f64,
}

impl Default for PhaseBounds {
    fn default() -> Self {
        PhaseBounds {
            early_end: 1.0 / 3.0,
            late_start: 2.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub steps: usize,
    /// Match rates on steps where the pseudo-label is wrong.
    pub wrong_answer_mr: Vec<f64>,
    /// Mean of `1 − mr_bar` over wrong-label steps.
    pub mean_survival_space: Option<f64>,
    pub correct_majority_steps: usize,
    /// Fraction of wrong-label steps with match rate below 0.5.
    pub window_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScissorReport {
    pub early: Option<PhaseStats>,
    pub late: Option<PhaseStats>,
}

#[derive(Default)]
struct PhaseAcc {
    steps: usize,
    wrong_mr: Vec<f64>,
    survival: Vec<f64>,
    correct: usize,
}

impl PhaseAcc {
    fn finish(self) -> Option<PhaseStats> {
        if self.steps == 0 {
            return None;
        }
        let n_wrong = self.wrong_mr.len();
        Some(PhaseStats {
            steps: self.steps,
            mean_survival_space: (!self.survival.is_empty())
                .then(|| self.survival.iter().sum::<f64>() / self.survival.len() as f64),
            correct_majority_steps: self.correct,
            window_width: (n_wrong > 0).then(|| {
                self.wrong_mr.iter().filter(|&&m| m < 0.5).count() as f64 / n_wrong as f64
            }),
            wrong_answer_mr: self.wrong_mr,
        })
    }
}

/// Early/late statistics of the competition between the truth and the
/// wrong majority, pooled over `problems`.
pub fn scissor_statistics(
    grouped: &BTreeMap<ProblemId, Vec<&TrajectoryRecord>>,
    truths: &BTreeMap<ProblemId, AnswerId>,
    problems: &BTreeSet<ProblemId>,
    total_steps: u32,
    window: usize,
    bounds: PhaseBounds,
) -> ScissorReport {
    let mut early = PhaseAcc::default();
    let mut late = PhaseAcc::default();
    for pid in problems {
        let (Some(rs), Some(&truth)) = (grouped.get(pid), truths.get(pid)) else {
            continue;
        };
        let mr: Vec<f64> = rs.iter().map(|r| r.mr).collect();
        let mr_bar = sliding_mean(&mr, window);
        for (r, &bar) in rs.iter().zip(&mr_bar) {
            let p = progress(r.step, total_steps);
            let acc = if p < bounds.early_end {
                &mut early
            } else if p >= bounds.late_start {
                &mut late
            } else {
                continue;
            };
            acc.steps += 1;
            if r.pseudo_label == truth {
                acc.correct += 1;
            } else {
                acc.wrong_mr.push(r.mr);
                acc.survival.push(1.0 - bar);
            }
        }
    }
    ScissorReport {
        early: early.finish(),
        late: late.finish(),
    }
}

/// Whether the flip rate peaked strictly before the last step on which the
/// pseudo-label left the truth. `None` if the label never left the truth.
pub fn flip_peak_precedes_last_departure(
    records: &[&TrajectoryRecord],
    truth: AnswerId,
) -> Option<bool> {
    let last_departure = records
        .windows(2)
        .filter(|w| w[0].pseudo_label == truth && w[1].pseudo_label != truth)
        .map(|w| w[1].step)
        .next_back()?;
    let mut peak: Option<(f64, u32)> = None;
    for r in records {
        if peak.is_none_or(|(m, _)| r.fr > m) {
            peak = Some((r.fr, r.step));
        }
    }
    peak.map(|(_, step)| step < last_departure)
}
