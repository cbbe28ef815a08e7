use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytics::{
    by_problem, categorize_problem, correct_vote_curve, fate_breakdown,
    flip_peak_precedes_last_departure, scissor_statistics, Categorization, Category, FateBreakdown,
    PhaseBounds, ScissorReport,
};
use crate::config::GuardConfig;
use crate::error::{Error, Result};
use crate::monitor::{batch_flip_rate, AnswerId, ProblemId};
use crate::rng::{stream, Purpose};
use crate::sim::generate_scenario;

use super::log::{read_log, TrajectoryLog};

/// Bins of the correct-vote curve over normalised progress.
pub const CURVE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum TruthSource {
    Known(BTreeMap<ProblemId, AnswerId>),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadingIndicator {
    /// Degraded or marginally degraded problems whose label left the truth at least once.
    pub eligible: usize,
    /// Of those, how many had their flip-rate peak strictly earlier.
    pub peak_first: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsReport {
    pub n_problems: usize,
    pub total_steps: u32,
    pub checkpoint_every: u32,
    /// Batch flip rate between step `s − 1` and `s`, for `s = 1..=total_steps`.
    pub batch_flip_rate: Vec<f64>,
    /// Pooled match rate per step.
    pub batch_match_rate: Vec<f64>,
    pub mean_label_accuracy: Option<Vec<f64>>,
    pub categories: Option<Vec<(ProblemId, Categorization)>>,
    pub fates: Option<FateBreakdown>,
    /// Correct-vote rate over progress, on problems that ended worse off or always wrong.
    pub correct_vote_curve: Option<Vec<Option<f64>>>,
    /// Early/late competition statistics of degraded and marginally degraded problems.
    pub scissor: Option<ScissorReport>,
    pub leading_indicator: Option<LeadingIndicator>,
    pub notices: Vec<String>,
}

/// Read `problem_id,ground_truth` rows.
pub fn read_ground_truth(path: &Path) -> Result<BTreeMap<ProblemId, AnswerId>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut out = BTreeMap::new();
    for (i, row) in reader.deserialize::<(u32, u32)>().enumerate() {
        let (p, a) = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        if out.insert(ProblemId(p), AnswerId(a)).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("duplicate problem_id {p}"),
            });
        }
    }
    Ok(out)
}

/// Compute every statistic the log supports.
///
/// Label accuracy comes from the vote counts when ground truth is known and
/// from the records' `la` field otherwise; sections needing the identity of
/// the true answer are omitted, with a notice, when it is unknown.
pub fn analyze_records(log: &TrajectoryLog, truths: &TruthSource) -> Result<AnalyticsReport> {
    let records = &log.records;
    if records.is_empty() {
        return Err(Error::Contract("log has no records".into()));
    }
    let config = log.header.config.as_ref();
    let window = config
        .map(|c| c.guard.window_len())
        .unwrap_or(GuardConfig::default().window_len());
    let checkpoint_every = config.map(|c| c.run.checkpoint_every).unwrap_or(1).max(1);
    let total_steps = records.iter().map(|r| r.step).max().unwrap_or(0);
    let grouped = by_problem(records);
    let mut notices = Vec::new();

    let mut by_step: BTreeMap<u32, BTreeMap<ProblemId, &crate::analytics::TrajectoryRecord>> =
        BTreeMap::new();
    for r in records {
        by_step.entry(r.step).or_default().insert(r.problem_id, r);
    }
    let mut batch_match_rate = Vec::with_capacity(by_step.len());
    for rows in by_step.values() {
        let (m, k) = rows.values().fold((0u64, 0u64), |(m, k), r| {
            let total: u32 = r.vote_counts.values().sum();
            let best = r.vote_counts.values().max().copied().unwrap_or(0);
            (m + best as u64, k + total as u64)
        });
        batch_match_rate.push(m as f64 / k as f64);
    }
    let mut batch_flip = Vec::new();
    let steps: Vec<&BTreeMap<ProblemId, _>> = by_step.values().collect();
    let mut ragged = false;
    for pair in steps.windows(2) {
        let common: BTreeSet<ProblemId> = pair[0]
            .keys()
            .filter(|k| pair[1].contains_key(k))
            .copied()
            .collect();
        if common.len() != pair[0].len() || common.len() != pair[1].len() {
            ragged = true;
        }
        if common.is_empty() {
            batch_flip.push(0.0);
            continue;
        }
        let prev = common
            .iter()
            .map(|&p| (p, pair[0][&p].pseudo_label))
            .collect();
        let cur = common
            .iter()
            .map(|&p| (p, pair[1][&p].pseudo_label))
            .collect();
        batch_flip.push(batch_flip_rate(&prev, &cur)?);
    }
    if ragged {
        notices.push(
            "problem sets differ between steps; batch flip rate uses problems present at both"
                .into(),
        );
    }

    let truth_map = match truths {
        TruthSource::Known(m) => Some(m),
        TruthSource::Unknown => None,
    };
    // per-record label accuracy
    let la_of = |r: &crate::analytics::TrajectoryRecord| -> Option<f64> {
        match truth_map {
            Some(m) => m.get(&r.problem_id).map(|&t| {
                let k: u32 = r.vote_counts.values().sum();
                r.vote_counts.get(&t).copied().unwrap_or(0) as f64 / k as f64
            }),
            None => r.la,
        }
    };
    let la_available = records.iter().all(|r| la_of(r).is_some());

    let mut report = AnalyticsReport {
        n_problems: grouped.len(),
        total_steps,
        checkpoint_every,
        batch_flip_rate: batch_flip,
        batch_match_rate,
        mean_label_accuracy: None,
        categories: None,
        fates: None,
        correct_vote_curve: None,
        scissor: None,
        leading_indicator: None,
        notices,
    };

    if !la_available {
        report
            .notices
            .push("no ground truth and no label accuracy in the log: fate, correct-vote, and scissor sections omitted".into());
        return Ok(report);
    }

    report.mean_label_accuracy = Some(
        by_step
            .values()
            .map(|rows| {
                rows.values().map(|r| la_of(r).unwrap_or(0.0)).sum::<f64>() / rows.len() as f64
            })
            .collect(),
    );

    let mut categories = Vec::with_capacity(grouped.len());
    for (&pid, rs) in &grouped {
        let series: Vec<f64> = rs
            .iter()
            .filter(|r| r.step % checkpoint_every == 0)
            .map(|r| la_of(r).unwrap_or(0.0))
            .collect();
        categories.push((pid, categorize_problem(&series)?));
    }
    let fates = fate_breakdown(&categories.iter().map(|c| c.1).collect::<Vec<_>>())?;
    if fates.fallback_count > 0 {
        report.notices.push(format!(
            "{} problem(s) matched no fate row and were binned as MarginalStable",
            fates.fallback_count
        ));
    }

    match truth_map {
        Some(truths) => {
            let of = |cats: &[Category]| -> BTreeSet<ProblemId> {
                categories
                    .iter()
                    .filter(|c| cats.contains(&c.1.category))
                    .map(|c| c.0)
                    .collect()
            };
            let lost = of(&[
                Category::Degraded,
                Category::MarginalDegraded,
                Category::AlwaysWrong,
            ]);
            let degraded = of(&[Category::Degraded, Category::MarginalDegraded]);
            report.correct_vote_curve = Some(correct_vote_curve(
                &grouped,
                truths,
                &lost,
                total_steps,
                CURVE_BINS,
            ));
            report.scissor = Some(scissor_statistics(
                &grouped,
                truths,
                &degraded,
                total_steps,
                window,
                PhaseBounds::default(),
            ));
            let mut li = LeadingIndicator {
                eligible: 0,
                peak_first: 0,
            };
            for pid in &degraded {
                if let (Some(rs), Some(&t)) = (grouped.get(pid), truths.get(pid)) {
                    if let Some(first) = flip_peak_precedes_last_departure(rs, t) {
                        li.eligible += 1;
                        li.peak_first += first as usize;
                    }
                }
            }
            report.leading_indicator = Some(li);
        }
        None => report
            .notices
            .push("ground truth unknown: correct-vote and scissor sections omitted".into()),
    }
    report.categories = Some(categories);
    report.fates = Some(fates);
    Ok(report)
}

/// Parse a log and analyse it. Ground truth comes from `ground_truth`
/// when given, else from regenerating the scenario recorded in the header.
pub fn analyze_log(log_path: &Path, ground_truth: Option<&Path>) -> Result<AnalyticsReport> {
    let file = File::open(log_path).map_err(|e| Error::io(log_path, e))?;
    let log = read_log(BufReader::new(file), log_path)?;
    let truths = match (ground_truth, &log.header.config) {
        (Some(p), _) => TruthSource::Known(read_ground_truth(p)?),
        (None, Some(c)) => {
            let s = generate_scenario(
                &c.scenario,
                &mut stream(c.scenario.seed, Purpose::Scenario, 0, 0),
            )?;
            TruthSource::Known(
                s.problems
                    .iter()
                    .map(|p| (p.problem_id, p.ground_truth))
                    .collect(),
            )
        }
        (None, None) => TruthSource::Unknown,
    };
    analyze_records(&log, &truths)
}
