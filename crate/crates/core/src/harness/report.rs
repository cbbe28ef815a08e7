//! Method-comparison tables: one row per run, sorted by method then seed,
//! plus a mean row per method that has several seeds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analytics::FateBreakdown;
use crate::error::{Error, Result};

use super::experiment::RunSummary;
use super::sweep::fmt_opt;

pub const REPORT_COLUMNS: [&str; 11] = [
    "method",
    "seed",
    "pass@1",
    "Degraded",
    "Marg.Deg.",
    "TotalDeg",
    "Learned",
    "StableAR",
    "Marg.Stable",
    "AlwaysWrong",
    "L/D",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedReport {
    pub csv: String,
    pub text: String,
}

struct Row {
    method: String,
    seed: String,
    pass: f64,
    fates: Option<FateBreakdown>,
}

fn mean_fates(fs: &[&FateBreakdown]) -> FateBreakdown {
    let n = fs.len() as f64;
    let avg = |f: fn(&FateBreakdown) -> f64| fs.iter().map(|x| f(x)).sum::<f64>() / n;
    let degraded = avg(|f| f.degraded);
    let learned = avg(|f| f.learned);
    let marginal_degraded = avg(|f| f.marginal_degraded);
    FateBreakdown {
        n: fs.iter().map(|f| f.n).sum(),
        stable_always_right: avg(|f| f.stable_always_right),
        degraded,
        learned,
        marginal_degraded,
        marginal_stable: avg(|f| f.marginal_stable),
        always_wrong: avg(|f| f.always_wrong),
        total_degraded: degraded + marginal_degraded,
        ld_ratio: (degraded > 0.0).then(|| learned / degraded),
        fallback_count: fs.iter().map(|f| f.fallback_count).sum(),
    }
}

pub fn render_report(summaries: &[RunSummary]) -> Result<RenderedReport> {
    if summaries.is_empty() {
        return Err(Error::Report("no summaries to render".into()));
    }
    let has_fates = |s: &RunSummary| s.analytics.as_ref().is_some_and(|a| a.fates.is_some());
    let with = summaries.iter().filter(|s| has_fates(s)).count();
    if with != 0 && with != summaries.len() {
        let offenders: Vec<String> = summaries
            .iter()
            .filter(|s| !has_fates(s))
            .map(|s| format!("{}/seed={}", s.method, s.seed))
            .collect();
        return Err(Error::Report(format!(
            "inconsistent columns: fate breakdown missing for {}",
            offenders.join(", ")
        )));
    }

    let mut grouped: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries {
        grouped.entry(s.method.name()).or_default().push(s);
    }
    let mut rows = Vec::new();
    for (method, mut runs) in grouped {
        runs.sort_by_key(|s| s.seed);
        for s in &runs {
            rows.push(Row {
                method: method.to_string(),
                seed: s.seed.to_string(),
                pass: s.final_expected_pass_at_1,
                fates: s.analytics.as_ref().and_then(|a| a.fates.clone()),
            });
        }
        if runs.len() > 1 {
            let fates: Option<Vec<&FateBreakdown>> = runs
                .iter()
                .map(|s| s.analytics.as_ref().and_then(|a| a.fates.as_ref()))
                .collect();
            rows.push(Row {
                method: method.to_string(),
                seed: "mean".into(),
                pass: runs.iter().map(|s| s.final_expected_pass_at_1).sum::<f64>()
                    / runs.len() as f64,
                fates: fates.map(|f| mean_fates(&f)),
            });
        }
    }

    let cells = |r: &Row, pct: bool| -> Vec<String> {
        let f = |v: f64| {
            if pct {
                format!("{:.1}%", 100.0 * v)
            } else {
                format!("{v:.6}")
            }
        };
        let mut c = vec![r.method.clone(), r.seed.clone(), f(r.pass)];
        match &r.fates {
            Some(x) => {
                for v in [
                    x.degraded,
                    x.marginal_degraded,
                    x.total_degraded,
                    x.learned,
                    x.stable_always_right,
                    x.marginal_stable,
                    x.always_wrong,
                ] {
                    c.push(f(v));
                }
                c.push(if pct {
                    x.ld_ratio
                        .map(|v| format!("{v:.3}"))
                        .unwrap_or_else(|| "undefined".into())
                } else {
                    fmt_opt(x.ld_ratio)
                });
            }
            None => c.extend(std::iter::repeat_n("-".to_string(), 8)),
        }
        c
    };

    let mut csv = REPORT_COLUMNS.join(",");
    csv.push('\n');
    for r in &rows {
        csv.push_str(&cells(r, false).join(","));
        csv.push('\n');
    }

    let table: Vec<Vec<String>> =
        std::iter::once(REPORT_COLUMNS.iter().map(|s| s.to_string()).collect())
            .chain(rows.iter().map(|r| cells(r, true)))
            .collect();
    let widths: Vec<usize> = (0..REPORT_COLUMNS.len())
        .map(|j| table.iter().map(|row| row[j].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (c, &w))| {
                if j < 2 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
        if i == 0 {
            text.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            text.push('\n');
        }
    }
    Ok(RenderedReport { csv, text })
}
