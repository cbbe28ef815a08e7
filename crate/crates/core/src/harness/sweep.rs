use serde::{Deserialize, Serialize};

use crate::config::GUARD_KEYS;
use crate::error::{Error, Result};

use super::experiment::{run_many, ExperimentConfig, RunSummary};

/// Ordered `(GuardConfig field, values)` axes. Cells are their product.
pub type SweepGrid = Vec<(String, Vec<f64>)>;

/// Parse `key=v1,v2,...`.
pub fn parse_grid_arg(arg: &str) -> Result<(String, Vec<f64>)> {
    let (key, values) = arg.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "grid axis `{arg}` is not of the form key=v1,v2,..."
        ))
    })?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("grid axis `{key}`: `{v}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::Config(format!("grid axis `{key}` has no values")));
    }
    Ok((key.trim().to_string(), values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub cell: usize,
    pub params: Vec<(String, f64)>,
    pub seeds: Vec<u64>,
    pub pass_at_1: Vec<f64>,
    pub mean_pass_at_1: f64,
    pub mean_total_degraded: Option<f64>,
    /// Mean Learned over mean Degraded across seeds.
    pub ld_ratio: Option<f64>,
}

fn cells(grid: &SweepGrid) -> Vec<Vec<(String, f64)>> {
    let mut out = vec![Vec::new()];
    for (key, values) in grid {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push((key.clone(), v));
                    p
                })
            })
            .collect();
    }
    out
}

/// One run per cell and seed. Every key is checked, and every cell's
/// configuration validated, before the first run starts.
pub fn sweep(base: &ExperimentConfig, grid: &SweepGrid, seeds: &[u64]) -> Result<Vec<SweepCell>> {
    for (key, _) in grid {
        if !GUARD_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown sweep parameter `{key}`")));
        }
    }
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut planned = Vec::new();
    for params in cells(grid) {
        let mut cfg = base.clone();
        cfg.log_path = None;
        for (k, v) in &params {
            cfg.guard.set(k, *v)?;
        }
        cfg.validate()?;
        planned.push((params, cfg));
    }

    let mut out = Vec::with_capacity(planned.len());
    for (cell, (params, cfg)) in planned.into_iter().enumerate() {
        let configs: Vec<ExperimentConfig> = seeds.iter().map(|&s| cfg.with_seed(s)).collect();
        let summaries: Vec<RunSummary> = run_many(&configs)?;
        let n = summaries.len() as f64;
        let pass: Vec<f64> = summaries
            .iter()
            .map(|s| s.final_expected_pass_at_1)
            .collect();
        let fates: Option<Vec<_>> = summaries
            .iter()
            .map(|s| s.analytics.as_ref().and_then(|a| a.fates.clone()))
            .collect();
        let (mean_total_degraded, ld_ratio) = match fates {
            Some(f) => {
                let td = f.iter().map(|x| x.total_degraded).sum::<f64>() / n;
                let learned = f.iter().map(|x| x.learned).sum::<f64>() / n;
                let degraded = f.iter().map(|x| x.degraded).sum::<f64>() / n;
                (Some(td), (degraded > 0.0).then(|| learned / degraded))
            }
            None => (None, None),
        };
        out.push(SweepCell {
            cell,
            params,
            seeds: seeds.to_vec(),
            mean_pass_at_1: pass.iter().sum::<f64>() / n,
            pass_at_1: pass,
            mean_total_degraded,
            ld_ratio,
        });
    }
    Ok(out)
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}"))
        .unwrap_or_else(|| "undefined".into())
}

impl SweepCell {
    pub fn to_csv(cells: &[SweepCell]) -> String {
        let keys: Vec<&str> = cells
            .first()
            .map(|c| c.params.iter().map(|p| p.0.as_str()).collect())
            .unwrap_or_default();
        let mut s = String::from("cell");
        for k in &keys {
            s.push(',');
            s.push_str(k);
        }
        s.push_str(",mean_pass_at_1,ld_ratio,mean_total_degraded,seeds\n");
        for c in cells {
            s.push_str(&c.cell.to_string());
            for (_, v) in &c.params {
                s.push_str(&format!(",{v}"));
            }
            s.push_str(&format!(
                ",{:.6},{},{},{}\n",
                c.mean_pass_at_1,
                fmt_opt(c.ld_ratio),
                fmt_opt(c.mean_total_degraded),
                c.seeds.len()
            ));
        }
        s
    }
}
