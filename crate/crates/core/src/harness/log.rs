//! JSON Lines trajectory logs: a header object, then one record per
//! `(step, problem)`.

use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytics::TrajectoryRecord;
use crate::error::{Error, Result};

use super::experiment::ResolvedConfig;

pub const LOG_SCHEMA: &str = "ttrl-guard/trajectory";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub schema: String,
    pub version: u32,
    /// Absent for logs produced outside the simulator.
    #[serde(default)]
    pub config: Option<ResolvedConfig>,
}

impl LogHeader {
    pub fn new(config: Option<ResolvedConfig>) -> Self {
        LogHeader {
            schema: LOG_SCHEMA.to_string(),
            version: LOG_VERSION,
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub records: Vec<TrajectoryRecord>,
}

pub fn write_log<W: Write>(w: &mut W, log: &TrajectoryLog) -> io::Result<()> {
    serde_json::to_writer(&mut *w, &log.header)?;
    w.write_all(b"\n")?;
    for r in &log.records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn check_record(r: &TrajectoryRecord) -> std::result::Result<(), String> {
    let fractions = [
        ("mr", Some(r.mr)),
        ("fr", Some(r.fr)),
        ("weight", Some(r.weight)),
        ("beta", Some(r.beta)),
        ("la", r.la),
    ];
    for (name, v) in fractions {
        if let Some(v) = v {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name}={v} outside [0, 1]"));
            }
        }
    }
    if r.vote_counts.values().all(|&c| c == 0) {
        return Err("vote_counts is empty".into());
    }
    Ok(())
}

/// Parse a log from a reader. `path` is only used in error messages.
pub fn read_log<R: BufRead>(reader: R, path: &Path) -> Result<TrajectoryLog> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = reader.lines().enumerate();
    let header: LogHeader = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| parse_err(1, format!("bad header: {e}")))?
        }
        None => return Err(parse_err(1, "empty log".into())),
    };
    if header.schema != LOG_SCHEMA || header.version != LOG_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported schema {} v{}", header.schema, header.version),
        ));
    }
    let mut records = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in lines {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(n, e.to_string()))?;
        check_record(&r).map_err(|m| parse_err(n, m))?;
        if !seen.insert((r.step, r.problem_id)) {
            return Err(parse_err(
                n,
                format!(
                    "duplicate record for step {} problem {}",
                    r.step, r.problem_id
                ),
            ));
        }
        records.push(r);
    }
    Ok(TrajectoryLog { header, records })
}
