use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analytics::TrajectoryRecord;
use crate::config::GuardConfig;
use crate::error::{Error, Result};
use crate::guard::{build_step_plan, commit_plan};
use crate::monitor::{ProblemState, RolloutBatch};
use crate::rng::{stream, Purpose};
use crate::sim::{
    apply_surrogate_update, generate_scenario, mean_expected_pass_at_1, sample_responses,
    ScenarioSpec,
};

use super::analyze::{analyze_records, AnalyticsReport, TruthSource};
use super::log::{write_log, LogHeader, TrajectoryLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ttrl,
    Guard,
    FrsOnly,
    MpsOnly,
    RcsuOnly,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ttrl,
        Method::Guard,
        Method::FrsOnly,
        Method::MpsOnly,
        Method::RcsuOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ttrl => "ttrl",
            Method::Guard => "guard",
            Method::FrsOnly => "frs_only",
            Method::MpsOnly => "mps_only",
            Method::RcsuOnly => "rcsu_only",
        }
    }

    /// The guard configuration this method actually runs with: mechanisms
    /// outside the method are switched off by zeroing their coefficients.
    pub fn effective(self, guard: &GuardConfig) -> GuardConfig {
        let mut g = guard.clone();
        let (frs, mps, rcsu) = match self {
            Method::Ttrl => (false, false, false),
            Method::Guard => (true, true, true),
            Method::FrsOnly => (true, false, false),
            Method::MpsOnly => (false, true, false),
            Method::RcsuOnly => (false, false, true),
        };
        if !frs {
            g.lambda1 = 0.0;
            g.lambda2 = 0.0;
        }
        if !mps {
            g.beta_max = 0.0;
        }
        if !rcsu {
            g.p_skip = 0.0;
        }
        g
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected one of ttrl, guard, frs_only, mps_only, rcsu_only)")))
    }
}

/// Which mechanisms can act under a resolved configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mechanisms {
    pub frs: bool,
    pub mps: bool,
    pub rcsu: bool,
}

impl Mechanisms {
    pub fn of(guard: &GuardConfig) -> Self {
        Mechanisms {
            frs: guard.lambda1 > 0.0 || guard.lambda2 > 0.0,
            mps: guard.beta_max > 0.0,
            rcsu: guard.p_skip > 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub guard: GuardConfig,
    pub method: Method,
    pub total_steps: u32,
    pub seed: u64,
    pub log_path: Option<PathBuf>,
    pub checkpoint_every: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioSpec::default(),
            guard: GuardConfig::default(),
            method: Method::Guard,
            total_steps: 300,
            seed: 0,
            log_path: None,
            checkpoint_every: 1,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunSection {
    method: Option<Method>,
    total_steps: Option<u32>,
    seed: Option<u64>,
    log_path: Option<PathBuf>,
    checkpoint_every: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    scenario: ScenarioSpec,
    guard: GuardConfig,
    run: RunSection,
}

/// Parse a TOML config with `[scenario]`, `[guard]`, and `[run]` sections.
/// Missing keys take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
    let d = ExperimentConfig::default();
    let config = ExperimentConfig {
        scenario: file.scenario,
        guard: file.guard,
        method: file.run.method.unwrap_or(d.method),
        total_steps: file.run.total_steps.unwrap_or(d.total_steps),
        seed: file.run.seed.unwrap_or(d.seed),
        log_path: file.run.log_path,
        checkpoint_every: file.run.checkpoint_every.unwrap_or(d.checkpoint_every),
    };
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.guard.validate()?;
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved(&self) -> ResolvedConfig {
        let guard = self.method.effective(&self.guard);
        ResolvedConfig {
            scenario: self.scenario.clone(),
            mechanisms: Mechanisms::of(&guard),
            guard,
            run: RunParams {
                total_steps: self.total_steps,
                seed: self.seed,
                checkpoint_every: self.checkpoint_every,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub total_steps: u32,
    pub seed: u64,
    pub checkpoint_every: u32,
}

/// Everything that determines a trajectory. The method label is not part
/// of it: two methods resolving to the same coefficients are the same run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub scenario: ScenarioSpec,
    pub guard: GuardConfig,
    pub mechanisms: Mechanisms,
    pub run: RunParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub total_steps: u32,
    pub n_problems: usize,
    pub initial_expected_pass_at_1: f64,
    pub final_expected_pass_at_1: f64,
    /// Mean expected pass@1 at every checkpoint, as `(step, value)`.
    pub pass_at_1_curve: Vec<(u32, f64)>,
    /// Log-derived statistics; absent when the run is too short to categorise.
    pub analytics: Option<AnalyticsReport>,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: TrajectoryLog,
    pub summary: RunSummary,
    /// Per-problem expected pass@1 at the start and the end.
    pub initial_pass: Vec<f64>,
    pub final_pass: Vec<f64>,
}

/// Run the full loop without touching the filesystem.
///
/// Each step: sample `k_votes` responses per problem, update the monitor,
/// route, log, and (except after the final snapshot) apply the surrogate
/// update on the first `k_samples` responses.
pub fn run_experiment_in_memory(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let resolved = config.resolved();
    let guard = &resolved.guard;
    let seed = config.seed;

    let mut scenario = generate_scenario(
        &config.scenario,
        &mut stream(config.scenario.seed, Purpose::Scenario, 0, 0),
    )?;
    scenario.policy.learning_rate = guard.learning_rate;
    let problems = scenario.problems;
    let mut policy = scenario.policy;
    let n = problems.len();
    let initial_pass: Vec<f64> = problems
        .iter()
        .map(|p| crate::sim::expected_pass_at_1(&policy, p))
        .collect::<Result<_>>()?;

    let mut states = vec![ProblemState::new(); n];
    let mut records = Vec::with_capacity(n * (config.total_steps as usize + 1));
    let mut pass_curve = Vec::new();

    for step in 0..=config.total_steps {
        let mut votes = Vec::with_capacity(n);
        let mut updates = Vec::with_capacity(n);
        for (i, problem) in problems.iter().enumerate() {
            let mut rng = stream(seed, Purpose::Rollout, i as u64, step as u64);
            let responses = sample_responses(&policy, problem.problem_id, guard.k_votes, &mut rng)?;
            let vote = RolloutBatch::from_responses(problem.problem_id, &responses)?;
            let update = RolloutBatch::from_responses(
                problem.problem_id,
                &responses[..guard.k_samples as usize],
            )?;
            states[i].observe(&vote, guard)?;
            votes.push(vote);
            updates.push(update);
        }

        let plan = build_step_plan(
            &states,
            &votes,
            guard,
            &mut stream(seed, Purpose::Router, 0, step as u64),
        )?;

        for ((problem, (state, vote)), entry) in problems
            .iter()
            .zip(states.iter().zip(&votes))
            .zip(&plan.entries)
        {
            records.push(TrajectoryRecord {
                step,
                problem_id: problem.problem_id,
                pseudo_label: entry.pseudo_label,
                mr: state.match_rate().unwrap_or(0.0),
                fr: state.fr,
                had_comp: state.had_comp,
                weight: entry.frs.weight,
                beta: entry.beta,
                skipped: entry.skipped,
                la: Some(vote.count(problem.ground_truth) as f64 / vote.k as f64),
                vote_counts: vote.counts.clone(),
            });
        }

        if step % config.checkpoint_every == 0 || step == config.total_steps {
            pass_curve.push((step, mean_expected_pass_at_1(&policy, &problems)));
        }

        if step < config.total_steps {
            for (update, entry) in updates.iter().zip(&plan.entries) {
                apply_surrogate_update(&mut policy, update, entry, guard)?;
            }
            commit_plan(&mut states, &plan, guard)?;
        }
    }

    let final_pass: Vec<f64> = problems
        .iter()
        .map(|p| crate::sim::expected_pass_at_1(&policy, p))
        .collect::<Result<_>>()?;
    let log = TrajectoryLog {
        header: LogHeader::new(Some(resolved)),
        records,
    };
    let truths = TruthSource::Known(
        problems
            .iter()
            .map(|p| (p.problem_id, p.ground_truth))
            .collect(),
    );
    let mut notices = Vec::new();
    let analytics = match analyze_records(&log, &truths) {
        Ok(a) => Some(a),
        Err(e @ Error::InsufficientHistory { .. }) => {
            notices.push(format!("fate analysis skipped: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let summary = RunSummary {
        method: config.method,
        seed,
        total_steps: config.total_steps,
        n_problems: n,
        initial_expected_pass_at_1: mean(&initial_pass),
        final_expected_pass_at_1: mean(&final_pass),
        pass_at_1_curve: pass_curve,
        analytics,
        notices,
    };
    Ok(RunOutput {
        log,
        summary,
        initial_pass,
        final_pass,
    })
}

/// Run and, if `log_path` is set, write the JSONL log there. The log file
/// is created before the run starts, so an unwritable path fails fast.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let writer = match &config.log_path {
        Some(path) => Some((
            path,
            BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?),
        )),
        None => None,
    };
    let out = run_experiment_in_memory(config)?;
    if let Some((path, mut w)) = writer {
        write_log(&mut w, &out.log).map_err(|e| Error::io(path, e))?;
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Same configuration with both the sampling and the scenario seed set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.scenario.seed = seed;
        c
    }
}

/// Run independent configurations, in parallel where threads exist.
/// Results come back in input order and do not depend on scheduling.
pub fn run_many(configs: &[ExperimentConfig]) -> Result<Vec<RunSummary>> {
    Ok(run_many_outputs(configs)?
        .into_iter()
        .map(|o| o.summary)
        .collect())
}

pub fn run_many_outputs(configs: &[ExperimentConfig]) -> Result<Vec<RunOutput>> {
    #[cfg(not(target_arch = "wasm32"))]
    {
        let threads = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(configs.len().max(1));
        let mut slots: Vec<Option<Result<RunOutput>>> = (0..configs.len()).map(|_| None).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        let done = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= configs.len() {
                        break;
                    }
                    let r = run_experiment_in_memory(&configs[i]);
                    done.lock().expect("no panics while holding the lock")[i] = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every slot filled"))
            .collect()
    }
    #[cfg(target_arch = "wasm32")]
    {
        configs.iter().map(run_experiment_in_memory).collect()
    }
}
