//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ttrl_guard::analytics::{categorize_problem, Category};
use ttrl_guard::guard::{build_step_plan, commit_plan, frs_weight, minority_set, skip_cap};
use ttrl_guard::harness::*;
use ttrl_guard::monitor::{majority_vote, AnswerId, ProblemId, ProblemState, RolloutBatch};
use ttrl_guard::GuardConfig;

const SEEDS: u64 = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let t = Instant::now();
    let mut o = f();
    let took = t.elapsed();
    if let Some(limit) = limit {
        if took >= limit {
            o.pass = false;
            o.detail.push_str(&format!("; over time limit {limit:?}"));
        }
    }
    (o, took)
}

// Criterion 1 and 2 share the grid.
fn frs_grid() -> Vec<(f64, f64, bool, bool)> {
    let mut out = Vec::new();
    for i in 0..10 {
        for j in 0..10 {
            for had_comp in [false, true] {
                for eligible in [false, true] {
                    out.push((i as f64 / 9.0, j as f64 / 9.0, had_comp, eligible));
                }
            }
        }
    }
    out
}

/// A state with the given flip rate, latch, and C2 eligibility
/// (full history, confident running mean, trigger count below the cap).
fn grid_state(fr: f64, mr: f64, had_comp: bool, eligible: bool, c: &GuardConfig) -> ProblemState {
    let w = c.window_len();
    let len = if eligible { w } else { w - 1 };
    let mr_bar = if eligible {
        mr.max(c.tau_mr + 0.05)
    } else {
        mr
    };
    ProblemState {
        pseudo_history: vec![AnswerId(0); len],
        mr_history: vec![mr_bar; len],
        fr,
        had_comp,
        mr_bar,
        steady_below_count: 0,
        mps_deactivated: false,
        delta_trigger_count: if eligible { c.window - 1 } else { c.window },
    }
}

/// Reward-weight formula written out independently of the library.
fn frs_oracle(fr: f64, mr: f64, s: &ProblemState, c: &GuardConfig) -> (f64, bool, bool) {
    let hc = s.had_comp || fr > c.tau_fr;
    let c1 = mr > c.tau_mr && fr > c.tau_fr;
    let c2 = !hc
        && s.pseudo_history.len() >= c.window as usize
        && s.mr_bar > c.tau_mr
        && s.delta_trigger_count < c.window;
    let alpha = 1.0 - c.lambda1 * fr;
    let gamma = if c1 { 1.0 - c.lambda2 } else { 1.0 };
    let delta = if c2 { 1.0 - c.lambda2 / 2.0 } else { 1.0 };
    let raw = alpha * gamma * delta;
    (if raw < c.w_min { c.w_min } else { raw }, c1, c2)
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    let mut clipped = 0;
    let mut mismatched = 0;
    let mut cases = 0;
    let clip = GuardConfig {
        lambda1: 0.95,
        ..GuardConfig::default()
    };
    for c in [GuardConfig::default(), clip] {
        for (fr, mr, hc, el) in frs_grid() {
            let s = grid_state(fr, mr, hc, el, &c);
            let got = frs_weight(&s, mr, &c);
            let (want, c1, c2) = frs_oracle(fr, mr, &s, &c);
            worst = worst.max((got.weight - want).abs());
            if got.c1 != c1 || got.c2 != c2 {
                mismatched += 1;
            }
            if want == c.w_min && got.alpha * got.gamma * got.delta < c.w_min {
                clipped += 1;
            }
            cases += 1;
        }
    }
    Outcome {
        pass: worst <= 1e-12 && mismatched == 0 && clipped > 0,
        detail: format!("{cases} cases, max |err| {worst:.1e}, trigger mismatches {mismatched}, clipped cases {clipped}"),
    }
}

fn criterion_2() -> Outcome {
    let c = GuardConfig::default();
    let mut both = 0;
    let (mut n1, mut n2) = (0, 0);
    for (fr, mr, hc, el) in frs_grid() {
        let w = frs_weight(&grid_state(fr, mr, hc, el, &c), mr, &c);
        both += (w.c1 && w.c2) as usize;
        n1 += w.c1 as usize;
        n2 += w.c2 as usize;
    }
    Outcome {
        pass: both == 0 && n1 > 0 && n2 > 0,
        detail: format!("C1∧C2 states {both} (C1 {n1}, C2 {n2})"),
    }
}

/// Fate rows on a lattice in twentieths, in exact integer arithmetic.
fn table_oracle(i: i32, j: i32) -> Option<Category> {
    let mid = (3..14).contains(&i);
    if i >= 14 && j >= 12 {
        Some(Category::StableAlwaysRight)
    } else if i >= 10 && j < i - 4 {
        Some(Category::Degraded)
    } else if i < 3 && j >= 10 {
        Some(Category::Learned)
    } else if mid && j < i - 3 {
        Some(Category::MarginalDegraded)
    } else if mid && j >= i - 3 {
        Some(Category::MarginalStable)
    } else if i < 3 && j < 10 {
        Some(Category::AlwaysWrong)
    } else {
        None
    }
}

fn criterion_3() -> Outcome {
    let mut disagree = Vec::new();
    let mut fallbacks = 0;
    for i in 0..=20 {
        for j in 0..=20 {
            let (ila, fla) = (i as f64 * 0.05, j as f64 * 0.05);
            let mut series = vec![ila; 3];
            series.extend([fla; 5]);
            let got = categorize_problem(&series).expect("eight checkpoints");
            let ok = match table_oracle(i, j) {
                Some(cat) => got.category == cat && !got.fallback,
                None => {
                    fallbacks += 1;
                    got.category == Category::MarginalStable && got.fallback
                }
            };
            if !ok {
                disagree.push(format!("({ila:.2},{fla:.2})"));
            }
        }
    }
    let examples = [
        (0.8, 0.7, Category::StableAlwaysRight),
        (0.6, 0.3, Category::Degraded),
        (0.1, 0.6, Category::Learned),
        (0.5, 0.3, Category::MarginalDegraded),
    ];
    for (ila, fla, want) in examples {
        let mut series = vec![ila; 3];
        series.extend([fla; 5]);
        if categorize_problem(&series).unwrap().category != want {
            disagree.push(format!("example ({ila},{fla})"));
        }
    }
    let flagged = categorize_problem(&[0.75, 0.75, 0.75, 0.58, 0.58, 0.58, 0.58, 0.58])
        .unwrap()
        .fallback;
    Outcome {
        pass: disagree.is_empty() && fallbacks > 0 && flagged,
        detail: format!(
            "441 lattice pairs, {} disagreements, {fallbacks} fallback pairs flagged",
            disagree.len()
        ),
    }
}

fn compositions(k: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut impl FnMut(&[u32])) {
    if prefix.len() == parts - 1 {
        prefix.push(k);
        out(prefix);
        prefix.pop();
        return;
    }
    for c in 0..=k {
        prefix.push(c);
        compositions(k - c, parts, prefix, out);
        prefix.pop();
    }
}

fn criterion_4() -> Outcome {
    let c = GuardConfig::default();
    let mut checked = 0usize;
    let mut bad = 0usize;
    for k in 1..=12u32 {
        compositions(k, 4, &mut Vec::new(), &mut |v| {
            let counts: BTreeMap<AnswerId, u32> = v
                .iter()
                .enumerate()
                .filter(|x| *x.1 > 0)
                .map(|(a, &n)| (AnswerId(a as u32), n))
                .collect();
            let batch = RolloutBatch::new(ProblemId(0), counts.clone(), k).unwrap();
            let (label, _) = majority_vote(&batch).unwrap();
            let got = minority_set(&batch, label, &c).unwrap();
            for (&a, &n) in &counts {
                let want = a != label && n >= k / 4;
                if got.contains(&a) != want {
                    bad += 1;
                }
            }
            if got.iter().any(|a| !counts.contains_key(a)) {
                bad += 1;
            }
            checked += 1;
        });
    }
    Outcome {
        pass: bad == 0,
        detail: format!("{checked} count vectors, {bad} membership errors"),
    }
}

fn log_bytes(log: &TrajectoryLog) -> Vec<u8> {
    let mut v = Vec::new();
    write_log(&mut v, log).unwrap();
    v
}

fn full(method: Method, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default().with_seed(seed);
    c.method = method;
    c
}

fn criterion_5() -> Outcome {
    let mut zero = full(Method::Guard, 7);
    zero.guard.lambda1 = 0.0;
    zero.guard.lambda2 = 0.0;
    zero.guard.beta_max = 0.0;
    zero.guard.p_skip = 0.0;
    let out = run_many_outputs(&[full(Method::Ttrl, 7), zero]).unwrap();
    let (a, b) = (log_bytes(&out[0].log), log_bytes(&out[1].log));
    Outcome {
        pass: a == b,
        detail: format!("{} vs {} bytes, identical: {}", a.len(), b.len(), a == b),
    }
}

fn fates(s: &RunSummary) -> ttrl_guard::analytics::FateBreakdown {
    s.analytics
        .as_ref()
        .and_then(|a| a.fates.clone())
        .expect("300-step runs are categorised")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn criterion_6(ttrl: &[RunSummary]) -> Outcome {
    let mut wins = 0;
    let mut ratios = Vec::new();
    for s in ttrl {
        let f = fates(s);
        wins += (f.total_degraded > f.learned) as usize;
        // Learned = 0 with some degradation is an unbounded ratio.
        ratios.push(if f.learned > 0.0 {
            f.total_degraded / f.learned
        } else if f.total_degraded > 0.0 {
            f64::INFINITY
        } else {
            0.0
        });
    }
    let m = median(ratios);
    let mean = |g: fn(&ttrl_guard::analytics::FateBreakdown) -> f64| {
        ttrl.iter().map(|s| g(&fates(s))).sum::<f64>() / ttrl.len() as f64
    };
    Outcome {
        pass: wins >= 18 && m >= 5.0,
        detail: format!(
            "TotalDeg > Learned in {wins}/{SEEDS} seeds, median ratio {m}, mean TotalDeg {:.3}, mean Learned {:.3}",
            mean(|f| f.total_degraded),
            mean(|f| f.learned)
        ),
    }
}

fn criterion_7(ttrl: &[RunSummary], guard: &[RunSummary]) -> Outcome {
    let reductions: Vec<f64> = ttrl
        .iter()
        .zip(guard)
        .map(|(t, g)| {
            let (t, g) = (fates(t).total_degraded, fates(g).total_degraded);
            if t > 0.0 {
                1.0 - g / t
            } else {
                0.0
            }
        })
        .collect();
    let worst = reductions.iter().cloned().fold(f64::INFINITY, f64::min);
    let m = median(reductions);
    Outcome {
        pass: m >= 0.30,
        detail: format!(
            "median relative reduction {:.1}% (worst seed {:.1}%)",
            100.0 * m,
            100.0 * worst
        ),
    }
}

fn criterion_8(ttrl: &[RunSummary]) -> Outcome {
    let (mut eligible, mut first, mut degraded) = (0, 0, 0);
    for s in ttrl {
        let a = s.analytics.as_ref().unwrap();
        let li = a.leading_indicator.as_ref().unwrap();
        eligible += li.eligible;
        first += li.peak_first;
        let f = fates(s);
        degraded += ((f.degraded + f.marginal_degraded) * f.n as f64).round() as usize;
    }
    let frac = first as f64 / eligible.max(1) as f64;
    Outcome {
        pass: eligible > 0 && frac >= 0.70,
        detail: format!(
            "peak FR first in {first}/{eligible} = {:.1}% ({degraded} degraded problems, {} never held the truth)",
            100.0 * frac,
            degraded - eligible
        ),
    }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut plans = 0usize;
    let mut cap_violations = 0usize;
    let mut reverts = 0usize;
    let mut max_seen = 0usize;
    while plans < 10_000 {
        let c = GuardConfig {
            p_skip: rng.random_range(0.5..=1.0),
            theta_mr: rng.random_range(0.0..0.9),
            ..GuardConfig::default()
        };
        let n = rng.random_range(1..=40usize);
        let support = rng.random_range(2..=4u32);
        let k = c.k_votes;
        let mut states = vec![ProblemState::new(); n];
        for step in 0..25 {
            let batches: Vec<RolloutBatch> = (0..n)
                .map(|i| {
                    // Skewed draws make labels flip often and re-lock.
                    let lead = rng.random_range(0..support);
                    let bias = rng.random_range(0.3..1.0);
                    let answers: Vec<AnswerId> = (0..k)
                        .map(|_| {
                            if rng.random::<f64>() < bias {
                                AnswerId(lead)
                            } else {
                                AnswerId(rng.random_range(0..support))
                            }
                        })
                        .collect();
                    RolloutBatch::from_responses(ProblemId(i as u32), &answers).unwrap()
                })
                .collect();
            let before: Vec<(bool, bool)> = states
                .iter()
                .map(|s| (s.had_comp, s.mps_deactivated))
                .collect();
            for (s, b) in states.iter_mut().zip(&batches) {
                s.observe(b, &c).unwrap();
            }
            let plan = build_step_plan(&states, &batches, &c, &mut rng).unwrap();
            commit_plan(&mut states, &plan, &c).unwrap();
            let skips = plan.skipped_count();
            max_seen = max_seen.max(skips);
            if skips > n / 4 || skips > skip_cap(n, &c) {
                cap_violations += 1;
            }
            for (s, (hc, md)) in states.iter().zip(before) {
                if (hc && !s.had_comp) || (md && !s.mps_deactivated) {
                    reverts += 1;
                }
            }
            plans += 1;
            if plans == 10_000 || step == 24 {
                break;
            }
        }
    }
    Outcome {
        pass: cap_violations == 0 && reverts == 0 && max_seen > 0,
        detail: format!("{plans} plans, cap violations {cap_violations}, latch reverts {reverts}, most skips in a plan {max_seen}"),
    }
}

fn criterion_10(ttrl: &[RunOutput], guard: &[RunOutput]) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut same = true;
    let mut checked = 0;
    let seeds = [0u64, 1, 2];
    let mut configs = Vec::new();
    for &s in &seeds {
        configs.push(full(Method::Ttrl, s));
        configs.push(full(Method::Guard, s));
    }
    let again = run_many_outputs(&configs).unwrap();
    for (i, &s) in seeds.iter().enumerate() {
        for (first, second) in [
            (&ttrl[s as usize], &again[2 * i]),
            (&guard[s as usize], &again[2 * i + 1]),
        ] {
            same &= log_bytes(&first.log) == log_bytes(&second.log);
            same &= serde_json::to_string(&first.summary).unwrap()
                == serde_json::to_string(&second.summary).unwrap();
            checked += 1;
        }
    }
    let firsts: Vec<RunSummary> = ttrl
        .iter()
        .chain(guard)
        .map(|o| o.summary.clone())
        .collect();
    let seconds: Vec<RunSummary> = again.iter().map(|o| o.summary.clone()).collect();
    let firsts_sub: Vec<RunSummary> = firsts
        .iter()
        .filter(|s| seeds.contains(&s.seed))
        .cloned()
        .collect();
    same &= render_report(&firsts_sub).unwrap() == render_report(&seconds).unwrap();

    // Through the filesystem, including the standalone analysis.
    let mut files = Vec::new();
    for tag in ["a", "b"] {
        let mut c = full(Method::Guard, 4);
        c.log_path = Some(dir.path().join(format!("{tag}.jsonl")));
        run_experiment(&c).unwrap();
        let path = c.log_path.unwrap();
        let analysis = serde_json::to_string(&analyze_log(&path, None).unwrap()).unwrap();
        files.push((std::fs::read(&path).unwrap(), analysis));
    }
    same &= files[0] == files[1];
    Outcome {
        pass: same,
        detail: format!("{checked} reruns plus a file round trip, byte-identical: {same}"),
    }
}

fn extinction_window(ttrl: &[RunSummary]) -> Outcome {
    let (mut early, mut late) = ((0, 0), (0, 0));
    for s in ttrl {
        let sc = s.analytics.as_ref().unwrap().scissor.as_ref().unwrap();
        if let Some(e) = &sc.early {
            early = (early.0 + e.correct_majority_steps, early.1 + e.steps);
        }
        if let Some(l) = &sc.late {
            late = (late.0 + l.correct_majority_steps, late.1 + l.steps);
        }
    }
    let rate = |x: (usize, usize)| x.0 as f64 / x.1.max(1) as f64;
    Outcome {
        pass: early.1 > 0 && rate(early) > rate(late),
        detail: format!(
            "correct-vote rate on degraded problems: first third {:.3}, final third {:.3}",
            rate(early),
            rate(late)
        ),
    }
}

fn main() {
    let mut results: Vec<(String, Outcome, Duration)> = Vec::new();
    let mut record = |name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let (o, d) = timed(limit, f);
        println!(
            "{} {name}: {} [{:.2?}]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            d
        );
        results.push((name.to_string(), o, d));
    };

    record(
        "criterion 1 (reward-weight oracle)",
        Some(Duration::from_secs(1)),
        &mut criterion_1,
    );
    record(
        "criterion 2 (trigger exclusivity)",
        Some(Duration::from_secs(1)),
        &mut criterion_2,
    );
    record(
        "criterion 3 (fate table oracle)",
        Some(Duration::from_secs(1)),
        &mut criterion_3,
    );
    record(
        "criterion 4 (minority-set brute force)",
        Some(Duration::from_secs(5)),
        &mut criterion_4,
    );
    record("criterion 5 (ttrl degeneracy)", None, &mut criterion_5);

    let t = Instant::now();
    let ttrl = run_many_outputs(
        &(0..SEEDS)
            .map(|s| full(Method::Ttrl, s))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let ttrl_time = t.elapsed();
    let t = Instant::now();
    let guard = run_many_outputs(
        &(0..SEEDS)
            .map(|s| full(Method::Guard, s))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let guard_time = t.elapsed();
    let ts: Vec<RunSummary> = ttrl.iter().map(|o| o.summary.clone()).collect();
    let gs: Vec<RunSummary> = guard.iter().map(|o| o.summary.clone()).collect();

    let mut with_runs = |name: &str, limit: Duration, runs: Duration, f: &dyn Fn() -> Outcome| {
        let (mut o, d) = timed(None, f);
        let total = d + runs;
        if total >= limit {
            o.pass = false;
            o.detail.push_str(&format!("; over time limit {limit:?}"));
        }
        println!(
            "{} {name}: {} [{:.2?}]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            total
        );
        results.push((name.to_string(), o, total));
    };
    with_runs(
        "criterion 6 (asymmetric degradation)",
        Duration::from_secs(120),
        ttrl_time,
        &|| criterion_6(&ts),
    );
    with_runs(
        "criterion 7 (guard reduces degradation)",
        Duration::from_secs(240),
        ttrl_time + guard_time,
        &|| criterion_7(&ts, &gs),
    );
    with_runs(
        "criterion 8 (leading indicator)",
        Duration::from_secs(120),
        ttrl_time,
        &|| criterion_8(&ts),
    );

    let mut record = |name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let (o, d) = timed(limit, f);
        println!(
            "{} {name}: {} [{:.2?}]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            d
        );
        results.push((name.to_string(), o, d));
    };
    record("criterion 9 (skip cap and latches)", None, &mut criterion_9);
    record("criterion 10 (determinism)", None, &mut || {
        criterion_10(&ttrl, &guard)
    });
    record("supplementary (extinction window)", None, &mut || {
        extinction_window(&ts)
    });

    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.1.pass)
        .map(|r| r.0.as_str())
        .collect();
    println!(
        "acceptance: {}/{} passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
