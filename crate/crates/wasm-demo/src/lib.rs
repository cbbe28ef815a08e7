//! Browser bindings. Every exported function takes plain numbers and
//! returns a JSON string; errors come back as `{"error": "..."}`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ttrl_guard::analytics::categorize_pair;
use ttrl_guard::guard::frs_weight;
use ttrl_guard::harness::{run_experiment_in_memory, ExperimentConfig, Method, RunOutput};
use ttrl_guard::monitor::{AnswerId, ProblemState};
use ttrl_guard::{Error, GuardConfig};

const MAX_PROBLEMS: u32 = 200;
const MAX_STEPS: u32 = 300;

fn json<T: Serialize>(r: Result<T, Error>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).expect("demo types serialise"),
        Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
    }
}

#[derive(Serialize)]
pub struct Surface {
    pub fr: Vec<f64>,
    pub mr: Vec<f64>,
    /// `weight[i][j]` at `fr[i]`, `mr[j]`.
    pub weight: Vec<Vec<f64>>,
    pub c1: Vec<Vec<bool>>,
}

/// Reward weight over an `n × n` grid of flip rate and match rate.
/// `had_comp` picks whether the problem was ever contested; an uncontested
/// problem is given a long, confident history so the calm-lock penalty can fire.
pub fn weight_surface(
    n: u32,
    lambda1: f64,
    lambda2: f64,
    had_comp: bool,
) -> Result<Surface, Error> {
    let c = GuardConfig {
        lambda1,
        lambda2,
        ..GuardConfig::default()
    };
    c.validate()?;
    let n = n.clamp(2, 101) as usize;
    let axis: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let mut weight = Vec::with_capacity(n);
    let mut c1 = Vec::with_capacity(n);
    for &fr in &axis {
        let (mut wr, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for &mr in &axis {
            let state = ProblemState {
                pseudo_history: vec![AnswerId(0); c.window_len()],
                mr_history: vec![mr; c.window_len()],
                fr,
                had_comp,
                mr_bar: mr,
                ..ProblemState::new()
            };
            let w = frs_weight(&state, mr, &c);
            wr.push(w.weight);
            cr.push(w.c1);
        }
        weight.push(wr);
        c1.push(cr);
    }
    Ok(Surface {
        fr: axis.clone(),
        mr: axis,
        weight,
        c1,
    })
}

#[derive(Serialize)]
pub struct Trace {
    pub method: String,
    pub pass_at_1: Vec<(u32, f64)>,
    pub batch_flip_rate: Vec<f64>,
    pub batch_match_rate: Vec<f64>,
    pub skipped_per_step: Vec<usize>,
    pub fates: Option<ttrl_guard::analytics::FateBreakdown>,
}

fn trace(out: RunOutput, steps: u32) -> Trace {
    let mut skipped = vec![0usize; steps as usize + 1];
    for r in &out.log.records {
        skipped[r.step as usize] += r.skipped as usize;
    }
    let a = out.summary.analytics;
    Trace {
        method: out.summary.method.to_string(),
        pass_at_1: out.summary.pass_at_1_curve,
        batch_flip_rate: a
            .as_ref()
            .map(|a| a.batch_flip_rate.clone())
            .unwrap_or_default(),
        batch_match_rate: a
            .as_ref()
            .map(|a| a.batch_match_rate.clone())
            .unwrap_or_default(),
        skipped_per_step: skipped,
        fates: a.and_then(|a| a.fates),
    }
}

/// Plain TTRL and the full guard on the same scenario and seed.
pub fn compare_methods(seed: u64, n_problems: u32, steps: u32) -> Result<Vec<Trace>, Error> {
    if n_problems == 0 || n_problems > MAX_PROBLEMS || steps > MAX_STEPS {
        return Err(Error::Config(format!(
            "demo limits: 1..={MAX_PROBLEMS} problems, at most {MAX_STEPS} steps"
        )));
    }
    let mut base = ExperimentConfig::default().with_seed(seed);
    base.scenario.n_problems = n_problems;
    base.total_steps = steps;
    [Method::Ttrl, Method::Guard]
        .into_iter()
        .map(|m| {
            let mut c = base.clone();
            c.method = m;
            run_experiment_in_memory(&c).map(|o| trace(o, steps))
        })
        .collect()
}

#[derive(Serialize)]
pub struct Fate {
    pub category: &'static str,
    pub fallback: bool,
}

pub fn classify(ila: f64, fla: f64) -> Result<Fate, Error> {
    if !(0.0..=1.0).contains(&ila) || !(0.0..=1.0).contains(&fla) {
        return Err(Error::Contract("ILA and FLA must lie in [0, 1]".into()));
    }
    let c = categorize_pair(ila, fla);
    Ok(Fate {
        category: c.category.name(),
        fallback: c.fallback,
    })
}

#[wasm_bindgen(js_name = weightSurface)]
pub fn weight_surface_js(n: u32, lambda1: f64, lambda2: f64, had_comp: bool) -> String {
    json(weight_surface(n, lambda1, lambda2, had_comp))
}

#[wasm_bindgen(js_name = compareMethods)]
pub fn compare_methods_js(seed: u32, n_problems: u32, steps: u32) -> String {
    json(compare_methods(seed as u64, n_problems, steps))
}

#[wasm_bindgen(js_name = classifyFate)]
pub fn classify_js(ila: f64, fla: f64) -> String {
    json(classify(ila, fla))
}
