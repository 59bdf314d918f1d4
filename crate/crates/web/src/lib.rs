//! Browser demo: three small computations returned as JSON strings.
//!
//! The `*_json` functions hold the logic and are plain Rust; the
//! `#[wasm_bindgen]` wrappers only convert errors for JavaScript.

use afcl_core::kalman::kf_smooth_all;
use afcl_core::metrics::error_matrix;
use afcl_core::projection::{alternating_stepsize_schedule, run_learner, Learner, LmsState, StepSchedule};
use afcl_core::rls::RlsState;
use afcl_core::stream::{generate_recurring, random_lgm, sample_lgm, seeded_rng, ScalarTask};
use afcl_core::Vector;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_TASKS: usize = 500;

#[derive(Serialize)]
struct LmsCurve {
    c: f64,
    alternating: bool,
    /// `‖θ^t − θ*‖²` for `t = 0..T`.
    distance: Vec<f64>,
    /// MSE over the tasks seen so far, `t = 1..T`.
    mse: Vec<f64>,
}

/// LMS on two unit inputs with squared cosine `c` and `θ* = (1, 1)`, with
/// stepsize 1 or the alternating schedule.
pub fn lms_curve_json(c: f64, tasks: usize, alternating: bool) -> Result<String, String> {
    if !(0.0..1.0).contains(&c) {
        return Err(format!("c = {c} must lie in [0, 1)"));
    }
    if tasks == 0 || tasks > MAX_TASKS {
        return Err(format!("tasks must lie in 1..={MAX_TASKS}"));
    }
    let theta_star = Vector::from_vec(vec![1.0, 1.0]);
    let x1 = Vector::from_vec(vec![1.0, 0.0]);
    let x2 = Vector::from_vec(vec![c.sqrt(), (1.0 - c).sqrt()]);
    let base = [
        ScalarTask::new(x1.clone(), x1.dot(&theta_star)),
        ScalarTask::new(x2.clone(), x2.dot(&theta_star)),
    ];
    let stream = generate_recurring(&base, tasks).map_err(|e| e.to_string())?;
    let schedule = if alternating {
        alternating_stepsize_schedule(c).map_err(|e| e.to_string())?
    } else {
        StepSchedule::Constant(1.0)
    };
    let mut lms = LmsState::with_schedule(Vector::zeros(2), schedule);
    let traj = run_learner(&mut lms, &stream).map_err(|e| e.to_string())?;
    let em = error_matrix(&traj, &stream).map_err(|e| e.to_string())?;
    let mse = (1..=tasks)
        .map(|t| afcl_core::metrics::mse(&em, t))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let curve = LmsCurve {
        c,
        alternating,
        distance: traj.thetas.iter().map(|th| (th - &theta_star).norm_squared()).collect(),
        mse,
    };
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct AveragingPoint {
    beta: f64,
    theta_1: f64,
    theta_2: f64,
}

/// RLS on the scalar tasks `(x, y) = (2, 4)` then `(1, 1)` for each β.
pub fn rls_averaging_json(betas: &[f64], lambda: f64) -> Result<String, String> {
    let tasks = [ScalarTask::from_slice(&[2.0], 4.0), ScalarTask::from_slice(&[1.0], 1.0)];
    let mut points = Vec::with_capacity(betas.len());
    for &beta in betas {
        let mut rls = RlsState::new(1, beta, lambda).map_err(|e| e.to_string())?;
        rls.step(&tasks[0]).map_err(|e| e.to_string())?;
        let theta_1 = rls.theta[0];
        rls.step(&tasks[1]).map_err(|e| e.to_string())?;
        points.push(AveragingPoint {
            beta,
            theta_1,
            theta_2: rls.theta[0],
        });
    }
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SmootherTraces {
    horizon: usize,
    /// `trace[i−1][t−i]` is `tr Σ_{i|t}` for `t = i..T`.
    trace: Vec<Vec<f64>>,
}

/// Traces of the smoothed covariances of a random LGM, one curve per task.
pub fn kalman_traces_json(seed: u64, d: usize, horizon: usize) -> Result<String, String> {
    if d == 0 || d > 8 || horizon == 0 || horizon > 50 {
        return Err("need 1 ≤ d ≤ 8 and 1 ≤ horizon ≤ 50".into());
    }
    let model = random_lgm(&mut seeded_rng(seed), d, 1);
    let stream = sample_lgm(&model, horizon, seed).map_err(|e| e.to_string())?;
    let table = kf_smooth_all(&model, &stream, false).map_err(|e| e.to_string())?;
    let trace = (1..=horizon)
        .map(|i| {
            (i..=horizon)
                .map(|t| table.get(i, t).expect("complete table").trace())
                .collect()
        })
        .collect();
    serde_json::to_string(&SmootherTraces { horizon, trace }).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn lms_curve(c: f64, tasks: usize, alternating: bool) -> Result<String, JsValue> {
    lms_curve_json(c, tasks, alternating).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn rls_averaging(betas: Vec<f64>, lambda: f64) -> Result<String, JsValue> {
    rls_averaging_json(&betas, lambda).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn kalman_traces(seed: u64, d: usize, horizon: usize) -> Result<String, JsValue> {
    kalman_traces_json(seed, d, horizon).map_err(|e| JsValue::from_str(&e))
}
