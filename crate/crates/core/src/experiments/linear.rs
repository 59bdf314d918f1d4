//! Experiments on the projection learners.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::metrics::{error_matrix, mse};
use crate::projection::{alternating_stepsize_schedule, run_learner, ApaState, IclState, LmsState, OgdState};
use crate::stream::{
    gaussian_vector, generate_iid_sphere, generate_recurring, min_norm_solution, seeded_rng, unit_sphere, ScalarTask,
    TaskStream,
};

use super::{mean_se, Check, ExperimentConfig, Recorder};

/// Separates the seed of the ground truth from the per-trial stream seeds.
const TRUTH_SALT: u64 = 0x5eed_7e7a;

pub(crate) fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    cfg.seed.wrapping_add(trial as u64)
}

pub(crate) fn lms_iid(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let d = cfg.stream.d.unwrap_or(5);
    let horizon = cfg.stream.t.unwrap_or(50);
    let trials = cfg.trials.unwrap_or(500);
    let gamma = cfg.learner.gamma.unwrap_or(1.0);
    let theta_star = gaussian_vector(&mut seeded_rng(cfg.seed ^ TRUTH_SALT), d);
    let norm2 = theta_star.norm_squared();

    // dist[t][trial] = ‖θ^t − θ*‖²
    let mut dist = vec![Vec::with_capacity(trials); horizon + 1];
    let mut second_moment = Matrix::zeros(d, d);
    let mut recursion_dev: f64 = 0.0;
    for trial in 0..trials {
        let stream = generate_iid_sphere(d, horizon, &theta_star, trial_seed(cfg, trial))?;
        let mut lms = LmsState::new(d, gamma)?;
        let traj = run_learner(&mut lms, &stream)?;
        for (t, theta) in traj.thetas.iter().enumerate() {
            dist[t].push((theta - &theta_star).norm_squared());
        }
        for (k, task) in stream.scalar_tasks()?.iter().enumerate() {
            second_moment += &task.x * task.x.transpose();
            if trial == 0 {
                // θ^t − θ* = (I − γ x xᵀ)(θ^{t−1} − θ*)
                let prev = &traj.thetas[k] - &theta_star;
                let expect = &prev - &task.x * (gamma * task.x.dot(&prev));
                recursion_dev = recursion_dev.max(linalg::max_abs_diff(&(&traj.thetas[k + 1] - &theta_star), &expect));
            }
        }
    }
    second_moment /= (trials * horizon) as f64;
    let lam_min = linalg::min_eigenvalue(&second_moment);

    let mut csv = String::from("t,mean,se,bound\n");
    let mut worst_increase = f64::NEG_INFINITY;
    for t in 0..=horizon {
        let (m, se) = mean_se(&dist[t]);
        let bound = (1.0 - lam_min).powi(t as i32) * norm2;
        writeln!(csv, "{t},{m},{se},{bound}").expect("write to string");
        if t > 0 {
            let diffs: Vec<f64> = dist[t].iter().zip(&dist[t - 1]).map(|(a, b)| a - b).collect();
            let (dm, dse) = mean_se(&diffs);
            worst_increase = worst_increase.max(dm - 3.0 * dse);
        }
    }
    let (final_mean, _) = mean_se(&dist[horizon]);
    let bound = (1.0 - lam_min).powi(horizon as i32) * norm2 * 1.5;
    rec.check(Check::at_most(
        "mean distance increase minus 3 se <= 0",
        worst_increase,
        0.0,
        0.0,
    ));
    rec.check(Check::at_most(
        "final mean distance <= 1.5 (1 - lambda_min)^T |theta*|^2",
        final_mean,
        bound,
        0.0,
    ));
    rec.check(Check::at_most(
        "contraction recursion deviation",
        recursion_dev,
        0.0,
        1e-12,
    ));
    rec.file("lms_iid.csv", csv);
    Ok(())
}

/// Two unit inputs with `(x₁ᵀx₂)² = c`, the min-norm θ* of random targets.
fn recurring_instance<R: Rng>(rng: &mut R, d: usize) -> Result<(Vec<ScalarTask>, f64)> {
    let x1 = unit_sphere(rng, d);
    let x2 = unit_sphere(rng, d);
    let raw = gaussian_vector(rng, d);
    let c = x1.dot(&x2).powi(2);
    Ok((
        vec![
            ScalarTask::new(x1.clone(), x1.dot(&raw)),
            ScalarTask::new(x2.clone(), x2.dot(&raw)),
        ],
        c,
    ))
}

pub(crate) fn lms_recurring(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let d = cfg.stream.d.unwrap_or(6);
    let instances = cfg.trials.unwrap_or(50);
    let mut csv = String::from("instance,T,c,dist2,dist2_bound,mse,mse_bound\n");
    let (mut worst_dist, mut worst_mse) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in 0..instances {
        let mut rng = seeded_rng(trial_seed(cfg, k));
        let horizon = cfg.stream.t.unwrap_or_else(|| rng.random_range(4..=20));
        if horizon < 2 {
            return Err(Error::Config("stream.t: at least 2 tasks are needed".into()));
        }
        let (base, c) = recurring_instance(&mut rng, d)?;
        let stream = generate_recurring(&base, horizon)?;
        let theta_star = stream
            .theta_star()
            .ok_or_else(|| Error::invalid("recurring inputs are colinear"))?
            .clone();
        let mut lms = LmsState::new(d, 1.0)?;
        let traj = run_learner(&mut lms, &stream)?;
        let norm2 = theta_star.norm_squared();
        let dist2 = (traj.last() - &theta_star).norm_squared();
        let dist_bound = c.powi(horizon as i32 - 1) * norm2;
        let e = mse(&error_matrix(&traj, &stream)?, horizon)?;
        let mse_bound = norm2 / (std::f64::consts::E * (horizon - 1) as f64);
        worst_dist = worst_dist.max(dist2 - dist_bound);
        worst_mse = worst_mse.max(e - mse_bound);
        writeln!(csv, "{k},{horizon},{c},{dist2},{dist_bound},{e},{mse_bound}").expect("write to string");
    }
    rec.check(Check::at_most(
        "max distance minus c^(T-1) |theta*|^2",
        worst_dist,
        0.0,
        1e-10,
    ));
    rec.check(Check::at_most(
        "max MSE minus |theta*|^2 / (e (T-1))",
        worst_mse,
        0.0,
        1e-10,
    ));
    rec.file("lms_recurring.csv", csv);
    Ok(())
}

pub(crate) fn opt_stepsize(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let c = cfg.learner.c.unwrap_or(0.5);
    let horizon = cfg.stream.t.unwrap_or(3);
    // x₁ = e₁, x₂ at squared cosine c, θ* = (1, 1)
    let x1 = Vector::from_vec(vec![1.0, 0.0]);
    let x2 = Vector::from_vec(vec![c.sqrt(), (1.0 - c).sqrt()]);
    let theta_star = Vector::from_vec(vec![1.0, 1.0]);
    let base = [
        ScalarTask::new(x1.clone(), x1.dot(&theta_star)),
        ScalarTask::new(x2.clone(), x2.dot(&theta_star)),
    ];
    let stream = generate_recurring(&base, horizon)?;
    let schedule = alternating_stepsize_schedule(c)?;

    let start = Instant::now();
    let mut lms = LmsState::with_schedule(Vector::zeros(2), schedule);
    let traj = run_learner(&mut lms, &stream)?;
    let elapsed = start.elapsed().as_secs_f64();

    let em = error_matrix(&traj, &stream)?;
    let at = horizon.min(3);
    let dist = (&traj.thetas[at] - &theta_star).norm();
    rec.check(Check::at_most(
        format!("distance to theta* at task {at}"),
        dist,
        0.0,
        1e-9,
    ));
    rec.check(Check::at_most(format!("MSE at task {at}"), mse(&em, at)?, 0.0, 1e-18));
    rec.check(Check::at_most("runtime seconds", elapsed, 1e-3, 0.0));
    rec.csv("opt_stepsize_trajectory.csv", |w| traj.write_csv(w))?;
    rec.csv("opt_stepsize_errors.csv", |w| em.write_csv(w))?;
    rec.csv("opt_stepsize_summary.csv", |w| em.write_summary_csv(w))?;
    Ok(())
}

/// Random independent inputs with `t ≤ d` and Gaussian targets.
pub(crate) fn independent_stream<R: Rng>(rng: &mut R, d: usize, t: usize) -> Result<TaskStream> {
    let tasks = (0..t)
        .map(|_| ScalarTask::new(gaussian_vector(rng, d), gaussian_vector(rng, 1)[0]))
        .collect();
    TaskStream::explicit(tasks)
}

pub(crate) fn apa_equivalence(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let trials = cfg.trials.unwrap_or(100);
    let mut csv = String::from("stream,d,T,apa_icl,apa_orfit,apa_oracle,icl_orfit,icl_oracle,orfit_oracle\n");
    let mut worst: f64 = 0.0;
    for k in 0..trials {
        let mut rng = seeded_rng(trial_seed(cfg, k));
        let d = cfg.stream.d.unwrap_or_else(|| rng.random_range(1..=12));
        let t = cfg.stream.t.unwrap_or_else(|| rng.random_range(1..=d)).min(d);
        let stream = independent_stream(&mut rng, d, t)?;
        let mut apa = ApaState::unbounded(d);
        let mut icl = IclState::new(d);
        let mut orfit = OgdState::orfit(d);
        let finals = [
            run_learner(&mut apa, &stream)?.last().clone(),
            run_learner(&mut icl, &stream)?.last().clone(),
            run_learner(&mut orfit, &stream)?.last().clone(),
            min_norm_solution(&stream.input_matrix(t)?, &stream.targets(t)?)?,
        ];
        write!(csv, "{k},{d},{t}").expect("write to string");
        for a in 0..4 {
            for b in (a + 1)..4 {
                let dist = (&finals[a] - &finals[b]).norm();
                worst = worst.max(dist);
                write!(csv, ",{dist:e}").expect("write to string");
            }
        }
        csv.push('\n');
    }
    rec.check(Check::at_most(
        "max pairwise distance of final models",
        worst,
        0.0,
        1e-8,
    ));
    rec.file("apa_equivalence.csv", csv);
    Ok(())
}
