//! Experiments on RLS and its class-incremental variant.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::Result;
use crate::linalg::{self, Vector};
use crate::projection::Learner;
use crate::rls::{batch_rls_solve, drls_batch_solve, rls_icl_limit_check, DrlsState, RlsState};
use crate::stream::{gaussian_vector, seeded_rng, ScalarTask};

use super::linear::{independent_stream, trial_seed};
use super::{Check, ExperimentConfig, Recorder};

fn betas(cfg: &ExperimentConfig, default: &[f64]) -> Vec<f64> {
    cfg.learner
        .betas
        .clone()
        .or_else(|| cfg.learner.beta.map(|b| vec![b]))
        .unwrap_or_else(|| default.to_vec())
}

fn lambdas(cfg: &ExperimentConfig, default: &[f64]) -> Vec<f64> {
    cfg.learner
        .lambdas
        .clone()
        .or_else(|| cfg.learner.lambda.map(|l| vec![l]))
        .unwrap_or_else(|| default.to_vec())
}

fn gaussian_tasks<R: Rng>(rng: &mut R, d: usize, t: usize) -> Vec<ScalarTask> {
    (0..t)
        .map(|_| ScalarTask::new(gaussian_vector(rng, d), gaussian_vector(rng, 1)[0]))
        .collect()
}

pub(crate) fn rls_batch(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let streams = cfg.trials.unwrap_or(20);
    let mut csv = String::from("beta,lambda,stream,d,T,max_rel_dev,min_rel_eig_decrease,condition_number\n");
    let (mut worst_dev, mut worst_eig): (f64, f64) = (0.0, f64::INFINITY);
    for beta in betas(cfg, &[0.5, 1.0, 2.0]) {
        for lambda in lambdas(cfg, &[1e-6, 1.0, 10.0]) {
            for k in 0..streams {
                let mut rng = seeded_rng(trial_seed(cfg, k));
                let d = cfg.stream.d.unwrap_or_else(|| rng.random_range(1..=10));
                let t = cfg.stream.t.unwrap_or_else(|| rng.random_range(1..=30));
                let tasks = gaussian_tasks(&mut rng, d, t);
                let mut rls = RlsState::new(d, beta, lambda)?;
                let (mut dev, mut eig): (f64, f64) = (0.0, f64::INFINITY);
                let mut prev = rls.phi();
                for n in 1..=t {
                    rls.step(&tasks[n - 1]).map_err(|e| e.at_task(n))?;
                    let batch = batch_rls_solve(&tasks[..n], d, beta, lambda)?;
                    dev = dev.max(linalg::max_abs_diff(&rls.theta, &batch) / (1.0 + batch.amax()));
                    // Φ_{t−1} − Φ_t ⪰ 0, relative to the scale of Φ_{t−1}
                    let phi = rls.phi();
                    eig = eig.min(linalg::min_eigenvalue(&(&prev - &phi)) / prev.amax().max(1.0));
                    prev = phi;
                }
                let cond = rls.hessian.condition_number();
                writeln!(csv, "{beta},{lambda},{k},{d},{t},{dev:e},{eig:e},{cond:e}").expect("write to string");
                worst_dev = worst_dev.max(dev);
                worst_eig = worst_eig.min(eig);
            }
        }
    }
    rec.check(Check::at_most(
        "max relative deviation from the batch solution",
        worst_dev,
        0.0,
        1e-7,
    ));
    rec.check(Check::at_least(
        "min relative eigenvalue of the inverse Hessian decrease",
        worst_eig,
        0.0,
        1e-10,
    ));
    rec.file("rls_batch.csv", csv);
    Ok(())
}

pub(crate) fn rls_averaging(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let lambda = cfg.learner.lambda.unwrap_or(1e-10);
    let tasks = [ScalarTask::from_slice(&[2.0], 4.0), ScalarTask::from_slice(&[1.0], 1.0)];
    let bests: Vec<f64> = tasks.iter().map(|t| t.y / t.x[0]).collect();
    let run = |beta: f64| -> Result<Vec<f64>> {
        let mut rls = RlsState::new(1, beta, lambda)?;
        let mut out = Vec::with_capacity(tasks.len());
        for task in &tasks {
            rls.step(task)?;
            out.push(rls.theta[0]);
        }
        Ok(out)
    };
    let theta = run(1.0)?;
    let final_theta = theta[1];
    rec.check(Check::close(
        "final model for beta = 1 near 1.8",
        final_theta,
        1.8,
        1e-5,
    ));
    rec.check(Check::below(
        "final model below the first task's best",
        final_theta,
        bests[0].max(bests[1]),
    ));
    rec.check(Check::at_least(
        "final model above the second task's best",
        final_theta,
        bests[0].min(bests[1]) + f64::EPSILON,
        0.0,
    ));
    rec.check(Check::close("best model of task 1", bests[0], 2.0, 0.0));
    rec.check(Check::close("best model of task 2", bests[1], 1.0, 0.0));

    // smaller β favours the most recent task
    let mut csv = String::from("beta,theta_1,theta_2,distance_to_latest_best\n");
    let mut worst_increase = f64::NEG_INFINITY;
    let mut prev: Option<f64> = None;
    for beta in betas(cfg, &[2.0, 1.0, 0.5, 0.1]) {
        let th = run(beta)?;
        let dist = (th[1] - bests[1]).abs();
        writeln!(csv, "{beta},{},{},{dist}", th[0], th[1]).expect("write to string");
        if let Some(p) = prev {
            worst_increase = worst_increase.max(dist - p);
        }
        prev = Some(dist);
    }
    if worst_increase.is_finite() {
        rec.check(Check::at_most(
            "distance to the latest best grows as beta shrinks",
            worst_increase,
            0.0,
            1e-12,
        ));
    }
    rec.file("rls_averaging.csv", csv);
    Ok(())
}

pub(crate) fn rls_icl_limit(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let streams = cfg.trials.unwrap_or(50);
    let mut csv = String::from("lambda,stream,d,T,max_theta_diff,max_projector_diff\n");
    let (mut worst_theta, mut worst_proj): (f64, f64) = (0.0, 0.0);
    for lambda in lambdas(cfg, &[0.1, 1.0, 10.0]) {
        for k in 0..streams {
            let mut rng = seeded_rng(trial_seed(cfg, k));
            let d = cfg.stream.d.unwrap_or_else(|| rng.random_range(1..=10));
            let t = cfg.stream.t.unwrap_or_else(|| rng.random_range(1..=d)).min(d);
            let stream = independent_stream(&mut rng, d, t)?;
            let report = rls_icl_limit_check(stream.scalar_tasks()?, d, lambda)?;
            let (dt, dp) = (report.max_theta_diff(), report.max_projector_diff());
            writeln!(csv, "{lambda},{k},{d},{t},{dt:e},{dp:e}").expect("write to string");
            worst_theta = worst_theta.max(dt);
            worst_proj = worst_proj.max(dp);
        }
    }
    rec.check(Check::at_most(
        "max model difference to ICL",
        worst_theta,
        0.0,
        crate::rls::LIMIT_THETA_TOL,
    ));
    rec.check(Check::at_most(
        "max projector difference to lambda Phi",
        worst_proj,
        0.0,
        crate::rls::LIMIT_PROJECTOR_TOL,
    ));
    rec.file("rls_icl_limit.csv", csv);
    Ok(())
}

pub(crate) fn drls_expand(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let d = cfg.stream.d.unwrap_or(8);
    let t = cfg.stream.t.unwrap_or(40);
    let beta = cfg.learner.beta.unwrap_or(1.0);
    let lambda = cfg.learner.lambda.unwrap_or(1.0);
    let mut rng = seeded_rng(cfg.seed);
    // a new class becomes available every 5 samples
    let samples: Vec<(Vector, usize)> = (0..t)
        .map(|n| (gaussian_vector(&mut rng, d), rng.random_range(0..=n / 5)))
        .collect();
    let mut state = DrlsState::new(d, beta, lambda)?;
    let mut worst: f64 = 0.0;
    for n in 1..=t {
        let (x, label) = &samples[n - 1];
        state.step(x, *label).map_err(|e| e.at_task(n))?;
        let batch = drls_batch_solve(&samples[..n], d, beta, lambda)?;
        let dev = (&state.theta - &batch).amax() / (1.0 + batch.amax());
        worst = worst.max(dev);
    }
    let counts = state.class_counts();
    let drops = counts.windows(2).filter(|w| w[1] < w[0]).count();
    let distinct = {
        let mut seen: Vec<usize> = samples.iter().map(|s| s.1).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.last().map_or(0, |m| m + 1)
    };
    rec.check(Check::at_most(
        "max relative deviation from the batch classifier",
        worst,
        0.0,
        1e-7,
    ));
    rec.check(Check::at_most("decreases in the class count", drops as f64, 0.0, 0.0));
    rec.check(Check::close(
        "final class count",
        state.classes() as f64,
        distinct as f64,
        0.0,
    ));
    rec.csv("drls_growth.csv", |w| state.write_growth_csv(w))?;
    Ok(())
}
