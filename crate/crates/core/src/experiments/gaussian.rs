//! Experiments on linear Gaussian models, the Kalman filter and the smoother.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::Result;
use crate::kalman::{
    ekf_step, kf_correct, kf_predict, kf_rls_reduction_check, kf_smooth_all, pbt_monte_carlo,
    positive_backward_transfer_check, FnMap, GaussianBelief, ReductionPrior, PBT_EIG_TOL, REDUCTION_TOL,
};
use crate::linalg::{Matrix, Vector};
use crate::stream::{gaussian_matrix, gaussian_vector, random_lgm, sample_lgm, seeded_rng, BlockTask, ScalarTask};

use super::linear::trial_seed;
use super::{Check, ExperimentConfig, Recorder};

pub(crate) fn kf_rls(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let streams = cfg.trials.unwrap_or(20);
    let lambda = cfg.learner.lambda.unwrap_or(1.0);
    let betas = cfg
        .learner
        .betas
        .clone()
        .or(cfg.learner.beta.map(|b| vec![b]))
        .unwrap_or(vec![0.5, 1.0, 2.0]);
    let mut csv = String::from("beta,prior,stream,d,T,max_diff\n");
    let mut worst: f64 = 0.0;
    for &beta in &betas {
        for (prior, label) in [
            (ReductionPrior::AfterFirstTask, "after-first-task"),
            (ReductionPrior::Ridge, "ridge"),
        ] {
            for k in 0..streams {
                let mut rng = seeded_rng(trial_seed(cfg, k));
                let d = cfg.stream.d.unwrap_or_else(|| rng.random_range(1..=6));
                let t = cfg.stream.t.unwrap_or_else(|| rng.random_range(1..=20));
                let tasks: Vec<ScalarTask> = (0..t)
                    .map(|_| ScalarTask::new(gaussian_vector(&mut rng, d), gaussian_vector(&mut rng, 1)[0]))
                    .collect();
                let report = kf_rls_reduction_check(&tasks, beta, lambda, prior)?;
                let diff = report.max_diff();
                writeln!(csv, "{beta},{label},{k},{d},{t},{diff:e}").expect("write to string");
                worst = worst.max(diff);
            }
        }
    }
    rec.check(Check::at_most(
        "max difference between filter and RLS",
        worst,
        0.0,
        REDUCTION_TOL,
    ));
    rec.file("kf_rls.csv", csv);
    Ok(())
}

pub(crate) fn rts_pbt(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let horizon = cfg.stream.t.unwrap_or(6);
    let realizations = cfg.realizations.unwrap_or(300);
    let models = match &cfg.stream.model {
        Some(given) => vec![given.to_model()?],
        None => (0..cfg.trials.unwrap_or(30))
            .map(|k| {
                let mut rng = seeded_rng(trial_seed(cfg, k));
                let d = cfg.stream.d.unwrap_or_else(|| rng.random_range(1..=4));
                let m = cfg.stream.m.unwrap_or_else(|| rng.random_range(1..=2));
                random_lgm(&mut rng, d, m)
            })
            .collect(),
    };
    let mut csv = String::from("model,i,s,t,min_eig_diff,trace_gain\n");
    let mut worst_eig = f64::INFINITY;
    let mut violations = 0usize;
    for (k, model) in models.iter().enumerate() {
        let stream = sample_lgm(model, horizon, trial_seed(cfg, k))?;
        let table = kf_smooth_all(model, &stream, false)?;
        let report = positive_backward_transfer_check(&table)?;
        for r in &report.rows {
            writeln!(
                csv,
                "{k},{},{},{},{:e},{:e}",
                r.i, r.s, r.t, r.min_eig_diff, r.trace_gain
            )
            .expect("write to string");
        }
        worst_eig = worst_eig.min(report.min_eig());
        violations += usize::from(!report.pass());
        if k == 0 {
            rec.csv("smoother_table.csv", |w| table.write_csv(w))?;
        }
    }
    rec.check(Check::at_least(
        "min eigenvalue of covariance reduction",
        worst_eig,
        0.0,
        PBT_EIG_TOL,
    ));
    rec.check(Check::at_most(
        "models violating the covariance ordering",
        violations as f64,
        0.0,
        0.0,
    ));
    rec.file("pbt.csv", csv);

    let mc = pbt_monte_carlo(&models[0], horizon, realizations, cfg.seed)?;
    let mut mc_csv = String::from("i,s,t,mean_s,mean_t,se,pass\n");
    for r in &mc.rows {
        writeln!(
            mc_csv,
            "{},{},{},{},{},{},{}",
            r.i, r.s, r.t, r.mean_s, r.mean_t, r.se, r.pass
        )
        .expect("write to string");
    }
    let failed = mc.rows.iter().filter(|r| !r.pass).count();
    rec.check(Check::at_most(
        "Monte-Carlo rows with error increase above 3 se",
        failed as f64,
        0.0,
        0.0,
    ));
    rec.file("pbt_monte_carlo.csv", mc_csv);
    Ok(())
}

fn max_belief_diff(a: &GaussianBelief, b: &GaussianBelief) -> f64 {
    (&a.mean - &b.mean).amax().max((&a.cov - &b.cov).amax())
}

pub(crate) fn ekf_consistency(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let d = cfg.stream.d.unwrap_or(3);
    let m = cfg.stream.m.unwrap_or(2);
    let horizon = cfg.stream.t.unwrap_or(10);
    let mut rng = seeded_rng(cfg.seed);
    let a = gaussian_matrix(&mut rng, d, d) * (0.5 / (d as f64).sqrt());
    let x = gaussian_matrix(&mut rng, d, m);
    let q = Matrix::identity(d, d) * 0.1;
    let r = Matrix::identity(m, m) * 0.5;
    let ys: Vec<Vector> = (0..horizon).map(|_| gaussian_vector(&mut rng, m)).collect();
    let prior = GaussianBelief::new(gaussian_vector(&mut rng, d), Matrix::identity(d, d))?;

    let g_exact = FnMap::linear(a.clone());
    let f_exact = FnMap::linear(x.transpose());
    let (ga, xt) = (a.clone(), x.transpose());
    let g_fd = FnMap::new(move |t| &ga * t);
    let f_fd = FnMap::new(move |t| &xt * t);
    let (mut kf, mut ekf, mut fd) = (prior.clone(), prior.clone(), prior);
    let (mut worst_exact, mut worst_fd): (f64, f64) = (0.0, 0.0);
    for y in &ys {
        kf = kf_correct(&kf_predict(&kf, &a, &q)?, &BlockTask::new(x.clone(), y.clone())?, &r)?;
        ekf = ekf_step(&ekf, &g_exact, &f_exact, &q, &r, y)?;
        fd = ekf_step(&fd, &g_fd, &f_fd, &q, &r, y)?;
        worst_exact = worst_exact.max(max_belief_diff(&ekf, &kf));
        worst_fd = worst_fd.max(max_belief_diff(&fd, &kf));
    }
    rec.check(Check::at_most(
        "EKF with exact Jacobians against KF",
        worst_exact,
        0.0,
        1e-12,
    ));
    rec.check(Check::at_most(
        "EKF with numerical Jacobians against KF",
        worst_fd,
        0.0,
        1e-6,
    ));

    // sin measurement against its linearization at 0, prior N(σ, σ²)
    let variances = cfg.learner.variances.clone().unwrap_or(vec![1e-2, 1e-4, 1e-6]);
    let one = Matrix::identity(1, 1);
    let y = Vector::from_element(1, 0.5);
    let mut csv = String::from("variance,ekf_mean,linear_mean,gap\n");
    let mut gaps = Vec::with_capacity(variances.len());
    for &var in &variances {
        let belief = GaussianBelief::new(Vector::from_element(1, var.sqrt()), &one * var)?;
        let ekf = crate::kalman::ekf_correct(&belief, &FnMap::new(|t| t.map(f64::sin)), &one, &y)?;
        let lin = crate::kalman::ekf_correct(&belief, &FnMap::linear(one.clone()), &one, &y)?;
        let gap = (ekf.mean[0] - lin.mean[0]).abs();
        writeln!(csv, "{var},{},{},{gap:e}", ekf.mean[0], lin.mean[0]).expect("write to string");
        gaps.push(gap);
    }
    let worst_step = gaps.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    rec.check(Check::below(
        "largest change of the gap as the prior tightens",
        worst_step,
        0.0,
    ));
    rec.file("ekf_sin.csv", csv);
    Ok(())
}
