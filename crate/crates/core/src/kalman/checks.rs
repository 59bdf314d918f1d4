//! Property checks: the Kalman filter reproducing RLS, and positive backward
//! transfer of the smoother.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::projection::Learner;
use crate::rls::RlsState;
use crate::stream::{sample_lgm, BlockTask, GroundTruth, LgmModel, ScalarTask};

use super::{kf_correct, kf_predict, kf_smooth_all, GaussianBelief, SmootherTable};

pub const REDUCTION_TOL: f64 = 1e-8;
pub const PBT_EIG_TOL: f64 = 1e-9;
const PBT_TRACE_TOL: f64 = 1e-8;

/// How the filter is initialized when compared with RLS.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReductionPrior {
    /// `θ_{1|1} ~ N(θ¹, Φ₁)` taken from RLS after the first task.
    AfterFirstTask,
    /// `θ_{1|0} ~ N(0, I/λ)`, the ridge prior, corrected on the first task.
    Ridge,
}

#[derive(Clone, Debug)]
pub struct ReductionReport {
    /// `‖θ_{t|t} − θ^t‖∞` for `t = 1..T`.
    pub theta_diff: Vec<f64>,
    /// `max |Σ_{t|t} − Φ_t|` for `t = 1..T`.
    pub cov_diff: Vec<f64>,
    pub first_violation: Option<usize>,
}

impl ReductionReport {
    pub fn pass(&self) -> bool {
        self.first_violation.is_none()
    }

    pub fn max_diff(&self) -> f64 {
        self.theta_diff
            .iter()
            .chain(&self.cov_diff)
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Runs RLS-(β, λ) and a static-state Kalman filter with measurement noise
/// `β^t` side by side and compares means with models and covariances with
/// `Φ_t`.
pub fn kf_rls_reduction_check(
    tasks: &[ScalarTask],
    beta: f64,
    lambda: f64,
    prior: ReductionPrior,
) -> Result<ReductionReport> {
    if !(beta > 0.0) {
        return Err(Error::invalid("the reduction needs β > 0"));
    }
    let Some(first) = tasks.first() else {
        return Err(Error::invalid("the reduction needs at least one task"));
    };
    let d = first.x.len();
    let mut rls = RlsState::new(d, beta, lambda)?;
    let eye = Matrix::identity(d, d);
    let zero = Matrix::zeros(d, d);
    let mut belief: Option<GaussianBelief> = match prior {
        ReductionPrior::AfterFirstTask => None,
        ReductionPrior::Ridge => Some(GaussianBelief {
            mean: Vector::zeros(d),
            cov: &eye / lambda,
        }),
    };
    let mut report = ReductionReport {
        theta_diff: Vec::with_capacity(tasks.len()),
        cov_diff: Vec::with_capacity(tasks.len()),
        first_violation: None,
    };
    for (k, task) in tasks.iter().enumerate() {
        let t = k + 1;
        rls.step(task).map_err(|e| e.at_task(t))?;
        let phi = rls.phi();
        let next = match belief.take() {
            None => GaussianBelief {
                mean: rls.theta.clone(),
                cov: phi.clone(),
            },
            Some(b) => {
                let pred = kf_predict(&b, &eye, &zero)?;
                let block = BlockTask::new(
                    Matrix::from_column_slice(d, 1, task.x.as_slice()),
                    Vector::from_element(1, task.y),
                )?;
                let r = Matrix::from_element(1, 1, beta.powi(t as i32));
                kf_correct(&pred, &block, &r).map_err(|e| e.at_task(t))?
            }
        };
        let dt = linalg::max_abs_diff(&next.mean, &rls.theta);
        let dc = (&next.cov - &phi).amax();
        report.theta_diff.push(dt);
        report.cov_diff.push(dc);
        if report.first_violation.is_none() && (dt > REDUCTION_TOL || dc > REDUCTION_TOL) {
            report.first_violation = Some(t);
        }
        belief = Some(next);
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PbtRow {
    pub i: usize,
    pub s: usize,
    pub t: usize,
    /// Smallest eigenvalue of `Σ_{i|s} − Σ_{i|t}`.
    pub min_eig_diff: f64,
    /// `tr Σ_{i|s} − tr Σ_{i|t}`.
    pub trace_gain: f64,
}

#[derive(Clone, Debug)]
pub struct PbtReport {
    pub rows: Vec<PbtRow>,
    pub first_violation: Option<(usize, usize, usize)>,
}

impl PbtReport {
    pub fn pass(&self) -> bool {
        self.first_violation.is_none()
    }

    pub fn min_eig(&self) -> f64 {
        self.rows.iter().map(|r| r.min_eig_diff).fold(f64::INFINITY, f64::min)
    }

    /// CSV `i,s,t,min_eig_diff`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,s,t,min_eig_diff")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{:e}", r.i, r.s, r.t, r.min_eig_diff)?;
        }
        Ok(())
    }
}

/// Checks `Σ_{i|t} ⪯ Σ_{i|s}` for every `i ≤ s < t` of a fully smoothed table.
pub fn positive_backward_transfer_check(table: &SmootherTable) -> Result<PbtReport> {
    if !table.is_complete() {
        return Err(Error::invalid(
            "smoother table is incomplete; smooth every horizon first",
        ));
    }
    let n = table.horizon();
    let mut report = PbtReport {
        rows: Vec::new(),
        first_violation: None,
    };
    for t in 2..=n {
        for s in 1..t {
            for i in 1..=s {
                let a = &table.get(i, s).expect("complete").cov;
                let b = &table.get(i, t).expect("complete").cov;
                let row = PbtRow {
                    i,
                    s,
                    t,
                    min_eig_diff: linalg::min_eigenvalue(&(a - b)),
                    trace_gain: a.trace() - b.trace(),
                };
                if report.first_violation.is_none()
                    && (row.min_eig_diff < -PBT_EIG_TOL || row.trace_gain < -PBT_TRACE_TOL)
                {
                    report.first_violation = Some((i, s, t));
                }
                report.rows.push(row);
            }
        }
    }
    Ok(report)
}

/// Empirical squared errors of the beliefs `θ_{i|s}` and `θ_{i|t}` about the
/// realized states.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McRow {
    pub i: usize,
    pub s: usize,
    pub t: usize,
    pub mean_s: f64,
    pub mean_t: f64,
    /// Standard error of the paired difference.
    pub se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct McReport {
    pub realizations: usize,
    pub rows: Vec<McRow>,
}

impl McReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Samples `realizations` streams (seeds `seed + r`) and compares the mean
/// squared error of smoothed and filtered beliefs for all `i ≤ s < t`. A row
/// passes when `mean_t ≤ mean_s + 3·se`.
pub fn pbt_monte_carlo(model: &LgmModel, horizon: usize, realizations: usize, seed: u64) -> Result<McReport> {
    if realizations < 2 || horizon < 2 {
        return Err(Error::invalid(
            "Monte-Carlo check needs at least two realizations and two tasks",
        ));
    }
    let triples: Vec<(usize, usize, usize)> = (2..=horizon)
        .flat_map(|t| (1..t).flat_map(move |s| (1..=s).map(move |i| (i, s, t))))
        .collect();
    let mut sums = vec![(0.0, 0.0, 0.0, 0.0); triples.len()];
    for r in 0..realizations {
        let stream = sample_lgm(model, horizon, seed.wrapping_add(r as u64))?;
        let table = kf_smooth_all(model, &stream, false)?;
        let GroundTruth::Trajectory(states) = &stream.truth else {
            unreachable!("sampled LGM streams carry their trajectory")
        };
        for (acc, &(i, s, t)) in sums.iter_mut().zip(&triples) {
            let es = (&states[i - 1] - &table.get(i, s).expect("smoothed").mean).norm_squared();
            let et = (&states[i - 1] - &table.get(i, t).expect("smoothed").mean).norm_squared();
            let diff = et - es;
            acc.0 += es;
            acc.1 += et;
            acc.2 += diff;
            acc.3 += diff * diff;
        }
    }
    let n = realizations as f64;
    let rows = triples
        .iter()
        .zip(&sums)
        .map(|(&(i, s, t), &(ss, st, sd, sd2))| {
            let mean_diff = sd / n;
            let var = ((sd2 - n * mean_diff * mean_diff) / (n - 1.0)).max(0.0);
            let se = (var / n).sqrt();
            McRow {
                i,
                s,
                t,
                mean_s: ss / n,
                mean_t: st / n,
                se,
                pass: mean_diff <= 3.0 * se,
            }
        })
        .collect();
    Ok(McReport { realizations, rows })
}
