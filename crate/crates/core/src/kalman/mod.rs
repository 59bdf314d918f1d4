//! Gaussian conditioning, the Kalman filter and the RTS smoother.
//!
//! Beliefs `θ_{i|t} ~ N(mean, cov)` are the posterior of the state of task
//! `i` given the measurements of tasks `1..=t`. The filter fills the diagonal
//! `i = t`, the smoother fills every `i < t`.

mod checks;
mod ekf;

pub use checks::{
    kf_rls_reduction_check, pbt_monte_carlo, positive_backward_transfer_check, McReport, McRow, PbtReport, PbtRow,
    ReductionPrior, ReductionReport, PBT_EIG_TOL, REDUCTION_TOL,
};
pub use ekf::{ekf_correct, ekf_predict, ekf_step, FnMap, VectorFn};

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::stream::{BlockTask, LgmModel, TaskStream, Tasks};

/// Tolerance (relative to the largest entry) for covariance symmetry and
/// negative eigenvalues.
const BELIEF_TOL: f64 = 1e-10;

/// Floor added to a singular predicted covariance when the caller allows it.
pub const SMOOTHING_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianBelief {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::invalid("belief covariance shape does not match the mean"));
        }
        let scale = cov.amax().max(1.0);
        linalg::check_covariance(&linalg::symmetrized(&cov), "belief covariance", -BELIEF_TOL * scale)?;
        if linalg::max_asymmetry(&cov) > BELIEF_TOL * scale {
            return Err(Error::InvalidModel("belief covariance is not symmetric".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }
}

fn spd_solve_right(m: &Matrix, s: &Matrix, what: &str) -> Result<Matrix> {
    // M S⁻¹ = (S⁻¹ Mᵀ)ᵀ for symmetric S
    let chol = linalg::symmetrized(s)
        .cholesky()
        .ok_or_else(|| Error::Conditioning(format!("{what} is not positive definite")))?;
    Ok(chol.solve(&m.transpose()).transpose())
}

/// Conditions `a ~ prior` on the observation `b = Xᵀa + ω`, `ω ~ N(0, noise_cov)`.
pub fn gaussian_condition(
    prior: &GaussianBelief,
    x: &Matrix,
    noise_cov: &Matrix,
    b: &Vector,
) -> Result<GaussianBelief> {
    let d = prior.dim();
    let m = b.len();
    if x.shape() != (d, m) || noise_cov.shape() != (m, m) {
        return Err(Error::invalid("observation shapes do not match the belief"));
    }
    linalg::check_covariance(noise_cov, "noise covariance", -BELIEF_TOL * noise_cov.amax().max(1.0))?;
    let sa_x = &prior.cov * x;
    let sigma_b = noise_cov + x.tr_mul(&sa_x);
    let gain = spd_solve_right(&sa_x, &sigma_b, "Σ_b")?;
    let mean = &prior.mean - &gain * (x.tr_mul(&prior.mean) - b);
    let mut cov = &prior.cov - &gain * sa_x.transpose();
    linalg::symmetrize(&mut cov);
    Ok(GaussianBelief { mean, cov })
}

/// Kalman gain `K = ΣX(R + XᵀΣX)⁻¹`.
pub fn kalman_gain(cov: &Matrix, x: &Matrix, r: &Matrix) -> Result<Matrix> {
    let s = r + x.tr_mul(&(cov * x));
    let s_inv =
        linalg::spd_inverse(&s).ok_or_else(|| Error::Conditioning("R + XᵀΣX is not positive definite".into()))?;
    Ok(cov * x * s_inv)
}

fn correct(belief: &GaussianBelief, x: &Matrix, y: &Vector, r: &Matrix) -> Result<(GaussianBelief, Matrix)> {
    let d = belief.dim();
    if x.nrows() != d || r.shape() != (x.ncols(), x.ncols()) || y.len() != x.ncols() {
        return Err(Error::invalid("measurement shapes do not match the belief"));
    }
    let k = kalman_gain(&belief.cov, x, r)?;
    let mean = &belief.mean - &k * (x.tr_mul(&belief.mean) - y);
    let mut cov = &belief.cov - &k * x.tr_mul(&belief.cov);
    linalg::symmetrize(&mut cov);
    Ok((GaussianBelief { mean, cov }, k))
}

/// Correction step `θ_{t|t−1} → θ_{t|t}`.
pub fn kf_correct(belief: &GaussianBelief, task: &BlockTask, r: &Matrix) -> Result<GaussianBelief> {
    Ok(correct(belief, &task.x, &task.y, r)?.0)
}

/// Prediction step `θ_{t|t} → θ_{t+1|t}`.
pub fn kf_predict(belief: &GaussianBelief, a: &Matrix, q: &Matrix) -> Result<GaussianBelief> {
    let d = belief.dim();
    if a.shape() != (d, d) || q.shape() != (d, d) {
        return Err(Error::invalid("transition shapes do not match the belief"));
    }
    let mut cov = q + a * &belief.cov * a.transpose();
    linalg::symmetrize(&mut cov);
    Ok(GaussianBelief {
        mean: a * &belief.mean,
        cov,
    })
}

/// Upper-triangular table of beliefs `θ_{i|t}` for `1 ≤ i ≤ t ≤ T`, with the
/// one-step predictions and the gains used to produce them.
#[derive(Clone, Debug)]
pub struct SmootherTable {
    cells: Vec<Vec<Option<GaussianBelief>>>,
    predicted: Vec<GaussianBelief>,
    gains: Vec<Matrix>,
    backward: Vec<Option<Matrix>>,
}

impl SmootherTable {
    pub fn horizon(&self) -> usize {
        self.predicted.len()
    }

    /// `θ_{i|t}` once computed (1-based, `i ≤ t`).
    pub fn get(&self, i: usize, t: usize) -> Option<&GaussianBelief> {
        if i == 0 || i > t || t > self.horizon() {
            return None;
        }
        self.cells[i - 1][t - i].as_ref()
    }

    fn set(&mut self, i: usize, t: usize, b: GaussianBelief) {
        self.cells[i - 1][t - i] = Some(b);
    }

    pub fn filtered(&self, t: usize) -> &GaussianBelief {
        self.get(t, t).expect("filter fills the diagonal")
    }

    /// `θ_{t|t−1}` (the prior `N(μ₁, Σ₁)` for `t = 1`).
    pub fn predicted(&self, t: usize) -> &GaussianBelief {
        &self.predicted[t - 1]
    }

    /// Kalman gain `K_t`.
    pub fn kalman_gain(&self, t: usize) -> &Matrix {
        &self.gains[t - 1]
    }

    /// Backward gain `L_j` (`1 ≤ j < T`), once the smoother has used it.
    pub fn backward_gain(&self, j: usize) -> Option<&Matrix> {
        self.backward.get(j - 1).and_then(Option::as_ref)
    }

    /// Whether every cell `i ≤ t` has been filled.
    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|row| row.iter().all(Option::is_some))
    }

    /// CSV `i,t,trace_cov,mean_0..mean_{d−1}` over the filled cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.predicted.first().map_or(0, GaussianBelief::dim);
        write!(w, "i,t,trace_cov")?;
        for k in 0..d {
            write!(w, ",mean_{k}")?;
        }
        writeln!(w)?;
        for t in 1..=self.horizon() {
            for i in 1..=t {
                if let Some(b) = self.get(i, t) {
                    write!(w, "{i},{t},{}", b.trace())?;
                    for v in b.mean.iter() {
                        write!(w, ",{v}")?;
                    }
                    writeln!(w)?;
                }
            }
        }
        Ok(())
    }
}

fn block_tasks(stream: &TaskStream) -> Vec<BlockTask> {
    match &stream.tasks {
        Tasks::Block(b) => b.clone(),
        Tasks::Scalar(s) => s
            .iter()
            .map(|t| BlockTask {
                x: Matrix::from_column_slice(t.x.len(), 1, t.x.as_slice()),
                y: Vector::from_element(1, t.y),
            })
            .collect(),
    }
}

/// Filter pass from `θ_{1|0} = N(μ₁, Σ₁)`, alternating correction and prediction.
pub fn kf_run(model: &LgmModel, stream: &TaskStream) -> Result<SmootherTable> {
    let d = model.dim();
    if stream.d != d {
        return Err(Error::invalid(format!(
            "stream dimension {} differs from model dimension {d}",
            stream.d
        )));
    }
    if !model.supports(stream.len()) {
        return Err(Error::invalid("model has fewer steps than the stream"));
    }
    let tasks = block_tasks(stream);
    let n = tasks.len();
    let mut table = SmootherTable {
        cells: (0..n).map(|i| vec![None; n - i]).collect(),
        predicted: Vec::with_capacity(n),
        gains: Vec::with_capacity(n),
        backward: vec![None; n.saturating_sub(1)],
    };
    let mut belief = GaussianBelief::new(model.mu1.clone(), model.sigma1.clone())?;
    for (k, task) in tasks.iter().enumerate() {
        let t = k + 1;
        let step = model.step(t);
        if t > 1 {
            belief = kf_predict(&belief, &step.a, &step.q).map_err(|e| e.at_task(t))?;
        }
        let (post, gain) = correct(&belief, &task.x, &task.y, &step.r).map_err(|e| e.at_task(t))?;
        table.predicted.push(belief);
        table.gains.push(gain);
        table.set(t, t, post.clone());
        belief = post;
    }
    Ok(table)
}

/// Backward pass for horizon `t`, filling `θ_{i|t}` for `i < t`.
///
/// A singular `Σ_{j|j−1}` is an error unless `floor` is set, in which case
/// [`SMOOTHING_FLOOR`]`·I` is added before inverting.
pub fn rts_smooth(table: &mut SmootherTable, model: &LgmModel, t: usize, floor: bool) -> Result<()> {
    if t == 0 || t > table.horizon() {
        return Err(Error::invalid(format!("horizon {t} outside 1..={}", table.horizon())));
    }
    for j in (2..=t).rev() {
        let gain = match table.backward_gain(j - 1) {
            Some(g) => g.clone(),
            None => {
                let pred = &table.predicted(j).cov;
                let filt = &table.filtered(j - 1).cov;
                let num = filt * model.step(j).a.transpose();
                let g = match spd_solve_right(&num, pred, "Σ_{j|j−1}") {
                    Ok(g) => g,
                    Err(_) if floor => {
                        let d = pred.nrows();
                        spd_solve_right(&num, &(pred + Matrix::identity(d, d) * SMOOTHING_FLOOR), "Σ_{j|j−1}")
                            .map_err(|e| Error::Smoothing(e.to_string()))?
                    }
                    Err(_) => {
                        return Err(Error::Smoothing(format!(
                            "predicted covariance of task {j} is singular; add process noise or enable the floor"
                        )))
                    }
                };
                table.backward[j - 2] = Some(g.clone());
                g
            }
        };
        let next = table.get(j, t).expect("filled by the previous iteration").clone();
        let pred = table.predicted(j).clone();
        let filt = table.filtered(j - 1).clone();
        let mean = &filt.mean + &gain * (&next.mean - &pred.mean);
        let mut cov = &filt.cov + &gain * (&next.cov - &pred.cov) * gain.transpose();
        linalg::symmetrize(&mut cov);
        table.set(j - 1, t, GaussianBelief { mean, cov });
    }
    Ok(())
}

/// Filter followed by a backward pass for every horizon.
pub fn kf_smooth_all(model: &LgmModel, stream: &TaskStream, floor: bool) -> Result<SmootherTable> {
    let mut table = kf_run(model, stream)?;
    for t in 2..=table.horizon() {
        rts_smooth(&mut table, model, t, floor)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{sample_lgm, LgmStep};

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn belief1(m: f64, v: f64) -> GaussianBelief {
        GaussianBelief::new(Vector::from_element(1, m), scalar(v)).unwrap()
    }

    fn scalar_model(a: f64, q: f64, r: f64, mu: f64, s: f64) -> LgmModel {
        LgmModel::stationary(
            LgmStep {
                a: scalar(a),
                x: scalar(1.0),
                q: scalar(q),
                r: scalar(r),
            },
            Vector::from_element(1, mu),
            scalar(s),
        )
    }

    fn stream1(ys: &[f64]) -> TaskStream {
        let tasks = ys
            .iter()
            .map(|&y| crate::stream::ScalarTask::from_slice(&[1.0], y))
            .collect();
        TaskStream::explicit(tasks).unwrap()
    }

    #[test]
    fn uninformative_observation_keeps_prior() {
        let prior = GaussianBelief::new(Vector::from_vec(vec![1.0, -2.0]), Matrix::identity(2, 2) * 3.0).unwrap();
        let post = gaussian_condition(
            &prior,
            &Matrix::zeros(2, 1),
            &scalar(1.0),
            &Vector::from_element(1, 5.0),
        )
        .unwrap();
        assert_eq!(post, prior);
    }

    #[test]
    fn scalar_conditioning_by_hand() {
        let post = gaussian_condition(
            &belief1(0.0, 1.0),
            &scalar(1.0),
            &scalar(1.0),
            &Vector::from_element(1, 2.0),
        )
        .unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-15 && (post.cov[(0, 0)] - 0.5).abs() < 1e-15);
        let task = BlockTask::new(scalar(1.0), Vector::from_element(1, 2.0)).unwrap();
        let kf = kf_correct(&belief1(0.0, 1.0), &task, &scalar(1.0)).unwrap();
        assert!((kf.mean[0] - 1.0).abs() < 1e-15 && (kf.cov[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_innovation_is_a_conditioning_error() {
        let prior = GaussianBelief::new(Vector::zeros(1), scalar(0.0)).unwrap();
        let err = gaussian_condition(&prior, &scalar(1.0), &scalar(0.0), &Vector::zeros(1)).unwrap_err();
        assert!(matches!(err, Error::Conditioning(_)));
    }

    #[test]
    fn correction_limits() {
        let prior = GaussianBelief::new(Vector::from_vec(vec![1.0, 2.0]), Matrix::identity(2, 2)).unwrap();
        let y = Vector::from_vec(vec![-3.0, 4.0]);
        let task = BlockTask::new(Matrix::identity(2, 2), y.clone()).unwrap();
        let vague = kf_correct(&prior, &task, &(Matrix::identity(2, 2) * 1e12)).unwrap();
        assert!((&vague.mean - &prior.mean).amax() < 1e-10);
        let sharp = kf_correct(&prior, &task, &(Matrix::identity(2, 2) * 1e-12)).unwrap();
        assert!((&sharp.mean - &y).amax() < 1e-10);
        assert!(sharp.cov.amax() < 2e-12);
    }

    #[test]
    fn prediction_examples() {
        let b = belief1(1.0, 1.0);
        let p = kf_predict(&b, &scalar(2.0), &scalar(1.0)).unwrap();
        assert_eq!((p.mean[0], p.cov[(0, 0)]), (2.0, 5.0));
        let same = kf_predict(&b, &scalar(1.0), &scalar(0.0)).unwrap();
        assert_eq!(same, b);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let cov = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b2 = GaussianBelief::new(Vector::zeros(2), cov.clone()).unwrap();
        let r = kf_predict(&b2, &rot, &Matrix::zeros(2, 2)).unwrap();
        assert!((r.trace() - cov.trace()).abs() < 1e-14);
    }

    #[test]
    fn conjugate_two_measurements() {
        let (mu, s) = (0.5, 2.0);
        let model = scalar_model(1.0, 0.0, 1.0, mu, s);
        let table = kf_run(&model, &stream1(&[1.0, 3.0])).unwrap();
        let expect = (mu / s + 1.0 + 3.0) / (1.0 / s + 2.0);
        assert!((table.filtered(2).mean[0] - expect).abs() < 1e-14);
        let single = kf_run(&model, &stream1(&[1.0])).unwrap();
        let direct = gaussian_condition(
            &belief1(mu, s),
            &scalar(1.0),
            &scalar(1.0),
            &Vector::from_element(1, 1.0),
        )
        .unwrap();
        assert!((&single.filtered(1).mean - &direct.mean).amax() < 1e-15);
    }

    #[test]
    fn smoothing_two_steps_by_hand() {
        // θ₂ = θ₁ + w, Σ₁ = 1, Q = 1, R = 1: joint covariance of (θ₁, y₁, y₂)
        let model = scalar_model(1.0, 1.0, 1.0, 0.0, 1.0);
        let mut table = kf_run(&model, &stream1(&[1.0, 2.0])).unwrap();
        rts_smooth(&mut table, &model, 2, false).unwrap();
        let s = table.get(1, 2).unwrap();
        // cov(θ₁, y) = [1, 1]; cov(y) = [[2, 1], [1, 3]]
        let cy = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let c = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let inv = cy.try_inverse().unwrap();
        let mean = (&c * &inv * Vector::from_vec(vec![1.0, 2.0]))[0];
        let var = 1.0 - (&c * &inv * c.transpose())[(0, 0)];
        assert!((s.mean[0] - mean).abs() < 1e-14);
        assert!((s.cov[(0, 0)] - var).abs() < 1e-14);
        assert!(table.is_complete());
    }

    #[test]
    fn exact_observations_pin_each_state() {
        let eps = 1e-9;
        let model = LgmModel::stationary(
            LgmStep {
                a: Matrix::identity(2, 2),
                x: Matrix::identity(2, 2),
                q: Matrix::identity(2, 2) * eps,
                r: Matrix::identity(2, 2) * eps,
            },
            Vector::zeros(2),
            Matrix::identity(2, 2),
        );
        let stream = sample_lgm(&model, 4, 9).unwrap();
        let table = kf_smooth_all(&model, &stream, false).unwrap();
        for (i, task) in stream.block_tasks().unwrap().iter().enumerate() {
            assert!((&table.get(i + 1, 4).unwrap().mean - &task.y).amax() < 1e-3);
        }
    }

    #[test]
    fn singular_prediction_needs_the_floor() {
        let model = LgmModel::stationary(
            LgmStep {
                a: Matrix::identity(2, 2),
                x: Matrix::from_column_slice(2, 1, &[1.0, 0.0]),
                q: Matrix::zeros(2, 2),
                r: scalar(1.0),
            },
            Vector::zeros(2),
            Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0])),
        );
        let stream = sample_lgm(&model, 2, 1).unwrap();
        let mut table = kf_run(&model, &stream).unwrap();
        let err = rts_smooth(&mut table, &model, 2, false);
        assert!(matches!(err, Err(Error::Smoothing(_))));
        assert!(rts_smooth(&mut table, &model, 2, true).is_ok());
    }

    #[test]
    fn horizon_one_smoothing_is_a_no_op() {
        let model = scalar_model(1.0, 1.0, 1.0, 0.0, 1.0);
        let mut table = kf_run(&model, &stream1(&[1.0])).unwrap();
        let before = table.filtered(1).clone();
        rts_smooth(&mut table, &model, 1, false).unwrap();
        assert_eq!(table.filtered(1), &before);
    }

    #[test]
    fn csv_layout() {
        let model = scalar_model(1.0, 1.0, 1.0, 0.0, 1.0);
        let table = kf_smooth_all(&model, &stream1(&[1.0, 2.0]), false).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("i,t,trace_cov,mean_0\n1,1,"));
        assert_eq!(text.lines().count(), 4);
    }
}
