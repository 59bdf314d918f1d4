//! Extended Kalman filter: the linear steps applied to Jacobians of
//! nonlinear transition and measurement maps.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

use super::{kf_predict, GaussianBelief};

/// A vector-valued map with a Jacobian (rows = output dimension).
pub trait VectorFn {
    fn eval(&self, theta: &Vector) -> Vector;

    /// Central finite differences unless overridden.
    fn jacobian(&self, theta: &Vector) -> Matrix {
        linalg::central_jacobian(|t| self.eval(t), theta)
    }
}

type MapFn = Box<dyn Fn(&Vector) -> Vector>;
type JacFn = Box<dyn Fn(&Vector) -> Matrix>;

pub struct FnMap {
    f: MapFn,
    jac: Option<JacFn>,
}

impl FnMap {
    pub fn new(f: impl Fn(&Vector) -> Vector + 'static) -> Self {
        Self {
            f: Box::new(f),
            jac: None,
        }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&Vector) -> Matrix + 'static) -> Self {
        self.jac = Some(Box::new(jac));
        self
    }

    /// `θ ↦ Mθ` with its exact Jacobian.
    pub fn linear(m: Matrix) -> Self {
        let j = m.clone();
        Self::new(move |t| &m * t).with_jacobian(move |_| j.clone())
    }
}

impl VectorFn for FnMap {
    fn eval(&self, theta: &Vector) -> Vector {
        (self.f)(theta)
    }

    fn jacobian(&self, theta: &Vector) -> Matrix {
        match &self.jac {
            Some(j) => j(theta),
            None => linalg::central_jacobian(|t| self.eval(t), theta),
        }
    }
}

/// `θ_{t+1|t} = g(θ_{t|t})`, covariance `Q + GΣGᵀ` with `G` the Jacobian at
/// the current mean.
pub fn ekf_predict(belief: &GaussianBelief, g: &dyn VectorFn, q: &Matrix) -> Result<GaussianBelief> {
    let jac = g.jacobian(&belief.mean);
    let mut out = kf_predict(belief, &jac, q)?;
    out.mean = g.eval(&belief.mean);
    if out.mean.len() != belief.dim() {
        return Err(Error::invalid("transition changes the state dimension"));
    }
    Ok(out)
}

/// Correction with the measurement `y = f(θ) + v`, linearized at the
/// predicted mean.
pub fn ekf_correct(belief: &GaussianBelief, f: &dyn VectorFn, r: &Matrix, y: &Vector) -> Result<GaussianBelief> {
    let x = f.jacobian(&belief.mean).transpose();
    if x.nrows() != belief.dim() || x.ncols() != y.len() || r.shape() != (y.len(), y.len()) {
        return Err(Error::invalid("measurement shapes do not match the belief"));
    }
    let k = super::kalman_gain(&belief.cov, &x, r)?;
    let mean = &belief.mean - &k * (f.eval(&belief.mean) - y);
    let mut cov = &belief.cov - &k * x.tr_mul(&belief.cov);
    linalg::symmetrize(&mut cov);
    Ok(GaussianBelief { mean, cov })
}

/// Prediction through `g` followed by correction through `f`.
pub fn ekf_step(
    belief: &GaussianBelief,
    g: &dyn VectorFn,
    f: &dyn VectorFn,
    q: &Matrix,
    r: &Matrix,
    y: &Vector,
) -> Result<GaussianBelief> {
    let pred = ekf_predict(belief, g, q)?;
    ekf_correct(&pred, f, r, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::kf_correct;
    use crate::stream::BlockTask;

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn linear_maps_reproduce_the_kalman_filter() {
        let a = Matrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
        let x = Matrix::from_row_slice(2, 1, &[1.0, -0.5]);
        let q = Matrix::identity(2, 2) * 0.1;
        let r = s(0.5);
        let y = Vector::from_element(1, 0.7);
        let prior = GaussianBelief::new(Vector::from_vec(vec![0.3, -1.0]), Matrix::identity(2, 2)).unwrap();
        let ekf = ekf_step(
            &prior,
            &FnMap::linear(a.clone()),
            &FnMap::linear(x.transpose()),
            &q,
            &r,
            &y,
        )
        .unwrap();
        let kf = kf_correct(&kf_predict(&prior, &a, &q).unwrap(), &BlockTask::new(x, y).unwrap(), &r).unwrap();
        assert!((&ekf.mean - &kf.mean).amax() < 1e-12);
        assert!((&ekf.cov - &kf.cov).amax() < 1e-12);
    }

    #[test]
    fn squared_transition_by_hand() {
        let prior = GaussianBelief::new(Vector::from_element(1, 2.0), s(0.3)).unwrap();
        let g = FnMap::new(|t| t.map(|v| v * v));
        let pred = ekf_predict(&prior, &g, &s(0.1)).unwrap();
        assert!((pred.mean[0] - 4.0).abs() < 1e-15);
        assert!((pred.cov[(0, 0)] - (0.1 + 16.0 * 0.3)).abs() < 1e-8);
    }

    #[test]
    fn sine_measurement_approaches_linear_filter() {
        let y = Vector::from_element(1, 0.5);
        let mut gaps = Vec::new();
        for var in [1e-2f64, 1e-4, 1e-6] {
            let prior = GaussianBelief::new(Vector::from_element(1, var.sqrt()), s(var)).unwrap();
            let ekf = ekf_correct(&prior, &FnMap::new(|t| t.map(f64::sin)), &s(1.0), &y).unwrap();
            let lin = ekf_correct(&prior, &FnMap::linear(s(1.0)), &s(1.0), &y).unwrap();
            gaps.push((ekf.mean[0] - lin.mean[0]).abs());
        }
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }
}
