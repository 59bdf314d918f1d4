//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use afcl_core::stream::{BlockTask, LgmModel, ScalarTask, TaskStream, Tasks};
use afcl_core::{Matrix, Vector};

/// Posterior `N(mean, cov)` of `θ_i` given `y_1..y_t`, by conditioning the
/// dense joint Gaussian of all states and measurements.
///
/// States are `θ = L w` with `w = (θ₁ − μ₁, w₂, …)` independent and
/// `L[i][k] = A^{i−k}`; measurements are `y_i = X_iᵀθ_i + v_i`.
pub fn dense_posterior(model: &LgmModel, stream: &TaskStream, i: usize, t: usize) -> (Vector, Matrix) {
    let d = model.dim();
    let blocks = block_tasks(stream);
    let n = t.max(i);
    let ms: Vec<usize> = (1..=t).map(|k| model.step(k).x.ncols()).collect();
    let m_total: usize = ms.iter().sum();

    let mut l = Matrix::zeros(d * n, d * n);
    for row in 1..=n {
        let mut power = Matrix::identity(d, d);
        for col in (1..=row).rev() {
            l.view_mut(((row - 1) * d, (col - 1) * d), (d, d)).copy_from(&power);
            if col > 1 {
                power = &power * &model.step(col).a;
            }
        }
    }
    let mut w_cov = Matrix::zeros(d * n, d * n);
    w_cov.view_mut((0, 0), (d, d)).copy_from(&model.sigma1);
    for k in 2..=n {
        w_cov
            .view_mut(((k - 1) * d, (k - 1) * d), (d, d))
            .copy_from(&model.step(k).q);
    }
    let theta_cov = &l * w_cov * l.transpose();
    let mut mean = Vector::zeros(d * n);
    let mut prev = model.mu1.clone();
    mean.rows_mut(0, d).copy_from(&prev);
    for k in 2..=n {
        prev = &model.step(k).a * prev;
        mean.rows_mut((k - 1) * d, d).copy_from(&prev);
    }

    // H maps all states to the first t measurements
    let mut h = Matrix::zeros(m_total, d * n);
    let mut r = Matrix::zeros(m_total, m_total);
    let mut y = Vector::zeros(m_total);
    let mut off = 0;
    for k in 1..=t {
        let m = ms[k - 1];
        h.view_mut((off, (k - 1) * d), (m, d))
            .copy_from(&model.step(k).x.transpose());
        r.view_mut((off, off), (m, m)).copy_from(&model.step(k).r);
        y.rows_mut(off, m).copy_from(&blocks[k - 1].y);
        off += m;
    }
    let s = &h * &theta_cov * h.transpose() + r;
    let cross = &theta_cov * h.transpose();
    let s_inv = s.try_inverse().expect("measurement covariance is invertible");
    let post_mean = &mean + &cross * &s_inv * (y - &h * &mean);
    let post_cov = &theta_cov - &cross * &s_inv * cross.transpose();
    let rows = (i - 1) * d;
    (
        post_mean.rows(rows, d).into_owned(),
        post_cov.view((rows, rows), (d, d)).into_owned(),
    )
}

pub fn block_tasks(stream: &TaskStream) -> Vec<BlockTask> {
    match &stream.tasks {
        Tasks::Block(b) => b.clone(),
        Tasks::Scalar(s) => s
            .iter()
            .map(|t| {
                BlockTask::new(
                    Matrix::from_column_slice(t.x.len(), 1, t.x.as_slice()),
                    Vector::from_element(1, t.y),
                )
                .unwrap()
            })
            .collect(),
    }
}

/// `argmin λ‖θ‖² + Σ_i (y_i − x_iᵀθ)²/β^i` through the normal equations.
pub fn ridge_normal_equations(tasks: &[ScalarTask], d: usize, beta: f64, lambda: f64) -> Vector {
    let mut a = Matrix::identity(d, d) * lambda;
    let mut b = Vector::zeros(d);
    for (k, t) in tasks.iter().enumerate() {
        let w = beta.powi(-(k as i32 + 1));
        a += &t.x * t.x.transpose() * w;
        b += &t.x * (t.y * w);
    }
    a.cholesky().expect("ridge system is positive definite").solve(&b)
}

/// Min-norm solution of `Xᵀθ = y` through the pseudoinverse.
pub fn pinv_solution(tasks: &[ScalarTask], d: usize) -> Vector {
    let x = Matrix::from_fn(d, tasks.len(), |r, c| tasks[c].x[r]);
    let y = Vector::from_iterator(tasks.len(), tasks.iter().map(|t| t.y));
    let xt = x.transpose();
    xt.pseudo_inverse(1e-12).expect("pseudoinverse") * y
}

/// Orthogonal projector onto the complement of the span of the inputs,
/// `I − X X⁺`.
pub fn complement_projector(tasks: &[ScalarTask], d: usize) -> Matrix {
    if tasks.is_empty() {
        return Matrix::identity(d, d);
    }
    let x = Matrix::from_fn(d, tasks.len(), |r, c| tasks[c].x[r]);
    let pinv = x.clone().pseudo_inverse(1e-12).expect("pseudoinverse");
    Matrix::identity(d, d) - x * pinv
}
