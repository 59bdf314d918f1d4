//! Error matrix, mean squared error and forgetting of a learner trajectory.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::stream::{TaskStream, Tasks};

/// Models `θ⁰, θ¹, …, θ^T` recorded after each task (index 0 is the initial model).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelTrajectory {
    pub thetas: Vec<Vector>,
}

impl ModelTrajectory {
    pub fn new(initial: Vector) -> Self {
        Self { thetas: vec![initial] }
    }

    pub fn push(&mut self, theta: Vector) {
        self.thetas.push(theta);
    }

    /// Number of learned tasks `T` (one less than the number of models).
    pub fn tasks(&self) -> usize {
        self.thetas.len().saturating_sub(1)
    }

    pub fn dim(&self) -> usize {
        self.thetas.first().map_or(0, |t| t.len())
    }

    pub fn last(&self) -> &Vector {
        self.thetas.last().expect("trajectory holds at least the initial model")
    }

    /// CSV `t,theta_0,...,theta_{d-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for k in 0..self.dim() {
            write!(w, ",theta_{k}")?;
        }
        writeln!(w)?;
        for (t, theta) in self.thetas.iter().enumerate() {
            write!(w, "{t}")?;
            for v in theta.iter() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// `ε_ij` for tasks `i = 1..T` (rows) and models `j = 0..T` (columns).
///
/// For block tasks the entry is the 2-norm of the residual vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMatrix {
    entries: Matrix,
}

impl ErrorMatrix {
    pub fn from_entries(entries: Matrix) -> Result<Self> {
        if entries.ncols() != entries.nrows() + 1 {
            return Err(Error::invalid("error matrix must be T x (T+1)"));
        }
        Ok(Self { entries })
    }

    pub fn tasks(&self) -> usize {
        self.entries.nrows()
    }

    /// `ε_ij` with 1-based task index `i` and model index `j ≥ 0`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i - 1, j)]
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    /// A-priori error of each task: `ε_{t,t−1}`.
    pub fn a_priori(&self) -> Vec<f64> {
        (1..=self.tasks()).map(|t| self.get(t, t - 1)).collect()
    }

    fn check_index(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.tasks() {
            return Err(Error::invalid(format!("task index {t} outside 1..={}", self.tasks())));
        }
        Ok(())
    }

    /// CSV `i,j,eps`, one row per entry.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,j,eps")?;
        for i in 1..=self.tasks() {
            for j in 0..=self.tasks() {
                writeln!(w, "{i},{j},{}", self.get(i, j))?;
            }
        }
        Ok(())
    }

    /// CSV `t,mse,forgetting`; forgetting is left empty at `t = 1`.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,mse,forgetting")?;
        for t in 1..=self.tasks() {
            let e = mse(self, t)?;
            match forgetting(self, t) {
                Ok(f) => writeln!(w, "{t},{e},{f}")?,
                Err(_) => writeln!(w, "{t},{e},")?,
            }
        }
        Ok(())
    }
}

pub fn error_matrix(traj: &ModelTrajectory, stream: &TaskStream) -> Result<ErrorMatrix> {
    let n = stream.len();
    if traj.thetas.len() != n + 1 {
        return Err(Error::invalid(format!(
            "trajectory has {} models for {n} tasks",
            traj.thetas.len()
        )));
    }
    if traj.thetas.iter().any(|t| t.len() != stream.d) {
        return Err(Error::invalid("model dimension does not match the stream"));
    }
    let mut entries = Matrix::zeros(n, n + 1);
    match &stream.tasks {
        Tasks::Scalar(tasks) => {
            for (i, task) in tasks.iter().enumerate() {
                for (j, theta) in traj.thetas.iter().enumerate() {
                    entries[(i, j)] = task.y - task.x.dot(theta);
                }
            }
        }
        Tasks::Block(tasks) => {
            for (i, task) in tasks.iter().enumerate() {
                for (j, theta) in traj.thetas.iter().enumerate() {
                    entries[(i, j)] = (&task.y - task.x.tr_mul(theta)).norm();
                }
            }
        }
    }
    Ok(ErrorMatrix { entries })
}

/// `E_t = (1/t) Σ_{i≤t} ε_{it}²`.
pub fn mse(em: &ErrorMatrix, t: usize) -> Result<f64> {
    em.check_index(t)?;
    let sum: f64 = (1..=t).map(|i| em.get(i, t).powi(2)).sum();
    Ok(sum / t as f64)
}

/// `F_t = (1/(t−1)) Σ_{i<t} (ε_{it}² − ε_{ii}²)`, signed (negative values
/// indicate backward transfer).
pub fn forgetting(em: &ErrorMatrix, t: usize) -> Result<f64> {
    if t < 2 {
        return Err(Error::invalid("forgetting is undefined before the second task"));
    }
    em.check_index(t)?;
    let sum: f64 = (1..t).map(|i| em.get(i, t).powi(2) - em.get(i, i).powi(2)).sum();
    Ok(sum / (t - 1) as f64)
}
