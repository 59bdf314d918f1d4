//! Synthetic task streams and their line-delimited JSON form.
//!
//! A stream is an ordered list of regression tasks, either single samples
//! `(x, y)` or blocks `(X, y)`, tagged with how it was produced and with the
//! ground truth it was produced from. Generators are pure functions of their
//! seed.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarTask {
    pub x: Vector,
    pub y: f64,
}

impl ScalarTask {
    pub fn new(x: Vector, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_slice(x: &[f64], y: f64) -> Self {
        Self::new(Vector::from_column_slice(x), y)
    }
}

/// `m` samples at once: the columns of `x` are inputs, `y` their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTask {
    pub x: Matrix,
    pub y: Vector,
}

impl BlockTask {
    pub fn new(x: Matrix, y: Vector) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::invalid("block task needs at least one sample"));
        }
        if x.ncols() != y.len() {
            return Err(Error::invalid(format!(
                "block task has {} inputs but {} targets",
                x.ncols(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn samples(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamMode {
    IidSphere,
    PRecurring,
    Lgm,
    Explicit,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroundTruth {
    None,
    ThetaStar(Vector),
    Trajectory(Vec<Vector>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tasks {
    Scalar(Vec<ScalarTask>),
    Block(Vec<BlockTask>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    pub mode: StreamMode,
    pub seed: u64,
    pub d: usize,
    /// Period of a recurring stream.
    pub period: Option<usize>,
    pub tasks: Tasks,
    pub truth: GroundTruth,
}

impl TaskStream {
    /// A hand-specified stream of single-sample tasks.
    pub fn explicit(tasks: Vec<ScalarTask>) -> Result<Self> {
        let d = uniform_dim(&tasks)?;
        Ok(Self {
            mode: StreamMode::Explicit,
            seed: 0,
            d,
            period: None,
            tasks: Tasks::Scalar(tasks),
            truth: GroundTruth::None,
        })
    }

    pub fn len(&self) -> usize {
        match &self.tasks {
            Tasks::Scalar(t) => t.len(),
            Tasks::Block(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scalar_tasks(&self) -> Result<&[ScalarTask]> {
        match &self.tasks {
            Tasks::Scalar(t) => Ok(t),
            Tasks::Block(_) => Err(Error::invalid("expected a stream of single-sample tasks")),
        }
    }

    pub fn block_tasks(&self) -> Result<&[BlockTask]> {
        match &self.tasks {
            Tasks::Block(t) => Ok(t),
            Tasks::Scalar(_) => Err(Error::invalid("expected a stream of block tasks")),
        }
    }

    pub fn theta_star(&self) -> Option<&Vector> {
        match &self.truth {
            GroundTruth::ThetaStar(t) => Some(t),
            _ => None,
        }
    }

    pub fn trajectory(&self) -> Option<&[Vector]> {
        match &self.truth {
            GroundTruth::Trajectory(t) => Some(t),
            _ => None,
        }
    }

    /// Inputs of the first `t` single-sample tasks as a d×t matrix.
    pub fn input_matrix(&self, t: usize) -> Result<Matrix> {
        let tasks = self.scalar_tasks()?;
        let xs: Vec<Vector> = tasks[..t].iter().map(|k| k.x.clone()).collect();
        Ok(linalg::columns(&xs, self.d))
    }

    pub fn targets(&self, t: usize) -> Result<Vector> {
        let tasks = self.scalar_tasks()?;
        Ok(Vector::from_iterator(t, tasks[..t].iter().map(|k| k.y)))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            mode: self.mode,
            seed: self.seed,
            d: self.d,
            p: self.period,
            theta_star: self.theta_star().map(|v| v.as_slice().to_vec()),
            trajectory: self
                .trajectory()
                .map(|tr| tr.iter().map(|v| v.as_slice().to_vec()).collect()),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        match &self.tasks {
            Tasks::Scalar(tasks) => {
                for (i, task) in tasks.iter().enumerate() {
                    let rec = TaskRecord {
                        t: i + 1,
                        x: RecordInput::Vector(task.x.as_slice().to_vec()),
                        y: RecordTarget::Scalar(task.y),
                    };
                    serde_json::to_writer(&mut w, &rec)?;
                    w.write_all(b"\n")?;
                }
            }
            Tasks::Block(tasks) => {
                for (i, task) in tasks.iter().enumerate() {
                    let cols = task.x.column_iter().map(|c| c.iter().copied().collect()).collect();
                    let rec = TaskRecord {
                        t: i + 1,
                        x: RecordInput::Columns(cols),
                        y: RecordTarget::Vector(task.y.as_slice().to_vec()),
                    };
                    serde_json::to_writer(&mut w, &rec)?;
                    w.write_all(b"\n")?;
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()));
        let first = lines.next().ok_or_else(|| Error::invalid("stream file is empty"))??;
        let header: Header = serde_json::from_str(&first)?;
        let truth = match (header.theta_star, header.trajectory) {
            (Some(_), Some(_)) => return Err(Error::invalid("header carries both theta_star and trajectory")),
            (Some(t), None) => GroundTruth::ThetaStar(Vector::from_vec(t)),
            (None, Some(tr)) => GroundTruth::Trajectory(tr.into_iter().map(Vector::from_vec).collect()),
            (None, None) => GroundTruth::None,
        };
        let mut scalar = Vec::new();
        let mut block = Vec::new();
        for (k, line) in lines.enumerate() {
            let rec: TaskRecord = serde_json::from_str(&line?)?;
            if rec.t != k + 1 {
                return Err(Error::invalid(format!(
                    "task record {} out of order (expected t = {})",
                    rec.t,
                    k + 1
                )));
            }
            match (rec.x, rec.y) {
                (RecordInput::Vector(x), RecordTarget::Scalar(y)) => {
                    if x.len() != header.d {
                        return Err(Error::invalid(format!("task {} has wrong dimension", rec.t)));
                    }
                    scalar.push(ScalarTask::new(Vector::from_vec(x), y));
                }
                (RecordInput::Columns(cols), RecordTarget::Vector(y)) => {
                    let xs: Vec<Vector> = cols.into_iter().map(Vector::from_vec).collect();
                    if xs.iter().any(|c| c.len() != header.d) {
                        return Err(Error::invalid(format!("task {} has wrong dimension", rec.t)));
                    }
                    block.push(BlockTask::new(linalg::columns(&xs, header.d), Vector::from_vec(y))?);
                }
                _ => return Err(Error::invalid(format!("task {} mixes vector and block fields", rec.t))),
            }
        }
        let tasks = match (scalar.is_empty(), block.is_empty()) {
            (_, true) => Tasks::Scalar(scalar),
            (true, false) => Tasks::Block(block),
            (false, false) => return Err(Error::invalid("stream mixes scalar and block tasks")),
        };
        Ok(Self {
            mode: header.mode,
            seed: header.seed,
            d: header.d,
            period: header.p,
            tasks,
            truth,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    mode: StreamMode,
    seed: u64,
    d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trajectory: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskRecord {
    t: usize,
    x: RecordInput,
    y: RecordTarget,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RecordInput {
    Vector(Vec<f64>),
    Columns(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RecordTarget {
    Scalar(f64),
    Vector(Vec<f64>),
}

fn uniform_dim(tasks: &[ScalarTask]) -> Result<usize> {
    let d = tasks.first().map(|t| t.x.len()).unwrap_or(0);
    if tasks.iter().any(|t| t.x.len() != d) {
        return Err(Error::invalid("tasks have mixed input dimensions"));
    }
    Ok(d)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Uniform draw from the unit sphere in `R^d` (normalized standard Gaussian).
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vector {
    loop {
        let g = gaussian_vector(rng, d);
        let n = g.norm();
        if n > 1e-300 {
            return g / n;
        }
    }
}

/// `count` tasks with inputs uniform on the unit sphere and noiseless targets
/// `y = xᵀθ*`.
pub fn generate_iid_sphere(d: usize, count: usize, theta_star: &Vector, seed: u64) -> Result<TaskStream> {
    if d == 0 || count == 0 {
        return Err(Error::invalid("dimension and task count must be positive"));
    }
    if theta_star.len() != d {
        return Err(Error::invalid("theta_star dimension mismatch"));
    }
    if theta_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("theta_star must be finite"));
    }
    let mut rng = seeded_rng(seed);
    let tasks = (0..count)
        .map(|_| {
            let x = unit_sphere(&mut rng, d);
            let y = x.dot(theta_star);
            ScalarTask::new(x, y)
        })
        .collect();
    Ok(TaskStream {
        mode: StreamMode::IidSphere,
        seed,
        d,
        period: None,
        tasks: Tasks::Scalar(tasks),
        truth: GroundTruth::ThetaStar(theta_star.clone()),
    })
}

/// Cycles through `base` so that `tasks[t] = base[t mod p]`.
///
/// When the base inputs are linearly independent their min-norm solution is
/// stored as θ*.
pub fn generate_recurring(base: &[ScalarTask], count: usize) -> Result<TaskStream> {
    if base.is_empty() {
        return Err(Error::invalid("recurring stream needs at least one base task"));
    }
    let d = uniform_dim(base)?;
    let tasks = (0..count).map(|t| base[t % base.len()].clone()).collect();
    let x = linalg::columns(&base.iter().map(|t| t.x.clone()).collect::<Vec<_>>(), d);
    let y = Vector::from_iterator(base.len(), base.iter().map(|t| t.y));
    let truth = match min_norm_solution(&x, &y) {
        Ok(theta) => GroundTruth::ThetaStar(theta),
        Err(_) => GroundTruth::None,
    };
    Ok(TaskStream {
        mode: StreamMode::PRecurring,
        seed: 0,
        d,
        period: Some(base.len()),
        tasks: Tasks::Scalar(tasks),
        truth,
    })
}

/// `X(XᵀX)⁻¹y`, the smallest-norm θ with `Xᵀθ = y`.
pub fn min_norm_solution(x: &Matrix, y: &Vector) -> Result<Vector> {
    if x.ncols() != y.len() {
        return Err(Error::invalid(format!(
            "{} constraints but {} targets",
            x.ncols(),
            y.len()
        )));
    }
    linalg::require_full_column_rank(x)?;
    linalg::project_affine(&Vector::zeros(x.nrows()), x, y)
}

/// One step of a linear Gaussian model: `θ_i = A θ_{i−1} + w`, `y_i = Xᵀθ_i + v`
/// with `w ~ N(0, Q)` and `v ~ N(0, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LgmStep {
    pub a: Matrix,
    pub x: Matrix,
    pub q: Matrix,
    pub r: Matrix,
}

/// Linear Gaussian model. A single step is reused for every task; otherwise
/// `steps[i - 1]` describes task `i` (its transition is ignored for `i = 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct LgmModel {
    pub steps: Vec<LgmStep>,
    pub mu1: Vector,
    pub sigma1: Matrix,
}

impl LgmModel {
    pub fn stationary(step: LgmStep, mu1: Vector, sigma1: Matrix) -> Self {
        Self {
            steps: vec![step],
            mu1,
            sigma1,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu1.len()
    }

    /// Parameters of task `i` (1-based).
    pub fn step(&self, i: usize) -> &LgmStep {
        if self.steps.len() == 1 {
            &self.steps[0]
        } else {
            &self.steps[i - 1]
        }
    }

    pub fn supports(&self, count: usize) -> bool {
        self.steps.len() == 1 || self.steps.len() >= count
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.steps.is_empty() {
            return Err(Error::InvalidModel("empty model".into()));
        }
        if self.sigma1.shape() != (d, d) {
            return Err(Error::InvalidModel("sigma1 shape".into()));
        }
        for (k, s) in self.steps.iter().enumerate() {
            let m = s.x.ncols();
            if s.a.shape() != (d, d) || s.q.shape() != (d, d) || s.x.nrows() != d || m == 0 || s.r.shape() != (m, m) {
                return Err(Error::InvalidModel(format!("step {} has inconsistent shapes", k + 1)));
            }
        }
        Ok(())
    }

    /// Shapes agree and every covariance is symmetric with eigenvalues
    /// `≥ floor` (use a negative floor to admit positive semidefinite ones).
    pub fn validate(&self, floor: f64) -> Result<()> {
        self.check_shapes()?;
        linalg::check_covariance(&self.sigma1, "sigma1", floor)?;
        for (k, s) in self.steps.iter().enumerate() {
            linalg::check_covariance(&s.q, &format!("Q_{}", k + 1), floor)?;
            linalg::check_covariance(&s.r, &format!("R_{}", k + 1), floor)?;
        }
        Ok(())
    }
}

/// Random well-posed LGM: transition scaled to spectral norm 0.9, positive
/// definite `Q`, `R` and `Σ₁`, Gaussian measurement matrix with `m` columns.
pub fn random_lgm<R: Rng + ?Sized>(rng: &mut R, d: usize, m: usize) -> LgmModel {
    let g = gaussian_matrix(rng, d, d);
    let norm = g.clone().singular_values().max();
    let a = if norm > 0.0 { g * (0.9 / norm) } else { g };
    let spd = |rng: &mut R, n: usize, floor: f64| {
        let b = gaussian_matrix(rng, n, n);
        linalg::symmetrized(&(&b * b.transpose() / n as f64 + Matrix::identity(n, n) * floor))
    };
    let x = gaussian_matrix(rng, d, m);
    let q = spd(rng, d, 0.1);
    let r = spd(rng, m, 0.1);
    let mu1 = gaussian_vector(rng, d);
    let sigma1 = spd(rng, d, 0.5);
    LgmModel::stationary(LgmStep { a, x, q, r }, mu1, sigma1)
}

const PSD_FLOOR: f64 = -1e-12;

/// Draws one realization of `count` tasks; the realized states are stored
/// as the ground-truth trajectory.
///
/// Degenerate (zero) covariances are admitted so that noiseless limits can be
/// sampled exactly.
pub fn sample_lgm(model: &LgmModel, count: usize, seed: u64) -> Result<TaskStream> {
    model.validate(PSD_FLOOR)?;
    if !model.supports(count) {
        return Err(Error::InvalidModel(format!(
            "model describes {} steps, {count} requested",
            model.steps.len()
        )));
    }
    let d = model.dim();
    let mut rng = seeded_rng(seed);
    let mut states = Vec::with_capacity(count);
    let mut tasks = Vec::with_capacity(count);
    let sqrt_sigma1 = linalg::psd_sqrt(&model.sigma1);
    let mut theta = &model.mu1 + &sqrt_sigma1 * gaussian_vector(&mut rng, d);
    for i in 1..=count {
        let step = model.step(i);
        if i > 1 {
            theta = &step.a * &theta + linalg::psd_sqrt(&step.q) * gaussian_vector(&mut rng, d);
        }
        let m = step.x.ncols();
        let noise = linalg::psd_sqrt(&step.r) * gaussian_vector(&mut rng, m);
        let y = step.x.tr_mul(&theta) + noise;
        tasks.push(BlockTask::new(step.x.clone(), y)?);
        states.push(theta.clone());
    }
    Ok(TaskStream {
        mode: StreamMode::Lgm,
        seed,
        d,
        period: None,
        tasks: Tasks::Block(tasks),
        truth: GroundTruth::Trajectory(states),
    })
}
