//! Configuration-driven experiments with CSV artifacts and a pass/fail summary.
//!
//! A run is a pure function of its [`ExperimentConfig`]: trials use seeds
//! `seed + trial`, so identical configs produce byte-identical CSVs.

mod deep;
mod gaussian;
mod linear;
mod rls;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::deep::Activation;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::stream::{LgmModel, LgmStep};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    LmsIid,
    LmsRecurring,
    OptStepsize,
    ApaEquivalence,
    RlsBatch,
    RlsAveraging,
    RlsIclLimit,
    DrlsExpand,
    KfRls,
    RtsPbt,
    GpInvariance,
    EkfConsistency,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 12] = [
        ExperimentName::LmsIid,
        ExperimentName::LmsRecurring,
        ExperimentName::OptStepsize,
        ExperimentName::ApaEquivalence,
        ExperimentName::RlsBatch,
        ExperimentName::RlsAveraging,
        ExperimentName::RlsIclLimit,
        ExperimentName::DrlsExpand,
        ExperimentName::KfRls,
        ExperimentName::RtsPbt,
        ExperimentName::GpInvariance,
        ExperimentName::EkfConsistency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::LmsIid => "lms-iid",
            ExperimentName::LmsRecurring => "lms-recurring",
            ExperimentName::OptStepsize => "opt-stepsize",
            ExperimentName::ApaEquivalence => "apa-equivalence",
            ExperimentName::RlsBatch => "rls-batch",
            ExperimentName::RlsAveraging => "rls-averaging",
            ExperimentName::RlsIclLimit => "rls-icl-limit",
            ExperimentName::DrlsExpand => "drls-expand",
            ExperimentName::KfRls => "kf-rls",
            ExperimentName::RtsPbt => "rts-pbt",
            ExperimentName::GpInvariance => "gp-invariance",
            ExperimentName::EkfConsistency => "ekf-consistency",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentName::LmsIid => "LMS contraction on iid unit-sphere inputs (Monte-Carlo)",
            ExperimentName::LmsRecurring => "LMS distance and MSE bounds on 2-recurring tasks",
            ExperimentName::OptStepsize => "alternating stepsize reaches the solution at task 3",
            ExperimentName::ApaEquivalence => {
                "APA with unbounded buffer, ICL and ORFit all return the min-norm solution"
            }
            ExperimentName::RlsBatch => "recursive RLS against the batch weighted ridge solution",
            ExperimentName::RlsAveraging => "RLS averages two conflicting scalar tasks",
            ExperimentName::RlsIclLimit => "RLS with zero forgetting factor coincides with ICL",
            ExperimentName::DrlsExpand => "class-incremental RLS against its batch solution",
            ExperimentName::KfRls => "Kalman filter on a static state reproduces RLS",
            ExperimentName::RtsPbt => "positive backward transfer of the RTS smoother",
            ExperimentName::GpInvariance => "gradient projection keeps past features fixed at every layer",
            ExperimentName::EkfConsistency => "EKF equals KF on linear maps and approaches it as the prior tightens",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `(name, description)` for every experiment, in a fixed order.
pub fn list_experiments() -> Vec<(&'static str, &'static str)> {
    ExperimentName::ALL
        .iter()
        .map(|e| (e.as_str(), e.description()))
        .collect()
}

/// Row-major LGM used instead of random models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub a: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub mu1: Vec<f64>,
    pub sigma1: Vec<Vec<f64>>,
}

fn rows_to_matrix(rows: &[Vec<f64>], key: &str) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!(
            "stream.model.{key}: rows must be nonempty and of equal length"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(r, c, &flat))
}

impl ModelSpec {
    pub fn to_model(&self) -> Result<LgmModel> {
        let model = LgmModel::stationary(
            LgmStep {
                a: rows_to_matrix(&self.a, "a")?,
                x: rows_to_matrix(&self.x, "x")?,
                q: rows_to_matrix(&self.q, "q")?,
                r: rows_to_matrix(&self.r, "r")?,
            },
            Vector::from_vec(self.mu1.clone()),
            rows_to_matrix(&self.sigma1, "sigma1")?,
        );
        model
            .validate(0.0)
            .map_err(|e| Error::Config(format!("stream.model: {e}")))?;
        Ok(model)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamParams {
    pub d: Option<usize>,
    /// Number of tasks.
    pub t: Option<usize>,
    /// Recurrence period.
    pub p: Option<usize>,
    /// Measurements per task.
    pub m: Option<usize>,
    pub model: Option<ModelSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerParams {
    pub gamma: Option<f64>,
    /// Squared cosine between the two recurring inputs.
    pub c: Option<f64>,
    pub b: Option<usize>,
    pub beta: Option<f64>,
    pub betas: Option<Vec<f64>>,
    pub lambda: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub widths: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub energy_threshold: Option<f64>,
    pub line_search: Option<bool>,
    /// Prior variances for the EKF comparison.
    pub variances: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub experiment: ExperimentName,
    #[serde(default)]
    pub seed: u64,
    pub trials: Option<usize>,
    pub realizations: Option<usize>,
    #[serde(default)]
    pub stream: StreamParams,
    #[serde(default)]
    pub learner: LearnerParams,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Default configuration of an experiment.
    pub fn new(experiment: ExperimentName) -> Self {
        Self {
            version: CONFIG_VERSION,
            experiment,
            seed: 0,
            trials: None,
            realizations: None,
            stream: StreamParams::default(),
            learner: LearnerParams::default(),
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "version: expected {CONFIG_VERSION}, found {}",
                self.version
            )));
        }
        let positive = |key: &str, v: Option<usize>| match v {
            Some(0) => Err(Error::Config(format!("{key}: must be positive"))),
            _ => Ok(()),
        };
        positive("trials", self.trials)?;
        positive("stream.d", self.stream.d)?;
        positive("stream.t", self.stream.t)?;
        positive("stream.m", self.stream.m)?;
        if self.realizations.is_some_and(|r| r < 2) {
            return Err(Error::Config("realizations: at least 2 are needed".into()));
        }
        let l = &self.learner;
        if let Some(g) = l.gamma {
            if !(0.0..2.0).contains(&g) {
                return Err(Error::Config(format!("learner.gamma: {g} outside [0, 2)")));
            }
        }
        if let Some(c) = l.c {
            if !(0.0..1.0).contains(&c) {
                return Err(Error::Config(format!("learner.c: {c} outside [0, 1)")));
            }
        }
        for (key, v) in [("learner.beta", l.beta)] {
            if v.is_some_and(|b| !(b >= 0.0) || !b.is_finite()) {
                return Err(Error::Config(format!("{key}: must be finite and nonnegative")));
            }
        }
        if l.betas
            .as_ref()
            .is_some_and(|bs| bs.is_empty() || bs.iter().any(|b| !(*b >= 0.0) || !b.is_finite()))
        {
            return Err(Error::Config(
                "learner.betas: must be a nonempty list of nonnegative values".into(),
            ));
        }
        if l.lambda.is_some_and(|v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("learner.lambda: must be positive".into()));
        }
        if l.lambdas
            .as_ref()
            .is_some_and(|ls| ls.is_empty() || ls.iter().any(|v| !(*v > 0.0) || !v.is_finite()))
        {
            return Err(Error::Config(
                "learner.lambdas: must be a nonempty list of positive values".into(),
            ));
        }
        if l.widths.as_ref().is_some_and(|w| w.len() < 2 || w.contains(&0)) {
            return Err(Error::Config(
                "learner.widths: need at least two positive widths".into(),
            ));
        }
        if l.energy_threshold.is_some_and(|e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::Config("learner.energy_threshold: must lie in (0, 1]".into()));
        }
        if l.variances
            .as_ref()
            .is_some_and(|v| v.len() < 2 || v.iter().any(|s| !(*s > 0.0)))
        {
            return Err(Error::Config(
                "learner.variances: need at least two positive values".into(),
            ));
        }
        if let Some(m) = &self.stream.model {
            m.to_model()?;
        }
        Ok(())
    }
}

/// One checked property: passes when `value` satisfies the relation in its
/// name against `bound` within `tol`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    /// `value ≤ bound + tol`.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            tol,
            pass: value <= bound + tol,
        }
    }

    /// `value ≥ bound − tol`.
    pub fn at_least(name: impl Into<String>, value: f64, bound: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            tol,
            pass: value >= bound - tol,
        }
    }

    /// `value < bound`.
    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            tol: 0.0,
            pass: value < bound,
        }
    }

    /// `|value − bound| ≤ tol`.
    pub fn close(name: impl Into<String>, value: f64, bound: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            tol,
            pass: (value - bound).abs() <= tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: ExperimentName,
    pub pass: bool,
    pub checks: Vec<Check>,
}

impl Summary {
    fn new(experiment: ExperimentName, checks: Vec<Check>) -> Self {
        Self {
            experiment,
            pass: checks.iter().all(|c| c.pass),
            checks,
        }
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.pass)
    }
}

/// Summary plus CSV artifacts keyed by file name.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub summary: Summary,
    pub files: BTreeMap<String, String>,
    pub seconds: f64,
}

impl Outcome {
    /// Writes `summary.json` and every CSV into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        let json = serde_json::to_string_pretty(&self.summary)?;
        std::fs::write(dir.join("summary.json"), json + "\n")?;
        Ok(())
    }
}

/// Collects checks and CSV files while an experiment runs.
#[derive(Default)]
pub(crate) struct Recorder {
    checks: Vec<Check>,
    files: BTreeMap<String, String>,
}

impl Recorder {
    pub(crate) fn check(&mut self, c: Check) {
        if !c.pass {
            log::warn!(
                "check {} failed: value {:e}, bound {:e}, tol {:e}",
                c.name,
                c.value,
                c.bound,
                c.tol
            );
        }
        self.checks.push(c);
    }

    pub(crate) fn file(&mut self, name: &str, body: String) {
        self.files.insert(name.to_string(), body);
    }

    pub(crate) fn csv<F>(&mut self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.file(name, String::from_utf8(buf).expect("CSV output is UTF-8"));
        Ok(())
    }
}

/// Runs an experiment in memory.
pub fn run(config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    let start = Instant::now();
    let mut rec = Recorder::default();
    log::info!("running {} (seed {})", config.experiment, config.seed);
    match config.experiment {
        ExperimentName::LmsIid => linear::lms_iid(config, &mut rec)?,
        ExperimentName::LmsRecurring => linear::lms_recurring(config, &mut rec)?,
        ExperimentName::OptStepsize => linear::opt_stepsize(config, &mut rec)?,
        ExperimentName::ApaEquivalence => linear::apa_equivalence(config, &mut rec)?,
        ExperimentName::RlsBatch => rls::rls_batch(config, &mut rec)?,
        ExperimentName::RlsAveraging => rls::rls_averaging(config, &mut rec)?,
        ExperimentName::RlsIclLimit => rls::rls_icl_limit(config, &mut rec)?,
        ExperimentName::DrlsExpand => rls::drls_expand(config, &mut rec)?,
        ExperimentName::KfRls => gaussian::kf_rls(config, &mut rec)?,
        ExperimentName::RtsPbt => gaussian::rts_pbt(config, &mut rec)?,
        ExperimentName::GpInvariance => deep::gp_invariance(config, &mut rec)?,
        ExperimentName::EkfConsistency => gaussian::ekf_consistency(config, &mut rec)?,
    }
    let seconds = start.elapsed().as_secs_f64();
    log::info!("{} finished in {seconds:.3}s", config.experiment);
    Ok(Outcome {
        summary: Summary::new(config.experiment, rec.checks),
        files: rec.files,
        seconds,
    })
}

/// Runs an experiment and writes its artifacts to `out` (or the configured
/// output directory, if any).
pub fn run_to_dir(config: &ExperimentConfig, out: Option<&Path>) -> Result<Outcome> {
    let outcome = run(config)?;
    if let Some(dir) = out.or(config.output.as_deref()) {
        outcome.write_to(dir)?;
    }
    Ok(outcome)
}

/// Mean and standard error of a sample.
pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_stable() {
        let list = list_experiments();
        assert_eq!(list.len(), 12);
        assert_eq!(list[0].0, "lms-iid");
        assert!(list
            .iter()
            .any(|(n, d)| *n == "rts-pbt" && d.contains("positive backward transfer")));
        assert!(list.iter().any(|(n, _)| *n == "kf-rls"));
        for e in ExperimentName::ALL {
            let json = serde_json::to_string(&e).unwrap();
            assert_eq!(json, format!("\"{}\"", e.as_str()));
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_json(r#"{"version":1,"experiment":"kf-rls","sede":3}"#).unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
        let err =
            ExperimentConfig::from_json(r#"{"version":1,"experiment":"kf-rls","learner":{"gama":1}}"#).unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
    }

    #[test]
    fn invalid_values_are_named() {
        let err = ExperimentConfig::from_json(r#"{"version":2,"experiment":"kf-rls"}"#).unwrap_err();
        assert!(err.to_string().contains("version"));
        let err =
            ExperimentConfig::from_json(r#"{"version":1,"experiment":"lms-iid","learner":{"gamma":2.5}}"#).unwrap_err();
        assert!(err.to_string().contains("learner.gamma"));
        let err = ExperimentConfig::from_json(r#"{"version":1,"experiment":"nope"}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn checks_relations() {
        assert!(Check::at_most("a", 1.0, 1.0, 0.0).pass);
        assert!(!Check::at_most("a", 1.1, 1.0, 0.05).pass);
        assert!(Check::at_least("b", -1e-10, 0.0, 1e-9).pass);
        assert!(!Check::below("c", 1.0, 1.0).pass);
        assert!(Check::close("d", 1.8, 1.8000001, 1e-5).pass);
        assert!(!Check::at_most("nan", f64::NAN, 1.0, 1.0).pass);
    }

    #[test]
    fn mean_and_standard_error() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn every_experiment_passes_with_defaults() {
        for e in ExperimentName::ALL {
            let out = run(&ExperimentConfig::new(e)).unwrap();
            assert!(out.summary.pass, "{e}: {:?}", out.summary.first_failure());
            assert!(!out.files.is_empty(), "{e} wrote no files");
            eprintln!("{e}: {:.3}s", out.seconds);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        for e in [
            ExperimentName::LmsRecurring,
            ExperimentName::RtsPbt,
            ExperimentName::GpInvariance,
        ] {
            let mut cfg = ExperimentConfig::new(e);
            cfg.seed = 11;
            cfg.trials = Some(3);
            let a = run(&cfg).unwrap();
            let b = run(&cfg).unwrap();
            assert_eq!(a.files, b.files, "{e}");
        }
    }
}
