//! Feedforward networks for layer-wise gradient projection.
//!
//! The network maps `x ∈ R^{d_0}` through `f^ℓ(x) = σ(Θ_ℓᵀ f^{ℓ−1}(x))` with
//! `Θ_ℓ ∈ R^{d_{ℓ−1}×d_ℓ}` and `f^0(x) = x`. The activation is applied on every
//! layer, including the last.

mod gp;
mod linearize;

pub use gp::{
    feature_deviations, gp_lowrank_step, gp_step, gp_step_line_search, lowrank_projector, write_invariance_csv,
    FeatureProjectors, GpOutcome, InvarianceRow,
};
pub use linearize::{
    linearize_model, linearized_icl_run, AffinePredictor, FnPredictor, LinearizedRun, NonlinearTask, Predictor,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::stream::gaussian_matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative; ReLU uses the subgradient 0 at exactly 0.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Matrix>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(layers: Vec<Matrix>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].ncols() != w[1].nrows() {
                return Err(Error::invalid("consecutive layer shapes do not chain"));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Gaussian weights scaled by `1/√d_{ℓ−1}`.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("network needs at least two positive widths"));
        }
        let layers = dims
            .windows(2)
            .map(|w| gaussian_matrix(rng, w[0], w[1]) / (w[0] as f64).sqrt())
            .collect();
        Self::new(layers, activation)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Widths `d_0, …, d_L`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].nrows())
            .chain(self.layers.iter().map(|l| l.ncols()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    /// Features `f^0(x), …, f^L(x)`.
    pub fn forward_features(&self, x: &Vector) -> Result<Vec<Vector>> {
        Ok(self.forward_with_preactivations(x)?.0)
    }

    fn forward_with_preactivations(&self, x: &Vector) -> Result<(Vec<Vector>, Vec<Vector>)> {
        if x.len() != self.layers[0].nrows() {
            return Err(Error::invalid(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.layers[0].nrows()
            )));
        }
        let mut feats = Vec::with_capacity(self.depth() + 1);
        let mut pre = Vec::with_capacity(self.depth());
        feats.push(x.clone());
        for theta in &self.layers {
            let z = theta.tr_mul(feats.last().expect("nonempty"));
            feats.push(z.map(|v| self.activation.apply(v)));
            pre.push(z);
        }
        Ok((feats, pre))
    }

    pub fn output(&self, x: &Vector) -> Result<Vector> {
        Ok(self.forward_features(x)?.pop().expect("nonempty"))
    }

    /// Squared error `‖f(x) − y‖²`.
    pub fn loss(&self, x: &Vector, y: &Vector) -> Result<f64> {
        let out = self.output(x)?;
        if out.len() != y.len() {
            return Err(Error::invalid("target dimension does not match the network output"));
        }
        Ok((out - y).norm_squared())
    }

    /// Partial gradients `Δ^ℓ = ∂‖f(x) − y‖²/∂Θ_ℓ` by backpropagation.
    pub fn gradients(&self, x: &Vector, y: &Vector) -> Result<Vec<Matrix>> {
        let (feats, pre) = self.forward_with_preactivations(x)?;
        let out = feats.last().expect("nonempty");
        if out.len() != y.len() {
            return Err(Error::invalid("target dimension does not match the network output"));
        }
        let act = self.activation;
        let mut grads = vec![Matrix::zeros(0, 0); self.depth()];
        let mut delta = (out - y) * 2.0;
        for l in (0..self.depth()).rev() {
            delta.zip_apply(&pre[l], |d, z| *d *= act.derivative(z));
            grads[l] = &feats[l] * delta.transpose();
            if l > 0 {
                delta = &self.layers[l] * &delta;
            }
        }
        Ok(grads)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            dims: self.dims(),
            activation: self.activation,
            layers: self
                .layers
                .iter()
                .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.layers.len() + 1 != c.dims.len() {
            return Err(Error::invalid("checkpoint dims and layers disagree"));
        }
        let mut layers = Vec::with_capacity(c.layers.len());
        for (k, rows) in c.layers.iter().enumerate() {
            let (r, q) = (c.dims[k], c.dims[k + 1]);
            if rows.len() != r || rows.iter().any(|row| row.len() != q) {
                return Err(Error::invalid(format!(
                    "checkpoint layer {} has the wrong shape",
                    k + 1
                )));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            layers.push(Matrix::from_row_slice(r, q, &flat));
        }
        Self::new(layers, c.activation)
    }
}

/// JSON checkpoint: widths, activation name and row-major layer matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Vec<Vec<f64>>>,
}
