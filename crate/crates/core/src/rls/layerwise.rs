//! Layer-wise RLS for feedforward networks.
//!
//! Every layer keeps an inverse Hessian `Φ^ℓ` over its input features in
//! place of the GP projector. Memory is one `d_{ℓ−1} × d_{ℓ−1}` matrix per
//! layer.

use crate::deep::Mlp;
use crate::error::{Error, Result};
use crate::linalg::Vector;

use super::InverseHessian;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerStep {
    /// `Θ_ℓ ← Θ_ℓ − γ λΦ^ℓ Δ^ℓ`, then `Φ^ℓ` absorbs the new anchor features.
    /// With β = 0 this is GP with exact projectors.
    Fixed(f64),
    /// `Θ_ℓ ← Θ_ℓ − Φ^ℓ_{t−1} Δ^ℓ / (2(β^t + aᵀΦ^ℓ_{t−1}a))` with `a` the layer
    /// input before the update. For a single linear layer this is RLS.
    Rls,
}

#[derive(Clone, Debug)]
pub struct LayerwiseRls {
    pub hessians: Vec<InverseHessian>,
    pub step: LayerStep,
}

impl LayerwiseRls {
    pub fn new(net: &Mlp, beta: f64, lambda: f64, step: LayerStep) -> Result<Self> {
        if let LayerStep::Fixed(g) = step {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::invalid(format!("stepsize {g} must be finite and nonnegative")));
            }
        }
        let dims = net.dims();
        let hessians = dims[..dims.len() - 1]
            .iter()
            .map(|&d| InverseHessian::new(d, beta, lambda))
            .collect::<Result<_>>()?;
        Ok(Self { hessians, step })
    }

    /// Number of stored matrix entries, `Σ_ℓ d_{ℓ−1}²`.
    pub fn memory(&self) -> usize {
        self.hessians.iter().map(|h| h.dim() * h.dim()).sum()
    }

    fn absorb(h: &mut InverseHessian, a: &Vector) -> Result<Option<super::RankOne>> {
        if h.is_dependent(a) {
            h.skip();
            Ok(None)
        } else {
            h.update(a).map(Some)
        }
    }

    pub fn train_step(&mut self, net: &mut Mlp, x: &Vector, y: &Vector) -> Result<()> {
        if self.hessians.len() != net.depth() {
            return Err(Error::invalid("layer-wise RLS state does not match the network"));
        }
        let grads = net.gradients(x, y)?;
        match self.step {
            LayerStep::Fixed(gamma) => {
                for ((theta, g), h) in net.layers.iter_mut().zip(&grads).zip(&self.hessians) {
                    *theta -= h.apply(g) * (gamma * h.lambda());
                }
                let feats = net.forward_features(x)?;
                for (h, a) in self.hessians.iter_mut().zip(&feats) {
                    Self::absorb(h, a)?;
                }
            }
            LayerStep::Rls => {
                let feats = net.forward_features(x)?;
                for (l, h) in self.hessians.iter_mut().enumerate() {
                    let a = &feats[l];
                    // Δ^ℓ = a δᵀ, so Φ Δ = (Φa) δᵀ
                    let Some(r) = Self::absorb(h, a)? else { continue };
                    let n2 = a.norm_squared();
                    if n2 == 0.0 {
                        continue;
                    }
                    let delta = grads[l].tr_mul(a) / n2;
                    net.layers[l] -= (&r.phi_x * delta.transpose()) / (2.0 * r.denom);
                }
            }
        }
        Ok(())
    }
}

/// Trains `net` on the samples in order, one layer-wise RLS step each.
pub fn layerwise_rls_train(
    net: &Mlp,
    samples: &[(Vector, Vector)],
    beta: f64,
    lambda: f64,
    step: LayerStep,
) -> Result<Mlp> {
    let mut out = net.clone();
    let mut state = LayerwiseRls::new(net, beta, lambda, step)?;
    for (k, (x, y)) in samples.iter().enumerate() {
        state.train_step(&mut out, x, y).map_err(|e| e.at_task(k + 1))?;
    }
    Ok(out)
}
