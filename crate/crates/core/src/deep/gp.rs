//! Layer-wise gradient projection (GP).
//!
//! Each layer `ℓ` keeps a projector `P^{ℓ−1}` onto the orthogonal complement
//! of the anchor features `f^{ℓ−1}_{θ^i}(x_i)` of past tasks. The update
//! `Θ_ℓ ← Θ_ℓ − γ P^{ℓ−1} Δ^ℓ` then leaves every past anchor's features
//! unchanged at every layer.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector, DEPENDENCE_TOL};
use crate::projection::ProjectorState;

use super::Mlp;

/// Projectors for layers `0..L−1` together with the stored anchor features.
#[derive(Clone, Debug)]
pub struct FeatureProjectors {
    projectors: Vec<ProjectorState>,
    anchors: Vec<Vec<Vector>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpOutcome {
    Updated,
    /// Every projected direction vanished; parameters were left unchanged.
    Saturated,
}

impl FeatureProjectors {
    pub fn new(net: &Mlp) -> Self {
        let dims = net.dims();
        let inputs = &dims[..dims.len() - 1];
        Self {
            projectors: inputs.iter().map(|&d| ProjectorState::new(d)).collect(),
            anchors: vec![Vec::new(); inputs.len()],
        }
    }

    pub fn layers(&self) -> usize {
        self.projectors.len()
    }

    /// Projector over the input features of layer `ℓ + 1`.
    pub fn projector(&self, l: usize) -> &ProjectorState {
        &self.projectors[l]
    }

    pub fn anchors(&self, l: usize) -> &[Vector] {
        &self.anchors[l]
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.projectors.iter().map(|p| p.rank()).collect()
    }

    /// Stores `f^0, …, f^{L−1}` of a freshly learned task.
    pub fn ingest(&mut self, features: &[Vector]) {
        for (l, f) in features.iter().take(self.layers()).enumerate() {
            self.projectors[l].ingest(f);
            self.anchors[l].push(f.clone());
        }
    }

    /// Largest `‖P^ℓ a‖∞` over all stored anchors.
    pub fn max_anchor_residual(&self) -> f64 {
        self.projectors
            .iter()
            .zip(&self.anchors)
            .flat_map(|(p, anchors)| anchors.iter().map(move |a| p.apply(a).amax()))
            .fold(0.0, f64::max)
    }
}

fn check_shapes(net: &Mlp, proj: &FeatureProjectors) -> Result<()> {
    let dims = net.dims();
    if proj.layers() != net.depth() || proj.projectors.iter().zip(&dims).any(|(p, &d)| p.dim() != d) {
        return Err(Error::invalid("projectors do not match the network shape"));
    }
    Ok(())
}

/// `P^{ℓ−1} Δ^ℓ` for every layer, computed with the given projectors.
fn projected_directions(
    net: &Mlp,
    projectors: &[ProjectorState],
    x: &Vector,
    y: &Vector,
) -> Result<(Vec<Matrix>, bool)> {
    let grads = net.gradients(x, y)?;
    let mut saturated = true;
    let dirs: Vec<Matrix> = grads
        .iter()
        .zip(projectors)
        .map(|(g, p)| {
            let pg = p.apply_matrix(g);
            if pg.norm() > DEPENDENCE_TOL * g.norm() {
                saturated = false;
            }
            pg
        })
        .collect();
    Ok((dirs, saturated))
}

fn apply_directions(net: &mut Mlp, dirs: &[Matrix], gamma: f64) {
    for (theta, d) in net.layers.iter_mut().zip(dirs) {
        *theta -= d * gamma;
    }
}

fn finish(net: &Mlp, proj: &mut FeatureProjectors, x: &Vector) -> Result<()> {
    let feats = net.forward_features(x)?;
    proj.ingest(&feats);
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!(
            "stepsize {gamma} must be finite and nonnegative"
        )));
    }
    Ok(())
}

/// One GP update on the sample `(x, y)` with loss `‖f_θ(x) − y‖²`, followed
/// by ingestion of the new anchor features.
pub fn gp_step(net: &mut Mlp, proj: &mut FeatureProjectors, x: &Vector, y: &Vector, gamma: f64) -> Result<GpOutcome> {
    check_gamma(gamma)?;
    check_shapes(net, proj)?;
    let (dirs, saturated) = projected_directions(net, &proj.projectors, x, y)?;
    let outcome = if saturated {
        log::info!("GP projectors are saturated; parameters left unchanged");
        GpOutcome::Saturated
    } else {
        apply_directions(net, &dirs, gamma);
        GpOutcome::Updated
    };
    finish(net, proj, x)?;
    Ok(outcome)
}

/// GP step whose stepsize starts at `gamma` and is halved until the loss on
/// `(x, y)` strictly decreases. Returns the stepsize taken (0 if no halving
/// within `max_halvings` decreased the loss).
pub fn gp_step_line_search(
    net: &mut Mlp,
    proj: &mut FeatureProjectors,
    x: &Vector,
    y: &Vector,
    gamma: f64,
    max_halvings: usize,
) -> Result<(GpOutcome, f64)> {
    check_gamma(gamma)?;
    check_shapes(net, proj)?;
    let (dirs, saturated) = projected_directions(net, &proj.projectors, x, y)?;
    if saturated {
        finish(net, proj, x)?;
        return Ok((GpOutcome::Saturated, 0.0));
    }
    let base = net.loss(x, y)?;
    let mut g = gamma;
    let mut taken = 0.0;
    for _ in 0..=max_halvings {
        let mut trial = net.clone();
        apply_directions(&mut trial, &dirs, g);
        if trial.loss(x, y)? < base {
            *net = trial;
            taken = g;
            break;
        }
        g *= 0.5;
    }
    finish(net, proj, x)?;
    Ok((GpOutcome::Updated, taken))
}

/// Projector onto the complement of the leading left singular vectors of
/// `anchors`, keeping the fewest that capture `energy_threshold` of the
/// squared singular mass. A threshold of 1 keeps the exact span.
pub fn lowrank_projector(anchors: &[Vector], d: usize, energy_threshold: f64) -> Result<ProjectorState> {
    if !(energy_threshold > 0.0 && energy_threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "energy threshold {energy_threshold} outside (0, 1]"
        )));
    }
    if energy_threshold == 1.0 || anchors.is_empty() {
        let mut p = ProjectorState::new(d);
        for a in anchors {
            p.ingest(a);
        }
        return Ok(p);
    }
    let m = linalg::columns(anchors, d);
    let svd = m.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let mut basis = Vec::new();
    let mut mass = 0.0;
    for k in order {
        if total == 0.0 || mass >= energy_threshold * total {
            break;
        }
        mass += svd.singular_values[k].powi(2);
        basis.push(u.column(k).into_owned());
    }
    Ok(ProjectorState::from_basis(d, basis))
}

/// GP step with each layer's anchor span replaced by its truncated SVD.
/// Feature invariance no longer holds in general.
pub fn gp_lowrank_step(
    net: &mut Mlp,
    proj: &mut FeatureProjectors,
    x: &Vector,
    y: &Vector,
    gamma: f64,
    energy_threshold: f64,
) -> Result<GpOutcome> {
    if energy_threshold == 1.0 {
        return gp_step(net, proj, x, y, gamma);
    }
    check_gamma(gamma)?;
    check_shapes(net, proj)?;
    let truncated = proj
        .anchors
        .iter()
        .zip(&proj.projectors)
        .map(|(a, p)| lowrank_projector(a, p.dim(), energy_threshold))
        .collect::<Result<Vec<_>>>()?;
    let (dirs, saturated) = projected_directions(net, &truncated, x, y)?;
    let outcome = if saturated {
        GpOutcome::Saturated
    } else {
        apply_directions(net, &dirs, gamma);
        GpOutcome::Updated
    };
    finish(net, proj, x)?;
    Ok(outcome)
}

/// One row of the feature-invariance report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvarianceRow {
    pub layer: usize,
    pub i: usize,
    pub t: usize,
    pub max_abs_dev: f64,
}

/// Deviation `‖f^ℓ_{θ^t}(x_i) − f^ℓ_{θ^i}(x_i)‖∞` for layers `1..=L` and every
/// task `i ≤ t`, where `recorded[i−1]` holds the features of `x_i` right
/// after task `i` was learned.
pub fn feature_deviations(
    net: &Mlp,
    inputs: &[Vector],
    recorded: &[Vec<Vector>],
    t: usize,
) -> Result<Vec<InvarianceRow>> {
    if t > inputs.len() || recorded.len() < t {
        return Err(Error::invalid("not enough recorded tasks"));
    }
    let mut rows = Vec::new();
    for i in 1..=t {
        let now = net.forward_features(&inputs[i - 1])?;
        for layer in 1..now.len() {
            rows.push(InvarianceRow {
                layer,
                i,
                t,
                max_abs_dev: linalg::max_abs_diff(&now[layer], &recorded[i - 1][layer]),
            });
        }
    }
    Ok(rows)
}

/// CSV `layer,i,t,max_abs_dev`.
pub fn write_invariance_csv<W: Write>(rows: &[InvarianceRow], mut w: W) -> Result<()> {
    writeln!(w, "layer,i,t,max_abs_dev")?;
    for r in rows {
        writeln!(w, "{},{},{},{:e}", r.layer, r.i, r.t, r.max_abs_dev)?;
    }
    Ok(())
}
