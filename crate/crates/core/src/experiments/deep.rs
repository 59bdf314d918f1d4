//! Feature invariance of gradient projection in deep networks.

use std::fmt::Write as _;

use crate::deep::{
    feature_deviations, gp_lowrank_step, gp_step_line_search, write_invariance_csv, Activation, FeatureProjectors,
    InvarianceRow, Mlp,
};
use crate::error::Result;
use crate::linalg::{self, Vector};
use crate::stream::{gaussian_vector, seeded_rng};

use super::linear::trial_seed;
use super::{Check, ExperimentConfig, Recorder};

const MAX_HALVINGS: usize = 30;

/// Largest relative error of backpropagated gradients against central
/// differences of the loss.
fn gradient_error(net: &Mlp, x: &Vector, y: &Vector) -> Result<f64> {
    let grads = net.gradients(x, y)?;
    let mut worst: f64 = 0.0;
    for (l, g) in grads.iter().enumerate() {
        let flat = Vector::from_column_slice(net.layers[l].as_slice());
        let fd = linalg::central_gradient(
            |p| {
                let mut probe = net.clone();
                probe.layers[l].copy_from_slice(p.as_slice());
                probe.loss(x, y).unwrap_or(f64::NAN)
            },
            &flat,
        );
        let exact = Vector::from_column_slice(g.as_slice());
        worst = worst.max((&exact - &fd).norm() / exact.norm().max(1e-12));
    }
    Ok(worst)
}

pub(crate) fn gp_invariance(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let nets = cfg.trials.unwrap_or(20);
    let horizon = cfg.stream.t.unwrap_or(10);
    let widths = cfg.learner.widths.clone().unwrap_or(vec![16; 4]);
    let activation = cfg.learner.activation.unwrap_or(Activation::Tanh);
    let gamma = cfg.learner.gamma.unwrap_or(0.1);
    let threshold = cfg.learner.energy_threshold.unwrap_or(1.0);
    let line_search = cfg.learner.line_search.unwrap_or(false);
    let (d_in, d_out) = (widths[0], *widths.last().expect("validated"));

    let mut all_rows: Vec<InvarianceRow> = Vec::new();
    let mut per_net = String::from("net,max_abs_dev,loss_decreases,gradient_rel_error\n");
    let (mut worst_dev, mut worst_grad): (f64, f64) = (0.0, 0.0);
    for k in 0..nets {
        let mut rng = seeded_rng(trial_seed(cfg, k));
        let mut net = Mlp::random(&widths, activation, &mut rng)?;
        let samples: Vec<(Vector, Vector)> = (0..horizon)
            .map(|_| (gaussian_vector(&mut rng, d_in), gaussian_vector(&mut rng, d_out)))
            .collect();
        let grad_err = gradient_error(&net, &samples[0].0, &samples[0].1)?;
        let mut proj = FeatureProjectors::new(&net);
        let inputs: Vec<Vector> = samples.iter().map(|s| s.0.clone()).collect();
        let mut recorded = Vec::with_capacity(horizon);
        let mut decreases = 0usize;
        let mut net_dev: f64 = 0.0;
        for (t, (x, y)) in samples.iter().enumerate() {
            let before = net.loss(x, y)?;
            if line_search {
                gp_step_line_search(&mut net, &mut proj, x, y, gamma, MAX_HALVINGS)?;
            } else {
                gp_lowrank_step(&mut net, &mut proj, x, y, gamma, threshold)?;
            }
            decreases += usize::from(net.loss(x, y)? < before);
            recorded.push(net.forward_features(x)?);
            let rows = feature_deviations(&net, &inputs, &recorded, t + 1)?;
            net_dev = rows.iter().map(|r| r.max_abs_dev).fold(net_dev, f64::max);
            if k == 0 {
                all_rows.extend(rows);
            }
        }
        writeln!(per_net, "{k},{net_dev:e},{decreases},{grad_err:e}").expect("write to string");
        worst_dev = worst_dev.max(net_dev);
        worst_grad = worst_grad.max(grad_err);
    }
    rec.check(Check::at_most(
        "max feature deviation on past tasks",
        worst_dev,
        0.0,
        1e-8,
    ));
    rec.check(Check::at_most(
        "max relative gradient error against finite differences",
        worst_grad,
        0.0,
        1e-5,
    ));
    rec.csv("gp_invariance.csv", |w| write_invariance_csv(&all_rows, w))?;
    rec.file("gp_nets.csv", per_net);
    Ok(())
}
