//! Per-pair gradients through both twin branches and a finite-difference check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::forward::{backward, forward, DropoutMasks, Mode};
use super::loss::{contrastive_grad, contrastive_loss, euclidean, LossConfig};
use super::params::MlpParams;
use crate::error::Result;

/// Eval-mode loss of one pair.
pub fn pair_loss(params: &MlpParams, x1: &[f64], x2: &[f64], label: u8, cfg: &LossConfig) -> Result<f64> {
    let e1 = forward(params, x1, Mode::Eval)?.output;
    let e2 = forward(params, x2, Mode::Eval)?.output;
    Ok(contrastive_loss(label, euclidean(&e1, &e2), cfg))
}

/// Loss and exact parameter gradient for one pair. Both branches share the
/// weights, so their contributions are summed. `masks` fixes the dropout of
/// each branch; `None` means eval mode.
pub fn loss_gradients(
    params: &MlpParams,
    x1: &[f64],
    x2: &[f64],
    label: u8,
    cfg: &LossConfig,
    masks: Option<(&DropoutMasks, &DropoutMasks)>,
) -> Result<(f64, MlpParams)> {
    let (m1, m2) = match masks {
        Some((a, b)) => (Mode::Train(a), Mode::Train(b)),
        None => (Mode::Eval, Mode::Eval),
    };
    let a1 = forward(params, x1, m1)?;
    let a2 = forward(params, x2, m2)?;
    let (loss, g1) = contrastive_grad(&a1.output, &a2.output, label, cfg);
    let mut grads = params.zeros_like();
    if g1.iter().any(|&g| g != 0.0) {
        let g2: Vec<f64> = g1.iter().map(|g| -g).collect();
        backward(params, x1, &a1, m1, &g1, &mut grads);
        backward(params, x2, &a2, m2, &g2, &mut grads);
    }
    Ok((loss, grads))
}

/// Location of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    Weight { layer: usize, index: usize },
    Bias { layer: usize, index: usize },
}

impl ParamRef {
    fn get(self, p: &MlpParams) -> f64 {
        match self {
            ParamRef::Weight { layer, index } => p.layers[layer].weights[index],
            ParamRef::Bias { layer, index } => p.layers[layer].bias[index],
        }
    }

    fn slot(self, p: &mut MlpParams) -> &mut f64 {
        match self {
            ParamRef::Weight { layer, index } => &mut p.layers[layer].weights[index],
            ParamRef::Bias { layer, index } => &mut p.layers[layer].bias[index],
        }
    }
}

/// Denominator floor for [`relative_error`]. Central differences carry about
/// 1e-11 of roundoff, so gradients that are exactly zero (e.g. last-layer
/// biases when both branches are active) are judged by absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Max relative error between the analytic gradient and central differences
/// with step `eps` over the listed parameters. Dropout is off.
pub fn grad_check_at(
    params: &MlpParams,
    x1: &[f64],
    x2: &[f64],
    label: u8,
    cfg: &LossConfig,
    eps: f64,
    which: &[ParamRef],
) -> Result<f64> {
    let (_, analytic) = loss_gradients(params, x1, x2, label, cfg, None)?;
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for &r in which {
        let orig = r.get(params);
        *r.slot(&mut probe) = orig + eps;
        let up = pair_loss(&probe, x1, x2, label, cfg)?;
        *r.slot(&mut probe) = orig - eps;
        let down = pair_loss(&probe, x1, x2, label, cfg)?;
        *r.slot(&mut probe) = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(r.get(&analytic), numeric));
    }
    Ok(worst)
}

/// Smallest |pre-activation| over both branches in eval mode. Central
/// differences are only meaningful when this exceeds the probe's effect.
pub fn kink_distance(params: &MlpParams, x1: &[f64], x2: &[f64]) -> Result<f64> {
    let mut m = f64::INFINITY;
    for x in [x1, x2] {
        let acts = forward(params, x, Mode::Eval)?;
        for z in acts.pre.iter().flatten() {
            m = m.min(z.abs());
        }
    }
    Ok(m)
}

/// [`grad_check_at`] over every parameter.
pub fn grad_check(params: &MlpParams, x1: &[f64], x2: &[f64], label: u8, cfg: &LossConfig, eps: f64) -> Result<f64> {
    let mut all = Vec::with_capacity(params.param_count());
    for (layer, l) in params.layers.iter().enumerate() {
        all.extend((0..l.weights.len()).map(|index| ParamRef::Weight { layer, index }));
        all.extend((0..l.bias.len()).map(|index| ParamRef::Bias { layer, index }));
    }
    grad_check_at(params, x1, x2, label, cfg, eps, &all)
}

/// [`grad_check_at`] over `per_layer` random weights and `per_layer` random
/// biases from each layer, for networks too large to probe exhaustively.
#[allow(clippy::too_many_arguments)]
pub fn grad_check_sampled(
    params: &MlpParams,
    x1: &[f64],
    x2: &[f64],
    label: u8,
    cfg: &LossConfig,
    eps: f64,
    per_layer: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut which = Vec::new();
    for (layer, l) in params.layers.iter().enumerate() {
        for _ in 0..per_layer {
            which.push(ParamRef::Weight {
                layer,
                index: rng.random_range(0..l.weights.len()),
            });
            which.push(ParamRef::Bias {
                layer,
                index: rng.random_range(0..l.bias.len()),
            });
        }
    }
    grad_check_at(params, x1, x2, label, cfg, eps, &which)
}
