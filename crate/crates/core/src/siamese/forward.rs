use rand::Rng;

use super::params::MlpParams;
use crate::error::{Error, Result};

/// Inverted-dropout keep masks for the two hidden layers of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub keep_prob: f64,
    pub hidden1: Vec<bool>,
    pub hidden2: Vec<bool>,
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, params: &MlpParams, rate: f64) -> Self {
        let [_, h1, h2, _] = params.layer_dims();
        let keep_prob = 1.0 - rate;
        let mut draw = |n: usize| -> Vec<bool> {
            if rate == 0.0 {
                vec![true; n]
            } else {
                (0..n).map(|_| rng.random::<f64>() < keep_prob).collect()
            }
        };
        let hidden1 = draw(h1);
        let hidden2 = draw(h2);
        Self {
            keep_prob,
            hidden1,
            hidden2,
        }
    }

    /// Multiplier for unit `i` of hidden layer `layer` (0 or 1).
    pub fn scale(&self, layer: usize, i: usize) -> f64 {
        let keep = if layer == 0 { self.hidden1[i] } else { self.hidden2[i] };
        if keep {
            1.0 / self.keep_prob
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    Train(&'a DropoutMasks),
}

/// Everything backpropagation needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    /// Pre-activations of the three layers.
    pub pre: [Vec<f64>; 3],
    /// Layer inputs to layers 2 and 3, after ReLU and dropout.
    pub hidden: [Vec<f64>; 2],
    /// ReLU of the last pre-activation.
    pub output: Vec<f64>,
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// `ReLU(W3 · drop(ReLU(W2 · drop(ReLU(W1 x + b1)) + b2)) + b3)`; `x` must
/// already be normalized.
pub fn forward(params: &MlpParams, x: &[f64], mode: Mode<'_>) -> Result<Activations> {
    if x.len() != params.input_dim() {
        return Err(Error::Dimension {
            expected: params.input_dim(),
            actual: x.len(),
        });
    }
    let hide = |pre: &[f64], layer: usize| -> Vec<f64> {
        pre.iter()
            .enumerate()
            .map(|(i, &z)| match mode {
                Mode::Eval => relu(z),
                Mode::Train(m) => relu(z) * m.scale(layer, i),
            })
            .collect()
    };
    let z1 = params.layers[0].affine(x);
    let h1 = hide(&z1, 0);
    let z2 = params.layers[1].affine(&h1);
    let h2 = hide(&z2, 1);
    let z3 = params.layers[2].affine(&h2);
    let output = z3.iter().map(|&z| relu(z)).collect();
    Ok(Activations {
        pre: [z1, z2, z3],
        hidden: [h1, h2],
        output,
    })
}

/// Accumulates the parameter gradient for one branch into `grads`, given
/// `d_out`, the loss gradient with respect to the embedding.
pub fn backward(
    params: &MlpParams,
    x: &[f64],
    acts: &Activations,
    mode: Mode<'_>,
    d_out: &[f64],
    grads: &mut MlpParams,
) {
    let step = |z: f64| if z > 0.0 { 1.0 } else { 0.0 };
    // delta of layer 3 pre-activation
    let mut delta: Vec<f64> = d_out.iter().zip(&acts.pre[2]).map(|(g, &z)| g * step(z)).collect();
    for layer in (0..3).rev() {
        let input: &[f64] = if layer == 0 { x } else { &acts.hidden[layer - 1] };
        let p = &params.layers[layer];
        let g = &mut grads.layers[layer];
        for (i, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g.bias[i] += d;
            let row = &mut g.weights[i * p.in_dim..(i + 1) * p.in_dim];
            for (w, &a) in row.iter_mut().zip(input) {
                *w += d * a;
            }
        }
        if layer == 0 {
            break;
        }
        let below = layer - 1;
        let mut next = vec![0.0; p.in_dim];
        for (i, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (n, &w) in next.iter_mut().zip(p.row(i)) {
                *n += d * w;
            }
        }
        for (j, n) in next.iter_mut().enumerate() {
            let s = match mode {
                Mode::Eval => 1.0,
                Mode::Train(m) => m.scale(below, j),
            };
            *n *= s * step(acts.pre[below][j]);
        }
        delta = next;
    }
}

#[cfg(test)]
mod tests {
    use super::super::params::Dense;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hand_net() -> MlpParams {
        MlpParams::from_layers(vec![
            Dense {
                in_dim: 3,
                out_dim: 2,
                weights: vec![1.0, -1.0, 0.5, 0.0, 2.0, -1.0],
                bias: vec![0.1, -0.2],
            },
            Dense {
                in_dim: 2,
                out_dim: 2,
                weights: vec![1.0, 1.0, -1.0, 0.5],
                bias: vec![0.0, 0.3],
            },
            Dense {
                in_dim: 2,
                out_dim: 2,
                weights: vec![2.0, 0.0, -1.0, -1.0],
                bias: vec![0.0, 0.0],
            },
        ])
        .unwrap()
    }

    #[test]
    fn small_net_by_hand() {
        // x = (1, 2, 3)
        // z1 = (1 - 2 + 1.5 + 0.1, 4 - 3 - 0.2) = (0.6, 0.8)
        // z2 = (1.4, -0.6 + 0.4 + 0.3) = (1.4, 0.1)
        // z3 = (2.8, -1.5) -> output (2.8, 0)
        let a = forward(&hand_net(), &[1.0, 2.0, 3.0], Mode::Eval).unwrap();
        let close = |u: &[f64], v: &[f64]| u.iter().zip(v).all(|(a, b)| (a - b).abs() < 1e-12);
        assert!(close(&a.pre[0], &[0.6, 0.8]));
        assert!(close(&a.pre[1], &[1.4, 0.1]));
        assert!(close(&a.pre[2], &[2.8, -1.5]));
        assert!(close(&a.output, &[2.8, 0.0]));
    }

    #[test]
    fn zero_params_give_zero_embedding() {
        let p = MlpParams::zeros(&[5, 4, 3, 2]);
        let a = forward(&p, &[1.0, -2.0, 3.0, 0.5, 9.0], Mode::Eval).unwrap();
        assert_eq!(a.output, vec![0.0, 0.0]);
    }

    #[test]
    fn eval_is_repeatable_and_dims_checked() {
        let p = hand_net();
        let x = [0.3, -0.2, 0.9];
        assert_eq!(forward(&p, &x, Mode::Eval).unwrap(), forward(&p, &x, Mode::Eval).unwrap());
        assert!(matches!(forward(&p, &[1.0], Mode::Eval), Err(Error::Dimension { .. })));
    }

    #[test]
    fn dropout_scales_kept_units() {
        let p = hand_net();
        let masks = DropoutMasks {
            keep_prob: 0.5,
            hidden1: vec![true, false],
            hidden2: vec![true, true],
        };
        let a = forward(&p, &[1.0, 2.0, 3.0], Mode::Train(&masks)).unwrap();
        assert_eq!(a.hidden[0], vec![1.2, 0.0]);
        let full = DropoutMasks::sample(&mut ChaCha8Rng::seed_from_u64(0), &p, 0.0);
        assert!(full.hidden1.iter().all(|&k| k) && full.keep_prob == 1.0);
    }
}
