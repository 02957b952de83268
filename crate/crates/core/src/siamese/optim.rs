use serde::{Deserialize, Serialize};

use super::params::MlpParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(crate::Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        cfg: AdamConfig,
        step: i32,
        m: MlpParams,
        v: MlpParams,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, adam: AdamConfig, params: &MlpParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                cfg: adam,
                step: 0,
                m: params.zeros_like(),
                v: params.zeros_like(),
            },
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) {
        match self {
            Optimizer::Sgd { lr } => {
                for (w, g) in params.values_mut().zip(grads.values()) {
                    *w -= *lr * g;
                }
            }
            Optimizer::Adam { lr, cfg, step, m, v } => {
                *step += 1;
                let bc1 = 1.0 - cfg.beta1.powi(*step);
                let bc2 = 1.0 - cfg.beta2.powi(*step);
                let (b1, b2, eps, lr) = (cfg.beta1, cfg.beta2, cfg.eps, *lr);
                for (((w, g), m), v) in params
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(m.layers.iter_mut())
                    .zip(v.layers.iter_mut())
                {
                    let update = |w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                        for i in 0..w.len() {
                            let gi = g[i];
                            m[i] = b1 * m[i] + (1.0 - b1) * gi;
                            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                            let mh = m[i] / bc1;
                            let vh = v[i] / bc2;
                            w[i] -= lr * mh / (vh.sqrt() + eps);
                        }
                    };
                    update(&mut w.weights, &g.weights, &mut m.weights, &mut v.weights);
                    update(&mut w.bias, &g.bias, &mut m.bias, &mut v.bias);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = MlpParams::zeros(&[2, 2, 2, 2]);
        let mut g = p.zeros_like();
        g.layers[0].weights[0] = 3.0;
        g.layers[1].bias[1] = -0.25;
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, AdamConfig::default(), &p);
        opt.step(&mut p, &g);
        assert!((p.layers[0].weights[0] + 0.01).abs() < 1e-9);
        assert!((p.layers[1].bias[1] - 0.01).abs() < 1e-9);
        assert_eq!(p.layers[2].weights[0], 0.0);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = MlpParams::zeros(&[2, 2, 2, 2]);
        p.layers[0].weights[1] = 0.7;
        let before = p.clone();
        let g = p.zeros_like();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, AdamConfig::default(), &p);
        opt.step(&mut p, &g);
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_step() {
        let mut p = MlpParams::zeros(&[2, 2, 2, 2]);
        let mut g = p.zeros_like();
        g.layers[2].weights[3] = 2.0;
        Optimizer::new(OptimizerKind::Sgd, 0.5, AdamConfig::default(), &p).step(&mut p, &g);
        assert_eq!(p.layers[2].weights[3], -1.0);
    }
}
