use std::fmt;
use std::str::FromStr;

use super::net::{DenseNet, Gradients};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::param(format!("unknown optimizer `{other}` (sgd|adam)"))),
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam {
        lr: f64,
        step: i32,
        m: Gradients,
        v: Gradients,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, net: &DenseNet) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                step: 0,
                m: Gradients::zeros_like(net),
                v: Gradients::zeros_like(net),
            },
        }
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) {
        match self {
            Optimizer::Sgd { lr } => {
                let lr = *lr;
                for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
                    layer.weights.zip_mut_with(&g.weights, |p, &d| *p -= lr * d);
                    layer.bias.zip_mut_with(&g.bias, |p, &d| *p -= lr * d);
                }
            }
            Optimizer::Adam { lr, step, m, v } => {
                *step += 1;
                let c1 = 1.0 - BETA1.powi(*step);
                let c2 = 1.0 - BETA2.powi(*step);
                let lr = *lr;
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                };
                for (((layer, g), ml), vl) in net
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut m.layers)
                    .zip(&mut v.layers)
                {
                    ndarray::Zip::from(&mut layer.weights)
                        .and(&g.weights)
                        .and(&mut ml.weights)
                        .and(&mut vl.weights)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                    ndarray::Zip::from(&mut layer.bias)
                        .and(&g.bias)
                        .and(&mut ml.bias)
                        .and(&mut vl.bias)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                }
            }
        }
    }
}
