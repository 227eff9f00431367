use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let zeros = Gradients::zeros_like(net).layers;
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam step. Non-finite gradients are rejected
    /// before any parameter or moment is touched.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        if grads.layers.len() != self.m.len() {
            return Err(NnError::Shape { expected: self.m.len(), got: grads.layers.len() });
        }
        for ((gw, gb), (mw, mb)) in grads.layers.iter().zip(&self.m) {
            if gw.dim() != mw.dim() || gb.len() != mb.len() {
                return Err(NnError::Shape { expected: mw.len() + mb.len(), got: gw.len() + gb.len() });
            }
        }
        if !grads.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        };
        for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in net.layers_mut().iter_mut().zip(&grads.layers).zip(&mut self.m).zip(&mut self.v) {
            for (((p, g), m), v) in layer.weight.iter_mut().zip(gw).zip(mw.iter_mut()).zip(vw.iter_mut()) {
                update(p, *g, m, v);
            }
            for (((p, g), m), v) in layer.bias.iter_mut().zip(gb).zip(mb.iter_mut()).zip(vb.iter_mut()) {
                update(p, *g, m, v);
            }
        }
        Ok(())
    }
}
