//! Adaptive-moment parameter updates.

use crate::nn::network::{NetGrads, Network};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Moments {
    mw: Vec<f64>,
    vw: Vec<f64>,
    mb: Vec<f64>,
    vb: Vec<f64>,
}

/// First/second moment accumulators for one network, in layer order.
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    moments: Vec<Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, net: &Network) -> Adam {
        let moments = net
            .layers
            .iter()
            .map(|l| Moments {
                mw: vec![0.0; l.weights.len()],
                vw: vec![0.0; l.weights.len()],
                mb: vec![0.0; l.bias.len()],
                vb: vec![0.0; l.bias.len()],
            })
            .collect();
        Adam {
            cfg,
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update step. Deterministic given identical inputs.
    pub fn step(&mut self, net: &mut Network, grads: &NetGrads) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let c = &self.cfg;
        for ((layer, g), m) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.moments)
        {
            update_group(
                c,
                bc1,
                bc2,
                &mut layer.weights,
                &g.weights,
                &mut m.mw,
                &mut m.vw,
            );
            update_group(c, bc1, bc2, &mut layer.bias, &g.bias, &mut m.mb, &mut m.vb);
        }
    }
}

fn update_group(
    cfg: &AdamConfig,
    bc1: f64,
    bc2: f64,
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
) {
    debug_assert_eq!(params.len(), grads.len());
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::LayerSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_net() -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Network::new(
            vec![LayerSpec::Linear {
                in_features: 1,
                out_features: 1,
            }],
            &mut rng,
        )
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut net = scalar_net();
        let before = net.layers[0].weights.clone();
        let mut adam = Adam::new(AdamConfig::default(), &net);
        let grads = NetGrads::zeros_like(&net);
        adam.step(&mut net, &grads);
        let delta = (net.layers[0].weights[0] - before[0]).abs();
        assert!(delta < 1e-12, "zero gradient moved parameter by {delta}");
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net();
        let before = net.layers[0].weights[0];
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &net,
        );
        let mut grads = NetGrads::zeros_like(&net);
        grads.layers[0].weights[0] = 1.0;
        adam.step(&mut net, &grads);
        // Bias-corrected first step: lr * 1 / (1 + eps).
        let delta = before - net.layers[0].weights[0];
        assert!((delta - 0.1).abs() < 1e-6, "first step moved {delta}");
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut net = scalar_net();
            let mut adam = Adam::new(AdamConfig::default(), &net);
            for k in 0..50 {
                let mut grads = NetGrads::zeros_like(&net);
                grads.layers[0].weights[0] = (k as f64 * 0.3).sin();
                grads.layers[0].bias[0] = -0.2 * k as f64;
                adam.step(&mut net, &grads);
            }
            (net.layers[0].weights[0], net.layers[0].bias[0])
        };
        assert_eq!(run(), run());
    }
}
