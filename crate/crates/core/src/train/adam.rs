use super::gradient::GradientSet;
use crate::wavenet::NetworkParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("train.learning_rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidInput(format!("train.{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput("train.epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates, one buffer per parameter tensor in
/// [`NetworkParams::named_tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, params: &NetworkParams) -> bool {
        let tensors = params.named_tensors();
        tensors.len() == self.m.len()
            && tensors.len() == self.v.len()
            && tensors
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|((_, t), (m, v))| m.len() == t.len() && v.len() == t.len())
    }
}

/// One bias-corrected update.
pub fn adam_step(params: &mut NetworkParams, grads: &GradientSet, state: &mut AdamState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let grad_tensors = grads.0.named_tensors();
    for (i, (_, p)) in params.named_tensors_mut().into_iter().enumerate() {
        let g = &grad_tensors[i].1.data;
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.data.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p.data[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavenet::NetworkConfig;

    fn tiny() -> NetworkParams {
        NetworkParams::zeros(&NetworkConfig {
            layers_per_stack: 1,
            stacks: 1,
            residual_channels: 2,
            gate_channels: 2,
            skip_channels: 2,
            mixture_components: 1,
            input_channels: 1,
            cond_channels: 1,
            ..NetworkConfig::default()
        })
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = tiny();
        let mut grads = GradientSet::zeros(&params);
        grads.0.input_bias.data[0] = 3.0;
        grads.0.input_bias.data[1] = -0.01;
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::default();
        adam_step(&mut params, &grads, &mut state, &cfg);
        // Bias correction makes the first step +-lr regardless of magnitude.
        assert!((params.input_bias.data[0] + 1e-4).abs() < 1e-9);
        assert!((params.input_bias.data[1] - 1e-4).abs() < 1e-9);
        assert_eq!(params.input_weight.data[0], 0.0);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn reference_sequence() {
        // Hand-rolled scalar reference over three steps.
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let gs = [0.5, -0.2, 0.3];
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for (i, g) in gs.iter().enumerate() {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(i as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(i as i32 + 1));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        let mut params = tiny();
        let mut state = AdamState::new(&params);
        for g in gs {
            let mut grads = GradientSet::zeros(&params);
            grads.0.head_out_bias.data[0] = g;
            adam_step(&mut params, &grads, &mut state, &cfg);
        }
        assert!((params.head_out_bias.data[0] - x).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let cfg = AdamConfig {
            beta2: 1.0,
            ..AdamConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("beta2"));
    }
}
