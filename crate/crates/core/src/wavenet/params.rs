use rand::Rng;

use super::config::NetworkConfig;

/// Dense n-dimensional array of learnable values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = rng.gen_range(-bound..bound);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Weights of one residual block. Convolution kernels are stored
/// `[kernel_size, gate_channels, residual_channels]`; tap `j` reads the input
/// `(kernel_size - 1 - j) * dilation` steps in the past.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLayer {
    pub dilation: usize,
    pub filter_weight: Tensor,
    pub filter_bias: Tensor,
    pub gate_weight: Tensor,
    pub gate_bias: Tensor,
    /// `[gate_channels, cond_channels]`
    pub cond_filter_weight: Tensor,
    pub cond_gate_weight: Tensor,
    /// `[residual_channels, gate_channels]`
    pub residual_weight: Tensor,
    pub residual_bias: Tensor,
    /// `[skip_channels, gate_channels]`
    pub skip_weight: Tensor,
    pub skip_bias: Tensor,
}

/// All learnable weights. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    /// `[residual_channels, input_channels]`
    pub input_weight: Tensor,
    pub input_bias: Tensor,
    pub layers: Vec<ResidualLayer>,
    /// `[skip_channels, skip_channels]`
    pub head_hidden_weight: Tensor,
    pub head_hidden_bias: Tensor,
    /// `[head_width, skip_channels]`
    pub head_out_weight: Tensor,
    pub head_out_bias: Tensor,
}

impl NetworkParams {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let (r, g, s) = (
            config.residual_channels,
            config.gate_channels,
            config.skip_channels,
        );
        let layers = config
            .dilations()
            .into_iter()
            .map(|dilation| ResidualLayer {
                dilation,
                filter_weight: Tensor::zeros(&[config.kernel_size, g, r]),
                filter_bias: Tensor::zeros(&[g]),
                gate_weight: Tensor::zeros(&[config.kernel_size, g, r]),
                gate_bias: Tensor::zeros(&[g]),
                cond_filter_weight: Tensor::zeros(&[g, config.cond_channels]),
                cond_gate_weight: Tensor::zeros(&[g, config.cond_channels]),
                residual_weight: Tensor::zeros(&[r, g]),
                residual_bias: Tensor::zeros(&[r]),
                skip_weight: Tensor::zeros(&[s, g]),
                skip_bias: Tensor::zeros(&[s]),
            })
            .collect();
        Self {
            config: config.clone(),
            input_weight: Tensor::zeros(&[r, config.input_channels]),
            input_bias: Tensor::zeros(&[r]),
            layers,
            head_hidden_weight: Tensor::zeros(&[s, s]),
            head_hidden_bias: Tensor::zeros(&[s]),
            head_out_weight: Tensor::zeros(&[config.head_width(), s]),
            head_out_bias: Tensor::zeros(&[config.head_width()]),
        }
    }

    /// Training initialization: kernels uniform in `+-1/sqrt(fan_in)`, biases
    /// zero, and a zero output projection whose bias encodes a near-uniform
    /// mixture (equal weights, means spread evenly over `[-1, 1]`, scale
    /// `0.5 / K`).
    pub fn init(config: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(config);
        let (r, g, s, k) = (
            config.residual_channels,
            config.gate_channels,
            config.skip_channels,
            config.kernel_size,
        );
        let bound = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        p.input_weight = Tensor::uniform(&[r, config.input_channels], bound(config.input_channels), rng);
        for layer in &mut p.layers {
            layer.filter_weight = Tensor::uniform(&[k, g, r], bound(k * r), rng);
            layer.gate_weight = Tensor::uniform(&[k, g, r], bound(k * r), rng);
            layer.cond_filter_weight =
                Tensor::uniform(&[g, config.cond_channels], bound(config.cond_channels), rng);
            layer.cond_gate_weight =
                Tensor::uniform(&[g, config.cond_channels], bound(config.cond_channels), rng);
            layer.residual_weight = Tensor::uniform(&[r, g], bound(g), rng);
            layer.skip_weight = Tensor::uniform(&[s, g], bound(g), rng);
        }
        p.head_hidden_weight = Tensor::uniform(&[s, s], bound(s), rng);
        p.head_out_bias = uniform_mixture_bias(config);
        p
    }

    /// Every tensor, including biases and the output projection, drawn
    /// uniformly from `+-scale`. Used for probing structural properties where
    /// a zero head would hide them.
    pub fn random(config: &NetworkConfig, scale: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(config);
        p.for_each_tensor_mut(|_, t| {
            for v in &mut t.data {
                *v = rng.gen_range(-scale..scale);
            }
        });
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// `(name, tensor)` pairs in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("input.weight".to_string(), &self.input_weight),
            ("input.bias".to_string(), &self.input_bias),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend([
                (format!("layers.{i}.filter.weight"), &l.filter_weight),
                (format!("layers.{i}.filter.bias"), &l.filter_bias),
                (format!("layers.{i}.gate.weight"), &l.gate_weight),
                (format!("layers.{i}.gate.bias"), &l.gate_bias),
                (format!("layers.{i}.cond_filter.weight"), &l.cond_filter_weight),
                (format!("layers.{i}.cond_gate.weight"), &l.cond_gate_weight),
                (format!("layers.{i}.residual.weight"), &l.residual_weight),
                (format!("layers.{i}.residual.bias"), &l.residual_bias),
                (format!("layers.{i}.skip.weight"), &l.skip_weight),
                (format!("layers.{i}.skip.bias"), &l.skip_bias),
            ]);
        }
        out.extend([
            ("head.hidden.weight".to_string(), &self.head_hidden_weight),
            ("head.hidden.bias".to_string(), &self.head_hidden_bias),
            ("head.out.weight".to_string(), &self.head_out_weight),
            ("head.out.bias".to_string(), &self.head_out_bias),
        ]);
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("input.weight".to_string(), &mut self.input_weight),
            ("input.bias".to_string(), &mut self.input_bias),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend([
                (format!("layers.{i}.filter.weight"), &mut l.filter_weight),
                (format!("layers.{i}.filter.bias"), &mut l.filter_bias),
                (format!("layers.{i}.gate.weight"), &mut l.gate_weight),
                (format!("layers.{i}.gate.bias"), &mut l.gate_bias),
                (format!("layers.{i}.cond_filter.weight"), &mut l.cond_filter_weight),
                (format!("layers.{i}.cond_gate.weight"), &mut l.cond_gate_weight),
                (format!("layers.{i}.residual.weight"), &mut l.residual_weight),
                (format!("layers.{i}.residual.bias"), &mut l.residual_bias),
                (format!("layers.{i}.skip.weight"), &mut l.skip_weight),
                (format!("layers.{i}.skip.bias"), &mut l.skip_bias),
            ]);
        }
        out.extend([
            ("head.hidden.weight".to_string(), &mut self.head_hidden_weight),
            ("head.hidden.bias".to_string(), &mut self.head_hidden_bias),
            ("head.out.weight".to_string(), &mut self.head_out_weight),
            ("head.out.bias".to_string(), &mut self.head_out_bias),
        ]);
        out
    }

    pub fn for_each_tensor(&self, mut f: impl FnMut(String, &Tensor)) {
        for (name, t) in self.named_tensors() {
            f(name, t);
        }
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(String, &mut Tensor)) {
        for (name, t) in self.named_tensors_mut() {
            f(name, t);
        }
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|_, t| n += t.len());
        n
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(|_, t| ok &= t.data.iter().all(|v| v.is_finite()));
        ok
    }

    /// Name of the first tensor containing a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut bad = None;
        self.for_each_tensor(|name, t| {
            if bad.is_none() && t.data.iter().any(|v| !v.is_finite()) {
                bad = Some(name);
            }
        });
        bad
    }
}

fn uniform_mixture_bias(config: &NetworkConfig) -> Tensor {
    let k = config.mixture_components;
    let mut bias = Tensor::zeros(&[config.head_width()]);
    for c in 0..config.input_channels {
        let base = c * 3 * k;
        for i in 0..k {
            bias.data[base + k + i] = -1.0 + (2 * i + 1) as f64 / k as f64;
            bias.data[base + 2 * k + i] = (0.5 / k as f64).ln();
        }
    }
    bias
}
