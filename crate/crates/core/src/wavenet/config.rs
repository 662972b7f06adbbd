use crate::{Error, Result};

/// Lower bound applied to every predicted log scale.
pub const LOG_SCALE_MIN: f64 = -7.0;

/// Shape of the network. Dilations restart at 1 in each stack and grow by
/// `dilation_base` per layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub layers_per_stack: usize,
    pub stacks: usize,
    pub dilation_base: usize,
    pub kernel_size: usize,
    pub residual_channels: usize,
    pub gate_channels: usize,
    pub skip_channels: usize,
    pub mixture_components: usize,
    pub input_channels: usize,
    pub cond_channels: usize,
    /// Size of the uniform discretization grid on `[-1, 1]`.
    pub quantization_levels: usize,
}

impl Default for NetworkConfig {
    /// Four stacks of dilations 1, 2, ..., 512.
    fn default() -> Self {
        Self {
            layers_per_stack: 10,
            stacks: 4,
            dilation_base: 2,
            kernel_size: 3,
            residual_channels: 512,
            gate_channels: 512,
            skip_channels: 256,
            mixture_components: 10,
            input_channels: 10,
            cond_channels: 80,
            quantization_levels: 256,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers_per_stack", self.layers_per_stack),
            ("stacks", self.stacks),
            ("dilation_base", self.dilation_base),
            ("kernel_size", self.kernel_size),
            ("residual_channels", self.residual_channels),
            ("gate_channels", self.gate_channels),
            ("skip_channels", self.skip_channels),
            ("mixture_components", self.mixture_components),
            ("input_channels", self.input_channels),
            ("cond_channels", self.cond_channels),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::InvalidInput(format!("network.{name} must be at least 1")));
            }
        }
        if self.quantization_levels < 2 {
            return Err(Error::InvalidInput(
                "network.quantization_levels must be at least 2".into(),
            ));
        }
        let max_dilation = (self.dilation_base as u128).checked_pow(self.layers_per_stack as u32 - 1);
        if max_dilation.map_or(true, |d| d > 1 << 24) {
            return Err(Error::InvalidInput(
                "network.layers_per_stack is too large for the dilation base".into(),
            ));
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.layers_per_stack * self.stacks
    }

    pub fn dilation(&self, layer: usize) -> usize {
        self.dilation_base.pow((layer % self.layers_per_stack) as u32)
    }

    pub fn dilations(&self) -> Vec<usize> {
        (0..self.layer_count()).map(|l| self.dilation(l)).collect()
    }

    /// Number of consecutive network inputs one output can see:
    /// `1 + sum_l (kernel_size - 1) * dilation_l`.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .dilations()
            .iter()
            .map(|d| (self.kernel_size - 1) * d)
            .sum::<usize>()
    }

    /// Width of the head output: logits, means and log scales per channel.
    pub fn head_width(&self) -> usize {
        3 * self.mixture_components * self.input_channels
    }

    /// `key = value` lines, used in checkpoint headers.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("layers_per_stack", self.layers_per_stack.to_string()),
            ("stacks", self.stacks.to_string()),
            ("dilation_base", self.dilation_base.to_string()),
            ("kernel_size", self.kernel_size.to_string()),
            ("residual_channels", self.residual_channels.to_string()),
            ("gate_channels", self.gate_channels.to_string()),
            ("skip_channels", self.skip_channels.to_string()),
            ("mixture_components", self.mixture_components.to_string()),
            ("input_channels", self.input_channels.to_string()),
            ("cond_channels", self.cond_channels.to_string()),
            ("quantization_levels", self.quantization_levels.to_string()),
        ]
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let field = |name: &str| -> Result<usize> {
            let raw = get(name).ok_or_else(|| Error::InvalidInput(format!("missing network.{name}")))?;
            raw.parse()
                .map_err(|_| Error::InvalidInput(format!("network.{name}: bad count {raw:?}")))
        };
        let cfg = Self {
            layers_per_stack: field("layers_per_stack")?,
            stacks: field("stacks")?,
            dilation_base: field("dilation_base")?,
            kernel_size: field("kernel_size")?,
            residual_channels: field("residual_channels")?,
            gate_channels: field("gate_channels")?,
            skip_channels: field("skip_channels")?,
            mixture_components: field("mixture_components")?,
            input_channels: field("input_channels")?,
            cond_channels: field("cond_channels")?,
            quantization_levels: field("quantization_levels")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
