//! The conditioned autoregressive network.
//!
//! Input trajectories are shifted one step, projected to the residual width
//! and passed through a stack of gated residual blocks whose causal
//! convolutions are dilated `1, b, b^2, ...` within each stack. Every block
//! sees the mel frame of its own timestep through 1x1 conditioning kernels.
//! Skip outputs of all blocks are summed and fed to a small head that emits a
//! discretized logistic mixture per output channel.

mod config;
mod forward;
mod mixture;
mod params;

pub use config::{NetworkConfig, LOG_SCALE_MIN};
pub use forward::{
    forward, forward_shifted, gated_unit, quantize_matrix, shift_inputs, ForwardTrace,
    MixtureParams, OpCounter,
};
pub use mixture::{mol_likelihood, ChannelMixture, DiscretizedMixture, Grid};
pub use params::{NetworkParams, ResidualLayer, Tensor};

pub(crate) use forward::{
    check_inputs, gated_column, head_column, input_column, matvec_t_acc, outer_acc,
    residual_column, skip_column,
};
pub(crate) use mixture::sigmoid;

pub fn receptive_field(config: &NetworkConfig) -> usize {
    config.receptive_field()
}
