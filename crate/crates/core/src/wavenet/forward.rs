//! Forward computation.
//!
//! Every timestep ("column") of every layer is computed by the same routines
//! whether it comes from the batch forward pass, the naive decoder or the
//! cached decoder, so all three agree bit for bit on identical inputs.

use super::mixture::{ChannelMixture, Grid};
use super::params::{NetworkParams, ResidualLayer};
use crate::{Error, Matrix, Result};

/// Multiply-accumulate counter threaded through the column routines.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounter {
    pub macs: u64,
}

/// `y[i] += sum_j w[i, j] * x[j]`, summed left to right.
#[inline]
pub(crate) fn matvec_acc(w: &[f64], x: &[f64], y: &mut [f64], ops: &mut OpCounter) {
    let cols = x.len();
    debug_assert_eq!(w.len(), cols * y.len());
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *yi += acc;
    }
    ops.macs += w.len() as u64;
}

/// `x^T W` accumulated into `y` (used by the backward pass).
#[inline]
pub(crate) fn matvec_t_acc(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = y.len();
    debug_assert_eq!(w.len(), cols * x.len());
    for (xi, row) in x.iter().zip(w.chunks_exact(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (yj, a) in y.iter_mut().zip(row) {
            *yj += xi * a;
        }
    }
}

/// `W += a b^T`.
#[inline]
pub(crate) fn outer_acc(w: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (ai, row) in a.iter().zip(w.chunks_exact_mut(cols)) {
        if *ai == 0.0 {
            continue;
        }
        for (wj, bj) in row.iter_mut().zip(b) {
            *wj += ai * bj;
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    super::mixture::sigmoid(x)
}

/// Input projection of one column: `r0 = W_in x + b_in`.
pub(crate) fn input_column(params: &NetworkParams, x: &[f64], r0: &mut [f64], ops: &mut OpCounter) {
    r0.copy_from_slice(&params.input_bias.data);
    matvec_acc(&params.input_weight.data, x, r0, ops);
}

/// Gated activation of one column. `taps[j]` is the layer input
/// `(kernel_size - 1 - j) * dilation` steps back, `None` before the start of
/// the sequence (zero padding).
pub(crate) fn gated_column(
    layer: &ResidualLayer,
    taps: &[Option<&[f64]>],
    cond: &[f64],
    f: &mut [f64],
    g: &mut [f64],
    z: &mut [f64],
    ops: &mut OpCounter,
) {
    let gate_ch = f.len();
    let res_ch = layer.filter_weight.shape[2];
    let tap_len = gate_ch * res_ch;
    f.copy_from_slice(&layer.filter_bias.data);
    g.copy_from_slice(&layer.gate_bias.data);
    for (j, tap) in taps.iter().enumerate() {
        if let Some(x) = tap {
            let span = j * tap_len..(j + 1) * tap_len;
            matvec_acc(&layer.filter_weight.data[span.clone()], x, f, ops);
            matvec_acc(&layer.gate_weight.data[span], x, g, ops);
        }
    }
    matvec_acc(&layer.cond_filter_weight.data, cond, f, ops);
    matvec_acc(&layer.cond_gate_weight.data, cond, g, ops);
    for ((zi, fi), gi) in z.iter_mut().zip(f.iter()).zip(g.iter()) {
        *zi = fi.tanh() * sigmoid(*gi);
    }
}

/// `r_out = r_in + (b_r + W_r z)`.
pub(crate) fn residual_column(
    layer: &ResidualLayer,
    z: &[f64],
    r_in: &[f64],
    r_out: &mut [f64],
    scratch: &mut [f64],
    ops: &mut OpCounter,
) {
    scratch.copy_from_slice(&layer.residual_bias.data);
    matvec_acc(&layer.residual_weight.data, z, scratch, ops);
    for ((o, a), b) in r_out.iter_mut().zip(r_in).zip(scratch.iter()) {
        *o = a + b;
    }
}

/// `skip += b_s + W_s z`.
pub(crate) fn skip_column(
    layer: &ResidualLayer,
    z: &[f64],
    skip: &mut [f64],
    scratch: &mut [f64],
    ops: &mut OpCounter,
) {
    scratch.copy_from_slice(&layer.skip_bias.data);
    matvec_acc(&layer.skip_weight.data, z, scratch, ops);
    for (s, v) in skip.iter_mut().zip(scratch.iter()) {
        *s += v;
    }
}

/// ReLU, 1x1 hidden projection, ReLU, output projection.
pub(crate) fn head_column(
    params: &NetworkParams,
    skip_sum: &[f64],
    hidden_pre: &mut [f64],
    out: &mut [f64],
    ops: &mut OpCounter,
) {
    let relu_skip: Vec<f64> = skip_sum.iter().map(|v| v.max(0.0)).collect();
    hidden_pre.copy_from_slice(&params.head_hidden_bias.data);
    matvec_acc(&params.head_hidden_weight.data, &relu_skip, hidden_pre, ops);
    let hidden: Vec<f64> = hidden_pre.iter().map(|v| v.max(0.0)).collect();
    out.copy_from_slice(&params.head_out_bias.data);
    matvec_acc(&params.head_out_weight.data, &hidden, out, ops);
}

/// Per-timestep, per-channel mixture parameters produced by the head.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub raw: Matrix,
    pub channels: usize,
    pub components: usize,
}

impl MixtureParams {
    pub fn frames(&self) -> usize {
        self.raw.rows()
    }

    pub fn channel(&self, t: usize, c: usize) -> ChannelMixture<'_> {
        let width = 3 * self.components;
        ChannelMixture::new(&self.raw.row(t)[c * width..(c + 1) * width])
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Network input after the one-step shift.
    pub input: Matrix,
    /// Input of each residual layer (`r^k`), `frames x residual_channels`.
    pub layer_inputs: Vec<Matrix>,
    pub filter_pre: Vec<Matrix>,
    pub gate_pre: Vec<Matrix>,
    pub gated: Vec<Matrix>,
    pub skip_sum: Matrix,
    pub hidden_pre: Matrix,
    pub output: Matrix,
}

impl ForwardTrace {
    pub fn mixture(&self, params: &NetworkParams) -> MixtureParams {
        MixtureParams {
            raw: self.output.clone(),
            channels: params.config.input_channels,
            components: params.config.mixture_components,
        }
    }
}

/// Teacher-forcing shift: row `t` of the result is row `t - 1` of `x`, and
/// row 0 is zero.
pub fn shift_inputs(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for t in 1..x.rows() {
        out.row_mut(t).copy_from_slice(x.row(t - 1));
    }
    out
}

pub(crate) fn check_inputs(params: &NetworkParams, input: &Matrix, cond: &Matrix) -> Result<()> {
    let cfg = &params.config;
    if input.cols() != cfg.input_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, network expects {}",
            input.cols(),
            cfg.input_channels
        )));
    }
    if cond.cols() != cfg.cond_channels {
        return Err(Error::Shape(format!(
            "conditioning has {} bands, network expects {}",
            cond.cols(),
            cfg.cond_channels
        )));
    }
    if input.rows() != cond.rows() {
        return Err(Error::Shape(format!(
            "input has {} frames but conditioning has {}",
            input.rows(),
            cond.rows()
        )));
    }
    if let Some(name) = params.first_non_finite() {
        return Err(Error::NonFinite(format!("parameter tensor {name}")));
    }
    Ok(())
}

/// Forward pass over an already shifted input sequence.
pub fn forward_shifted(
    params: &NetworkParams,
    input: &Matrix,
    cond: &Matrix,
    ops: &mut OpCounter,
) -> Result<ForwardTrace> {
    check_inputs(params, input, cond)?;
    let cfg = &params.config;
    let frames = input.rows();
    let (res_ch, gate_ch, skip_ch) = (cfg.residual_channels, cfg.gate_channels, cfg.skip_channels);
    let kernel = cfg.kernel_size;

    let mut stream = Matrix::zeros(frames, res_ch);
    for t in 0..frames {
        input_column(params, input.row(t), stream.row_mut(t), ops);
    }

    let n_layers = params.layers.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut filter_pre = Vec::with_capacity(n_layers);
    let mut gate_pre = Vec::with_capacity(n_layers);
    let mut gated = Vec::with_capacity(n_layers);
    let mut skip_sum = Matrix::zeros(frames, skip_ch);
    let mut res_scratch = vec![0.0; res_ch];
    let mut skip_scratch = vec![0.0; skip_ch];

    for (k, layer) in params.layers.iter().enumerate() {
        let mut f = Matrix::zeros(frames, gate_ch);
        let mut g = Matrix::zeros(frames, gate_ch);
        let mut z = Matrix::zeros(frames, gate_ch);
        let mut taps: Vec<Option<&[f64]>> = vec![None; kernel];
        for t in 0..frames {
            for (j, tap) in taps.iter_mut().enumerate() {
                let lag = (kernel - 1 - j) * layer.dilation;
                *tap = t.checked_sub(lag).map(|s| stream.row(s));
            }
            let (fr, gr, zr) = (f.row_mut(t), g.row_mut(t), z.row_mut(t));
            gated_column(layer, &taps, cond.row(t), fr, gr, zr, ops);
        }
        for t in 0..frames {
            skip_column(layer, z.row(t), skip_sum.row_mut(t), &mut skip_scratch, ops);
        }
        let next = if k + 1 < n_layers {
            let mut next = Matrix::zeros(frames, res_ch);
            for t in 0..frames {
                residual_column(layer, z.row(t), stream.row(t), next.row_mut(t), &mut res_scratch, ops);
            }
            Some(next)
        } else {
            None
        };
        layer_inputs.push(std::mem::replace(&mut stream, next.unwrap_or_else(|| Matrix::zeros(0, res_ch))));
        filter_pre.push(f);
        gate_pre.push(g);
        gated.push(z);
    }

    let mut hidden_pre = Matrix::zeros(frames, skip_ch);
    let mut output = Matrix::zeros(frames, cfg.head_width());
    for t in 0..frames {
        head_column(params, skip_sum.row(t), hidden_pre.row_mut(t), output.row_mut(t), ops);
    }
    Ok(ForwardTrace {
        input: input.clone(),
        layer_inputs,
        filter_pre,
        gate_pre,
        gated,
        skip_sum,
        hidden_pre,
        output,
    })
}

/// Mixture parameters for every frame of `x` (normalized trajectories,
/// `frames x input_channels`) conditioned on `cond` (`frames x bands`).
/// Output `t` sees `x[..t]` and `cond[..=t]` only.
pub fn forward(params: &NetworkParams, x: &Matrix, cond: &Matrix) -> Result<MixtureParams> {
    let trace = forward_shifted(params, &shift_inputs(x), cond, &mut OpCounter::default())?;
    Ok(trace.mixture(params))
}

/// Quantizes every entry of `x` to the grid.
pub fn quantize_matrix(x: &Matrix, grid: Grid) -> Matrix {
    let mut out = x.clone();
    for v in out.as_mut_slice() {
        *v = grid.snap(*v);
    }
    out
}

/// Gated activation `tanh(W_f * x + V_f h) . sigmoid(W_g * x + V_g h)` of a
/// single layer over a whole sequence (`x` is `frames x residual_channels`).
pub fn gated_unit(layer: &ResidualLayer, x: &Matrix, cond: &Matrix) -> Result<Matrix> {
    let gate_ch = layer.filter_bias.len();
    let res_ch = layer.filter_weight.shape[2];
    let cond_ch = layer.cond_filter_weight.shape[1];
    if x.cols() != res_ch || cond.cols() != cond_ch || x.rows() != cond.rows() {
        return Err(Error::Shape(format!(
            "gated unit expects {res_ch}-channel input and {cond_ch}-band conditioning of equal length, got {}x{} and {}x{}",
            x.rows(),
            x.cols(),
            cond.rows(),
            cond.cols()
        )));
    }
    let kernel = layer.filter_weight.shape[0];
    let mut z = Matrix::zeros(x.rows(), gate_ch);
    let (mut f, mut g) = (vec![0.0; gate_ch], vec![0.0; gate_ch]);
    let mut ops = OpCounter::default();
    for t in 0..x.rows() {
        let taps: Vec<Option<&[f64]>> = (0..kernel)
            .map(|j| t.checked_sub((kernel - 1 - j) * layer.dilation).map(|s| x.row(s)))
            .collect();
        gated_column(layer, &taps, cond.row(t), &mut f, &mut g, z.row_mut(t), &mut ops);
    }
    Ok(z)
}
