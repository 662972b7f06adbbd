//! Negative log-likelihood and its exact reverse-mode gradient.

use rayon::prelude::*;

use crate::wavenet::{
    forward_shifted, matvec_t_acc, outer_acc, shift_inputs, sigmoid, ChannelMixture, ForwardTrace,
    Grid, NetworkParams, OpCounter,
};
use crate::{Error, Matrix, Result};

/// One training item: ground-truth trajectories (normalized, on the grid) and
/// their conditioning frames. Frames before `loss_from` are context only.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub label: String,
    pub x: Matrix,
    pub cond: Matrix,
    pub loss_from: usize,
}

impl Sequence {
    pub fn new(label: impl Into<String>, x: Matrix, cond: Matrix) -> Self {
        Self {
            label: label.into(),
            x,
            cond,
            loss_from: 0,
        }
    }

    pub fn predicted_scalars(&self) -> usize {
        self.x.rows().saturating_sub(self.loss_from) * self.x.cols()
    }
}

/// Gradients laid out exactly like [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet(pub NetworkParams);

impl GradientSet {
    pub fn zeros(params: &NetworkParams) -> Self {
        GradientSet(params.zeros_like())
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.0.for_each_tensor(|_, t| sq += t.data.iter().map(|v| v * v).sum::<f64>());
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.for_each_tensor_mut(|_, t| t.data.iter_mut().for_each(|v| *v *= factor));
    }

    /// Rescales to `max_norm` when the global norm exceeds it; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        let theirs = other.0.named_tensors();
        for ((_, mine), (_, t)) in self.0.named_tensors_mut().into_iter().zip(theirs) {
            for (a, b) in mine.data.iter_mut().zip(&t.data) {
                *a += b;
            }
        }
    }

    pub fn first_non_finite(&self) -> Option<String> {
        self.0.first_non_finite()
    }
}

struct ItemResult {
    nll_sum: f64,
    count: usize,
    grads: Option<GradientSet>,
}

fn validate_item(params: &NetworkParams, seq: &Sequence) -> Result<()> {
    if seq.x.cols() != params.config.input_channels {
        return Err(Error::Shape(format!(
            "item {}: {} trajectory channels, network expects {}",
            seq.label,
            seq.x.cols(),
            params.config.input_channels
        )));
    }
    if seq.x.rows() != seq.cond.rows() {
        return Err(Error::Shape(format!(
            "item {}: {} trajectory frames vs {} conditioning frames",
            seq.label,
            seq.x.rows(),
            seq.cond.rows()
        )));
    }
    Ok(())
}

fn item_loss(params: &NetworkParams, seq: &Sequence, grid: Grid, want_grad: bool) -> Result<ItemResult> {
    validate_item(params, seq)?;
    let trace = forward_shifted(params, &shift_inputs(&seq.x), &seq.cond, &mut OpCounter::default())?;
    let cfg = &params.config;
    let width = 3 * cfg.mixture_components;
    let frames = seq.x.rows();
    let mut d_out = Matrix::zeros(frames, cfg.head_width());
    let mut nll_sum = 0.0;
    let mut count = 0;
    for t in seq.loss_from..frames {
        let raw = trace.output.row(t);
        let grad_row = d_out.row_mut(t);
        for c in 0..cfg.input_channels {
            let span = c * width..(c + 1) * width;
            let bin = grid.quantize(seq.x.get(t, c));
            nll_sum += ChannelMixture::new(&raw[span.clone()]).nll_with_grad(grid, bin, 1.0, &mut grad_row[span]);
            count += 1;
        }
    }
    if !nll_sum.is_finite() {
        return Err(Error::NonFinite(format!("loss of item {} is {nll_sum}", seq.label)));
    }
    let grads = want_grad.then(|| backprop(params, &trace, &seq.cond, &d_out));
    Ok(ItemResult {
        nll_sum,
        count,
        grads,
    })
}

/// Reverse pass given the gradient of the summed loss with respect to the
/// raw head outputs.
fn backprop(params: &NetworkParams, trace: &ForwardTrace, cond: &Matrix, d_out: &Matrix) -> GradientSet {
    let cfg = &params.config;
    let frames = d_out.rows();
    let (res_ch, gate_ch, skip_ch) = (cfg.residual_channels, cfg.gate_channels, cfg.skip_channels);
    let kernel = cfg.kernel_size;
    let mut grads = GradientSet::zeros(params);
    let g = &mut grads.0;

    // Head.
    let mut d_skip = Matrix::zeros(frames, skip_ch);
    let mut d_hidden = vec![0.0; skip_ch];
    let mut d_relu_skip = vec![0.0; skip_ch];
    for t in 0..frames {
        let dy = d_out.row(t);
        if dy.iter().all(|&v| v == 0.0) {
            continue;
        }
        let hidden_pre = trace.hidden_pre.row(t);
        let hidden: Vec<f64> = hidden_pre.iter().map(|v| v.max(0.0)).collect();
        outer_acc(&mut g.head_out_weight.data, dy, &hidden);
        add_into(&mut g.head_out_bias.data, dy);
        d_hidden.fill(0.0);
        matvec_t_acc(&params.head_out_weight.data, dy, &mut d_hidden);
        for (d, &pre) in d_hidden.iter_mut().zip(hidden_pre) {
            if pre <= 0.0 {
                *d = 0.0;
            }
        }
        let skip_sum = trace.skip_sum.row(t);
        let relu_skip: Vec<f64> = skip_sum.iter().map(|v| v.max(0.0)).collect();
        outer_acc(&mut g.head_hidden_weight.data, &d_hidden, &relu_skip);
        add_into(&mut g.head_hidden_bias.data, &d_hidden);
        d_relu_skip.fill(0.0);
        matvec_t_acc(&params.head_hidden_weight.data, &d_hidden, &mut d_relu_skip);
        for ((d, &src), &pre) in d_skip.row_mut(t).iter_mut().zip(&d_relu_skip).zip(skip_sum) {
            *d = if pre > 0.0 { src } else { 0.0 };
        }
    }

    // Residual stack, last layer first. `d_stream` holds the gradient with
    // respect to the output of the current layer's residual path.
    let n_layers = params.layers.len();
    let mut d_stream = Matrix::zeros(frames, res_ch);
    let mut d_f = vec![0.0; gate_ch];
    let mut d_g = vec![0.0; gate_ch];
    let tap_len = gate_ch * res_ch;
    for k in (0..n_layers).rev() {
        let layer = &params.layers[k];
        let gl = &mut g.layers[k];
        let z = &trace.gated[k];
        let r_in = &trace.layer_inputs[k];
        let mut d_z = Matrix::zeros(frames, gate_ch);
        for t in 0..frames {
            let ds = d_skip.row(t);
            outer_acc(&mut gl.skip_weight.data, ds, z.row(t));
            add_into(&mut gl.skip_bias.data, ds);
            matvec_t_acc(&layer.skip_weight.data, ds, d_z.row_mut(t));
        }
        if k + 1 < n_layers {
            for t in 0..frames {
                let dr = d_stream.row(t);
                outer_acc(&mut gl.residual_weight.data, dr, z.row(t));
                add_into(&mut gl.residual_bias.data, dr);
                matvec_t_acc(&layer.residual_weight.data, dr, d_z.row_mut(t));
            }
        }
        // From here on `d_stream` accumulates the gradient for this layer's
        // input: the identity path is already in place.
        for t in 0..frames {
            let (f, gp, dz) = (trace.filter_pre[k].row(t), trace.gate_pre[k].row(t), d_z.row(t));
            for o in 0..gate_ch {
                let th = f[o].tanh();
                let sg = sigmoid(gp[o]);
                d_f[o] = dz[o] * sg * (1.0 - th * th);
                d_g[o] = dz[o] * th * sg * (1.0 - sg);
            }
            add_into(&mut gl.filter_bias.data, &d_f);
            add_into(&mut gl.gate_bias.data, &d_g);
            outer_acc(&mut gl.cond_filter_weight.data, &d_f, cond.row(t));
            outer_acc(&mut gl.cond_gate_weight.data, &d_g, cond.row(t));
            for j in 0..kernel {
                let Some(s) = t.checked_sub((kernel - 1 - j) * layer.dilation) else { continue };
                let span = j * tap_len..(j + 1) * tap_len;
                outer_acc(&mut gl.filter_weight.data[span.clone()], &d_f, r_in.row(s));
                outer_acc(&mut gl.gate_weight.data[span.clone()], &d_g, r_in.row(s));
                let dr = d_stream.row_mut(s);
                matvec_t_acc(&layer.filter_weight.data[span.clone()], &d_f, dr);
                matvec_t_acc(&layer.gate_weight.data[span], &d_g, dr);
            }
        }
    }

    for t in 0..frames {
        let dr = d_stream.row(t);
        outer_acc(&mut g.input_weight.data, dr, trace.input.row(t));
        add_into(&mut g.input_bias.data, dr);
    }
    grads
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Sums in a fixed pairwise tree over item order, independent of how the
/// items were scheduled across threads.
fn pairwise_sum(mut items: Vec<GradientSet>) -> Option<GradientSet> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.add_assign(&b);
            }
            next.push(a);
        }
        items = next;
    }
    items.pop()
}

fn run_items(params: &NetworkParams, batch: &[Sequence], grid: Grid, want_grad: bool) -> Result<Vec<ItemResult>> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    batch
        .par_iter()
        .map(|seq| item_loss(params, seq, grid, want_grad))
        .collect()
}

fn mean_loss(results: &[ItemResult]) -> Result<(f64, usize)> {
    let count: usize = results.iter().map(|r| r.count).sum();
    if count == 0 {
        return Err(Error::InvalidInput("batch has no predicted timesteps".into()));
    }
    let total: f64 = results.iter().map(|r| r.nll_sum).sum();
    Ok((total / count as f64, count))
}

/// Mean negative log-likelihood per predicted scalar over the batch.
pub fn nll_loss(params: &NetworkParams, batch: &[Sequence], grid: Grid) -> Result<f64> {
    let results = run_items(params, batch, grid, false)?;
    Ok(mean_loss(&results)?.0)
}

/// Loss and its exact gradient with respect to every parameter.
pub fn backward(params: &NetworkParams, batch: &[Sequence], grid: Grid) -> Result<(f64, GradientSet)> {
    let mut results = run_items(params, batch, grid, true)?;
    let (loss, count) = mean_loss(&results)?;
    let grads: Vec<GradientSet> = results.iter_mut().filter_map(|r| r.grads.take()).collect();
    let mut total = pairwise_sum(grads).ok_or_else(|| Error::Internal("no gradients".into()))?;
    total.scale(1.0 / count as f64);
    if let Some(name) = total.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    Ok((loss, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavenet::{NetworkConfig, LOG_SCALE_MIN};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            layers_per_stack: 2,
            stacks: 1,
            residual_channels: 4,
            gate_channels: 4,
            skip_channels: 4,
            mixture_components: 2,
            input_channels: 3,
            cond_channels: 5,
            ..NetworkConfig::default()
        }
    }

    fn random_item(cfg: &NetworkConfig, frames: usize, grid: Grid, rng: &mut impl Rng) -> Sequence {
        let x = Matrix::from_fn(frames, cfg.input_channels, |_, _| grid.snap(rng.gen_range(-1.0..1.0)));
        let cond = Matrix::from_fn(frames, cfg.cond_channels, |_, _| rng.gen_range(-1.0..1.0));
        Sequence::new("item", x, cond)
    }

    #[test]
    fn uniform_initial_head_is_near_log_levels() {
        let cfg = NetworkConfig {
            mixture_components: 10,
            input_channels: 10,
            ..tiny_config()
        };
        let grid = Grid::new(256);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = NetworkParams::init(&cfg, &mut rng);
        // Targets spread over every bin.
        let x = Matrix::from_fn(256, 10, |t, c| grid.value((t * 7 + c * 31) % 256));
        let cond = Matrix::from_fn(256, cfg.cond_channels, |_, _| rng.gen_range(-1.0..1.0));
        let loss = nll_loss(&params, &[Sequence::new("u", x, cond)], grid).unwrap();
        assert!((loss - 256f64.ln()).abs() < 0.05, "loss {loss}");
    }

    #[test]
    fn perfect_prediction_limit() {
        // A head that places one sharp component on each target bin.
        let cfg = NetworkConfig {
            mixture_components: 1,
            ..tiny_config()
        };
        let grid = Grid::new(256);
        let mut params = NetworkParams::zeros(&cfg);
        let target = 0.2;
        for c in 0..cfg.input_channels {
            params.head_out_bias.data[3 * c + 1] = grid.snap(target);
            params.head_out_bias.data[3 * c + 2] = LOG_SCALE_MIN;
        }
        let x = Matrix::from_fn(16, cfg.input_channels, |_, _| grid.snap(target));
        let cond = Matrix::zeros(16, cfg.cond_channels);
        let sharp = nll_loss(&params, &[Sequence::new("p", x.clone(), cond.clone())], grid).unwrap();
        for c in 0..cfg.input_channels {
            params.head_out_bias.data[3 * c + 2] = LOG_SCALE_MIN + 1.0;
        }
        let wider = nll_loss(&params, &[Sequence::new("p", x, cond)], grid).unwrap();
        assert!(sharp > 0.0 && sharp < 0.03, "{sharp}");
        assert!(wider > sharp);
    }

    #[test]
    fn duplicating_items_keeps_the_mean() {
        let cfg = tiny_config();
        let grid = Grid::new(256);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = NetworkParams::random(&cfg, 0.3, &mut rng);
        let a = random_item(&cfg, 20, grid, &mut rng);
        let b = random_item(&cfg, 20, grid, &mut rng);
        let once = nll_loss(&params, &[a.clone(), b.clone()], grid).unwrap();
        let twice = nll_loss(&params, &[a.clone(), b.clone(), a, b], grid).unwrap();
        assert!((once - twice).abs() < 1e-9);
    }

    #[test]
    fn zero_output_projection_blocks_trunk_gradients() {
        let cfg = tiny_config();
        let grid = Grid::new(256);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = NetworkParams::random(&cfg, 0.3, &mut rng);
        params.head_out_weight.data.fill(0.0);
        let item = random_item(&cfg, 16, grid, &mut rng);
        let (_, grads) = backward(&params, &[item], grid).unwrap();
        for (name, t) in grads.0.named_tensors() {
            if name.starts_with("head.out") {
                continue;
            }
            assert!(t.data.iter().all(|&v| v == 0.0), "{name} has signal");
        }
    }

    #[test]
    fn single_component_logit_gradient_is_zero() {
        let cfg = NetworkConfig {
            mixture_components: 1,
            ..tiny_config()
        };
        let grid = Grid::new(256);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = NetworkParams::random(&cfg, 0.3, &mut rng);
        let item = random_item(&cfg, 10, grid, &mut rng);
        let (_, grads) = backward(&params, &[item], grid).unwrap();
        let head = &grads.0.head_out_weight;
        let s = cfg.skip_channels;
        for c in 0..cfg.input_channels {
            let row = 3 * c;
            assert!(head.data[row * s..(row + 1) * s].iter().all(|&v| v == 0.0));
            assert_eq!(grads.0.head_out_bias.data[row], 0.0);
        }
    }

    #[test]
    fn context_frames_carry_no_loss() {
        let cfg = tiny_config();
        let grid = Grid::new(256);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = NetworkParams::random(&cfg, 0.3, &mut rng);
        let mut item = random_item(&cfg, 12, grid, &mut rng);
        item.loss_from = 4;
        assert_eq!(item.predicted_scalars(), 8 * cfg.input_channels);
        // Changing a target inside the context alters inputs after it but not
        // the set of scored frames; the loss is still finite and defined.
        assert!(nll_loss(&params, &[item], grid).unwrap().is_finite());
    }

    #[test]
    fn gradients_are_deterministic_across_thread_counts() {
        let cfg = tiny_config();
        let grid = Grid::new(256);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = NetworkParams::random(&cfg, 0.3, &mut rng);
        let batch: Vec<Sequence> = (0..5).map(|_| random_item(&cfg, 18, grid, &mut rng)).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| backward(&params, &batch, grid)).unwrap();
        let b = four.install(|| backward(&params, &batch, grid)).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }
}
