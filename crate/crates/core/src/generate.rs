//! Autoregressive decoding.
//!
//! [`generate_naive`] keeps no state between steps: each output recomputes
//! every column of every layer it depends on, back to the last
//! `receptive_field` inputs. [`generate_cached`] keeps, for each
//! layer, a ring buffer of the layer inputs its dilated taps still need and
//! computes a single new column per layer per step. Both use the same column
//! routines as the training forward pass and therefore agree exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::wavenet::{
    check_inputs, gated_column, head_column, input_column, residual_column, skip_column,
    ChannelMixture, Grid, NetworkParams, OpCounter,
};
use crate::{Error, Matrix, Result};

/// How a predicted mixture becomes a single value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeRule {
    /// `sum_i pi_i mu_i`.
    MixtureMean,
    /// Grid level with the highest bin probability (lowest index on ties).
    ModeBin,
    /// Component drawn from the weights, then logistic noise with the
    /// component scale multiplied by `temperature`.
    Sample { seed: u64, temperature: f64 },
}

impl Default for DecodeRule {
    fn default() -> Self {
        DecodeRule::MixtureMean
    }
}

impl DecodeRule {
    pub fn validate(&self) -> Result<()> {
        if let DecodeRule::Sample { temperature, .. } = self {
            if !(temperature.is_finite() && *temperature >= 0.0) {
                return Err(Error::InvalidInput("decode.temperature must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            DecodeRule::MixtureMean => "mean",
            DecodeRule::ModeBin => "mode",
            DecodeRule::Sample { .. } => "sample",
        }
    }
}

/// Stateful decoder; sampling draws happen in time-then-channel order.
pub struct Decoder {
    rule: DecodeRule,
    grid: Grid,
    rng: ChaCha8Rng,
}

impl Decoder {
    pub fn new(rule: DecodeRule, grid: Grid) -> Self {
        let seed = match rule {
            DecodeRule::Sample { seed, .. } => seed,
            _ => 0,
        };
        Self {
            rule,
            grid,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Decoded value before re-quantization.
    pub fn decode(&mut self, mix: &ChannelMixture<'_>) -> f64 {
        match self.rule {
            DecodeRule::MixtureMean => {
                let w = mix.weights();
                w.iter().zip(mix.means()).map(|(p, m)| p * m).sum()
            }
            DecodeRule::ModeBin => {
                let mut best = (f64::NEG_INFINITY, 0);
                for bin in 0..self.grid.levels() {
                    let lp = mix.log_prob(self.grid, bin);
                    if lp > best.0 {
                        best = (lp, bin);
                    }
                }
                self.grid.value(best.1)
            }
            DecodeRule::Sample { temperature, .. } => {
                let w = mix.weights();
                let u: f64 = self.rng.gen();
                let mut acc = 0.0;
                let mut pick = w.len() - 1;
                for (i, p) in w.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                let v: f64 = self.rng.gen_range(1e-12..1.0 - 1e-12);
                let noise = (v / (1.0 - v)).ln();
                let x = mix.means()[pick] + mix.log_scale(pick).exp() * temperature * noise;
                x.clamp(-1.0, 1.0)
            }
        }
    }
}

/// Generated trajectories in normalized units together with the work done.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// `frames x input_channels`, every value a grid level.
    pub x: Matrix,
    pub ops: OpCounter,
}

impl Generated {
    pub fn macs_per_sample(&self) -> f64 {
        if self.x.rows() == 0 {
            0.0
        } else {
            self.ops.macs as f64 / self.x.rows() as f64
        }
    }
}

/// Fixed-capacity history of vectors; `lag(m)` is the vector pushed `m`
/// pushes ago.
#[derive(Debug, Clone)]
pub struct RingBuffer {
    width: usize,
    capacity: usize,
    data: Vec<f64>,
    cursor: usize,
    len: usize,
}

impl RingBuffer {
    pub fn new(capacity: usize, width: usize) -> Self {
        Self {
            width,
            capacity,
            data: vec![0.0; capacity * width],
            cursor: 0,
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, v: &[f64]) {
        if self.capacity == 0 {
            return;
        }
        let at = self.cursor * self.width;
        self.data[at..at + self.width].copy_from_slice(v);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    /// `None` if fewer than `m` vectors have been pushed; an error if `m`
    /// exceeds the capacity.
    pub fn lag(&self, m: usize) -> Result<Option<&[f64]>> {
        if m == 0 || m > self.capacity {
            return Err(Error::Internal(format!(
                "ring buffer lag {m} outside capacity {}",
                self.capacity
            )));
        }
        if m > self.len {
            return Ok(None);
        }
        let idx = (self.cursor + self.capacity - m) % self.capacity;
        Ok(Some(&self.data[idx * self.width..(idx + 1) * self.width]))
    }
}

/// Per-layer histories of residual-stream inputs, sized
/// `dilation * (kernel_size - 1)`.
#[derive(Debug, Clone)]
pub struct GenerationCache {
    pub layers: Vec<RingBuffer>,
    pub step: u64,
}

impl GenerationCache {
    pub fn new(params: &NetworkParams) -> Self {
        let cfg = &params.config;
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| RingBuffer::new(l.dilation * (cfg.kernel_size - 1), cfg.residual_channels))
                .collect(),
            step: 0,
        }
    }

    pub fn buffer_lens(&self) -> Vec<usize> {
        self.layers.iter().map(RingBuffer::len).collect()
    }
}

fn check_cond(params: &NetworkParams, cond: &Matrix, rule: &DecodeRule) -> Result<()> {
    rule.validate()?;
    let empty = Matrix::zeros(cond.rows(), params.config.input_channels);
    check_inputs(params, &empty, cond)
}

/// Decodes one head output row into `out`, re-quantized to the grid.
fn decode_frame(
    decoder: &mut Decoder,
    raw: &[f64],
    params: &NetworkParams,
    grid: Grid,
    t: usize,
    out: &mut [f64],
) -> Result<()> {
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("mixture parameter {i} at frame {t}")));
    }
    let width = 3 * params.config.mixture_components;
    for (c, o) in out.iter_mut().enumerate() {
        let mix = ChannelMixture::new(&raw[c * width..(c + 1) * width]);
        *o = grid.snap(decoder.decode(&mix));
    }
    Ok(())
}

/// Reference decoder: at each step every column the new output depends on
/// is recomputed from the inputs. Layer `k` needs the last
/// `1 + sum_{j>k} (kernel - 1) d_j` columns; the input layer needs the last
/// `receptive_field`.
pub fn generate_naive(params: &NetworkParams, cond: &Matrix, rule: DecodeRule) -> Result<Generated> {
    check_cond(params, cond, &rule)?;
    let cfg = &params.config;
    let grid = Grid::new(cfg.quantization_levels);
    let frames = cond.rows();
    let rf = cfg.receptive_field();
    let (res_ch, gate_ch, skip_ch) = (cfg.residual_channels, cfg.gate_channels, cfg.skip_channels);
    let kernel = cfg.kernel_size;
    let layers = params.layers.len();
    let mut need = vec![1usize; layers];
    for k in (0..layers.saturating_sub(1)).rev() {
        need[k] = need[k + 1] + (kernel - 1) * params.layers[k + 1].dilation;
    }
    let mut ops = OpCounter::default();
    let mut decoder = Decoder::new(rule, grid);
    let mut x = Matrix::zeros(frames, cfg.input_channels);
    let zero_input = vec![0.0; cfg.input_channels];
    let (mut f, mut g) = (vec![0.0; gate_ch], vec![0.0; gate_ch]);
    let mut res_scratch = vec![0.0; res_ch];
    let mut skip_scratch = vec![0.0; skip_ch];
    let mut hidden = vec![0.0; skip_ch];
    let mut raw = vec![0.0; cfg.head_width()];

    for t in 0..frames {
        // Window positions 0..n map to frames start..=t; `stream` holds the
        // last `stream.rows()` of them.
        let n = (t + 1).min(rf);
        let start = t + 1 - n;
        let mut stream = Matrix::zeros(n, res_ch);
        for i in 0..n {
            let s = start + i;
            let input = if s == 0 { &zero_input[..] } else { x.row(s - 1) };
            input_column(params, input, stream.row_mut(i), &mut ops);
        }
        let mut skip = vec![0.0; skip_ch];
        for (k, layer) in params.layers.iter().enumerate() {
            let cols = need[k].min(n);
            let offset = n - stream.rows();
            let mut z = Matrix::zeros(cols, gate_ch);
            let mut taps: Vec<Option<&[f64]>> = vec![None; kernel];
            for q in 0..cols {
                let pos = n - cols + q;
                for (j, tap) in taps.iter_mut().enumerate() {
                    let lag = (kernel - 1 - j) * layer.dilation;
                    *tap = pos.checked_sub(lag).map(|p| stream.row(p - offset));
                }
                gated_column(layer, &taps, cond.row(start + pos), &mut f, &mut g, z.row_mut(q), &mut ops);
            }
            skip_column(layer, z.row(cols - 1), &mut skip, &mut skip_scratch, &mut ops);
            if k + 1 < layers {
                let mut next = Matrix::zeros(cols, res_ch);
                let below = stream.rows() - cols;
                for q in 0..cols {
                    residual_column(layer, z.row(q), stream.row(below + q), next.row_mut(q), &mut res_scratch, &mut ops);
                }
                stream = next;
            }
        }
        head_column(params, &skip, &mut hidden, &mut raw, &mut ops);
        decode_frame(&mut decoder, &raw, params, grid, t, x.row_mut(t))?;
    }
    Ok(Generated { x, ops })
}

/// Cached decoder: one new column per layer per step.
pub fn generate_cached(params: &NetworkParams, cond: &Matrix, rule: DecodeRule) -> Result<Generated> {
    let mut cache = GenerationCache::new(params);
    generate_cached_with(params, cond, rule, &mut cache)
}

/// As [`generate_cached`], exposing the cache for inspection.
pub fn generate_cached_with(
    params: &NetworkParams,
    cond: &Matrix,
    rule: DecodeRule,
    cache: &mut GenerationCache,
) -> Result<Generated> {
    check_cond(params, cond, &rule)?;
    let cfg = &params.config;
    if cache.layers.len() != params.layers.len() {
        return Err(Error::Internal("generation cache does not match the network".into()));
    }
    let grid = Grid::new(cfg.quantization_levels);
    let frames = cond.rows();
    let (res_ch, gate_ch, skip_ch) = (cfg.residual_channels, cfg.gate_channels, cfg.skip_channels);
    let kernel = cfg.kernel_size;
    let mut ops = OpCounter::default();
    let mut decoder = Decoder::new(rule, grid);
    let mut x = Matrix::zeros(frames, cfg.input_channels);
    let zero_input = vec![0.0; cfg.input_channels];
    let (mut f, mut g, mut z) = (vec![0.0; gate_ch], vec![0.0; gate_ch], vec![0.0; gate_ch]);
    let mut r_in = vec![0.0; res_ch];
    let mut r_out = vec![0.0; res_ch];
    let mut res_scratch = vec![0.0; res_ch];
    let mut skip_scratch = vec![0.0; skip_ch];
    let mut hidden = vec![0.0; skip_ch];
    let mut raw = vec![0.0; cfg.head_width()];

    for t in 0..frames {
        let input = if t == 0 { &zero_input[..] } else { x.row(t - 1) };
        input_column(params, input, &mut r_in, &mut ops);
        let mut skip = vec![0.0; skip_ch];
        for (k, layer) in params.layers.iter().enumerate() {
            let buffer = &cache.layers[k];
            let mut taps: Vec<Option<&[f64]>> = Vec::with_capacity(kernel);
            for j in 0..kernel {
                let lag = (kernel - 1 - j) * layer.dilation;
                taps.push(if lag == 0 { Some(&r_in[..]) } else { buffer.lag(lag)? });
            }
            gated_column(layer, &taps, cond.row(t), &mut f, &mut g, &mut z, &mut ops);
            skip_column(layer, &z, &mut skip, &mut skip_scratch, &mut ops);
            if k + 1 < params.layers.len() {
                residual_column(layer, &z, &r_in, &mut r_out, &mut res_scratch, &mut ops);
            }
            cache.layers[k].push(&r_in);
            std::mem::swap(&mut r_in, &mut r_out);
        }
        cache.step += 1;
        head_column(params, &skip, &mut hidden, &mut raw, &mut ops);
        decode_frame(&mut decoder, &raw, params, grid, t, x.row_mut(t))?;
    }
    Ok(Generated { x, ops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavenet::{mol_likelihood, DiscretizedMixture, NetworkConfig};

    fn config(layers: usize) -> NetworkConfig {
        NetworkConfig {
            layers_per_stack: layers,
            stacks: 1,
            residual_channels: 5,
            gate_channels: 4,
            skip_channels: 6,
            mixture_components: 2,
            input_channels: 3,
            cond_channels: 4,
            ..NetworkConfig::default()
        }
    }

    fn random_cond(frames: usize, bands: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(frames, bands, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn mean_of_two_components() {
        let raw = [0.0, 0.0, -0.2, 0.4, -3.0, -3.0];
        let mix = ChannelMixture::new(&raw);
        let mut d = Decoder::new(DecodeRule::MixtureMean, Grid::new(256));
        assert!((d.decode(&mix) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mean_scales_with_means() {
        let raw = [0.3, -0.7, -0.2, 0.4, -3.0, -2.0];
        let scaled = [0.3, -0.7, -0.5, 1.0, -3.0, -2.0];
        let mut d = Decoder::new(DecodeRule::MixtureMean, Grid::new(256));
        let a = d.decode(&ChannelMixture::new(&raw));
        let b = d.decode(&ChannelMixture::new(&scaled));
        assert!((b - 2.5 * a).abs() < 1e-12);
    }

    #[test]
    fn mode_bin_on_grid_point() {
        let grid = Grid::new(256);
        let mu = grid.value(77);
        let raw = [0.0, mu, -6.0];
        let mut d = Decoder::new(DecodeRule::ModeBin, grid);
        assert_eq!(d.decode(&ChannelMixture::new(&raw)), mu);
    }

    #[test]
    fn mode_bin_matches_exhaustive_scan() {
        let grid = Grid::new(256);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..9)
                .map(|i| match i / 3 {
                    0 => rng.gen_range(-2.0..2.0),
                    1 => rng.gen_range(-1.0..1.0),
                    _ => rng.gen_range(-5.0..-1.0),
                })
                .collect();
            let cm = ChannelMixture::new(&raw);
            let mix = DiscretizedMixture::new(cm.weights(), cm.means().to_vec(), (0..3).map(|i| cm.log_scale(i)).collect())
                .unwrap();
            let mut best = (f64::NEG_INFINITY, 0.0);
            for bin in 0..256 {
                let p = mol_likelihood(grid.value(bin), &mix, grid);
                if p > best.0 {
                    best = (p, grid.value(bin));
                }
            }
            let mut d = Decoder::new(DecodeRule::ModeBin, grid);
            assert_eq!(d.decode(&cm), best.1);
        }
    }

    #[test]
    fn single_component_mean_is_quantized() {
        let mut cfg = config(2);
        cfg.mixture_components = 1;
        let mut params = NetworkParams::zeros(&cfg);
        for c in 0..cfg.input_channels {
            params.head_out_bias.data[3 * c + 1] = 0.3;
        }
        let out = generate_cached(&params, &random_cond(12, cfg.cond_channels, 1), DecodeRule::MixtureMean).unwrap();
        let q = Grid::new(256).snap(0.3);
        assert!(out.x.as_slice().iter().all(|&v| v == q));
    }

    #[test]
    fn ring_buffer_lags() {
        let mut b = RingBuffer::new(3, 1);
        assert_eq!(b.lag(1).unwrap(), None);
        for v in 1..=5 {
            b.push(&[v as f64]);
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.lag(1).unwrap(), Some(&[5.0][..]));
        assert_eq!(b.lag(3).unwrap(), Some(&[3.0][..]));
        assert!(b.lag(4).is_err());
    }

    #[test]
    fn naive_and_cached_agree_exactly() {
        for layers in 1..=3 {
            let cfg = config(layers);
            let mut rng = ChaCha8Rng::seed_from_u64(layers as u64);
            let params = NetworkParams::random(&cfg, 0.5, &mut rng);
            let cond = random_cond(40, cfg.cond_channels, 9);
            for rule in [
                DecodeRule::MixtureMean,
                DecodeRule::ModeBin,
                DecodeRule::Sample { seed: 3, temperature: 1.0 },
            ] {
                let a = generate_naive(&params, &cond, rule).unwrap();
                let b = generate_cached(&params, &cond, rule).unwrap();
                assert_eq!(a.x, b.x, "layers {layers} rule {}", rule.name());
            }
        }
    }

    #[test]
    fn cache_fill_levels() {
        let cfg = config(3);
        let params = NetworkParams::zeros(&cfg);
        let mut cache = GenerationCache::new(&params);
        let caps: Vec<usize> = cache.layers.iter().map(RingBuffer::capacity).collect();
        assert_eq!(caps, vec![2, 4, 8]);
        generate_cached_with(&params, &random_cond(5, cfg.cond_channels, 2), DecodeRule::MixtureMean, &mut cache)
            .unwrap();
        assert_eq!(cache.buffer_lens(), vec![2, 4, 5]);
        assert_eq!(cache.step, 5);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let cfg = config(2);
        let params = NetworkParams::zeros(&cfg);
        let out = generate_cached(&params, &Matrix::zeros(0, cfg.cond_channels), DecodeRule::MixtureMean).unwrap();
        assert_eq!(out.x.rows(), 0);
        assert_eq!(out.x.cols(), cfg.input_channels);
    }

    #[test]
    fn first_frame_depends_only_on_conditioning() {
        let cfg = config(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = NetworkParams::random(&cfg, 0.5, &mut rng);
        let cond = random_cond(1, cfg.cond_channels, 6);
        let a = generate_naive(&params, &cond, DecodeRule::ModeBin).unwrap();
        let b = generate_naive(&params, &cond, DecodeRule::ModeBin).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn rejects_wrong_band_count() {
        let cfg = config(1);
        let params = NetworkParams::zeros(&cfg);
        let err = generate_cached(&params, &Matrix::zeros(3, 7), DecodeRule::MixtureMean).unwrap_err();
        assert!(err.to_string().contains('7'));
    }
}
