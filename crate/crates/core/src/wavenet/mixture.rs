//! Discretized mixture of logistics over a uniform grid on `[-1, 1]`.
//!
//! Bin `k` has center `-1 + 2k / (L - 1)` and half-width `1 / (L - 1)`. A
//! component with mean `mu` and scale `s` assigns it
//! `sigmoid((c + w - mu) / s) - sigmoid((c - w - mu) / s)`; the first and last
//! bins absorb the open tails. Means and scales are in normalized units.

use super::config::LOG_SCALE_MIN;
use crate::{Error, Result};

/// Uniform quantization grid on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    levels: usize,
}

impl Grid {
    pub fn new(levels: usize) -> Self {
        assert!(levels >= 2, "a grid needs at least two levels");
        Self { levels }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    #[inline]
    pub fn value(&self, bin: usize) -> f64 {
        -1.0 + 2.0 * bin as f64 / (self.levels - 1) as f64
    }

    #[inline]
    pub fn half_width(&self) -> f64 {
        1.0 / (self.levels - 1) as f64
    }

    /// Nearest bin, clamping out-of-range values to the edge bins.
    #[inline]
    pub fn quantize(&self, x: f64) -> usize {
        let pos = ((x + 1.0) * 0.5 * (self.levels - 1) as f64).round();
        pos.clamp(0.0, (self.levels - 1) as f64) as usize
    }

    #[inline]
    pub fn snap(&self, x: f64) -> f64 {
        self.value(self.quantize(x))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Log probability one component assigns to `bin`, with its partial
/// derivatives with respect to the mean and the (already clamped) log scale.
///
/// Interior bins use `log sigma(a) + log sigma(-b) + log(1 - exp(b - a))`,
/// which stays accurate far into the tails.
pub(crate) fn component_log_prob(grid: Grid, bin: usize, mean: f64, log_scale: f64) -> (f64, f64, f64) {
    let inv_s = (-log_scale).exp();
    let c = grid.value(bin) - mean;
    let w = grid.half_width();
    let a = (c + w) * inv_s;
    let b = (c - w) * inv_s;
    let last = grid.levels() - 1;
    let (lp, da, db) = if bin == 0 {
        (log_sigmoid(a), sigmoid(-a), 0.0)
    } else if bin == last {
        (log_sigmoid(-b), 0.0, -sigmoid(b))
    } else {
        let gap = a - b;
        let inv_em1 = 1.0 / gap.exp_m1();
        (
            log_sigmoid(a) + log_sigmoid(-b) + (-(-gap).exp_m1()).ln(),
            sigmoid(-a) + inv_em1,
            -sigmoid(b) - inv_em1,
        )
    };
    let d_mean = -(da + db) * inv_s;
    let d_log_scale = -(a * da + b * db);
    (lp, d_mean, d_log_scale)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// View of one channel's raw head output at one timestep:
/// `[logits; K] [means; K] [log scales; K]`.
#[derive(Debug, Clone, Copy)]
pub struct ChannelMixture<'a> {
    raw: &'a [f64],
}

impl<'a> ChannelMixture<'a> {
    pub fn new(raw: &'a [f64]) -> Self {
        debug_assert!(raw.len() % 3 == 0);
        Self { raw }
    }

    pub fn components(&self) -> usize {
        self.raw.len() / 3
    }

    pub fn logits(&self) -> &'a [f64] {
        &self.raw[..self.components()]
    }

    pub fn means(&self) -> &'a [f64] {
        let k = self.components();
        &self.raw[k..2 * k]
    }

    #[inline]
    pub fn log_scale(&self, i: usize) -> f64 {
        self.raw[2 * self.components() + i].max(LOG_SCALE_MIN)
    }

    /// Normalized log weights (log-softmax of the logits).
    pub fn log_weights(&self) -> Vec<f64> {
        let logits = self.logits();
        let lse = log_sum_exp(logits);
        logits.iter().map(|l| l - lse).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights().into_iter().map(f64::exp).collect()
    }

    pub fn to_mixture(&self) -> DiscretizedMixture {
        DiscretizedMixture {
            weights: self.weights(),
            means: self.means().to_vec(),
            log_scales: (0..self.components()).map(|i| self.log_scale(i)).collect(),
        }
    }

    pub fn log_prob(&self, grid: Grid, bin: usize) -> f64 {
        let terms: Vec<f64> = self
            .log_weights()
            .iter()
            .enumerate()
            .map(|(i, lw)| lw + component_log_prob(grid, bin, self.means()[i], self.log_scale(i)).0)
            .collect();
        log_sum_exp(&terms)
    }

    /// Negative log-likelihood of `bin` and its gradient with respect to the
    /// raw head outputs, accumulated into `grad` scaled by `weight`.
    pub(crate) fn nll_with_grad(&self, grid: Grid, bin: usize, weight: f64, grad: &mut [f64]) -> f64 {
        let k = self.components();
        let log_w = self.log_weights();
        let mut terms = Vec::with_capacity(k);
        let mut partials = Vec::with_capacity(k);
        for (i, lw) in log_w.iter().enumerate() {
            let (lp, dm, ds) = component_log_prob(grid, bin, self.means()[i], self.log_scale(i));
            terms.push(lw + lp);
            partials.push((dm, ds));
        }
        let total = log_sum_exp(&terms);
        for i in 0..k {
            let resp = (terms[i] - total).exp();
            let pi = log_w[i].exp();
            grad[i] += weight * (pi - resp);
            grad[k + i] -= weight * resp * partials[i].0;
            if self.raw[2 * k + i] >= LOG_SCALE_MIN {
                grad[2 * k + i] -= weight * resp * partials[i].1;
            }
        }
        -total
    }
}

/// A mixture with explicit weights, validated to lie on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub log_scales: Vec<f64>,
}

impl DiscretizedMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, log_scales: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != log_scales.len() {
            return Err(Error::Shape(format!(
                "mixture needs equal non-empty weights/means/log_scales, got {}/{}/{}",
                weights.len(),
                means.len(),
                log_scales.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "mixture weights must be non-negative and sum to 1 (sum = {sum})"
            )));
        }
        if means.iter().chain(&log_scales).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixture means/log scales".into()));
        }
        let log_scales = log_scales.into_iter().map(|s| s.max(LOG_SCALE_MIN)).collect();
        Ok(Self {
            weights,
            means,
            log_scales,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn log_bin_probability(&self, grid: Grid, bin: usize) -> f64 {
        let terms: Vec<f64> = (0..self.components())
            .filter(|&i| self.weights[i] > 0.0)
            .map(|i| {
                self.weights[i].ln() + component_log_prob(grid, bin, self.means[i], self.log_scales[i]).0
            })
            .collect();
        log_sum_exp(&terms)
    }

    pub fn bin_probability(&self, grid: Grid, bin: usize) -> f64 {
        self.log_bin_probability(grid, bin).exp()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }
}

/// Probability of the grid bin nearest `x` under `mix`.
pub fn mol_likelihood(x: f64, mix: &DiscretizedMixture, grid: Grid) -> f64 {
    mix.bin_probability(grid, grid.quantize(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn unit_scale_centered_bin() {
        let grid = Grid::new(256);
        // A scale of one integer-grid step is 2w in normalized units.
        let s = 2.0 * grid.half_width();
        let mix = DiscretizedMixture::new(vec![1.0], vec![grid.value(128)], vec![s.ln()]).unwrap();
        let expected = naive_sigmoid(0.5) - naive_sigmoid(-0.5);
        assert!((expected - 0.244918).abs() < 1e-6);
        assert!((mix.bin_probability(grid, 128) - expected).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_average_components() {
        let grid = Grid::new(256);
        let a = DiscretizedMixture::new(vec![1.0], vec![-0.3], vec![-3.0]).unwrap();
        let b = DiscretizedMixture::new(vec![1.0], vec![0.4], vec![-2.0]).unwrap();
        let ab = DiscretizedMixture::new(vec![0.5, 0.5], vec![-0.3, 0.4], vec![-3.0, -2.0]).unwrap();
        for bin in [0, 40, 90, 128, 200, 255] {
            let mean = 0.5 * (a.bin_probability(grid, bin) + b.bin_probability(grid, bin));
            assert!((ab.bin_probability(grid, bin) - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_off_simplex() {
        assert!(DiscretizedMixture::new(vec![0.5, 0.6], vec![0.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(DiscretizedMixture::new(vec![1.2, -0.2], vec![0.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(DiscretizedMixture::new(vec![1.0], vec![0.0, 1.0], vec![0.0]).is_err());
    }

    #[test]
    fn log_prob_survives_far_tails() {
        let grid = Grid::new(256);
        let (lp, _, _) = component_log_prob(grid, 5, 0.9, LOG_SCALE_MIN);
        assert!(lp.is_finite() && lp < -100.0);
        let (lp, _, _) = component_log_prob(grid, 250, -0.9, LOG_SCALE_MIN);
        assert!(lp.is_finite() && lp < -100.0);
    }

    #[test]
    fn component_partials_match_finite_differences() {
        let grid = Grid::new(256);
        let h = 1e-6;
        for &(bin, mean, ls) in &[(0, -0.8, -3.0), (255, 0.7, -2.5), (100, -0.2, -4.0), (130, 0.05, -1.0)] {
            let (_, dm, ds) = component_log_prob(grid, bin, mean, ls);
            let fm = (component_log_prob(grid, bin, mean + h, ls).0
                - component_log_prob(grid, bin, mean - h, ls).0)
                / (2.0 * h);
            let fs = (component_log_prob(grid, bin, mean, ls + h).0
                - component_log_prob(grid, bin, mean, ls - h).0)
                / (2.0 * h);
            assert!((dm - fm).abs() <= 1e-5 * dm.abs().max(1.0), "{dm} vs {fm}");
            assert!((ds - fs).abs() <= 1e-5 * ds.abs().max(1.0), "{ds} vs {fs}");
        }
    }

    #[test]
    fn single_component_perfect_bin_has_zero_logit_gradient() {
        let grid = Grid::new(256);
        let raw = [0.7, grid.value(77), LOG_SCALE_MIN];
        let mut grad = [0.0; 3];
        let nll = ChannelMixture::new(&raw).nll_with_grad(grid, 77, 1.0, &mut grad);
        assert_eq!(grad[0], 0.0);
        assert!(nll > 0.0 && nll < 0.05);
    }

    proptest! {
        #[test]
        fn bins_sum_to_one(weights in prop::collection::vec(0.01f64..1.0, 1..12), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let total: f64 = weights.iter().sum();
            let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let means = (0..weights.len()).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let scales = (0..weights.len()).map(|_| rng.gen_range(-8.0..1.0)).collect();
            let mix = DiscretizedMixture::new(weights, means, scales).unwrap();
            let grid = Grid::new(256);
            let sum: f64 = (0..256).map(|b| mix.bin_probability(grid, b)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
        }

        #[test]
        fn quantize_snaps_to_nearest(x in -1.2f64..1.2) {
            let grid = Grid::new(256);
            let bin = grid.quantize(x);
            let clamped = x.clamp(-1.0, 1.0);
            for other in [bin.saturating_sub(1), (bin + 1).min(255)] {
                prop_assert!((grid.value(bin) - clamped).abs() <= (grid.value(other) - clamped).abs() + 1e-12);
            }
        }
    }
}
