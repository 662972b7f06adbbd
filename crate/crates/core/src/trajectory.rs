//! Vocal-tract trajectories: the ten derived channels, decimation from the
//! articulograph rate, and per-speaker dynamic-range normalization.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Matrix, Result};

pub const CHANNEL_COUNT: usize = 10;

pub const CHANNEL_NAMES: [&str; CHANNEL_COUNT] = [
    "VT1", "VT2", "VT3", "VT4", "VT5", "VT6", "VT7", "VT8", "VT9", "VT10",
];

pub const CHANNEL_DESCRIPTIONS: [&str; CHANNEL_COUNT] = [
    "Horizontal Tongue Dorsum",
    "Tongue Dorsum Vertical Height to Hard Palate",
    "Horizontal Lateral Tongue",
    "Lateral Tongue Vertical Height to Hard Palate",
    "Horizontal Tongue Tip",
    "Tongue Tip Vertical Height to Hard Palate",
    "Horizontal Lip Protrusion",
    "Vertical Lip Separation",
    "Lateral Lip Corner",
    "Vertical Middle Incisor (Jaw)",
];

/// Rate of the raw articulograph stream.
pub const SENSOR_RATE_HZ: f64 = 400.0;
/// Rate the model works at.
pub const MODEL_RATE_HZ: f64 = 100.0;

/// One utterance of articulatory data: `frames x 10`, millimetres unless the
/// set has been normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub channels: Matrix,
    pub frame_rate: f64,
    pub speaker_id: String,
}

impl TrajectorySet {
    pub fn new(channels: Matrix, frame_rate: f64, speaker_id: impl Into<String>) -> Result<Self> {
        if channels.cols() != CHANNEL_COUNT {
            return Err(Error::Shape(format!(
                "trajectory must have {CHANNEL_COUNT} channels, found {}",
                channels.cols()
            )));
        }
        if !(frame_rate > 0.0) {
            return Err(Error::InvalidInput(format!("frame rate {frame_rate} must be positive")));
        }
        if !channels.is_finite() {
            return Err(Error::NonFinite("trajectory contains non-finite values".into()));
        }
        Ok(Self {
            channels,
            frame_rate,
            speaker_id: speaker_id.into(),
        })
    }

    pub fn frames(&self) -> usize {
        self.channels.rows()
    }

    /// Keeps the first `frames` frames.
    pub fn truncate(&mut self, frames: usize) {
        if frames < self.frames() {
            self.channels = self.channels.slice_rows(0, frames);
        }
    }
}

/// Second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(cutoff_hz: f64, rate_hz: f64, q: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * cutoff_hz / rate_hz;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 - cos) / 2.0 / a0;
        Biquad {
            b: [b0, (1.0 - cos) / a0, b0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Runs the section in place, starting from the steady state for a
    /// constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let mut z1 = (1.0 - b0) * first;
        let mut z2 = (b2 - a2) * first;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z1;
            z1 = b1 * input - a1 * y + z2;
            z2 = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// 4th-order Butterworth low-pass as two cascaded sections.
fn butterworth4(cutoff_hz: f64, rate_hz: f64) -> [Biquad; 2] {
    let q1 = 1.0 / (2.0 * (std::f64::consts::PI / 8.0).cos());
    let q2 = 1.0 / (2.0 * (3.0 * std::f64::consts::PI / 8.0).cos());
    [
        Biquad::lowpass(cutoff_hz, rate_hz, q1),
        Biquad::lowpass(cutoff_hz, rate_hz, q2),
    ]
}

const FILTER_PAD: usize = 128;

/// Zero-phase filtering with odd (point-reflected) edge extension, which
/// leaves constants and straight lines untouched.
fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let pad = FILTER_PAD.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Low-pass at 0.8x the new Nyquist, then keep every `factor`-th frame.
pub fn downsample(traj: &TrajectorySet, factor: usize) -> Result<TrajectorySet> {
    if factor < 1 {
        return Err(Error::InvalidInput("downsample factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(traj.clone());
    }
    let frames = traj.frames();
    if frames < factor {
        return Err(Error::InvalidInput(format!(
            "trajectory of {frames} frames is shorter than the decimation factor {factor}"
        )));
    }
    let new_rate = traj.frame_rate / factor as f64;
    let sections = butterworth4(0.8 * new_rate / 2.0, traj.frame_rate);
    let out_frames = frames / factor;
    let mut out = Matrix::zeros(out_frames, CHANNEL_COUNT);
    for c in 0..CHANNEL_COUNT {
        let filtered = filtfilt(&sections, &traj.channels.column(c));
        for t in 0..out_frames {
            out.set(t, c, filtered[t * factor]);
        }
    }
    TrajectorySet::new(out, new_rate, traj.speaker_id.clone())
}

/// Per-channel extrema of one speaker's training data.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub speaker_id: String,
    pub min: [f64; CHANNEL_COUNT],
    pub max: [f64; CHANNEL_COUNT],
}

pub fn fit_norm_stats<'a>(
    speaker_id: &str,
    utterances: impl IntoIterator<Item = &'a TrajectorySet>,
) -> Result<NormStats> {
    let mut min = [f64::INFINITY; CHANNEL_COUNT];
    let mut max = [f64::NEG_INFINITY; CHANNEL_COUNT];
    let mut seen = 0usize;
    for traj in utterances {
        seen += 1;
        for t in 0..traj.frames() {
            for (c, &v) in traj.channels.row(t).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
    }
    if seen == 0 {
        return Err(Error::InvalidInput(format!(
            "speaker {speaker_id} has no utterances to fit normalization on"
        )));
    }
    let stats = NormStats {
        speaker_id: speaker_id.to_string(),
        min,
        max,
    };
    stats.validate()?;
    Ok(stats)
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        for c in 0..CHANNEL_COUNT {
            if !(self.max[c] > self.min[c]) {
                return Err(Error::InvalidInput(format!(
                    "speaker {}: channel {} is constant or empty (min {}, max {})",
                    self.speaker_id, CHANNEL_NAMES[c], self.min[c], self.max[c]
                )));
            }
        }
        Ok(())
    }

    pub fn range(&self, c: usize) -> f64 {
        self.max[c] - self.min[c]
    }

    #[inline]
    pub fn normalize_value(&self, c: usize, x: f64) -> f64 {
        (2.0 * (x - self.min[c]) / (self.max[c] - self.min[c]) - 1.0).clamp(-1.0, 1.0)
    }

    #[inline]
    pub fn denormalize_value(&self, c: usize, y: f64) -> f64 {
        (y + 1.0) * 0.5 * (self.max[c] - self.min[c]) + self.min[c]
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("speaker = {}\n", self.speaker_id);
        for c in 0..CHANNEL_COUNT {
            s.push_str(&format!("{}.min = {:e}\n", CHANNEL_NAMES[c], self.min[c]));
            s.push_str(&format!("{}.max = {:e}\n", CHANNEL_NAMES[c], self.max[c]));
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(origin, format!("line {}: expected key = value", n + 1)))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let speaker_id = fields
            .get("speaker")
            .cloned()
            .ok_or_else(|| Error::format(origin, "missing speaker"))?;
        let mut min = [0.0; CHANNEL_COUNT];
        let mut max = [0.0; CHANNEL_COUNT];
        for c in 0..CHANNEL_COUNT {
            for (suffix, dst) in [("min", &mut min[c]), ("max", &mut max[c])] {
                let key = format!("{}.{suffix}", CHANNEL_NAMES[c]);
                let raw = fields
                    .get(&key)
                    .ok_or_else(|| Error::format(origin, format!("missing {key}")))?;
                *dst = raw
                    .parse()
                    .map_err(|_| Error::format(origin, format!("{key}: bad number {raw:?}")))?;
            }
        }
        let stats = NormStats {
            speaker_id,
            min,
            max,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }
}

/// Output of [`normalize`]: the scaled trajectory and how many values fell
/// outside the fitted range and were clamped.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub traj: TrajectorySet,
    pub clamped: usize,
}

/// Maps each channel from `[min, max]` to `[-1, 1]`, clamping anything
/// outside the fitted range.
pub fn normalize(traj: &TrajectorySet, stats: &NormStats) -> Normalized {
    let mut out = traj.channels.clone();
    let mut clamped = 0;
    for t in 0..out.rows() {
        for (c, v) in out.row_mut(t).iter_mut().enumerate() {
            if *v < stats.min[c] || *v > stats.max[c] {
                clamped += 1;
            }
            *v = stats.normalize_value(c, *v);
        }
    }
    Normalized {
        traj: TrajectorySet {
            channels: out,
            frame_rate: traj.frame_rate,
            speaker_id: traj.speaker_id.clone(),
        },
        clamped,
    }
}

pub fn denormalize(traj: &TrajectorySet, stats: &NormStats) -> TrajectorySet {
    let mut out = traj.channels.clone();
    for t in 0..out.rows() {
        for (c, v) in out.row_mut(t).iter_mut().enumerate() {
            *v = stats.denormalize_value(c, *v);
        }
    }
    TrajectorySet {
        channels: out,
        frame_rate: traj.frame_rate,
        speaker_id: traj.speaker_id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj_from(frames: usize, rate: f64, f: impl Fn(usize, usize) -> f64) -> TrajectorySet {
        TrajectorySet::new(Matrix::from_fn(frames, CHANNEL_COUNT, f), rate, "S").unwrap()
    }

    fn stats(min: f64, max: f64) -> NormStats {
        NormStats {
            speaker_id: "S".into(),
            min: [min; CHANNEL_COUNT],
            max: [max; CHANNEL_COUNT],
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let t = traj_from(37, 400.0, |r, c| (r * 7 + c) as f64 * 0.1);
        assert_eq!(downsample(&t, 1).unwrap(), t);
    }

    #[test]
    fn constant_survives() {
        let t = traj_from(103, 400.0, |_, c| c as f64 - 3.5);
        let d = downsample(&t, 4).unwrap();
        assert_eq!(d.frames(), 25);
        assert_eq!(d.frame_rate, 100.0);
        for r in 0..d.frames() {
            for c in 0..CHANNEL_COUNT {
                assert!((d.channels.get(r, c) - (c as f64 - 3.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn five_hz_sinusoid_keeps_amplitude() {
        let f = 5.0;
        let t = traj_from(1600, 400.0, |r, _| (2.0 * std::f64::consts::PI * f * r as f64 / 400.0).sin());
        let d = downsample(&t, 4).unwrap();
        for r in 0..d.frames() {
            let analytic = (2.0 * std::f64::consts::PI * f * r as f64 / 100.0).sin();
            assert!((d.channels.get(r, 0) - analytic).abs() < 0.01, "frame {r}");
        }
    }

    #[test]
    fn downsample_errors() {
        let t = traj_from(3, 400.0, |_, _| 0.0);
        assert!(downsample(&t, 0).is_err());
        assert!(downsample(&t, 4).is_err());
    }

    #[test]
    fn decimation_composes_on_ramps_and_constants() {
        for slope in [0.0, 0.37] {
            let t = traj_from(800, 400.0, |r, c| 1.5 + slope * r as f64 - 0.1 * c as f64);
            let once = downsample(&t, 4).unwrap();
            let twice = downsample(&downsample(&t, 2).unwrap(), 2).unwrap();
            assert_eq!(once.frames(), twice.frames());
            for (a, b) in once.channels.as_slice().iter().zip(twice.channels.as_slice()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn fit_single_and_union() {
        let a = traj_from(4, 100.0, |r, _| [-5.0, 12.0, 0.0, 3.0][r]);
        let s = fit_norm_stats("S", [&a]).unwrap();
        assert_eq!((s.min[0], s.max[0]), (-5.0, 12.0));
        let u1 = traj_from(2, 100.0, |r, _| r as f64);
        let u2 = traj_from(2, 100.0, |r, _| if r == 0 { -2.0 } else { 3.0 });
        let s = fit_norm_stats("S", [&u1, &u2]).unwrap();
        assert_eq!((s.min[4], s.max[4]), (-2.0, 3.0));
    }

    #[test]
    fn fit_rejects_constant_channel_and_empty() {
        let flat = traj_from(5, 100.0, |r, c| if c == 3 { 1.0 } else { r as f64 });
        let err = fit_norm_stats("S", [&flat]).unwrap_err().to_string();
        assert!(err.contains("VT4"), "{err}");
        assert!(fit_norm_stats("S", std::iter::empty()).is_err());
    }

    #[test]
    fn edges_and_midpoint() {
        let s = stats(-5.0, 12.0);
        assert_eq!(s.normalize_value(0, -5.0), -1.0);
        assert_eq!(s.normalize_value(0, 12.0), 1.0);
        assert_eq!(s.normalize_value(0, 3.5), 0.0);
        assert_eq!(s.denormalize_value(0, 0.0), 3.5);
        assert_eq!(s.denormalize_value(0, -1.0), -5.0);
    }

    #[test]
    fn out_of_range_values_are_clamped_and_counted() {
        let s = stats(0.0, 1.0);
        let t = traj_from(2, 100.0, |r, _| if r == 0 { -1.0 } else { 2.0 });
        let n = normalize(&t, &s);
        assert_eq!(n.clamped, 2 * CHANNEL_COUNT);
        assert_eq!(n.traj.channels.get(0, 0), -1.0);
        assert_eq!(n.traj.channels.get(1, 0), 1.0);
    }

    #[test]
    fn stats_text_round_trip() {
        let mut s = stats(-5.0, 12.0);
        s.min[9] = -0.123456789012345;
        let back = NormStats::from_text(&s.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn round_trips(lo in -50.0f64..50.0, span in 0.1f64..80.0, u in 0.0f64..=1.0, y in -1.0f64..=1.0) {
            let s = stats(lo, lo + span);
            let x = lo + u * span;
            prop_assert!((s.denormalize_value(0, s.normalize_value(0, x)) - x).abs() < 1e-9);
            prop_assert!((s.normalize_value(0, s.denormalize_value(0, y)) - y).abs() < 1e-9);
        }

        #[test]
        fn normalize_is_monotone(lo in -50.0f64..50.0, span in 0.1f64..80.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let s = stats(lo, lo + span);
            let (xa, xb) = (lo + a * span, lo + b * span);
            if xb - xa > 1e-9 {
                prop_assert!(s.normalize_value(0, xa) < s.normalize_value(0, xb));
            }
        }
    }
}
