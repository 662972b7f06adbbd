//! Log-mel-spectrogram conditioning features.
//!
//! Frames are taken without center padding: frame `t` covers samples
//! `[t * hop, t * hop + window)` and a trailing partial frame is dropped. Each
//! frame is multiplied by a symmetric Hann window, zero-padded to `fft_size`
//! and transformed. Power spectra are pooled through triangular filters spaced
//! on the mel scale `2595 * log10(1 + f / 700)` and compressed with
//! `log(max(power, floor))`.

use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::{Error, Matrix, Result};

/// Mono audio with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("audio sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Reads a single-channel RIFF/WAVE file (integer PCM or 32-bit float).
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::format(
                path,
                format!("expected mono audio, found {} channels", spec.channels),
            ));
        }
        let samples: Vec<f64> = match spec.sample_format {
            hound::SampleFormat::Float => {
                if spec.bits_per_sample != 32 {
                    return Err(Error::format(
                        path,
                        format!("unsupported float width {}", spec.bits_per_sample),
                    ));
                }
                reader
                    .samples::<f32>()
                    .map(|s| s.map(f64::from))
                    .collect::<std::result::Result<_, _>>()?
            }
            hound::SampleFormat::Int => {
                let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f64 / scale))
                    .collect::<std::result::Result<_, _>>()?
            }
        };
        Self::new(samples, spec.sample_rate)
    }

    /// Writes the clip as 32-bit float mono WAVE.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            writer.write_sample(s as f32)?;
        }
        writer.finalize()?;
        Ok(())
    }

    /// Writes the clip as 16-bit integer PCM, clipping to `[-1, 1]`.
    pub fn write_wav_pcm16(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v)?;
        }
        writer.finalize()?;
        Ok(())
    }
}

/// Analysis parameters. Window and hop are in samples; the defaults are
/// 38.7 ms and 9.7 ms at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub bands: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window: 620,
            hop: 155,
            fft_size: 1024,
            bands: 80,
            f_min: 125.0,
            f_max: 7600.0,
            log_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidInput("frontend.sample_rate must be positive".into()));
        }
        if self.window == 0 || self.hop == 0 {
            return Err(Error::InvalidInput(
                "frontend.window and frontend.hop must be positive".into(),
            ));
        }
        if self.window > self.fft_size {
            return Err(Error::InvalidInput(format!(
                "frontend.window ({}) exceeds frontend.fft_size ({})",
                self.window, self.fft_size
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidInput("frontend.log_floor must be positive".into()));
        }
        check_band_edges(self.sample_rate, self.bands, self.f_min, self.f_max)
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }
}

/// Number of whole frames in a clip of `len` samples.
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window || hop == 0 {
        0
    } else {
        (len - window) / hop + 1
    }
}

/// Symmetric Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

/// Short-time spectrum: `frames x bins` complex values, `bins = fft_size / 2 + 1`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

pub fn stft(clip: &AudioClip, window: usize, hop: usize, fft_size: usize) -> Result<Spectrum> {
    if clip.is_empty() {
        return Err(Error::InvalidInput("cannot analyse an empty clip".into()));
    }
    if window == 0 || hop == 0 {
        return Err(Error::InvalidInput("window and hop must be positive".into()));
    }
    if window > fft_size {
        return Err(Error::InvalidInput(format!(
            "window of {window} samples is longer than the {fft_size}-point FFT"
        )));
    }
    let frames = frame_count(clip.len(), window, hop);
    let bins = fft_size / 2 + 1;
    let taper = hann_window(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let start = t * hop;
        let chunk = &clip.samples()[start..start + window];
        for (slot, (&s, &w)) in buf.iter_mut().zip(chunk.iter().zip(&taper)) {
            *slot = Complex64::new(s * w, 0.0);
        }
        for slot in &mut buf[window..] {
            *slot = Complex64::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrum { frames, bins, data })
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn check_band_edges(sample_rate: u32, bands: usize, f_min: f64, f_max: f64) -> Result<()> {
    let nyquist = sample_rate as f64 / 2.0;
    if bands < 1 {
        return Err(Error::InvalidInput("mel filterbank needs at least one band".into()));
    }
    if !(f_min >= 0.0 && f_min < f_max) {
        return Err(Error::InvalidInput(format!(
            "mel band edges must satisfy 0 <= f_min < f_max, got [{f_min}, {f_max}]"
        )));
    }
    if f_max > nyquist {
        return Err(Error::InvalidInput(format!(
            "f_max {f_max} Hz is above the Nyquist frequency {nyquist} Hz"
        )));
    }
    Ok(())
}

/// Triangular mel filters, `bands x (fft_size / 2 + 1)`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Matrix,
    pub f_min: f64,
    pub f_max: f64,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn bands(&self) -> usize {
        self.weights.rows()
    }

    /// Peak frequency of each triangle.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Applies the filterbank to one power spectrum frame.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (b, o) in out.iter_mut().enumerate() {
            *o = self
                .weights
                .row(b)
                .iter()
                .zip(power)
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

pub fn build_mel_filterbank(
    sample_rate: u32,
    fft_size: usize,
    bands: usize,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    check_band_edges(sample_rate, bands, f_min, f_max)?;
    if fft_size == 0 {
        return Err(Error::InvalidInput("fft_size must be positive".into()));
    }
    let bins = fft_size / 2 + 1;
    let (mel_lo, mel_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (bands + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut weights = Matrix::zeros(bands, bins);
    for b in 0..bands {
        let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        let row = weights.row_mut(b);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rise = (f - lo) / (mid - lo);
            let fall = (hi - f) / (hi - mid);
            *w = rise.min(fall).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidInput(format!(
                "mel band {b} ({lo:.1}-{hi:.1} Hz) contains no FFT bin; increase fft_size"
            )));
        }
    }
    Ok(MelFilterbank {
        weights,
        f_min,
        f_max,
        centers_hz: edges[1..=bands].to_vec(),
    })
}

/// Log-mel energies, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Matrix,
    pub frame_hop_s: f64,
}

impl MelSpectrogram {
    pub fn frame_count(&self) -> usize {
        self.frames.rows()
    }

    pub fn band_count(&self) -> usize {
        self.frames.cols()
    }
}

/// Computes log-mel features; the filterbank is rebuilt per call.
pub fn log_mel(clip: &AudioClip, config: &FrontendConfig) -> Result<MelSpectrogram> {
    config.validate()?;
    let bank = build_mel_filterbank(
        config.sample_rate,
        config.fft_size,
        config.bands,
        config.f_min,
        config.f_max,
    )?;
    log_mel_with(clip, config, &bank)
}

pub fn log_mel_with(
    clip: &AudioClip,
    config: &FrontendConfig,
    bank: &MelFilterbank,
) -> Result<MelSpectrogram> {
    if clip.sample_rate() != config.sample_rate {
        return Err(Error::InvalidInput(format!(
            "clip is sampled at {} Hz but the frontend expects {} Hz",
            clip.sample_rate(),
            config.sample_rate
        )));
    }
    let spec = stft(clip, config.window, config.hop, config.fft_size)?;
    let mut frames = Matrix::zeros(spec.frames, bank.bands());
    let mut power = vec![0.0; spec.bins];
    for t in 0..spec.frames {
        for (p, c) in power.iter_mut().zip(spec.frame(t)) {
            *p = c.norm_sqr();
        }
        let row = frames.row_mut(t);
        bank.apply(&power, row);
        for v in row.iter_mut() {
            *v = v.max(config.log_floor).ln();
        }
    }
    Ok(MelSpectrogram {
        frames,
        frame_hop_s: config.hop_seconds(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(N^2) DFT of a windowed, zero-padded frame.
    fn dft_oracle(frame: &[f64], n: usize) -> Vec<Complex64> {
        (0..n / 2 + 1)
            .map(|k| {
                frame
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                        Complex64::new(x * ang.cos(), x * ang.sin())
                    })
                    .sum()
            })
            .collect()
    }

    fn max_oracle_error(samples: &[f64], window: usize, hop: usize, fft_size: usize) -> f64 {
        let clip = AudioClip::new(samples.to_vec(), 16_000).unwrap();
        let spec = stft(&clip, window, hop, fft_size).unwrap();
        let taper = hann_window(window);
        let mut worst = 0.0f64;
        for t in 0..spec.frames {
            let frame: Vec<f64> = samples[t * hop..t * hop + window]
                .iter()
                .zip(&taper)
                .map(|(s, w)| s * w)
                .collect();
            for (a, b) in spec.frame(t).iter().zip(dft_oracle(&frame, fft_size)) {
                worst = worst.max((a - b).norm());
            }
        }
        worst
    }

    #[test]
    fn dc_concentrates_in_bin_zero() {
        let clip = AudioClip::new(vec![1.0; 256], 16_000).unwrap();
        let spec = stft(&clip, 200, 50, 256).unwrap();
        let sum: f64 = hann_window(200).iter().sum();
        let frame = spec.frame(0);
        assert!((frame[0].norm() - sum).abs() < 1e-9);
        // Window as long as the FFT: little energy outside the main lobe.
        let clip = AudioClip::new(vec![1.0; 64], 16_000).unwrap();
        let spec = stft(&clip, 64, 64, 64).unwrap();
        let sum: f64 = hann_window(64).iter().sum();
        assert!((spec.frame(0)[0].norm() - sum).abs() < 1e-9);
        for c in &spec.frame(0)[3..] {
            assert!(c.norm() < 0.05 * sum);
        }
    }

    #[test]
    fn sinusoid_peaks_at_its_bin_and_matches_dft() {
        let n = 64;
        let k = 5;
        let samples: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64).sin())
            .collect();
        assert!(max_oracle_error(&samples, n, n, n) < 1e-9);
        let clip = AudioClip::new(samples, 16_000).unwrap();
        let spec = stft(&clip, n, n, n).unwrap();
        let argmax = spec
            .frame(0)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap()
            .0;
        assert_eq!(argmax, k);
    }

    #[test]
    fn one_window_gives_one_frame() {
        let clip = AudioClip::new(vec![0.1; 620], 16_000).unwrap();
        for hop in [1, 155, 1000] {
            assert_eq!(stft(&clip, 620, hop, 1024).unwrap().frames, 1);
        }
    }

    #[test]
    fn stft_errors() {
        let empty = AudioClip::new(vec![], 16_000).unwrap();
        assert!(stft(&empty, 4, 2, 8).is_err());
        let clip = AudioClip::new(vec![0.0; 100], 16_000).unwrap();
        assert!(stft(&clip, 16, 4, 8).is_err());
        assert!(AudioClip::new(vec![f64::NAN], 16_000).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
    }

    proptest! {
        #[test]
        fn stft_matches_direct_dft(seed in any::<u64>(), len in 16usize..=256, window in 4usize..=32, hop in 1usize..=16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fft_size = window.next_power_of_two().max(8);
            prop_assert!(max_oracle_error(&samples, window, hop, fft_size) < 1e-9);
        }

        #[test]
        fn trailing_partial_hop_does_not_change_features(seed in any::<u64>(), frames in 1usize..6, extra_frac in 0.0f64..1.0) {
            let cfg = FrontendConfig { window: 400, hop: 160, fft_size: 512, bands: 20, ..Default::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let len = cfg.window + (frames - 1) * cfg.hop;
            let samples: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let extra = ((cfg.hop - 1) as f64 * extra_frac) as usize;
            let mut longer = samples.clone();
            longer.extend((0..extra).map(|_| rng.gen_range(-0.5..0.5)));
            let a = log_mel(&AudioClip::new(samples, 16_000).unwrap(), &cfg).unwrap();
            let b = log_mel(&AudioClip::new(longer, 16_000).unwrap(), &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn single_band_peaks_at_mel_midpoint() {
        let bank = build_mel_filterbank(16_000, 1024, 1, 125.0, 7600.0).unwrap();
        let mid = mel_to_hz((hz_to_mel(125.0) + hz_to_mel(7600.0)) / 2.0);
        assert!((bank.centers_hz()[0] - mid).abs() < 1e-9);
        let row = bank.weights.row(0);
        let peak = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let bin_hz = 16_000.0 / 1024.0;
        assert!((peak as f64 * bin_hz - mid).abs() <= bin_hz);
    }

    #[test]
    fn default_filterbank_structure() {
        let bank = build_mel_filterbank(16_000, 1024, 80, 125.0, 7600.0).unwrap();
        assert_eq!((bank.weights.rows(), bank.weights.cols()), (80, 513));
        let bin_hz = 16_000.0 / 1024.0;
        for b in 0..80 {
            let row = bank.weights.row(b);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().sum::<f64>() > 0.0);
            for (k, &w) in row.iter().enumerate() {
                if w > 0.0 {
                    let f = k as f64 * bin_hz;
                    assert!(f > 125.0 && f < 7600.0, "band {b} leaks to {f} Hz");
                }
            }
        }
        assert!(bank.centers_hz().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn filterbank_rejects_bad_edges() {
        assert!(build_mel_filterbank(16_000, 1024, 80, 125.0, 8001.0).is_err());
        assert!(build_mel_filterbank(16_000, 1024, 0, 125.0, 7600.0).is_err());
        assert!(build_mel_filterbank(16_000, 1024, 4, 500.0, 400.0).is_err());
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = FrontendConfig::default();
        let mel = log_mel(&AudioClip::new(vec![0.0; 4000], 16_000).unwrap(), &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(mel.frames.as_slice().iter().all(|&v| v == floor));
    }

    #[test]
    fn doubling_amplitude_adds_log_four() {
        let cfg = FrontendConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..3000).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let doubled: Vec<f64> = samples.iter().map(|s| 2.0 * s).collect();
        let a = log_mel(&AudioClip::new(samples, 16_000).unwrap(), &cfg).unwrap();
        let b = log_mel(&AudioClip::new(doubled, 16_000).unwrap(), &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        for (x, y) in a.frames.as_slice().iter().zip(b.frames.as_slice()) {
            assert!(*x > floor);
            assert!((y - x - 4f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn one_second_noise_frame_count() {
        let cfg = FrontendConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..16_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mel = log_mel(&AudioClip::new(samples, 16_000).unwrap(), &cfg).unwrap();
        // Count window placements directly.
        let mut expected = 0;
        let mut start = 0;
        while start + 620 <= 16_000 {
            expected += 1;
            start += 155;
        }
        assert_eq!(expected, (16_000 - 620) / 155 + 1);
        assert_eq!(mel.frame_count(), expected);
        assert_eq!(mel.band_count(), 80);
        assert!(mel.frames.is_finite());
    }

    #[test]
    fn wav_round_trip_float_and_pcm16() {
        let dir = tempfile::tempdir().unwrap();
        let clip = AudioClip::new(vec![0.0, 0.25, -0.5, 0.999], 16_000).unwrap();
        let f32_path = dir.path().join("a.wav");
        clip.write_wav(&f32_path).unwrap();
        let back = AudioClip::read_wav(&f32_path).unwrap();
        for (a, b) in back.samples().iter().zip(clip.samples()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let i16_path = dir.path().join("b.wav");
        clip.write_wav_pcm16(&i16_path).unwrap();
        let back = AudioClip::read_wav(&i16_path).unwrap();
        for (a, b) in back.samples().iter().zip(clip.samples()) {
            assert!((a - b).abs() < 1.0 / 16384.0);
        }
    }
}
