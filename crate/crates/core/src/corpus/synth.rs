//! Synthetic paired corpus.
//!
//! Trajectories: each channel is a centre value plus a few sinusoids of at
//! most `max_frequency_hz`, with amplitudes summing to 45% of the channel's
//! range so values stay inside [`SYNTH_RANGES_MM`]. They are stored at the
//! sensor rate.
//!
//! Audio: a harmonic tone with a per-speaker fundamental. With `u_c` the
//! channel value rescaled to `[-1, 1]` by the fixed ranges, harmonic `k`
//! has amplitude `exp(BETA * sum_c u_c * bump_c(k * f0))`, where `bump_c` is
//! a Gaussian on the mel scale centred on the `c`-th of ten evenly spaced
//! points between 200 Hz and 6 kHz. The envelope is evaluated on the
//! analysis-frame clock: audio sample `n` uses the trajectory at model frame
//! `(n - window / 2) / hop`, so mel frame `t` sees model frame `t` exactly.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::files::{load_trajectory, save_trajectory};
use super::manifest::{split, Manifest, Split, UtteranceEntry, MANIFEST_FILE};
use crate::frontend::{hz_to_mel, AudioClip, FrontendConfig};
use crate::metrics::{Gender, LanguageGroup, SpeakerInfo};
use crate::trajectory::{downsample, fit_norm_stats, TrajectorySet, CHANNEL_COUNT, MODEL_RATE_HZ, SENSOR_RATE_HZ};
use crate::{Error, Matrix, Result};

/// Channel ranges (mm) the generator draws within, VT1..VT10.
pub const SYNTH_RANGES_MM: [(f64, f64); CHANNEL_COUNT] = [
    (-60.0, -40.0),
    (4.0, 18.0),
    (-52.0, -36.0),
    (6.0, 16.0),
    (-30.0, -12.0),
    (2.0, 14.0),
    (-4.0, 4.0),
    (0.0, 16.0),
    (22.0, 30.0),
    (-14.0, -2.0),
];

const BETA: f64 = 1.5;
const GAIN: f64 = 0.02;
const BUMP_LOW_HZ: f64 = 200.0;
const BUMP_HIGH_HZ: f64 = 6000.0;
const TOP_HARMONIC_HZ: f64 = 7600.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub duration_s: f64,
    pub train_fraction: f64,
    pub max_frequency_hz: f64,
    pub sinusoids_per_channel: usize,
    /// Supplies the sample rate, window and hop of the frame clock.
    pub frontend: FrontendConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            speakers: 2,
            utterances_per_speaker: 4,
            duration_s: 2.0,
            train_fraction: 0.75,
            max_frequency_hz: 4.0,
            sinusoids_per_channel: 3,
            frontend: FrontendConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speakers < 1 {
            return Err(Error::InvalidInput("synth.speakers must be at least 1".into()));
        }
        if self.utterances_per_speaker < 1 {
            return Err(Error::InvalidInput("synth.utterances must be at least 1".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidInput("synth.duration_s must be positive".into()));
        }
        if !(self.max_frequency_hz > 0.0 && self.max_frequency_hz <= 8.0) {
            return Err(Error::InvalidInput("synth.max_frequency_hz must lie in (0, 8]".into()));
        }
        if self.sinusoids_per_channel < 1 {
            return Err(Error::InvalidInput("synth.sinusoids_per_channel must be at least 1".into()));
        }
        if self.utterances_per_speaker >= 2 && !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidInput("synth.train_fraction must lie strictly between 0 and 1".into()));
        }
        self.frontend.validate()
    }

    /// Model-rate frames per utterance.
    pub fn frames(&self) -> usize {
        ((self.duration_s * MODEL_RATE_HZ).round() as usize).max(2)
    }
}

/// Continuous-time trajectory: per channel a list of `(amplitude, freq, phase)`.
#[derive(Debug, Clone)]
struct Motion {
    centre: [f64; CHANNEL_COUNT],
    parts: Vec<Vec<(f64, f64, f64)>>,
}

impl Motion {
    fn draw(cfg: &SynthConfig, rng: &mut impl Rng) -> Self {
        let mut centre = [0.0; CHANNEL_COUNT];
        let mut parts = Vec::with_capacity(CHANNEL_COUNT);
        for (c, &(lo, hi)) in SYNTH_RANGES_MM.iter().enumerate() {
            centre[c] = 0.5 * (lo + hi);
            let weights: Vec<f64> = (0..cfg.sinusoids_per_channel).map(|_| rng.gen_range(0.5..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let budget = 0.45 * (hi - lo);
            parts.push(
                weights
                    .iter()
                    .map(|w| {
                        let f = rng.gen_range(0.3..=cfg.max_frequency_hz.max(0.3));
                        (budget * w / total, f, rng.gen_range(0.0..2.0 * PI))
                    })
                    .collect(),
            );
        }
        Self { centre, parts }
    }

    fn value(&self, c: usize, t: f64) -> f64 {
        self.centre[c] + self.parts[c].iter().map(|(a, f, p)| a * (2.0 * PI * f * t + p).sin()).sum::<f64>()
    }
}

/// Per-harmonic mel bump weights: `[harmonic][channel]`.
fn bump_table(f0: f64, sample_rate: u32) -> Vec<[f64; CHANNEL_COUNT]> {
    let top = TOP_HARMONIC_HZ.min(0.5 * sample_rate as f64 * 0.95);
    let (m_lo, m_hi) = (hz_to_mel(BUMP_LOW_HZ), hz_to_mel(BUMP_HIGH_HZ));
    let spacing = (m_hi - m_lo) / (CHANNEL_COUNT - 1) as f64;
    let sigma = 0.6 * spacing;
    let mut out = Vec::new();
    let mut k = 1;
    while k as f64 * f0 <= top {
        let m = hz_to_mel(k as f64 * f0);
        let mut row = [0.0; CHANNEL_COUNT];
        for (c, w) in row.iter_mut().enumerate() {
            let d = m - (m_lo + c as f64 * spacing);
            *w = (-d * d / (2.0 * sigma * sigma)).exp();
        }
        out.push(row);
        k += 1;
    }
    out
}

/// Renders the audio of one utterance from its motion.
fn render_audio(motion: &Motion, frames: usize, f0: f64, phases: &[f64], fe: &FrontendConfig) -> Result<AudioClip> {
    let sr = fe.sample_rate as f64;
    let n_samples = (frames - 1) * fe.hop + fe.window;
    let bumps = bump_table(f0, fe.sample_rate);
    // Rescaled channel values per model frame, linearly interpolated below.
    let u: Vec<[f64; CHANNEL_COUNT]> = (0..frames)
        .map(|t| {
            let mut row = [0.0; CHANNEL_COUNT];
            for (c, v) in row.iter_mut().enumerate() {
                let (lo, hi) = SYNTH_RANGES_MM[c];
                *v = 2.0 * (motion.value(c, t as f64 / MODEL_RATE_HZ) - lo) / (hi - lo) - 1.0;
            }
            row
        })
        .collect();
    let mut samples = vec![0.0; n_samples];
    for (n, s) in samples.iter_mut().enumerate() {
        let tau = ((n as f64 - fe.window as f64 / 2.0) / fe.hop as f64).clamp(0.0, (frames - 1) as f64);
        let i = (tau.floor() as usize).min(frames - 1);
        let frac = tau - i as f64;
        let next = (i + 1).min(frames - 1);
        let mut uc = [0.0; CHANNEL_COUNT];
        for c in 0..CHANNEL_COUNT {
            uc[c] = u[i][c] + frac * (u[next][c] - u[i][c]);
        }
        let time = n as f64 / sr;
        let mut acc = 0.0;
        for (k, row) in bumps.iter().enumerate() {
            let e: f64 = row.iter().zip(&uc).map(|(b, v)| b * v).sum();
            acc += (BETA * e).exp() * (2.0 * PI * (k + 1) as f64 * f0 * time + phases[k]).sin();
        }
        *s = GAIN * acc;
    }
    AudioClip::new(samples, fe.sample_rate)
}

fn speaker_labels(index: usize) -> (LanguageGroup, Gender) {
    let group = if index % 2 == 0 { LanguageGroup::L1 } else { LanguageGroup::L2 };
    let gender = if (index / 2) % 2 == 0 { Gender::Female } else { Gender::Male };
    (group, gender)
}

/// Writes a corpus under `dir` and returns its manifest. Per-speaker
/// normalization statistics are fitted on the training split at the model
/// rate and written next to each speaker's files.
pub fn make_synthetic_corpus(dir: &Path, cfg: &SynthConfig) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let frames = cfg.frames();
    let sensor_frames = frames * (SENSOR_RATE_HZ / MODEL_RATE_HZ) as usize;

    let mut speakers = Vec::new();
    let mut f0s = Vec::new();
    let mut speaker_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for s in 0..cfg.speakers {
        let (group, gender) = speaker_labels(s);
        let base = if gender == Gender::Female { 180.0 } else { 100.0 };
        f0s.push(base + speaker_rng.gen_range(0.0..20.0));
        let id = format!("S{:02}", s + 1);
        fs::create_dir_all(dir.join(&id))?;
        speakers.push(SpeakerInfo {
            id,
            group: Some(group),
            gender: Some(gender),
        });
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.speakers)
        .flat_map(|s| (0..cfg.utterances_per_speaker).map(move |u| (s, u)))
        .collect();
    let utterances: Vec<UtteranceEntry> = jobs
        .par_iter()
        .map(|&(s, u)| -> Result<UtteranceEntry> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1 + (s * cfg.utterances_per_speaker + u) as u64);
            let motion = Motion::draw(cfg, &mut rng);
            let harmonics = bump_table(f0s[s], cfg.frontend.sample_rate).len();
            let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let speaker = &speakers[s].id;
            let id = format!("{speaker}_U{:03}", u + 1);
            let audio_rel = PathBuf::from(speaker).join(format!("{id}.wav"));
            let traj_rel = PathBuf::from(speaker).join(format!("{id}.traj"));

            let channels = Matrix::from_fn(sensor_frames, CHANNEL_COUNT, |i, c| motion.value(c, i as f64 / SENSOR_RATE_HZ));
            let traj = TrajectorySet::new(channels, SENSOR_RATE_HZ, speaker.clone())?;
            save_trajectory(&dir.join(&traj_rel), &traj)?;
            render_audio(&motion, frames, f0s[s], &phases, &cfg.frontend)?.write_wav(dir.join(&audio_rel))?;
            Ok(UtteranceEntry {
                id,
                speaker_id: speaker.clone(),
                audio: audio_rel,
                trajectory: traj_rel,
                split: Split::Train,
            })
        })
        .collect::<Result<_>>()?;

    let mut manifest = Manifest {
        root: dir.to_path_buf(),
        speakers,
        utterances,
    };
    if cfg.utterances_per_speaker >= 2 {
        manifest = split(&manifest, cfg.seed, cfg.train_fraction)?;
    }
    manifest.save(&dir.join(MANIFEST_FILE))?;

    let factor = (SENSOR_RATE_HZ / MODEL_RATE_HZ) as usize;
    for s in &manifest.speakers {
        let train: Vec<TrajectorySet> = manifest
            .of_speaker(&s.id)
            .filter(|u| u.split == Split::Train)
            .map(|u| downsample(&load_trajectory(&manifest.trajectory_path(u))?, factor))
            .collect::<Result<_>>()?;
        fit_norm_stats(&s.id, train.iter())?.save(manifest.stats_path(&s.id))?;
    }
    Ok(manifest)
}
