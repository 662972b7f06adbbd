//! Corpus to model-ready sequences, and features back to millimetres.

use std::collections::BTreeMap;
use std::fmt::Write;

use rayon::prelude::*;

use crate::corpus::{load_trajectory, Manifest, Split, UtteranceEntry};
use crate::frontend::{build_mel_filterbank, log_mel_with, AudioClip, FrontendConfig, MelFilterbank};
use crate::generate::{generate_cached, DecodeRule};
use crate::train::Sequence;
use crate::trajectory::{
    denormalize, downsample, fit_norm_stats, normalize, NormStats, TrajectorySet, CHANNEL_COUNT, CHANNEL_NAMES,
    MODEL_RATE_HZ,
};
use crate::wavenet::{quantize_matrix, Grid, NetworkParams};
use crate::{Error, Matrix, Result};

/// Brings a trajectory to the model frame rate.
pub fn to_model_rate(traj: &TrajectorySet) -> Result<TrajectorySet> {
    let ratio = traj.frame_rate / MODEL_RATE_HZ;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "frame rate {} Hz is not an integer multiple of {MODEL_RATE_HZ} Hz",
            traj.frame_rate
        )));
    }
    downsample(traj, factor as usize)
}

pub fn filterbank(cfg: &FrontendConfig) -> Result<MelFilterbank> {
    build_mel_filterbank(cfg.sample_rate, cfg.fft_size, cfg.bands, cfg.f_min, cfg.f_max)
}

/// Statistics for `speaker` fitted on its training utterances at the model
/// rate.
pub fn fit_speaker_stats(manifest: &Manifest, speaker: &str) -> Result<NormStats> {
    let train: Vec<TrajectorySet> = manifest
        .of_speaker(speaker)
        .filter(|u| u.split == Split::Train)
        .map(|u| to_model_rate(&load_trajectory(&manifest.trajectory_path(u))?))
        .collect::<Result<_>>()?;
    if train.is_empty() {
        return Err(Error::Corpus(format!("speaker {speaker} has no training utterances")));
    }
    fit_norm_stats(speaker, train.iter())
}

/// One utterance with features and targets on a common frame clock.
#[derive(Debug, Clone)]
pub struct PreparedUtterance {
    pub id: String,
    pub speaker: String,
    /// `frames x bands` log-mel.
    pub mel: Matrix,
    /// Measured trajectories at the model rate, in mm.
    pub reference: TrajectorySet,
    /// Normalized and quantized targets.
    pub normalized: Matrix,
    /// Values clamped to `[-1, 1]` during normalization.
    pub clamped: usize,
}

impl PreparedUtterance {
    pub fn to_sequence(&self) -> Sequence {
        Sequence::new(self.id.clone(), self.normalized.clone(), self.mel.clone())
    }
}

pub fn prepare_utterance(
    manifest: &Manifest,
    entry: &UtteranceEntry,
    frontend: &FrontendConfig,
    bank: &MelFilterbank,
    stats: &NormStats,
    grid: Grid,
) -> Result<PreparedUtterance> {
    let clip = AudioClip::read_wav(manifest.audio_path(entry))?;
    let mel = log_mel_with(&clip, frontend, bank)?;
    let mut reference = to_model_rate(&load_trajectory(&manifest.trajectory_path(entry))?)?;
    let frames = mel.frame_count().min(reference.frames());
    reference.truncate(frames);
    let norm = normalize(&reference, stats);
    Ok(PreparedUtterance {
        id: entry.id.clone(),
        speaker: entry.speaker_id.clone(),
        mel: mel.frames.slice_rows(0, frames),
        reference,
        normalized: quantize_matrix(&norm.traj.channels, grid),
        clamped: norm.clamped,
    })
}

#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub utterances: Vec<PreparedUtterance>,
    pub stats: BTreeMap<String, NormStats>,
}

impl PreparedCorpus {
    pub fn sequences(&self) -> Vec<Sequence> {
        self.utterances.iter().map(PreparedUtterance::to_sequence).collect()
    }
}

/// Which utterances [`prepare_corpus`] loads.
#[derive(Debug, Clone, Default)]
pub struct Selection {
    pub split: Option<Split>,
    /// Restrict to these speakers; all when empty.
    pub speakers: Vec<String>,
    /// Restrict to these utterance ids; all when empty.
    pub utterances: Vec<String>,
}

impl Selection {
    fn admits(&self, u: &UtteranceEntry) -> bool {
        self.split.map_or(true, |s| u.split == s)
            && (self.speakers.is_empty() || self.speakers.contains(&u.speaker_id))
            && (self.utterances.is_empty() || self.utterances.contains(&u.id))
    }
}

/// Loads the selected utterances. Statistics always come from each
/// speaker's training split.
pub fn prepare_corpus(
    manifest: &Manifest,
    frontend: &FrontendConfig,
    grid: Grid,
    selection: &Selection,
) -> Result<PreparedCorpus> {
    frontend.validate()?;
    let bank = filterbank(frontend)?;
    let chosen: Vec<&UtteranceEntry> = manifest.utterances.iter().filter(|u| selection.admits(u)).collect();
    let mut stats = BTreeMap::new();
    for u in &chosen {
        if !stats.contains_key(&u.speaker_id) {
            stats.insert(u.speaker_id.clone(), fit_speaker_stats(manifest, &u.speaker_id)?);
        }
    }
    let utterances = chosen
        .par_iter()
        .map(|u| prepare_utterance(manifest, u, frontend, &bank, &stats[&u.speaker_id], grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedCorpus { utterances, stats })
}

/// Features to trajectories in mm at the model rate.
pub fn invert_features(params: &NetworkParams, mel: &Matrix, stats: &NormStats, rule: DecodeRule) -> Result<TrajectorySet> {
    let cfg = &params.config;
    if mel.cols() != cfg.cond_channels {
        return Err(Error::Shape(format!(
            "features are {}x{} (frames x bands) but the checkpoint expects {} bands",
            mel.rows(),
            mel.cols(),
            cfg.cond_channels
        )));
    }
    if cfg.input_channels != CHANNEL_COUNT {
        return Err(Error::Shape(format!(
            "checkpoint predicts {} channels, trajectories have {CHANNEL_COUNT}",
            cfg.input_channels
        )));
    }
    let generated = generate_cached(params, mel, rule)?;
    let norm = TrajectorySet::new(generated.x, MODEL_RATE_HZ, stats.speaker_id.clone())?;
    Ok(denormalize(&norm, stats))
}

/// `time_s,channel,predicted_mm,reference_mm`; the reference column is empty
/// when no reference is given. Rows cover the common length.
pub fn overlay_csv(pred: &TrajectorySet, reference: Option<&TrajectorySet>) -> String {
    let frames = reference.map_or(pred.frames(), |r| r.frames().min(pred.frames()));
    let mut out = String::from("time_s,channel,predicted_mm,reference_mm\n");
    for t in 0..frames {
        let time = t as f64 / pred.frame_rate;
        for (c, name) in CHANNEL_NAMES.iter().enumerate() {
            let r = reference.map_or(String::new(), |r| r.channels.get(t, c).to_string());
            let _ = writeln!(out, "{time:.4},{name},{},{r}", pred.channels.get(t, c));
        }
    }
    out
}

/// Checkpoint metadata keys for the frontend.
pub fn frontend_metadata(cfg: &FrontendConfig) -> BTreeMap<String, String> {
    [
        ("frontend.sample_rate", cfg.sample_rate.to_string()),
        ("frontend.window", cfg.window.to_string()),
        ("frontend.hop", cfg.hop.to_string()),
        ("frontend.fft_size", cfg.fft_size.to_string()),
        ("frontend.bands", cfg.bands.to_string()),
        ("frontend.f_min", cfg.f_min.to_string()),
        ("frontend.f_max", cfg.f_max.to_string()),
        ("frontend.log_floor", cfg.log_floor.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn parse_key<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = meta
        .get(key)
        .ok_or_else(|| Error::InvalidInput(format!("checkpoint metadata lacks {key}")))?;
    raw.parse()
        .map_err(|_| Error::InvalidInput(format!("checkpoint metadata {key}: bad value {raw:?}")))
}

/// Frontend settings stored by [`frontend_metadata`], if present.
pub fn frontend_from_metadata(meta: &BTreeMap<String, String>) -> Result<Option<FrontendConfig>> {
    if !meta.contains_key("frontend.sample_rate") {
        return Ok(None);
    }
    let cfg = FrontendConfig {
        sample_rate: parse_key(meta, "frontend.sample_rate")?,
        window: parse_key(meta, "frontend.window")?,
        hop: parse_key(meta, "frontend.hop")?,
        fft_size: parse_key(meta, "frontend.fft_size")?,
        bands: parse_key(meta, "frontend.bands")?,
        f_min: parse_key(meta, "frontend.f_min")?,
        f_max: parse_key(meta, "frontend.f_max")?,
        log_floor: parse_key(meta, "frontend.log_floor")?,
    };
    cfg.validate()?;
    Ok(Some(cfg))
}

/// Checkpoint metadata keys `norm.<speaker>.<channel>.{min,max}`.
pub fn stats_metadata<'a>(stats: impl IntoIterator<Item = &'a NormStats>) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for s in stats {
        for (c, name) in CHANNEL_NAMES.iter().enumerate() {
            out.insert(format!("norm.{}.{name}.min", s.speaker_id), s.min[c].to_string());
            out.insert(format!("norm.{}.{name}.max", s.speaker_id), s.max[c].to_string());
        }
    }
    out
}

pub fn stats_from_metadata(meta: &BTreeMap<String, String>) -> Result<Vec<NormStats>> {
    let speakers: Vec<String> = meta
        .keys()
        .filter_map(|k| k.strip_prefix("norm."))
        .filter_map(|rest| rest.strip_suffix(".VT1.min"))
        .map(str::to_string)
        .collect();
    speakers
        .into_iter()
        .map(|spk| {
            let mut s = NormStats {
                speaker_id: spk.clone(),
                min: [0.0; CHANNEL_COUNT],
                max: [0.0; CHANNEL_COUNT],
            };
            for (c, name) in CHANNEL_NAMES.iter().enumerate() {
                s.min[c] = parse_key(meta, &format!("norm.{spk}.{name}.min"))?;
                s.max[c] = parse_key(meta, &format!("norm.{spk}.{name}.max"))?;
            }
            s.validate()?;
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavenet::NetworkConfig;

    fn stats() -> NormStats {
        NormStats {
            speaker_id: "S01".into(),
            min: [-1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            max: [1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.25],
        }
    }

    #[test]
    fn metadata_round_trips() {
        let fe = FrontendConfig::default();
        assert_eq!(frontend_from_metadata(&frontend_metadata(&fe)).unwrap(), Some(fe));
        assert_eq!(frontend_from_metadata(&BTreeMap::new()).unwrap(), None);
        let back = stats_from_metadata(&stats_metadata([&stats()])).unwrap();
        assert_eq!(back, vec![stats()]);
    }

    #[test]
    fn model_rate_conversion() {
        let traj = TrajectorySet::new(Matrix::zeros(40, CHANNEL_COUNT), 400.0, "S").unwrap();
        assert_eq!(to_model_rate(&traj).unwrap().frames(), 10);
        let odd = TrajectorySet::new(Matrix::zeros(40, CHANNEL_COUNT), 250.0, "S").unwrap();
        assert!(to_model_rate(&odd).is_err());
    }

    fn small_net() -> NetworkParams {
        NetworkParams::zeros(&NetworkConfig {
            layers_per_stack: 2,
            stacks: 1,
            residual_channels: 4,
            gate_channels: 4,
            skip_channels: 4,
            mixture_components: 2,
            ..NetworkConfig::default()
        })
    }

    #[test]
    fn inversion_shapes() {
        let params = small_net();
        let out = invert_features(&params, &Matrix::zeros(0, 80), &stats(), DecodeRule::MixtureMean).unwrap();
        assert_eq!(out.frames(), 0);
        let out = invert_features(&params, &Matrix::zeros(25, 80), &stats(), DecodeRule::MixtureMean).unwrap();
        assert_eq!((out.frames(), out.channels.cols(), out.frame_rate), (25, 10, 100.0));
        let err = invert_features(&params, &Matrix::zeros(25, 40), &stats(), DecodeRule::MixtureMean).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("25x40") && msg.contains("80"));
    }

    #[test]
    fn overlay_layout() {
        let pred = TrajectorySet::new(Matrix::from_fn(3, 10, |t, c| (t * 10 + c) as f64), 100.0, "S").unwrap();
        let csv = overlay_csv(&pred, Some(&pred));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 30);
        assert_eq!(lines[1], "0.0000,VT1,0,0");
        assert_eq!(lines[12], "0.0100,VT2,11,11");
        assert!(overlay_csv(&pred, None).lines().nth(1).unwrap().ends_with(','));
    }
}
