//! Trajectory and feature files built on [`TensorFile`].
//!
//! A trajectory `name.traj` is a `frames x 10` f64 tensor with a sidecar
//! `name.traj.meta` holding `speaker_id`, `frame_rate` and `channels`.

use std::fs;
use std::path::{Path, PathBuf};

use super::tensor_file::{DType, TensorFile};
use crate::frontend::MelSpectrogram;
use crate::trajectory::{TrajectorySet, CHANNEL_NAMES};
use crate::{Error, Result};

pub fn meta_path(traj_path: &Path) -> PathBuf {
    let mut s = traj_path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn save_trajectory(path: &Path, traj: &TrajectorySet) -> Result<()> {
    TensorFile::from_matrix(&traj.channels, DType::F64).write(path)?;
    let meta = format!(
        "speaker_id = {}\nframe_rate = {}\nchannels = {}\n",
        traj.speaker_id,
        traj.frame_rate,
        CHANNEL_NAMES.join(",")
    );
    fs::write(meta_path(path), meta)?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<TrajectorySet> {
    let channels = TensorFile::read(path)?.to_matrix().map_err(|e| Error::format(path, e.to_string()))?;
    let meta_file = meta_path(path);
    let text = fs::read_to_string(&meta_file).map_err(|e| Error::format(&meta_file, e.to_string()))?;
    let (mut speaker, mut rate, mut names) = (None, None, None);
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(&meta_file, format!("malformed line {line:?}")))?;
        match k.trim() {
            "speaker_id" => speaker = Some(v.trim().to_string()),
            "frame_rate" => {
                rate = Some(
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::format(&meta_file, format!("bad frame_rate {v:?}")))?,
                )
            }
            "channels" => names = Some(v.trim().to_string()),
            other => return Err(Error::format(&meta_file, format!("unknown key {other:?}"))),
        }
    }
    let speaker = speaker.ok_or_else(|| Error::format(&meta_file, "missing speaker_id"))?;
    let rate = rate.ok_or_else(|| Error::format(&meta_file, "missing frame_rate"))?;
    if let Some(names) = names {
        if names != CHANNEL_NAMES.join(",") {
            return Err(Error::format(&meta_file, format!("unexpected channel list {names:?}")));
        }
    }
    TrajectorySet::new(channels, rate, speaker).map_err(|e| Error::format(path, e.to_string()))
}

/// Log-mel frames as an f32 `frames x bands` tensor.
pub fn save_mel(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    TensorFile::from_matrix(&mel.frames, DType::F32).write(path)
}

pub fn load_mel_frames(path: &Path) -> Result<crate::Matrix> {
    TensorFile::read(path)?.to_matrix().map_err(|e| Error::format(path, e.to_string()))
}
