//! Corpus manifest: one tagged record per line.
//!
//! ```text
//! # comment
//! speaker id=S01 group=L1 gender=F
//! utterance id=S01_001 speaker=S01 audio=S01/S01_001.wav trajectory=S01/S01_001.traj split=train
//! ```
//!
//! Paths are relative to the directory holding the manifest. `group` and
//! `gender` are optional.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::metrics::SpeakerInfo;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Corpus(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceEntry {
    pub id: String,
    pub speaker_id: String,
    pub audio: PathBuf,
    pub trajectory: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory the relative paths resolve against.
    pub root: PathBuf,
    pub speakers: Vec<SpeakerInfo>,
    pub utterances: Vec<UtteranceEntry>,
}

fn fields<'a>(line: &'a str, lineno: usize) -> Result<BTreeMap<&'a str, &'a str>> {
    let mut out = BTreeMap::new();
    for tok in line.split_whitespace().skip(1) {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Corpus(format!("line {lineno}: expected key=value, found {tok:?}")))?;
        if out.insert(k, v).is_some() {
            return Err(Error::Corpus(format!("line {lineno}: repeated field {k}")));
        }
    }
    Ok(out)
}

fn take<'a>(f: &mut BTreeMap<&str, &'a str>, key: &str, lineno: usize) -> Result<&'a str> {
    f.remove(key)
        .ok_or_else(|| Error::Corpus(format!("line {lineno}: missing field {key}")))
}

impl Manifest {
    pub fn empty(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            speakers: Vec::new(),
            utterances: Vec::new(),
        }
    }

    /// Parses and checks referential integrity; does not touch the file
    /// system.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut m = Self::empty(root);
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut f = fields(line, lineno)?;
            match line.split_whitespace().next() {
                Some("speaker") => {
                    let id = take(&mut f, "id", lineno)?.to_string();
                    let group = f.remove("group").map(str::parse).transpose()?;
                    let gender = f.remove("gender").map(str::parse).transpose()?;
                    m.speakers.push(SpeakerInfo { id, group, gender });
                }
                Some("utterance") => {
                    let entry = UtteranceEntry {
                        id: take(&mut f, "id", lineno)?.to_string(),
                        speaker_id: take(&mut f, "speaker", lineno)?.to_string(),
                        audio: PathBuf::from(take(&mut f, "audio", lineno)?),
                        trajectory: PathBuf::from(take(&mut f, "trajectory", lineno)?),
                        split: take(&mut f, "split", lineno)?.parse()?,
                    };
                    m.utterances.push(entry);
                }
                Some(other) => return Err(Error::Corpus(format!("line {lineno}: unknown record {other:?}"))),
                None => unreachable!(),
            }
            if let Some(k) = f.keys().next() {
                return Err(Error::Corpus(format!("line {lineno}: unknown field {k}")));
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut speakers = HashSet::new();
        for s in &self.speakers {
            if !speakers.insert(s.id.as_str()) {
                return Err(Error::Corpus(format!("duplicate speaker id {}", s.id)));
            }
        }
        let mut ids = HashSet::new();
        for u in &self.utterances {
            if !ids.insert(u.id.as_str()) {
                return Err(Error::Corpus(format!("duplicate utterance id {}", u.id)));
            }
            if !speakers.contains(u.speaker_id.as_str()) {
                return Err(Error::Corpus(format!(
                    "utterance {} references undeclared speaker {}",
                    u.id, u.speaker_id
                )));
            }
        }
        Ok(())
    }

    /// Reads, validates and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::format(path, e.to_string()))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, root)?;
        for u in &m.utterances {
            for p in [m.audio_path(u), m.trajectory_path(u)] {
                if !p.exists() {
                    return Err(Error::Corpus(format!("utterance {}: missing file {}", u.id, p.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.speakers {
            out.push_str(&format!("speaker id={}", s.id));
            if let Some(g) = s.group {
                out.push_str(&format!(" group={g}"));
            }
            if let Some(g) = s.gender {
                out.push_str(&format!(" gender={g}"));
            }
            out.push('\n');
        }
        for u in &self.utterances {
            out.push_str(&format!(
                "utterance id={} speaker={} audio={} trajectory={} split={}\n",
                u.id,
                u.speaker_id,
                u.audio.display(),
                u.trajectory.display(),
                u.split.as_str()
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerInfo> {
        self.speakers.iter().find(|s| s.id == id)
    }

    pub fn utterance(&self, id: &str) -> Option<&UtteranceEntry> {
        self.utterances.iter().find(|u| u.id == id)
    }

    pub fn audio_path(&self, u: &UtteranceEntry) -> PathBuf {
        self.root.join(&u.audio)
    }

    pub fn trajectory_path(&self, u: &UtteranceEntry) -> PathBuf {
        self.root.join(&u.trajectory)
    }

    /// Per-speaker normalization statistics file.
    pub fn stats_path(&self, speaker: &str) -> PathBuf {
        self.root.join(speaker).join("norm.txt")
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &UtteranceEntry> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn of_speaker<'a>(&'a self, speaker: &'a str) -> impl Iterator<Item = &'a UtteranceEntry> {
        self.utterances.iter().filter(move |u| u.speaker_id == speaker)
    }

    pub fn split_counts(&self) -> (usize, usize) {
        (self.in_split(Split::Train).count(), self.in_split(Split::Test).count())
    }
}

/// Relabels every utterance with a per-speaker random split. Each speaker
/// contributes `round(n * train_fraction)` training utterances, kept within
/// `1..n`.
pub fn split(manifest: &Manifest, seed: u64, train_fraction: f64) -> Result<Manifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput("train_fraction must lie strictly between 0 and 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = manifest.clone();
    for s in &manifest.speakers {
        let mut idx: Vec<usize> = (0..out.utterances.len())
            .filter(|&i| out.utterances[i].speaker_id == s.id)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let n = idx.len();
        if n < 2 {
            return Err(Error::Corpus(format!("speaker {} has {n} utterance; cannot split", s.id)));
        }
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        idx.shuffle(&mut rng);
        for (rank, &i) in idx.iter().enumerate() {
            out.utterances[i].split = if rank < n_train { Split::Train } else { Split::Test };
        }
    }
    Ok(out)
}
