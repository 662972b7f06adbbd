use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use artiwave_core::corpus::{load_mel_frames, load_trajectory, save_trajectory, Manifest, Split, MANIFEST_FILE};
use artiwave_core::frontend::{log_mel_with, AudioClip};
use artiwave_core::generate::DecodeRule;
use artiwave_core::metrics::UtteranceMetrics;
use artiwave_core::pipeline::{
    filterbank, fit_speaker_stats, frontend_from_metadata, invert_features, overlay_csv, stats_from_metadata,
    to_model_rate,
};
use artiwave_core::trajectory::{NormStats, TrajectorySet};
use rayon::prelude::*;

use super::{absolute, base_config, finish, load_checkpoint, with_threads};
use crate::args::{InvertArgs, SplitArg};
use crate::{prepare_out_dir, CliError, CliResult};

enum Source {
    Audio(PathBuf),
    Features(PathBuf),
}

struct Job {
    id: String,
    source: Source,
    stats: NormStats,
    reference: Option<PathBuf>,
}

pub fn run(a: InvertArgs) -> CliResult<()> {
    let out = a.common.require_out()?;
    let mut cfg = base_config(&a.common)?;
    if let Some(r) = a.rule {
        cfg.decode.rule = r.name().to_string();
    }
    if let Some(t) = a.temperature {
        cfg.decode.temperature = t;
    }
    cfg.paths.checkpoint = Some(absolute(&a.checkpoint));
    cfg.paths.corpus = a.corpus.as_deref().map(absolute);
    cfg.paths.stats = a.stats.as_deref().map(absolute);
    if a.corpus.is_none() && a.inputs.is_empty() {
        return Err(CliError::Usage("give input files or --corpus".into()));
    }

    let ck = load_checkpoint(&a.checkpoint)?;
    if let Some(f) = frontend_from_metadata(&ck.metadata)? {
        cfg.frontend.sample_rate = f.sample_rate;
        cfg.frontend.window = f.window;
        cfg.frontend.hop = f.hop;
        cfg.frontend.fft_size = f.fft_size;
        cfg.frontend.bands = f.bands;
        cfg.frontend.f_min = f.f_min;
        cfg.frontend.f_max = f.f_max;
        cfg.frontend.log_floor = f.log_floor;
    }
    let cfg = finish(cfg)?;
    let rule = cfg.decode_rule()?;

    let override_stats = a.stats.as_deref().map(NormStats::load).transpose()?;
    let known: BTreeMap<String, NormStats> = stats_from_metadata(&ck.metadata)?
        .into_iter()
        .map(|s| (s.speaker_id.clone(), s))
        .collect();

    let jobs = match &a.corpus {
        Some(root) => corpus_jobs(root, &a, override_stats.as_ref(), &known)?,
        None => file_jobs(&a, override_stats.as_ref(), &known)?,
    };
    if jobs.is_empty() {
        eprintln!("warning: no inputs matched; nothing to invert");
        return Ok(());
    }

    prepare_out_dir(&out, a.common.force)?;
    cfg.write_to(&out)?;
    let frontend = cfg.frontend_config();
    let bank = filterbank(&frontend)?;
    let params = ck.params;
    let lines = with_threads(cfg.threads, || {
        jobs.par_iter()
            .enumerate()
            .map(|(i, job)| -> CliResult<String> {
                let mel = match &job.source {
                    Source::Audio(p) => {
                        let clip = AudioClip::read_wav(p).with_context(|| format!("reading {}", p.display()))?;
                        log_mel_with(&clip, &frontend, &bank)?.frames
                    }
                    Source::Features(p) => load_mel_frames(p)?,
                };
                let rule = match rule {
                    DecodeRule::Sample { seed, temperature } => DecodeRule::Sample {
                        seed: seed.wrapping_add(i as u64),
                        temperature,
                    },
                    r => r,
                };
                let pred = invert_features(&params, &mel, &job.stats, rule)
                    .with_context(|| format!("inverting {}", job.id))?;
                let reference = job
                    .reference
                    .as_deref()
                    .map(|p| load_trajectory(p).and_then(|t| to_model_rate(&t)))
                    .transpose()?;
                save_trajectory(&out.join(format!("{}.traj", job.id)), &pred)?;
                fs::write(
                    out.join(format!("{}.overlay.csv", job.id)),
                    overlay_csv(&pred, reference.as_ref()),
                )?;
                Ok(summary_line(&job.id, &pred, reference.as_ref()))
            })
            .collect::<CliResult<Vec<String>>>()
    })?;
    for line in lines {
        println!("{line}");
    }
    Ok(())
}

fn summary_line(id: &str, pred: &TrajectorySet, reference: Option<&TrajectorySet>) -> String {
    let Some(r) = reference else {
        return format!("{id}: {} frames", pred.frames());
    };
    let n = pred.frames().min(r.frames());
    let m = UtteranceMetrics::compute(
        id,
        &pred.speaker_id,
        &pred.channels.slice_rows(0, n),
        &r.channels.slice_rows(0, n),
    );
    match m {
        Ok(m) => {
            let corr: Vec<f64> = m.correlation.iter().flatten().copied().collect();
            let worst = corr.iter().copied().fold(f64::INFINITY, f64::min);
            let mean_rmse = m.rmse.iter().sum::<f64>() / m.rmse.len() as f64;
            format!("{id}: {n} frames, worst channel correlation {worst:.4}, mean RMSE {mean_rmse:.4} mm")
        }
        Err(e) => format!("{id}: {n} frames ({e})"),
    }
}

fn corpus_jobs(
    root: &Path,
    a: &InvertArgs,
    override_stats: Option<&NormStats>,
    known: &BTreeMap<String, NormStats>,
) -> CliResult<Vec<Job>> {
    let manifest = Manifest::load(&root.join(MANIFEST_FILE))?;
    for id in &a.utterances {
        if manifest.utterance(id).is_none() {
            return Err(CliError::Usage(format!("utterance {id} is not in the manifest")));
        }
    }
    let mut fitted: BTreeMap<String, NormStats> = BTreeMap::new();
    let mut jobs = Vec::new();
    for u in &manifest.utterances {
        let in_split = match a.split {
            SplitArg::All => true,
            SplitArg::Train => u.split == Split::Train,
            SplitArg::Test => u.split == Split::Test,
        };
        if !in_split || !(a.utterances.is_empty() || a.utterances.contains(&u.id)) {
            continue;
        }
        let stats = match (override_stats, known.get(&u.speaker_id)) {
            (Some(s), _) => s.clone(),
            (None, Some(s)) => s.clone(),
            (None, None) => {
                if !fitted.contains_key(&u.speaker_id) {
                    eprintln!(
                        "note: checkpoint has no statistics for {}; fitting them on the corpus training split",
                        u.speaker_id
                    );
                    fitted.insert(u.speaker_id.clone(), fit_speaker_stats(&manifest, &u.speaker_id)?);
                }
                fitted[&u.speaker_id].clone()
            }
        };
        jobs.push(Job {
            id: u.id.clone(),
            source: Source::Audio(manifest.audio_path(u)),
            stats,
            reference: Some(manifest.trajectory_path(u)),
        });
    }
    Ok(jobs)
}

fn file_jobs(
    a: &InvertArgs,
    override_stats: Option<&NormStats>,
    known: &BTreeMap<String, NormStats>,
) -> CliResult<Vec<Job>> {
    let mut paths = Vec::new();
    for pattern in &a.inputs {
        let matches = glob::glob(pattern).map_err(|e| CliError::Usage(format!("bad pattern {pattern:?}: {e}")))?;
        for m in matches {
            paths.push(m.map_err(|e| CliError::Runtime(e.into()))?);
        }
    }
    paths.sort();
    paths.dedup();
    if paths.is_empty() {
        return Ok(Vec::new());
    }
    let stats = match (override_stats, &a.speaker) {
        (Some(s), _) => s.clone(),
        (None, Some(spk)) => known
            .get(spk)
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("checkpoint has no statistics for speaker {spk}")))?,
        (None, None) if known.len() == 1 => known.values().next().cloned().unwrap(),
        (None, None) => {
            return Err(CliError::Usage(format!(
                "checkpoint holds statistics for {} speakers; choose one with --speaker or pass --stats",
                known.len()
            )))
        }
    };
    paths
        .into_iter()
        .map(|p| {
            let id = stem(&p)?;
            let source = match p.extension().and_then(|e| e.to_str()) {
                Some("wav") | Some("WAV") => Source::Audio(p),
                Some("mel") => Source::Features(p),
                _ => {
                    return Err(CliError::Usage(format!(
                        "{}: expected a .wav or .mel input",
                        p.display()
                    )))
                }
            };
            Ok(Job {
                id,
                source,
                stats: stats.clone(),
                reference: None,
            })
        })
        .collect()
}

fn stem(p: &Path) -> CliResult<String> {
    p.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::Runtime(anyhow!("cannot name output for {}", p.display())))
}
