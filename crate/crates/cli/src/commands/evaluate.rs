use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use artiwave_core::corpus::{load_trajectory, Manifest, MANIFEST_FILE};
use artiwave_core::metrics::{aggregate, SpeakerInfo, UtteranceMetrics};
use artiwave_core::pipeline::to_model_rate;
use artiwave_core::trajectory::{TrajectorySet, CHANNEL_NAMES};
use rayon::prelude::*;
use serde_json::json;

use super::{absolute, base_config, finish, with_threads};
use crate::args::EvaluateArgs;
use crate::{prepare_out_dir, CliError, CliResult};

struct Reference {
    path: PathBuf,
    speaker: Option<String>,
}

pub fn run(a: EvaluateArgs) -> CliResult<()> {
    let out = a.common.require_out()?;
    let mut cfg = base_config(&a.common)?;
    cfg.paths.predictions = Some(absolute(&a.predictions));
    cfg.paths.corpus = a.corpus.as_deref().map(absolute);
    cfg.paths.reference = a.reference.as_deref().map(absolute);
    let cfg = finish(cfg)?;

    let predictions = find_trajectories(&a.predictions)?;
    let (references, mut speakers) = match (&a.corpus, &a.reference) {
        (Some(root), _) => {
            let manifest = Manifest::load(&root.join(MANIFEST_FILE))?;
            let refs = manifest
                .utterances
                .iter()
                .map(|u| {
                    (
                        u.id.clone(),
                        Reference {
                            path: manifest.trajectory_path(u),
                            speaker: Some(u.speaker_id.clone()),
                        },
                    )
                })
                .collect::<BTreeMap<_, _>>();
            (refs, manifest.speakers.clone())
        }
        (None, Some(dir)) => {
            let refs = find_trajectories(dir)?
                .into_iter()
                .map(|(id, path)| (id, Reference { path, speaker: None }))
                .collect();
            (refs, Vec::new())
        }
        (None, None) => return Err(CliError::Usage("give --corpus or --reference".into())),
    };

    let mut warnings = Vec::new();
    let mut pairs = Vec::new();
    for (id, pred) in &predictions {
        match references.get(id) {
            Some(r) => pairs.push((id.clone(), pred.clone(), r)),
            None => warnings.push(format!("unpaired prediction {id}: no reference")),
        }
    }
    for id in references.keys() {
        if !predictions.contains_key(id) {
            warnings.push(format!("unpaired reference {id}: no prediction"));
        }
    }
    if pairs.is_empty() {
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        return Err(CliError::Runtime(anyhow!("no prediction could be paired with a reference")));
    }

    let scored = with_threads(cfg.threads, || {
        pairs
            .par_iter()
            .map(|(id, pred_path, r)| -> CliResult<(UtteranceMetrics, Option<String>)> {
                let pred = to_model_rate(&load_trajectory(pred_path)?)?;
                let reference = to_model_rate(&load_trajectory(&r.path)?)?;
                let speaker = r.speaker.clone().unwrap_or_else(|| reference.speaker_id.clone());
                let n = pred.frames().min(reference.frames());
                let note = (pred.frames() != reference.frames()).then(|| {
                    format!(
                        "utterance {id}: {} predicted vs {} reference frames, scored the first {n}",
                        pred.frames(),
                        reference.frames()
                    )
                });
                let m = score(id, &speaker, &pred, &reference, n)?;
                Ok((m, note))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let mut notes = Vec::new();
    let mut utterances = Vec::new();
    for (m, note) in scored {
        notes.extend(note);
        utterances.push(m);
    }
    for m in &utterances {
        if !speakers.iter().any(|s| s.id == m.speaker) {
            speakers.push(SpeakerInfo {
                id: m.speaker.clone(),
                group: None,
                gender: None,
            });
        }
    }
    let speakers: Vec<SpeakerInfo> = speakers
        .into_iter()
        .filter(|s| utterances.iter().any(|m| m.speaker == s.id))
        .collect();

    let channels: Vec<String> = CHANNEL_NAMES.iter().map(|s| s.to_string()).collect();
    let mut report = aggregate(&channels, &utterances, &speakers)?;
    report.diagnostics.extend(notes);
    report.diagnostics.extend(warnings.iter().cloned());

    prepare_out_dir(&out, a.common.force)?;
    cfg.write_to(&out)?;
    let text = report.to_text(a.paper_reference);
    fs::write(out.join("report.csv"), report.to_csv())?;
    fs::write(out.join("report.txt"), &text)?;
    fs::write(out.join("utterances.csv"), utterance_csv(&utterances))?;
    let mut jsonl = String::new();
    for r in report.records() {
        let line = json!({ "group": r.group, "channel": r.channel, "metric": r.metric, "value": r.value });
        let _ = writeln!(jsonl, "{line}");
    }
    fs::write(out.join("summary.jsonl"), jsonl)?;

    print!("{text}");
    println!("paired {} utterances; warnings: {}", utterances.len(), warnings.len());
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn score(id: &str, speaker: &str, pred: &TrajectorySet, reference: &TrajectorySet, n: usize) -> CliResult<UtteranceMetrics> {
    Ok(UtteranceMetrics::compute(
        id,
        speaker,
        &pred.channels.slice_rows(0, n),
        &reference.channels.slice_rows(0, n),
    )?)
}

fn utterance_csv(utterances: &[UtteranceMetrics]) -> String {
    let mut out = String::from("utterance,speaker,channel,rmse_mm,correlation\n");
    for u in utterances {
        for (c, name) in CHANNEL_NAMES.iter().enumerate() {
            let corr = u.correlation[c].map_or(String::new(), |v| v.to_string());
            let _ = writeln!(out, "{},{},{name},{},{corr}", u.utterance, u.speaker, u.rmse[c]);
        }
    }
    out
}

/// `<id>.traj` files under `dir`, keyed by id.
fn find_trajectories(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    let pattern = format!("{}/**/*.traj", glob::Pattern::escape(&dir.to_string_lossy()));
    let mut found = BTreeMap::new();
    for entry in glob::glob(&pattern).map_err(|e| CliError::Runtime(e.into()))? {
        let path = entry.map_err(|e| CliError::Runtime(e.into()))?;
        let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(prev) = found.insert(id.to_string(), path.clone()) {
            return Err(CliError::Runtime(anyhow!(
                "utterance id {id} appears twice: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(found)
}
