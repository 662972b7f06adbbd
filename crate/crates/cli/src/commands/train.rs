use std::fs;
use std::path::Path;

use anyhow::anyhow;
use artiwave_core::corpus::{Manifest, Split, MANIFEST_FILE};
use artiwave_core::pipeline::{frontend_from_metadata, frontend_metadata, prepare_corpus, stats_metadata, Selection};
use artiwave_core::train::{train_to_dir, Trainer};
use artiwave_core::wavenet::{Grid, NetworkParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{absolute, apply_network, base_config, finish, load_checkpoint, with_threads};
use crate::args::TrainArgs;
use crate::config::NetworkSection;
use crate::{prepare_out_dir, CliError, CliResult};

pub fn run(a: TrainArgs) -> CliResult<()> {
    let out = a.common.require_out()?;
    let mut cfg = base_config(&a.common)?;
    apply_network(&mut cfg, &a.network);
    if let Some(v) = a.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.minibatch {
        cfg.train.minibatch_count = v;
    }
    if let Some(v) = a.grad_clip {
        cfg.train.clip_gradients = true;
        cfg.train.grad_clip = v;
    }
    if a.no_clip {
        cfg.train.clip_gradients = false;
    }
    if let Some(v) = a.log_every {
        cfg.train.log_every = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.train.checkpoint_every = v;
    }
    if !a.utterances.is_empty() {
        cfg.train.utterances = a.utterances.clone();
    }
    cfg.paths.corpus = Some(absolute(&a.corpus));

    // A resumed run keeps the network and frontend it was started with.
    let resume = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let net = &ck.params.config;
            cfg.network = NetworkSection {
                layers_per_stack: net.layers_per_stack,
                stacks: net.stacks,
                dilation_base: net.dilation_base,
                kernel_size: net.kernel_size,
                residual_channels: net.residual_channels,
                gate_channels: net.gate_channels,
                skip_channels: net.skip_channels,
                mixture_components: net.mixture_components,
                quantization_levels: net.quantization_levels,
            };
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
            cfg.paths.resume = Some(absolute(path));
            Some(ck)
        }
        None => None,
    };
    let cfg = finish(cfg)?;
    if let Some(ck) = &resume {
        if ck.params.config != cfg.network_config() {
            return Err(CliError::Config(
                "checkpoint network does not match the configured frontend band count".into(),
            ));
        }
        if ck.step > cfg.train.steps {
            return Err(CliError::Config(format!(
                "train.steps = {} is below the checkpoint's completed {} steps",
                cfg.train.steps, ck.step
            )));
        }
    }

    let manifest = Manifest::load(&a.corpus.join(MANIFEST_FILE))?;
    let selection = Selection {
        split: Some(Split::Train),
        speakers: Vec::new(),
        utterances: cfg.train.utterances.clone(),
    };
    for id in &cfg.train.utterances {
        match manifest.utterance(id) {
            Some(u) if u.split == Split::Train => {}
            Some(_) => return Err(CliError::Usage(format!("utterance {id} is not in the training split"))),
            None => return Err(CliError::Usage(format!("utterance {id} is not in the manifest"))),
        }
    }

    match &resume {
        Some(ck) => truncate_loss_csv(&out.join("loss.csv"), ck.step)?,
        None => {
            prepare_out_dir(&out, a.common.force)?;
            let _ = fs::remove_file(out.join("loss.csv"));
            let _ = fs::remove_dir_all(out.join("checkpoints"));
            let _ = fs::remove_file(out.join("final.awck"));
        }
    }
    fs::create_dir_all(&out)?;
    cfg.write_to(&out)?;

    let frontend = cfg.frontend_config();
    let net = cfg.network_config();
    let train_cfg = cfg.train_config();
    let outputs = with_threads(cfg.threads, move || {
        let corpus = prepare_corpus(&manifest, &frontend, Grid::new(net.quantization_levels), &selection)?;
        if corpus.utterances.is_empty() {
            return Err(CliError::Runtime(anyhow!("no training utterances selected")));
        }
        let clamped: usize = corpus.utterances.iter().map(|u| u.clamped).sum();
        println!(
            "training on {} utterances ({} frames, {clamped} values clamped)",
            corpus.utterances.len(),
            corpus.utterances.iter().map(|u| u.mel.rows()).sum::<usize>()
        );
        let mut metadata = frontend_metadata(&frontend);
        metadata.extend(stats_metadata(corpus.stats.values()));
        let sequences = corpus.sequences();
        let mut trainer = match resume {
            Some(ck) => Trainer::from_checkpoint(ck, train_cfg, &sequences)?,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                Trainer::new(NetworkParams::init(&net, &mut rng), train_cfg, &sequences)?
            }
        };
        let total = trainer.config.steps;
        Ok(train_to_dir(&mut trainer, &out, &metadata, |r| {
            println!("step {}/{total} nll {:.6} grad_norm {:.4}", r.step, r.nll, r.grad_norm);
        })?)
    })?;
    println!("final checkpoint {}", outputs.final_checkpoint.display());
    Ok(())
}

/// Drops loss rows past `step` so a resumed run does not duplicate them.
fn truncate_loss_csv(path: &Path, step: u64) -> CliResult<()> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(());
    };
    let kept: Vec<&str> = text
        .lines()
        .enumerate()
        .filter(|(i, line)| {
            *i == 0
                || line
                    .split(',')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_some_and(|s| s <= step)
        })
        .map(|(_, l)| l)
        .collect();
    fs::write(path, kept.join("\n") + "\n")?;
    Ok(())
}
