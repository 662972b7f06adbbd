mod benchmark;
mod evaluate;
mod invert;
mod synth;
mod train;

use std::path::{Path, PathBuf};

use anyhow::Context;
use artiwave_core::train::Checkpoint;

use crate::args::{Command, Common, NetworkArgs};
use crate::{CliError, CliResult, RunConfig};

pub fn dispatch(cli: crate::Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Invert(a) => invert::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Benchmark(a) => benchmark::run(a),
    }
}

/// Config file plus the shared flag overrides. Subcommands apply their own
/// flags, then call [`finish`].
fn base_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    cfg.paths.out = common.out.clone();
    Ok(cfg)
}

fn apply_network(cfg: &mut RunConfig, a: &NetworkArgs) {
    if let Some(v) = a.layers_per_stack {
        cfg.network.layers_per_stack = v;
    }
    if let Some(v) = a.stacks {
        cfg.network.stacks = v;
    }
    if let Some(v) = a.channels {
        cfg.network.residual_channels = v;
        cfg.network.gate_channels = v;
        cfg.network.skip_channels = v;
    }
    if let Some(v) = a.mixtures {
        cfg.network.mixture_components = v;
    }
}

fn finish(cfg: RunConfig) -> CliResult<RunConfig> {
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `f` on a pool of `threads` workers (all cores when 0).
fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building the thread pool")?;
    pool.install(f)
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .map_err(CliError::Runtime)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
