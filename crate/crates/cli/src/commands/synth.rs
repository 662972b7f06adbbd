use artiwave_core::corpus::make_synthetic_corpus;

use super::{base_config, finish, with_threads};
use crate::args::SynthArgs;
use crate::{prepare_out_dir, CliResult};

pub fn run(a: SynthArgs) -> CliResult<()> {
    let out = a.common.require_out()?;
    let mut cfg = base_config(&a.common)?;
    if let Some(v) = a.speakers {
        cfg.synth.speakers = v;
    }
    if let Some(v) = a.utterances {
        cfg.synth.utterances_per_speaker = v;
    }
    if let Some(v) = a.duration {
        cfg.synth.duration_s = v;
    }
    if let Some(v) = a.train_fraction {
        cfg.synth.train_fraction = v;
    }
    let cfg = finish(cfg)?;
    prepare_out_dir(&out, a.common.force)?;
    cfg.write_to(&out)?;
    let manifest = with_threads(cfg.threads, || Ok(make_synthetic_corpus(&out, &cfg.synth_config())?))?;
    let (train, test) = manifest.split_counts();
    println!(
        "wrote {} speakers, {} utterances ({train} train, {test} test) to {}",
        manifest.speakers.len(),
        manifest.utterances.len(),
        out.display()
    );
    Ok(())
}
