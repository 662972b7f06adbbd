use std::fmt::Write as _;
use std::fs;
use std::time::Instant;

use anyhow::anyhow;
use artiwave_core::generate::{generate_cached, generate_naive, DecodeRule, Generated};
use artiwave_core::wavenet::{NetworkConfig, NetworkParams};
use artiwave_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{absolute, apply_network, base_config, finish, load_checkpoint, with_threads};
use crate::args::BenchmarkArgs;
use crate::{prepare_out_dir, CliError, CliResult};

/// Frames compared before timing starts.
const PRECHECK_FRAMES: usize = 64;
const TOLERANCE: f64 = 1e-5;

/// One benchmarked network.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub layers: usize,
    pub receptive_field: usize,
    pub frames: usize,
    pub naive_s: f64,
    pub cached_s: f64,
    pub naive_macs_per_sample: f64,
    pub cached_macs_per_sample: f64,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str =
        "layers,receptive_field,frames,naive_s,cached_s,time_ratio,naive_macs_per_sample,cached_macs_per_sample,op_ratio";

    pub fn op_ratio(&self) -> f64 {
        self.naive_macs_per_sample / self.cached_macs_per_sample
    }

    pub fn time_ratio(&self) -> f64 {
        self.naive_s / self.cached_s.max(1e-12)
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.3},{:.1},{:.1},{:.3}",
            self.layers,
            self.receptive_field,
            self.frames,
            self.naive_s,
            self.cached_s,
            self.time_ratio(),
            self.naive_macs_per_sample,
            self.cached_macs_per_sample,
            self.op_ratio()
        )
    }
}

pub fn run(a: BenchmarkArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common)?;
    apply_network(&mut cfg, &a.network);
    cfg.paths.checkpoint = a.checkpoint.as_deref().map(absolute);
    let cfg = finish(cfg)?;
    if a.frames == 0 {
        return Err(CliError::Usage("--frames must be at least 1".into()));
    }
    let rule = cfg.decode_rule()?;

    let networks: Vec<NetworkParams> = match &a.checkpoint {
        Some(path) => {
            if !a.layers.is_empty() {
                return Err(CliError::Usage("--layers cannot be combined with --checkpoint".into()));
            }
            vec![load_checkpoint(path)?.params]
        }
        None => {
            let base = cfg.network_config();
            let configs = if a.layers.is_empty() {
                vec![base]
            } else {
                a.layers.iter().map(|&n| with_layer_count(&base, n)).collect::<CliResult<_>>()?
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            configs
                .iter()
                .map(|c| NetworkParams::random(c, 0.3, &mut rng))
                .collect()
        }
    };

    if let Some(out) = &a.common.out {
        prepare_out_dir(out, a.common.force)?;
        cfg.write_to(out)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut rows = Vec::new();
    println!("{}", BenchRow::CSV_HEADER);
    for params in &networks {
        let bands = params.config.cond_channels;
        let cond = Matrix::from_fn(a.frames, bands, |_, _| rng.gen_range(-1.0..1.0));
        let row = with_threads(cfg.threads, || bench_one(params, &cond, rule))?;
        println!("{}", row.csv_row());
        rows.push(row);
    }
    if let Some(out) = &a.common.out {
        let mut csv = format!("{}\n", BenchRow::CSV_HEADER);
        for r in &rows {
            let _ = writeln!(csv, "{}", r.csv_row());
        }
        fs::write(out.join("benchmark.csv"), csv)?;
    }
    Ok(())
}

/// `n` layers arranged as stacks of the configured length.
fn with_layer_count(base: &NetworkConfig, n: usize) -> CliResult<NetworkConfig> {
    let per_stack = base.layers_per_stack.min(n).max(1);
    if n == 0 || n % per_stack != 0 {
        return Err(CliError::Usage(format!(
            "--layers {n}: must be a positive multiple of layers_per_stack = {} or smaller than it",
            base.layers_per_stack
        )));
    }
    Ok(NetworkConfig {
        layers_per_stack: per_stack,
        stacks: n / per_stack,
        ..base.clone()
    })
}

fn max_diff(a: &Generated, b: &Generated) -> f64 {
    a.x.as_slice()
        .iter()
        .zip(b.x.as_slice())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
}

/// Checks equivalence on a short prefix, then times both decoders over
/// every frame and checks the full outputs agree.
pub fn bench_one(params: &NetworkParams, cond: &Matrix, rule: DecodeRule) -> CliResult<BenchRow> {
    let prefix = cond.slice_rows(0, cond.rows().min(PRECHECK_FRAMES));
    let (a, b) = (generate_naive(params, &prefix, rule)?, generate_cached(params, &prefix, rule)?);
    let d = max_diff(&a, &b);
    if d > TOLERANCE {
        return Err(CliError::Runtime(anyhow!(
            "naive and cached generation differ by {d:e} on the first {} frames; benchmark aborted",
            prefix.rows()
        )));
    }
    let t0 = Instant::now();
    let naive = generate_naive(params, cond, rule)?;
    let naive_s = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let cached = generate_cached(params, cond, rule)?;
    let cached_s = t0.elapsed().as_secs_f64();
    let d = max_diff(&naive, &cached);
    if d > TOLERANCE {
        return Err(CliError::Runtime(anyhow!(
            "naive and cached generation differ by {d:e}; benchmark aborted"
        )));
    }
    Ok(BenchRow {
        layers: params.config.layer_count(),
        receptive_field: params.config.receptive_field(),
        frames: cond.rows(),
        naive_s,
        cached_s,
        naive_macs_per_sample: naive.macs_per_sample(),
        cached_macs_per_sample: cached.macs_per_sample(),
    })
}
