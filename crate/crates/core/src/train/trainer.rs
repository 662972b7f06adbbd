//! Teacher-forced training loop.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::Checkpoint;
use super::gradient::{backward, Sequence};
use crate::wavenet::{Grid, NetworkParams};
use crate::{Error, Result};

/// Optimization settings. `steps` counts optimizer updates; each update uses
/// `minibatch_count` items drawn without replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub minibatch_count: usize,
    pub max_timesteps_per_item: usize,
    pub adam: AdamConfig,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            minibatch_count: 8,
            max_timesteps_per_item: 8000,
            adam: AdamConfig::default(),
            grad_clip: Some(1.0),
            seed: 0,
            log_every: 10,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        let counts = [
            ("steps", self.steps as usize),
            ("minibatch_count", self.minibatch_count),
            ("max_timesteps_per_item", self.max_timesteps_per_item),
            ("log_every", self.log_every as usize),
            ("checkpoint_every", self.checkpoint_every as usize),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::InvalidInput(format!("train.{name} must be at least 1")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidInput("train.grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub nll: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,nll,grad_norm,wall_time_s";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{:.3}", self.step, self.nll, self.grad_norm, self.wall_time_s)
    }
}

/// Splits a sequence into items predicting at most `max_timesteps` frames
/// each. Every item keeps up to `context` earlier frames as unscored history.
pub fn chunk_sequence(seq: &Sequence, max_timesteps: usize, context: usize) -> Vec<Sequence> {
    let frames = seq.x.rows();
    let mut out = Vec::new();
    let mut start = seq.loss_from;
    while start < frames {
        let end = (start + max_timesteps).min(frames);
        let from = start.saturating_sub(context);
        out.push(Sequence {
            label: if start == seq.loss_from && end == frames {
                seq.label.clone()
            } else {
                format!("{}[{start}..{end}]", seq.label)
            },
            x: seq.x.slice_rows(from, end),
            cond: seq.cond.slice_rows(from, end),
            loss_from: start - from,
        });
        start = end;
    }
    out
}

pub struct Trainer {
    pub params: NetworkParams,
    pub optimizer: AdamState,
    pub config: TrainConfig,
    grid: Grid,
    items: Vec<Sequence>,
    started: Instant,
}

impl Trainer {
    /// `sequences` are whole utterances; they are chunked here.
    pub fn new(params: NetworkParams, config: TrainConfig, sequences: &[Sequence]) -> Result<Self> {
        let optimizer = AdamState::new(&params);
        Self::with_state(params, optimizer, config, sequences)
    }

    pub fn from_checkpoint(ck: Checkpoint, config: TrainConfig, sequences: &[Sequence]) -> Result<Self> {
        let optimizer = match ck.optimizer {
            Some(o) => o,
            None => {
                let mut o = AdamState::new(&ck.params);
                o.step = ck.step;
                o
            }
        };
        Self::with_state(ck.params, optimizer, config, sequences)
    }

    fn with_state(
        params: NetworkParams,
        optimizer: AdamState,
        config: TrainConfig,
        sequences: &[Sequence],
    ) -> Result<Self> {
        config.validate()?;
        params.config.validate()?;
        if !optimizer.matches(&params) {
            return Err(Error::InvalidInput("optimizer state does not match the network shape".into()));
        }
        let context = params.config.receptive_field();
        let items: Vec<Sequence> = sequences
            .iter()
            .flat_map(|s| chunk_sequence(s, config.max_timesteps_per_item, context))
            .collect();
        if items.is_empty() {
            return Err(Error::InvalidInput("no training frames".into()));
        }
        Ok(Self {
            grid: Grid::new(params.config.quantization_levels),
            params,
            optimizer,
            config,
            items,
            started: Instant::now(),
        })
    }

    pub fn items(&self) -> &[Sequence] {
        &self.items
    }

    /// Number of completed optimizer updates.
    pub fn completed_steps(&self) -> u64 {
        self.optimizer.step
    }

    /// Items used by update number `step` (0-based). A pure function of the
    /// seed and the step so that resumed runs see the same batches.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        let n = self.items.len();
        let m = self.config.minibatch_count.min(n);
        let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
        idx.sort_unstable();
        idx
    }

    /// One forward/backward pass and parameter update.
    pub fn step(&mut self) -> Result<LossRecord> {
        let step = self.optimizer.step;
        let batch: Vec<Sequence> = self
            .batch_indices(step)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect();
        let (loss, mut grads) = backward(&self.params, &batch, self.grid)
            .map_err(|e| Error::NonFinite(format!("step {}: {e}", step + 1)))?;
        let grad_norm = match self.config.grad_clip {
            Some(max) => grads.clip_global_norm(max),
            None => grads.global_norm(),
        };
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("step {}: gradient norm {grad_norm}", step + 1)));
        }
        adam_step(&mut self.params, &grads, &mut self.optimizer, &self.config.adam);
        Ok(LossRecord {
            step: step + 1,
            nll: loss,
            grad_norm,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.params.clone());
        ck.step = self.optimizer.step;
        ck.optimizer = Some(self.optimizer.clone());
        ck
    }

    /// Runs until `config.steps` updates are complete, reporting every
    /// `log_every`-th record (and the last one) to `on_record`.
    pub fn run(&mut self, mut on_record: impl FnMut(&Trainer, &LossRecord) -> Result<()>) -> Result<Vec<LossRecord>> {
        let mut logged = Vec::new();
        while self.optimizer.step < self.config.steps {
            let rec = self.step()?;
            if rec.step % self.config.log_every == 0 || rec.step == self.config.steps {
                on_record(self, &rec)?;
                logged.push(rec);
            }
        }
        Ok(logged)
    }
}

/// Where [`train_to_dir`] put its outputs.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub loss_csv: PathBuf,
    pub final_checkpoint: PathBuf,
    pub records: Vec<LossRecord>,
}

/// Runs the trainer, appending the loss curve to `dir/loss.csv` and writing
/// `dir/checkpoints/step-N.awck` every `checkpoint_every` updates plus
/// `dir/final.awck` at the end. `metadata` is copied into every checkpoint.
pub fn train_to_dir(
    trainer: &mut Trainer,
    dir: &Path,
    metadata: &BTreeMap<String, String>,
    mut progress: impl FnMut(&LossRecord),
) -> Result<TrainOutputs> {
    let ck_dir = dir.join("checkpoints");
    fs::create_dir_all(&ck_dir)?;
    let loss_csv = dir.join("loss.csv");
    let fresh = !loss_csv.exists();
    let mut csv = fs::OpenOptions::new().create(true).append(true).open(&loss_csv)?;
    if fresh {
        writeln!(csv, "{}", LossRecord::CSV_HEADER)?;
    }
    let save = |t: &Trainer, path: &Path| -> Result<()> {
        let mut ck = t.checkpoint();
        ck.metadata = metadata.clone();
        ck.save(path)
    };
    let (total, log_every, ck_every) = (
        trainer.config.steps,
        trainer.config.log_every,
        trainer.config.checkpoint_every,
    );
    let mut records = Vec::new();
    while trainer.completed_steps() < total {
        let rec = trainer.step()?;
        if rec.step % log_every == 0 || rec.step == total {
            writeln!(csv, "{}", rec.csv_row())?;
            progress(&rec);
            records.push(rec);
        }
        if rec.step % ck_every == 0 {
            save(trainer, &ck_dir.join(format!("step-{}.awck", rec.step)))?;
        }
    }
    csv.flush()?;
    let final_checkpoint = dir.join("final.awck");
    save(trainer, &final_checkpoint)?;
    Ok(TrainOutputs {
        loss_csv,
        final_checkpoint,
        records,
    })
}
