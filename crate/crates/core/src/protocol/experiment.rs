use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    aggregate, apply_global_update, batch_order, client_update, ms, ClientUpdate, FlConfig, KeyMaterial,
    VisibleGradient,
};
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::data::{evaluate, partition_indices, Dataset, Splits};
use crate::error::{CoreError, Result};
use crate::model::{build_model, Architecture, ModelState};
use crate::rng::{sub_seed, tag};
use crate::sensitivity::{jacobian_map, magnitude_map, select_top_r, SelectionMask, SensitivityMethod};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CAPTURE_FILE: &str = "capture.json";
const CAPTURE_GLOBAL: &str = "capture-global.ckpt";
const CAPTURE_TRUTH: &str = "capture-truth.json";

/// Stage durations in milliseconds. Client stages are summed over clients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WallTimes {
    pub train: f64,
    pub encrypt: f64,
    pub aggregate_he: f64,
    pub aggregate_plain: f64,
    pub decrypt: f64,
}

impl WallTimes {
    pub fn total(&self) -> f64 {
        self.train + self.encrypt + self.aggregate_he + self.aggregate_plain + self.decrypt
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub ratio: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub avg_train_loss: f64,
    pub test_loss: f64,
    pub encrypted_count: usize,
    pub plaintext_count: usize,
    pub mask_fingerprint: String,
    pub wall_times: WallTimes,
}

/// Server-side state between rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundState {
    /// Last completed round (0 before training).
    pub round: usize,
    pub global: ModelState,
    /// Averaged update of the last round; drives the next magnitude mask.
    pub previous_aggregate: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub final_state: RoundState,
}

/// A captured update as an eavesdropper sees it, plus the context needed to
/// replay the attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapturedUpdate {
    pub round: usize,
    pub client: usize,
    pub ratio: f64,
    pub single_step: bool,
    pub batch_size: usize,
    pub arch: Architecture,
    pub mask_fingerprint: String,
    pub encrypted_count: usize,
    pub visible: VisibleGradient,
    /// Model the client started from, relative to the capture file.
    pub global_checkpoint: String,
    /// Ground-truth pointer used only for scoring, relative to the capture file.
    pub truth_file: String,
}

/// Training-set indices of the examples behind a captured update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureTruth {
    pub example_indices: Vec<usize>,
}

impl CapturedUpdate {
    pub fn load(path: &Path) -> Result<(Self, ModelState)> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let cap: Self =
            serde_json::from_str(&text).map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let model = Checkpoint::load(&base.join(&cap.global_checkpoint))?.model;
        if *model.arch() != cap.arch || cap.visible.parameter_count != model.len() {
            return Err(CoreError::Format(
                "captured update does not match its global checkpoint".into(),
            ));
        }
        Ok((cap, model))
    }

    pub fn load_truth(&self, capture_path: &Path) -> Result<CaptureTruth> {
        let p = capture_path.parent().unwrap_or(Path::new(".")).join(&self.truth_file);
        let text = std::fs::read_to_string(&p).map_err(|e| CoreError::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| CoreError::Format(format!("{}: {e}", p.display())))
    }
}

/// Everything fixed for the duration of a run: data, shards, keys, pool.
pub struct Experiment {
    pub cfg: FlConfig,
    pub arch: Architecture,
    pub splits: Splits,
    pub shard_indices: Vec<Vec<usize>>,
    pub shards: Vec<Dataset>,
    pub keys: KeyMaterial,
    pool: rayon::ThreadPool,
}

fn thread_cap() -> usize {
    std::env::var("HEFL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0)
}

impl Experiment {
    pub fn new(cfg: FlConfig) -> Result<Self> {
        cfg.validate()?;
        let keys = KeyMaterial::generate(cfg.ckks_params()?, sub_seed(cfg.seed, &[tag::KEYS]))?;
        Self::with_keys(cfg, keys)
    }

    pub fn with_keys(cfg: FlConfig, keys: KeyMaterial) -> Result<Self> {
        cfg.validate()?;
        let arch = cfg.architecture()?;
        let splits = cfg
            .dataset
            .load(cfg.seed, cfg.train_size, cfg.test_size, cfg.calibration_size)?;
        let shard_indices = partition_indices(splits.train.len(), cfg.clients, cfg.seed)?;
        let shards = shard_indices.iter().map(|idx| splits.train.subset(idx)).collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(thread_cap())
            .build()
            .map_err(|e| CoreError::Config(format!("thread pool: {e}")))?;
        Ok(Self {
            cfg,
            arch,
            splits,
            shard_indices,
            shards,
            keys,
            pool,
        })
    }

    pub fn initial_state(&self) -> RoundState {
        RoundState {
            round: 0,
            global: build_model(self.arch, self.cfg.seed),
            previous_aggregate: None,
        }
    }

    /// The mask every client uses in the round after `state`.
    pub fn round_mask(&self, state: &RoundState) -> Result<SelectionMask> {
        let map = match self.cfg.sensitivity_method {
            SensitivityMethod::Magnitude => match &state.previous_aggregate {
                Some(prev) => magnitude_map(prev, state.round)?,
                None => magnitude_map(state.global.flat(), state.round)?,
            },
            SensitivityMethod::Jacobian => {
                let cal = &self.splits.calibration.examples;
                let batches: Vec<&[_]> = cal.chunks(self.cfg.batch_size).collect();
                if batches.is_empty() {
                    return Err(CoreError::Config(
                        "jacobian sensitivity needs calibration_size > 0".into(),
                    ));
                }
                jacobian_map(&state.global, &batches, state.round)?
            }
        };
        select_top_r(&map, self.cfg.encryption_ratio)
    }

    /// Runs one round in place and returns its record plus the raw updates.
    pub fn run_round(&self, state: &mut RoundState) -> Result<(RoundRecord, Vec<ClientUpdate>, SelectionMask)> {
        let round = state.round + 1;
        let mask = self.round_mask(state)?;
        let global = &state.global;
        let updates: Vec<ClientUpdate> = self.pool.install(|| {
            (0..self.cfg.clients)
                .into_par_iter()
                .map(|c| {
                    client_update(global, &self.shards[c], &self.cfg, &mask, &self.keys, round, c).map_err(|e| {
                        CoreError::Client {
                            round,
                            client: c,
                            source: Box::new(e),
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let agg = aggregate(&updates, &mask, &self.keys)?;
        let next = apply_global_update(global, &agg.gradient, self.cfg.global_step())?;
        let (train_accuracy, _) = evaluate(&next, &self.splits.train)?;
        let (test_accuracy, test_loss) = evaluate(&next, &self.splits.test)?;
        let k = updates.len() as f64;
        let record = RoundRecord {
            round,
            ratio: self.cfg.encryption_ratio,
            train_accuracy,
            test_accuracy,
            avg_train_loss: updates.iter().map(|u| u.train_loss).sum::<f64>() / k,
            test_loss,
            encrypted_count: mask.len(),
            plaintext_count: mask.parameter_count - mask.len(),
            mask_fingerprint: mask.fingerprint(),
            wall_times: WallTimes {
                train: updates.iter().map(|u| u.timings.train_ms).sum(),
                encrypt: updates.iter().map(|u| u.timings.encrypt_ms).sum(),
                aggregate_he: agg.he_ms,
                aggregate_plain: agg.plain_ms,
                decrypt: agg.decrypt_ms,
            },
        };
        state.round = round;
        state.global = next;
        state.previous_aggregate = Some(agg.gradient.values);
        Ok((record, updates, mask))
    }

    fn checkpoint(&self, state: &RoundState) -> Checkpoint {
        Checkpoint {
            round: state.round,
            config_digest: self.cfg.digest(),
            model: state.global.clone(),
            previous_aggregate: state.previous_aggregate.clone(),
        }
    }

    pub fn state_from_checkpoint(&self, ckpt: Checkpoint) -> Result<RoundState> {
        if ckpt.config_digest != self.cfg.digest() {
            return Err(CoreError::Config(
                "checkpoint was written by a different configuration".into(),
            ));
        }
        if *ckpt.model.arch() != self.arch {
            return Err(CoreError::Config(
                "checkpoint architecture does not match the configuration".into(),
            ));
        }
        Ok(RoundState {
            round: ckpt.round,
            global: ckpt.model,
            previous_aggregate: ckpt.previous_aggregate,
        })
    }

    fn write_capture(&self, out: &Path, before: &RoundState, update: &ClientUpdate) -> Result<()> {
        let c = update.client_id;
        let truth = if self.cfg.single_step {
            let order = batch_order(&self.cfg, self.shards[c].len(), update.round, c, 0);
            order
                .iter()
                .take(self.cfg.batch_size)
                .map(|&i| self.shard_indices[c][i])
                .collect()
        } else {
            self.shard_indices[c].clone()
        };
        let cap = CapturedUpdate {
            round: update.round,
            client: c,
            ratio: self.cfg.encryption_ratio,
            single_step: self.cfg.single_step,
            batch_size: self.cfg.batch_size,
            arch: self.arch,
            mask_fingerprint: update.mask_fingerprint.clone(),
            encrypted_count: update.encrypted_count,
            visible: update.visible(),
            global_checkpoint: CAPTURE_GLOBAL.into(),
            truth_file: CAPTURE_TRUTH.into(),
        };
        self.checkpoint(before).save(&out.join(CAPTURE_GLOBAL))?;
        let truth = CaptureTruth { example_indices: truth };
        write_atomic(
            &out.join(CAPTURE_TRUTH),
            &serde_json::to_vec(&truth).expect("serializes"),
        )?;
        write_atomic(&out.join(CAPTURE_FILE), &serde_json::to_vec(&cap).expect("serializes"))
    }

    /// Runs the remaining rounds. With `out`, records are appended to
    /// `records.jsonl` as they complete, checkpoints are written every
    /// `checkpoint_every` rounds and the final model goes to `final.ckpt`.
    pub fn run(&self, out: Option<&Path>, resume: Option<Checkpoint>) -> Result<ExperimentOutcome> {
        let started = Instant::now();
        let mut state = match resume {
            Some(c) => self.state_from_checkpoint(c)?,
            None => self.initial_state(),
        };
        let mut sink = match out {
            Some(dir) => Some(RecordSink::open(dir, state.round)?),
            None => None,
        };
        let mut records = Vec::new();
        while state.round < self.cfg.rounds {
            let before = self.cfg.capture.map(|_| state.clone());
            let (record, updates, _) = self.run_round(&mut state)?;
            log::info!(
                "round {}/{}: test acc {:.4}, train loss {:.4}",
                record.round,
                self.cfg.rounds,
                record.test_accuracy,
                record.avg_train_loss
            );
            if let (Some(dir), Some(spec), Some(before)) = (out, self.cfg.capture, before) {
                if spec.round == record.round {
                    self.write_capture(dir, &before, &updates[spec.client])?;
                }
            }
            if let Some(s) = sink.as_mut() {
                s.append(&record)?;
            }
            if let Some(dir) = out {
                if self.cfg.checkpoint_every > 0 && state.round % self.cfg.checkpoint_every == 0 {
                    self.checkpoint(&state)
                        .save(&dir.join(format!("checkpoint-round-{:04}.ckpt", state.round)))?;
                }
            }
            records.push(record);
        }
        if let Some(dir) = out {
            self.checkpoint(&state).save(&dir.join(FINAL_CHECKPOINT))?;
        }
        log::info!("experiment finished in {:.1} ms", ms(started));
        Ok(ExperimentOutcome {
            records,
            final_state: state,
        })
    }
}

struct RecordSink {
    path: PathBuf,
    file: File,
}

impl RecordSink {
    /// Opens the records file, keeping only rounds up to `resume_round`.
    fn open(dir: &Path, resume_round: usize) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let path = dir.join(RECORDS_FILE);
        let kept = if resume_round > 0 && path.exists() {
            read_records(&path)?
                .into_iter()
                .filter(|r| r.round <= resume_round)
                .collect()
        } else {
            Vec::new()
        };
        let mut body = Vec::new();
        for r in &kept {
            body.extend(serde_json::to_vec(r).expect("record serializes"));
            body.push(b'\n');
        }
        write_atomic(&path, &body)?;
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| CoreError::io(&path, e))?;
        Ok(Self { path, file })
    }

    fn append(&mut self, r: &RoundRecord) -> Result<()> {
        let mut line = serde_json::to_vec(r).expect("record serializes");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.flush())
            .map_err(|e| CoreError::io(&self.path, e))
    }
}

pub fn read_records(path: &Path) -> Result<Vec<RoundRecord>> {
    let f = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| CoreError::Format(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

pub fn run_experiment(cfg: &FlConfig, out: Option<&Path>, resume: Option<Checkpoint>) -> Result<ExperimentOutcome> {
    Experiment::new(cfg.clone())?.run(out, resume)
}

/// Directory name used for one ratio of a sweep, e.g. `r0.10`.
pub fn ratio_dir(r: f64) -> String {
    format!("r{r:.2}")
}

/// One run per ratio, each under `out/<ratio_dir>`.
pub fn run_sweep(cfg: &FlConfig, ratios: &[f64], out: Option<&Path>) -> Result<Vec<(f64, ExperimentOutcome)>> {
    ratios
        .iter()
        .map(|&r| {
            let mut c = cfg.clone();
            c.encryption_ratio = r;
            let dir = out.map(|o| o.join(ratio_dir(r)));
            Ok((r, run_experiment(&c, dir.as_deref(), None)?))
        })
        .collect()
}
