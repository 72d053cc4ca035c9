//! The selective-encryption federated round: local training, splitting
//! each update into encrypted and clear coordinates, mixed aggregation and
//! the global step.

mod config;
mod experiment;

pub use config::{CaptureSpec, FlConfig, Scale};
pub use experiment::{
    ratio_dir, read_records, run_experiment, run_sweep, CaptureTruth, CapturedUpdate, Experiment, ExperimentOutcome,
    RoundRecord, RoundState, WallTimes, CAPTURE_FILE, FINAL_CHECKPOINT, RECORDS_FILE,
};

use std::time::Instant;

use hefl_ckks::{Ciphertext, CkksContext, CkksError, CkksParams, PublicKey, SecretKey};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{CoreError, Result};
use crate::model::{forward_backward, sgd_step, GradientVector, ModelState, OptimizerState};
use crate::rng::{stream, sub_seed, tag};
use crate::sensitivity::SelectionMask;

/// One shared keypair: clients hold the public half, the server both.
pub struct KeyMaterial {
    pub ctx: CkksContext,
    pub public: PublicKey,
    pub secret: SecretKey,
}

impl KeyMaterial {
    pub fn generate(params: CkksParams, seed: u64) -> Result<Self> {
        let ctx = CkksContext::new(params)?;
        let (secret, public) = ctx.keygen(seed);
        Ok(Self { ctx, public, secret })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientTimings {
    pub train_ms: f64,
    pub encrypt_ms: f64,
}

/// What a client sends: ciphertexts for the masked coordinates, clear
/// `(index, value)` pairs for the rest.
#[derive(Clone, Debug)]
pub struct ClientUpdate {
    pub round: usize,
    pub client_id: usize,
    pub encrypted_chunks: Vec<Ciphertext>,
    pub encrypted_count: usize,
    pub plaintext_sparse: Vec<(usize, f64)>,
    pub mask_fingerprint: String,
    pub parameter_count: usize,
    /// Mean minibatch loss seen during local training.
    pub train_loss: f64,
    pub timings: ClientTimings,
}

impl ClientUpdate {
    /// The part of the update an eavesdropper can read.
    pub fn visible(&self) -> VisibleGradient {
        VisibleGradient {
            parameter_count: self.parameter_count,
            entries: self.plaintext_sparse.clone(),
        }
    }
}

/// Clear coordinates of an intercepted update, and nothing else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibleGradient {
    pub parameter_count: usize,
    pub entries: Vec<(usize, f64)>,
}

impl VisibleGradient {
    pub fn full(values: &[f64]) -> Self {
        Self {
            parameter_count: values.len(),
            entries: values.iter().copied().enumerate().collect(),
        }
    }

    pub fn is_visible(&self, index: usize) -> bool {
        self.entries.binary_search_by_key(&index, |e| e.0).is_ok()
    }
}

/// Order in which a client visits its shard during one local epoch.
pub fn batch_order(cfg: &FlConfig, shard_len: usize, round: usize, client: usize, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..shard_len).collect();
    order.shuffle(&mut stream(
        cfg.seed,
        &[tag::SHUFFLE, round as u64, client as u64, epoch as u64],
    ));
    order
}

/// Local training result before masking: the pseudo-gradient
/// `w_global - w_local` (or one minibatch gradient in single-step mode)
/// and the mean minibatch loss. The optimizer, including its step
/// schedule, starts fresh every round.
pub fn local_update(
    global: &ModelState,
    shard: &Dataset,
    cfg: &FlConfig,
    round: usize,
    client: usize,
) -> Result<(GradientVector, f64)> {
    if shard.is_empty() {
        return Err(CoreError::Usage(format!("client {client} has an empty shard")));
    }
    let batch_of = |order: &[usize]| -> Vec<&Example> { order.iter().map(|&i| &shard.examples[i]).collect() };
    if cfg.single_step {
        let order = batch_order(cfg, shard.len(), round, client, 0);
        let take = cfg.batch_size.min(order.len());
        let (loss, g) = forward_backward(global, &batch_of(&order[..take]))?;
        return Ok((g, loss));
    }
    let mut local = global.clone();
    let mut opt = OptimizerState::new(
        local.len(),
        cfg.lr,
        cfg.momentum,
        cfg.weight_decay,
        cfg.lr_step_size,
        cfg.lr_gamma,
    )?;
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for epoch in 0..cfg.local_epochs {
        let order = batch_order(cfg, shard.len(), round, client, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, g) = forward_backward(&local, &batch_of(chunk))?;
            sgd_step(&mut local, &g, &mut opt)?;
            loss_sum += loss;
            batches += 1;
        }
        opt.epoch_counter += 1;
        crate::model::lr_schedule_step(&mut opt);
    }
    let values = global.flat().iter().zip(local.flat()).map(|(g, l)| g - l).collect();
    let mean = if batches == 0 { 0.0 } else { loss_sum / batches as f64 };
    Ok((
        GradientVector {
            values,
            batch_count: batches,
        },
        mean,
    ))
}

/// Encrypts `values` in `slot_count`-sized chunks (the last one zero-padded
/// by the encoder), each with its own derived seed.
pub fn encrypt_packed(
    keys: &KeyMaterial,
    values: &[f64],
    seed: u64,
    round: usize,
    client: usize,
) -> Result<Vec<Ciphertext>> {
    values
        .chunks(keys.ctx.slot_count())
        .enumerate()
        .map(|(chunk, vals)| {
            let s = sub_seed(seed, &[tag::ENCRYPT, round as u64, client as u64, chunk as u64]);
            Ok(keys.ctx.encrypt_values(vals, &keys.public, s)?)
        })
        .collect()
}

/// Splits a local update by `mask` and encrypts the selected coordinates.
pub fn client_update(
    global: &ModelState,
    shard: &Dataset,
    cfg: &FlConfig,
    mask: &SelectionMask,
    keys: &KeyMaterial,
    round: usize,
    client_id: usize,
) -> Result<ClientUpdate> {
    if mask.parameter_count != global.len() {
        return Err(CoreError::Protocol(format!(
            "mask covers {} parameters, model has {}",
            mask.parameter_count,
            global.len()
        )));
    }
    let t0 = Instant::now();
    let (delta, train_loss) = local_update(global, shard, cfg, round, client_id)?;
    let train_ms = ms(t0);

    let t1 = Instant::now();
    let mut clipped = 0usize;
    let selected: Vec<f64> = mask
        .encrypted_indices
        .iter()
        .map(|&i| {
            let v = delta.values[i];
            if v.abs() > cfg.clip {
                clipped += 1;
            }
            v.clamp(-cfg.clip, cfg.clip)
        })
        .collect();
    if clipped > 0 {
        log::warn!(
            "round {round} client {client_id}: clipped {clipped} values to ±{}",
            cfg.clip
        );
    }
    let encrypted_chunks = encrypt_packed(keys, &selected, cfg.seed, round, client_id)?;
    let encrypt_ms = ms(t1);

    let plaintext_sparse = mask.complement().into_iter().map(|i| (i, delta.values[i])).collect();
    Ok(ClientUpdate {
        round,
        client_id,
        encrypted_chunks,
        encrypted_count: selected.len(),
        plaintext_sparse,
        mask_fingerprint: mask.fingerprint(),
        parameter_count: global.len(),
        train_loss,
        timings: ClientTimings { train_ms, encrypt_ms },
    })
}

#[derive(Clone, Debug)]
pub struct Aggregate {
    pub gradient: GradientVector,
    pub he_ms: f64,
    pub plain_ms: f64,
    pub decrypt_ms: f64,
}

/// Mixed aggregation: the encrypted part is summed and scaled by `1/K`
/// under encryption, the clear part is averaged directly; clients are
/// always combined in ascending id order.
pub fn aggregate(updates: &[ClientUpdate], mask: &SelectionMask, keys: &KeyMaterial) -> Result<Aggregate> {
    let first = updates
        .first()
        .ok_or_else(|| CoreError::Protocol("no client updates to aggregate".into()))?;
    let fp = mask.fingerprint();
    let n = mask.parameter_count;
    let chunks = first.encrypted_chunks.len();
    for u in updates {
        if u.round != first.round {
            return Err(CoreError::Protocol(format!(
                "client {} sent round {}, expected {}",
                u.client_id, u.round, first.round
            )));
        }
        if u.mask_fingerprint != fp {
            return Err(CoreError::Protocol(format!(
                "client {} used a different selection mask",
                u.client_id
            )));
        }
        if u.parameter_count != n
            || u.encrypted_count != mask.len()
            || u.encrypted_chunks.len() != chunks
            || u.plaintext_sparse.len() + u.encrypted_count != n
        {
            return Err(CoreError::Protocol(format!(
                "client {} sent a malformed update",
                u.client_id
            )));
        }
    }
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    let k = ordered.len() as f64;
    let mut values = vec![0.0; n];

    let t_he = Instant::now();
    let mut averaged = Vec::with_capacity(chunks);
    for c in 0..chunks {
        let mut acc = ordered[0].encrypted_chunks[c].clone();
        for u in &ordered[1..] {
            keys.ctx.he_add_assign(&mut acc, &u.encrypted_chunks[c])?;
        }
        let scaled = keys.ctx.he_mul_scalar(&acc, 1.0 / k).map_err(depth_is_config)?;
        averaged.push(keys.ctx.rescale(&scaled).map_err(depth_is_config)?);
    }
    let he_ms = ms(t_he);

    let t_dec = Instant::now();
    let slots = keys.ctx.slot_count();
    for (c, ct) in averaged.iter().enumerate() {
        let decoded = keys.ctx.decrypt_values(ct, &keys.secret)?;
        for (j, &idx) in mask.encrypted_indices.iter().skip(c * slots).take(slots).enumerate() {
            values[idx] = decoded[j];
        }
    }
    let decrypt_ms = ms(t_dec);

    let t_plain = Instant::now();
    for u in &ordered {
        for (&(i, v), &(i0, _)) in u.plaintext_sparse.iter().zip(&ordered[0].plaintext_sparse) {
            if i != i0 {
                return Err(CoreError::Protocol(format!(
                    "client {} sent misaligned clear coordinates",
                    u.client_id
                )));
            }
            values[i] += v;
        }
    }
    for &(i, _) in &ordered[0].plaintext_sparse {
        values[i] /= k;
    }
    let plain_ms = ms(t_plain);

    Ok(Aggregate {
        gradient: GradientVector {
            values,
            batch_count: ordered.len(),
        },
        he_ms,
        plain_ms,
        decrypt_ms,
    })
}

fn depth_is_config(e: CkksError) -> CoreError {
    match e {
        CkksError::DepthExhausted { .. } => CoreError::Config(format!("modulus chain too short for averaging: {e}")),
        other => other.into(),
    }
}

/// `w <- w - eta * g`.
pub fn apply_global_update(m: &ModelState, g: &GradientVector, eta: f64) -> Result<ModelState> {
    if g.len() != m.len() {
        return Err(CoreError::Usage(format!(
            "update of length {} for a model with {} parameters",
            g.len(),
            m.len()
        )));
    }
    let mut out = m.clone();
    for (w, d) in out.flat_mut().iter_mut().zip(&g.values) {
        *w -= eta * d;
    }
    Ok(out)
}

pub(crate) fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}
