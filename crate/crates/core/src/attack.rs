//! Gradient-matching reconstruction (DLG) against the clear part of an
//! intercepted update.
//!
//! The objective is `D(x, t) = sum over visible i of (g_i(x, t) - o_i)^2`
//! where `g = dL/dw`. Its input gradient is a mixed second derivative; it is
//! obtained exactly with one extra backward pass over dual-number weights
//! `w + (g - o) eps`, since `dD/dx = 2 d/d eps [dL/dx](w + eps (g - o))`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::data::Example;
use crate::error::{CoreError, Result};
use crate::model::{backprop, build_model, Dual, InputShape, LossKind, ModelState, Target};
use crate::protocol::{client_update, FlConfig, KeyMaterial, VisibleGradient};
use crate::rng::{stream, sub_seed, tag};
use crate::sensitivity::{magnitude_map, select_top_r};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub restarts: usize,
    /// Loss the victim trained with.
    pub loss: LossKind,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            restarts: 5,
            loss: LossKind::CrossEntropy,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.restarts == 0 {
            return Err(CoreError::Config(
                "attack needs at least one iteration and one restart".into(),
            ));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(CoreError::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestartResult {
    pub restart: usize,
    pub gradient_distance: f64,
    pub diverged: bool,
    pub initial: Vec<f64>,
    pub reconstruction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    /// Index into `restarts` of the lowest gradient distance.
    pub best: usize,
    pub label: Option<usize>,
    pub restarts: Vec<RestartResult>,
}

impl Reconstruction {
    pub fn best(&self) -> &RestartResult {
        &self.restarts[self.best]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartScore {
    pub restart: usize,
    pub gradient_distance: f64,
    pub input_mse: f64,
    pub init_mse: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub final_gradient_distance: f64,
    pub input_mse: f64,
    /// Error of the best restart's random starting point.
    pub init_mse: f64,
    pub psnr: f64,
    pub threshold: f64,
    pub success: bool,
    pub inferred_label: Option<usize>,
    pub per_restart: Vec<RestartScore>,
}

/// Dense view of the observation: values and visibility flags.
fn observation(m: &ModelState, observed: &VisibleGradient) -> Result<(Vec<f64>, Vec<bool>)> {
    if observed.parameter_count != m.len() {
        return Err(CoreError::Usage(format!(
            "observation covers {} parameters, model has {}",
            observed.parameter_count,
            m.len()
        )));
    }
    let mut o = vec![0.0; m.len()];
    let mut vis = vec![false; m.len()];
    for &(i, v) in &observed.entries {
        if i >= m.len() {
            return Err(CoreError::Usage(format!("observed index {i} out of range")));
        }
        o[i] = v;
        vis[i] = true;
    }
    Ok((o, vis))
}

/// iDLG label inference: for one example under softmax cross-entropy, the
/// final layer's gradient row for class `c` is `(p_c - y_c) h` with `h > 0`,
/// so only the true class has a negative row. Abstains when the rows (or
/// failing that, the output bias) are not fully visible.
pub fn label_infer(observed: &VisibleGradient, m: &ModelState) -> Option<usize> {
    let (o, vis) = observation(m, observed).ok()?;
    let classes = m.arch().classes;
    let weight = m.arch().output_weight();
    let bias = m.arch().output_bias();
    let all_visible = |off: usize, len: usize| vis[off..off + len].iter().all(|&v| v);
    let scores: Vec<f64> = if all_visible(weight.offset, weight.len) {
        let cols = weight.len / classes;
        (0..classes)
            .map(|c| {
                o[weight.offset + c * cols..weight.offset + (c + 1) * cols]
                    .iter()
                    .sum::<f64>()
                    / cols as f64
            })
            .collect()
    } else if all_visible(bias.offset, bias.len) {
        o[bias.offset..bias.offset + bias.len].to_vec()
    } else {
        return None;
    };
    let negative: Vec<usize> = (0..classes).filter(|&c| scores[c] < 0.0).collect();
    match negative.as_slice() {
        [c] => Some(*c),
        _ => None,
    }
}

fn softmax(theta: &[f64]) -> Vec<f64> {
    let max = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = theta.iter().map(|t| (t - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// How the dummy target is parameterized during the search.
#[derive(Clone, Copy, Debug)]
enum LabelMode {
    Known(usize),
    /// Cross-entropy with `softmax(theta)` as a soft label.
    Soft,
    /// Squared error with `theta` as a free regression target.
    Free,
}

struct Objective<'a> {
    m: &'a ModelState,
    observed: &'a [f64],
    visible: &'a [bool],
    loss: LossKind,
    mode: LabelMode,
}

impl Objective<'_> {
    fn target_vector(&self, theta: &[f64]) -> Vec<f64> {
        match self.mode {
            LabelMode::Soft => softmax(theta),
            _ => theta.to_vec(),
        }
    }

    /// `D` and its gradients with respect to the input and the label
    /// parameters.
    fn evaluate(&self, x: &[f64], theta: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let arch = self.m.arch();
        let t = self.target_vector(theta);
        let target = match self.mode {
            LabelMode::Known(c) => Target::Class(c),
            _ => Target::Dense(&t),
        };
        let g = backprop(arch, self.m.flat(), &[(x, target)], self.loss, false)?;
        let residual: Vec<f64> = g
            .params
            .iter()
            .zip(self.observed)
            .zip(self.visible)
            .map(|((gi, oi), &v)| if v { gi - oi } else { 0.0 })
            .collect();
        let distance: f64 = residual.iter().map(|r| r * r).sum();

        let wd: Vec<Dual> = self
            .m
            .flat()
            .iter()
            .zip(&residual)
            .map(|(&w, &r)| Dual::new(w, r))
            .collect();
        let xd: Vec<Dual> = x.iter().map(|&v| Dual::new(v, 0.0)).collect();
        let td: Vec<Dual> = t.iter().map(|&v| Dual::new(v, 0.0)).collect();
        let target_d = match self.mode {
            LabelMode::Known(c) => Target::Class(c),
            _ => Target::Dense(&td),
        };
        let gd = backprop(arch, &wd, &[(&xd[..], target_d)], self.loss, true)?;
        let dx: Vec<f64> = gd.inputs[0].iter().map(|d| 2.0 * d.tangent).collect();
        let dt: Vec<f64> = gd.targets[0].iter().map(|d| 2.0 * d.tangent).collect();
        let dtheta = match self.mode {
            LabelMode::Known(_) => Vec::new(),
            LabelMode::Free => dt,
            LabelMode::Soft => {
                let dot: f64 = t.iter().zip(&dt).map(|(p, d)| p * d).sum();
                t.iter().zip(&dt).map(|(p, d)| p * (d - dot)).collect()
            }
        };
        Ok((distance, dx, dtheta))
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &AttackConfig) {
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= cfg.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

/// Gradient distance of a candidate `(x, label)`; exposed for checks.
pub fn gradient_distance(
    m: &ModelState,
    observed: &VisibleGradient,
    x: &[f64],
    label: usize,
    loss: LossKind,
) -> Result<f64> {
    let (o, vis) = observation(m, observed)?;
    let obj = Objective {
        m,
        observed: &o,
        visible: &vis,
        loss,
        mode: LabelMode::Known(label),
    };
    Ok(obj.evaluate(x, &[])?.0)
}

fn run_restart(obj: &Objective<'_>, cfg: &AttackConfig, seed: u64, restart: usize) -> RestartResult {
    let d = obj.m.arch().input.len();
    let classes = obj.m.arch().classes;
    let mut rng = stream(seed, &[tag::ATTACK, restart as u64]);
    let initial: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    let theta_len = match obj.mode {
        LabelMode::Known(_) => 0,
        _ => classes,
    };
    let mut params: Vec<f64> = initial.clone();
    params.extend((0..theta_len).map(|_| rng.gen::<f64>()));
    let mut adam = Adam::new(params.len());
    let mut best = (f64::INFINITY, params.clone());
    let mut diverged = false;
    for it in 0..=cfg.iterations {
        let (x, theta) = params.split_at(d);
        match obj.evaluate(x, theta) {
            Ok((dist, dx, dtheta)) if dist.is_finite() => {
                if dist < best.0 {
                    best = (dist, params.clone());
                }
                if it == cfg.iterations {
                    break;
                }
                let mut grad = dx;
                grad.extend(dtheta);
                if grad.iter().any(|g| !g.is_finite()) {
                    diverged = true;
                    break;
                }
                adam.step(&mut params, &grad, cfg);
            }
            _ => {
                diverged = true;
                break;
            }
        }
    }
    if diverged {
        log::warn!("attack restart {restart} diverged");
    }
    RestartResult {
        restart,
        gradient_distance: best.0,
        diverged,
        initial,
        reconstruction: best.1[..d].to_vec(),
    }
}

/// Optimizes a dummy input (and label, unless it can be inferred) so its
/// gradient matches the visible coordinates. Sees only the clear view.
pub fn dlg_reconstruct(
    m: &ModelState,
    observed: &VisibleGradient,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let (o, vis) = observation(m, observed)?;
    let label = match cfg.loss {
        LossKind::CrossEntropy => label_infer(observed, m),
        LossKind::HalfSquaredError => None,
    };
    let mode = match (cfg.loss, label) {
        (_, Some(c)) => LabelMode::Known(c),
        (LossKind::CrossEntropy, None) => LabelMode::Soft,
        (LossKind::HalfSquaredError, None) => LabelMode::Free,
    };
    let obj = Objective {
        m,
        observed: &o,
        visible: &vis,
        loss: cfg.loss,
        mode,
    };
    let restarts: Vec<RestartResult> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(&obj, cfg, seed, r))
        .collect();
    let best = restarts
        .iter()
        .filter(|r| r.gradient_distance.is_finite())
        .min_by(|a, b| {
            a.gradient_distance
                .total_cmp(&b.gradient_distance)
                .then(a.restart.cmp(&b.restart))
        })
        .map(|r| r.restart)
        .ok_or_else(|| CoreError::numeric("attack", "every restart diverged"))?;
    Ok(Reconstruction { best, label, restarts })
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Success threshold: a tenth of the target image's variance.
pub fn success_threshold(target: &[f64]) -> f64 {
    0.1 * variance(target)
}

/// Compares a reconstruction with the ground truth; kept apart from the
/// attack itself, which never sees the target.
pub fn score(recon: &Reconstruction, target: &[f64]) -> ReconstructionReport {
    let per_restart: Vec<RestartScore> = recon
        .restarts
        .iter()
        .map(|r| RestartScore {
            restart: r.restart,
            gradient_distance: r.gradient_distance,
            input_mse: mse(&r.reconstruction, target),
            init_mse: mse(&r.initial, target),
            diverged: r.diverged,
        })
        .collect();
    let best = &per_restart[recon.best];
    let threshold = success_threshold(target);
    ReconstructionReport {
        final_gradient_distance: best.gradient_distance,
        input_mse: best.input_mse,
        init_mse: best.init_mse,
        psnr: psnr(best.input_mse),
        threshold,
        success: best.input_mse < threshold,
        inferred_label: recon.label,
        per_restart,
    }
}

/// Peak signal-to-noise ratio for pixels in `[0, 1]`.
pub fn psnr(mse: f64) -> f64 {
    if mse > 0.0 {
        -10.0 * mse.log10()
    } else {
        f64::INFINITY
    }
}

/// Writes a grayscale (P5) or colour (P6) netpbm image, clamping to `[0, 1]`.
pub fn write_pgm(path: &Path, pixels: &[f64], shape: InputShape) -> Result<()> {
    let InputShape {
        channels,
        height,
        width,
    } = shape;
    if pixels.len() != shape.len() || !(channels == 1 || channels == 3) {
        return Err(CoreError::Usage(format!(
            "cannot write a {channels}x{height}x{width} image"
        )));
    }
    let magic = if channels == 1 { "P5" } else { "P6" };
    let mut out = Vec::new();
    write!(out, "{magic}\n{width} {height}\n255\n").expect("writing to memory");
    let plane = height * width;
    for p in 0..plane {
        for c in 0..channels {
            out.push((pixels[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    write_atomic(path, &out)
}

/// Inputs of the attack sweep.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    /// Architecture, dataset and CKKS profile of the victim run.
    pub fl: FlConfig,
    /// One trial per seed; the same basket is used for every ratio.
    pub seeds: Vec<u64>,
    pub attack: AttackConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub trials: usize,
    pub mean_input_mse: f64,
    pub mean_init_mse: f64,
    pub mean_gradient_distance: f64,
    pub success_rate: f64,
    pub visible_coordinates: usize,
}

/// One victim trial: a freshly initialized global model and one training
/// example, sent through the protocol as a single-step, batch-of-one update.
pub struct Trial {
    pub global: ModelState,
    pub example: Example,
    pub visible: VisibleGradient,
}

pub fn victim_trial(fl: &FlConfig, keys: &KeyMaterial, ratio: f64, seed: u64) -> Result<Trial> {
    let mut cfg = fl.clone();
    cfg.seed = seed;
    cfg.encryption_ratio = ratio;
    cfg.single_step = true;
    cfg.batch_size = 1;
    cfg.clients = 1;
    let arch = cfg.architecture()?;
    let train = cfg.dataset.load(seed, cfg.train_size.max(1), 0, 0)?.train;
    let index = (sub_seed(seed, &[tag::ATTACK, 0xe]) % train.len() as u64) as usize;
    let shard = train.subset(&[index]);
    let global = build_model(arch, seed);
    let mask = select_top_r(&magnitude_map(global.flat(), 0)?, ratio)?;
    let update = client_update(&global, &shard, &cfg, &mask, keys, 1, 0)?;
    Ok(Trial {
        example: shard.examples[0].clone(),
        visible: update.visible(),
        global,
    })
}

/// Attack success and reconstruction error per encryption ratio.
pub fn attack_sweep(ratios: &[f64], spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if ratios.is_empty() {
        return Ok(Vec::new());
    }
    spec.attack.validate()?;
    let keys = KeyMaterial::generate(spec.fl.ckks_params()?, sub_seed(spec.fl.seed, &[tag::KEYS]))?;
    ratios
        .iter()
        .map(|&ratio| {
            let mut reports = Vec::with_capacity(spec.seeds.len());
            let mut visible = 0;
            for &seed in &spec.seeds {
                let trial = victim_trial(&spec.fl, &keys, ratio, seed)?;
                visible = trial.visible.entries.len();
                let recon = dlg_reconstruct(&trial.global, &trial.visible, &spec.attack, seed)?;
                reports.push(score(&recon, &trial.example.features));
            }
            let n = reports.len().max(1) as f64;
            let mean = |f: fn(&ReconstructionReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
            Ok(SweepRow {
                ratio,
                trials: reports.len(),
                mean_input_mse: mean(|r| r.input_mse),
                mean_init_mse: mean(|r| r.init_mse),
                mean_gradient_distance: mean(|r| r.final_gradient_distance),
                success_rate: reports.iter().filter(|r| r.success).count() as f64 / n,
                visible_coordinates: visible,
            })
        })
        .collect()
}
