//! Small sigmoid classifiers with hand-written backpropagation.
//!
//! The forward and backward passes are generic over [`Real`], so the same
//! code yields ordinary gradients (`f64`) and directional derivatives of
//! gradients ([`Dual`](super::scalar::Dual)), which the gradient-matching
//! attack needs.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::{sigmoid, Real};
use crate::error::{CoreError, Result};
use crate::rng::{stream, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    /// One dense layer, no activation.
    Linear,
    /// Dense 64 -> sigmoid -> dense 32 -> sigmoid -> dense classes.
    Mlp2,
    /// 5x5 same-padded conv (4 maps) -> sigmoid -> 2x2 average pool -> dense.
    ConvS,
}

impl ArchKind {
    pub fn label(self) -> &'static str {
        match self {
            ArchKind::Linear => "linear",
            ArchKind::Mlp2 => "mlp2",
            ArchKind::ConvS => "conv-s",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ArchKind::Linear),
            "mlp2" | "mlp-2" => Ok(ArchKind::Mlp2),
            "conv-s" | "convs" | "conv_s" => Ok(ArchKind::ConvS),
            other => Err(CoreError::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn gray(side: usize) -> Self {
        Self {
            channels: 1,
            height: side,
            width: side,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ArchKind,
    pub input: InputShape,
    pub classes: usize,
}

const MLP_HIDDEN: (usize, usize) = (64, 32);
const CONV_MAPS: usize = 4;
const CONV_KERNEL: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Dense {
        name: &'static str,
        weight: usize,
        bias: usize,
        inputs: usize,
        outputs: usize,
    },
    Conv {
        name: &'static str,
        weight: usize,
        bias: usize,
        in_ch: usize,
        out_ch: usize,
        height: usize,
        width: usize,
    },
    Sigmoid {
        name: &'static str,
    },
    AvgPool2 {
        name: &'static str,
        ch: usize,
        height: usize,
        width: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Dense { name, .. } | Op::Conv { name, .. } | Op::Sigmoid { name } | Op::AvgPool2 { name, .. } => name,
        }
    }
}

struct Plan {
    ops: Vec<Op>,
    layers: Vec<LayerInfo>,
    /// fan-in per layer entry, for initialization
    fan_in: Vec<usize>,
}

struct PlanBuilder {
    plan: Plan,
    offset: usize,
}

impl PlanBuilder {
    fn param(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let len = shape.iter().product();
        let offset = self.offset;
        self.plan.layers.push(LayerInfo {
            name,
            shape,
            offset,
            len,
        });
        self.plan.fan_in.push(fan_in);
        self.offset += len;
        offset
    }

    fn dense(&mut self, name: &'static str, inputs: usize, outputs: usize) {
        let weight = self.param(format!("{name}.weight"), vec![outputs, inputs], inputs);
        let bias = self.param(format!("{name}.bias"), vec![outputs], inputs);
        self.plan.ops.push(Op::Dense {
            name,
            weight,
            bias,
            inputs,
            outputs,
        });
    }
}

impl Architecture {
    pub fn new(kind: ArchKind, input: InputShape, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(CoreError::Config(format!("need at least 2 classes, got {classes}")));
        }
        if input.is_empty() {
            return Err(CoreError::Config("empty input shape".into()));
        }
        if kind == ArchKind::ConvS && (input.height % 2 != 0 || input.width % 2 != 0) {
            return Err(CoreError::Config(format!(
                "conv-s needs even spatial dims, got {}x{}",
                input.height, input.width
            )));
        }
        Ok(Self { kind, input, classes })
    }

    fn plan(&self) -> Plan {
        let mut b = PlanBuilder {
            plan: Plan {
                ops: Vec::new(),
                layers: Vec::new(),
                fan_in: Vec::new(),
            },
            offset: 0,
        };
        let d = self.input.len();
        match self.kind {
            ArchKind::Linear => b.dense("fc", d, self.classes),
            ArchKind::Mlp2 => {
                let (h1, h2) = MLP_HIDDEN;
                b.dense("fc1", d, h1);
                b.plan.ops.push(Op::Sigmoid { name: "act1" });
                b.dense("fc2", h1, h2);
                b.plan.ops.push(Op::Sigmoid { name: "act2" });
                b.dense("fc3", h2, self.classes);
            }
            ArchKind::ConvS => {
                let InputShape {
                    channels,
                    height,
                    width,
                } = self.input;
                let fan_in = channels * CONV_KERNEL * CONV_KERNEL;
                let weight = b.param(
                    "conv.weight".into(),
                    vec![CONV_MAPS, channels, CONV_KERNEL, CONV_KERNEL],
                    fan_in,
                );
                let bias = b.param("conv.bias".into(), vec![CONV_MAPS], fan_in);
                b.plan.ops.push(Op::Conv {
                    name: "conv",
                    weight,
                    bias,
                    in_ch: channels,
                    out_ch: CONV_MAPS,
                    height,
                    width,
                });
                b.plan.ops.push(Op::Sigmoid { name: "act" });
                b.plan.ops.push(Op::AvgPool2 {
                    name: "pool",
                    ch: CONV_MAPS,
                    height,
                    width,
                });
                b.dense("fc", CONV_MAPS * (height / 2) * (width / 2), self.classes);
            }
        }
        b.plan
    }

    pub fn layers(&self) -> Vec<LayerInfo> {
        self.plan().layers
    }

    pub fn parameter_count(&self) -> usize {
        self.plan().layers.iter().map(|l| l.len).sum()
    }

    /// Layout entry of the final dense layer's weight matrix.
    pub fn output_weight(&self) -> LayerInfo {
        let layers = self.layers();
        layers[layers.len() - 2].clone()
    }

    /// Layout entry of the final dense layer's bias.
    pub fn output_bias(&self) -> LayerInfo {
        self.layers()
            .last()
            .cloned()
            .expect("every architecture has parameters")
    }
}

/// Parameters of a model: named tensors laid out contiguously in one flat
/// vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    arch: Architecture,
    layers: Vec<LayerInfo>,
    flat: Vec<f64>,
}

impl ModelState {
    pub fn from_flat(arch: Architecture, flat: Vec<f64>) -> Result<Self> {
        let layers = arch.layers();
        let expect: usize = layers.iter().map(|l| l.len).sum();
        if flat.len() != expect {
            return Err(CoreError::Format(format!(
                "{} parameters for an architecture with {expect}",
                flat.len()
            )));
        }
        Ok(Self { arch, layers, flat })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .map(|l| &self.flat[l.offset..l.offset + l.len])
    }
}

/// Deterministic initialization, uniform in `±1/sqrt(fan_in)`.
pub fn build_model(arch: Architecture, seed: u64) -> ModelState {
    let plan = arch.plan();
    let mut rng = stream(seed, &[tag::INIT]);
    let mut flat = Vec::with_capacity(plan.layers.iter().map(|l| l.len).sum());
    for (layer, &fan_in) in plan.layers.iter().zip(&plan.fan_in) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        flat.extend((0..layer.len).map(|_| rng.gen_range(-bound..bound)));
    }
    ModelState {
        arch,
        layers: plan.layers,
        flat,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Softmax cross-entropy.
    CrossEntropy,
    /// `0.5 * ||logits - target||^2`.
    HalfSquaredError,
}

/// Training target for one example.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a, T> {
    Class(usize),
    /// A probability vector (cross-entropy) or a regression target (squared
    /// error).
    Dense(&'a [T]),
}

pub struct Gradients<T> {
    /// Mean loss over the batch.
    pub loss: T,
    /// Gradient of the mean loss with respect to the parameters.
    pub params: Vec<T>,
    /// Per-example gradient with respect to the inputs, when requested.
    pub inputs: Vec<Vec<T>>,
    /// Per-example gradient with respect to dense targets, when requested.
    pub targets: Vec<Vec<T>>,
}

fn check_finite<T: Real>(values: &[T], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::numeric(layer, "non-finite activation"))
    }
}

fn forward_op<T: Real>(op: &Op, params: &[T], x: &[T]) -> Vec<T> {
    match *op {
        Op::Dense {
            weight,
            bias,
            inputs,
            outputs,
            ..
        } => (0..outputs)
            .map(|o| {
                let row = &params[weight + o * inputs..weight + (o + 1) * inputs];
                let mut acc = params[bias + o];
                for (&w, &xi) in row.iter().zip(x) {
                    acc += w * xi;
                }
                acc
            })
            .collect(),
        Op::Conv {
            weight,
            bias,
            in_ch,
            out_ch,
            height,
            width,
            ..
        } => {
            let pad = (CONV_KERNEL / 2) as isize;
            let mut out = Vec::with_capacity(out_ch * height * width);
            for o in 0..out_ch {
                for y in 0..height {
                    for xx in 0..width {
                        let mut acc = params[bias + o];
                        for c in 0..in_ch {
                            for ky in 0..CONV_KERNEL {
                                let iy = y as isize + ky as isize - pad;
                                if iy < 0 || iy >= height as isize {
                                    continue;
                                }
                                for kx in 0..CONV_KERNEL {
                                    let ix = xx as isize + kx as isize - pad;
                                    if ix < 0 || ix >= width as isize {
                                        continue;
                                    }
                                    let w = params[weight + ((o * in_ch + c) * CONV_KERNEL + ky) * CONV_KERNEL + kx];
                                    acc += w * x[(c * height + iy as usize) * width + ix as usize];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
            out
        }
        Op::Sigmoid { .. } => x.iter().map(|&v| sigmoid(v)).collect(),
        Op::AvgPool2 { ch, height, width, .. } => {
            let quarter = T::from_f64(0.25);
            let (h2, w2) = (height / 2, width / 2);
            let mut out = Vec::with_capacity(ch * h2 * w2);
            for c in 0..ch {
                for i in 0..h2 {
                    for j in 0..w2 {
                        let at = |a: usize, b: usize| x[(c * height + 2 * i + a) * width + 2 * j + b];
                        out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * quarter);
                    }
                }
            }
            out
        }
    }
}

/// Backpropagates `dout` through `op`, accumulating parameter gradients
/// (scaled by `weight_scale`) and returning the gradient for the op's input.
fn backward_op<T: Real>(
    op: &Op,
    params: &[T],
    x: &[T],
    y: &[T],
    dout: &[T],
    grad: &mut [T],
    need_input: bool,
) -> Vec<T> {
    match *op {
        Op::Dense {
            weight,
            bias,
            inputs,
            outputs,
            ..
        } => {
            let mut dx = if need_input {
                vec![T::zero(); inputs]
            } else {
                Vec::new()
            };
            for o in 0..outputs {
                let d = dout[o];
                grad[bias + o] += d;
                let row = weight + o * inputs;
                for i in 0..inputs {
                    grad[row + i] += d * x[i];
                }
                if need_input {
                    for i in 0..inputs {
                        dx[i] += d * params[row + i];
                    }
                }
            }
            dx
        }
        Op::Conv {
            weight,
            bias,
            in_ch,
            out_ch,
            height,
            width,
            ..
        } => {
            let pad = (CONV_KERNEL / 2) as isize;
            let mut dx = if need_input {
                vec![T::zero(); in_ch * height * width]
            } else {
                Vec::new()
            };
            for o in 0..out_ch {
                for yy in 0..height {
                    for xx in 0..width {
                        let d = dout[(o * height + yy) * width + xx];
                        grad[bias + o] += d;
                        for c in 0..in_ch {
                            for ky in 0..CONV_KERNEL {
                                let iy = yy as isize + ky as isize - pad;
                                if iy < 0 || iy >= height as isize {
                                    continue;
                                }
                                for kx in 0..CONV_KERNEL {
                                    let ix = xx as isize + kx as isize - pad;
                                    if ix < 0 || ix >= width as isize {
                                        continue;
                                    }
                                    let wi = weight + ((o * in_ch + c) * CONV_KERNEL + ky) * CONV_KERNEL + kx;
                                    let xi = (c * height + iy as usize) * width + ix as usize;
                                    grad[wi] += d * x[xi];
                                    if need_input {
                                        dx[xi] += d * params[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dx
        }
        Op::Sigmoid { .. } => {
            let one = T::from_f64(1.0);
            y.iter().zip(dout).map(|(&s, &d)| d * s * (one - s)).collect()
        }
        Op::AvgPool2 { ch, height, width, .. } => {
            let quarter = T::from_f64(0.25);
            let (h2, w2) = (height / 2, width / 2);
            let mut dx = vec![T::zero(); ch * height * width];
            for c in 0..ch {
                for i in 0..h2 {
                    for j in 0..w2 {
                        let d = dout[(c * h2 + i) * w2 + j] * quarter;
                        for a in 0..2 {
                            for b in 0..2 {
                                dx[(c * height + 2 * i + a) * width + 2 * j + b] = d;
                            }
                        }
                    }
                }
            }
            dx
        }
    }
}

/// Logits for one input.
pub fn forward<T: Real>(arch: &Architecture, params: &[T], x: &[T]) -> Result<Vec<T>> {
    let plan = arch.plan();
    let mut act = x.to_vec();
    for op in &plan.ops {
        act = forward_op(op, params, &act);
        check_finite(&act, op.name())?;
    }
    Ok(act)
}

fn log_softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
    let shift = T::from_f64(max);
    let mut sum = T::zero();
    for &v in z {
        sum += (v - shift).exp();
    }
    let lse = shift + sum.ln();
    z.iter().map(|&v| v - lse).collect()
}

/// Loss, its gradient with respect to the logits, and (for dense targets)
/// its gradient with respect to the target vector.
fn loss_head<T: Real>(z: &[T], target: &Target<'_, T>, kind: LossKind) -> (T, Vec<T>, Vec<T>) {
    let k = z.len();
    let onehot;
    let t: &[T] = match target {
        Target::Class(c) => {
            onehot = (0..k)
                .map(|i| T::from_f64(if i == *c { 1.0 } else { 0.0 }))
                .collect::<Vec<_>>();
            &onehot
        }
        Target::Dense(t) => t,
    };
    match kind {
        LossKind::CrossEntropy => {
            let logp = log_softmax(z);
            let mut loss = T::zero();
            let mut mass = T::zero();
            for (&ti, &lp) in t.iter().zip(&logp) {
                loss += -(ti * lp);
                mass += ti;
            }
            let dz = logp.iter().zip(t).map(|(&lp, &ti)| lp.exp() * mass - ti).collect();
            let dt = logp.iter().map(|&lp| -lp).collect();
            (loss, dz, dt)
        }
        LossKind::HalfSquaredError => {
            let half = T::from_f64(0.5);
            let mut loss = T::zero();
            let mut dz = Vec::with_capacity(k);
            for (&zi, &ti) in z.iter().zip(t) {
                let r = zi - ti;
                loss += half * r * r;
                dz.push(r);
            }
            let dt = dz.iter().map(|&r| -r).collect();
            (loss, dz, dt)
        }
    }
}

/// Mean loss over `batch` and its gradients.
pub fn backprop<T: Real>(
    arch: &Architecture,
    params: &[T],
    batch: &[(&[T], Target<'_, T>)],
    kind: LossKind,
    want_inputs: bool,
) -> Result<Gradients<T>> {
    if batch.is_empty() {
        return Err(CoreError::Usage("empty batch".into()));
    }
    let plan = arch.plan();
    let scale = T::from_f64(1.0 / batch.len() as f64);
    let mut grad = vec![T::zero(); params.len()];
    let mut total = T::zero();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (x, target) in batch {
        if x.len() != arch.input.len() {
            return Err(CoreError::Usage(format!(
                "input of length {} for an architecture expecting {}",
                x.len(),
                arch.input.len()
            )));
        }
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(plan.ops.len() + 1);
        acts.push(x.to_vec());
        for op in &plan.ops {
            let next = forward_op(op, params, acts.last().expect("non-empty"));
            check_finite(&next, op.name())?;
            acts.push(next);
        }
        let (loss, dz, dt) = loss_head(acts.last().expect("non-empty"), target, kind);
        if !loss.is_finite() {
            return Err(CoreError::numeric("loss", "non-finite loss"));
        }
        total += loss * scale;
        let mut d: Vec<T> = dz.into_iter().map(|v| v * scale).collect();
        for (i, op) in plan.ops.iter().enumerate().rev() {
            let need = want_inputs || i > 0;
            d = backward_op(op, params, &acts[i], &acts[i + 1], &d, &mut grad, need);
        }
        if want_inputs {
            inputs.push(d);
            targets.push(dt.into_iter().map(|v| v * scale).collect());
        }
    }
    if let Some(layer) = plan
        .layers
        .iter()
        .find(|l| grad[l.offset..l.offset + l.len].iter().any(|g| !g.is_finite()))
    {
        return Err(CoreError::numeric(layer.name.clone(), "non-finite gradient"));
    }
    Ok(Gradients {
        loss: total,
        params: grad,
        inputs,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp() -> Architecture {
        Architecture::new(ArchKind::Mlp2, InputShape::gray(8), 10).unwrap()
    }

    #[test]
    fn mlp2_parameter_count() {
        let arch = mlp();
        assert_eq!(arch.parameter_count(), 64 * 64 + 64 + 64 * 32 + 32 + 32 * 10 + 10);
        assert_eq!(arch.parameter_count(), 6570);
        let layers = arch.layers();
        let mut end = 0;
        for l in &layers {
            assert_eq!(l.offset, end);
            end += l.len;
        }
        assert_eq!(end, 6570);
        assert_eq!(arch.output_weight().name, "fc3.weight");
    }

    #[test]
    fn conv_parameter_count() {
        let arch = Architecture::new(ArchKind::ConvS, InputShape::gray(8), 10).unwrap();
        assert_eq!(arch.parameter_count(), 4 * 25 + 4 + 64 * 10 + 10);
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(build_model(mlp(), 3), build_model(mlp(), 3));
        assert_ne!(build_model(mlp(), 3), build_model(mlp(), 4));
        let m = build_model(mlp(), 3);
        let bound = 1.0 / 8.0;
        assert!(m.layer("fc1.weight").unwrap().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn zero_input_gives_finite_logits() {
        let m = build_model(mlp(), 1);
        let z = forward(m.arch(), m.flat(), &[0.0; 64]).unwrap();
        assert_eq!(z.len(), 10);
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let arch = Architecture::new(ArchKind::Linear, InputShape::gray(2), 10).unwrap();
        let params = vec![0.0; arch.parameter_count()];
        let x = [0.3, -0.1, 0.7, 0.2];
        let g = backprop(
            &arch,
            &params,
            &[(&x[..], Target::Class(4))],
            LossKind::CrossEntropy,
            false,
        )
        .unwrap();
        assert!((g.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn linear_squared_error_matches_closed_form() {
        let arch = Architecture::new(ArchKind::Linear, InputShape::gray(2), 3).unwrap();
        let params: Vec<f64> = (0..15).map(|i| (i as f64 - 7.0) / 10.0).collect();
        let x = [0.5, -1.0, 2.0, 0.25];
        let y = [1.0, 0.0, -1.0];
        let g = backprop(
            &arch,
            &params,
            &[(&x[..], Target::Dense(&y))],
            LossKind::HalfSquaredError,
            false,
        )
        .unwrap();
        for o in 0..3 {
            let yhat: f64 = params[12 + o] + (0..4).map(|i| params[o * 4 + i] * x[i]).sum::<f64>();
            let r = yhat - y[o];
            for i in 0..4 {
                assert!((g.params[o * 4 + i] - r * x[i]).abs() < 1e-14);
            }
            assert!((g.params[12 + o] - r).abs() < 1e-14);
        }
    }

    #[test]
    fn nan_input_reports_layer() {
        let m = build_model(mlp(), 1);
        let mut x = [0.0; 64];
        x[3] = f64::NAN;
        match backprop(
            m.arch(),
            m.flat(),
            &[(&x[..], Target::Class(0))],
            LossKind::CrossEntropy,
            false,
        ) {
            Err(CoreError::Numeric { layer, .. }) => assert_eq!(layer, "fc1"),
            _ => panic!("expected numeric failure"),
        }
    }

    #[test]
    fn unknown_descriptor_is_rejected() {
        assert!(ArchKind::parse("resnet34").is_err());
        assert_eq!(ArchKind::parse("MLP-2").unwrap(), ArchKind::Mlp2);
    }
}
