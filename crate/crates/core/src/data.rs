//! Datasets: the bundled toy-vision generator, an optional CIFAR-10 reader,
//! IID partitioning and evaluation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{forward, InputShape, ModelState};
use crate::rng::{stream, tag};

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

/// A labelled set of examples; client shards use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub classes: usize,
    pub shape: InputShape,
}

pub type DatasetShard = Dataset;

impl Dataset {
    pub fn new(examples: Vec<Example>, classes: usize, shape: InputShape) -> Result<Self> {
        for (i, e) in examples.iter().enumerate() {
            if e.label >= classes {
                return Err(CoreError::Format(format!(
                    "example {i} has label {} of {classes}",
                    e.label
                )));
            }
            if e.features.len() != shape.len() {
                return Err(CoreError::Format(format!(
                    "example {i} has {} features, expected {}",
                    e.features.len(),
                    shape.len()
                )));
            }
        }
        Ok(Self {
            examples,
            classes,
            shape,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            classes: self.classes,
            shape: self.shape,
        }
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for e in &self.examples {
            h[e.label] += 1;
        }
        h
    }
}

/// Where training data comes from: `"toy-vision"` or `"cifar10:<dir>"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetSource(pub String);

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource("toy-vision".into())
    }
}

/// The three disjoint splits an experiment uses.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    /// Held-out batches for the second-order sensitivity estimate.
    pub calibration: Dataset,
}

pub enum DatasetKind {
    ToyVision,
    Cifar10(PathBuf),
}

impl DatasetSource {
    pub fn kind(&self) -> Result<DatasetKind> {
        let name = &self.0;
        if name == "toy-vision" || name == "toy" {
            Ok(DatasetKind::ToyVision)
        } else if let Some(dir) = name.strip_prefix("cifar10:") {
            Ok(DatasetKind::Cifar10(PathBuf::from(dir)))
        } else {
            Err(CoreError::Config(format!(
                "unknown dataset `{name}` (toy-vision | cifar10:<dir>)"
            )))
        }
    }

    pub fn shape(&self) -> Result<(InputShape, usize)> {
        Ok(match self.kind()? {
            DatasetKind::ToyVision => (InputShape::gray(TOY_SIDE), TOY_CLASSES),
            DatasetKind::Cifar10(_) => (
                InputShape {
                    channels: 3,
                    height: 32,
                    width: 32,
                },
                10,
            ),
        })
    }

    pub fn load(&self, seed: u64, train: usize, test: usize, calibration: usize) -> Result<Splits> {
        match self.kind()? {
            DatasetKind::ToyVision => {
                let gen = ToyVision::new(seed, TOY_NOISE);
                Ok(Splits {
                    train: gen.sample(train, 1),
                    test: gen.sample(test, 2),
                    calibration: gen.sample(calibration, 3),
                })
            }
            DatasetKind::Cifar10(dir) => {
                let mut all = Vec::new();
                for i in 1..=5 {
                    let p = dir.join(format!("data_batch_{i}.bin"));
                    if p.exists() {
                        all.extend(read_cifar10(&p)?.examples);
                    }
                }
                let test_set = read_cifar10(&dir.join("test_batch.bin"))?;
                if all.len() < train + calibration {
                    return Err(CoreError::Config(format!(
                        "{} training records under {}, need {}",
                        all.len(),
                        dir.display(),
                        train + calibration
                    )));
                }
                let shape = test_set.shape;
                let cal = all.split_off(train).into_iter().take(calibration).collect();
                Ok(Splits {
                    train: Dataset::new(all, 10, shape)?,
                    test: Dataset::new(test_set.examples.into_iter().take(test).collect(), 10, shape)?,
                    calibration: Dataset::new(cal, 10, shape)?,
                })
            }
        }
    }
}

pub const TOY_SIDE: usize = 8;
pub const TOY_CLASSES: usize = 10;
pub const TOY_NOISE: f64 = 0.25;

/// Synthetic 8x8 grayscale classes: a fixed random template per class plus
/// Gaussian pixel noise, clipped to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct ToyVision {
    seed: u64,
    noise: f64,
    templates: Vec<Vec<f64>>,
}

impl ToyVision {
    pub fn new(seed: u64, noise: f64) -> Self {
        let templates = (0..TOY_CLASSES)
            .map(|c| {
                let mut rng = stream(seed, &[tag::DATA, 0, c as u64]);
                // coarse 4x4 blocks upsampled to 8x8 keep the classes visually distinct
                let coarse: Vec<f64> = (0..16).map(|_| if rng.gen_bool(0.5) { 0.85 } else { 0.15 }).collect();
                (0..TOY_SIDE * TOY_SIDE)
                    .map(|p| coarse[(p / TOY_SIDE / 2) * 4 + (p % TOY_SIDE) / 2])
                    .collect()
            })
            .collect();
        Self { seed, noise, templates }
    }

    pub fn template(&self, class: usize) -> &[f64] {
        &self.templates[class]
    }

    /// `n` class-balanced examples from split stream `split`.
    pub fn sample(&self, n: usize, split: u64) -> Dataset {
        let mut rng = stream(self.seed, &[tag::DATA, split]);
        let examples = (0..n)
            .map(|i| {
                let label = i % TOY_CLASSES;
                let features = self.templates[label]
                    .iter()
                    .map(|&t| (t + self.noise * standard_normal(&mut rng)).clamp(0.0, 1.0))
                    .collect();
                Example { features, label }
            })
            .collect();
        Dataset {
            examples,
            classes: TOY_CLASSES,
            shape: InputShape::gray(TOY_SIDE),
        }
    }
}

pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

const CIFAR_RECORD: usize = 3073;

/// Reads one CIFAR-10 binary batch (label byte + 3072 channel-major pixels).
pub fn read_cifar10(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(CoreError::Format(format!(
            "{}: {} bytes is not a whole number of {CIFAR_RECORD}-byte records",
            path.display(),
            bytes.len()
        )));
    }
    let examples = bytes
        .chunks_exact(CIFAR_RECORD)
        .map(|r| Example {
            label: r[0] as usize,
            features: r[1..].iter().map(|&p| p as f64 / 255.0).collect(),
        })
        .collect();
    Dataset::new(
        examples,
        10,
        InputShape {
            channels: 3,
            height: 32,
            width: 32,
        },
    )
}

/// Random, disjoint, near-equal index sets (sizes differ by at most one).
pub fn partition_indices(len: usize, n_clients: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_clients == 0 {
        return Err(CoreError::Config("need at least one client".into()));
    }
    if n_clients > len {
        return Err(CoreError::Config(format!("{n_clients} clients for {len} examples")));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut stream(seed, &[tag::PARTITION]));
    let (base, extra) = (len / n_clients, len % n_clients);
    let mut out = Vec::with_capacity(n_clients);
    let mut start = 0;
    for c in 0..n_clients {
        let size = base + usize::from(c < extra);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

/// IID client shards; see [`partition_indices`].
pub fn partition_iid(dataset: &Dataset, n_clients: usize, seed: u64) -> Result<Vec<DatasetShard>> {
    Ok(partition_indices(dataset.len(), n_clients, seed)?
        .into_iter()
        .map(|idx| dataset.subset(&idx))
        .collect())
}

/// Accuracy and mean cross-entropy of `m` on `dataset`.
pub fn evaluate(m: &ModelState, dataset: &Dataset) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for e in &dataset.examples {
        let z = forward(m.arch(), m.flat(), &e.features)?;
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[e.label];
        // first maximal logit wins ties
        let pred = z
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > z[best] { i } else { best });
        correct += usize::from(pred == e.label);
    }
    let n = dataset.len() as f64;
    Ok((correct as f64 / n, loss / n))
}
