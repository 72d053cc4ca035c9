//! Per-parameter sensitivity scores and top-r selection.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Example;
use crate::error::{CoreError, Result};
use crate::model::{forward_backward_with, LossKind, ModelState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SensitivityMethod {
    #[default]
    Magnitude,
    Jacobian,
}

impl SensitivityMethod {
    pub fn label(self) -> &'static str {
        match self {
            SensitivityMethod::Magnitude => "magnitude",
            SensitivityMethod::Jacobian => "jacobian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(SensitivityMethod::Magnitude),
            "jacobian" => Ok(SensitivityMethod::Jacobian),
            other => Err(CoreError::Config(format!(
                "unknown sensitivity method `{other}` (magnitude | jacobian)"
            ))),
        }
    }
}

impl fmt::Display for SensitivityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMap {
    pub scores: Vec<f64>,
    pub method: SensitivityMethod,
    pub source_round: usize,
}

/// `scores[i] = |values[i]|`; works on gradients or weights alike.
pub fn magnitude_map(values: &[f64], source_round: usize) -> Result<SensitivityMap> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(CoreError::numeric(
            "sensitivity",
            format!("non-finite input at index {i}"),
        ));
    }
    Ok(SensitivityMap {
        scores: values.iter().map(|v| v.abs()).collect(),
        method: SensitivityMethod::Magnitude,
        source_round,
    })
}

/// Mean over batches of the squared loss gradient, a diagonal Fisher proxy
/// for the curvature of each parameter.
pub fn jacobian_map(m: &ModelState, batches: &[&[Example]], source_round: usize) -> Result<SensitivityMap> {
    jacobian_map_with(m, batches, LossKind::CrossEntropy, source_round)
}

/// As [`jacobian_map`] under an explicit loss.
pub fn jacobian_map_with(
    m: &ModelState,
    batches: &[&[Example]],
    loss: LossKind,
    source_round: usize,
) -> Result<SensitivityMap> {
    if batches.is_empty() {
        return Err(CoreError::Usage("jacobian sensitivity needs at least one batch".into()));
    }
    let mut scores = vec![0.0; m.len()];
    for batch in batches {
        let refs: Vec<&Example> = batch.iter().collect();
        let (_, g) = forward_backward_with(m, &refs, loss)?;
        for (s, gi) in scores.iter_mut().zip(&g.values) {
            *s += gi * gi;
        }
    }
    let k = batches.len() as f64;
    scores.iter_mut().for_each(|s| *s /= k);
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CoreError::numeric("sensitivity", "non-finite jacobian score"));
    }
    Ok(SensitivityMap {
        scores,
        method: SensitivityMethod::Jacobian,
        source_round,
    })
}

/// Sorted, de-duplicated set of parameter indices to encrypt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub encrypted_indices: Vec<usize>,
    pub ratio: f64,
    pub parameter_count: usize,
}

impl SelectionMask {
    pub fn new(mut encrypted_indices: Vec<usize>, ratio: f64, parameter_count: usize) -> Result<Self> {
        encrypted_indices.sort_unstable();
        encrypted_indices.dedup();
        if encrypted_indices.last().is_some_and(|&i| i >= parameter_count) {
            return Err(CoreError::Usage("mask index out of bounds".into()));
        }
        Ok(Self {
            encrypted_indices,
            ratio,
            parameter_count,
        })
    }

    pub fn len(&self) -> usize {
        self.encrypted_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encrypted_indices.is_empty()
    }

    /// Membership flags for every parameter.
    pub fn flags(&self) -> Vec<bool> {
        let mut f = vec![false; self.parameter_count];
        for &i in &self.encrypted_indices {
            f[i] = true;
        }
        f
    }

    /// Indices left in the clear, ascending.
    pub fn complement(&self) -> Vec<usize> {
        let f = self.flags();
        (0..self.parameter_count).filter(|&i| !f[i]).collect()
    }

    /// SHA-256 over the parameter count and the index list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.parameter_count as u64).to_le_bytes());
        for &i in &self.encrypted_indices {
            h.update((i as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mask serializes")
    }
}

/// `round(r * n)` with halves rounded up, clamped to `[0, n]`.
pub fn selection_size(r: f64, n: usize) -> usize {
    ((r * n as f64 + 0.5).floor().max(0.0) as usize).min(n)
}

/// Indices of the `round(r * n)` largest scores; equal scores prefer the
/// lower index.
pub fn select_top_r(s: &SensitivityMap, r: f64) -> Result<SelectionMask> {
    if !(0.0..=1.0).contains(&r) {
        return Err(CoreError::Config(format!("encryption ratio {r} outside [0, 1]")));
    }
    let n = s.scores.len();
    let k = selection_size(r, n);
    let mut order: Vec<usize> = (0..n).collect();
    let by_score = |a: &usize, b: &usize| s.scores[*b].total_cmp(&s.scores[*a]).then(a.cmp(b));
    if k < n {
        order.select_nth_unstable_by(k, by_score);
    }
    order.truncate(k);
    SelectionMask::new(order, r, n)
}
