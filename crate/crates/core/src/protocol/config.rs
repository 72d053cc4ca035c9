use std::path::Path;

use hefl_ckks::{CkksParams, SecurityProfile};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::data::DatasetSource;
use crate::error::{CoreError, Result};
use crate::model::{ArchKind, Architecture};
use crate::sensitivity::SensitivityMethod;

/// Preset that fills in the size-related defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 50 rounds, batch 16, 10 local epochs.
    #[default]
    Paper,
    /// 10 rounds, batch 8, 2 local epochs.
    Desk,
}

/// Which client's update to write out for an offline attack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureSpec {
    pub round: usize,
    pub client: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlConfig {
    pub scale: Scale,
    pub clients: usize,
    pub rounds: usize,
    pub encryption_ratio: f64,
    pub sensitivity_method: SensitivityMethod,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub ckks_profile: String,
    pub seed: u64,
    pub dataset: DatasetSource,
    pub arch: ArchKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_step_size: usize,
    pub lr_gamma: f64,
    /// Server step on the averaged pseudo-gradient; 1.0 is model averaging.
    pub server_lr: f64,
    /// Encrypted values are clipped to `[-clip, clip]` before encoding.
    pub clip: f64,
    /// Clients send one minibatch gradient instead of a multi-epoch delta.
    pub single_step: bool,
    pub capture: Option<CaptureSpec>,
    /// Write a checkpoint every this many rounds (0 disables).
    pub checkpoint_every: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Held-out examples for the jacobian sensitivity estimate.
    pub calibration_size: usize,
}

impl FlConfig {
    pub fn defaults(scale: Scale) -> Self {
        let (rounds, batch_size, local_epochs) = match scale {
            Scale::Paper => (50, 16, 10),
            Scale::Desk => (10, 8, 2),
        };
        Self {
            scale,
            clients: 3,
            rounds,
            encryption_ratio: 0.5,
            sensitivity_method: SensitivityMethod::Magnitude,
            local_epochs,
            batch_size,
            ckks_profile: SecurityProfile::Paper128.label().into(),
            seed: 0,
            dataset: DatasetSource::default(),
            arch: ArchKind::Mlp2,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 4e-4,
            lr_step_size: 10,
            lr_gamma: 0.1,
            server_lr: 1.0,
            clip: 8.0,
            single_step: false,
            capture: None,
            checkpoint_every: 0,
            train_size: 600,
            test_size: 200,
            calibration_size: 64,
        }
    }

    /// Built-in defaults, overlaid by `file`, overlaid by `overrides`.
    pub fn resolve(file: Option<&Map<String, Value>>, overrides: &Map<String, Value>) -> Result<Self> {
        let scale_value = overrides
            .get("scale")
            .or_else(|| file.and_then(|f| f.get("scale")))
            .cloned()
            .unwrap_or(Value::String("paper".into()));
        let scale: Scale = serde_json::from_value(scale_value).map_err(|e| CoreError::Config(format!("scale: {e}")))?;
        let Value::Object(mut merged) = serde_json::to_value(Self::defaults(scale)).expect("config serializes") else {
            unreachable!("config is a JSON object")
        };
        for layer in file.into_iter().chain(std::iter::once(overrides)) {
            for (k, v) in layer {
                if !merged.contains_key(k) {
                    return Err(CoreError::Config(format!("unknown configuration key `{k}`")));
                }
                merged.insert(k.clone(), v.clone());
            }
        }
        let cfg: Self = serde_json::from_value(Value::Object(merged)).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &Map<String, Value>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
        let Value::Object(map) = value else {
            return Err(CoreError::Config(format!("{}: expected a JSON object", path.display())));
        };
        Self::resolve(Some(&map), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(m));
        if self.clients == 0 {
            return fail("clients must be at least 1".into());
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.encryption_ratio) {
            return fail(format!("encryption_ratio {} outside [0, 1]", self.encryption_ratio));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.clip > 0.0) {
            return fail(format!("clip must be positive, got {}", self.clip));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return fail(format!("server_lr must be positive, got {}", self.server_lr));
        }
        if self.train_size < self.clients {
            return fail(format!(
                "{} training examples for {} clients",
                self.train_size, self.clients
            ));
        }
        if let Some(c) = self.capture {
            if c.client >= self.clients || c.round == 0 || c.round > self.rounds {
                return fail(format!(
                    "capture target round {} client {} does not exist",
                    c.round, c.client
                ));
            }
        }
        self.ckks_params()?;
        self.dataset.kind()?;
        crate::model::OptimizerState::new(
            1,
            self.lr,
            self.momentum,
            self.weight_decay,
            self.lr_step_size,
            self.lr_gamma,
        )?;
        Ok(())
    }

    pub fn ckks_params(&self) -> Result<CkksParams> {
        SecurityProfile::from_label(&self.ckks_profile)
            .and_then(CkksParams::from_profile)
            .ok_or_else(|| {
                CoreError::Config(format!(
                    "unknown ckks profile `{}` (paper-128 | test-small)",
                    self.ckks_profile
                ))
            })
    }

    /// Step size of the global update: `server_lr` on pseudo-gradients,
    /// `server_lr * lr` on single-step gradients.
    pub fn global_step(&self) -> f64 {
        if self.single_step {
            self.server_lr * self.lr
        } else {
            self.server_lr
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let (shape, classes) = self.dataset.shape()?;
        Architecture::new(self.arch, shape, classes)
    }

    /// Hash of everything that determines a round's outcome; rounds,
    /// checkpoint cadence and capture target are excluded so a run can be
    /// resumed with a longer horizon.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            for k in ["rounds", "checkpoint_every", "capture"] {
                m.remove(k);
            }
        }
        let bytes = serde_json::to_vec(&v).expect("value serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Default for FlConfig {
    fn default() -> Self {
        Self::defaults(Scale::Paper)
    }
}
