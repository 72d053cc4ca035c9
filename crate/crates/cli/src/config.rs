use std::path::Path;

use hefl_core::attack::AttackConfig;
use hefl_core::protocol::FlConfig;
use hefl_core::{CoreError, Result};
use serde_json::{Map, Value};

use crate::Overrides;

/// An experiment file: the federated run plus an optional `attack` section.
pub struct Loaded {
    pub fl: FlConfig,
    pub attack: AttackConfig,
}

fn override_map(o: &Overrides) -> Result<Map<String, Value>> {
    let mut m = Map::new();
    if let Some(s) = o.seed {
        m.insert("seed".into(), s.into());
    }
    if let Some(r) = o.encryption_ratio {
        m.insert("encryption_ratio".into(), r.into());
    }
    if let Some(s) = &o.sensitivity_method {
        m.insert("sensitivity_method".into(), s.clone().into());
    }
    if let Some(p) = &o.ckks_profile {
        m.insert("ckks_profile".into(), p.clone().into());
    }
    if o.single_step {
        m.insert("single_step".into(), true.into());
    }
    for kv in &o.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CoreError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        m.insert(k.trim().to_string(), value);
    }
    Ok(m)
}

pub fn load(path: &Path, o: &Overrides) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
    let Value::Object(mut file) = value else {
        return Err(CoreError::Config(format!("{}: expected a JSON object", path.display())));
    };
    let attack = match file.remove("attack") {
        Some(v) => serde_json::from_value(v).map_err(|e| CoreError::Config(format!("attack section: {e}")))?,
        None => AttackConfig::default(),
    };
    attack.validate()?;
    let fl = FlConfig::resolve(Some(&file), &override_map(o)?)?;
    Ok(Loaded { fl, attack })
}
