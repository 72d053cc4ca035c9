use std::path::{Path, PathBuf};

use clap::Args;
use hefl_core::checkpoint::Checkpoint;
use hefl_core::protocol::{ratio_dir, Experiment, FlConfig, RECORDS_FILE};
use hefl_core::{CoreError, Result};

use crate::Overrides;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment configuration (JSON)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory for config.json, records.jsonl and checkpoints
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run of the same configuration
    #[arg(long, value_name = "CKPT", conflicts_with = "ratios")]
    resume: Option<PathBuf>,
    /// Run once per ratio, each under <out>/r<ratio>
    #[arg(long, value_name = "R,R,...", value_delimiter = ',')]
    ratios: Vec<f64>,
    #[command(flatten)]
    overrides: Overrides,
}

fn run_one(cfg: FlConfig, out: &Path, resume: Option<Checkpoint>) -> Result<()> {
    let dir = crate::require_dir(out)?;
    crate::write_file(&dir.join(CONFIG_FILE), &crate::pretty_json(&cfg))?;
    let exp = Experiment::new(cfg)?;
    let outcome = exp.run(Some(&dir), resume)?;
    match outcome.records.last() {
        Some(r) => println!(
            "r={:.2} round {}: train acc {:.4}, test acc {:.4}, loss {:.4} -> {}",
            r.ratio,
            r.round,
            r.train_accuracy,
            r.test_accuracy,
            r.avg_train_loss,
            dir.join(RECORDS_FILE).display()
        ),
        None => println!("nothing to do: checkpoint is already at the final round"),
    }
    Ok(())
}

pub fn run(a: TrainArgs) -> Result<()> {
    let loaded = crate::config::load(&a.config, &a.overrides)?;
    if a.ratios.is_empty() {
        let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
        return run_one(loaded.fl, &a.out, resume);
    }
    if let Some(bad) = a.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(CoreError::Usage(format!("ratio {bad} outside [0, 1]")));
    }
    for &r in &a.ratios {
        let mut cfg = loaded.fl.clone();
        cfg.encryption_ratio = r;
        run_one(cfg, &a.out.join(ratio_dir(r)), None)?;
    }
    Ok(())
}
