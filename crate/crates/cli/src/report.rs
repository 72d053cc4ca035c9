use std::path::{Path, PathBuf};

use clap::Args;
use hefl_core::metrics::{emit_reports, RunRecords};
use hefl_core::protocol::{read_records, FlConfig, RECORDS_FILE};
use hefl_core::{CoreError, Result};

use crate::train::CONFIG_FILE;

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory for summary.json, rounds.csv, radar.csv and gap.csv
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Run directories (or sweep directories holding one run per ratio)
    #[arg(value_name = "RUN_DIR", required = true)]
    runs: Vec<PathBuf>,
}

fn is_run(dir: &Path) -> bool {
    dir.join(RECORDS_FILE).is_file() && dir.join(CONFIG_FILE).is_file()
}

/// Expands sweep directories into their run subdirectories, sorted by name.
fn expand(dir: &Path) -> Result<Vec<PathBuf>> {
    if is_run(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut runs = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CoreError::io(dir, e))?.path();
        if is_run(&p) {
            runs.push(p);
        }
    }
    runs.sort();
    if runs.is_empty() {
        return Err(CoreError::Usage(format!(
            "{} holds no {RECORDS_FILE} with a {CONFIG_FILE}",
            dir.display()
        )));
    }
    Ok(runs)
}

fn load_run(dir: &Path) -> Result<RunRecords> {
    let cfg = FlConfig::from_file(&dir.join(CONFIG_FILE), &Default::default())?;
    Ok(RunRecords {
        profile: cfg.arch.label().to_string(),
        ratio: cfg.encryption_ratio,
        records: read_records(&dir.join(RECORDS_FILE))?,
    })
}

pub fn run(a: ReportArgs) -> Result<()> {
    let mut runs = Vec::new();
    for d in &a.runs {
        for r in expand(d)? {
            runs.push(load_run(&r)?);
        }
    }
    let report = emit_reports(&a.out, &runs)?;
    println!(
        "{:<8} {:>6} {:>9} {:>8} {:>8} {:>8}",
        "profile", "r", "accuracy", "e_comp", "e_gen", "e_loss"
    );
    for r in &report.radar {
        println!(
            "{:<8} {:>6.2} {:>9.4} {:>8.4} {:>8.4} {:>8.4}",
            r.profile, r.r, r.accuracy, r.e_comp, r.e_gen, r.e_loss
        );
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
