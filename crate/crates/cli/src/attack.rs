use std::path::{Path, PathBuf};

use clap::Args;
use hefl_core::attack::{attack_sweep, dlg_reconstruct, score, write_pgm, ReconstructionReport, SweepRow, SweepSpec};
use hefl_core::checkpoint::Checkpoint;
use hefl_core::protocol::CapturedUpdate;
use hefl_core::{CoreError, Result};
use serde::Serialize;

use crate::Overrides;

#[derive(Args, Debug)]
pub struct AttackArgs {
    /// Experiment configuration (JSON); its optional `attack` section sets the optimizer
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Captured update (capture.json written by `train`)
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "ratios",
        conflicts_with = "ratios"
    )]
    update: Option<PathBuf>,
    /// Instead of replaying a capture, sweep these encryption ratios on fresh victims
    #[arg(long, value_name = "R,R,...", value_delimiter = ',')]
    ratios: Vec<f64>,
    /// Number of victim seeds per ratio in a sweep
    #[arg(long, value_name = "N", default_value_t = 5)]
    seeds: u64,
    /// Report file (JSON); images and CSV are written next to it
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Serialize)]
struct RestartSummary {
    restart: usize,
    gradient_distance: f64,
    diverged: bool,
}

#[derive(Serialize)]
struct AttackReport {
    round: usize,
    client: usize,
    ratio: f64,
    visible_coordinates: usize,
    encrypted_count: usize,
    inferred_label: Option<usize>,
    best_restart: usize,
    final_gradient_distance: f64,
    restarts: Vec<RestartSummary>,
    /// Training-set index of the example the reconstruction is scored against.
    truth_index: Option<usize>,
    /// How many examples the captured update was computed from.
    truth_candidates: usize,
    score: Option<ReconstructionReport>,
    images: Vec<String>,
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

pub fn run(a: AttackArgs) -> Result<()> {
    let loaded = crate::config::load(&a.config, &a.overrides)?;
    match &a.update {
        Some(update) => replay(&a, update, loaded),
        None => sweep(&a, loaded),
    }
}

fn replay(a: &AttackArgs, update: &Path, loaded: crate::config::Loaded) -> Result<()> {
    let (cap, model) = CapturedUpdate::load(update)?;
    if !cap.single_step || cap.batch_size != 1 {
        log::warn!(
            "capture is not a single-step, single-example update; reconstruction targets one image and will likely fail"
        );
    }
    let fl = &loaded.fl;
    let recon = dlg_reconstruct(&model, &cap.visible, &loaded.attack, fl.seed)?;
    let best = recon.best();
    let shape = model.arch().input;
    let mut images = Vec::new();
    let mut dump = |suffix: &str, pixels: &[f64]| -> Result<()> {
        let p = sibling(&a.out, suffix);
        write_pgm(&p, pixels, shape)?;
        images.push(p.display().to_string());
        Ok(())
    };
    dump("-reconstruction.pgm", &best.reconstruction)?;
    dump("-init.pgm", &best.initial)?;

    // Scoring needs the run's data, so only when the config matches the capture.
    let base = update.parent().unwrap_or(Path::new("."));
    let digest = Checkpoint::load(&base.join(&cap.global_checkpoint))?.config_digest;
    let (mut truth_index, mut truth_candidates, mut scored) = (None, 0, None);
    if digest != fl.digest() {
        log::warn!("configuration differs from the captured run; skipping ground-truth scoring");
    } else {
        let truth = cap.load_truth(update)?;
        let train = fl
            .dataset
            .load(fl.seed, fl.train_size, fl.test_size, fl.calibration_size)?
            .train;
        truth_candidates = truth.example_indices.len();
        let best_match = truth
            .example_indices
            .iter()
            .map(|&i| {
                let e = train
                    .examples
                    .get(i)
                    .ok_or_else(|| CoreError::Format(format!("truth index {i} outside the training set")))?;
                Ok((i, score(&recon, &e.features)))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .min_by(|x, y| x.1.input_mse.total_cmp(&y.1.input_mse));
        if let Some((i, s)) = best_match {
            dump("-truth.pgm", &train.examples[i].features)?;
            truth_index = Some(i);
            scored = Some(s);
        }
    }

    let report = AttackReport {
        round: cap.round,
        client: cap.client,
        ratio: cap.ratio,
        visible_coordinates: cap.visible.entries.len(),
        encrypted_count: cap.encrypted_count,
        inferred_label: recon.label,
        best_restart: recon.best,
        final_gradient_distance: best.gradient_distance,
        restarts: recon
            .restarts
            .iter()
            .map(|r| RestartSummary {
                restart: r.restart,
                gradient_distance: r.gradient_distance,
                diverged: r.diverged,
            })
            .collect(),
        truth_index,
        truth_candidates,
        score: scored,
        images,
    };
    crate::write_file(&a.out, &crate::pretty_json(&report))?;
    match &report.score {
        Some(s) => println!(
            "r={:.2}: gradient distance {:.3e}, input mse {:.5} (init {:.5}, threshold {:.5}), success {}",
            cap.ratio, s.final_gradient_distance, s.input_mse, s.init_mse, s.threshold, s.success
        ),
        None => println!(
            "r={:.2}: gradient distance {:.3e} (unscored)",
            cap.ratio, report.final_gradient_distance
        ),
    }
    Ok(())
}

fn sweep(a: &AttackArgs, loaded: crate::config::Loaded) -> Result<()> {
    if let Some(bad) = a.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(CoreError::Usage(format!("ratio {bad} outside [0, 1]")));
    }
    if a.seeds == 0 {
        return Err(CoreError::Usage("--seeds must be at least 1".into()));
    }
    let base = loaded.fl.seed;
    let spec = SweepSpec {
        seeds: (0..a.seeds).map(|i| base.wrapping_add(i)).collect(),
        fl: loaded.fl,
        attack: loaded.attack,
    };
    let rows: Vec<SweepRow> = attack_sweep(&a.ratios, &spec)?;
    crate::write_file(&a.out, &crate::pretty_json(&rows))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CoreError::Format(format!("csv: {e}"));
    w.write_record([
        "r",
        "trials",
        "visible_coordinates",
        "mean_input_mse",
        "mean_init_mse",
        "mean_gradient_distance",
        "success_rate",
    ])
    .map_err(csv_err)?;
    println!(
        "{:>6} {:>8} {:>12} {:>12} {:>10}",
        "r", "visible", "input_mse", "init_mse", "success"
    );
    for r in &rows {
        w.write_record([
            format!("{:.6}", r.ratio),
            r.trials.to_string(),
            r.visible_coordinates.to_string(),
            format!("{:.6}", r.mean_input_mse),
            format!("{:.6}", r.mean_init_mse),
            format!("{:.6e}", r.mean_gradient_distance),
            format!("{:.6}", r.success_rate),
        ])
        .map_err(csv_err)?;
        println!(
            "{:>6.2} {:>8} {:>12.6} {:>12.6} {:>10.2}",
            r.ratio, r.visible_coordinates, r.mean_input_mse, r.mean_init_mse, r.success_rate
        );
    }
    let bytes = w.into_inner().map_err(|e| CoreError::Format(format!("csv: {e}")))?;
    crate::write_file(&a.out.with_extension("csv"), &bytes)
}
