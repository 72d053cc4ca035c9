//! Accuracy, normalized efficiency metrics and report files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{CoreError, Result};
use crate::protocol::{RoundRecord, WallTimes};

const MS_PER_HOUR: f64 = 3.6e6;
const RATIO_TOLERANCE: f64 = 1e-9;

/// Records of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecords {
    /// Model/profile label used as the radar series name.
    pub profile: String,
    pub ratio: f64,
    pub records: Vec<RoundRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub ratio: f64,
    pub rounds: usize,
    /// Final-round accuracies.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Mean over rounds of the clients' training loss.
    pub avg_loss: f64,
    pub total_hours: f64,
    pub stage_hours: WallTimes,
}

impl RatioSummary {
    pub fn generalization_gap(&self) -> f64 {
        self.train_accuracy - self.test_accuracy
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub profile: String,
    /// Sorted by ratio.
    pub ratios: Vec<RatioSummary>,
}

impl ExperimentSummary {
    pub fn get(&self, r: f64) -> Result<&RatioSummary> {
        self.ratios
            .iter()
            .find(|s| (s.ratio - r).abs() < RATIO_TOLERANCE)
            .ok_or_else(|| CoreError::Lookup(format!("no results for ratio {r} in profile `{}`", self.profile)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub t_min: f64,
    pub t_max: f64,
    pub gap_min: f64,
    pub gap_max: f64,
    pub loss_min: f64,
    pub loss_max: f64,
}

/// A normalized metric; `degenerate` flags equal bounds, where the value
/// is pinned to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub degenerate: bool,
}

pub fn summarize_run(records: &[RoundRecord]) -> Result<RatioSummary> {
    let last = records
        .iter()
        .max_by_key(|r| r.round)
        .ok_or_else(|| CoreError::Usage("empty record set".into()))?;
    let n = records.len() as f64;
    let mut stage = WallTimes::default();
    for r in records {
        let w = &r.wall_times;
        stage.train += w.train / MS_PER_HOUR;
        stage.encrypt += w.encrypt / MS_PER_HOUR;
        stage.aggregate_he += w.aggregate_he / MS_PER_HOUR;
        stage.aggregate_plain += w.aggregate_plain / MS_PER_HOUR;
        stage.decrypt += w.decrypt / MS_PER_HOUR;
    }
    Ok(RatioSummary {
        ratio: last.ratio,
        rounds: records.len(),
        train_accuracy: last.train_accuracy,
        test_accuracy: last.test_accuracy,
        avg_loss: records.iter().map(|r| r.avg_train_loss).sum::<f64>() / n,
        total_hours: stage.total(),
        stage_hours: stage,
    })
}

/// Groups runs by profile; profiles keep their first-seen order.
pub fn summarize(runs: &[RunRecords]) -> Result<Vec<ExperimentSummary>> {
    if runs.is_empty() || runs.iter().all(|r| r.records.is_empty()) {
        return Err(CoreError::Usage("empty record set".into()));
    }
    let mut out: Vec<ExperimentSummary> = Vec::new();
    for run in runs {
        let mut s = summarize_run(&run.records)?;
        s.ratio = run.ratio;
        let entry = match out.iter_mut().position(|e| e.profile == run.profile) {
            Some(i) => &mut out[i],
            None => {
                out.push(ExperimentSummary {
                    profile: run.profile.clone(),
                    ratios: Vec::new(),
                });
                out.last_mut().expect("just pushed")
            }
        };
        if entry.get(s.ratio).is_ok() {
            return Err(CoreError::Usage(format!(
                "ratio {} appears twice for profile `{}`",
                s.ratio, run.profile
            )));
        }
        entry.ratios.push(s);
    }
    for e in &mut out {
        e.ratios.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
    }
    Ok(out)
}

/// Min/max of time, gap and loss over every profile and ratio.
pub fn bounds(summaries: &[ExperimentSummary]) -> Result<NormalizationBounds> {
    let all: Vec<&RatioSummary> = summaries.iter().flat_map(|s| &s.ratios).collect();
    if all.is_empty() {
        return Err(CoreError::Usage("no summaries to normalize over".into()));
    }
    let span = |f: &dyn Fn(&RatioSummary) -> f64| {
        all.iter()
            .map(|s| f(s))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (t_min, t_max) = span(&|s| s.total_hours);
    let (gap_min, gap_max) = span(&|s| s.generalization_gap());
    let (loss_min, loss_max) = span(&|s| s.avg_loss);
    Ok(NormalizationBounds {
        t_min,
        t_max,
        gap_min,
        gap_max,
        loss_min,
        loss_max,
    })
}

/// `1 - (x - min) / (max - min)`, or 1 with the degenerate flag when the
/// bounds coincide.
pub fn normalized_inverse(x: f64, min: f64, max: f64) -> Metric {
    if max > min {
        Metric {
            value: 1.0 - (x - min) / (max - min),
            degenerate: false,
        }
    } else {
        Metric {
            value: 1.0,
            degenerate: true,
        }
    }
}

/// Test accuracy at ratio `r`.
pub fn accuracy_metric(summary: &ExperimentSummary, r: f64) -> Result<f64> {
    Ok(summary.get(r)?.test_accuracy)
}

pub fn comp_efficiency(summary: &ExperimentSummary, b: &NormalizationBounds, r: f64) -> Result<Metric> {
    Ok(normalized_inverse(summary.get(r)?.total_hours, b.t_min, b.t_max))
}

pub fn gen_efficiency(summary: &ExperimentSummary, b: &NormalizationBounds, r: f64) -> Result<Metric> {
    Ok(normalized_inverse(
        summary.get(r)?.generalization_gap(),
        b.gap_min,
        b.gap_max,
    ))
}

pub fn loss_efficiency(summary: &ExperimentSummary, b: &NormalizationBounds, r: f64) -> Result<Metric> {
    Ok(normalized_inverse(summary.get(r)?.avg_loss, b.loss_min, b.loss_max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarRow {
    pub profile: String,
    pub r: f64,
    pub accuracy: f64,
    pub e_comp: f64,
    pub e_gen: f64,
    pub e_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub profile: String,
    pub r: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SummaryEntry {
    #[serde(flatten)]
    summary: RatioSummary,
    generalization_gap: f64,
    accuracy: f64,
    e_comp: Metric,
    e_gen: Metric,
    e_loss: Metric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SummaryProfile {
    profile: String,
    ratios: Vec<SummaryEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SummaryFile {
    bounds: NormalizationBounds,
    warnings: Vec<String>,
    experiments: Vec<SummaryProfile>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub summaries: Vec<ExperimentSummary>,
    pub bounds: NormalizationBounds,
    pub radar: Vec<RadarRow>,
    pub gap: Vec<GapRow>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CoreError::Format(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CoreError::Format(format!("csv: {e}")))
}

/// Computes every metric and writes `summary.json`, `rounds.csv`,
/// `radar.csv` and `gap.csv` into `out`. Nothing is written on error.
pub fn emit_reports(out: &Path, runs: &[RunRecords]) -> Result<Report> {
    let summaries = summarize(runs)?;
    let b = bounds(&summaries)?;
    let mut radar = Vec::new();
    let mut gap = Vec::new();
    let mut warnings = Vec::new();
    let mut profiles = Vec::new();
    for s in &summaries {
        let mut entries = Vec::new();
        for rs in &s.ratios {
            let r = rs.ratio;
            let (ec, eg, el) = (
                comp_efficiency(s, &b, r)?,
                gen_efficiency(s, &b, r)?,
                loss_efficiency(s, &b, r)?,
            );
            for (name, m) in [("e_comp", ec), ("e_gen", eg), ("e_loss", el)] {
                if m.degenerate {
                    warnings.push(format!(
                        "{name} for `{}` at r={r}: degenerate bounds, set to 1",
                        s.profile
                    ));
                }
            }
            let accuracy = accuracy_metric(s, r)?;
            radar.push(RadarRow {
                profile: s.profile.clone(),
                r,
                accuracy,
                e_comp: ec.value,
                e_gen: eg.value,
                e_loss: el.value,
            });
            gap.push(GapRow {
                profile: s.profile.clone(),
                r,
                train_accuracy: rs.train_accuracy,
                test_accuracy: rs.test_accuracy,
                gap: rs.generalization_gap(),
            });
            entries.push(SummaryEntry {
                summary: rs.clone(),
                generalization_gap: rs.generalization_gap(),
                accuracy,
                e_comp: ec,
                e_gen: eg,
                e_loss: el,
            });
        }
        profiles.push(SummaryProfile {
            profile: s.profile.clone(),
            ratios: entries,
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let summary_json = serde_json::to_vec_pretty(&SummaryFile {
        bounds: b,
        warnings: warnings.clone(),
        experiments: profiles,
    })
    .expect("summary serializes");
    let rounds_csv = csv_bytes(
        &[
            "profile",
            "round",
            "r",
            "train_acc",
            "test_acc",
            "loss",
            "test_loss",
            "encrypted_count",
            "train_ms",
            "encrypt_ms",
            "aggregate_he_ms",
            "aggregate_plain_ms",
            "decrypt_ms",
        ],
        runs.iter().flat_map(|run| {
            run.records.iter().map(move |rec| {
                let w = &rec.wall_times;
                vec![
                    run.profile.clone(),
                    rec.round.to_string(),
                    f6(run.ratio),
                    f6(rec.train_accuracy),
                    f6(rec.test_accuracy),
                    f6(rec.avg_train_loss),
                    f6(rec.test_loss),
                    rec.encrypted_count.to_string(),
                    f6(w.train),
                    f6(w.encrypt),
                    f6(w.aggregate_he),
                    f6(w.aggregate_plain),
                    f6(w.decrypt),
                ]
            })
        }),
    )?;
    let radar_csv = csv_bytes(
        &["profile", "r", "accuracy", "e_comp", "e_gen", "e_loss"],
        radar.iter().map(|r| {
            vec![
                r.profile.clone(),
                f6(r.r),
                f6(r.accuracy),
                f6(r.e_comp),
                f6(r.e_gen),
                f6(r.e_loss),
            ]
        }),
    )?;
    let gap_csv = csv_bytes(
        &["profile", "r", "train_accuracy", "test_accuracy", "gap"],
        gap.iter().map(|g| {
            vec![
                g.profile.clone(),
                f6(g.r),
                f6(g.train_accuracy),
                f6(g.test_accuracy),
                f6(g.gap),
            ]
        }),
    )?;

    let files: Vec<(PathBuf, Vec<u8>)> = vec![
        (out.join("summary.json"), summary_json),
        (out.join("rounds.csv"), rounds_csv),
        (out.join("radar.csv"), radar_csv),
        (out.join("gap.csv"), gap_csv),
    ];
    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    Ok(Report {
        summaries,
        bounds: b,
        radar,
        gap,
        warnings,
        files: files.into_iter().map(|(p, _)| p).collect(),
    })
}

/// Reads `radar.csv` back.
pub fn read_radar(path: &Path) -> Result<Vec<RadarRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| CoreError::Format(format!("{}: {e}", path.display()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(rows: &[(f64, f64, f64, f64, f64)]) -> ExperimentSummary {
        ExperimentSummary {
            profile: "p".into(),
            ratios: rows
                .iter()
                .map(|&(ratio, train, test, loss, hours)| RatioSummary {
                    ratio,
                    rounds: 1,
                    train_accuracy: train,
                    test_accuracy: test,
                    avg_loss: loss,
                    total_hours: hours,
                    stage_hours: WallTimes::default(),
                })
                .collect(),
        }
    }

    #[test]
    fn boundary_and_midpoint() {
        let s = summary(&[
            (0.0, 0.9, 0.8, 1.0, 2.0),
            (0.5, 0.9, 0.7, 1.5, 3.0),
            (1.0, 0.9, 0.6, 2.0, 4.0),
        ]);
        let b = bounds(std::slice::from_ref(&s)).unwrap();
        for (r, expect) in [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)] {
            assert_eq!(comp_efficiency(&s, &b, r).unwrap().value, expect);
            assert_eq!(loss_efficiency(&s, &b, r).unwrap().value, expect);
        }
        // gaps 0.1, 0.2, 0.3 (up to float rounding in the subtraction)
        assert!((gen_efficiency(&s, &b, 0.5).unwrap().value - 0.5).abs() < 1e-12);
        assert_eq!(gen_efficiency(&s, &b, 0.0).unwrap().value, 1.0);
        assert_eq!(gen_efficiency(&s, &b, 1.0).unwrap().value, 0.0);
    }

    #[test]
    fn accuracy_is_pass_through() {
        let s = summary(&[(0.1, 0.9, 0.82, 1.0, 1.0)]);
        assert_eq!(accuracy_metric(&s, 0.1).unwrap(), 0.82);
        assert!(matches!(accuracy_metric(&s, 0.5), Err(CoreError::Lookup(_))));
    }

    #[test]
    fn degenerate_bounds_pin_to_one() {
        let m = normalized_inverse(3.0, 3.0, 3.0);
        assert_eq!(
            m,
            Metric {
                value: 1.0,
                degenerate: true
            }
        );
    }

    #[test]
    fn gap_may_be_negative() {
        let s = summary(&[(0.0, 0.7, 0.75, 1.0, 1.0)]);
        assert!((s.ratios[0].generalization_gap() + 0.05).abs() < 1e-15);
    }
}
