use hefl_core::metrics::{
    bounds, comp_efficiency, emit_reports, gen_efficiency, loss_efficiency, read_radar, summarize, ExperimentSummary,
    RatioSummary, RunRecords,
};
use hefl_core::protocol::{RoundRecord, WallTimes};
use hefl_core::ErrorClass;
use proptest::prelude::*;

fn record(round: usize, ratio: f64, train: f64, test: f64, loss: f64, ms: f64) -> RoundRecord {
    RoundRecord {
        round,
        ratio,
        train_accuracy: train,
        test_accuracy: test,
        avg_train_loss: loss,
        test_loss: loss + 0.1,
        encrypted_count: (ratio * 100.0) as usize,
        plaintext_count: 100 - (ratio * 100.0) as usize,
        mask_fingerprint: "00".into(),
        wall_times: WallTimes {
            train: ms,
            encrypt: ms * ratio,
            aggregate_he: ms * ratio * 0.5,
            aggregate_plain: 1.0,
            decrypt: ms * ratio * 0.25,
        },
    }
}

fn sweep() -> Vec<RunRecords> {
    [0.0, 0.1, 0.5, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &r)| RunRecords {
            profile: "mlp2".into(),
            ratio: r,
            records: (1..=3)
                .map(|t| {
                    record(
                        t,
                        r,
                        0.6 + 0.1 * t as f64,
                        0.55 + 0.1 * t as f64 - 0.01 * i as f64,
                        2.0 / t as f64 + r,
                        1000.0,
                    )
                })
                .collect(),
        })
        .collect()
}

fn summary(rows: &[(f64, f64, f64, f64)]) -> ExperimentSummary {
    ExperimentSummary {
        profile: "p".into(),
        ratios: rows
            .iter()
            .enumerate()
            .map(|(i, &(train, test, loss, hours))| RatioSummary {
                ratio: i as f64 / 10.0,
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

fn rows_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..10.0, 0.0f64..100.0), 1..8)
}

proptest! {
    #[test]
    fn normalized_metrics_stay_in_unit_interval(rows in rows_strategy()) {
        let s = summary(&rows);
        let b = bounds(std::slice::from_ref(&s)).unwrap();
        for rs in &s.ratios {
            for m in [
                comp_efficiency(&s, &b, rs.ratio).unwrap(),
                gen_efficiency(&s, &b, rs.ratio).unwrap(),
                loss_efficiency(&s, &b, rs.ratio).unwrap(),
            ] {
                prop_assert!((0.0..=1.0).contains(&m.value), "{:?}", m);
            }
        }
    }

    #[test]
    fn time_efficiency_ignores_shift_and_scale(rows in rows_strategy(), shift in -50.0f64..50.0, c in 0.01f64..100.0) {
        let s = summary(&rows);
        let moved = summary(&rows.iter().map(|&(a, b, l, t)| (a, b, l, c * t + shift)).collect::<Vec<_>>());
        let (b0, b1) = (bounds(std::slice::from_ref(&s)).unwrap(), bounds(std::slice::from_ref(&moved)).unwrap());
        for rs in &s.ratios {
            let e0 = comp_efficiency(&s, &b0, rs.ratio).unwrap();
            let e1 = comp_efficiency(&moved, &b1, rs.ratio).unwrap();
            prop_assert_eq!(e0.degenerate, e1.degenerate);
            prop_assert!((e0.value - e1.value).abs() < 1e-9, "{} vs {}", e0.value, e1.value);
        }
    }
}

#[test]
fn gap_is_unclamped() {
    let s = summary(&[(0.70, 0.75, 1.0, 1.0)]);
    assert_eq!(s.ratios[0].generalization_gap(), 0.70 - 0.75);
    assert!(s.ratios[0].generalization_gap() < 0.0);
}

#[test]
fn four_ratios_give_four_radar_rows() {
    let dir = tempfile::tempdir().unwrap();
    let report = emit_reports(dir.path(), &sweep()).unwrap();
    assert_eq!(report.radar.len(), 4);
    let text = std::fs::read_to_string(dir.path().join("radar.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("profile,r,accuracy,e_comp,e_gen,e_loss"));
    assert_eq!(lines.clone().count(), 4);
    assert!(lines.all(|l| l.split(',').count() == 6));
    for name in ["summary.json", "rounds.csv", "radar.csv", "gap.csv"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let rounds = std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 1 + 12);
}

#[test]
fn radar_csv_reparses_to_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let report = emit_reports(dir.path(), &sweep()).unwrap();
    let back = read_radar(&dir.path().join("radar.csv")).unwrap();
    assert_eq!(back.len(), report.radar.len());
    let round6 = |x: f64| format!("{x:.6}").parse::<f64>().unwrap();
    for (a, b) in back.iter().zip(&report.radar) {
        assert_eq!(a.profile, b.profile);
        for (x, y) in [
            (a.r, b.r),
            (a.accuracy, b.accuracy),
            (a.e_comp, b.e_comp),
            (a.e_gen, b.e_gen),
            (a.e_loss, b.e_loss),
        ] {
            assert_eq!(x, round6(y));
        }
    }
    // the summary reflects the final round and the mean loss
    let s = &summarize(&sweep()).unwrap()[0];
    let first = &s.ratios[0];
    assert_eq!(first.test_accuracy, sweep()[0].records[2].test_accuracy);
    assert!((first.avg_loss - (2.0 + 1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
    assert_eq!(first.rounds, 3);
}

#[test]
fn reports_are_byte_identical_across_calls() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_reports(a.path(), &sweep()).unwrap();
    emit_reports(b.path(), &sweep()).unwrap();
    for name in ["summary.json", "rounds.csv", "radar.csv", "gap.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn empty_input_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    for runs in [
        vec![],
        vec![RunRecords {
            profile: "mlp2".into(),
            ratio: 0.0,
            records: vec![],
        }],
    ] {
        let err = emit_reports(&out, &runs).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Usage);
        assert!(!out.exists());
    }
}

#[test]
fn single_ratio_is_degenerate_but_reported() {
    let dir = tempfile::tempdir().unwrap();
    let report = emit_reports(dir.path(), &sweep()[..1]).unwrap();
    assert_eq!(report.radar[0].e_comp, 1.0);
    assert_eq!(report.warnings.len(), 3);
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["warnings"].as_array().unwrap().len(), 3);
}
