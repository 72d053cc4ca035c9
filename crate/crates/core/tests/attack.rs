use hefl_ckks::CkksParams;
use hefl_core::attack::{
    attack_sweep, dlg_reconstruct, gradient_distance, label_infer, mse, psnr, score, victim_trial, write_pgm,
    AttackConfig, Reconstruction, SweepSpec,
};
use hefl_core::data::{Example, ToyVision, TOY_NOISE};
use hefl_core::model::{
    build_model, forward_backward, forward_backward_with, ArchKind, Architecture, InputShape, LossKind, ModelState,
};
use hefl_core::protocol::{FlConfig, KeyMaterial, Scale, VisibleGradient};
use hefl_core::Result;

fn victim_config() -> FlConfig {
    let mut c = FlConfig::defaults(Scale::Desk);
    c.ckks_profile = "test-small".into();
    c.train_size = 50;
    c
}

fn keys() -> KeyMaterial {
    KeyMaterial::generate(CkksParams::test_small(), 1).unwrap()
}

fn hide(v: &VisibleGradient, range: std::ops::Range<usize>) -> VisibleGradient {
    VisibleGradient {
        parameter_count: v.parameter_count,
        entries: v.entries.iter().copied().filter(|(i, _)| !range.contains(i)).collect(),
    }
}

/// Zero weights give uniform `p = 0.1`, so row `c` of the output weight
/// gradient is `(0.1 - [c == 3]) x` and only row 3 is negative.
#[test]
fn label_is_read_off_the_output_rows() {
    let a = Architecture::new(ArchKind::Linear, InputShape::gray(2), 10).unwrap();
    let m = ModelState::from_flat(a, vec![0.0; a.parameter_count()]).unwrap();
    let x = [0.2, 0.9, 0.4, 0.7];
    let mut g = Vec::new();
    for c in 0..10 {
        let r = 0.1 - if c == 3 { 1.0 } else { 0.0 };
        g.extend(x.iter().map(|xi| r * xi));
    }
    g.extend((0..10).map(|c| 0.1 - if c == 3 { 1.0 } else { 0.0 }));
    assert_eq!(label_infer(&VisibleGradient::full(&g), &m), Some(3));

    // the same vector comes out of backprop
    let ex = Example {
        features: x.to_vec(),
        label: 3,
    };
    let (_, bp) = forward_backward(&m, &[&ex]).unwrap();
    for (a, b) in bp.values.iter().zip(&g) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn label_inference_on_a_trained_style_model() {
    let a = Architecture::new(ArchKind::Mlp2, InputShape::gray(8), 10).unwrap();
    let m = build_model(a, 3);
    for ex in ToyVision::new(2, TOY_NOISE).sample(10, 1).examples {
        let (_, g) = forward_backward(&m, &[&ex]).unwrap();
        assert_eq!(label_infer(&VisibleGradient::full(&g.values), &m), Some(ex.label));
    }
}

#[test]
fn hidden_output_layer_abstains() {
    let a = Architecture::new(ArchKind::Mlp2, InputShape::gray(8), 10).unwrap();
    let m = build_model(a, 3);
    let ex = &ToyVision::new(2, TOY_NOISE).sample(1, 1).examples[0];
    let (_, g) = forward_backward(&m, &[ex]).unwrap();
    let full = VisibleGradient::full(&g.values);
    let w = a.output_weight();
    // rows hidden but bias visible: the bias signs still give the label
    assert_eq!(
        label_infer(&hide(&full, w.offset..w.offset + w.len), &m),
        Some(ex.label)
    );
    assert_eq!(label_infer(&hide(&full, w.offset..m.len()), &m), None);
}

#[test]
fn true_input_has_zero_gradient_distance() {
    let a = Architecture::new(ArchKind::Mlp2, InputShape::gray(8), 10).unwrap();
    let m = build_model(a, 9);
    let ex = &ToyVision::new(4, TOY_NOISE).sample(3, 1).examples[2];
    let (_, g) = forward_backward(&m, &[ex]).unwrap();
    let d = gradient_distance(
        &m,
        &VisibleGradient::full(&g.values),
        &ex.features,
        ex.label,
        LossKind::CrossEntropy,
    )
    .unwrap();
    assert!(d < 1e-10, "distance {d:e}");
}

/// Under `0.5 ||Wx + b - y||^2` the weight gradient is `r x^T` and the bias
/// gradient `r`, so `x_i = dW[c, i] / db[c]` for any class with `db[c] != 0`.
#[test]
fn linear_squared_error_attack_finds_the_closed_form() {
    let a = Architecture::new(ArchKind::Linear, InputShape::gray(4), 3).unwrap();
    let m = build_model(a, 12);
    let ex = Example {
        features: (0..16).map(|i| ((i * 7) % 11) as f64 / 10.0).collect(),
        label: 2,
    };
    let (_, g) = forward_backward_with(&m, &[&ex], LossKind::HalfSquaredError).unwrap();
    let bias = a.output_bias();
    let c = (0..3)
        .max_by(|&p, &q| {
            g.values[bias.offset + p]
                .abs()
                .total_cmp(&g.values[bias.offset + q].abs())
        })
        .unwrap();
    let closed: Vec<f64> = (0..16)
        .map(|i| g.values[c * 16 + i] / g.values[bias.offset + c])
        .collect();
    assert!(mse(&closed, &ex.features) < 1e-20);

    let cfg = AttackConfig {
        loss: LossKind::HalfSquaredError,
        iterations: 2000,
        lr: 0.02,
        ..AttackConfig::default()
    };
    let recon = dlg_reconstruct(&m, &VisibleGradient::full(&g.values), &cfg, 5).unwrap();
    let err = mse(&recon.best().reconstruction, &closed);
    assert!(err < 1e-3, "mse to closed form {err:e}");
}

fn report_for(ratio: f64, seed: u64) -> (hefl_core::attack::ReconstructionReport, usize) {
    let trial = victim_trial(&victim_config(), &keys(), ratio, seed).unwrap();
    let recon = dlg_reconstruct(&trial.global, &trial.visible, &AttackConfig::default(), seed).unwrap();
    (score(&recon, &trial.example.features), trial.visible.entries.len())
}

#[test]
fn clear_update_leaks_the_image() {
    let (report, visible) = report_for(0.0, 0);
    assert_eq!(visible, 6570);
    let hits = report
        .per_restart
        .iter()
        .filter(|r| r.input_mse < report.threshold)
        .count();
    assert!(hits >= 3, "{hits} of 5 restarts succeeded: {:?}", report.per_restart);
    assert!(report.success);
    assert!(report.psnr.is_finite() && report.psnr > 0.0);
}

#[test]
fn encrypted_update_leaves_the_start_point() {
    let trial = victim_trial(&victim_config(), &keys(), 1.0, 3).unwrap();
    assert!(trial.visible.entries.is_empty());
    let recon = dlg_reconstruct(&trial.global, &trial.visible, &AttackConfig::default(), 3).unwrap();
    assert_eq!(recon.label, None);
    for r in &recon.restarts {
        assert_eq!(r.reconstruction, r.initial);
        assert_eq!(r.gradient_distance, 0.0);
    }
    assert_eq!(recon.best, 0, "ties go to the first restart");
    let report = score(&recon, &trial.example.features);
    assert!(!report.success);
    assert_eq!(report.input_mse, report.init_mse);
}

#[test]
fn reconstruction_is_deterministic_per_seed() {
    let trial = victim_trial(&victim_config(), &keys(), 0.5, 2).unwrap();
    let cfg = AttackConfig {
        iterations: 40,
        ..AttackConfig::default()
    };
    let a = dlg_reconstruct(&trial.global, &trial.visible, &cfg, 8).unwrap();
    let b = dlg_reconstruct(&trial.global, &trial.visible, &cfg, 8).unwrap();
    assert_eq!(a, b);
    let c = dlg_reconstruct(&trial.global, &trial.visible, &cfg, 9).unwrap();
    assert_ne!(a.restarts[0].initial, c.restarts[0].initial);
}

#[test]
fn sweep_endpoints() {
    let spec = SweepSpec {
        fl: victim_config(),
        seeds: vec![0, 1, 2],
        attack: AttackConfig::default(),
    };
    let rows = attack_sweep(&[0.0, 1.0], &spec).unwrap();
    assert_eq!(rows.iter().map(|r| r.ratio).collect::<Vec<_>>(), vec![0.0, 1.0]);
    assert!(rows.iter().all(|r| r.trials == 3));
    assert!(rows[0].success_rate >= 0.6, "{:?}", rows[0]);
    assert_eq!(rows[1].success_rate, 0.0);
    assert_eq!(rows[1].visible_coordinates, 0);
    assert_eq!(rows[1].mean_input_mse, rows[1].mean_init_mse);
    assert!(rows[0].mean_input_mse < rows[1].mean_input_mse);
}

#[test]
fn empty_sweep_is_empty() {
    let spec = SweepSpec {
        fl: victim_config(),
        seeds: vec![0],
        attack: AttackConfig::default(),
    };
    assert!(attack_sweep(&[], &spec).unwrap().is_empty());
}

#[test]
fn attack_only_takes_the_clear_view() {
    // the signature admits nothing but the visible coordinates
    let _: fn(&ModelState, &VisibleGradient, &AttackConfig, u64) -> Result<Reconstruction> = dlg_reconstruct;
    let v = serde_json::to_value(VisibleGradient::full(&[1.0])).unwrap();
    let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["entries", "parameter_count"]);
}

#[test]
fn bad_attack_config_is_rejected() {
    for cfg in [
        AttackConfig {
            iterations: 0,
            ..AttackConfig::default()
        },
        AttackConfig {
            restarts: 0,
            ..AttackConfig::default()
        },
        AttackConfig {
            beta1: 1.0,
            ..AttackConfig::default()
        },
    ] {
        assert!(cfg.validate().is_err());
    }
}

#[test]
fn pgm_dump() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.pgm");
    write_pgm(&p, &[0.0, 1.0, 0.5, 2.0], InputShape::gray(2)).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), b"P5\n2 2\n255\n\x00\xff\x80\xff");
    assert!(write_pgm(&p, &[0.0; 3], InputShape::gray(2)).is_err());
}

#[test]
fn psnr_values() {
    assert_eq!(psnr(0.01), 20.0);
    assert_eq!(psnr(0.0), f64::INFINITY);
}
