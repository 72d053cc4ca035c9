use std::collections::HashSet;

use hefl_core::data::{evaluate, partition_iid, partition_indices, Dataset, Example, ToyVision, TOY_NOISE};
use hefl_core::model::{
    backprop, build_model, forward_backward, sgd_step, ArchKind, Architecture, Dual, InputShape, LossKind, ModelState,
    OptimizerState, Target,
};
use hefl_core::protocol::{local_update, FlConfig, Scale};
use hefl_core::rng::stream;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn arch(kind: ArchKind) -> Architecture {
    Architecture::new(kind, InputShape::gray(8), 10).unwrap()
}

fn toy(n: usize, split: u64) -> Dataset {
    ToyVision::new(7, TOY_NOISE).sample(n, split)
}

fn batch_loss(a: &Architecture, params: &[f64], batch: &[Example]) -> f64 {
    let items: Vec<(&[f64], Target<'_, f64>)> = batch
        .iter()
        .map(|e| (e.features.as_slice(), Target::Class(e.label)))
        .collect();
    backprop(a, params, &items, LossKind::CrossEntropy, false).unwrap().loss
}

/// Central differences on 20 random coordinates of every layer.
fn finite_difference_check(kind: ArchKind) {
    let a = arch(kind);
    let m = build_model(a, 11);
    let data = toy(3, 1);
    let refs: Vec<&Example> = data.examples.iter().collect();
    let (_, g) = forward_backward(&m, &refs).unwrap();
    let h = 1e-5;
    let mut rng = stream(99, &[kind as u64]);
    for layer in m.layers() {
        for _ in 0..20 {
            let i = layer.offset + rng.gen_range(0..layer.len);
            let mut p = m.flat().to_vec();
            p[i] += h;
            let up = batch_loss(&a, &p, &data.examples);
            p[i] -= 2.0 * h;
            let down = batch_loss(&a, &p, &data.examples);
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.values[i];
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / scale < 1e-4,
                "{} [{i}]: analytic {analytic:e} vs numeric {numeric:e}",
                layer.name
            );
        }
    }
}

#[test]
fn gradient_matches_finite_differences_linear() {
    finite_difference_check(ArchKind::Linear);
}

#[test]
fn gradient_matches_finite_differences_mlp2() {
    finite_difference_check(ArchKind::Mlp2);
}

#[test]
fn gradient_matches_finite_differences_conv() {
    finite_difference_check(ArchKind::ConvS);
}

#[test]
fn dual_tangent_is_directional_derivative() {
    for kind in [ArchKind::Linear, ArchKind::Mlp2, ArchKind::ConvS] {
        let a = arch(kind);
        let m = build_model(a, 5);
        let data = toy(2, 1);
        let refs: Vec<&Example> = data.examples.iter().collect();
        let (_, g) = forward_backward(&m, &refs).unwrap();
        let mut rng = stream(3, &[]);
        let dir: Vec<f64> = (0..m.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params: Vec<Dual> = m.flat().iter().zip(&dir).map(|(&w, &d)| Dual::new(w, d)).collect();
        let xs: Vec<Vec<Dual>> = data
            .examples
            .iter()
            .map(|e| e.features.iter().map(|&v| Dual::new(v, 0.0)).collect())
            .collect();
        let items: Vec<(&[Dual], Target<'_, Dual>)> = xs
            .iter()
            .zip(&data.examples)
            .map(|(x, e)| (x.as_slice(), Target::Class(e.label)))
            .collect();
        let d = backprop(&a, &params, &items, LossKind::CrossEntropy, false).unwrap();
        let expected: f64 = g.values.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!(
            (d.loss.tangent - expected).abs() <= 1e-10 * expected.abs().max(1.0),
            "{kind:?}: {} vs {expected}",
            d.loss.tangent
        );
    }
}

fn train_steps(m: &mut ModelState, data: &[Example], steps: usize, lr: f64) {
    let refs: Vec<&Example> = data.iter().collect();
    let mut opt = OptimizerState::new(m.len(), lr, 0.9, 0.0, 1_000_000, 1.0).unwrap();
    for _ in 0..steps {
        let (_, g) = forward_backward(m, &refs).unwrap();
        sgd_step(m, &g, &mut opt).unwrap();
    }
}

#[test]
fn two_hundred_steps_halve_the_loss() {
    let data = toy(40, 1);
    let mut m = build_model(arch(ArchKind::Mlp2), 2);
    let refs: Vec<&Example> = data.examples.iter().collect();
    let before = forward_backward(&m, &refs).unwrap().0;
    train_steps(&mut m, &data.examples, 200, 0.1);
    let after = forward_backward(&m, &refs).unwrap().0;
    assert!(after <= 0.5 * before, "loss {before} -> {after}");
}

#[test]
fn local_training_is_bit_reproducible() {
    let mut cfg = FlConfig::defaults(Scale::Desk);
    cfg.local_epochs = 1;
    let m = build_model(arch(ArchKind::Mlp2), 4);
    let shard = toy(50, 1);
    let (a, la) = local_update(&m, &shard, &cfg, 1, 0).unwrap();
    let (b, lb) = local_update(&m, &shard, &cfg, 1, 0).unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());
    assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    let (c, _) = local_update(&m, &shard, &cfg, 1, 1).unwrap();
    assert_ne!(a.values, c.values, "client streams should differ");
}

#[test]
fn untrained_model_is_at_chance() {
    let test = toy(1000, 2);
    for seed in 0..3 {
        let (acc, loss) = evaluate(&build_model(arch(ArchKind::Mlp2), seed), &test).unwrap();
        assert!((acc - 0.1).abs() <= 0.05, "seed {seed}: accuracy {acc}");
        assert!(loss.is_finite() && loss > 0.0);
    }
}

#[test]
fn memorizes_four_examples() {
    let data = toy(4, 1);
    let mut m = build_model(arch(ArchKind::Mlp2), 8);
    train_steps(&mut m, &data.examples, 300, 0.5);
    assert_eq!(evaluate(&m, &data).unwrap().0, 1.0);
}

#[test]
fn shuffled_labels_stay_near_chance() {
    let mut train = toy(200, 1);
    let mut labels: Vec<usize> = train.examples.iter().map(|e| e.label).collect();
    labels.shuffle(&mut stream(21, &[]));
    for (e, l) in train.examples.iter_mut().zip(labels) {
        e.label = l;
    }
    let mut m = build_model(arch(ArchKind::Mlp2), 1);
    let refs: Vec<&Example> = train.examples.iter().collect();
    let mut opt = OptimizerState::new(m.len(), 0.1, 0.9, 0.0, 1_000_000, 1.0).unwrap();
    for epoch in 0..10 {
        let mut order: Vec<usize> = (0..refs.len()).collect();
        order.shuffle(&mut stream(22, &[epoch]));
        for chunk in order.chunks(16) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| refs[i]).collect();
            let (_, g) = forward_backward(&m, &batch).unwrap();
            sgd_step(&mut m, &g, &mut opt).unwrap();
        }
    }
    let (acc, _) = evaluate(&m, &toy(1000, 2)).unwrap();
    assert!((acc - 0.1).abs() <= 0.06, "accuracy {acc}");
}

#[test]
fn sixty_examples_split_twenty_each() {
    let shards = partition_iid(&toy(60, 1), 3, 0).unwrap();
    assert_eq!(shards.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![20, 20, 20]);
}

#[test]
fn single_client_gets_a_permutation() {
    let data = toy(30, 1);
    let shards = partition_iid(&data, 1, 4).unwrap();
    assert_eq!(shards.len(), 1);
    let mut a: Vec<Vec<u64>> = data
        .examples
        .iter()
        .map(|e| e.features.iter().map(|v| v.to_bits()).collect())
        .collect();
    let mut b: Vec<Vec<u64>> = shards[0]
        .examples
        .iter()
        .map(|e| e.features.iter().map(|v| v.to_bits()).collect())
        .collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn more_clients_than_examples_is_rejected() {
    assert!(partition_indices(2, 3, 0).is_err());
    assert!(partition_indices(5, 0, 0).is_err());
}

/// Pearson statistic of each shard's class histogram against the global
/// proportions. 16.92 is the 5% critical value at 9 degrees of freedom.
#[test]
fn shard_histograms_match_the_global_one() {
    let data = toy(600, 1);
    let global = data.histogram();
    for shard in partition_iid(&data, 3, 0).unwrap() {
        let n = shard.len() as f64;
        let chi2: f64 = shard
            .histogram()
            .iter()
            .zip(&global)
            .map(|(&o, &g)| {
                let e = n * g as f64 / data.len() as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        assert!(chi2 < 16.92, "chi-square {chi2}");
    }
}

proptest! {
    #[test]
    fn partition_is_disjoint_and_covering(len in 1usize..200, k in 1usize..12, seed in any::<u64>()) {
        prop_assume!(k <= len);
        let parts = partition_indices(len, k, seed).unwrap();
        prop_assert_eq!(parts.len(), k);
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut seen = HashSet::new();
        for i in parts.iter().flatten() {
            prop_assert!(seen.insert(*i), "index {} twice", i);
        }
        prop_assert_eq!(seen.len(), len);
        prop_assert!(seen.iter().all(|&i| i < len));
    }
}
