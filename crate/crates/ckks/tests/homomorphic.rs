use hefl_ckks::{CkksContext, CkksError, CkksParams};
use proptest::prelude::*;
use std::sync::OnceLock;

fn small() -> &'static (CkksContext, hefl_ckks::SecretKey, hefl_ckks::PublicKey) {
    static CELL: OnceLock<(CkksContext, hefl_ckks::SecretKey, hefl_ckks::PublicKey)> = OnceLock::new();
    CELL.get_or_init(|| {
        let ctx = CkksContext::new(CkksParams::test_small()).unwrap();
        let (sk, pk) = ctx.keygen(2024);
        (ctx, sk, pk)
    })
}

// Noise at the small profile (scale 2^30) measures ~2e-6 per add.
const SMALL_EPS: f64 = 1e-5;

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn additive_identity() {
    let (ctx, sk, pk) = small();
    let v: Vec<f64> = (0..512).map(|i| (i as f64 / 256.0) - 1.0).collect();
    let a = ctx.encrypt_values(&v, pk, 1).unwrap();
    let z = ctx.encrypt_values(&[], pk, 2).unwrap();
    let out = ctx.decrypt_values(&ctx.he_add(&a, &z).unwrap(), sk).unwrap();
    assert!(max_err(&out, &v) < SMALL_EPS);
}

#[test]
fn ascending_plus_descending_is_constant() {
    let (ctx, sk, pk) = small();
    let up: Vec<f64> = (1..=512).map(|i| i as f64 / 128.0).collect();
    let down: Vec<f64> = up.iter().rev().cloned().collect();
    let s = ctx
        .he_add(
            &ctx.encrypt_values(&up, pk, 3).unwrap(),
            &ctx.encrypt_values(&down, pk, 4).unwrap(),
        )
        .unwrap();
    let out = ctx.decrypt_values(&s, sk).unwrap();
    assert!(out.iter().all(|x| (x - 513.0 / 128.0).abs() < SMALL_EPS));
}

#[test]
fn scalar_identity_and_zero() {
    let (ctx, sk, pk) = small();
    let v: Vec<f64> = (0..512).map(|i| ((i * 7) % 13) as f64 / 6.5 - 1.0).collect();
    let ct = ctx.encrypt_values(&v, pk, 5).unwrap();
    let one = ctx.rescale(&ctx.he_mul_scalar(&ct, 1.0).unwrap()).unwrap();
    assert!(max_err(&ctx.decrypt_values(&one, sk).unwrap(), &v) < SMALL_EPS);
    let zero = ctx.rescale(&ctx.he_mul_scalar(&ct, 0.0).unwrap()).unwrap();
    assert!(ctx
        .decrypt_values(&zero, sk)
        .unwrap()
        .iter()
        .all(|x| x.abs() < SMALL_EPS));
}

#[test]
fn same_seed_same_ciphertext() {
    let (ctx, _, pk) = small();
    let a = ctx.encrypt_values(&[0.1, 0.2], pk, 77).unwrap();
    let b = ctx.encrypt_values(&[0.1, 0.2], pk, 77).unwrap();
    let c = ctx.encrypt_values(&[0.1, 0.2], pk, 78).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn depth_contract_on_three_prime_chain() {
    let (ctx, _, pk) = small();
    assert_eq!(ctx.params().level_count(), 3);
    let ct = ctx.encrypt_values(&[1.0], pk, 6).unwrap();
    let once = ctx.rescale(&ctx.he_mul_scalar(&ct, 0.5).unwrap()).unwrap();
    assert!(matches!(
        ctx.he_mul_scalar(&once, 0.5),
        Err(CkksError::DepthExhausted { .. })
    ));
    assert!(matches!(ctx.rescale(&once), Err(CkksError::DepthExhausted { .. })));
}

#[test]
fn paper_parameters_roundtrip_and_average() {
    let ctx = CkksContext::new(CkksParams::paper_128()).unwrap();
    let (sk, pk) = ctx.keygen(7);
    let v: Vec<f64> = (0..4096)
        .map(|i| ((i * 2654435761u64 as usize) % 2001) as f64 / 1000.0 - 1.0)
        .collect();
    let pt = ctx.encode(&v).unwrap();
    assert!(max_err(&ctx.decode(&pt).unwrap(), &v) < 1e-9);

    let cts: Vec<_> = (0..3).map(|s| ctx.encrypt_values(&v, &pk, 100 + s).unwrap()).collect();
    let fresh = ctx.decrypt_values(&cts[0], &sk).unwrap();
    assert!(max_err(&fresh, &v) < 1e-6);

    let mut acc = cts[0].clone();
    for c in &cts[1..] {
        ctx.he_add_assign(&mut acc, c).unwrap();
    }
    let three_v: Vec<f64> = v.iter().map(|x| 3.0 * x).collect();
    assert!(max_err(&ctx.decrypt_values(&acc, &sk).unwrap(), &three_v) < 1e-6);

    let avg = ctx.rescale(&ctx.he_mul_scalar(&acc, 1.0 / 3.0).unwrap()).unwrap();
    assert_eq!(avg.level(), 0);
    assert!(max_err(&ctx.decrypt_values(&avg, &sk).unwrap(), &v) < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn addition_is_approximately_homomorphic(
        v in proptest::collection::vec(-1.0f64..1.0, 512),
        w in proptest::collection::vec(-1.0f64..1.0, 512),
        seed in any::<u32>(),
    ) {
        let (ctx, sk, pk) = small();
        let a = ctx.encrypt_values(&v, pk, seed as u64).unwrap();
        let b = ctx.encrypt_values(&w, pk, seed as u64 + 1).unwrap();
        let out = ctx.decrypt_values(&ctx.he_add(&a, &b).unwrap(), sk).unwrap();
        let expect: Vec<f64> = v.iter().zip(&w).map(|(x, y)| x + y).collect();
        prop_assert!(max_err(&out, &expect) < SMALL_EPS);
    }

    #[test]
    fn scalar_multiply_then_rescale(
        v in proptest::collection::vec(-1.0f64..1.0, 1..512),
        c in -2.0f64..2.0,
        seed in any::<u32>(),
    ) {
        let (ctx, sk, pk) = small();
        let ct = ctx.encrypt_values(&v, pk, seed as u64).unwrap();
        let out = ctx.decrypt_values(&ctx.rescale(&ctx.he_mul_scalar(&ct, c).unwrap()).unwrap(), sk).unwrap();
        let expect: Vec<f64> = v.iter().map(|x| c * x).collect();
        prop_assert!(max_err(&out[..v.len()], &expect) < SMALL_EPS);
    }

    #[test]
    fn serialization_roundtrip(v in proptest::collection::vec(-1.0f64..1.0, 0..64), seed in any::<u32>()) {
        let (ctx, _, pk) = small();
        let ct = ctx.encrypt_values(&v, pk, seed as u64).unwrap();
        let bytes = ctx.serialize_ciphertext(&ct);
        prop_assert_eq!(ctx.deserialize_ciphertext(&bytes).unwrap(), ct);
    }
}
