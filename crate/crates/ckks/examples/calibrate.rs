use hefl_ckks::{CkksContext, CkksParams};
use rand::{Rng, SeedableRng};

fn main() {
    for params in [CkksParams::test_small(), CkksParams::paper_128()] {
        let ctx = CkksContext::new(params).unwrap();
        let (sk, pk) = ctx.keygen(1);
        let n = ctx.slot_count();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let (mut add, mut mul, mut enc) = (0f64, 0f64, 0f64);
        let t = std::time::Instant::now();
        let trials = 50;
        for s in 0..trials {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pt = ctx.encode(&v).unwrap();
            let d = ctx.decode(&pt).unwrap();
            enc = enc.max(v.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            let a = ctx.encrypt(&pt, &pk, 2 * s).unwrap();
            let b = ctx.encrypt_values(&w, &pk, 2 * s + 1).unwrap();
            let sum = ctx.he_add(&a, &b).unwrap();
            let out = ctx.decrypt_values(&sum, &sk).unwrap();
            add = add.max(
                out.iter()
                    .zip(v.iter().zip(&w))
                    .map(|(o, (x, y))| (o - x - y).abs())
                    .fold(0.0, f64::max),
            );
            let m = ctx.rescale(&ctx.he_mul_scalar(&sum, 1.0 / 3.0).unwrap()).unwrap();
            let out = ctx.decrypt_values(&m, &sk).unwrap();
            mul = mul.max(
                out.iter()
                    .zip(v.iter().zip(&w))
                    .map(|(o, (x, y))| (o - (x + y) / 3.0).abs())
                    .fold(0.0, f64::max),
            );
        }
        println!(
            "{}: encode {enc:.3e} add {add:.3e} mul-rescale {mul:.3e}  ({:.1} ms/trial)",
            ctx.params().profile(),
            t.elapsed().as_secs_f64() * 1e3 / trials as f64
        );
    }
}
