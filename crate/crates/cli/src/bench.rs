use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use hefl_ckks::{CkksContext, CkksParams, SecurityProfile};
use hefl_core::{CoreError, Result};

pub const OPS: [&str; 5] = ["encode", "encrypt", "add", "mul-rescale", "decrypt"];

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// CKKS parameter set
    #[arg(long, value_name = "PROFILE", default_value = "paper-128", value_parser = ["paper-128", "test-small"])]
    ckks_profile: String,
    /// Comma-separated vector lengths, each at most the slot count
    #[arg(long, value_name = "N,N,...", default_value = "4096")]
    sizes: String,
    /// Timed repetitions per operation; the median is reported
    #[arg(long, value_name = "K", default_value_t = 9)]
    reps: usize,
    /// CSV output
    #[arg(long, value_name = "FILE", default_value = "bench.csv")]
    out: PathBuf,
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    let sizes: Vec<usize> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| CoreError::Usage(format!("bad size `{t}`"))))
        .collect::<Result<_>>()?;
    if sizes.is_empty() {
        return Err(CoreError::Usage("--sizes needs at least one vector length".into()));
    }
    Ok(sizes)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<Vec<f64>> {
    f()?; // warm-up
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f()?);
            Ok(t.elapsed().as_secs_f64() * 1e3)
        })
        .collect()
}

pub fn run(a: BenchArgs) -> Result<()> {
    let sizes = parse_sizes(&a.sizes)?;
    if a.reps == 0 {
        return Err(CoreError::Usage("--reps must be at least 1".into()));
    }
    let params = SecurityProfile::from_label(&a.ckks_profile)
        .and_then(CkksParams::from_profile)
        .ok_or_else(|| CoreError::Usage(format!("unknown profile `{}`", a.ckks_profile)))?;
    let ctx = CkksContext::new(params)?;
    if let Some(&big) = sizes.iter().find(|&&n| n == 0 || n > ctx.slot_count()) {
        return Err(CoreError::Usage(format!(
            "size {big} outside 1..={} slots",
            ctx.slot_count()
        )));
    }
    let (sk, pk) = ctx.keygen(1);

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CoreError::Format(format!("csv: {e}"));
    w.write_record(["profile", "size", "op", "reps", "median_ms", "min_ms", "max_ms"])
        .map_err(csv_err)?;
    println!("{:<12} {:>6} {:<12} {:>12}", "profile", "size", "op", "median_ms");
    for &n in &sizes {
        let v: Vec<f64> = (0..n).map(|i| ((i * 37 % 200) as f64 - 100.0) / 100.0).collect();
        let pt = ctx.encode(&v)?;
        let ct = ctx.encrypt(&pt, &pk, 2)?;
        let mut seed = 3u64;
        let samples = [
            time(a.reps, || Ok(ctx.encode(&v)?))?,
            time(a.reps, || {
                seed += 1;
                Ok(ctx.encrypt(&pt, &pk, seed)?)
            })?,
            time(a.reps, || Ok(ctx.he_add(&ct, &ct)?))?,
            time(a.reps, || Ok(ctx.rescale(&ctx.he_mul_scalar(&ct, 1.0 / 3.0)?)?))?,
            time(a.reps, || Ok(ctx.decrypt(&ct, &sk)?))?,
        ];
        for (op, s) in OPS.iter().zip(samples) {
            let (lo, hi) = s
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
            let med = median(s);
            w.write_record([
                a.ckks_profile.clone(),
                n.to_string(),
                op.to_string(),
                a.reps.to_string(),
                format!("{med:.6}"),
                format!("{lo:.6}"),
                format!("{hi:.6}"),
            ])
            .map_err(csv_err)?;
            println!("{:<12} {:>6} {:<12} {:>12.4}", a.ckks_profile, n, op, med);
        }
    }
    let bytes = w.into_inner().map_err(|e| CoreError::Format(format!("csv: {e}")))?;
    crate::write_file(&a.out, &bytes)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_sizes("4096").unwrap(), vec![4096]);
        assert_eq!(parse_sizes(" 8, 16 ,").unwrap(), vec![8, 16]);
        assert!(parse_sizes("").is_err());
        assert!(parse_sizes(" , ").is_err());
        assert!(parse_sizes("x").is_err());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
