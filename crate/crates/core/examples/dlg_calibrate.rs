use std::time::Instant;

use hefl_core::attack::{attack_sweep, AttackConfig, SweepSpec};
use hefl_core::protocol::{FlConfig, Scale};

fn main() {
    let mut fl = FlConfig::defaults(Scale::Desk);
    fl.ckks_profile = "test-small".into();
    let seeds: Vec<u64> = std::env::args()
        .nth(1)
        .map_or(5, |s| s.parse().unwrap())
        .to_string()
        .parse::<u64>()
        .map(|n| (0..n).collect())
        .unwrap();
    let spec = SweepSpec {
        fl,
        seeds,
        attack: AttackConfig::default(),
    };
    let t = Instant::now();
    for row in attack_sweep(&[0.0, 0.1, 0.5, 1.0], &spec).unwrap() {
        println!("{row:?}");
    }
    println!("{:.1}s", t.elapsed().as_secs_f64());
}
