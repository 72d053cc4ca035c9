use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Standard deviation of the RLWE error distribution.
pub const ERROR_STD_DEV: f64 = 3.2;
/// Tail cut in multiples of the standard deviation.
pub const ERROR_TAIL_CUT: f64 = 6.0;

pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a domain tag.
pub fn derive_seed(seed: u64, tag: &[u64]) -> u64 {
    // splitmix64 over the tag words
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &t in tag {
        x ^= t.wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x = z ^ (z >> 31);
    }
    x
}

pub fn sample_ternary<R: Rng>(rng: &mut R, n: usize) -> Vec<i64> {
    (0..n).map(|_| rng.gen_range(-1i64..=1)).collect()
}

/// Centered discrete Gaussian over the integers in `[-bound, bound]`,
/// sampled by inversion of its cumulative table.
#[derive(Debug)]
pub struct DiscreteGaussian {
    bound: i64,
    cdf: Vec<f64>,
}

impl DiscreteGaussian {
    pub fn new(std_dev: f64, tail_cut: f64) -> Self {
        let bound = (std_dev * tail_cut).ceil() as i64;
        let weights: Vec<f64> = (-bound..=bound)
            .map(|x| (-(x as f64).powi(2) / (2.0 * std_dev * std_dev)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Self { bound, cdf }
    }

    pub fn bound(&self) -> i64 {
        self.bound
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.gen();
        let idx = self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1);
        idx as i64 - self.bound
    }

    pub fn sample_vec<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<i64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

impl Default for DiscreteGaussian {
    fn default() -> Self {
        Self::new(ERROR_STD_DEV, ERROR_TAIL_CUT)
    }
}

pub fn sample_uniform_residues<R: Rng>(rng: &mut R, n: usize, q: u64) -> Vec<u64> {
    (0..n).map(|_| rng.gen_range(0..q)).collect()
}
