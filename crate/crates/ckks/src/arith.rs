//! Word-sized modular arithmetic for NTT-friendly primes below 2^62.

/// Largest modulus bit-length supported by the word arithmetic.
pub const MAX_MODULUS_BITS: u32 = 62;

#[inline]
pub fn add_mod(a: u64, b: u64, q: u64) -> u64 {
    let s = a + b;
    if s >= q {
        s - q
    } else {
        s
    }
}

#[inline]
pub fn sub_mod(a: u64, b: u64, q: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + q - b
    }
}

#[inline]
pub fn neg_mod(a: u64, q: u64) -> u64 {
    if a == 0 {
        0
    } else {
        q - a
    }
}

#[inline]
pub fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

pub fn pow_mod(mut base: u64, mut exp: u64, q: u64) -> u64 {
    let mut acc = 1 % q;
    base %= q;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        exp >>= 1;
    }
    acc
}

/// Inverse of `a` modulo the prime `q` (Fermat).
pub fn inv_mod(a: u64, q: u64) -> Option<u64> {
    if a % q == 0 {
        return None;
    }
    Some(pow_mod(a, q - 2, q))
}

/// Reduces a signed integer into `[0, q)`.
#[inline]
pub fn reduce_i128(x: i128, q: u64) -> u64 {
    x.rem_euclid(q as i128) as u64
}

/// Maps a residue in `[0, q)` to its centered representative in `(-q/2, q/2]`.
#[inline]
pub fn center(x: u64, q: u64) -> i64 {
    if x > q / 2 {
        x as i64 - q as i64
    } else {
        x as i64
    }
}

/// A fixed multiplicand with its Shoup quotient `floor(w * 2^64 / q)`.
///
/// Multiplying by a fixed operand this way costs one high-half product and
/// one conditional subtraction instead of a 128-bit division.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShoupOperand {
    pub value: u64,
    pub quotient: u64,
}

impl ShoupOperand {
    pub fn new(value: u64, q: u64) -> Self {
        debug_assert!(value < q);
        let quotient = (((value as u128) << 64) / q as u128) as u64;
        Self { value, quotient }
    }

    #[inline]
    pub fn mul(self, x: u64, q: u64) -> u64 {
        let qhat = ((x as u128 * self.quotient as u128) >> 64) as u64;
        let r = x.wrapping_mul(self.value).wrapping_sub(qhat.wrapping_mul(q));
        if r >= q {
            r - q
        } else {
            r
        }
    }
}

/// Deterministic Miller-Rabin for all 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Finds primes of exactly `bits` bits with `q = 1 (mod 2n)`, largest first,
/// skipping any prime in `exclude`.
pub fn ntt_primes(bits: u32, n: usize, count: usize, exclude: &[u64]) -> Vec<u64> {
    assert!((2..=MAX_MODULUS_BITS).contains(&bits));
    let step = 2 * n as u64;
    let upper = 1u64 << bits;
    let lower = 1u64 << (bits - 1);
    let mut found = Vec::with_capacity(count);
    // largest k with k*step + 1 < 2^bits
    let mut candidate = ((upper - 2) / step) * step + 1;
    while found.len() < count && candidate >= lower {
        if is_prime(candidate) && !exclude.contains(&candidate) {
            found.push(candidate);
        }
        candidate = match candidate.checked_sub(step) {
            Some(c) => c,
            None => break,
        };
    }
    found
}

/// Returns the smallest-generator-derived primitive `2n`-th root of unity mod `q`.
pub fn primitive_2n_root(n: usize, q: u64) -> Option<u64> {
    let order = 2 * n as u64;
    if (q - 1) % order != 0 {
        return None;
    }
    let cofactor = (q - 1) / order;
    for g in 2..q.min(1 << 20) {
        let root = pow_mod(g, cofactor, q);
        // order divides 2n (a power of two); it is exactly 2n iff root^n = -1.
        if pow_mod(root, n as u64, q) == q - 1 {
            return Some(root);
        }
    }
    None
}

pub fn bit_length(x: u64) -> u32 {
    64 - x.leading_zeros()
}
