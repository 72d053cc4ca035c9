//! Negacyclic number-theoretic transform over `Z_q[X]/(X^N + 1)`.
//!
//! The forward transform is a merged Cooley-Tukey pass with the `2N`-th root
//! folded into the twiddles, so no separate pre-multiplication by powers of
//! psi is needed. Output is in bit-reversed order: slot `i` holds the
//! evaluation of the input at `psi^(2*bitrev(i) + 1)`. The inverse is the
//! matching Gentleman-Sande pass followed by scaling with `N^-1`.

use crate::arith::{add_mod, bit_length, inv_mod, mul_mod, primitive_2n_root, sub_mod, ShoupOperand};
use crate::error::{CkksError, Result};

#[derive(Clone, Debug)]
pub struct NttTable {
    n: usize,
    q: u64,
    psi: u64,
    psi_rev: Vec<ShoupOperand>,
    psi_inv_rev: Vec<ShoupOperand>,
    n_inv: ShoupOperand,
}

pub fn bit_reverse(x: usize, log_n: u32) -> usize {
    if log_n == 0 {
        return 0;
    }
    x.reverse_bits() >> (usize::BITS - log_n)
}

impl NttTable {
    pub fn new(n: usize, q: u64) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(CkksError::InvalidParams(format!(
                "ring dimension {n} is not a power of two"
            )));
        }
        if bit_length(q) > crate::arith::MAX_MODULUS_BITS {
            return Err(CkksError::InvalidParams(format!("modulus {q} exceeds 62 bits")));
        }
        let psi =
            primitive_2n_root(n, q).ok_or_else(|| CkksError::InvalidParams(format!("{q} is not 1 mod {}", 2 * n)))?;
        let psi_inv = inv_mod(psi, q).expect("root is a unit");
        let log_n = n.trailing_zeros();
        let mut psi_rev = vec![ShoupOperand::new(1, q); n];
        let mut psi_inv_rev = vec![ShoupOperand::new(1, q); n];
        let mut pw = 1u64;
        let mut pw_inv = 1u64;
        for i in 0..n {
            let r = bit_reverse(i, log_n);
            psi_rev[r] = ShoupOperand::new(pw, q);
            psi_inv_rev[r] = ShoupOperand::new(pw_inv, q);
            pw = mul_mod(pw, psi, q);
            pw_inv = mul_mod(pw_inv, psi_inv, q);
        }
        let n_inv = ShoupOperand::new(inv_mod(n as u64 % q, q).expect("q is odd"), q);
        Ok(Self {
            n,
            q,
            psi,
            psi_rev,
            psi_inv_rev,
            n_inv,
        })
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    /// The primitive `2N`-th root the table is built from.
    pub fn psi(&self) -> u64 {
        self.psi
    }

    pub fn forward(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.n);
        let q = self.q;
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t >>= 1;
            for i in 0..m {
                let j1 = 2 * i * t;
                let w = self.psi_rev[m + i];
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = w.mul(*y, q);
                    *x = add_mod(u, v, q);
                    *y = sub_mod(u, v, q);
                }
            }
            m <<= 1;
        }
    }

    pub fn inverse(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.n);
        let q = self.q;
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m >> 1;
            let mut j1 = 0;
            for i in 0..h {
                let w = self.psi_inv_rev[h + i];
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = *y;
                    *x = add_mod(u, v, q);
                    *y = w.mul(sub_mod(u, v, q), q);
                }
                j1 += 2 * t;
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = self.n_inv.mul(*x, q);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::pow_mod;

    fn eval_at(p: &[u64], x: u64, q: u64) -> u64 {
        p.iter().rev().fold(0, |acc, &c| add_mod(mul_mod(acc, x, q), c, q))
    }

    #[test]
    fn zero_maps_to_zero() {
        let t = NttTable::new(8, 17).unwrap();
        let mut a = vec![0; 8];
        t.forward(&mut a);
        assert!(a.iter().all(|&x| x == 0));
    }

    #[test]
    fn unit_polynomial_transforms_to_ones() {
        let t = NttTable::new(8, 17).unwrap();
        let mut a = vec![0; 8];
        a[0] = 1;
        t.forward(&mut a);
        assert_eq!(a, vec![1; 8]);
    }

    #[test]
    fn output_is_evaluation_at_odd_root_powers() {
        for (n, q) in [(8usize, 17u64), (16, 97), (32, 193)] {
            let t = NttTable::new(n, q).unwrap();
            let log_n = n.trailing_zeros();
            let p: Vec<u64> = (0..n as u64).map(|i| (i * 7 + 3) % q).collect();
            let mut a = p.clone();
            t.forward(&mut a);
            for (i, &v) in a.iter().enumerate() {
                let e = 2 * bit_reverse(i, log_n) as u64 + 1;
                assert_eq!(v, eval_at(&p, pow_mod(t.psi(), e, q), q), "n={n} slot {i}");
            }
            t.inverse(&mut a);
            assert_eq!(a, p);
        }
    }

    #[test]
    fn rejects_non_friendly_modulus() {
        assert!(NttTable::new(8, 13).is_err());
        assert!(NttTable::new(12, 97).is_err());
    }
}
