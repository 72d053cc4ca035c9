use crate::arith::{add_mod, center, inv_mod, mul_mod, neg_mod, reduce_i128, sub_mod, ShoupOperand};
use crate::error::{CkksError, Result};
use crate::ntt::NttTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Coefficient,
    Ntt,
}

/// Polynomial in `Z_Q[X]/(X^N + 1)` stored as one residue array per active
/// prime `q_0..=q_level`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RnsPoly {
    residues: Vec<Vec<u64>>,
    domain: Domain,
}

impl RnsPoly {
    pub fn zero(n: usize, level: usize, domain: Domain) -> Self {
        Self {
            residues: vec![vec![0; n]; level + 1],
            domain,
        }
    }

    pub fn from_residues(residues: Vec<Vec<u64>>, domain: Domain) -> Self {
        assert!(!residues.is_empty());
        Self { residues, domain }
    }

    /// Lifts small signed coefficients into every prime of `moduli`.
    pub fn from_signed(coeffs: &[i64], moduli: &[u64]) -> Self {
        let residues = moduli
            .iter()
            .map(|&q| coeffs.iter().map(|&c| reduce_i128(c as i128, q)).collect())
            .collect();
        Self {
            residues,
            domain: Domain::Coefficient,
        }
    }

    pub fn level(&self) -> usize {
        self.residues.len() - 1
    }

    pub fn degree(&self) -> usize {
        self.residues[0].len()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn residues(&self) -> &[Vec<u64>] {
        &self.residues
    }

    pub fn residue(&self, i: usize) -> &[u64] {
        &self.residues[i]
    }

    /// Checks that every residue is reduced by its prime.
    pub fn is_reduced(&self, moduli: &[u64]) -> bool {
        self.residues.len() <= moduli.len() && self.residues.iter().zip(moduli).all(|(r, &q)| r.iter().all(|&x| x < q))
    }

    pub fn to_ntt(&mut self, tables: &[NttTable]) -> Result<()> {
        if self.domain != Domain::Coefficient {
            return Err(CkksError::Usage(
                "forward NTT of a polynomial already in NTT form".into(),
            ));
        }
        for (r, t) in self.residues.iter_mut().zip(tables) {
            t.forward(r);
        }
        self.domain = Domain::Ntt;
        Ok(())
    }

    pub fn to_coefficient(&mut self, tables: &[NttTable]) -> Result<()> {
        if self.domain != Domain::Ntt {
            return Err(CkksError::Usage("inverse NTT of a coefficient-form polynomial".into()));
        }
        for (r, t) in self.residues.iter_mut().zip(tables) {
            t.inverse(r);
        }
        self.domain = Domain::Coefficient;
        Ok(())
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.domain != other.domain {
            return Err(CkksError::Usage("operands in different domains".into()));
        }
        if self.level() != other.level() {
            return Err(CkksError::LevelMismatch {
                left: self.level(),
                right: other.level(),
            });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self, moduli: &[u64]) -> Result<()> {
        self.check_compatible(other)?;
        for ((a, b), &q) in self.residues.iter_mut().zip(&other.residues).zip(moduli) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = add_mod(*x, y, q);
            }
        }
        Ok(())
    }

    pub fn neg_assign(&mut self, moduli: &[u64]) {
        for (a, &q) in self.residues.iter_mut().zip(moduli) {
            for x in a.iter_mut() {
                *x = neg_mod(*x, q);
            }
        }
    }

    /// Pointwise product; both operands must be in NTT form.
    pub fn mul_assign(&mut self, other: &Self, moduli: &[u64]) -> Result<()> {
        self.check_compatible(other)?;
        if self.domain != Domain::Ntt {
            return Err(CkksError::Usage("ring product requires NTT form".into()));
        }
        for ((a, b), &q) in self.residues.iter_mut().zip(&other.residues).zip(moduli) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = mul_mod(*x, y, q);
            }
        }
        Ok(())
    }

    /// Multiplies every coefficient by the same signed integer.
    pub fn mul_scalar_assign(&mut self, scalar: i128, moduli: &[u64]) {
        for (a, &q) in self.residues.iter_mut().zip(moduli) {
            let s = ShoupOperand::new(reduce_i128(scalar, q), q);
            for x in a.iter_mut() {
                *x = s.mul(*x, q);
            }
        }
    }

    /// Divides by the top prime with rounding and drops it:
    /// `x -> round(x / q_top)` over the remaining primes.
    pub fn drop_top_prime(&mut self, tables: &[NttTable]) -> Result<()> {
        if self.level() == 0 {
            return Err(CkksError::DepthExhausted { level: 0 });
        }
        let top = self.level();
        let q_top = tables[top].modulus();
        let mut last = self.residues.pop().expect("level >= 1");
        if self.domain == Domain::Ntt {
            tables[top].inverse(&mut last);
        }
        let centered: Vec<i64> = last.iter().map(|&x| center(x, q_top)).collect();
        for (i, r) in self.residues.iter_mut().enumerate() {
            let t = &tables[i];
            let q = t.modulus();
            let mut correction: Vec<u64> = centered.iter().map(|&c| reduce_i128(c as i128, q)).collect();
            if self.domain == Domain::Ntt {
                t.forward(&mut correction);
            }
            let q_top_inv = ShoupOperand::new(inv_mod(q_top % q, q).expect("distinct primes"), q);
            for (x, &c) in r.iter_mut().zip(&correction) {
                *x = q_top_inv.mul(sub_mod(*x, c, q), q);
            }
        }
        Ok(())
    }

    /// Keeps only the residues for primes `0..=level`.
    pub fn truncate_to_level(&mut self, level: usize) {
        self.residues.truncate(level + 1);
    }
}

/// Schoolbook product in `Z_q[X]/(X^N + 1)`; exact, quadratic, used as a
/// reference for the transform.
pub fn negacyclic_schoolbook(a: &[u64], b: &[u64], q: u64) -> Vec<u64> {
    let n = a.len();
    assert_eq!(b.len(), n);
    let mut out = vec![0u64; n];
    for i in 0..n {
        for j in 0..n {
            let p = mul_mod(a[i], b[j], q);
            let k = i + j;
            if k < n {
                out[k] = add_mod(out[k], p, q);
            } else {
                out[k - n] = sub_mod(out[k - n], p, q);
            }
        }
    }
    out
}
