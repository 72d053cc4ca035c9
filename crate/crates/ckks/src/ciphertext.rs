//! Encryption and the homomorphic operations the aggregation workload needs:
//! addition, multiplication by a real constant, and rescaling.
//!
//! Scale bookkeeping is exact metadata arithmetic: addition requires equal
//! scales, a constant multiply multiplies the scale by the encoding scale, and
//! a rescale divides it by the prime it drops.

use crate::arith::{add_mod, ShoupOperand};
use crate::context::{CkksContext, Plaintext};
use crate::error::{CkksError, Result};
use crate::keys::{PublicKey, SecretKey};
use crate::poly::{Domain, RnsPoly};
use crate::sampling::{derive_seed, rng_from_seed, sample_ternary};

#[derive(Clone, Debug, PartialEq)]
pub struct Ciphertext {
    pub(crate) c0: RnsPoly,
    pub(crate) c1: RnsPoly,
    pub(crate) scale: f64,
    /// Bound on the absolute slot values the ciphertext may hold.
    pub(crate) value_bound: f64,
    /// `log2` of the estimated noise magnitude, in integer coefficient units.
    pub(crate) noise_bits: f64,
}

impl Ciphertext {
    pub fn level(&self) -> usize {
        self.c0.level()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn value_bound(&self) -> f64 {
        self.value_bound
    }

    pub fn c0(&self) -> &RnsPoly {
        &self.c0
    }

    pub fn c1(&self) -> &RnsPoly {
        &self.c1
    }

    /// Remaining headroom in bits: `log2(Q_level / 2)` minus the bits taken by
    /// the scaled message bound and the estimated noise. A diagnostic
    /// heuristic, not a security statement.
    pub fn noise_budget_estimate(&self, ctx: &CkksContext) -> f64 {
        let used = self.scale * self.value_bound + self.noise_bits.exp2();
        ctx.params().log2_modulus(self.level()) - 1.0 - used.log2()
    }
}

fn fresh_noise_bits(n: usize) -> f64 {
    // rounding error of the special-prime division times a ternary secret
    (2.0 * (n as f64).sqrt() + 1.0).log2()
}

fn log2_sum(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    hi + (1.0 + (a.min(b) - hi).exp2()).log2()
}

/// `dst[i] = p[i] * fixed[i]` with `fixed` carrying Shoup quotients.
fn mul_fixed(p: &RnsPoly, fixed: &RnsPoly, quotients: &[Vec<u64>], moduli: &[u64]) -> RnsPoly {
    let residues = p
        .residues()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let q = moduli[i];
            r.iter()
                .zip(fixed.residue(i))
                .zip(&quotients[i])
                .map(|((&x, &w), &wq)| ShoupOperand { value: w, quotient: wq }.mul(x, q))
                .collect()
        })
        .collect();
    RnsPoly::from_residues(residues, Domain::Ntt)
}

impl CkksContext {
    /// Public-key encryption of a plaintext at the top data level.
    ///
    /// The encryption is computed over the full chain with the message
    /// multiplied by the special prime `P`, then divided by `P` with
    /// rounding, which leaves a fresh ciphertext whose noise is essentially
    /// the rounding error.
    pub fn encrypt(&self, pt: &Plaintext, pk: &PublicKey, seed: u64) -> Result<Ciphertext> {
        let params = self.params();
        if pt.level() != params.max_data_level() {
            return Err(CkksError::Usage(format!(
                "plaintext at level {} but encryption expects level {}",
                pt.level(),
                params.max_data_level()
            )));
        }
        if pt.poly.domain() != Domain::Coefficient {
            return Err(CkksError::Usage("plaintext must be in coefficient form".into()));
        }
        if !(pt.scale.is_finite() && pt.scale > 0.0) {
            return Err(CkksError::Usage(format!(
                "plaintext scale {} is not positive",
                pt.scale
            )));
        }
        let n = params.ring_dim();
        let moduli = self.moduli();
        let tables = self.tables();
        let special = params.special_prime();

        let mut rng = rng_from_seed(derive_seed(seed, &[0xc1]));
        let u = sample_ternary(&mut rng, n);
        let e0 = self.gaussian().sample_vec(&mut rng, n);
        let e1 = self.gaussian().sample_vec(&mut rng, n);

        let mut u_poly = RnsPoly::from_signed(&u, moduli);
        u_poly.to_ntt(tables)?;

        // e0 + P * m over every prime; the special residue of P * m is zero
        let mut e0_poly = RnsPoly::from_signed(&e0, moduli);
        {
            let mut residues = e0_poly.residues().to_vec();
            for (i, r) in residues.iter_mut().enumerate().take(params.key_level()) {
                let q = moduli[i];
                let p_mod = ShoupOperand::new(special % q, q);
                for (x, &m) in r.iter_mut().zip(pt.poly.residue(i)) {
                    *x = add_mod(*x, p_mod.mul(m, q), q);
                }
            }
            e0_poly = RnsPoly::from_residues(residues, Domain::Coefficient);
        }
        e0_poly.to_ntt(tables)?;
        let mut e1_poly = RnsPoly::from_signed(&e1, moduli);
        e1_poly.to_ntt(tables)?;

        let mut c0 = mul_fixed(&u_poly, &pk.b, &pk.b_shoup, moduli);
        c0.add_assign(&e0_poly, moduli)?;
        let mut c1 = mul_fixed(&u_poly, &pk.a, &pk.a_shoup, moduli);
        c1.add_assign(&e1_poly, moduli)?;

        c0.drop_top_prime(tables)?;
        c1.drop_top_prime(tables)?;

        Ok(Ciphertext {
            c0,
            c1,
            scale: pt.scale,
            value_bound: pt.value_bound,
            noise_bits: fresh_noise_bits(n),
        })
    }

    /// Decrypts to a coefficient-form plaintext at the ciphertext's level.
    pub fn decrypt(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<Plaintext> {
        let budget = ct.noise_budget_estimate(self);
        if budget < 0.0 {
            return Err(CkksError::DecryptionIntegrity { budget_bits: budget });
        }
        let moduli = self.moduli();
        let mut m = mul_fixed(&ct.c1, &sk.poly, &sk.shoup, moduli);
        m.add_assign(&ct.c0, moduli)?;
        m.to_coefficient(self.tables())?;
        Ok(Plaintext {
            poly: m,
            scale: ct.scale,
            slot_count: self.slot_count(),
            value_bound: ct.value_bound,
        })
    }

    pub fn he_add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let mut out = a.clone();
        self.he_add_assign(&mut out, b)?;
        Ok(out)
    }

    pub fn he_add_assign(&self, a: &mut Ciphertext, b: &Ciphertext) -> Result<()> {
        if a.level() != b.level() {
            return Err(CkksError::LevelMismatch {
                left: a.level(),
                right: b.level(),
            });
        }
        if a.scale != b.scale {
            return Err(CkksError::ScaleMismatch {
                left: a.scale,
                right: b.scale,
            });
        }
        let moduli = self.moduli();
        a.c0.add_assign(&b.c0, moduli)?;
        a.c1.add_assign(&b.c1, moduli)?;
        a.value_bound += b.value_bound;
        a.noise_bits = log2_sum(a.noise_bits, b.noise_bits);
        Ok(())
    }

    /// Multiplies by a real constant encoded as `round(scalar * scale)`. The
    /// result's scale is the input scale times the encoding scale and must be
    /// rescaled before any further multiply.
    pub fn he_mul_scalar(&self, ct: &Ciphertext, scalar: f64) -> Result<Ciphertext> {
        if !scalar.is_finite() {
            return Err(CkksError::Range(format!("scalar {scalar} is not finite")));
        }
        let params = self.params();
        let level = ct.level();
        if level == 0 {
            return Err(CkksError::DepthExhausted { level });
        }
        let log2_new_scale = ct.scale.log2() + params.scale_bits();
        if log2_new_scale >= params.log2_modulus(level) - 1.0 {
            return Err(CkksError::DepthExhausted { level });
        }
        let encoded = (scalar * params.scale()).round_ties_even();
        let moduli = self.moduli();
        let mut out = ct.clone();
        out.c0.mul_scalar_assign(encoded as i128, moduli);
        out.c1.mul_scalar_assign(encoded as i128, moduli);
        out.scale = ct.scale * params.scale();
        out.value_bound = ct.value_bound * scalar.abs();
        out.noise_bits = ct.noise_bits + encoded.abs().max(1.0).log2();
        Ok(out)
    }

    /// Drops the top prime, dividing the payload and the scale by it.
    pub fn rescale(&self, ct: &Ciphertext) -> Result<Ciphertext> {
        let level = ct.level();
        if level == 0 {
            return Err(CkksError::DepthExhausted { level });
        }
        let q = self.moduli()[level];
        let tables = self.tables();
        let mut out = ct.clone();
        out.c0.drop_top_prime(tables)?;
        out.c1.drop_top_prime(tables)?;
        out.scale = ct.scale / q as f64;
        out.noise_bits = log2_sum(
            ct.noise_bits - (q as f64).log2(),
            fresh_noise_bits(self.params().ring_dim()),
        );
        Ok(out)
    }

    /// Encodes and encrypts in one step.
    pub fn encrypt_values(&self, values: &[f64], pk: &PublicKey, seed: u64) -> Result<Ciphertext> {
        let pt = self.encode(values)?;
        self.encrypt(&pt, pk, seed)
    }

    /// Decrypts and decodes all slots.
    pub fn decrypt_values(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<Vec<f64>> {
        let pt = self.decrypt(ct, sk)?;
        self.decode(&pt)
    }
}
