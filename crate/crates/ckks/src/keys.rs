use crate::arith::{center, ShoupOperand};
use crate::context::CkksContext;
use crate::error::{CkksError, Result};
use crate::poly::{Domain, RnsPoly};
use crate::sampling::{derive_seed, rng_from_seed, sample_ternary, sample_uniform_residues};

/// Uniform ternary secret, held in NTT form over the full chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecretKey {
    pub(crate) poly: RnsPoly,
    pub(crate) shoup: Vec<Vec<u64>>,
}

/// RLWE public key `(b, a)` with `b = -a*s + e`, NTT form, full chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    pub(crate) b: RnsPoly,
    pub(crate) a: RnsPoly,
    pub(crate) b_shoup: Vec<Vec<u64>>,
    pub(crate) a_shoup: Vec<Vec<u64>>,
}

fn shoup_quotients(p: &RnsPoly, moduli: &[u64]) -> Vec<Vec<u64>> {
    p.residues()
        .iter()
        .zip(moduli)
        .map(|(r, &q)| r.iter().map(|&x| ShoupOperand::new(x, q).quotient).collect())
        .collect()
}

impl SecretKey {
    pub(crate) fn from_ntt(poly: RnsPoly, moduli: &[u64]) -> Self {
        let shoup = shoup_quotients(&poly, moduli);
        Self { poly, shoup }
    }

    pub fn poly(&self) -> &RnsPoly {
        &self.poly
    }

    /// Recovers the ternary coefficient vector.
    pub fn ternary(&self, ctx: &CkksContext) -> Vec<i64> {
        let mut first = self.poly.residue(0).to_vec();
        ctx.tables()[0].inverse(&mut first);
        let q = ctx.moduli()[0];
        first.iter().map(|&x| center(x, q)).collect()
    }
}

impl PublicKey {
    pub(crate) fn from_ntt(b: RnsPoly, a: RnsPoly, moduli: &[u64]) -> Self {
        let b_shoup = shoup_quotients(&b, moduli);
        let a_shoup = shoup_quotients(&a, moduli);
        Self { b, a, b_shoup, a_shoup }
    }

    pub fn b(&self) -> &RnsPoly {
        &self.b
    }

    pub fn a(&self) -> &RnsPoly {
        &self.a
    }
}

impl CkksContext {
    /// Deterministic key generation: identical seeds give identical keys.
    pub fn keygen(&self, seed: u64) -> (SecretKey, PublicKey) {
        let n = self.params().ring_dim();
        let moduli = self.moduli();
        let tables = self.tables();

        let mut rng = rng_from_seed(derive_seed(seed, &[0x5ec]));
        let s = sample_ternary(&mut rng, n);
        let mut s_poly = RnsPoly::from_signed(&s, moduli);
        s_poly.to_ntt(tables).expect("fresh coefficient poly");

        let mut rng = rng_from_seed(derive_seed(seed, &[0xa]));
        let a_res = moduli
            .iter()
            .map(|&q| sample_uniform_residues(&mut rng, n, q))
            .collect();
        let a_poly = RnsPoly::from_residues(a_res, Domain::Ntt);

        let mut rng = rng_from_seed(derive_seed(seed, &[0xe]));
        let e = self.gaussian().sample_vec(&mut rng, n);
        let mut e_poly = RnsPoly::from_signed(&e, moduli);
        e_poly.to_ntt(tables).expect("fresh coefficient poly");

        let mut b = a_poly.clone();
        b.mul_assign(&s_poly, moduli).expect("same shape");
        b.neg_assign(moduli);
        b.add_assign(&e_poly, moduli).expect("same shape");

        (
            SecretKey::from_ntt(s_poly, moduli),
            PublicKey::from_ntt(b, a_poly, moduli),
        )
    }

    /// Checks `b + a*s` is small: its centered coefficients must lie within
    /// the error distribution's support.
    pub fn check_key_pair(&self, sk: &SecretKey, pk: &PublicKey) -> Result<()> {
        let moduli = self.moduli();
        let mut t = pk.a.clone();
        t.mul_assign(&sk.poly, moduli)?;
        t.add_assign(&pk.b, moduli)?;
        t.to_coefficient(self.tables())?;
        let bound = self.gaussian().bound();
        for (r, &q) in t.residues().iter().zip(moduli) {
            if let Some(&x) = r.iter().find(|&&x| center(x, q).abs() > bound) {
                return Err(CkksError::Usage(format!(
                    "public key error coefficient {} exceeds {bound}",
                    center(x, q)
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::CkksParams;

    #[test]
    fn keygen_is_deterministic_and_consistent() {
        let ctx = CkksContext::new(CkksParams::test_small()).unwrap();
        let (sk1, pk1) = ctx.keygen(11);
        let (sk2, pk2) = ctx.keygen(11);
        assert_eq!(sk1, sk2);
        assert_eq!(pk1, pk2);
        let (sk3, _) = ctx.keygen(12);
        assert_ne!(sk1, sk3);
        ctx.check_key_pair(&sk1, &pk1).unwrap();
        assert!(ctx.check_key_pair(&sk3, &pk1).is_err());
        assert!(sk1.ternary(&ctx).iter().all(|x| (-1..=1).contains(x)));
    }
}
