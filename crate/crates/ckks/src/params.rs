//! Parameter sets: ring dimension, RNS modulus chain and encoding scale.
//!
//! The last prime of the chain is a special prime. It only takes part in
//! encryption, where the fresh ciphertext is divided by it to shrink the
//! encryption noise. Data lives on the remaining primes, and every prime
//! after the first of those can be consumed by one rescale.

use std::fmt;

use sha2::{Digest, Sha256};

use crate::arith::{bit_length, is_prime, ntt_primes};
use crate::error::{CkksError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SecurityProfile {
    /// N = 8192, 60 + 52 + 60 bit chain, scale 2^52.
    Paper128,
    /// N = 1024, 40 + 30 + 40 bit chain, scale 2^30. Not secure; fast for CI.
    TestSmall,
    Custom,
}

impl SecurityProfile {
    pub fn label(self) -> &'static str {
        match self {
            SecurityProfile::Paper128 => "paper-128",
            SecurityProfile::TestSmall => "test-small",
            SecurityProfile::Custom => "custom",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "paper-128" => Some(SecurityProfile::Paper128),
            "test-small" => Some(SecurityProfile::TestSmall),
            _ => None,
        }
    }
}

impl fmt::Display for SecurityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CkksParams {
    ring_dim: usize,
    modulus_chain: Vec<u64>,
    scale_bits: f64,
    profile: SecurityProfile,
}

impl CkksParams {
    pub fn paper_128() -> Self {
        Self::generate(8192, &[60, 52, 60], 52.0, SecurityProfile::Paper128).expect("paper parameter set is valid")
    }

    pub fn test_small() -> Self {
        Self::generate(1024, &[40, 30, 40], 30.0, SecurityProfile::TestSmall).expect("test parameter set is valid")
    }

    pub fn from_profile(profile: SecurityProfile) -> Option<Self> {
        match profile {
            SecurityProfile::Paper128 => Some(Self::paper_128()),
            SecurityProfile::TestSmall => Some(Self::test_small()),
            SecurityProfile::Custom => None,
        }
    }

    /// Builds a chain by picking, for each requested bit-length in order, the
    /// largest unused NTT-friendly prime of exactly that length.
    pub fn generate(ring_dim: usize, chain_bits: &[u32], scale_bits: f64, profile: SecurityProfile) -> Result<Self> {
        if ring_dim < 8 || !ring_dim.is_power_of_two() {
            return Err(CkksError::InvalidParams(format!(
                "ring dimension {ring_dim} must be a power of two >= 8"
            )));
        }
        let mut chain: Vec<u64> = Vec::with_capacity(chain_bits.len());
        for &bits in chain_bits {
            if !(10..=crate::arith::MAX_MODULUS_BITS).contains(&bits) {
                return Err(CkksError::InvalidParams(format!(
                    "prime bit-length {bits} outside [10, 62]"
                )));
            }
            let q = ntt_primes(bits, ring_dim, 1, &chain)
                .pop()
                .ok_or_else(|| CkksError::InvalidParams(format!("no {bits}-bit prime = 1 mod {}", 2 * ring_dim)))?;
            chain.push(q);
        }
        Self::from_primes(ring_dim, chain, scale_bits, profile)
    }

    pub fn from_primes(
        ring_dim: usize,
        modulus_chain: Vec<u64>,
        scale_bits: f64,
        profile: SecurityProfile,
    ) -> Result<Self> {
        let params = Self {
            ring_dim,
            modulus_chain,
            scale_bits,
            profile,
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        let n = self.ring_dim;
        if n < 8 || !n.is_power_of_two() {
            return Err(CkksError::InvalidParams(format!(
                "ring dimension {n} must be a power of two >= 8"
            )));
        }
        if self.modulus_chain.len() < 2 {
            return Err(CkksError::InvalidParams(
                "chain needs at least one data prime and the special prime".into(),
            ));
        }
        for (i, &q) in self.modulus_chain.iter().enumerate() {
            if bit_length(q) > crate::arith::MAX_MODULUS_BITS || !is_prime(q) {
                return Err(CkksError::InvalidParams(format!("{q} is not a usable prime")));
            }
            if q % (2 * n as u64) != 1 {
                return Err(CkksError::InvalidParams(format!("{q} is not 1 mod {}", 2 * n)));
            }
            if self.modulus_chain[..i].contains(&q) {
                return Err(CkksError::InvalidParams(format!("prime {q} repeated")));
            }
        }
        if !(self.scale_bits.is_finite() && self.scale_bits > 0.0) {
            return Err(CkksError::InvalidParams("scale must be positive".into()));
        }
        // Every rescale prime must be at least as wide as the scale, otherwise
        // repeated rescaling drives the scale up without bound.
        for &q in self.rescale_primes() {
            if self.scale_bits > bit_length(q) as f64 {
                return Err(CkksError::InvalidParams(format!(
                    "scale 2^{} exceeds rescale prime {q}",
                    self.scale_bits
                )));
            }
        }
        // Decoding reconstructs data coefficients in 128-bit integers.
        let data_bits: u32 = self.data_primes().iter().map(|&q| bit_length(q)).sum();
        if data_bits > 126 {
            return Err(CkksError::InvalidParams(format!(
                "data modulus of {data_bits} bits exceeds the 126-bit decoder limit"
            )));
        }
        Ok(())
    }

    pub fn ring_dim(&self) -> usize {
        self.ring_dim
    }

    pub fn slot_count(&self) -> usize {
        self.ring_dim / 2
    }

    pub fn modulus_chain(&self) -> &[u64] {
        &self.modulus_chain
    }

    pub fn level_count(&self) -> usize {
        self.modulus_chain.len()
    }

    /// Primes carrying data, i.e. all but the special prime.
    pub fn data_primes(&self) -> &[u64] {
        &self.modulus_chain[..self.modulus_chain.len() - 1]
    }

    fn rescale_primes(&self) -> &[u64] {
        &self.data_primes()[1..]
    }

    pub fn special_prime(&self) -> u64 {
        *self.modulus_chain.last().expect("validated non-empty")
    }

    /// Level of a fresh ciphertext: index of its highest active prime.
    pub fn max_data_level(&self) -> usize {
        self.modulus_chain.len() - 2
    }

    /// Index of the special prime in the chain.
    pub fn key_level(&self) -> usize {
        self.modulus_chain.len() - 1
    }

    pub fn scale_bits(&self) -> f64 {
        self.scale_bits
    }

    pub fn scale(&self) -> f64 {
        self.scale_bits.exp2()
    }

    pub fn chain_bits(&self) -> Vec<u32> {
        self.modulus_chain.iter().map(|&q| bit_length(q)).collect()
    }

    pub fn q_bits(&self) -> u32 {
        self.chain_bits().iter().sum()
    }

    pub fn profile(&self) -> SecurityProfile {
        self.profile
    }

    /// `log2` of the product of the primes active at `level`.
    pub fn log2_modulus(&self, level: usize) -> f64 {
        self.modulus_chain[..=level].iter().map(|&q| (q as f64).log2()).sum()
    }

    /// Eight-byte parameter fingerprint: `log2 N`, chain length and scale
    /// bits in the clear, followed by five bytes of SHA-256 over the full
    /// parameter description.
    pub fn fingerprint(&self) -> [u8; 8] {
        let mut h = Sha256::new();
        h.update(b"HEFL-params");
        h.update((self.ring_dim as u64).to_le_bytes());
        for &q in &self.modulus_chain {
            h.update(q.to_le_bytes());
        }
        h.update(self.scale_bits.to_bits().to_le_bytes());
        let digest = h.finalize();
        let mut fp = [0u8; 8];
        fp[0] = self.ring_dim.trailing_zeros() as u8;
        fp[1] = self.modulus_chain.len() as u8;
        fp[2] = self.scale_bits.round().clamp(0.0, 255.0) as u8;
        fp[3..].copy_from_slice(&digest[..5]);
        fp
    }

    /// Ring dimension recorded in a fingerprint.
    pub fn ring_dim_from_fingerprint(fp: &[u8; 8]) -> usize {
        1usize << fp[0]
    }
}
