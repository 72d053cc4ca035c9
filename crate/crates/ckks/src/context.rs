use crate::arith::{center, inv_mod, mul_mod, reduce_i128, sub_mod};
use crate::encoding::Encoder;
use crate::error::{CkksError, Result};
use crate::ntt::NttTable;
use crate::params::CkksParams;
use crate::poly::{Domain, RnsPoly};
use crate::sampling::DiscreteGaussian;

/// Encoded message: a coefficient-form polynomial at a tracked scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Plaintext {
    pub(crate) poly: RnsPoly,
    pub(crate) scale: f64,
    pub(crate) slot_count: usize,
    /// Largest absolute slot value at encoding time.
    pub(crate) value_bound: f64,
}

impl Plaintext {
    pub fn poly(&self) -> &RnsPoly {
        &self.poly
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    pub fn level(&self) -> usize {
        self.poly.level()
    }

    pub fn value_bound(&self) -> f64 {
        self.value_bound
    }
}

/// Precomputed tables for one parameter set. Immutable once built; share it
/// by reference (or `Arc`) between workers.
#[derive(Debug)]
pub struct CkksContext {
    params: CkksParams,
    tables: Vec<NttTable>,
    encoder: Encoder,
    gaussian: DiscreteGaussian,
    /// `(q_0 * ... * q_{i-1})^-1 mod q_i` for Garner reconstruction.
    garner_inv: Vec<u64>,
}

impl CkksContext {
    pub fn new(params: CkksParams) -> Result<Self> {
        let n = params.ring_dim();
        let tables = params
            .modulus_chain()
            .iter()
            .map(|&q| NttTable::new(n, q))
            .collect::<Result<Vec<_>>>()?;
        let chain = params.modulus_chain();
        let mut garner_inv = vec![1u64; chain.len()];
        for i in 1..chain.len() {
            let qi = chain[i];
            let prod = chain[..i].iter().fold(1u64, |acc, &q| mul_mod(acc, q % qi, qi));
            garner_inv[i] = inv_mod(prod, qi).expect("distinct primes");
        }
        Ok(Self {
            encoder: Encoder::new(n),
            gaussian: DiscreteGaussian::default(),
            params,
            tables,
            garner_inv,
        })
    }

    pub fn params(&self) -> &CkksParams {
        &self.params
    }

    pub fn tables(&self) -> &[NttTable] {
        &self.tables
    }

    pub fn moduli(&self) -> &[u64] {
        self.params.modulus_chain()
    }

    pub(crate) fn gaussian(&self) -> &DiscreteGaussian {
        &self.gaussian
    }

    pub fn slot_count(&self) -> usize {
        self.params.slot_count()
    }

    pub fn ntt_forward(&self, p: &mut RnsPoly) -> Result<()> {
        p.to_ntt(&self.tables)
    }

    pub fn ntt_inverse(&self, p: &mut RnsPoly) -> Result<()> {
        p.to_coefficient(&self.tables)
    }

    /// Encodes at the default scale.
    pub fn encode(&self, values: &[f64]) -> Result<Plaintext> {
        self.encode_at(values, self.params.scale(), self.params.max_data_level())
    }

    /// Encodes `values` (at most N/2 of them, zero-padded) at `scale` over
    /// the primes `0..=level`. Coefficients are rounded half-to-even.
    pub fn encode_at(&self, values: &[f64], scale: f64, level: usize) -> Result<Plaintext> {
        if values.len() > self.slot_count() {
            return Err(CkksError::Usage(format!(
                "{} values exceed {} slots",
                values.len(),
                self.slot_count()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(CkksError::Usage(format!("scale {scale} is not positive")));
        }
        if level > self.params.max_data_level() {
            return Err(CkksError::Usage(format!("level {level} above the data levels")));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(CkksError::Range(format!("non-finite input {bad}")));
        }
        let value_bound = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let headroom = (self.params.log2_modulus(level) - 1.0).exp2();
        let coeffs = self.encoder.slots_to_coeffs(values);
        let mut ints = Vec::with_capacity(coeffs.len());
        for c in coeffs {
            let scaled = (c * scale).round_ties_even();
            if scaled.abs() >= headroom {
                return Err(CkksError::Range(format!(
                    "scaled coefficient 2^{:.1} exceeds the 2^{:.1} headroom",
                    scaled.abs().log2(),
                    headroom.log2()
                )));
            }
            ints.push(scaled as i128);
        }
        let residues = self.moduli()[..=level]
            .iter()
            .map(|&q| ints.iter().map(|&c| reduce_i128(c, q)).collect())
            .collect();
        Ok(Plaintext {
            poly: RnsPoly::from_residues(residues, Domain::Coefficient),
            scale,
            slot_count: self.slot_count(),
            value_bound,
        })
    }

    /// Decodes all N/2 slots.
    pub fn decode(&self, pt: &Plaintext) -> Result<Vec<f64>> {
        if !(pt.scale.is_finite() && pt.scale > 0.0) {
            return Err(CkksError::Usage(format!("scale {} is not positive", pt.scale)));
        }
        let mut poly = pt.poly.clone();
        if poly.domain() == Domain::Ntt {
            poly.to_coefficient(&self.tables)?;
        }
        let inv_scale = 1.0 / pt.scale;
        let coeffs: Vec<f64> = (0..poly.degree())
            .map(|k| self.lift_centered(&poly, k) as f64 * inv_scale)
            .collect();
        Ok(self.encoder.coeffs_to_slots(&coeffs))
    }

    /// Centered integer of coefficient `k` via Garner's mixed-radix CRT.
    fn lift_centered(&self, poly: &RnsPoly, k: usize) -> i128 {
        let moduli = self.moduli();
        let level = poly.level();
        if level == 0 {
            return center(poly.residue(0)[k], moduli[0]) as i128;
        }
        let mut x: u128 = poly.residue(0)[k] as u128;
        let mut m: u128 = moduli[0] as u128;
        for i in 1..=level {
            let q = moduli[i];
            let r = poly.residue(i)[k];
            let x_mod = (x % q as u128) as u64;
            let t = mul_mod(sub_mod(r, x_mod, q), self.garner_inv[i], q);
            x += m * t as u128;
            m *= q as u128;
        }
        if x > m / 2 {
            -((m - x) as i128)
        } else {
            x as i128
        }
    }
}
