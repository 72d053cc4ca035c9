//! Canonical-embedding encoder.
//!
//! A message polynomial `m` is identified with its evaluations at the odd
//! powers `zeta^(2t+1)` of `zeta = exp(i*pi/N)`. Slot `j` is the evaluation
//! at `zeta^(5^j mod 2N)`; the other half of the roots carry the complex
//! conjugates, which makes the coefficients real. Evaluating at all odd
//! roots is a length-N DFT of `m_k * zeta^k`, so both directions cost one
//! FFT.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Encoder {
    n: usize,
    /// `zeta^k` for `k in 0..N`.
    twist: Vec<Complex64>,
    /// FFT bin of each slot, `(5^j mod 2N - 1) / 2`.
    slot_bins: Vec<usize>,
    /// FFT bin of each slot's conjugate root.
    conj_bins: Vec<usize>,
    evaluate: Arc<dyn Fft<f64>>,
    interpolate: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder").field("n", &self.n).finish()
    }
}

impl Encoder {
    pub fn new(n: usize) -> Self {
        let two_n = 2 * n;
        let twist = (0..n)
            .map(|k| Complex64::from_polar(1.0, PI * k as f64 / n as f64))
            .collect();
        let mut slot_bins = Vec::with_capacity(n / 2);
        let mut conj_bins = Vec::with_capacity(n / 2);
        let mut g = 1usize;
        for _ in 0..n / 2 {
            slot_bins.push((g - 1) / 2);
            conj_bins.push((two_n - g - 1) / 2);
            g = g * 5 % two_n;
        }
        let mut planner = FftPlanner::new();
        // rustfft's inverse uses exp(+2*pi*i*k*t/N), which is evaluation here
        let evaluate = planner.plan_fft_inverse(n);
        let interpolate = planner.plan_fft_forward(n);
        Self {
            n,
            twist,
            slot_bins,
            conj_bins,
            evaluate,
            interpolate,
        }
    }

    pub fn slot_count(&self) -> usize {
        self.n / 2
    }

    /// Real coefficients whose slot values are `values` (zero-padded).
    pub fn slots_to_coeffs(&self, values: &[f64]) -> Vec<f64> {
        assert!(values.len() <= self.slot_count());
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for (j, &v) in values.iter().enumerate() {
            buf[self.slot_bins[j]] = Complex64::new(v, 0.0);
            buf[self.conj_bins[j]] = Complex64::new(v, 0.0);
        }
        self.interpolate.process(&mut buf);
        let inv_n = 1.0 / self.n as f64;
        buf.iter()
            .zip(&self.twist)
            .map(|(y, w)| (y * w.conj()).re * inv_n)
            .collect()
    }

    /// Real parts of the slot values of a real-coefficient polynomial.
    pub fn coeffs_to_slots(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n);
        let mut buf: Vec<Complex64> = coeffs.iter().zip(&self.twist).map(|(&c, w)| w * c).collect();
        self.evaluate.process(&mut buf);
        self.slot_bins.iter().map(|&b| buf[b].re).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_direct(coeffs: &[f64], root: Complex64) -> Complex64 {
        coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * root + c)
    }

    #[test]
    fn slots_are_evaluations_at_powers_of_five() {
        let n = 16;
        let enc = Encoder::new(n);
        let coeffs: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin()).collect();
        let slots = enc.coeffs_to_slots(&coeffs);
        let mut g = 1u64;
        for s in slots {
            let root = Complex64::from_polar(1.0, PI * g as f64 / n as f64);
            let direct = eval_direct(&coeffs, root);
            assert!((direct.re - s).abs() < 1e-12);
            g = g * 5 % (2 * n as u64);
        }
    }

    #[test]
    fn interpolation_inverts_evaluation() {
        let enc = Encoder::new(64);
        let values: Vec<f64> = (0..32).map(|j| (j as f64 - 16.0) / 7.0).collect();
        let coeffs = enc.slots_to_coeffs(&values);
        let back = enc.coeffs_to_slots(&coeffs);
        for (a, b) in values.iter().zip(back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
