//! Gray-mapped 4-QAM.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Result, SimError};

const A: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Maps bit pairs `(b0, b1)` to `((1 - 2 b0) + i (1 - 2 b1)) / sqrt(2)`.
pub fn qam4_mod(bits: &[u8]) -> Result<Vec<Complex64>> {
    if bits.len() % 2 != 0 {
        return Err(SimError::param(format!("4-QAM needs an even number of bits, got {}", bits.len())));
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(SimError::param("bits must be 0 or 1"));
    }
    Ok(bits
        .chunks_exact(2)
        .map(|b| Complex64::new(A * (1.0 - 2.0 * b[0] as f64), A * (1.0 - 2.0 * b[1] as f64)))
        .collect())
}

/// Divides by `gain` and slices each quadrature to the nearest point.
pub fn qam4_demod(symbols: &[Complex64], gain: Complex64) -> Vec<u8> {
    let mut bits = Vec::with_capacity(2 * symbols.len());
    for s in symbols {
        let z = s / gain;
        bits.push(u8::from(z.re < 0.0));
        bits.push(u8::from(z.im < 0.0));
    }
    bits
}

pub fn random_bits<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

pub fn bit_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

/// Bit errors of one 4-QAM symbol against its decision statistic.
pub(crate) fn symbol_bit_errors(sent: Complex64, received: Complex64) -> u64 {
    u64::from((sent.re < 0.0) != (received.re < 0.0)) + u64::from((sent.im < 0.0) != (received.im < 0.0))
}
