//! Matched-filter DL precoding and the interference decomposition of the
//! received symbol.
//!
//! The DL noise `eta` is drawn from `CN(0, M sigma^2)`, so the post-scaling
//! term `eta / M` has power `sigma^2 / M`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::estimators::ChannelEstimateSet;
use crate::geometry::{ChannelRealization, GainTensor};
use crate::linalg::{dotc, dotu, norm_sqr};
use crate::rng::complex_normal;

fn check_data(channels: &ChannelRealization, data: &[Complex64]) -> Result<()> {
    let users = channels.cells() * channels.users_per_cell();
    if data.len() != users {
        return Err(SimError::DimensionMismatch {
            what: "DL symbols",
            expected: users,
            actual: data.len(),
        });
    }
    Ok(())
}

/// Received DL symbol of every user (flat index) for a given noise draw.
pub fn mf_precode_downlink_with_noise(
    est: &ChannelEstimateSet,
    channels: &ChannelRealization,
    data: &[Complex64],
    eta: &[Complex64],
) -> Result<Vec<Complex64>> {
    check_data(channels, data)?;
    if eta.len() != data.len() {
        return Err(SimError::DimensionMismatch {
            what: "DL noise samples",
            expected: data.len(),
            actual: eta.len(),
        });
    }
    let (cells, k_users, m) = (channels.cells(), channels.users_per_cell(), channels.antennas());
    // Transmit vector of BS l: sum_k conj(h_hat_{l,l,k}) d_{l,k}.
    let mut tx = vec![vec![Complex64::new(0.0, 0.0); m]; cells];
    for (l, x) in tx.iter_mut().enumerate() {
        for k in 0..k_users {
            let h_hat = est.get(l, l, k)?;
            let d = data[l * k_users + k];
            for (xi, hi) in x.iter_mut().zip(h_hat) {
                *xi += hi.conj() * d;
            }
        }
    }
    let inv_m = 1.0 / m as f64;
    Ok((0..cells * k_users)
        .map(|u| {
            let (j, mm) = (u / k_users, u % k_users);
            let s: Complex64 = (0..cells).map(|l| dotu(channels.link(l, j, mm), &tx[l])).sum();
            (s + eta[u]) * inv_m
        })
        .collect())
}

/// `d_hat_{j,m} = (1/M)(sum_l h_{l,j,m}^T sum_k conj(h_hat_{l,l,k}) d_{l,k} + eta)`.
pub fn mf_precode_downlink<R: Rng + ?Sized>(
    est: &ChannelEstimateSet,
    channels: &ChannelRealization,
    data: &[Complex64],
    sigma_sq: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let var = channels.antennas() as f64 * sigma_sq;
    let eta: Vec<Complex64> = (0..data.len()).map(|_| complex_normal(rng, var)).collect();
    mf_precode_downlink_with_noise(est, channels, data, &eta)
}

/// Effective gains `h_{l,j,m}^T conj(h_hat_{l,l,k}) / M` from every
/// transmitted symbol `d_{l,k}` (flat index) to user `(j, m)`.
pub fn dl_effective_gains(
    est: &ChannelEstimateSet,
    channels: &ChannelRealization,
    j: usize,
    m: usize,
) -> Result<Vec<Complex64>> {
    let (cells, k_users) = (channels.cells(), channels.users_per_cell());
    let inv_m = 1.0 / channels.antennas() as f64;
    let mut g = Vec::with_capacity(cells * k_users);
    for l in 0..cells {
        let h = channels.link(l, j, m);
        for k in 0..k_users {
            g.push(dotc(est.get(l, l, k)?, h) * inv_m);
        }
    }
    Ok(g)
}

/// One received DL symbol split into the signal `beta_{j,j,m} d_{j,m}` and
/// interference terms `i[0..5]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlDecomposition {
    pub signal: Complex64,
    pub i: [Complex64; 5],
    pub d_hat: Complex64,
}

impl DlDecomposition {
    pub fn reconstructed(&self) -> Complex64 {
        self.signal + self.i.iter().sum::<Complex64>()
    }
}

/// Coefficients of each interference term on the transmitted symbols, so
/// that `i_n = sum_u c_n[u] d_u` (plus `eta / M` for `i_3`).
struct Coefficients {
    c: [Vec<Complex64>; 5],
}

fn coefficients(
    est: &ChannelEstimateSet,
    channels: &ChannelRealization,
    gains: &GainTensor,
    j: usize,
    m: usize,
) -> Result<Coefficients> {
    let (cells, k_users, ant) = (channels.cells(), channels.users_per_cell(), channels.antennas());
    if gains.cells() != cells || gains.users_per_cell() != k_users {
        return Err(SimError::DimensionMismatch {
            what: "gain tensor cells",
            expected: cells,
            actual: gains.cells(),
        });
    }
    let inv_m = 1.0 / ant as f64;
    let n = cells * k_users;
    let zero = Complex64::new(0.0, 0.0);
    let mut c: [Vec<Complex64>; 5] = std::array::from_fn(|_| vec![zero; n]);
    for l in 0..cells {
        let h = channels.link(l, j, m);
        for k in 0..k_users {
            let u = l * k_users + k;
            let h_true = channels.link(l, l, k);
            let h_hat = est.get(l, l, k)?;
            let true_part = dotc(h_true, h) * inv_m;
            // i4 = -(1/M) h^T conj(h - h_hat) d
            c[4][u] = dotc(h_hat, h) * inv_m - true_part;
            if l == j && k == m {
                c[0][u] = Complex64::new(norm_sqr(h) * inv_m - gains.get(j, j, m), 0.0);
            } else if l == j {
                c[1][u] = true_part;
            } else {
                c[2][u] = true_part;
            }
        }
    }
    Ok(Coefficients { c })
}

/// Splits the received symbol of user `(j, m)` for one data/noise draw.
pub fn decompose_dl_interference(
    est: &ChannelEstimateSet,
    channels: &ChannelRealization,
    gains: &GainTensor,
    data: &[Complex64],
    eta: Complex64,
    j: usize,
    m: usize,
) -> Result<DlDecomposition> {
    check_data(channels, data)?;
    let coef = coefficients(est, channels, gains, j, m)?;
    let inv_m = 1.0 / channels.antennas() as f64;
    let k_users = channels.users_per_cell();
    let mut i = [Complex64::new(0.0, 0.0); 5];
    for (n, c) in coef.c.iter().enumerate() {
        i[n] = dotu(c, data);
    }
    i[3] = eta * inv_m;
    // Direct evaluation of the precoded symbol for the identity check.
    let g = dl_effective_gains(est, channels, j, m)?;
    let d_hat = dotu(&g, data) + eta * inv_m;
    Ok(DlDecomposition {
        signal: gains.get(j, j, m) * data[j * k_users + m],
        i,
        d_hat,
    })
}

/// Interference powers of user `(j, m)` averaged over unit-power i.i.d. DL
/// symbols and DL noise, conditioned on the channels and estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DlInterferencePowers {
    /// `E|i_n|^2` for `n = 0..5`.
    pub terms: [f64; 5],
    /// `sum_{n<p} 2 Re E[conj(i_n) i_p]`.
    pub cross: f64,
    /// `E|sum_n i_n|^2`.
    pub total: f64,
}

pub fn dl_interference_powers(
    est: &ChannelEstimateSet,
    channels: &ChannelRealization,
    gains: &GainTensor,
    sigma_sq: f64,
    j: usize,
    m: usize,
) -> Result<DlInterferencePowers> {
    let coef = coefficients(est, channels, gains, j, m)?;
    let noise = sigma_sq / channels.antennas() as f64;
    let mut terms = [0.0; 5];
    for (n, c) in coef.c.iter().enumerate() {
        terms[n] = norm_sqr(c);
    }
    terms[3] = noise;
    let mut total = noise;
    for u in 0..coef.c[0].len() {
        let s: Complex64 = coef.c.iter().map(|c| c[u]).sum();
        total += s.norm_sqr();
    }
    Ok(DlInterferencePowers {
        terms,
        cross: total - terms.iter().sum::<f64>(),
        total,
    })
}
