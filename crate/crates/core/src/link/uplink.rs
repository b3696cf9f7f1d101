//! Uplink matched-filter detection.

use std::ops::Range;

use num_complex::Complex64;

use crate::error::{Result, SimError};
use crate::estimators::UplinkObservation;
use crate::linalg::dotc;

/// `x_hat[t] = h_hat^H Y[:, t] / norm` for `t` in `window`.
pub fn matched_filter_uplink(
    h_hat: &[Complex64],
    obs: &UplinkObservation,
    window: Range<usize>,
    norm: f64,
) -> Result<Vec<Complex64>> {
    if h_hat.len() != obs.antennas() {
        return Err(SimError::DimensionMismatch {
            what: "estimate length",
            expected: obs.antennas(),
            actual: h_hat.len(),
        });
    }
    if window.end > obs.c_u() {
        return Err(SimError::param(format!("data window {window:?} exceeds frame length {}", obs.c_u())));
    }
    if !(norm > 0.0) {
        return Err(SimError::param(format!("normalization must be positive, got {norm}")));
    }
    let mut out: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); window.len()];
    // Row-major Y: accumulate conj(h_hat[i]) * Y[i, t] row by row.
    for (i, hi) in h_hat.iter().enumerate() {
        let row = &obs.y.row(i)[window.clone()];
        let hc = hi.conj();
        for (o, y) in out.iter_mut().zip(row) {
            *o += hc * y;
        }
    }
    let inv = 1.0 / norm;
    for o in &mut out {
        *o *= inv;
    }
    Ok(out)
}

/// Subtracts the known SP pilot contributions `rho_p h_hat p^T`, placed at
/// `offset`, from a copy of the observation.
pub fn remove_sp_pilots(
    obs: &UplinkObservation,
    pilots: &[(&[Complex64], &[Complex64])],
    offset: usize,
    rho_p: f64,
) -> Result<UplinkObservation> {
    let mut clean = obs.clone();
    for &(h_hat, p) in pilots {
        if h_hat.len() != obs.antennas() || offset + p.len() > obs.c_u() {
            return Err(SimError::param("pilot removal dimensions do not match the observation"));
        }
        let mut padded = vec![Complex64::new(0.0, 0.0); obs.c_u()];
        for (dst, &v) in padded[offset..].iter_mut().zip(p) {
            *dst = -rho_p * v;
        }
        clean.y.add_outer(h_hat, &padded);
    }
    Ok(clean)
}

/// `h_hat^H h` helper for effective UL gains.
pub fn ul_effective_gain(h_hat: &[Complex64], h: &[Complex64]) -> Complex64 {
    dotc(h_hat, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{estimate_sp, estimate_tp, receive_uplink, ChannelEstimateSet};
    use crate::geometry::{draw_channels, GainTensor};
    use crate::link::modem::{qam4_demod, qam4_mod, random_bits};
    use crate::linalg::norm_sqr;
    use crate::pilots::{make_pilot_book, make_sp_pilot_matrix};
    use crate::rng::{stream, Domain};

    #[test]
    fn perfect_csi_single_user_scales_by_channel_energy() {
        let g = GainTensor::from_fn(1, 1, |_, _, _| 1.0).unwrap();
        let mut rng = stream(1, Domain::Trial, 0);
        let h = draw_channels(&g, 64, &mut rng).unwrap();
        let x = qam4_mod(&random_bits(&mut rng, 20)).unwrap();
        let obs = receive_uplink(&h, &[x.clone()], 0.0, &mut rng).unwrap();
        let est = ChannelEstimateSet::perfect(&h);
        let out = matched_filter_uplink(est.get(0, 0, 0).unwrap(), &obs[0], 0..10, 64.0).unwrap();
        let scale = norm_sqr(h.link(0, 0, 0)) / 64.0;
        for (o, xi) in out.iter().zip(&x) {
            assert!((o - xi * scale).norm() < 1e-12);
        }
    }

    #[test]
    fn tp_single_cell_exact_recovery() {
        let g = GainTensor::from_fn(1, 2, |_, _, _| 1.0).unwrap();
        let mut rng = stream(2, Domain::Trial, 0);
        let h = draw_channels(&g, 32, &mut rng).unwrap();
        let book = make_pilot_book(2).unwrap();
        let bits: Vec<Vec<u8>> = (0..2).map(|_| random_bits(&mut rng, 16)).collect();
        let frames: Vec<Vec<Complex64>> = (0..2)
            .map(|k| {
                let mut s = book.sequence(k).unwrap().to_vec();
                s.extend(qam4_mod(&bits[k]).unwrap());
                s
            })
            .collect();
        let obs = receive_uplink(&h, &frames, 0.0, &mut rng).unwrap();
        for k in 0..2 {
            let h_hat = estimate_tp(&obs[0], &book, k).unwrap();
            let gain = ul_effective_gain(&h_hat, h.link(0, 0, k));
            let out = matched_filter_uplink(&h_hat, &obs[0], 2..10, 1.0).unwrap();
            // Zero-forcing on the effective 2x2 channel is exact; the MF sees
            // residual inter-user leakage, so compare against the ideal slicer.
            let other = ul_effective_gain(&h_hat, h.link(0, 0, 1 - k));
            let xs = qam4_mod(&bits[k]).unwrap();
            let xo = qam4_mod(&bits[1 - k]).unwrap();
            for t in 0..8 {
                assert!((out[t] - (gain * xs[t] + other * xo[t])).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn pilot_removal_cancels_known_pilot() {
        let g = GainTensor::from_fn(1, 1, |_, _, _| 1.0).unwrap();
        let mut rng = stream(3, Domain::Trial, 0);
        let h = draw_channels(&g, 128, &mut rng).unwrap();
        let c_u = 16;
        let p = make_sp_pilot_matrix(c_u).unwrap();
        let bits = random_bits(&mut rng, 2 * c_u);
        let x = qam4_mod(&bits).unwrap();
        let (rd, rp) = (0.6f64, 0.8f64);
        let s: Vec<Complex64> = x.iter().zip(p.column(0).unwrap()).map(|(a, b)| rd * a + rp * b).collect();
        let obs = receive_uplink(&h, &[s], 0.0, &mut rng).unwrap();
        let h_hat = estimate_sp(&obs[0], p.column(0).unwrap(), rp).unwrap();
        let clean = remove_sp_pilots(&obs[0], &[(&h_hat, p.column(0).unwrap())], 0, rp).unwrap();
        let out = matched_filter_uplink(&h_hat, &clean, 0..c_u, 128.0 * rd).unwrap();
        assert_eq!(qam4_demod(&out, Complex64::new(1.0, 0.0)), bits);
        assert!(remove_sp_pilots(&obs[0], &[(&h_hat, p.column(0).unwrap())], 1, rp).is_err());
    }

    #[test]
    fn rejects_bad_window() {
        let obs = UplinkObservation {
            y: crate::linalg::CMatrix::zeros(2, 4),
            sigma_sq: 0.0,
        };
        let h = [Complex64::new(1.0, 0.0); 2];
        assert!(matched_filter_uplink(&h, &obs, 0..5, 1.0).is_err());
        assert!(matched_filter_uplink(&h, &obs, 0..4, 0.0).is_err());
        assert!(matched_filter_uplink(&h[..1], &obs, 0..4, 1.0).is_err());
    }
}
