//! UL reception and least-squares channel estimators.
//!
//! Every estimator correlates the received block with a selector vector `b`
//! and normalizes: `h_hat = Y b / norm`. The selector encodes the scheme:
//!
//! * TP: `b = [conj(phi), 0]`, `norm = tau`
//! * SP: `b = conj(p)` over the whole frame, `norm = C_u rho_p`
//! * hybrid SP: `b = [0_tau, conj(p)]`, `norm = (C_u - tau) rho_p`

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Result, SimError};
use crate::geometry::ChannelRealization;
use crate::linalg::{axpy, dotu, CMatrix};
use crate::pilots::PilotBook;
use crate::rng::fill_complex_normal;

/// Received UL block at one BS.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkObservation {
    /// `M x C_u` received symbols.
    pub y: CMatrix,
    pub sigma_sq: f64,
}

impl UplinkObservation {
    pub fn antennas(&self) -> usize {
        self.y.rows()
    }

    pub fn c_u(&self) -> usize {
        self.y.cols()
    }
}

/// `Y_j = sum_u h_{j,u} s_u^T + W_j` for every BS `j`.
///
/// `frames` is indexed by flat user index. `sigma_sq = 0` gives a noiseless
/// observation and draws nothing from `rng`.
pub fn receive_uplink<R: Rng + ?Sized>(
    channels: &ChannelRealization,
    frames: &[Vec<Complex64>],
    sigma_sq: f64,
    rng: &mut R,
) -> Result<Vec<UplinkObservation>> {
    let users = channels.cells() * channels.users_per_cell();
    if frames.len() != users {
        return Err(SimError::DimensionMismatch {
            what: "transmit frames",
            expected: users,
            actual: frames.len(),
        });
    }
    let c_u = frames.first().map_or(0, Vec::len);
    if let Some(bad) = frames.iter().find(|f| f.len() != c_u) {
        return Err(SimError::DimensionMismatch {
            what: "frame length",
            expected: c_u,
            actual: bad.len(),
        });
    }
    if !(sigma_sq >= 0.0) {
        return Err(SimError::param(format!("noise variance must be nonnegative, got {sigma_sq}")));
    }
    let k_per = channels.users_per_cell();
    (0..channels.cells())
        .map(|j| {
            let mut y = CMatrix::zeros(channels.antennas(), c_u);
            if sigma_sq > 0.0 {
                fill_complex_normal(rng, sigma_sq, y.as_mut_slice());
            }
            for (u, s) in frames.iter().enumerate() {
                y.add_outer(channels.link(j, u / k_per, u % k_per), s);
            }
            Ok(UplinkObservation { y, sigma_sq })
        })
        .collect()
}

/// Selector and normalization of an LS estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Selector {
    pub b: Vec<Complex64>,
    pub norm: f64,
}

impl Selector {
    /// TP selector `[conj(phi), 0_(C_u - tau)]` with normalization `tau`.
    pub fn tp(book: &PilotBook, pilot: usize, c_u: usize) -> Result<Self> {
        let phi = book.sequence(pilot)?;
        if book.tau() > c_u {
            return Err(SimError::param(format!("pilot length {} exceeds frame length {c_u}", book.tau())));
        }
        let mut b = vec![Complex64::new(0.0, 0.0); c_u];
        for (dst, p) in b.iter_mut().zip(phi) {
            *dst = p.conj();
        }
        Ok(Selector { b, norm: book.tau() as f64 })
    }

    /// SP selector `[0_offset, conj(p)]` with normalization `len(p) rho_p`.
    pub fn sp(pilot: &[Complex64], offset: usize, c_u: usize, rho_p: f64) -> Result<Self> {
        if !(rho_p > 0.0) {
            return Err(SimError::param(format!("rho_p must be positive, got {rho_p}")));
        }
        if offset + pilot.len() != c_u {
            return Err(SimError::DimensionMismatch {
                what: "superimposed pilot window",
                expected: c_u - offset.min(c_u),
                actual: pilot.len(),
            });
        }
        let mut b = vec![Complex64::new(0.0, 0.0); c_u];
        for (dst, p) in b[offset..].iter_mut().zip(pilot) {
            *dst = p.conj();
        }
        Ok(Selector {
            b,
            norm: pilot.len() as f64 * rho_p,
        })
    }

    /// `Y b / norm`.
    pub fn apply(&self, obs: &UplinkObservation) -> Result<Vec<Complex64>> {
        if obs.c_u() != self.b.len() {
            return Err(SimError::DimensionMismatch {
                what: "selector length",
                expected: obs.c_u(),
                actual: self.b.len(),
            });
        }
        let inv = 1.0 / self.norm;
        Ok(obs.y.mul_vec(&self.b).into_iter().map(|z| z * inv).collect())
    }
}

/// TP estimate `Y[:, 0..tau] conj(phi) / tau`.
pub fn estimate_tp(obs: &UplinkObservation, book: &PilotBook, pilot: usize) -> Result<Vec<Complex64>> {
    Selector::tp(book, pilot, obs.c_u())?.apply(obs)
}

/// Non-iterative SP estimate `Y conj(p) / (C_u rho_p)`.
pub fn estimate_sp(obs: &UplinkObservation, pilot: &[Complex64], rho_p: f64) -> Result<Vec<Complex64>> {
    Selector::sp(pilot, 0, obs.c_u(), rho_p)?.apply(obs)
}

/// Hybrid TP estimate with the zero-padded selector `[conj(phi), 0]`.
pub fn estimate_hybrid_tp(obs: &UplinkObservation, book: &PilotBook, pilot: usize) -> Result<Vec<Complex64>> {
    estimate_tp(obs, book, pilot)
}

/// Hybrid SP estimate `Y [0_tau, conj(p)] / ((C_u - tau) rho_p)`.
///
/// No TP-data cancellation is applied; the leakage of TP data into the SP
/// window remains in the estimate.
pub fn estimate_hybrid_sp(obs: &UplinkObservation, pilot: &[Complex64], tau: usize, rho_p: f64) -> Result<Vec<Complex64>> {
    if tau >= obs.c_u() {
        return Err(SimError::param(format!("tau={tau} must be below C_u={}", obs.c_u())));
    }
    Selector::sp(pilot, tau, obs.c_u(), rho_p)?.apply(obs)
}

/// `Y_j b` computed from its parts, `sum_u h_{j,u} (s_u^T b) + W_j b`,
/// without forming `Y_j`.
pub fn project_uplink(
    channels: &ChannelRealization,
    bs: usize,
    frames: &[Vec<Complex64>],
    b: &[Complex64],
    noise_projection: &[Complex64],
) -> Vec<Complex64> {
    let k_per = channels.users_per_cell();
    let mut out = noise_projection.to_vec();
    for (u, s) in frames.iter().enumerate() {
        let c = dotu(s, b);
        if c != Complex64::new(0.0, 0.0) {
            axpy(c, channels.link(bs, u / k_per, u % k_per), &mut out);
        }
    }
    out
}

/// Which estimator produced a set of estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Tp,
    Sp,
    HybridTp,
    HybridSp,
    /// Hybrid systems mix both estimators.
    Hybrid,
    /// True channels (genie), for oracle tests.
    Perfect,
}

/// Channel estimates keyed by link `(bs, cell, user)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimateSet {
    pub method: EstimatorKind,
    estimates: BTreeMap<(usize, usize, usize), Vec<Complex64>>,
}

impl ChannelEstimateSet {
    pub fn new(method: EstimatorKind) -> Self {
        ChannelEstimateSet {
            method,
            estimates: BTreeMap::new(),
        }
    }

    /// Genie estimates equal to the true serving channels.
    pub fn perfect(channels: &ChannelRealization) -> Self {
        let mut set = ChannelEstimateSet::new(EstimatorKind::Perfect);
        for l in 0..channels.cells() {
            for k in 0..channels.users_per_cell() {
                set.insert(l, l, k, channels.link(l, l, k).to_vec());
            }
        }
        set
    }

    pub fn insert(&mut self, bs: usize, cell: usize, user: usize, h_hat: Vec<Complex64>) {
        self.estimates.insert((bs, cell, user), h_hat);
    }

    pub fn get(&self, bs: usize, cell: usize, user: usize) -> Result<&[Complex64]> {
        self.estimates
            .get(&(bs, cell, user))
            .map(Vec::as_slice)
            .ok_or(SimError::MissingEstimate { bs, cell, user })
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{draw_channels, GainTensor};
    use crate::linalg::norm_sqr;
    use crate::pilots::{make_pilot_book, make_sp_pilot_matrix};
    use crate::rng::{complex_normal, stream, Domain};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol)
    }

    #[test]
    fn single_user_noiseless_is_rank_one() {
        let g = GainTensor::from_fn(1, 1, |_, _, _| 1.0).unwrap();
        let mut rng = stream(1, Domain::Trial, 0);
        let h = draw_channels(&g, 4, &mut rng).unwrap();
        let s = vec![c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.5)];
        let obs = receive_uplink(&h, &[s.clone()], 0.0, &mut rng).unwrap();
        for i in 0..4 {
            for t in 0..3 {
                assert_eq!(obs[0].y.get(i, t), h.link(0, 0, 0)[i] * s[t]);
            }
        }
    }

    #[test]
    fn two_users_superpose() {
        let g = GainTensor::from_fn(1, 2, |_, _, _| 1.0).unwrap();
        let mut rng = stream(2, Domain::Trial, 0);
        let h = draw_channels(&g, 3, &mut rng).unwrap();
        let s0 = vec![c(1.0, 0.0), c(2.0, 0.0)];
        let s1 = vec![c(0.0, 1.0), c(0.5, -0.5)];
        let obs = receive_uplink(&h, &[s0.clone(), s1.clone()], 0.0, &mut rng).unwrap();
        for t in 0..2 {
            let expected: Vec<Complex64> = (0..3)
                .map(|i| h.link(0, 0, 0)[i] * s0[t] + h.link(0, 0, 1)[i] * s1[t])
                .collect();
            assert!(close(&obs[0].y.column(t), &expected, 1e-14));
        }
    }

    #[test]
    fn noise_only_observation() {
        let g = GainTensor::from_fn(1, 1, |_, _, _| 1.0).unwrap();
        let mut rng = stream(3, Domain::Trial, 0);
        let h = draw_channels(&g, 200, &mut rng).unwrap();
        let obs = receive_uplink(&h, &[vec![c(0.0, 0.0); 100]], 0.1, &mut rng).unwrap();
        let p: f64 = (0..200).map(|i| norm_sqr(obs[0].y.row(i))).sum::<f64>() / 20_000.0;
        assert!((p - 0.1).abs() < 0.005, "{p}");
    }

    #[test]
    fn receive_rejects_ragged_frames() {
        let g = GainTensor::from_fn(1, 2, |_, _, _| 1.0).unwrap();
        let mut rng = stream(3, Domain::Trial, 0);
        let h = draw_channels(&g, 2, &mut rng).unwrap();
        assert!(receive_uplink(&h, &[vec![c(1.0, 0.0); 3], vec![c(1.0, 0.0); 2]], 0.0, &mut rng).is_err());
        assert!(receive_uplink(&h, &[vec![c(1.0, 0.0); 3]], 0.0, &mut rng).is_err());
    }

    #[test]
    fn tp_single_cell_exact() {
        let g = GainTensor::from_fn(1, 1, |_, _, _| 1.0).unwrap();
        let mut rng = stream(4, Domain::Trial, 0);
        let h = draw_channels(&g, 8, &mut rng).unwrap();
        let book = make_pilot_book(3).unwrap();
        let mut s = book.sequence(2).unwrap().to_vec();
        s.extend([c(0.7, 0.7), c(-0.7, 0.7)]);
        let obs = receive_uplink(&h, &[s], 0.0, &mut rng).unwrap();
        let est = estimate_tp(&obs[0], &book, 2).unwrap();
        assert!(close(&est, h.link(0, 0, 0), 1e-14));
        assert!(estimate_tp(&obs[0], &book, 3).is_err());
    }

    #[test]
    fn tp_linearity() {
        let g = GainTensor::from_fn(1, 1, |_, _, _| 1.0).unwrap();
        let mut rng = stream(5, Domain::Trial, 0);
        let h = draw_channels(&g, 6, &mut rng).unwrap();
        let book = make_pilot_book(2).unwrap();
        let mut s = book.sequence(1).unwrap().to_vec();
        s.extend([c(1.0, 0.0); 3]);
        let obs = receive_uplink(&h, &[s], 0.1, &mut rng).unwrap();
        let alpha = c(2.0, -0.5);
        let mut scaled = obs[0].clone();
        scaled.y.scale(alpha);
        let a = estimate_tp(&scaled, &book, 1).unwrap();
        let b: Vec<Complex64> = estimate_tp(&obs[0], &book, 1).unwrap().iter().map(|z| z * alpha).collect();
        assert!(close(&a, &b, 1e-13));
    }

    #[test]
    fn sp_without_data_is_exact() {
        let g = GainTensor::from_fn(1, 1, |_, _, _| 1.0).unwrap();
        let mut rng = stream(6, Domain::Trial, 0);
        let h = draw_channels(&g, 8, &mut rng).unwrap();
        let p = make_sp_pilot_matrix(10).unwrap();
        let s = p.column(3).unwrap().to_vec();
        let obs = receive_uplink(&h, &[s], 0.0, &mut rng).unwrap();
        let est = estimate_sp(&obs[0], p.column(3).unwrap(), 1.0).unwrap();
        assert!(close(&est, h.link(0, 0, 0), 1e-14));
        assert!(estimate_sp(&obs[0], p.column(3).unwrap(), 0.0).is_err());
    }

    #[test]
    fn sp_self_interference_term() {
        // h_hat - h = (rho_d / (C_u rho_p)) h (x^T conj(p)) for one noiseless user.
        let g = GainTensor::from_fn(1, 1, |_, _, _| 1.0).unwrap();
        let mut rng = stream(7, Domain::Trial, 0);
        let h = draw_channels(&g, 5, &mut rng).unwrap();
        let c_u = 12;
        let p = make_sp_pilot_matrix(c_u).unwrap();
        let pc = p.column(0).unwrap();
        let x: Vec<Complex64> = (0..c_u).map(|_| complex_normal(&mut rng, 1.0)).collect();
        let (rho_d, rho_p) = (0.6f64, 0.8f64);
        let s: Vec<Complex64> = x.iter().zip(pc).map(|(xi, pi)| rho_d * xi + rho_p * pi).collect();
        let obs = receive_uplink(&h, &[s], 0.0, &mut rng).unwrap();
        let est = estimate_sp(&obs[0], pc, rho_p).unwrap();
        let xp: Complex64 = x.iter().zip(pc).map(|(a, b)| a * b.conj()).sum();
        let coef = rho_d / (c_u as f64 * rho_p) * xp;
        let expected: Vec<Complex64> = h.link(0, 0, 0).iter().map(|z| z + z * coef).collect();
        assert!(close(&est, &expected, 1e-13));
    }

    #[test]
    fn hybrid_sp_requires_short_tau() {
        let obs = UplinkObservation {
            y: CMatrix::zeros(2, 4),
            sigma_sq: 0.0,
        };
        assert!(estimate_hybrid_sp(&obs, &[c(1.0, 0.0)], 4, 1.0).is_err());
        assert!(estimate_hybrid_sp(&obs, &[c(1.0, 0.0); 2], 2, 1.0).is_ok());
        assert!(estimate_hybrid_sp(&obs, &[c(1.0, 0.0); 3], 2, 1.0).is_err());
    }

    #[test]
    fn projection_matches_explicit_observation() {
        let g = GainTensor::from_fn(2, 2, |j, l, _| if j == l { 1.0 } else { 0.3 }).unwrap();
        let mut rng = stream(8, Domain::Trial, 0);
        let h = draw_channels(&g, 6, &mut rng).unwrap();
        let frames: Vec<Vec<Complex64>> = (0..4).map(|_| (0..9).map(|_| complex_normal(&mut rng, 1.0)).collect()).collect();
        let obs = receive_uplink(&h, &frames, 0.2, &mut rng).unwrap();
        let noiseless = receive_uplink(&h, &frames, 0.0, &mut rng).unwrap();
        let b: Vec<Complex64> = (0..9).map(|_| complex_normal(&mut rng, 1.0)).collect();
        for j in 0..2 {
            let mut w = obs[j].y.clone();
            for (z, n) in w.as_mut_slice().iter_mut().zip(noiseless[j].y.clone().as_mut_slice().iter()) {
                *z -= n;
            }
            let direct = obs[j].y.mul_vec(&b);
            let projected = project_uplink(&h, j, &frames, &b, &w.mul_vec(&b));
            assert!(close(&direct, &projected, 1e-12));
        }
    }
}
