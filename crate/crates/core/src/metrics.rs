//! Closed-form estimation and link metrics.
//!
//! Gains are indexed `beta(j, l, k)`: BS `j`, user `k` of cell `l`. SINR
//! functions return `f64::INFINITY` when the interference sum is empty.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{GainTensor, UserId};
use crate::pilots::{optimal_power_split, PowerSplit, ReuseSets};

/// Everything the closed forms depend on.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricInputs {
    pub gains: GainTensor,
    pub antennas: usize,
    pub c_u: usize,
    pub c_d: usize,
    pub tau: usize,
    pub sigma_sq: f64,
    pub split: PowerSplit,
    pub reuse: ReuseSets,
}

impl MetricInputs {
    pub fn new(
        gains: GainTensor,
        antennas: usize,
        c_u: usize,
        c_d: usize,
        tau: usize,
        sigma_sq: f64,
        split: PowerSplit,
        reuse: ReuseSets,
    ) -> Result<Self> {
        if reuse.cells() != gains.cells() {
            return Err(SimError::DimensionMismatch {
                what: "reuse sets",
                expected: gains.cells(),
                actual: reuse.cells(),
            });
        }
        if antennas == 0 || c_u == 0 || c_d == 0 {
            return Err(SimError::param("M, C_u and C_d must be at least 1"));
        }
        if tau > c_u {
            return Err(SimError::param(format!("tau={tau} exceeds C_u={c_u}")));
        }
        if !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
            return Err(SimError::param(format!("noise variance must be finite and nonnegative, got {sigma_sq}")));
        }
        Ok(MetricInputs {
            gains,
            antennas,
            c_u,
            c_d,
            tau,
            sigma_sq,
            split,
            reuse,
        })
    }

    pub fn cells(&self) -> usize {
        self.gains.cells()
    }

    pub fn users_per_cell(&self) -> usize {
        self.gains.users_per_cell()
    }

    fn beta(&self, j: usize, l: usize, k: usize) -> f64 {
        self.gains.get(j, l, k)
    }

    fn check_user(&self, j: usize, m: usize) -> Result<()> {
        if j >= self.cells() || m >= self.users_per_cell() {
            return Err(SimError::param(format!(
                "user ({j}, {m}) outside {} cells x {} users",
                self.cells(),
                self.users_per_cell()
            )));
        }
        Ok(())
    }

    /// Co-pilot cells of `j`, excluding `j`.
    fn co_pilot_cells(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.cells()).filter(move |&l| l != j && self.reuse.shares_pilots(l, j))
    }

    /// `rho_d^2 K / (C_u rho_p^2)`.
    fn sp_leak(&self) -> f64 {
        self.split.rho_d_sq * self.users_per_cell() as f64 / (self.c_u as f64 * self.split.rho_p_sq)
    }
}

/// Per-antenna MSE of the TP estimate: contamination plus `sigma^2 / tau`.
pub fn mse_tp(inp: &MetricInputs, j: usize, m: usize) -> Result<f64> {
    inp.check_user(j, m)?;
    if inp.tau == 0 {
        return Err(SimError::param("TP metrics need tau >= 1"));
    }
    let contamination: f64 = inp.co_pilot_cells(j).map(|l| inp.beta(j, l, m)).sum();
    Ok(contamination + inp.sigma_sq / inp.tau as f64)
}

/// Per-antenna MSE of the non-iterative SP estimate.
pub fn mse_sp(inp: &MetricInputs, j: usize, m: usize) -> Result<f64> {
    inp.check_user(j, m)?;
    let (rd, rp) = (inp.split.rho_d_sq, inp.split.rho_p_sq);
    let c_u = inp.c_u as f64;
    let total: f64 = (0..inp.cells())
        .flat_map(|l| (0..inp.users_per_cell()).map(move |k| (l, k)))
        .map(|(l, k)| inp.beta(j, l, k))
        .sum();
    Ok(rd / (c_u * rp) * total + inp.sigma_sq / (rp * c_u))
}

/// Per-antenna CRLB for the SP channel estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crlb {
    /// `1 / (C_u / sigma^2 + 1 / beta)`.
    pub exact: f64,
    /// High-gain approximation `sigma^2 / C_u`.
    pub approx: f64,
}

pub fn crlb_sp(inp: &MetricInputs, j: usize, m: usize) -> Result<Crlb> {
    inp.check_user(j, m)?;
    let beta = inp.beta(j, j, m);
    if !(beta > 0.0) {
        return Err(SimError::ZeroServingGain { cell: j, user: m });
    }
    let c_u = inp.c_u as f64;
    let exact = if inp.sigma_sq == 0.0 {
        0.0
    } else {
        1.0 / (c_u / inp.sigma_sq + 1.0 / beta)
    };
    Ok(Crlb {
        exact,
        approx: inp.sigma_sq / c_u,
    })
}

fn ratio_or_inf(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

/// Large-M DL SINR with TP estimates.
pub fn dl_sinr_tp(inp: &MetricInputs, j: usize, m: usize) -> Result<f64> {
    inp.check_user(j, m)?;
    let den: f64 = inp.co_pilot_cells(j).map(|l| inp.beta(l, j, m).powi(2)).sum();
    Ok(ratio_or_inf(inp.beta(j, j, m).powi(2), den))
}

/// Expected interference power at user `(j, m)` in the SP DL, split by origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpDlInterference {
    /// Channel hardening, intra/inter-cell leakage and DL noise:
    /// `(1/M)(sum_l sum_k beta_ljm beta_llk + sigma^2)`.
    pub i0_to_i3: f64,
    /// Data-driven estimation error term.
    pub i4_data: f64,
    /// UL noise in the estimates; absent from the closed-form SINR.
    pub i4_noise: f64,
}

impl SpDlInterference {
    /// Denominator of the exact SP DL SINR.
    pub fn closed_form(&self) -> f64 {
        self.i0_to_i3 + self.i4_data
    }

    pub fn total(&self) -> f64 {
        self.i0_to_i3 + self.i4_data + self.i4_noise
    }
}

pub fn dl_interference_sp(inp: &MetricInputs, j: usize, m: usize) -> Result<SpDlInterference> {
    inp.check_user(j, m)?;
    let (l_cells, k_users) = (inp.cells(), inp.users_per_cell());
    let inv_m = 1.0 / inp.antennas as f64;
    let a = inp.sp_leak();
    let mut cross_sq = 0.0;
    let mut cross_check = 0.0;
    let mut cross_serving = 0.0;
    let mut cross_sum = 0.0;
    for l in 0..l_cells {
        let b = inp.beta(l, j, m);
        let check: f64 = (0..l_cells)
            .flat_map(|n| (0..k_users).map(move |p| (n, p)))
            .map(|(n, p)| inp.beta(l, n, p))
            .sum();
        let serving: f64 = (0..k_users).map(|k| inp.beta(l, l, k)).sum();
        cross_sq += b * b;
        cross_check += b * check;
        cross_serving += b * serving;
        cross_sum += b;
    }
    Ok(SpDlInterference {
        i0_to_i3: inv_m * (cross_serving + inp.sigma_sq),
        i4_data: a * (cross_sq + inv_m * cross_check),
        i4_noise: k_users as f64 * inp.sigma_sq * cross_sum * inv_m / (inp.c_u as f64 * inp.split.rho_p_sq),
    })
}

/// Finite-M DL SINR with SP estimates.
pub fn dl_sinr_sp_exact(inp: &MetricInputs, j: usize, m: usize) -> Result<f64> {
    let den = dl_interference_sp(inp, j, m)?.closed_form();
    Ok(ratio_or_inf(inp.beta(j, j, m).powi(2), den))
}

/// `M -> infinity` limit of the SP DL SINR.
pub fn dl_sinr_sp_asymptotic(inp: &MetricInputs, j: usize, m: usize) -> Result<f64> {
    inp.check_user(j, m)?;
    let den: f64 = (0..inp.cells()).map(|l| inp.beta(l, j, m).powi(2)).sum::<f64>() * inp.sp_leak();
    Ok(ratio_or_inf(inp.beta(j, j, m).powi(2), den))
}

/// SP MSE with the optimal split substituted symbolically.
pub fn mse_sp_optimal_closed_form(inp: &MetricInputs, j: usize, m: usize) -> Result<f64> {
    inp.check_user(j, m)?;
    let (l_cells, k_users) = (inp.cells(), inp.users_per_cell());
    let opt = optimal_power_split(inp.antennas, l_cells, k_users, inp.c_u)?;
    let c_u = inp.c_u as f64;
    let total: f64 = (0..l_cells)
        .flat_map(|l| (0..k_users).map(move |k| (l, k)))
        .map(|(l, k)| inp.beta(j, l, k))
        .sum();
    let dim = (inp.antennas + l_cells * k_users) as f64;
    Ok(total / (dim * c_u).sqrt() + inp.sigma_sq / (opt.rho_p_sq * c_u))
}

/// Asymptotic SP DL SINR with the optimal split substituted symbolically.
pub fn dl_sinr_sp_optimal_closed_form(inp: &MetricInputs, j: usize, m: usize) -> Result<f64> {
    inp.check_user(j, m)?;
    let (l_cells, k_users) = (inp.cells(), inp.users_per_cell());
    let dim = (inp.antennas + l_cells * k_users) as f64;
    let den: f64 = k_users as f64 * (0..l_cells).map(|l| inp.beta(l, j, m).powi(2)).sum::<f64>();
    Ok(ratio_or_inf((inp.c_u as f64 * dim).sqrt() * inp.beta(j, j, m).powi(2), den))
}

/// DL rate in bits/s/Hz: `C_d / (C_u + C_d) * log2(1 + SINR)`.
pub fn rate_dl(sinr: f64, c_u: usize, c_d: usize) -> Result<f64> {
    if !(sinr >= 0.0) {
        return Err(SimError::param(format!("SINR must be nonnegative, got {sinr}")));
    }
    if c_u + c_d == 0 {
        return Err(SimError::param("coherence interval must be positive"));
    }
    Ok(c_d as f64 / (c_u + c_d) as f64 * (1.0 + sinr).log2())
}

/// UL rate in bits/s/Hz for a user with `data_symbols` UL data symbols per
/// coherence interval of length `coherence`.
pub fn rate_ul(sinr: f64, data_symbols: usize, coherence: usize) -> Result<f64> {
    if !(sinr >= 0.0) {
        return Err(SimError::param(format!("SINR must be nonnegative, got {sinr}")));
    }
    if coherence == 0 || data_symbols > coherence {
        return Err(SimError::param("data symbols must fit in a positive coherence interval"));
    }
    Ok(data_symbols as f64 / coherence as f64 * (1.0 + sinr).log2())
}

/// Pilot scheme of a user in a hybrid system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Tp,
    Sp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridSinr {
    pub scheme: Scheme,
    pub ul: f64,
    pub dl: f64,
}

/// Large-M UL and DL SINRs of user `(j, m)` in a hybrid system where
/// `u_sp` holds the SP users and everybody else uses TP.
///
/// SP interference sums run over all of `u_sp`, including the user itself.
pub fn hybrid_sinrs(inp: &MetricInputs, u_sp: &BTreeSet<UserId>, j: usize, m: usize) -> Result<HybridSinr> {
    inp.check_user(j, m)?;
    if inp.tau >= inp.c_u {
        return Err(SimError::param(format!("hybrid frames need tau < C_u, got tau={}", inp.tau)));
    }
    let signal = inp.beta(j, j, m).powi(2);
    if u_sp.contains(&UserId::new(j, m)) {
        let norm = 1.0 / ((inp.c_u - inp.tau) as f64 * inp.split.rho_p_sq);
        let ul: f64 = u_sp.iter().map(|u| inp.beta(j, u.cell, u.user).powi(2)).sum::<f64>() * norm;
        let dl: f64 = u_sp.iter().map(|u| inp.beta(u.cell, j, m).powi(2)).sum::<f64>() * norm * inp.split.rho_d_sq;
        Ok(HybridSinr {
            scheme: Scheme::Sp,
            ul: ratio_or_inf(signal, ul),
            dl: ratio_or_inf(signal, dl),
        })
    } else {
        let ul: f64 = inp
            .co_pilot_cells(j)
            .filter(|&l| !u_sp.contains(&UserId::new(l, m)))
            .map(|l| inp.beta(j, l, m).powi(2))
            .sum();
        let dl: f64 = inp.co_pilot_cells(j).map(|l| inp.beta(l, j, m).powi(2)).sum();
        Ok(HybridSinr {
            scheme: Scheme::Tp,
            ul: ratio_or_inf(signal, ul),
            dl: ratio_or_inf(signal, dl),
        })
    }
}
