//! Pilot books, superimposed pilot matrices, power split and frame plans.

use std::collections::BTreeMap;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{CellGrid, UserId};

/// Square matrix with orthogonal unit-modulus columns, `Q^H Q = n I`.
///
/// Sylvester-Hadamard (real +-1) when `n` is a power of two, DFT otherwise.
pub fn orthogonal_columns(n: usize) -> Vec<Vec<Complex64>> {
    if n.is_power_of_two() {
        (0..n)
            .map(|col| {
                (0..n)
                    .map(|t| {
                        let sign = if (col & t).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                        Complex64::new(sign, 0.0)
                    })
                    .collect()
            })
            .collect()
    } else {
        (0..n)
            .map(|col| {
                (0..n)
                    .map(|t| {
                        // Reduce the exponent first to keep the phase argument small.
                        let e = (col * t) % n;
                        Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * e as f64 / n as f64)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Book of `tau` orthogonal training sequences of length `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    sequences: Vec<Vec<Complex64>>,
}

pub fn make_pilot_book(tau: usize) -> Result<PilotBook> {
    if tau == 0 {
        return Err(SimError::param("pilot length must be at least 1"));
    }
    Ok(PilotBook {
        sequences: orthogonal_columns(tau),
    })
}

impl PilotBook {
    /// Book with no sequences, for frames without TP users.
    pub fn empty() -> Self {
        PilotBook { sequences: Vec::new() }
    }

    pub fn tau(&self) -> usize {
        self.sequences.len()
    }

    pub fn sequence(&self, index: usize) -> Result<&[Complex64]> {
        self.sequences
            .get(index)
            .map(Vec::as_slice)
            .ok_or(SimError::UnknownPilot { index, tau: self.tau() })
    }
}

/// Orthogonal matrix whose columns are the superimposed pilots.
#[derive(Debug, Clone, PartialEq)]
pub struct SpPilotMatrix {
    columns: Vec<Vec<Complex64>>,
}

pub fn make_sp_pilot_matrix(length: usize) -> Result<SpPilotMatrix> {
    if length == 0 {
        return Err(SimError::param("superimposed pilot length must be at least 1"));
    }
    Ok(SpPilotMatrix {
        columns: orthogonal_columns(length),
    })
}

impl SpPilotMatrix {
    /// Matrix with no columns, for frames without SP users.
    pub fn empty() -> Self {
        SpPilotMatrix { columns: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, index: usize) -> Result<&[Complex64]> {
        self.columns.get(index).map(Vec::as_slice).ok_or_else(|| {
            SimError::param(format!(
                "superimposed pilot column {index} does not exist (matrix size {})",
                self.len()
            ))
        })
    }
}

/// Fractions of the UL power spent on data and on the superimposed pilot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSplit {
    pub rho_d_sq: f64,
    pub rho_p_sq: f64,
}

impl PowerSplit {
    /// Fixed split with data fraction `rho_d_sq` in `[0, 1)`.
    pub fn new(rho_d_sq: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho_d_sq) {
            return Err(SimError::param(format!("rho_d^2 must be in [0, 1), got {rho_d_sq}")));
        }
        Ok(PowerSplit {
            rho_d_sq,
            rho_p_sq: 1.0 - rho_d_sq,
        })
    }

    pub fn rho_d(&self) -> f64 {
        self.rho_d_sq.sqrt()
    }

    pub fn rho_p(&self) -> f64 {
        self.rho_p_sq.sqrt()
    }
}

/// Split maximizing the UL sum-rate lower bound:
/// `rho_d^2 = 1 / (1 + sqrt((M + LK) / C_u))`.
pub fn optimal_power_split(antennas: usize, cells: usize, users_per_cell: usize, c_u: usize) -> Result<PowerSplit> {
    if antennas == 0 || cells == 0 || users_per_cell == 0 || c_u == 0 {
        return Err(SimError::param("power split inputs must be at least 1"));
    }
    let ratio = (antennas + cells * users_per_cell) as f64 / c_u as f64;
    PowerSplit::new(1.0 / (1.0 + ratio.sqrt()))
}

/// Assignment of cells to pilot-reuse groups. Cells in the same group share
/// the same `K` pilots; different groups use disjoint parts of the book.
#[derive(Debug, Clone, PartialEq)]
pub struct ReuseSets {
    factor: usize,
    group: Vec<usize>,
}

impl ReuseSets {
    /// Every cell shares one pilot book.
    pub fn full_reuse(cells: usize) -> Self {
        ReuseSets {
            factor: 1,
            group: vec![0; cells],
        }
    }

    /// Colors the grid into `factor` groups with the lattice rule
    /// `(q + a s) mod factor`, choosing `a` so neighbors differ when possible.
    pub fn for_grid(grid: &CellGrid, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(SimError::param("reuse factor must be at least 1"));
        }
        if factor == 1 {
            return Ok(Self::full_reuse(grid.len()));
        }
        let a = (1..factor as i64)
            .find(|a| a % factor as i64 != 0 && (a - 1) % factor as i64 != 0)
            .unwrap_or(1);
        let group = grid
            .axial
            .iter()
            .map(|&(q, s)| (q as i64 + a * s as i64).rem_euclid(factor as i64) as usize)
            .collect();
        Ok(ReuseSets { factor, group })
    }

    pub fn from_groups(factor: usize, group: Vec<usize>) -> Result<Self> {
        if let Some(g) = group.iter().find(|&&g| g >= factor) {
            return Err(SimError::param(format!("group {g} outside reuse factor {factor}")));
        }
        Ok(ReuseSets { factor, group })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn cells(&self) -> usize {
        self.group.len()
    }

    pub fn group(&self, cell: usize) -> usize {
        self.group[cell]
    }

    /// Whether cells `a` and `b` use the same pilots.
    pub fn shares_pilots(&self, a: usize, b: usize) -> bool {
        self.group[a] == self.group[b]
    }

    /// TP pilot index of user `(cell, user)`: `group * K + user`.
    pub fn pilot_index(&self, cell: usize, user: usize, users_per_cell: usize) -> usize {
        self.group[cell] * users_per_cell + user
    }
}

/// Which pilot scheme the whole system uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameKind {
    TimeMultiplexed,
    Superimposed,
    Hybrid,
}

/// Per-user pilot role.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PilotRole {
    /// Pilot `pilot` from the book over `[0, tau)`, then data at power `data_power`.
    Tp { pilot: usize, data_power: f64 },
    /// Superimposed pilot column `column` under data.
    Sp { column: usize },
}

/// Per-user pilot assignment and frame timing.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePlan {
    kind: FrameKind,
    roles: Vec<PilotRole>,
    users_per_cell: usize,
    tau: usize,
    c_u: usize,
    c_d: usize,
}

impl FramePlan {
    /// General constructor; validates timing and pilot collisions.
    pub fn new(
        kind: FrameKind,
        roles: Vec<PilotRole>,
        users_per_cell: usize,
        tau: usize,
        c_u: usize,
        c_d: usize,
        reuse: &ReuseSets,
    ) -> Result<Self> {
        if users_per_cell == 0 || roles.len() % users_per_cell != 0 {
            return Err(SimError::param("roles must cover whole cells"));
        }
        if c_u == 0 || c_d == 0 {
            return Err(SimError::param("frame lengths must be at least 1"));
        }
        let has_tp = roles.iter().any(|r| matches!(r, PilotRole::Tp { .. }));
        let has_sp = roles.iter().any(|r| matches!(r, PilotRole::Sp { .. }));
        match kind {
            FrameKind::TimeMultiplexed if has_sp => return Err(SimError::param("TP frame plan with an SP user")),
            FrameKind::Superimposed if has_tp => return Err(SimError::param("SP frame plan with a TP user")),
            _ => {}
        }
        if kind != FrameKind::Superimposed && (tau == 0 || tau >= c_u) {
            return Err(SimError::param(format!("need 1 <= tau < C_u, got tau={tau}, C_u={c_u}")));
        }
        let sp_len = match kind {
            FrameKind::Superimposed => c_u,
            _ => c_u.saturating_sub(tau),
        };
        let mut used_pilots: BTreeMap<(usize, usize), UserId> = BTreeMap::new();
        let mut used_columns: BTreeMap<usize, UserId> = BTreeMap::new();
        for (u, role) in roles.iter().enumerate() {
            let id = UserId::from_flat(u, users_per_cell);
            match *role {
                PilotRole::Tp { pilot, data_power } => {
                    if pilot >= tau {
                        return Err(SimError::UnknownPilot { index: pilot, tau });
                    }
                    if !(data_power >= 0.0 && data_power.is_finite()) {
                        return Err(SimError::param(format!("TP data power must be nonnegative, got {data_power}")));
                    }
                    let group = reuse.group(id.cell);
                    if used_pilots.insert((id.cell, pilot), id).is_some() {
                        return Err(SimError::PilotCollision { group, pilot });
                    }
                }
                PilotRole::Sp { column } => {
                    if column >= sp_len {
                        return Err(SimError::param(format!(
                            "superimposed pilot column {column} needs a frame window longer than {sp_len}"
                        )));
                    }
                    if used_columns.insert(column, id).is_some() {
                        return Err(SimError::param(format!("superimposed pilot column {column} assigned twice")));
                    }
                }
            }
        }
        Ok(FramePlan {
            kind,
            roles,
            users_per_cell,
            tau,
            c_u,
            c_d,
        })
    }

    /// Every user sends TP pilot `group * K + k` and data at `data_power`.
    pub fn time_multiplexed(
        cells: usize,
        users_per_cell: usize,
        reuse: &ReuseSets,
        c_u: usize,
        c_d: usize,
        data_power: f64,
    ) -> Result<Self> {
        let tau = reuse.factor() * users_per_cell;
        let roles = (0..cells * users_per_cell)
            .map(|u| {
                let id = UserId::from_flat(u, users_per_cell);
                PilotRole::Tp {
                    pilot: reuse.pilot_index(id.cell, id.user, users_per_cell),
                    data_power,
                }
            })
            .collect();
        FramePlan::new(FrameKind::TimeMultiplexed, roles, users_per_cell, tau, c_u, c_d, reuse)
    }

    /// Every user superimposes pilot column `l * K + k` over the whole frame.
    pub fn superimposed(cells: usize, users_per_cell: usize, c_u: usize, c_d: usize) -> Result<Self> {
        let roles = (0..cells * users_per_cell).map(|u| PilotRole::Sp { column: u }).collect();
        FramePlan::new(
            FrameKind::Superimposed,
            roles,
            users_per_cell,
            0,
            c_u,
            c_d,
            &ReuseSets::full_reuse(cells),
        )
    }

    /// Users flagged by `is_sp` stay silent for `tau` symbols and then
    /// superimpose column `l * K + k` of a `(C_u - tau)` matrix; the rest use TP.
    pub fn hybrid(
        cells: usize,
        users_per_cell: usize,
        reuse: &ReuseSets,
        c_u: usize,
        c_d: usize,
        data_power: f64,
        is_sp: impl Fn(UserId) -> bool,
    ) -> Result<Self> {
        let tau = reuse.factor() * users_per_cell;
        let roles = (0..cells * users_per_cell)
            .map(|u| {
                let id = UserId::from_flat(u, users_per_cell);
                if is_sp(id) {
                    PilotRole::Sp { column: u }
                } else {
                    PilotRole::Tp {
                        pilot: reuse.pilot_index(id.cell, id.user, users_per_cell),
                        data_power,
                    }
                }
            })
            .collect();
        FramePlan::new(FrameKind::Hybrid, roles, users_per_cell, tau, c_u, c_d, reuse)
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    pub fn role(&self, id: UserId) -> PilotRole {
        self.roles[id.flat(self.users_per_cell)]
    }

    pub fn roles(&self) -> &[PilotRole] {
        &self.roles
    }

    pub fn users_per_cell(&self) -> usize {
        self.users_per_cell
    }

    pub fn users(&self) -> usize {
        self.roles.len()
    }

    pub fn cells(&self) -> usize {
        self.roles.len() / self.users_per_cell
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn c_u(&self) -> usize {
        self.c_u
    }

    pub fn c_d(&self) -> usize {
        self.c_d
    }

    /// Coherence interval `C = C_u + C_d`.
    pub fn coherence(&self) -> usize {
        self.c_u + self.c_d
    }

    /// Symbols carrying superimposed pilots.
    pub fn sp_window(&self) -> Range<usize> {
        match self.kind {
            FrameKind::Superimposed => 0..self.c_u,
            _ => self.tau..self.c_u,
        }
    }

    /// Symbols carrying UL data for a user.
    pub fn data_window(&self, id: UserId) -> Range<usize> {
        match self.role(id) {
            PilotRole::Tp { .. } => self.tau..self.c_u,
            PilotRole::Sp { .. } => self.sp_window(),
        }
    }

    pub fn is_sp(&self, id: UserId) -> bool {
        matches!(self.role(id), PilotRole::Sp { .. })
    }
}

/// Builds every user's `C_u`-symbol UL transmit vector.
///
/// `data[u]` must hold exactly `data_window(u).len()` symbols. SP users
/// transmit `rho_d x + rho_p p` over their window, TP users `[phi, sqrt(lambda) x]`.
pub fn assemble_frames(
    plan: &FramePlan,
    data: &[Vec<Complex64>],
    book: &PilotBook,
    sp: &SpPilotMatrix,
    split: PowerSplit,
) -> Result<Vec<Vec<Complex64>>> {
    if data.len() != plan.users() {
        return Err(SimError::DimensionMismatch {
            what: "per-user data streams",
            expected: plan.users(),
            actual: data.len(),
        });
    }
    let has_sp = plan.roles.iter().any(|r| matches!(r, PilotRole::Sp { .. }));
    if has_sp && sp.len() != plan.sp_window().len() {
        return Err(SimError::DimensionMismatch {
            what: "superimposed pilot length",
            expected: plan.sp_window().len(),
            actual: sp.len(),
        });
    }
    if plan.kind != FrameKind::Superimposed && book.tau() != plan.tau {
        return Err(SimError::DimensionMismatch {
            what: "pilot book length",
            expected: plan.tau,
            actual: book.tau(),
        });
    }
    let (rho_d, rho_p) = (split.rho_d(), split.rho_p());
    let zero = Complex64::new(0.0, 0.0);
    let mut frames = Vec::with_capacity(plan.users());
    for (u, x) in data.iter().enumerate() {
        let id = UserId::from_flat(u, plan.users_per_cell);
        let window = plan.data_window(id);
        if x.len() != window.len() {
            return Err(SimError::DimensionMismatch {
                what: "user data length",
                expected: window.len(),
                actual: x.len(),
            });
        }
        let mut s = vec![zero; plan.c_u];
        match plan.role(id) {
            PilotRole::Tp { pilot, data_power } => {
                s[..plan.tau].copy_from_slice(book.sequence(pilot)?);
                let amp = data_power.sqrt();
                for (dst, xi) in s[window].iter_mut().zip(x) {
                    *dst = amp * xi;
                }
            }
            PilotRole::Sp { column } => {
                let p = sp.column(column)?;
                for ((dst, xi), pi) in s[window].iter_mut().zip(x).zip(p) {
                    *dst = rho_d * xi + rho_p * pi;
                }
            }
        }
        frames.push(s);
    }
    Ok(frames)
}
