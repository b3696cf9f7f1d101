//! Cell layout, user placement, large-scale gains and Rayleigh channels.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::fill_complex_normal;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// A user, addressed by its serving cell and its index inside that cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId {
    pub cell: usize,
    pub user: usize,
}

impl UserId {
    pub fn new(cell: usize, user: usize) -> Self {
        UserId { cell, user }
    }

    /// Flat index `cell * users_per_cell + user`.
    pub fn flat(&self, users_per_cell: usize) -> usize {
        self.cell * users_per_cell + self.user
    }

    pub fn from_flat(index: usize, users_per_cell: usize) -> Self {
        UserId::new(index / users_per_cell, index % users_per_cell)
    }
}

/// Hexagonal cell centers (flat-top orientation), center cell first, then
/// ring by ring.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub centers: Vec<[f64; 2]>,
    /// Axial lattice coordinates `(q, r)` of each cell.
    pub axial: Vec<(i32, i32)>,
    pub cell_radius: f64,
    pub tiers: usize,
}

const AXIAL_DIRECTIONS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

/// Builds a 7-cell (one tier) or 19-cell (two tiers) hexagonal layout.
pub fn build_hex_grid(tiers: usize, cell_radius: f64) -> Result<CellGrid> {
    if !(1..=2).contains(&tiers) {
        return Err(SimError::param(format!("tiers must be 1 or 2, got {tiers}")));
    }
    if !(cell_radius > 0.0 && cell_radius.is_finite()) {
        return Err(SimError::param(format!("cell radius must be positive, got {cell_radius}")));
    }
    let mut axial = vec![(0, 0)];
    for ring in 1..=tiers as i32 {
        let (dq, dr) = AXIAL_DIRECTIONS[4];
        let mut cur = (dq * ring, dr * ring);
        for &(mq, mr) in &AXIAL_DIRECTIONS {
            for _ in 0..ring {
                axial.push(cur);
                cur = (cur.0 + mq, cur.1 + mr);
            }
        }
    }
    let centers = axial
        .iter()
        .map(|&(q, r)| {
            let (q, r) = (q as f64, r as f64);
            [cell_radius * 1.5 * q, cell_radius * SQRT3 * (r + q / 2.0)]
        })
        .collect();
    Ok(CellGrid {
        centers,
        axial,
        cell_radius,
        tiers,
    })
}

impl CellGrid {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Keeps only the first `cells` cells (center first, then inner rings).
    pub fn truncated(&self, cells: usize) -> Result<CellGrid> {
        if cells == 0 || cells > self.len() {
            return Err(SimError::param(format!(
                "cannot keep {cells} cells of a {}-cell grid",
                self.len()
            )));
        }
        Ok(CellGrid {
            centers: self.centers[..cells].to_vec(),
            axial: self.axial[..cells].to_vec(),
            cell_radius: self.cell_radius,
            tiers: self.tiers,
        })
    }

    /// Inradius of a cell (distance from center to the middle of an edge).
    pub fn inradius(&self) -> f64 {
        self.cell_radius * SQRT3 / 2.0
    }

    /// Point-in-hexagon test relative to the center of a flat-top cell.
    pub fn contains_offset(&self, dx: f64, dy: f64) -> bool {
        let r = self.cell_radius;
        dy.abs() <= SQRT3 / 2.0 * r && SQRT3 * dx.abs() + dy.abs() <= SQRT3 * r
    }
}

/// How users are placed inside their cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scenario {
    /// Uniform inside the hexagon, at least `min_dist` km from the BS.
    Uniform { min_dist: f64 },
    /// Equally spaced on a circle of `radius` km around the BS. With
    /// `inside_hexagon` set, radii beyond the hexagon inradius are rejected.
    Circle { radius: f64, inside_hexagon: bool },
}

/// User positions, indexed by flat user index `cell * K + user`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLayout {
    pub positions: Vec<[f64; 2]>,
    pub users_per_cell: usize,
    pub scenario: Scenario,
}

impl UserLayout {
    pub fn position(&self, cell: usize, user: usize) -> [f64; 2] {
        self.positions[cell * self.users_per_cell + user]
    }

    pub fn cells(&self) -> usize {
        self.positions.len() / self.users_per_cell
    }
}

/// Places `users_per_cell` users in every cell of `grid`.
///
/// The circle scenario is deterministic and consumes nothing from `rng`.
pub fn place_users<R: Rng + ?Sized>(
    grid: &CellGrid,
    users_per_cell: usize,
    scenario: Scenario,
    rng: &mut R,
) -> Result<UserLayout> {
    if users_per_cell == 0 {
        return Err(SimError::param("need at least one user per cell"));
    }
    let mut positions = Vec::with_capacity(grid.len() * users_per_cell);
    match scenario {
        Scenario::Uniform { min_dist } => {
            if !(min_dist > 0.0 && min_dist < grid.cell_radius) {
                return Err(SimError::param(format!(
                    "min_dist must be in (0, {}), got {min_dist}",
                    grid.cell_radius
                )));
            }
            let r = grid.cell_radius;
            let half_h = SQRT3 / 2.0 * r;
            for center in &grid.centers {
                for _ in 0..users_per_cell {
                    loop {
                        let dx = rng.random_range(-r..=r);
                        let dy = rng.random_range(-half_h..=half_h);
                        if grid.contains_offset(dx, dy) && dx.hypot(dy) >= min_dist {
                            positions.push([center[0] + dx, center[1] + dy]);
                            break;
                        }
                    }
                }
            }
        }
        Scenario::Circle {
            radius,
            inside_hexagon,
        } => {
            if !(radius > 0.0 && radius <= grid.cell_radius) {
                return Err(SimError::param(format!(
                    "circle radius must be in (0, {}], got {radius}",
                    grid.cell_radius
                )));
            }
            if inside_hexagon && radius > grid.inradius() {
                return Err(SimError::param(format!(
                    "circle radius {radius} leaves the hexagon (inradius {})",
                    grid.inradius()
                )));
            }
            for center in &grid.centers {
                for k in 0..users_per_cell {
                    let angle = 2.0 * std::f64::consts::PI * k as f64 / users_per_cell as f64;
                    positions.push([center[0] + radius * angle.cos(), center[1] + radius * angle.sin()]);
                }
            }
        }
    }
    Ok(UserLayout {
        positions,
        users_per_cell,
        scenario,
    })
}

/// Distance-based path loss `distance^(-exponent)` with a 1 km reference.
pub fn raw_path_loss(distance: f64, exponent: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(SimError::NonPositiveDistance(distance));
    }
    Ok(distance.powf(-exponent))
}

/// Raw large-scale gains `beta[j][l][k]` from BS `j` to user `(l, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGains {
    cells: usize,
    users_per_cell: usize,
    values: Vec<f64>,
}

impl RawGains {
    pub fn from_fn(cells: usize, users_per_cell: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(cells * cells * users_per_cell);
        for j in 0..cells {
            for l in 0..cells {
                for k in 0..users_per_cell {
                    values.push(f(j, l, k));
                }
            }
        }
        RawGains {
            cells,
            users_per_cell,
            values,
        }
    }

    /// Gains implied by a grid and a user layout.
    pub fn from_layout(grid: &CellGrid, layout: &UserLayout, exponent: f64) -> Result<Self> {
        let cells = layout.cells();
        if cells > grid.len() {
            return Err(SimError::DimensionMismatch {
                what: "layout cells vs grid cells",
                expected: grid.len(),
                actual: cells,
            });
        }
        let mut values = Vec::with_capacity(cells * cells * layout.users_per_cell);
        for j in 0..cells {
            let bs = grid.centers[j];
            for l in 0..cells {
                for k in 0..layout.users_per_cell {
                    let p = layout.position(l, k);
                    values.push(raw_path_loss((p[0] - bs[0]).hypot(p[1] - bs[1]), exponent)?);
                }
            }
        }
        Ok(RawGains {
            cells,
            users_per_cell: layout.users_per_cell,
            values,
        })
    }

    pub fn get(&self, j: usize, l: usize, k: usize) -> f64 {
        self.values[(j * self.cells + l) * self.users_per_cell + k]
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users_per_cell
    }

    pub fn scaled(&self, c: f64) -> RawGains {
        RawGains {
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

/// Effective gains after statistics-aware power control.
///
/// User `(l, k)` transmits with power `omega_{l,k} / beta_raw[l][l][k]`, so
/// `beta[j][l][k] = omega_{l,k} * beta_raw[j][l][k] / beta_raw[l][l][k]` and
/// every serving link has gain exactly `omega_{l,k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTensor {
    cells: usize,
    users_per_cell: usize,
    beta: Vec<f64>,
    omega: Vec<f64>,
}

/// Applies power control with a common design parameter `omega`.
pub fn apply_power_control(raw: &RawGains, omega: f64) -> Result<GainTensor> {
    let omegas = vec![omega; raw.cells * raw.users_per_cell];
    apply_power_control_per_user(raw, &omegas)
}

/// Applies power control with one design parameter per user (flat index).
pub fn apply_power_control_per_user(raw: &RawGains, omegas: &[f64]) -> Result<GainTensor> {
    let users = raw.cells * raw.users_per_cell;
    if omegas.len() != users {
        return Err(SimError::DimensionMismatch {
            what: "per-user omega",
            expected: users,
            actual: omegas.len(),
        });
    }
    if let Some(w) = omegas.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(SimError::param(format!("omega must be positive, got {w}")));
    }
    for l in 0..raw.cells {
        for k in 0..raw.users_per_cell {
            if !(raw.get(l, l, k) > 0.0) {
                return Err(SimError::ZeroServingGain { cell: l, user: k });
            }
        }
    }
    let beta = raw
        .values
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let k = idx % raw.users_per_cell;
            let l = (idx / raw.users_per_cell) % raw.cells;
            // Divide first: the ratio is exact under power-of-two rescaling.
            omegas[l * raw.users_per_cell + k] * (v / raw.get(l, l, k))
        })
        .collect();
    Ok(GainTensor {
        cells: raw.cells,
        users_per_cell: raw.users_per_cell,
        beta,
        omega: omegas.to_vec(),
    })
}

impl GainTensor {
    /// Builds a tensor directly from effective gains (used for synthetic
    /// instances). Serving gains define the per-user omega.
    pub fn from_fn(cells: usize, users_per_cell: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let raw = RawGains::from_fn(cells, users_per_cell, &mut f);
        if let Some(v) = raw.values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(SimError::param(format!("gains must be finite and nonnegative, got {v}")));
        }
        let omega = (0..cells * users_per_cell)
            .map(|u| {
                let (l, k) = (u / users_per_cell, u % users_per_cell);
                raw.get(l, l, k)
            })
            .collect();
        Ok(GainTensor {
            cells,
            users_per_cell,
            beta: raw.values,
            omega,
        })
    }

    pub fn get(&self, j: usize, l: usize, k: usize) -> f64 {
        self.beta[(j * self.cells + l) * self.users_per_cell + k]
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users_per_cell
    }

    pub fn users(&self) -> usize {
        self.cells * self.users_per_cell
    }

    pub fn omega(&self, l: usize, k: usize) -> f64 {
        self.omega[l * self.users_per_cell + k]
    }

    /// Rescales the gains of each user `(l, k)` (towards every BS) so that its
    /// serving gain becomes `omegas[flat]`.
    pub fn with_user_omegas(&self, omegas: &[f64]) -> Result<GainTensor> {
        let raw = RawGains {
            cells: self.cells,
            users_per_cell: self.users_per_cell,
            values: self.beta.clone(),
        };
        apply_power_control_per_user(&raw, omegas)
    }
}

/// Small-scale channel vectors `h[j][l][k]` in C^M.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    cells: usize,
    users_per_cell: usize,
    antennas: usize,
    h: Vec<Complex64>,
}

/// Draws i.i.d. `CN(0, beta[j][l][k] I_M)` channel vectors.
pub fn draw_channels<R: Rng + ?Sized>(gains: &GainTensor, antennas: usize, rng: &mut R) -> Result<ChannelRealization> {
    if antennas == 0 {
        return Err(SimError::param("need at least one antenna"));
    }
    let links = gains.cells * gains.cells * gains.users_per_cell;
    let mut h = vec![Complex64::new(0.0, 0.0); links * antennas];
    for (link, chunk) in h.chunks_mut(antennas).enumerate() {
        fill_complex_normal(rng, gains.beta[link], chunk);
    }
    Ok(ChannelRealization {
        cells: gains.cells,
        users_per_cell: gains.users_per_cell,
        antennas,
        h,
    })
}

impl ChannelRealization {
    /// Builds a realization from explicit vectors, ordered `[j][l][k]`.
    pub fn from_vectors(cells: usize, users_per_cell: usize, antennas: usize, vectors: Vec<Vec<Complex64>>) -> Result<Self> {
        let links = cells * cells * users_per_cell;
        if vectors.len() != links {
            return Err(SimError::DimensionMismatch {
                what: "channel vectors",
                expected: links,
                actual: vectors.len(),
            });
        }
        let mut h = Vec::with_capacity(links * antennas);
        for v in vectors {
            if v.len() != antennas {
                return Err(SimError::DimensionMismatch {
                    what: "channel vector length",
                    expected: antennas,
                    actual: v.len(),
                });
            }
            h.extend(v);
        }
        Ok(ChannelRealization {
            cells,
            users_per_cell,
            antennas,
            h,
        })
    }

    /// Channel between BS `j` and user `(l, k)`.
    pub fn link(&self, j: usize, l: usize, k: usize) -> &[Complex64] {
        let idx = (j * self.cells + l) * self.users_per_cell + k;
        &self.h[idx * self.antennas..(idx + 1) * self.antennas]
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users_per_cell
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    #[test]
    fn one_tier_grid_spacing() {
        let g = build_hex_grid(1, 1.0).unwrap();
        assert_eq!(g.len(), 7);
        assert_eq!(g.centers[0], [0.0, 0.0]);
        for c in &g.centers[1..] {
            assert!((dist(*c, [0.0, 0.0]) - 3f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_tier_grid_has_19_distinct_cells() {
        let g = build_hex_grid(2, 1.0).unwrap();
        assert_eq!(g.len(), 19);
        for a in 0..19 {
            let nearest = (0..19)
                .filter(|&b| b != a)
                .map(|b| dist(g.centers[a], g.centers[b]))
                .fold(f64::INFINITY, f64::min);
            assert!((nearest - 3f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_scales_linearly() {
        let g = build_hex_grid(1, 0.5).unwrap();
        assert!((dist(g.centers[1], g.centers[0]) - 3f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_bad_tiers() {
        assert!(build_hex_grid(0, 1.0).is_err());
        assert!(build_hex_grid(3, 1.0).is_err());
        assert!(build_hex_grid(1, 0.0).is_err());
    }

    #[test]
    fn circle_layout_is_equally_spaced() {
        let g = build_hex_grid(1, 1.0).unwrap();
        let mut rng = stream(1, Domain::Layout, 0);
        let lay = place_users(&g, 5, Scenario::Circle { radius: 0.8, inside_hexagon: false }, &mut rng).unwrap();
        for l in 0..7 {
            for k in 0..5 {
                let p = lay.position(l, k);
                let (dx, dy) = (p[0] - g.centers[l][0], p[1] - g.centers[l][1]);
                assert!((dx.hypot(dy) - 0.8).abs() < 1e-12);
                let angle = dy.atan2(dx).rem_euclid(2.0 * std::f64::consts::PI);
                let expected = 2.0 * std::f64::consts::PI * k as f64 / 5.0;
                assert!((angle - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_circle_user_sits_at_angle_zero() {
        let g = build_hex_grid(1, 1.0).unwrap();
        let mut rng = stream(1, Domain::Layout, 0);
        let lay = place_users(&g, 1, Scenario::Circle { radius: 0.3, inside_hexagon: true }, &mut rng).unwrap();
        assert_eq!(lay.position(0, 0), [0.3, 0.0]);
    }

    #[test]
    fn circle_layout_ignores_seed() {
        let g = build_hex_grid(1, 1.0).unwrap();
        let sc = Scenario::Circle { radius: 0.8, inside_hexagon: false };
        let a = place_users(&g, 5, sc, &mut stream(1, Domain::Layout, 0)).unwrap();
        let b = place_users(&g, 5, sc, &mut stream(2, Domain::Layout, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn circle_outside_hexagon_rejected_when_enforced() {
        let g = build_hex_grid(1, 1.0).unwrap();
        let mut rng = stream(1, Domain::Layout, 0);
        assert!(place_users(&g, 5, Scenario::Circle { radius: 0.9, inside_hexagon: true }, &mut rng).is_err());
        assert!(place_users(&g, 5, Scenario::Circle { radius: 0.9, inside_hexagon: false }, &mut rng).is_ok());
        assert!(place_users(&g, 5, Scenario::Circle { radius: 1.1, inside_hexagon: false }, &mut rng).is_err());
    }

    #[test]
    fn uniform_layout_respects_min_distance_and_cell() {
        let g = build_hex_grid(1, 1.0).unwrap();
        let mut rng = stream(3, Domain::Layout, 0);
        let lay = place_users(&g, 50, Scenario::Uniform { min_dist: 0.1 }, &mut rng).unwrap();
        for l in 0..7 {
            for k in 0..50 {
                let p = lay.position(l, k);
                let (dx, dy) = (p[0] - g.centers[l][0], p[1] - g.centers[l][1]);
                assert!(dx.hypot(dy) >= 0.1);
                assert!(g.contains_offset(dx, dy));
            }
        }
    }

    #[test]
    fn path_loss_values() {
        assert_eq!(raw_path_loss(1.0, 3.0).unwrap(), 1.0);
        assert_eq!(raw_path_loss(0.5, 3.0).unwrap(), 8.0);
        assert!((raw_path_loss(0.8, 3.0).unwrap() - 1.953125).abs() < 1e-12);
        assert!(raw_path_loss(0.0, 3.0).is_err());
    }

    #[test]
    fn power_control_ratio() {
        let raw = RawGains::from_fn(2, 1, |j, l, _| if j == l { 4.0 } else { 1.0 });
        let g = apply_power_control(&raw, 1.0).unwrap();
        assert_eq!(g.get(0, 0, 0), 1.0);
        assert_eq!(g.get(1, 0, 0), 0.25);
        let raw = RawGains::from_fn(2, 1, |_, _, _| 3.0);
        let g = apply_power_control(&raw, 10.0).unwrap();
        assert_eq!(g.get(1, 0, 0), 10.0);
    }

    #[test]
    fn power_control_rejects_zero_serving_gain() {
        let raw = RawGains::from_fn(2, 1, |j, l, _| if j == l && l == 1 { 0.0 } else { 1.0 });
        assert!(matches!(apply_power_control(&raw, 1.0), Err(SimError::ZeroServingGain { cell: 1, user: 0 })));
    }

    #[test]
    fn zero_gain_gives_zero_channel() {
        let g = GainTensor::from_fn(1, 1, |_, _, _| 0.0).unwrap();
        let h = draw_channels(&g, 8, &mut stream(1, Domain::Trial, 0)).unwrap();
        assert!(h.link(0, 0, 0).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn channel_power_concentrates() {
        let g = GainTensor::from_fn(1, 1, |_, _, _| 1.0).unwrap();
        let h = draw_channels(&g, 10_000, &mut stream(5, Domain::Trial, 0)).unwrap();
        let p = crate::linalg::norm_sqr(h.link(0, 0, 0)) / 10_000.0;
        assert!((0.97..=1.03).contains(&p), "{p}");
    }

    #[test]
    fn channels_are_reproducible() {
        let g = GainTensor::from_fn(2, 2, |_, _, _| 0.5).unwrap();
        let a = draw_channels(&g, 16, &mut stream(9, Domain::Trial, 4)).unwrap();
        let b = draw_channels(&g, 16, &mut stream(9, Domain::Trial, 4)).unwrap();
        assert_eq!(a, b);
    }
}
