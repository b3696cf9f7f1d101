//! Interference-cost model and TP/SP user partitioning for hybrid systems.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{GainTensor, UserId};
use crate::pilots::{PowerSplit, ReuseSets};

/// Largest instance the exhaustive search accepts.
pub const BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub xi_ul: f64,
    pub xi_dl: f64,
}

impl CostWeights {
    pub fn new(xi_ul: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&xi_ul) {
            return Err(SimError::param(format!("xi_ul must be in [0, 1], got {xi_ul}")));
        }
        Ok(CostWeights {
            xi_ul,
            xi_dl: 1.0 - xi_ul,
        })
    }
}

/// Outcome of a partitioning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub u_tp: BTreeSet<UserId>,
    pub u_sp: BTreeSet<UserId>,
    /// `(step, total cost)` after initialization and after each accepted move.
    pub cost_trace: Vec<(usize, f64)>,
    /// Users moved to SP, in move order.
    pub moves: Vec<UserId>,
    pub final_cost: f64,
}

impl PartitionResult {
    pub fn is_sp(&self, id: UserId) -> bool {
        self.u_sp.contains(&id)
    }
}

/// Gains, pilot reuse and frame timing that define the costs.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionProblem {
    pub gains: GainTensor,
    pub reuse: ReuseSets,
    pub c_u: usize,
    pub tau: usize,
    pub split: PowerSplit,
    pub weights: CostWeights,
}

impl PartitionProblem {
    pub fn new(
        gains: GainTensor,
        reuse: ReuseSets,
        c_u: usize,
        tau: usize,
        split: PowerSplit,
        weights: CostWeights,
    ) -> Result<Self> {
        if tau >= c_u {
            return Err(SimError::param(format!("partitioning needs tau < C_u, got tau={tau}, C_u={c_u}")));
        }
        if reuse.cells() != gains.cells() {
            return Err(SimError::DimensionMismatch {
                what: "reuse sets",
                expected: gains.cells(),
                actual: reuse.cells(),
            });
        }
        Ok(PartitionProblem {
            gains,
            reuse,
            c_u,
            tau,
            split,
            weights,
        })
    }

    pub fn users(&self) -> Vec<UserId> {
        let k = self.gains.users_per_cell();
        (0..self.gains.users()).map(|u| UserId::from_flat(u, k)).collect()
    }

    /// UL (= DL) TP interference of `id` against co-pilot users in `u_tp`.
    pub fn tp_interference(&self, id: UserId, u_tp: &BTreeSet<UserId>) -> f64 {
        let (j, m) = (id.cell, id.user);
        (0..self.gains.cells())
            .filter(|&l| l != j && self.reuse.shares_pilots(l, j) && u_tp.contains(&UserId::new(l, m)))
            .map(|l| self.gains.get(l, j, m).powi(2))
            .sum()
    }

    /// UL SP interference of `id` against every user in `u_sp`.
    pub fn sp_interference_ul(&self, id: UserId, u_sp: &BTreeSet<UserId>) -> f64 {
        let norm = 1.0 / ((self.c_u - self.tau) as f64 * self.split.rho_p_sq);
        norm * u_sp
            .iter()
            .map(|u| self.gains.get(u.cell, id.cell, id.user).powi(2))
            .sum::<f64>()
    }

    /// `T^TP`: weighted UL and DL cost of keeping `id` on TP.
    pub fn cost_tp(&self, id: UserId, u_tp: &BTreeSet<UserId>) -> f64 {
        let i = self.tp_interference(id, u_tp);
        self.weights.xi_ul * i + self.weights.xi_dl * i
    }

    /// `T^SP`: weighted UL and DL cost of putting `id` on SP.
    pub fn cost_sp(&self, id: UserId, u_sp: &BTreeSet<UserId>) -> f64 {
        let ul = self.sp_interference_ul(id, u_sp);
        self.weights.xi_ul * ul + self.weights.xi_dl * self.split.rho_d_sq * ul
    }

    /// Total cost of a partition.
    pub fn total_cost(&self, u_tp: &BTreeSet<UserId>, u_sp: &BTreeSet<UserId>) -> f64 {
        u_tp.iter().map(|&id| self.cost_tp(id, u_tp)).sum::<f64>()
            + u_sp.iter().map(|&id| self.cost_sp(id, u_sp)).sum::<f64>()
    }

    fn check_partition(&self, u_tp: &BTreeSet<UserId>, u_sp: &BTreeSet<UserId>) -> Result<()> {
        let all: BTreeSet<UserId> = self.users().into_iter().collect();
        let union: BTreeSet<UserId> = u_tp.union(u_sp).copied().collect();
        if u_tp.intersection(u_sp).next().is_some() || union != all {
            return Err(SimError::param("U_TP and U_SP must partition the user set"));
        }
        Ok(())
    }

    /// Checked form of [`Self::total_cost`].
    pub fn checked_total_cost(&self, u_tp: &BTreeSet<UserId>, u_sp: &BTreeSet<UserId>) -> Result<f64> {
        self.check_partition(u_tp, u_sp)?;
        Ok(self.total_cost(u_tp, u_sp))
    }
}

/// Greedy partition: repeatedly move the TP user with the largest `T^TP`
/// to SP while the total cost does not increase.
pub fn greedy_partition(problem: &PartitionProblem) -> PartitionResult {
    let mut u_tp: BTreeSet<UserId> = problem.users().into_iter().collect();
    let mut u_sp = BTreeSet::new();
    let mut cost = problem.total_cost(&u_tp, &u_sp);
    let mut trace = vec![(0, cost)];
    let mut moves = Vec::new();
    let max_steps = u_tp.len();
    for step in 1..=max_steps {
        // BTreeSet iterates in (cell, user) order, so `>` keeps the lowest index on ties.
        let mut best: Option<(UserId, f64)> = None;
        for &id in &u_tp {
            let t = problem.cost_tp(id, &u_tp);
            if best.is_none_or(|(_, b)| t > b) {
                best = Some((id, t));
            }
        }
        let Some((pick, _)) = best else { break };
        let mut next_tp = u_tp.clone();
        next_tp.remove(&pick);
        let mut next_sp = u_sp.clone();
        next_sp.insert(pick);
        let next_cost = problem.total_cost(&next_tp, &next_sp);
        if next_cost > cost {
            break;
        }
        u_tp = next_tp;
        u_sp = next_sp;
        cost = next_cost;
        trace.push((step, cost));
        moves.push(pick);
    }
    PartitionResult {
        u_tp,
        u_sp,
        cost_trace: trace,
        moves,
        final_cost: cost,
    }
}

/// Exhaustive minimum over all `2^|U|` partitions. Ties go to the
/// lexicographically smallest `U_SP`.
pub fn brute_force_partition(problem: &PartitionProblem) -> Result<PartitionResult> {
    let users = problem.users();
    let n = users.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(SimError::InstanceTooLarge {
            users: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut best: Option<(f64, Vec<UserId>)> = None;
    for mask in 0u32..(1u32 << n) {
        let (mut u_tp, mut u_sp) = (BTreeSet::new(), BTreeSet::new());
        for (i, &id) in users.iter().enumerate() {
            if mask >> i & 1 == 1 {
                u_sp.insert(id);
            } else {
                u_tp.insert(id);
            }
        }
        let cost = problem.total_cost(&u_tp, &u_sp);
        let sp_list: Vec<UserId> = u_sp.into_iter().collect();
        let better = match &best {
            None => true,
            Some((c, l)) => cost < *c || (cost == *c && sp_list < *l),
        };
        if better {
            best = Some((cost, sp_list));
        }
    }
    let (cost, sp_list) = best.expect("at least one partition");
    let u_sp: BTreeSet<UserId> = sp_list.iter().copied().collect();
    let u_tp = users.into_iter().filter(|u| !u_sp.contains(u)).collect();
    Ok(PartitionResult {
        u_tp,
        u_sp,
        cost_trace: vec![(0, cost)],
        moves: sp_list,
        final_cost: cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    fn problem(gains: GainTensor, reuse: ReuseSets, rho_d_sq: f64, xi_ul: f64) -> PartitionProblem {
        PartitionProblem::new(gains, reuse, 40, 5, PowerSplit::new(rho_d_sq).unwrap(), CostWeights::new(xi_ul).unwrap()).unwrap()
    }

    fn two_cell(cross: f64) -> PartitionProblem {
        let g = GainTensor::from_fn(2, 1, |j, l, _| if j == l { 1.0 } else { cross }).unwrap();
        problem(g, ReuseSets::full_reuse(2), 0.5, 0.5)
    }

    fn set(ids: &[(usize, usize)]) -> BTreeSet<UserId> {
        ids.iter().map(|&(c, u)| UserId::new(c, u)).collect()
    }

    #[test]
    fn tp_cost_examples() {
        let p = two_cell(0.5);
        let id = UserId::new(0, 0);
        assert_eq!(p.cost_tp(id, &set(&[(0, 0)])), 0.0);
        assert!((p.cost_tp(id, &set(&[(0, 0), (1, 0)])) - 0.25).abs() < 1e-15);
        let scaled = problem(
            GainTensor::from_fn(2, 1, |j, l, _| 3.0 * if j == l { 1.0 } else { 0.5 }).unwrap(),
            ReuseSets::full_reuse(2),
            0.5,
            0.5,
        );
        let all = set(&[(0, 0), (1, 0)]);
        assert!((scaled.cost_tp(id, &all) - 9.0 * p.cost_tp(id, &all)).abs() < 1e-14);
    }

    #[test]
    fn sp_cost_examples() {
        let g = GainTensor::from_fn(2, 1, |_, _, _| 1.0).unwrap();
        let p = problem(g, ReuseSets::full_reuse(2), 0.5, 1.0);
        let id = UserId::new(0, 0);
        assert_eq!(p.cost_sp(id, &BTreeSet::new()), 0.0);
        let ul = p.sp_interference_ul(id, &set(&[(1, 0)]));
        assert!((ul - 1.0 / 17.5).abs() < 1e-15);
        assert!((p.cost_sp(id, &set(&[(1, 0)])) - ul).abs() < 1e-15);
        let dl_only = problem(p.gains.clone(), ReuseSets::full_reuse(2), 0.5, 0.0);
        assert!((dl_only.cost_sp(id, &set(&[(1, 0)])) / ul - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tau_must_be_shorter_than_frame() {
        let g = GainTensor::from_fn(1, 1, |_, _, _| 1.0).unwrap();
        let r = PartitionProblem::new(g, ReuseSets::full_reuse(1), 5, 5, PowerSplit::new(0.5).unwrap(), CostWeights::new(0.5).unwrap());
        assert!(r.is_err());
        assert!(CostWeights::new(1.5).is_err());
    }

    #[test]
    fn total_cost_examples() {
        let g = GainTensor::from_fn(2, 2, |j, l, _| if j == l { 1.0 } else { 0.4 }).unwrap();
        let isolated = problem(g, ReuseSets::from_groups(2, vec![0, 1]).unwrap(), 0.5, 0.5);
        let all: BTreeSet<UserId> = isolated.users().into_iter().collect();
        assert_eq!(isolated.total_cost(&all, &BTreeSet::new()), 0.0);
        let one = problem(GainTensor::from_fn(1, 1, |_, _, _| 1.0).unwrap(), ReuseSets::full_reuse(1), 0.5, 0.5);
        let sp = set(&[(0, 0)]);
        assert_eq!(one.total_cost(&BTreeSet::new(), &sp), one.cost_sp(UserId::new(0, 0), &sp));
        assert!(one.checked_total_cost(&sp, &sp).is_err());
    }

    #[test]
    fn isolated_cells_never_move() {
        let g = GainTensor::from_fn(3, 2, |j, l, _| if j == l { 1.0 } else { 0.0 }).unwrap();
        let r = greedy_partition(&problem(g, ReuseSets::full_reuse(3), 0.5, 0.5));
        assert!(r.u_sp.is_empty());
        assert_eq!(r.final_cost, 0.0);
    }

    #[test]
    fn symmetric_two_cell_table() {
        // Hand table for cross gain c = 10, rho_d^2 = 0.5, C_u - tau = 35, xi = 0.5:
        //   w = (0.5 + 0.5 * 0.5) / (35 * 0.5) = 3/70
        //   {TP,TP}: 2 c^2 = 200
        //   {SP,TP} or {TP,SP}: w * 1
        //   {SP,SP}: 2 w (1 + c^2) = 202 w
        let p = two_cell(10.0);
        let w = 0.75 / 17.5;
        let (a, b) = (UserId::new(0, 0), UserId::new(1, 0));
        let cases = [
            (set(&[(0, 0), (1, 0)]), BTreeSet::new(), 200.0),
            (set(&[(1, 0)]), set(&[(0, 0)]), w),
            (set(&[(0, 0)]), set(&[(1, 0)]), w),
            (BTreeSet::new(), set(&[(0, 0), (1, 0)]), 202.0 * w),
        ];
        for (tp, sp, expected) in &cases {
            assert!((p.total_cost(tp, sp) - expected).abs() < 1e-12);
        }
        let g = greedy_partition(&p);
        assert_eq!(g.u_sp, [a].into());
        assert_eq!(g.u_tp, [b].into());
        assert!((g.final_cost - w).abs() < 1e-12);
        let bf = brute_force_partition(&p).unwrap();
        assert_eq!(bf.u_sp, [a].into());
    }

    #[test]
    fn brute_force_singleton_and_limit() {
        let p = problem(GainTensor::from_fn(1, 1, |_, _, _| 1.0).unwrap(), ReuseSets::full_reuse(1), 0.5, 0.5);
        let r = brute_force_partition(&p).unwrap();
        let tp_only = p.total_cost(&set(&[(0, 0)]), &BTreeSet::new());
        let sp_only = p.total_cost(&BTreeSet::new(), &set(&[(0, 0)]));
        assert_eq!(r.final_cost, tp_only.min(sp_only));
        assert!(r.u_sp.is_empty());
        let big = problem(GainTensor::from_fn(3, 7, |_, _, _| 1.0).unwrap(), ReuseSets::full_reuse(3), 0.5, 0.5);
        assert!(matches!(brute_force_partition(&big), Err(SimError::InstanceTooLarge { users: 21, .. })));
    }

    fn random_problem(seed: u64, cells: usize, k: usize) -> PartitionProblem {
        let mut rng = stream(seed, Domain::Analytic, 0);
        let g = GainTensor::from_fn(cells, k, |j, l, _| if j == l { 1.0 } else { rng.random_range(0.0..1.0) }).unwrap();
        problem(g, ReuseSets::full_reuse(cells), rng.random_range(0.05..0.95), rng.random_range(0.0..=1.0))
    }

    /// Independent re-summation of the total cost straight from the gain tensor.
    fn oracle_cost(p: &PartitionProblem, u_sp: &BTreeSet<UserId>) -> f64 {
        let (l_cells, k) = (p.gains.cells(), p.gains.users_per_cell());
        let norm = 1.0 / ((p.c_u - p.tau) as f64 * p.split.rho_p_sq);
        let mut total = 0.0;
        for j in 0..l_cells {
            for m in 0..k {
                if u_sp.contains(&UserId::new(j, m)) {
                    let mut s = 0.0;
                    for l in 0..l_cells {
                        for kk in 0..k {
                            if u_sp.contains(&UserId::new(l, kk)) {
                                s += p.gains.get(l, j, m) * p.gains.get(l, j, m);
                            }
                        }
                    }
                    total += (p.weights.xi_ul + p.weights.xi_dl * p.split.rho_d_sq) * norm * s;
                } else {
                    for l in 0..l_cells {
                        if l != j && !u_sp.contains(&UserId::new(l, m)) {
                            total += p.gains.get(l, j, m) * p.gains.get(l, j, m);
                        }
                    }
                }
            }
        }
        total
    }

    #[test]
    fn total_cost_matches_resummation() {
        for seed in 0..50 {
            let p = random_problem(seed, 3, 2);
            let mut rng = stream(seed, Domain::Trial, 1);
            let u_sp: BTreeSet<UserId> = p.users().into_iter().filter(|_| rng.random_bool(0.5)).collect();
            let u_tp: BTreeSet<UserId> = p.users().into_iter().filter(|u| !u_sp.contains(u)).collect();
            let a = p.total_cost(&u_tp, &u_sp);
            let b = oracle_cost(&p, &u_sp);
            assert!((a - b).abs() <= 1e-12 * b.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn ul_only_weight_reduces_to_ul_cost() {
        let mut p = random_problem(7, 3, 2);
        p.weights = CostWeights::new(1.0).unwrap();
        let u_sp = set(&[(0, 1), (2, 0)]);
        let u_tp: BTreeSet<UserId> = p.users().into_iter().filter(|u| !u_sp.contains(u)).collect();
        let direct: f64 = u_tp.iter().map(|&id| p.tp_interference(id, &u_tp)).sum::<f64>()
            + u_sp.iter().map(|&id| p.sp_interference_ul(id, &u_sp)).sum::<f64>();
        assert!((p.total_cost(&u_tp, &u_sp) - direct).abs() < 1e-15);
    }

    #[test]
    fn greedy_is_valid_monotone_and_dominated() {
        for seed in 0..100 {
            let k = 1 + (seed as usize % 3);
            let p = random_problem(1000 + seed, 3, k);
            let g = greedy_partition(&p);
            assert!(g.u_tp.is_disjoint(&g.u_sp));
            assert_eq!(g.u_tp.len() + g.u_sp.len(), 3 * k);
            for w in g.cost_trace.windows(2) {
                assert!(w[1].1 <= w[0].1);
            }
            let all: BTreeSet<UserId> = p.users().into_iter().collect();
            assert!(g.final_cost <= p.total_cost(&all, &BTreeSet::new()));
            let bf = brute_force_partition(&p).unwrap();
            assert!(bf.final_cost <= g.final_cost + 1e-12);
        }
    }
}
