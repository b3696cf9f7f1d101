//! Parallel, deterministic Monte Carlo trial engine.
//!
//! Trial `t` draws everything from stream `(seed, Trial, t)`; layouts come
//! from `(seed, Layout, t / draws_per_layout)`. Results are reduced in
//! trial order, so reports do not depend on the thread count.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Constellation, MetricCells, SystemConfig};
use crate::error::{Result, SimError};
use crate::estimators::{project_uplink, ChannelEstimateSet, EstimatorKind, Selector, UplinkObservation};
use crate::geometry::{draw_channels, ChannelRealization, GainTensor, UserId};
use crate::link::downlink::{decompose_dl_interference, dl_effective_gains, dl_interference_powers};
use crate::link::modem::symbol_bit_errors;
use crate::link::uplink::matched_filter_uplink;
use crate::linalg::{dotc, norm_sqr, sub, CMatrix};
use crate::metrics::{rate_dl, rate_ul};
use crate::partition::{greedy_partition, CostWeights, PartitionProblem, PartitionResult};
use crate::pilots::{
    assemble_frames, make_pilot_book, make_sp_pilot_matrix, FramePlan, PilotBook, PilotRole, PowerSplit, SpPilotMatrix,
};
use crate::rng::{complex_normal, fill_complex_normal, stream, Domain, SimRng};

const QAM_A: f64 = std::f64::consts::FRAC_1_SQRT_2;
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    TimeMultiplexed,
    Superimposed,
    Hybrid,
}

/// What a run measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Per-user channel estimation error.
    ChannelMse(Scheme),
    /// DL interference terms `i0..i4` (superimposed pilots only).
    DownlinkInterference(Scheme),
    DownlinkBer(Scheme),
    UplinkBer(Scheme),
    /// Empirical DL SINRs and rates only.
    DownlinkRate(Scheme),
    /// Empirical UL and DL SINRs and rates.
    Link(Scheme),
}

impl Experiment {
    pub fn scheme(&self) -> Scheme {
        match *self {
            Experiment::ChannelMse(s)
            | Experiment::DownlinkInterference(s)
            | Experiment::DownlinkBer(s)
            | Experiment::UplinkBer(s)
            | Experiment::DownlinkRate(s)
            | Experiment::Link(s) => s,
        }
    }

    fn needs(&self) -> Needs {
        let mut n = Needs::default();
        match self {
            Experiment::ChannelMse(_) => n.mse = true,
            Experiment::DownlinkInterference(_) => n.dl_decomp = true,
            Experiment::DownlinkBer(_) => n.dl_ber = true,
            Experiment::UplinkBer(_) => n.ul_ber = true,
            Experiment::DownlinkRate(_) => n.dl_sinr = true,
            Experiment::Link(_) => {
                n.dl_sinr = true;
                n.ul_sinr = true;
            }
        }
        n
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Needs {
    mse: bool,
    dl_decomp: bool,
    dl_ber: bool,
    dl_sinr: bool,
    ul_ber: bool,
    ul_sinr: bool,
}

impl Needs {
    fn downlink(&self) -> bool {
        self.dl_decomp || self.dl_ber || self.dl_sinr
    }

    fn uplink(&self) -> bool {
        self.ul_ber || self.ul_sinr
    }
}

/// Per-user measurements of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTrial {
    pub id: UserId,
    /// `||h_hat - h||^2 / M`.
    pub mse: Option<f64>,
    /// Effective gain of the user's own DL symbol.
    pub dl_gain: Option<Complex64>,
    /// Received DL power given the channels, `sum |g|^2 + sigma^2 / M`.
    pub dl_power: Option<f64>,
    /// Powers of `i0..i4`, their cross terms and the total.
    pub dl_terms: Option<[f64; 5]>,
    pub dl_cross: Option<f64>,
    pub dl_total: Option<f64>,
    /// Effective UL gain `a h_hat^H h / norm` of the user's own symbol.
    pub ul_gain: Option<Complex64>,
    /// Mean of `|x_hat - gain x|^2` over the UL data window.
    pub ul_residual: Option<f64>,
}

impl UserTrial {
    fn new(id: UserId) -> Self {
        UserTrial {
            id,
            mse: None,
            dl_gain: None,
            dl_power: None,
            dl_terms: None,
            dl_cross: None,
            dl_total: None,
            ul_gain: None,
            ul_residual: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    pub users: Vec<UserTrial>,
    /// Largest `|signal + sum i_n - d_hat|` over the measured users.
    pub identity_error: Option<f64>,
    pub ul_bit_errors: u64,
    pub ul_bits: u64,
    pub dl_bit_errors: u64,
    pub dl_bits: u64,
}

impl TrialResult {
    /// Named scalar values, in a fixed order.
    pub fn fields(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for u in &self.users {
            let tag = format!("c{}_u{}", u.id.cell, u.id.user);
            if let Some(v) = u.mse {
                out.push((format!("mse_{tag}"), v));
            }
            if let Some(g) = u.dl_gain {
                out.push((format!("dl_gain_re_{tag}"), g.re));
                out.push((format!("dl_gain_im_{tag}"), g.im));
            }
            if let Some(v) = u.dl_power {
                out.push((format!("dl_power_{tag}"), v));
            }
            if let Some(t) = u.dl_terms {
                for (n, v) in t.iter().enumerate() {
                    out.push((format!("dl_i{n}_{tag}"), *v));
                }
            }
            if let Some(v) = u.dl_cross {
                out.push((format!("dl_cross_{tag}"), v));
            }
            if let Some(v) = u.dl_total {
                out.push((format!("dl_interference_{tag}"), v));
            }
            if let Some(g) = u.ul_gain {
                out.push((format!("ul_gain_re_{tag}"), g.re));
                out.push((format!("ul_gain_im_{tag}"), g.im));
                out.push((format!("ul_gain_sq_{tag}"), g.norm_sqr()));
            }
            if let Some(v) = u.ul_residual {
                out.push((format!("ul_residual_{tag}"), v));
            }
        }
        if let Some(e) = self.identity_error {
            out.push(("identity_error".to_string(), e));
        }
        if self.ul_bits > 0 {
            out.push(("ul_ber".to_string(), self.ul_bit_errors as f64 / self.ul_bits as f64));
        }
        if self.dl_bits > 0 {
            out.push(("dl_ber".to_string(), self.dl_bit_errors as f64 / self.dl_bits as f64));
        }
        out
    }
}

/// Mean and normal-approximation 95% half-width of one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldStat {
    pub name: String,
    pub mean: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub experiment: Experiment,
    pub trials: u64,
    pub seed: u64,
    pub layouts: u64,
    pub fields: Vec<FieldStat>,
    /// Quantities computed from per-layout means (SINRs, rates, BERs).
    pub derived: BTreeMap<String, f64>,
    pub max_identity_error: Option<f64>,
    pub ul_bit_errors: u64,
    pub ul_bits: u64,
    pub dl_bit_errors: u64,
    pub dl_bits: u64,
}

impl AggregateReport {
    pub fn field(&self, name: &str) -> Option<&FieldStat> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Field mean or derived value.
    pub fn get(&self, name: &str) -> Option<f64> {
        self.field(name).map(|f| f.mean).or_else(|| self.derived.get(name).copied())
    }

    pub fn half_width(&self, name: &str) -> Option<f64> {
        self.field(name).map(|f| f.half_width)
    }
}

/// Everything that depends on the layout but not on the trial.
pub struct TrialContext {
    pub gains: GainTensor,
    /// Gains before the per-scheme omega adjustment (used for partitioning).
    pub base_gains: GainTensor,
    pub plan: FramePlan,
    pub split: PowerSplit,
    pub partition: Option<PartitionResult>,
    book: Option<PilotBook>,
    sp: Option<SpPilotMatrix>,
    selectors: Vec<Selector>,
    amplitude: Vec<f64>,
}

impl TrialContext {
    pub fn new(cfg: &SystemConfig, scheme: Scheme, layout_index: u64) -> Result<Self> {
        let grid = cfg.grid()?;
        let reuse = cfg.reuse_sets(&grid)?;
        let (_, base_gains) = cfg.layout(&grid, layout_index)?;
        let (l_cells, k_users) = (cfg.cells, cfg.users_per_cell);
        let users = l_cells * k_users;
        let tau = cfg.tau();
        let (plan, split, partition, gains) = match scheme {
            Scheme::TimeMultiplexed => {
                let plan = FramePlan::time_multiplexed(l_cells, k_users, &reuse, cfg.c_u, cfg.c_d, cfg.lambda_tp)?;
                (plan, PowerSplit::new(0.0)?, None, base_gains.clone())
            }
            Scheme::Superimposed => {
                if users > cfg.c_u {
                    return Err(SimError::InvalidExperiment(format!(
                        "superimposed pilots need C_u >= LK, got C_u={} for {users} users",
                        cfg.c_u
                    )));
                }
                let plan = FramePlan::superimposed(l_cells, k_users, cfg.c_u, cfg.c_d)?;
                let split = cfg.split(cfg.c_u)?;
                let gains = base_gains.with_user_omegas(&vec![cfg.omega_sp; users])?;
                (plan, split, None, gains)
            }
            Scheme::Hybrid => {
                let window = cfg.c_u.checked_sub(tau).filter(|w| *w > 0).ok_or_else(|| {
                    SimError::InvalidExperiment(format!("hybrid frames need tau < C_u, got tau={tau}"))
                })?;
                if users > window {
                    return Err(SimError::InvalidExperiment(format!(
                        "hybrid frames need C_u - tau >= LK, got {window} for {users} users"
                    )));
                }
                let split = cfg.split(window)?;
                let problem = PartitionProblem::new(
                    base_gains.clone(),
                    reuse.clone(),
                    cfg.c_u,
                    tau,
                    split,
                    CostWeights::new(cfg.xi_ul)?,
                )?;
                let part = greedy_partition(&problem);
                let plan = FramePlan::hybrid(l_cells, k_users, &reuse, cfg.c_u, cfg.c_d, cfg.lambda_tp, |id| part.is_sp(id))?;
                let omegas: Vec<f64> = (0..users)
                    .map(|u| {
                        let id = UserId::from_flat(u, k_users);
                        if part.is_sp(id) {
                            cfg.omega_sp
                        } else {
                            base_gains.omega(id.cell, id.user)
                        }
                    })
                    .collect();
                let gains = base_gains.with_user_omegas(&omegas)?;
                (plan, split, Some(part), gains)
            }
        };
        let book = if plan.tau() > 0 { Some(make_pilot_book(plan.tau())?) } else { None };
        let has_sp = plan.roles().iter().any(|r| matches!(r, PilotRole::Sp { .. }));
        let sp = if has_sp { Some(make_sp_pilot_matrix(plan.sp_window().len())?) } else { None };
        let mut selectors = Vec::with_capacity(users);
        let mut amplitude = Vec::with_capacity(users);
        for role in plan.roles() {
            match *role {
                PilotRole::Tp { pilot, data_power } => {
                    selectors.push(Selector::tp(book.as_ref().expect("TP users imply a pilot book"), pilot, cfg.c_u)?);
                    amplitude.push(data_power.sqrt());
                }
                PilotRole::Sp { column } => {
                    let p = sp.as_ref().expect("SP users imply a pilot matrix").column(column)?;
                    selectors.push(Selector::sp(p, plan.sp_window().start, cfg.c_u, split.rho_p())?);
                    amplitude.push(split.rho_d());
                }
            }
        }
        Ok(TrialContext {
            gains,
            base_gains,
            plan,
            split,
            partition,
            book,
            sp,
            selectors,
            amplitude,
        })
    }

    fn sp_column(&self, u: usize) -> Option<&[Complex64]> {
        match self.plan.roles()[u] {
            PilotRole::Sp { column } => self.sp.as_ref().and_then(|p| p.column(column).ok()),
            PilotRole::Tp { .. } => None,
        }
    }
}

fn qam4_symbol<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let b0: bool = rng.random();
    let b1: bool = rng.random();
    Complex64::new(if b0 { -QAM_A } else { QAM_A }, if b1 { -QAM_A } else { QAM_A })
}

fn draw_symbol<R: Rng + ?Sized>(rng: &mut R, c: Constellation) -> Complex64 {
    match c {
        Constellation::Qam4 => qam4_symbol(rng),
        Constellation::Gaussian => complex_normal(rng, 1.0),
    }
}

fn measured_cells(cfg: &SystemConfig) -> Vec<usize> {
    match cfg.metric_cells {
        MetricCells::Reference => vec![0],
        MetricCells::All => (0..cfg.cells).collect(),
    }
}

/// Explicit `Y_j` with fresh noise.
fn observe(
    channels: &ChannelRealization,
    j: usize,
    frames: &[Vec<Complex64>],
    sigma_sq: f64,
    rng: &mut SimRng,
) -> UplinkObservation {
    let k_users = channels.users_per_cell();
    let c_u = frames[0].len();
    let mut y = CMatrix::zeros(channels.antennas(), c_u);
    if sigma_sq > 0.0 {
        fill_complex_normal(rng, sigma_sq, y.as_mut_slice());
    }
    for (u, s) in frames.iter().enumerate() {
        y.add_outer(channels.link(j, u / k_users, u % k_users), s);
    }
    UplinkObservation { y, sigma_sq }
}

/// Runs trial `trial` against a prepared context.
pub fn run_trial(cfg: &SystemConfig, experiment: Experiment, ctx: &TrialContext, trial: u64) -> Result<TrialResult> {
    let needs = experiment.needs();
    let mut rng = stream(cfg.seed, Domain::Trial, trial);
    let sigma_sq = cfg.sigma_sq();
    let (l_cells, k_users, m) = (cfg.cells, cfg.users_per_cell, cfg.antennas);
    let users = l_cells * k_users;
    let measured = measured_cells(cfg);

    let channels = draw_channels(&ctx.gains, m, &mut rng)?;
    let constellation = if needs.ul_ber || needs.dl_ber {
        Constellation::Qam4
    } else {
        cfg.constellation
    };
    let data: Vec<Vec<Complex64>> = (0..users)
        .map(|u| {
            let n = ctx.plan.data_window(UserId::from_flat(u, k_users)).len();
            (0..n).map(|_| draw_symbol(&mut rng, constellation)).collect()
        })
        .collect();
    let empty = PilotBook::empty();
    let frames = assemble_frames(
        &ctx.plan,
        &data,
        ctx.book.as_ref().unwrap_or(&empty),
        ctx.sp.as_ref().unwrap_or(&SpPilotMatrix::empty()),
        ctx.split,
    )?;

    // Explicit observations for measured BSs when UL detection is needed.
    let observations: BTreeMap<usize, UplinkObservation> = if needs.uplink() {
        measured
            .iter()
            .map(|&j| (j, observe(&channels, j, &frames, sigma_sq, &mut rng)))
            .collect()
    } else {
        BTreeMap::new()
    };

    let estimate_bs: Vec<usize> = if needs.downlink() { (0..l_cells).collect() } else { measured.clone() };
    let kind = match experiment.scheme() {
        Scheme::TimeMultiplexed => EstimatorKind::Tp,
        Scheme::Superimposed => EstimatorKind::Sp,
        Scheme::Hybrid => EstimatorKind::Hybrid,
    };
    let mut est = ChannelEstimateSet::new(kind);
    for &l in &estimate_bs {
        for k in 0..k_users {
            let u = l * k_users + k;
            let sel = &ctx.selectors[u];
            let h_hat = match observations.get(&l) {
                Some(obs) => sel.apply(obs)?,
                None => {
                    // Selectors of one BS are orthogonal, so their noise projections are independent.
                    let mut noise = vec![Complex64::new(0.0, 0.0); m];
                    if sigma_sq > 0.0 {
                        fill_complex_normal(&mut rng, sigma_sq * norm_sqr(&sel.b), &mut noise);
                    }
                    let inv = 1.0 / sel.norm;
                    project_uplink(&channels, l, &frames, &sel.b, &noise)
                        .into_iter()
                        .map(|z| z * inv)
                        .collect()
                }
            };
            est.insert(l, l, k, h_hat);
        }
    }

    let mut result = TrialResult {
        trial,
        users: Vec::new(),
        identity_error: None,
        ul_bit_errors: 0,
        ul_bits: 0,
        dl_bit_errors: 0,
        dl_bits: 0,
    };
    let mut user_rows: Vec<UserTrial> = measured
        .iter()
        .flat_map(|&j| (0..k_users).map(move |k| UserTrial::new(UserId::new(j, k))))
        .collect();

    if needs.mse {
        for row in &mut user_rows {
            let (j, k) = (row.id.cell, row.id.user);
            let err = sub(est.get(j, j, k)?, channels.link(j, j, k));
            row.mse = Some(norm_sqr(&err) / m as f64);
        }
    }

    if needs.dl_sinr || needs.dl_ber {
        let gains: Vec<Vec<Complex64>> = user_rows
            .iter()
            .map(|r| dl_effective_gains(&est, &channels, r.id.cell, r.id.user))
            .collect::<Result<_>>()?;
        if needs.dl_sinr {
            for (row, g) in user_rows.iter_mut().zip(&gains) {
                let own = g[row.id.flat(k_users)];
                row.dl_gain = Some(own);
                row.dl_power = Some(norm_sqr(g) + sigma_sq / m as f64);
            }
        }
        if needs.dl_ber {
            let noise_var = sigma_sq / m as f64;
            let mut d = vec![Complex64::new(0.0, 0.0); users];
            for _ in 0..cfg.dl_symbols {
                for s in d.iter_mut() {
                    *s = qam4_symbol(&mut rng);
                }
                for (row, g) in user_rows.iter().zip(&gains) {
                    let u = row.id.flat(k_users);
                    let rx: Complex64 = g.iter().zip(&d).map(|(a, b)| a * b).sum::<Complex64>()
                        + complex_normal(&mut rng, noise_var);
                    let beta = ctx.gains.get(row.id.cell, row.id.cell, row.id.user);
                    result.dl_bit_errors += symbol_bit_errors(d[u], rx / beta);
                    result.dl_bits += 2;
                }
            }
        }
    }

    if needs.dl_decomp {
        let d: Vec<Complex64> = (0..users).map(|_| draw_symbol(&mut rng, cfg.constellation)).collect();
        let mut worst: f64 = 0.0;
        for row in &mut user_rows {
            let (j, k) = (row.id.cell, row.id.user);
            let p = dl_interference_powers(&est, &channels, &ctx.gains, sigma_sq, j, k)?;
            row.dl_terms = Some(p.terms);
            row.dl_cross = Some(p.cross);
            row.dl_total = Some(p.total);
            let eta = complex_normal(&mut rng, m as f64 * sigma_sq);
            let dec = decompose_dl_interference(&est, &channels, &ctx.gains, &d, eta, j, k)?;
            worst = worst.max((dec.reconstructed() - dec.d_hat).norm());
        }
        result.identity_error = Some(worst);
    }

    if needs.uplink() {
        let rho_p = ctx.split.rho_p();
        for row in &mut user_rows {
            let (j, k) = (row.id.cell, row.id.user);
            let u = row.id.flat(k_users);
            let obs = &observations[&j];
            let h_hat = est.get(j, j, k)?;
            let window = ctx.plan.data_window(row.id);
            let norm = m as f64 * ctx.gains.get(j, j, k) * ctx.amplitude[u];
            if !(norm > 0.0) {
                return Err(SimError::InvalidExperiment(format!("user ({j}, {k}) transmits no UL data")));
            }
            let mut z = matched_filter_uplink(h_hat, obs, window.clone(), norm)?;
            // Remove the known SP pilots of the cell: rho_p (h_hat^H h_hat_k') p_k'[t].
            for kk in 0..k_users {
                let uu = j * k_users + kk;
                if let Some(p) = ctx.sp_column(uu) {
                    let c = dotc(h_hat, est.get(j, j, kk)?) * (rho_p / norm);
                    let offset = ctx.plan.sp_window().start;
                    for (zt, t) in z.iter_mut().zip(window.clone()) {
                        *zt -= c * p[t - offset];
                    }
                }
            }
            let x = &data[u];
            if needs.ul_sinr {
                let gain = dotc(h_hat, channels.link(j, j, k)) * (ctx.amplitude[u] / norm);
                let residual: f64 = z.iter().zip(x).map(|(zt, xt)| (zt - gain * xt).norm_sqr()).sum::<f64>();
                row.ul_gain = Some(gain);
                row.ul_residual = Some(residual / z.len() as f64);
            }
            if needs.ul_ber {
                for (zt, xt) in z.iter().zip(x) {
                    result.ul_bit_errors += symbol_bit_errors(*xt, *zt);
                    result.ul_bits += 2;
                }
            }
        }
    }

    result.users = user_rows;
    Ok(result)
}

fn check_combination(cfg: &SystemConfig, experiment: Experiment) -> Result<()> {
    cfg.validate()?;
    match experiment {
        Experiment::DownlinkInterference(s) if s != Scheme::Superimposed => Err(SimError::InvalidExperiment(
            "the DL interference decomposition is defined for superimposed pilots".into(),
        )),
        Experiment::UplinkBer(_) | Experiment::DownlinkBer(_) if cfg.constellation == Constellation::Gaussian => {
            Err(SimError::InvalidExperiment("BER experiments need constellation qam4".into()))
        }
        _ => Ok(()),
    }
}

/// Builds a thread pool honoring `SIM_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SIM_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| SimError::Config(format!("SIM_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(SimError::Config("SIM_THREADS must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| SimError::Config(format!("cannot build thread pool: {e}")))
}

#[derive(Default)]
struct Moments {
    names: Vec<String>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn push(&mut self, fields: &[(String, f64)]) -> Result<()> {
        if self.names.is_empty() {
            self.names = fields.iter().map(|(n, _)| n.clone()).collect();
            self.sum = vec![0.0; fields.len()];
            self.sum_sq = vec![0.0; fields.len()];
        }
        if fields.len() != self.names.len() {
            return Err(SimError::InvalidExperiment("trial results changed shape".into()));
        }
        for (i, (_, v)) in fields.iter().enumerate() {
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
        }
        Ok(())
    }

    fn mean(&self, name: &str, n: f64) -> Option<f64> {
        self.names.iter().position(|x| x == name).map(|i| self.sum[i] / n)
    }
}

/// Per-layout SINR and rate derivation.
fn derive_layout(
    cfg: &SystemConfig,
    ctx: &TrialContext,
    moments: &Moments,
    n: f64,
    users: &[UserId],
    out: &mut BTreeMap<String, f64>,
) {
    let coherence = cfg.c_u + cfg.c_d;
    let mut dl_sum = 0.0;
    let mut ul_sum = 0.0;
    let mut any_dl = false;
    let mut any_ul = false;
    for id in users {
        let tag = format!("c{}_u{}", id.cell, id.user);
        if let (Some(re), Some(im), Some(p)) = (
            moments.mean(&format!("dl_gain_re_{tag}"), n),
            moments.mean(&format!("dl_gain_im_{tag}"), n),
            moments.mean(&format!("dl_power_{tag}"), n),
        ) {
            let s = re * re + im * im;
            let sinr = s / (p - s).max(f64::MIN_POSITIVE);
            let rate = rate_dl(sinr, cfg.c_u, cfg.c_d).unwrap_or(0.0);
            *out.entry(format!("dl_sinr_{tag}")).or_default() += sinr;
            *out.entry(format!("dl_rate_{tag}")).or_default() += rate;
            dl_sum += rate;
            any_dl = true;
        }
        if let (Some(re), Some(im), Some(sq), Some(res)) = (
            moments.mean(&format!("ul_gain_re_{tag}"), n),
            moments.mean(&format!("ul_gain_im_{tag}"), n),
            moments.mean(&format!("ul_gain_sq_{tag}"), n),
            moments.mean(&format!("ul_residual_{tag}"), n),
        ) {
            // Use-and-forget: gain variance counts as interference.
            let s = re * re + im * im;
            let sinr = s / ((sq - s).max(0.0) + res).max(f64::MIN_POSITIVE);
            let data_symbols = ctx.plan.data_window(*id).len();
            let rate = rate_ul(sinr, data_symbols, coherence).unwrap_or(0.0);
            *out.entry(format!("ul_sinr_{tag}")).or_default() += sinr;
            *out.entry(format!("ul_rate_{tag}")).or_default() += rate;
            ul_sum += rate;
            any_ul = true;
        }
    }
    if any_dl {
        *out.entry("dl_sum_rate".into()).or_default() += dl_sum;
    }
    if any_ul {
        *out.entry("ul_sum_rate".into()).or_default() += ul_sum;
    }
    if let Some(part) = &ctx.partition {
        *out.entry("sp_users".into()).or_default() += part.u_sp.len() as f64;
    }
}

/// Runs `trials` trials and aggregates them.
pub fn run_trials(cfg: &SystemConfig, experiment: Experiment, trials: u64) -> Result<AggregateReport> {
    let pool = thread_pool()?;
    run_trials_in(&pool, cfg, experiment, trials)
}

/// [`run_trials`] on a caller-provided pool.
pub fn run_trials_in(
    pool: &rayon::ThreadPool,
    cfg: &SystemConfig,
    experiment: Experiment,
    trials: u64,
) -> Result<AggregateReport> {
    check_combination(cfg, experiment)?;
    if trials == 0 {
        return Err(SimError::param("need at least one trial"));
    }
    let scheme = experiment.scheme();
    let k_users = cfg.users_per_cell;
    let measured_users: Vec<UserId> = measured_cells(cfg)
        .into_iter()
        .flat_map(|j| (0..k_users).map(move |k| UserId::new(j, k)))
        .collect();

    let mut all = Moments::default();
    let mut layout = Moments::default();
    let mut layout_n = 0.0;
    let mut current_layout: Option<(u64, std::sync::Arc<TrialContext>)> = None;
    let mut derived_acc: BTreeMap<String, f64> = BTreeMap::new();
    let mut layouts = 0u64;
    let mut max_identity: Option<f64> = None;
    let (mut ul_e, mut ul_b, mut dl_e, mut dl_b) = (0u64, 0u64, 0u64, 0u64);

    let mut start = 0u64;
    while start < trials {
        let end = (start + CHUNK as u64).min(trials);
        // Contexts for the layouts touched by this chunk, built in parallel.
        let first_layout = cfg.layout_index(start);
        let last_layout = cfg.layout_index(end - 1);
        let reuse_current = current_layout.as_ref().filter(|(idx, _)| *idx == first_layout).map(|(_, c)| c.clone());
        let fresh_from = if reuse_current.is_some() { first_layout + 1 } else { first_layout };
        let fresh: Vec<std::sync::Arc<TrialContext>> = pool.install(|| {
            (fresh_from..=last_layout)
                .into_par_iter()
                .map(|idx| TrialContext::new(cfg, scheme, idx).map(std::sync::Arc::new))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut contexts: Vec<std::sync::Arc<TrialContext>> = reuse_current.into_iter().collect();
        contexts.extend(fresh);
        let results: Vec<TrialResult> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|t| run_trial(cfg, experiment, &contexts[(cfg.layout_index(t) - first_layout) as usize], t))
                .collect::<Result<Vec<_>>>()
        })?;
        for r in &results {
            let idx = cfg.layout_index(r.trial);
            let ctx = contexts[(idx - first_layout) as usize].clone();
            if let Some((cur, cur_ctx)) = &current_layout {
                if *cur != idx {
                    derive_layout(cfg, cur_ctx, &layout, layout_n, &measured_users, &mut derived_acc);
                    layouts += 1;
                    layout = Moments::default();
                    layout_n = 0.0;
                }
            }
            current_layout = Some((idx, ctx));
            let fields = r.fields();
            all.push(&fields)?;
            layout.push(&fields)?;
            layout_n += 1.0;
            if let Some(e) = r.identity_error {
                max_identity = Some(max_identity.map_or(e, |m: f64| m.max(e)));
            }
            ul_e += r.ul_bit_errors;
            ul_b += r.ul_bits;
            dl_e += r.dl_bit_errors;
            dl_b += r.dl_bits;
        }
        start = end;
    }
    if let Some((_, ctx)) = &current_layout {
        derive_layout(cfg, ctx, &layout, layout_n, &measured_users, &mut derived_acc);
        layouts += 1;
    }
    let mut derived: BTreeMap<String, f64> = derived_acc.into_iter().map(|(k, v)| (k, v / layouts as f64)).collect();
    if ul_b > 0 {
        derived.insert("ul_ber".into(), ul_e as f64 / ul_b as f64);
    }
    if dl_b > 0 {
        derived.insert("dl_ber".into(), dl_e as f64 / dl_b as f64);
    }
    let n = trials as f64;
    let fields = all
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mean = all.sum[i] / n;
            let var = if trials > 1 {
                ((all.sum_sq[i] - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            FieldStat {
                name: name.clone(),
                mean,
                half_width: 1.96 * (var / n).sqrt(),
            }
        })
        .collect();
    Ok(AggregateReport {
        experiment,
        trials,
        seed: cfg.seed,
        layouts,
        fields,
        derived,
        max_identity_error: max_identity,
        ul_bit_errors: ul_e,
        ul_bits: ul_b,
        dl_bit_errors: dl_e,
        dl_bits: dl_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{mse_sp, mse_tp, MetricInputs};

    fn small() -> SystemConfig {
        SystemConfig {
            cells: 3,
            users_per_cell: 2,
            antennas: 32,
            c_u: 20,
            c_d: 20,
            dl_symbols: 10,
            ..SystemConfig::default()
        }
    }

    fn pool(n: usize) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
    }

    fn inputs(cfg: &SystemConfig, scheme: Scheme) -> MetricInputs {
        let ctx = TrialContext::new(cfg, scheme, 0).unwrap();
        let grid = cfg.grid().unwrap();
        MetricInputs::new(
            ctx.gains.clone(),
            cfg.antennas,
            cfg.c_u,
            cfg.c_d,
            ctx.plan.tau(),
            cfg.sigma_sq(),
            ctx.split,
            cfg.reuse_sets(&grid).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn reports_do_not_depend_on_thread_count() {
        let cfg = small();
        for exp in [
            Experiment::Link(Scheme::Hybrid),
            Experiment::UplinkBer(Scheme::Superimposed),
            Experiment::ChannelMse(Scheme::TimeMultiplexed),
        ] {
            let a = run_trials_in(&pool(1), &cfg, exp, 300).unwrap();
            let b = run_trials_in(&pool(3), &cfg, exp, 300).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_trial_report_matches_direct_run() {
        let cfg = small();
        let exp = Experiment::ChannelMse(Scheme::Superimposed);
        let report = run_trials_in(&pool(2), &cfg, exp, 1).unwrap();
        let ctx = TrialContext::new(&cfg, Scheme::Superimposed, 0).unwrap();
        let direct = run_trial(&cfg, exp, &ctx, 0).unwrap();
        let fields = direct.fields();
        assert_eq!(report.fields.len(), fields.len());
        for (stat, (name, v)) in report.fields.iter().zip(&fields) {
            assert_eq!(&stat.name, name);
            assert_eq!(stat.mean, *v);
            assert_eq!(stat.half_width, 0.0);
        }
    }

    #[test]
    fn uniform_layouts_change_every_block() {
        let cfg = SystemConfig {
            scenario: crate::config::ScenarioKind::Uniform,
            draws_per_layout: 4,
            ..small()
        };
        let r = run_trials_in(&pool(2), &cfg, Experiment::ChannelMse(Scheme::TimeMultiplexed), 10).unwrap();
        assert_eq!(r.layouts, 3);
    }

    #[test]
    fn interval_shrinks_with_more_trials() {
        let cfg = small();
        let exp = Experiment::ChannelMse(Scheme::TimeMultiplexed);
        let a = run_trials_in(&pool(2), &cfg, exp, 500).unwrap();
        let b = run_trials_in(&pool(2), &cfg, exp, 2000).unwrap();
        let ratio = b.half_width("mse_c0_u0").unwrap() / a.half_width("mse_c0_u0").unwrap();
        assert!((0.4..=0.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn empirical_mse_matches_closed_forms() {
        let cfg = small();
        for (scheme, f) in [
            (Scheme::TimeMultiplexed, mse_tp as fn(&MetricInputs, usize, usize) -> Result<f64>),
            (Scheme::Superimposed, mse_sp),
        ] {
            let inp = inputs(&cfg, scheme);
            let r = run_trials_in(&pool(2), &cfg, Experiment::ChannelMse(scheme), 2000).unwrap();
            for k in 0..cfg.users_per_cell {
                let name = format!("mse_c0_u{k}");
                let (mean, hw) = (r.get(&name).unwrap(), r.half_width(&name).unwrap());
                let want = f(&inp, 0, k).unwrap();
                assert!((mean - want).abs() < 4.0 * hw.max(1e-3 * want), "{scheme:?} {k}: {mean} vs {want} (+-{hw})");
            }
        }
    }

    #[test]
    fn decomposition_identity_holds() {
        let cfg = small();
        let r = run_trials_in(&pool(2), &cfg, Experiment::DownlinkInterference(Scheme::Superimposed), 50).unwrap();
        assert!(r.max_identity_error.unwrap() < 1e-10);
        assert!(r.get("dl_i0_c0_u0").unwrap() > 0.0);
    }

    #[test]
    fn noiseless_single_cell_tp_is_error_free() {
        let cfg = SystemConfig {
            cells: 1,
            users_per_cell: 2,
            antennas: 64,
            snr_db: 200.0,
            ..small()
        };
        let r = run_trials_in(&pool(1), &cfg, Experiment::UplinkBer(Scheme::TimeMultiplexed), 20).unwrap();
        assert!(r.ul_bits > 0);
        assert!(r.get("ul_ber").unwrap() < 0.01);
    }

    #[test]
    fn rejects_bad_combinations() {
        let mut cfg = small();
        assert!(matches!(
            run_trials_in(&pool(1), &cfg, Experiment::DownlinkInterference(Scheme::TimeMultiplexed), 10),
            Err(SimError::InvalidExperiment(_))
        ));
        cfg.constellation = Constellation::Gaussian;
        assert!(matches!(
            run_trials_in(&pool(1), &cfg, Experiment::UplinkBer(Scheme::Superimposed), 10),
            Err(SimError::InvalidExperiment(_))
        ));
        assert!(run_trials_in(&pool(1), &small(), Experiment::Link(Scheme::Superimposed), 0).is_err());
        let crowded = SystemConfig { c_u: 5, ..small() };
        assert!(run_trials_in(&pool(1), &crowded, Experiment::ChannelMse(Scheme::Superimposed), 10).is_err());
    }

    #[test]
    fn link_reports_rates() {
        let cfg = small();
        let r = run_trials_in(&pool(2), &cfg, Experiment::Link(Scheme::Hybrid), 100).unwrap();
        assert!(r.get("dl_sum_rate").unwrap() > 0.0);
        assert!(r.get("ul_sum_rate").unwrap() > 0.0);
        assert!(r.get("sp_users").is_some());
    }
}
