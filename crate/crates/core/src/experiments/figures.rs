//! Figure sweeps.

use rayon::prelude::*;

use super::{gains_for, scheme_inputs, Runner, Table, Value};
use crate::config::{Constellation, MetricCells, RhoMode, ScenarioKind, SystemConfig};
use crate::error::{Result, SimError};
use crate::link::engine::{AggregateReport, Experiment, Scheme};
use crate::metrics::{crlb_sp, dl_sinr_sp_exact, dl_sinr_tp, mse_sp, mse_tp, rate_dl};

pub const FIGURE_IDS: [u32; 12] = [3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14];

const RADII: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

const COMPARED: [(&str, Scheme); 2] = [("tp", Scheme::TimeMultiplexed), ("sp", Scheme::Superimposed)];
const HYBRID_COMPARED: [(&str, Scheme); 3] = [
    ("tp", Scheme::TimeMultiplexed),
    ("sp", Scheme::Superimposed),
    ("hybrid", Scheme::Hybrid),
];

fn unknown(id: u32) -> SimError {
    SimError::UnknownFigure {
        id,
        valid: FIGURE_IDS.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", "),
    }
}

/// Parameters shared by the hybrid experiments.
pub(crate) fn hybrid_preset(cfg: &mut SystemConfig) {
    cfg.cells = 7;
    cfg.users_per_cell = 5;
    cfg.antennas = 100;
    cfg.c_u = 40;
    cfg.c_d = 40;
    cfg.reuse_r = 1;
    cfg.tau = None;
    cfg.xi_ul = 0.5;
    cfg.omega_sp = 10.0;
    cfg.lambda_tp = 1.0;
    cfg.rho_mode = RhoMode::Optimal;
    cfg.metric_cells = MetricCells::All;
}

/// Overwrites `cfg` with the parameters of figure `id`.
pub fn apply_figure_preset(id: u32, cfg: &mut SystemConfig) -> Result<()> {
    match id {
        3 => {
            cfg.scenario = ScenarioKind::Uniform;
            cfg.m_sweep = vec![300, 1000, 10000];
            cfg.trials = 1000;
        }
        4 => {
            cfg.scenario = ScenarioKind::Circle;
            cfg.circle_radius = 0.8;
            cfg.m_sweep = vec![16, 32, 64, 128, 256, 512, 1024];
            cfg.trials = 500;
        }
        5 | 6 => {
            cfg.scenario = if id == 5 { ScenarioKind::Uniform } else { ScenarioKind::Circle };
            cfg.circle_radius = 0.8;
            cfg.draws_per_layout = 1;
            cfg.constellation = Constellation::Qam4;
            cfg.m_sweep = vec![50, 100, 200, 300, 500];
            cfg.trials = 500;
        }
        7 => {
            cfg.scenario = ScenarioKind::Circle;
            cfg.circle_radius = 0.8;
            cfg.m_sweep = vec![16, 32, 64, 128, 256, 512, 1024, 2048, 4096];
            cfg.trials = 200;
        }
        8 => {
            cfg.scenario = ScenarioKind::Circle;
            cfg.antennas = 300;
            cfg.constellation = Constellation::Qam4;
            cfg.radius_sweep = RADII.to_vec();
            cfg.trials = 500;
        }
        9 | 10 => {
            cfg.scenario = ScenarioKind::Uniform;
            cfg.c_u = 70;
            cfg.users_per_cell = 5;
            cfg.antennas = 250;
            cfg.constellation = Constellation::Qam4;
            cfg.k_sweep = (1..=10).collect();
            cfg.trials = 200;
        }
        11..=14 => {
            hybrid_preset(cfg);
            cfg.scenario = ScenarioKind::Circle;
            cfg.radius_sweep = RADII.to_vec();
            cfg.constellation = if id <= 12 {
                Constellation::Gaussian
            } else {
                Constellation::Qam4
            };
            cfg.trials = 200;
        }
        _ => return Err(unknown(id)),
    }
    Ok(())
}

fn m_values(cfg: &SystemConfig) -> Vec<usize> {
    if cfg.m_sweep.is_empty() {
        vec![cfg.antennas]
    } else {
        cfg.m_sweep.clone()
    }
}

fn radii(cfg: &SystemConfig) -> Vec<f64> {
    if cfg.radius_sweep.is_empty() {
        vec![cfg.circle_radius]
    } else {
        cfg.radius_sweep.clone()
    }
}

fn with_antennas(cfg: &SystemConfig, m: usize) -> SystemConfig {
    SystemConfig {
        antennas: m,
        ..cfg.clone()
    }
}

fn with_radius(cfg: &SystemConfig, r: f64) -> SystemConfig {
    SystemConfig {
        circle_radius: r,
        ..cfg.clone()
    }
}

fn get(report: &AggregateReport, name: &str) -> Result<f64> {
    report
        .get(name)
        .ok_or_else(|| SimError::InvalidExperiment(format!("run produced no '{name}'")))
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub(crate) fn run_figure(runner: &Runner, id: u32, cfg: &SystemConfig) -> Result<Table> {
    if !FIGURE_IDS.contains(&id) {
        return Err(unknown(id));
    }
    cfg.validate()?;
    match id {
        3 => sinr_cdf(runner, cfg),
        4 => dl_rate_vs_m(runner, cfg),
        5 | 6 => ber_vs_m(runner, cfg),
        7 => mse_vs_m(runner, cfg),
        8 => dl_ber_vs_radius(runner, cfg),
        9 | 10 => ber_vs_k(runner, cfg, id == 9),
        _ => hybrid_vs_radius(runner, cfg, id),
    }
}

/// Empirical CDF over layouts of the analytic DL SINR of user (0, 0).
fn sinr_cdf(runner: &Runner, cfg: &SystemConfig) -> Result<Table> {
    let grid = cfg.grid()?;
    let ms = m_values(cfg);
    let per_layout: Vec<Vec<(f64, f64)>> = runner.pool.install(|| {
        (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| {
                let gains = cfg.layout(&grid, t)?.1;
                ms.iter()
                    .map(|&m| {
                        let (tp, sp) = scheme_inputs(&with_antennas(cfg, m), &gains)?;
                        Ok((dl_sinr_tp(&tp, 0, 0)?, dl_sinr_sp_exact(&sp, 0, 0)?))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut table = Table::new(&["sinr_db", "cdf", "scheme", "M"]);
    let n = per_layout.len() as f64;
    for (scheme, pick) in [("tp", 0usize), ("sp", 1)] {
        for (i, &m) in ms.iter().enumerate() {
            let mut v: Vec<f64> = per_layout
                .iter()
                .map(|row| db(if pick == 0 { row[i].0 } else { row[i].1 }))
                .collect();
            v.sort_by(f64::total_cmp);
            for (rank, s) in v.into_iter().enumerate() {
                table.push(vec![s.into(), ((rank + 1) as f64 / n).into(), scheme.into(), m.into()])?;
            }
        }
    }
    Ok(table)
}

fn dl_rate_vs_m(runner: &Runner, cfg: &SystemConfig) -> Result<Table> {
    let mut table = Table::new(&[
        "M",
        "dl_rate_sp_analytic_bps_per_hz",
        "dl_rate_sp_mc_bps_per_hz",
        "dl_rate_tp_analytic_bps_per_hz",
        "dl_rate_tp_mc_bps_per_hz",
    ]);
    for m in m_values(cfg) {
        let c = with_antennas(cfg, m);
        let (tp, sp) = scheme_inputs(&c, &gains_for(&c)?)?;
        let sp_mc = runner.run(&c, Experiment::DownlinkRate(Scheme::Superimposed))?;
        let tp_mc = runner.run(&c, Experiment::DownlinkRate(Scheme::TimeMultiplexed))?;
        table.push(vec![
            m.into(),
            rate_dl(dl_sinr_sp_exact(&sp, 0, 0)?, c.c_u, c.c_d)?.into(),
            get(&sp_mc, "dl_rate_c0_u0")?.into(),
            rate_dl(dl_sinr_tp(&tp, 0, 0)?, c.c_u, c.c_d)?.into(),
            get(&tp_mc, "dl_rate_c0_u0")?.into(),
        ])?;
    }
    Ok(table)
}

fn ber_vs_m(runner: &Runner, cfg: &SystemConfig) -> Result<Table> {
    let mut table = Table::new(&["M", "dl_ber_tp_ls_probability", "dl_ber_sp_probability"]);
    for m in m_values(cfg) {
        let c = with_antennas(cfg, m);
        let mut row: Vec<Value> = vec![m.into()];
        for (_, scheme) in COMPARED {
            row.push(get(&runner.run(&c, Experiment::DownlinkBer(scheme))?, "dl_ber")?.into());
        }
        table.push(row)?;
    }
    table.note = Some("EVD-based and iterative estimator baselines are not simulated".into());
    Ok(table)
}

/// Reference-cell averages of the analytic and simulated MSE.
fn mse_vs_m(runner: &Runner, cfg: &SystemConfig) -> Result<Table> {
    let mut table = Table::new(&[
        "M",
        "mse_sp_analytic_db",
        "mse_sp_mc_db",
        "mse_tp_analytic_db",
        "mse_tp_mc_db",
        "crlb_db",
    ]);
    let k_users = cfg.users_per_cell;
    let mean = |f: &dyn Fn(usize) -> Result<f64>| -> Result<f64> {
        Ok((0..k_users).map(f).sum::<Result<f64>>()? / k_users as f64)
    };
    for m in m_values(cfg) {
        let c = with_antennas(cfg, m);
        let (tp, sp) = scheme_inputs(&c, &gains_for(&c)?)?;
        let sp_mc = runner.run(&c, Experiment::ChannelMse(Scheme::Superimposed))?;
        let tp_mc = runner.run(&c, Experiment::ChannelMse(Scheme::TimeMultiplexed))?;
        table.push(vec![
            m.into(),
            db(mean(&|k| mse_sp(&sp, 0, k))?).into(),
            db(mean(&|k| get(&sp_mc, &format!("mse_c0_u{k}")))?).into(),
            db(mean(&|k| mse_tp(&tp, 0, k))?).into(),
            db(mean(&|k| get(&tp_mc, &format!("mse_c0_u{k}")))?).into(),
            db(mean(&|k| Ok(crlb_sp(&sp, 0, k)?.exact))?).into(),
        ])?;
    }
    Ok(table)
}

fn dl_ber_vs_radius(runner: &Runner, cfg: &SystemConfig) -> Result<Table> {
    let mut table = Table::new(&["radius_km", "dl_ber_tp_ls_probability", "dl_ber_sp_probability"]);
    for r in radii(cfg) {
        let c = with_radius(cfg, r);
        let mut row: Vec<Value> = vec![r.into()];
        for (_, scheme) in COMPARED {
            row.push(get(&runner.run(&c, Experiment::DownlinkBer(scheme))?, "dl_ber")?.into());
        }
        table.push(row)?;
    }
    Ok(table)
}

/// BER against `K`, keeping `M / K` at the base config's ratio.
fn ber_vs_k(runner: &Runner, cfg: &SystemConfig, downlink: bool) -> Result<Table> {
    let ratio = cfg.antennas as f64 / cfg.users_per_cell as f64;
    let ks = if cfg.k_sweep.is_empty() {
        vec![cfg.users_per_cell]
    } else {
        cfg.k_sweep.clone()
    };
    let (link, header) = if downlink {
        ("dl", ["K", "M", "dl_ber_tp_ls_probability", "dl_ber_sp_probability"])
    } else {
        ("ul", ["K", "M", "ul_ber_tp_ls_probability", "ul_ber_sp_probability"])
    };
    let mut table = Table::new(&header);
    for k in ks {
        let m = ((ratio * k as f64).round() as usize).max(1);
        let c = SystemConfig {
            users_per_cell: k,
            antennas: m,
            ..cfg.clone()
        };
        let mut row: Vec<Value> = vec![k.into(), m.into()];
        for (_, scheme) in COMPARED {
            let exp = if downlink {
                Experiment::DownlinkBer(scheme)
            } else {
                Experiment::UplinkBer(scheme)
            };
            row.push(get(&runner.run(&c, exp)?, &format!("{link}_ber"))?.into());
        }
        table.push(row)?;
    }
    table.note = Some("EVD-based and iterative estimator baselines are not simulated".into());
    Ok(table)
}

/// Sum rates (11, 12) or BERs (13, 14) of the three schemes against radius.
fn hybrid_vs_radius(runner: &Runner, cfg: &SystemConfig, id: u32) -> Result<Table> {
    let (metric, unit) = match id {
        11 => ("ul_sum_rate", "bps_per_hz"),
        12 => ("dl_sum_rate", "bps_per_hz"),
        13 => ("ul_ber", "probability"),
        _ => ("dl_ber", "probability"),
    };
    let mut header = vec!["radius_km".to_string()];
    header.extend(HYBRID_COMPARED.iter().map(|(name, _)| format!("{metric}_{name}_{unit}")));
    header.push("sp_users_hybrid".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new(&header_refs);
    for r in radii(cfg) {
        let c = with_radius(cfg, r);
        let mut row: Vec<Value> = vec![r.into()];
        let mut sp_users = 0.0;
        for (_, scheme) in HYBRID_COMPARED {
            let exp = match id {
                11 | 12 => Experiment::Link(scheme),
                13 => Experiment::UplinkBer(scheme),
                _ => Experiment::DownlinkBer(scheme),
            };
            let report = runner.run(&c, exp)?;
            row.push(get(&report, metric)?.into());
            if scheme == Scheme::Hybrid {
                sp_users = get(&report, "sp_users")?;
            }
        }
        row.push(sp_users.into());
        table.push(row)?;
    }
    Ok(table)
}
