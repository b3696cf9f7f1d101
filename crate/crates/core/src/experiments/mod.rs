//! Experiment runner: analytic queries, figure sweeps, the scheme
//! comparison table and partition dumps, all emitted as CSV tables.

mod figures;

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::{Constellation, ScenarioKind, SystemConfig};
use crate::error::{Result, SimError};
use crate::geometry::GainTensor;
use crate::link::engine::{run_trials_in, thread_pool, AggregateReport, Experiment, Scheme};
use crate::metrics::{
    crlb_sp, dl_sinr_sp_asymptotic, dl_sinr_sp_exact, dl_sinr_sp_optimal_closed_form, dl_sinr_tp, mse_sp,
    mse_sp_optimal_closed_form, mse_tp, rate_dl, MetricInputs,
};
use crate::partition::{greedy_partition, CostWeights, PartitionProblem};
use crate::pilots::optimal_power_split;

pub use figures::{apply_figure_preset, FIGURE_IDS};

/// One CSV cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            // Display prints the shortest string that round-trips.
            Value::Float(v) => v.to_string(),
            Value::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Text(_) => None,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

/// Header plus rows, written as RFC-4180 CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// Free-text remark carried into the run summary, not the CSV.
    pub note: Option<String>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            note: None,
        }
    }

    pub fn push(&mut self, row: Vec<Value>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(SimError::DimensionMismatch {
                what: "table row",
                expected: self.header.len(),
                actual: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric values of one column.
    pub fn values(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column(name)?;
        self.rows.iter().map(|r| r[i].as_f64()).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Value::render))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Holds the worker pool shared by every Monte Carlo run of a command.
pub struct Runner {
    pub(crate) pool: rayon::ThreadPool,
}

impl Runner {
    /// Pool sized by `SIM_THREADS`, or by rayon's default.
    pub fn from_env() -> Result<Self> {
        Ok(Runner { pool: thread_pool()? })
    }

    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(SimError::Config("thread count must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| SimError::Config(format!("cannot build thread pool: {e}")))?;
        Ok(Runner { pool })
    }

    pub fn run(&self, cfg: &SystemConfig, experiment: Experiment) -> Result<AggregateReport> {
        run_trials_in(&self.pool, cfg, experiment, cfg.trials as u64)
    }

    pub fn analytic(&self, cfg: &SystemConfig) -> Result<Table> {
        analytic_table(cfg)
    }

    pub fn figure(&self, id: u32, cfg: &SystemConfig) -> Result<Table> {
        figures::run_figure(self, id, cfg)
    }

    pub fn table1(&self, cfg: &SystemConfig) -> Result<Table> {
        cfg.validate()?;
        let mut table = Table::new(&[
            "scheme",
            "ul_sum_rate_bps_per_hz",
            "dl_sum_rate_bps_per_hz",
            "total_rate_bps_per_hz",
            "ul_ber_probability",
            "dl_ber_probability",
        ]);
        let rates_cfg = SystemConfig {
            constellation: Constellation::Gaussian,
            ..cfg.clone()
        };
        let ber_cfg = SystemConfig {
            constellation: Constellation::Qam4,
            ..cfg.clone()
        };
        for (name, scheme) in [
            ("hybrid", Scheme::Hybrid),
            ("time_multiplexed", Scheme::TimeMultiplexed),
            ("superimposed", Scheme::Superimposed),
        ] {
            let link = self.run(&rates_cfg, Experiment::Link(scheme))?;
            let ul = self.run(&ber_cfg, Experiment::UplinkBer(scheme))?;
            let dl = self.run(&ber_cfg, Experiment::DownlinkBer(scheme))?;
            let ul_rate = derived(&link, "ul_sum_rate")?;
            let dl_rate = derived(&link, "dl_sum_rate")?;
            table.push(vec![
                name.into(),
                ul_rate.into(),
                dl_rate.into(),
                (ul_rate + dl_rate).into(),
                derived(&ul, "ul_ber")?.into(),
                derived(&dl, "dl_ber")?.into(),
            ])?;
        }
        Ok(table)
    }

    pub fn partition(&self, cfg: &SystemConfig) -> Result<Table> {
        partition_table(cfg)
    }
}

fn derived(report: &AggregateReport, name: &str) -> Result<f64> {
    report
        .derived
        .get(name)
        .copied()
        .ok_or_else(|| SimError::InvalidExperiment(format!("run produced no '{name}'")))
}

/// Analytic metrics per user, for the first layout of `cfg`.
pub fn cmd_analytic(cfg: &SystemConfig) -> Result<Table> {
    analytic_table(cfg)
}

/// Figure `id` (see [`FIGURE_IDS`]) for `cfg` as given; apply
/// [`apply_figure_preset`] first for the figure's default parameters.
pub fn cmd_figure(id: u32, cfg: &SystemConfig) -> Result<Table> {
    Runner::from_env()?.figure(id, cfg)
}

/// Rates and BERs of the three schemes.
pub fn cmd_table1(cfg: &SystemConfig) -> Result<Table> {
    Runner::from_env()?.table1(cfg)
}

/// Greedy TP/SP assignment for the first layout of `cfg`.
pub fn cmd_partition(cfg: &SystemConfig) -> Result<Table> {
    partition_table(cfg)
}

/// Default parameters of the scheme comparison table.
pub fn apply_table1_preset(cfg: &mut SystemConfig) {
    figures::hybrid_preset(cfg);
    cfg.scenario = ScenarioKind::Uniform;
    cfg.draws_per_layout = 100;
    cfg.trials = 2000;
}

pub(crate) fn gains_for(cfg: &SystemConfig) -> Result<GainTensor> {
    let grid = cfg.grid()?;
    Ok(cfg.layout(&grid, 0)?.1)
}

pub(crate) fn inputs_for(cfg: &SystemConfig, gains: GainTensor) -> Result<MetricInputs> {
    let grid = cfg.grid()?;
    MetricInputs::new(
        gains,
        cfg.antennas,
        cfg.c_u,
        cfg.c_d,
        cfg.tau(),
        cfg.sigma_sq(),
        cfg.split(cfg.c_u)?,
        cfg.reuse_sets(&grid)?,
    )
}

/// TP inputs on the power-controlled gains, SP inputs with `omega_sp`.
pub(crate) fn scheme_inputs(cfg: &SystemConfig, gains: &GainTensor) -> Result<(MetricInputs, MetricInputs)> {
    let sp_gains = gains.with_user_omegas(&vec![cfg.omega_sp; gains.users()])?;
    Ok((inputs_for(cfg, gains.clone())?, inputs_for(cfg, sp_gains)?))
}

fn analytic_table(cfg: &SystemConfig) -> Result<Table> {
    cfg.validate()?;
    let gains = gains_for(cfg)?;
    let (tp, sp) = scheme_inputs(cfg, &gains)?;
    let optimal = optimal_power_split(cfg.antennas, cfg.cells, cfg.users_per_cell, cfg.c_u)?;
    let mut table = Table::new(&[
        "cell",
        "user",
        "mse_tp",
        "mse_sp",
        "crlb_exact",
        "crlb_approx",
        "mse_sp_optimal_closed_form",
        "dl_sinr_tp_linear",
        "dl_sinr_sp_exact_linear",
        "dl_sinr_sp_asym_linear",
        "dl_sinr_sp_optimal_closed_form_linear",
        "dl_rate_tp_bps_per_hz",
        "dl_rate_sp_bps_per_hz",
        "rho_d_sq",
        "rho_p_sq",
        "rho_d_sq_optimal",
    ]);
    for j in 0..cfg.cells {
        for m in 0..cfg.users_per_cell {
            let crlb = crlb_sp(&sp, j, m)?;
            let sinr_tp = dl_sinr_tp(&tp, j, m)?;
            let sinr_sp = dl_sinr_sp_exact(&sp, j, m)?;
            table.push(vec![
                j.into(),
                m.into(),
                mse_tp(&tp, j, m)?.into(),
                mse_sp(&sp, j, m)?.into(),
                crlb.exact.into(),
                crlb.approx.into(),
                mse_sp_optimal_closed_form(&sp, j, m)?.into(),
                sinr_tp.into(),
                sinr_sp.into(),
                dl_sinr_sp_asymptotic(&sp, j, m)?.into(),
                dl_sinr_sp_optimal_closed_form(&sp, j, m)?.into(),
                rate_dl(sinr_tp, cfg.c_u, cfg.c_d)?.into(),
                rate_dl(sinr_sp, cfg.c_u, cfg.c_d)?.into(),
                sp.split.rho_d_sq.into(),
                sp.split.rho_p_sq.into(),
                optimal.rho_d_sq.into(),
            ])?;
        }
    }
    Ok(table)
}

fn partition_table(cfg: &SystemConfig) -> Result<Table> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let gains = gains_for(cfg)?;
    let tau = cfg.tau();
    if tau >= cfg.c_u {
        return Err(SimError::Config(format!("partitioning needs tau < c_u, got tau={tau}")));
    }
    let problem = PartitionProblem::new(
        gains,
        cfg.reuse_sets(&grid)?,
        cfg.c_u,
        tau,
        cfg.split(cfg.c_u - tau)?,
        CostWeights::new(cfg.xi_ul)?,
    )?;
    let result = greedy_partition(&problem);
    let mut table = Table::new(&["cell", "user", "pilot_scheme", "moved_at_step", "tp_cost", "sp_cost"]);
    for id in problem.users() {
        let step = result.moves.iter().position(|u| *u == id);
        table.push(vec![
            id.cell.into(),
            id.user.into(),
            if result.is_sp(id) { "sp" } else { "tp" }.into(),
            step.map_or(Value::Text(String::new()), |s| (s + 1).into()),
            problem.cost_tp(id, &result.u_tp).into(),
            problem.cost_sp(id, &result.u_sp).into(),
        ])?;
    }
    table.note = Some(format!("final_cost={}", result.final_cost));
    Ok(table)
}
