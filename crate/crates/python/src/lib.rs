//! Python bindings: configuration, closed-form metrics, partitioning,
//! Monte Carlo runs and the CSV experiment commands.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pilotsim::config::SystemConfig;
use pilotsim::experiments::{self, Runner, Table};
use pilotsim::geometry::{GainTensor, UserId};
use pilotsim::link::{Experiment, Scheme};
use pilotsim::partition::{brute_force_partition, greedy_partition, CostWeights, PartitionProblem};
use pilotsim::pilots::{optimal_power_split, PowerSplit, ReuseSets};
use pilotsim::SimError;

fn py_err(e: SimError) -> PyErr {
    if e.is_config_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Simulator configuration. Keys follow the JSON config file.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: SystemConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (json=None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(text) => SystemConfig::from_json(text).map_err(py_err)?,
            None => SystemConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    /// Sets one key; `value` is parsed as JSON, falling back to a string.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn apply_figure_preset(&mut self, id: u32) -> PyResult<()> {
        experiments::apply_figure_preset(id, &mut self.inner).map_err(py_err)
    }

    fn apply_table1_preset(&mut self) {
        experiments::apply_table1_preset(&mut self.inner);
    }

    #[getter]
    fn sigma_sq(&self) -> f64 {
        self.inner.sigma_sq()
    }

    #[getter]
    fn tau(&self) -> usize {
        self.inner.tau()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn trials(&self) -> usize {
        self.inner.trials
    }

    #[setter]
    fn set_trials(&mut self, trials: usize) {
        self.inner.trials = trials;
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.inner.to_json())
    }
}

type PyTable = (Vec<String>, Vec<Vec<f64>>, String);

/// `(header, numeric rows, csv text)`; text cells become NaN in the rows.
fn export(table: Table) -> PyResult<PyTable> {
    let csv = table.to_csv_string().map_err(py_err)?;
    let rows = table
        .rows
        .iter()
        .map(|r| r.iter().map(|v| v.as_f64().unwrap_or(f64::NAN)).collect())
        .collect();
    Ok((table.header, rows, csv))
}

fn runner(threads: Option<usize>) -> PyResult<Runner> {
    match threads {
        Some(n) => Runner::with_threads(n),
        None => Runner::from_env(),
    }
    .map_err(py_err)
}

#[pyfunction]
fn analytic(config: &PyConfig) -> PyResult<PyTable> {
    export(experiments::cmd_analytic(&config.inner).map_err(py_err)?)
}

/// Runs figure `id` with `config` as given (no preset is applied).
#[pyfunction]
#[pyo3(signature = (id, config, threads=None))]
fn figure(py: Python<'_>, id: u32, config: &PyConfig, threads: Option<usize>) -> PyResult<PyTable> {
    let cfg = config.inner.clone();
    let table = py.detach(move || runner(threads)?.figure(id, &cfg).map_err(py_err))?;
    export(table)
}

#[pyfunction]
#[pyo3(signature = (config, threads=None))]
fn table1(py: Python<'_>, config: &PyConfig, threads: Option<usize>) -> PyResult<PyTable> {
    let cfg = config.inner.clone();
    let table = py.detach(move || runner(threads)?.table1(&cfg).map_err(py_err))?;
    export(table)
}

fn parse_experiment(kind: &str, scheme: &str) -> PyResult<Experiment> {
    let s = match scheme {
        "tp" | "time_multiplexed" => Scheme::TimeMultiplexed,
        "sp" | "superimposed" => Scheme::Superimposed,
        "hybrid" => Scheme::Hybrid,
        other => return Err(PyValueError::new_err(format!("unknown scheme '{other}'"))),
    };
    Ok(match kind {
        "mse" => Experiment::ChannelMse(s),
        "dl_interference" => Experiment::DownlinkInterference(s),
        "dl_ber" => Experiment::DownlinkBer(s),
        "ul_ber" => Experiment::UplinkBer(s),
        "dl_rate" => Experiment::DownlinkRate(s),
        "link" => Experiment::Link(s),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown experiment '{other}' (mse, dl_interference, dl_ber, ul_ber, dl_rate, link)"
            )))
        }
    })
}

/// Monte Carlo run. Returns `{name: (mean, half_width)}` and the derived values.
#[pyfunction]
#[pyo3(signature = (config, experiment, scheme, threads=None))]
#[allow(clippy::type_complexity)]
fn run_trials(
    py: Python<'_>,
    config: &PyConfig,
    experiment: &str,
    scheme: &str,
    threads: Option<usize>,
) -> PyResult<(BTreeMap<String, (f64, f64)>, BTreeMap<String, f64>)> {
    let exp = parse_experiment(experiment, scheme)?;
    let cfg = config.inner.clone();
    let report = py.detach(move || runner(threads)?.run(&cfg, exp).map_err(py_err))?;
    let fields = report
        .fields
        .iter()
        .map(|f| (f.name.clone(), (f.mean, f.half_width)))
        .collect();
    Ok((fields, report.derived))
}

#[pyfunction(name = "optimal_power_split")]
fn py_optimal_power_split(antennas: usize, cells: usize, users_per_cell: usize, c_u: usize) -> PyResult<(f64, f64)> {
    let s = optimal_power_split(antennas, cells, users_per_cell, c_u).map_err(py_err)?;
    Ok((s.rho_d_sq, s.rho_p_sq))
}

/// Partitions users given gains `beta[j][l][k]` under full pilot reuse.
/// Returns the SP users as `(cell, user)` pairs and the final cost.
#[pyfunction]
#[pyo3(signature = (beta, c_u, rho_d_sq, xi_ul=0.5, exhaustive=false))]
fn partition(
    beta: Vec<Vec<Vec<f64>>>,
    c_u: usize,
    rho_d_sq: f64,
    xi_ul: f64,
    exhaustive: bool,
) -> PyResult<(Vec<(usize, usize)>, f64)> {
    let cells = beta.len();
    let k_users = beta.first().and_then(|r| r.first()).map_or(0, Vec::len);
    let shape_ok = beta.iter().all(|r| r.len() == cells && r.iter().all(|c| c.len() == k_users));
    if cells == 0 || k_users == 0 || !shape_ok {
        return Err(PyValueError::new_err("beta must be a non-empty L x L x K nested list"));
    }
    let gains = GainTensor::from_fn(cells, k_users, |j, l, k| beta[j][l][k]).map_err(py_err)?;
    let problem = PartitionProblem::new(
        gains,
        ReuseSets::full_reuse(cells),
        c_u,
        k_users,
        PowerSplit::new(rho_d_sq).map_err(py_err)?,
        CostWeights::new(xi_ul).map_err(py_err)?,
    )
    .map_err(py_err)?;
    let result = if exhaustive {
        brute_force_partition(&problem).map_err(py_err)?
    } else {
        greedy_partition(&problem)
    };
    let sp = result.u_sp.iter().map(|id: &UserId| (id.cell, id.user)).collect();
    Ok((sp, result.final_cost))
}

#[pymodule]
#[pyo3(name = "pilotsim")]
fn pilotsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(analytic, m)?)?;
    m.add_function(wrap_pyfunction!(figure, m)?)?;
    m.add_function(wrap_pyfunction!(table1, m)?)?;
    m.add_function(wrap_pyfunction!(run_trials, m)?)?;
    m.add_function(wrap_pyfunction!(py_optimal_power_split, m)?)?;
    m.add_function(wrap_pyfunction!(partition, m)?)?;
    m.add("FIGURE_IDS", experiments::FIGURE_IDS.to_vec())?;
    Ok(())
}
