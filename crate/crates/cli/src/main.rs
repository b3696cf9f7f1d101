use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use pilotsim::config::SystemConfig;
use pilotsim::experiments::{apply_figure_preset, apply_table1_preset, Runner, Table};
use pilotsim::SimError;

#[derive(Parser, Debug)]
#[command(name = "sim", version, about = "Pilot contamination experiments for multi-cell massive MIMO")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set M=256`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// Output CSV path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// RNG seed (overrides the config file; 42 when neither sets it).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form metrics per user.
    Analytic,
    /// One figure's sweep (ids 3 to 14).
    Figure { id: u32 },
    /// Rates and BERs of the TP, SP and hybrid systems.
    Table1,
    /// Greedy TP/SP user assignment.
    Partition,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_config(cli: &Cli) -> Result<SystemConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            SystemConfig::from_json(&text)?
        }
        None => SystemConfig::default(),
    };
    match cli.command {
        Command::Figure { id } => apply_figure_preset(id, &mut cfg)?,
        Command::Table1 => apply_table1_preset(&mut cfg),
        Command::Analytic | Command::Partition => {}
    }
    for kv in &cli.sets {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<serde_json::Value, Failure> {
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Failure::Config("--out <path> is required".into()))?;
    let cfg = load_config(cli)?;
    let start = Instant::now();
    let runner = Runner::from_env()?;
    let (name, table): (String, Table) = match cli.command {
        Command::Analytic => ("analytic".into(), runner.analytic(&cfg)?),
        Command::Figure { id } => (format!("figure {id}"), runner.figure(id, &cfg)?),
        Command::Table1 => ("table1".into(), runner.table1(&cfg)?),
        Command::Partition => ("partition".into(), runner.partition(&cfg)?),
    };
    table.save(&out)?;
    let mut summary = serde_json::json!({
        "command": name,
        "rows": table.rows.len(),
        "out": out.display().to_string(),
        "seed": cfg.seed,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    if let Some(note) = &table.note {
        summary["note"] = note.clone().into();
    }
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
