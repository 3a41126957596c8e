use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use predlab::env::{self, Greedy};
use predlab::eval;
use predlab::experiment::{self, ExperimentConfig};
use predlab::{Error, MarketPath};

mod plot;
mod svg;

/// Train and evaluate trading agents on simulated predictable-return markets.
#[derive(Parser)]
#[command(name = "predlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        config: PathBuf,
        /// Output directory; defaults to the config's `output_dir`, then `runs/<name>-<hash>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per value of a config field.
    Sweep {
        config: PathBuf,
        /// Dotted config path, e.g. `market.factor.half_lives`.
        #[arg(long)]
        axis: String,
        /// Values as JSON; bare words are taken as strings.
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw SVG plots for a run or sweep directory.
    Plot {
        artifacts: PathBuf,
        /// Where to write the plots; defaults to `<artifacts>/plots`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Steps shown in the holdings panel.
        #[arg(long, default_value_t = 500)]
        window: usize,
    },
    /// Trade a saved checkpoint greedily along a market path CSV.
    Replay {
        checkpoint: PathBuf,
        path: PathBuf,
        /// Write the performance series here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn workers() -> Result<usize, Failure> {
    match std::env::var("PREDLAB_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Failure::Config(format!("PREDLAB_WORKERS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn output_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}", cfg.name, &cfg.hash()[..8])))
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let workers = workers()?;
    let dir = output_dir(&cfg, out);
    eprintln!("running {} ({} agents, {workers} workers) into {}", cfg.name, cfg.schedule.num_agents, dir.display());
    let art = experiment::run_experiment(&cfg, &dir, workers)?;
    let failed: Vec<String> = art
        .agents
        .iter()
        .filter_map(|a| a.error.as_ref().map(|e| format!("agent {}: {e}", a.id)))
        .collect();
    if art.healthy_agents().next().is_some() {
        let s = art.final_summary()?;
        println!("config hash      {}", art.config_hash);
        println!("final checkpoint {}", s.step);
        println!("agent SR         {:.3} (std {:.3})", s.agent_sharpe, s.agent_sharpe_std);
        println!("benchmark SR     {:.3}", s.bench_sharpe);
        println!("agent PnL        {:.4}", s.agent_pnl);
        println!("benchmark PnL    {:.4}", s.bench_pnl);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{} agent(s) failed:\n  {}", failed.len(), failed.join("\n  "))))
    }
}

fn parse_value(v: &str) -> serde_json::Value {
    serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()))
}

fn sweep(config: &Path, axis: &str, values: &[String], out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let workers = workers()?;
    let values: Vec<serde_json::Value> = values.iter().map(|v| parse_value(v)).collect();
    let dir = out.unwrap_or_else(|| {
        output_dir(&cfg, None).with_file_name(format!("{}-sweep-{}", cfg.name, axis.replace('.', "_")))
    });
    let rows = experiment::run_sweep(&cfg, axis, &values, &dir, workers)?;
    println!("{:>16} {:>10} {:>10} {:>10} {:>10}", axis, "agent SR", "std", "bench SR", "relative");
    for r in rows {
        println!(
            "{:>16} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            r.value.to_string(),
            r.agent_sharpe,
            r.agent_sharpe_std,
            r.bench_sharpe,
            r.relative_sharpe
        );
    }
    println!("table written to {}", dir.join("sweep.csv").display());
    Ok(())
}

fn plot(dir: &Path, out: Option<PathBuf>, window: usize) -> Result<(), Failure> {
    if !dir.is_dir() {
        return Err(Failure::Config(format!("{} is not a directory", dir.display())));
    }
    let out = out.unwrap_or_else(|| dir.join("plots"));
    let report = plot::emit_plots(dir, &out, window);
    for s in &report.skipped {
        eprintln!("skipped {s}");
    }
    for p in &report.written {
        println!("{}", p.display());
    }
    if report.written.is_empty() {
        return Err(Failure::Runtime(format!("no plottable artifacts in {}", dir.display())));
    }
    Ok(())
}

fn replay(checkpoint: &Path, path_csv: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let (meta, agent) = experiment::load_checkpoint(checkpoint)
        .map_err(|e| Failure::Config(format!("cannot load checkpoint {}: {e}", checkpoint.display())))?;
    let text = std::fs::read_to_string(path_csv)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path_csv.display())))?;
    let path = MarketPath::from_csv(&text, meta.market.clone(), 0)?;
    if path.len() < 2 {
        return Err(Failure::Config("a replay path needs at least two rows".into()));
    }
    let cfg = env::EnvConfig { episode_len: path.len() - 1, ..meta.env.clone() };
    let mut perf = env::run_policy(&cfg, &path, &mut Greedy(agent.trader()), 0.0)?;
    perf.agent = agent.kind().into();
    perf.checkpoint = meta.step as u64;
    let csv = perf.to_csv();
    match out {
        Some(p) => std::fs::write(&p, csv).map_err(|e| Failure::Runtime(e.to_string()))?,
        None => print!("{csv}"),
    }
    let sr = eval::sharpe(&perf.net_pnl).map_or_else(|_| "undefined".to_string(), |s| format!("{s:.3}"));
    eprintln!("{} steps, cumulative net PnL {:.4}, Sharpe {sr}", perf.len(), perf.cum_net_pnl());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::Sweep { config, axis, values, out } => sweep(&config, &axis, &values, out),
        Command::Plot { artifacts, out, window } => plot(&artifacts, out, window),
        Command::Replay { checkpoint, path, out } => replay(&checkpoint, &path, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
