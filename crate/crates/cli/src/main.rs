//! Command-line front end for the team tracking simulator.
//!
//! `run` executes one scenario and reports metrics, `compare` sweeps
//! strategies and seeds, and `schedule-check` inspects the communication
//! schedule derived from a scenario's team structure.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use teamtrack::runtime::{run, Metrics, SimConfig, SimulationLog, Strategy};
use teamtrack::scenario::Scenario;
use teamtrack::schedule::{Schedule, SlotEvent};

#[derive(Parser)]
#[command(
    name = "teamtrack",
    version,
    about = "Simulates multi-robot target tracking with intermittently connected teams"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and print its metrics.
    Run {
        /// Scenario TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Override the scenario's strategy (intermittent, heuristic, all_time).
        #[arg(long)]
        strategy: Option<String>,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's horizon.
        #[arg(long)]
        t_end: Option<i64>,
        /// Directory for timeseries.csv, events.csv and metrics.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario across strategies and seeds and tabulate the metrics.
    Compare {
        /// Scenario TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated strategies to compare.
        #[arg(long, default_value = "intermittent,heuristic,all_time")]
        strategies: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "1")]
        seeds: String,
        /// Override the scenario's horizon.
        #[arg(long)]
        t_end: Option<i64>,
        /// File for the per-run CSV table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the communication schedule derived from a scenario's teams.
    ScheduleCheck {
        /// Scenario TOML file.
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(config: &Path) -> Result<Scenario> {
    Scenario::from_path(config).with_context(|| format!("loading {}", config.display()))
}

fn build(
    scenario: &Scenario,
    strategy: Option<Strategy>,
    seed: Option<u64>,
    t_end: Option<i64>,
) -> Result<SimConfig> {
    let mut sc = scenario.clone();
    if let Some(s) = strategy {
        sc.strategy = s;
    }
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(t) = t_end {
        sc.t_end = t;
    }
    Ok(sc.to_sim_config()?)
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    s.parse::<Strategy>().map_err(anyhow::Error::msg)
}

fn print_metrics(log: &SimulationLog, metrics: &Metrics) {
    println!("steps:                  {}", log.t_end);
    println!("meetings:               {}", log.events.len());
    println!("records:                {}", log.records.len());
    println!("schedule period:        {}", log.period);
    println!("propagation bound:      {} epochs", log.delay_bound);
    if log.propagation_violations > 0 {
        println!("PROPAGATION VIOLATIONS: {}", log.propagation_violations);
    }
    println!("mean error:             {:.4}", metrics.mean_error);
    println!("mean peak uncertainty:  {:.4}", metrics.mean_uncertainty);
    println!("mean divergence time:   {:.1}", metrics.mean_t_star);
    println!("mean belief divergence: {:.4}", metrics.mean_divergence);
}

fn write_outputs(dir: &Path, log: &SimulationLog, metrics: &Metrics) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("timeseries.csv"), log.timeseries_csv())?;
    std::fs::write(dir.join("events.csv"), log.events_csv())?;
    std::fs::write(dir.join("metrics.json"), metrics.to_json())?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            config,
            strategy,
            seed,
            t_end,
            out,
        } => {
            let scenario = load(&config)?;
            let strategy = strategy.as_deref().map(parse_strategy).transpose()?;
            let sim = build(&scenario, strategy, seed, t_end)?;
            println!(
                "running '{}' with strategy {} and seed {}",
                scenario.name.as_deref().unwrap_or("unnamed"),
                sim.strategy,
                sim.seed
            );
            let log = run(&sim)?;
            let metrics = log.metrics(&sim.models);
            print_metrics(&log, &metrics);
            if let Some(dir) = out {
                write_outputs(&dir, &log, &metrics)?;
                println!("wrote {}", dir.display());
            }
        }
        Cmd::Compare {
            config,
            strategies,
            seeds,
            t_end,
            out,
        } => {
            let scenario = load(&config)?;
            let strategies: Vec<Strategy> = strategies
                .split(',')
                .map(|s| parse_strategy(s.trim()))
                .collect::<Result<_>>()?;
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>().context("bad seed"))
                .collect::<Result<_>>()?;
            let mut csv = String::from(
                "strategy,seed,mean_error,mean_uncertainty,mean_t_star,mean_divergence\n",
            );
            println!(
                "{:<14} {:>18} {:>18} {:>14} {:>14}",
                "strategy", "mean error", "mean uncertainty", "t* (mean)", "divergence"
            );
            for &strategy in &strategies {
                let mut errs = Vec::new();
                let mut lams = Vec::new();
                let mut tstars = Vec::new();
                let mut divs = Vec::new();
                for &seed in &seeds {
                    let sim = build(&scenario, Some(strategy), Some(seed), t_end)?;
                    let log = run(&sim)?;
                    let m = log.metrics(&sim.models);
                    csv.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        strategy,
                        seed,
                        m.mean_error,
                        m.mean_uncertainty,
                        m.mean_t_star,
                        m.mean_divergence
                    ));
                    errs.push(m.mean_error);
                    lams.push(m.mean_uncertainty);
                    tstars.push(m.mean_t_star);
                    divs.push(m.mean_divergence);
                }
                println!(
                    "{:<14} {:>10.4} ± {:<5.3} {:>10.4} ± {:<5.3} {:>14.1} {:>14.4}",
                    strategy.to_string(),
                    mean(&errs),
                    std(&errs),
                    mean(&lams),
                    std(&lams),
                    mean(&tstars),
                    mean(&divs)
                );
            }
            if let Some(path) = out {
                if let Some(parent) = path.parent() {
                    if !parent.as_os_str().is_empty() {
                        std::fs::create_dir_all(parent)?;
                    }
                }
                std::fs::write(&path, csv)?;
                println!("wrote {}", path.display());
            }
        }
        Cmd::ScheduleCheck { config } => {
            let scenario = load(&config)?;
            let sim = scenario.to_sim_config()?;
            let graph = &sim.graph;
            let schedule = Schedule::synthesize(graph);
            println!("teams: {}", graph.num_teams());
            println!("robots: {}", graph.num_robots());
            println!("period: {}", schedule.period());
            for team in 0..graph.num_teams() {
                let members: Vec<String> = graph.team(team).iter().map(|r| r.to_string()).collect();
                println!(
                    "  team {team}: slot {} members [{}]",
                    schedule.slot(team)?,
                    members.join(", ")
                );
            }
            for id in graph.robots() {
                let seq: Vec<String> = schedule
                    .robot_sequence(id)?
                    .iter()
                    .map(|e| match e {
                        SlotEvent::Team(t) => format!("T{t}"),
                        SlotEvent::Idle => "--".into(),
                    })
                    .collect();
                println!("  robot {id}: [{}]", seq.join(" "));
            }
            println!("conflict-free: {}", schedule.validate(graph));
            let l_nodes = graph.longest_shortest_path();
            let l_edges = graph.longest_shortest_path_edges();
            println!("longest shortest path: {l_nodes} teams ({l_edges} hops)");
            println!(
                "propagation bound: {} epochs ({} by hop count)",
                graph.delay_bound(schedule.period()),
                graph.delay_bound_edges(schedule.period())
            );
        }
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
