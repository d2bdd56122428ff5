//! Batch runner: plan one agent, simulate a scenario, benchmark search
//! variants and controller horizons, or sweep a parameter.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use junction_core::bundled;
use junction_core::experiments::{
    plan_agent, simulate, sweep, time_horizons, ExperimentError, PlanOptions, SearchVariant,
    SWEEP_PARAMETERS,
};
use junction_core::planner::PlanError;
use junction_core::scenario::{load_scenario, ScenarioFile};
use serde_json::json;

const EXIT_NO_PATH: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_LOAD: u8 = 65;
const EXIT_IO: u8 = 74;

/// Expansion budget for benchmark searches, large enough for uninformed search.
const BENCH_MAX_EXPANSIONS: usize = 5_000_000;
const BENCH_MAX_TIME: f64 = 600.0;

#[derive(Parser, Debug)]
#[command(
    name = "junction",
    version,
    about = "Junction planning and control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Reserved; every command is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the global planner for one agent.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        agent: usize,
        /// Heuristic variant to plan with.
        #[arg(long, default_value = "proposed")]
        variant: String,
        /// Also write the expansion trace.
        #[arg(long)]
        trace: bool,
    },
    /// Run the closed-loop multi-agent simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Compare search variants, or controller horizons with `--variant mpc`.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        agent: usize,
        /// Comma-separated variants: dijkstra, euclidean, direction, steering, proposed, mpc.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "dijkstra,euclidean,direction,steering,proposed"
        )]
        variant: Vec<String>,
        /// Horizons for the controller benchmark.
        #[arg(long, value_delimiter = ',', default_value = "13,25,50")]
        values: Vec<usize>,
    },
    /// Re-run the simulation for each value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: String,
        /// Comma-separated values; may be empty.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Load(String),
    NoPath(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Load(_) => EXIT_LOAD,
            Failure::NoPath(_) => EXIT_NO_PATH,
            Failure::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Load(m) | Failure::NoPath(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Scenario(e) => Failure::Load(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Plan {
            common,
            agent,
            variant,
            trace,
        } => cmd_plan(&common, agent, &variant, trace),
        Command::Simulate { common } => cmd_simulate(&common),
        Command::Bench {
            common,
            agent,
            variant,
            values,
        } => cmd_bench(&common, agent, &variant, &values),
        Command::Sweep {
            common,
            param,
            values,
        } => cmd_sweep(&common, &param, &values),
    }
}

fn load(spec: &str) -> Result<ScenarioFile, Failure> {
    let path = Path::new(spec);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(|e| Failure::Load(format!("{spec}: {e}")))?
    } else if let Some(b) = bundled::get(spec) {
        b.text.to_string()
    } else {
        return Err(Failure::Load(format!(
            "{spec}: no such file or bundled scenario"
        )));
    };
    load_scenario(&text).map_err(|e| Failure::Load(format!("{spec}: {e}")))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize to JSON");
    s.push('\n');
    s
}

fn cmd_plan(common: &Common, agent: usize, variant: &str, trace: bool) -> Result<(), Failure> {
    let variant = SearchVariant::parse(variant)?;
    let file = load(&common.scenario)?;
    let scenario = file.build().map_err(|e| Failure::Load(e.to_string()))?;
    let options = PlanOptions {
        record_trace: trace,
        ..PlanOptions::default()
    };
    let run = plan_agent(&scenario, agent, variant, options)?;
    prepare_out(&common.out)?;
    let path = match run.result {
        Ok(p) => p,
        Err(e) => {
            let summary = json!({
                "scenario": file.metadata.name,
                "agent_id": agent,
                "variant": variant,
                "error": e.to_string(),
                "plan_time": run.wall_time.as_secs_f64(),
            });
            write(&common.out, "plan.json", &to_json(&summary))?;
            return Err(Failure::NoPath(e.to_string()));
        }
    };
    let mut csv = String::from("x,y,theta\n");
    for p in &path.dense_poses {
        writeln!(csv, "{:.6},{:.6},{:.6}", p.x, p.y, p.theta).expect("string write");
    }
    write(&common.out, "path.csv", &csv)?;
    let summary = json!({
        "scenario": file.metadata.name,
        "agent_id": agent,
        "variant": variant,
        "cost": path.cost,
        "nodes_expanded": path.nodes_expanded,
        "plan_time": run.wall_time.as_secs_f64(),
        "primitives": path.primitive_ids.len(),
    });
    write(&common.out, "plan.json", &to_json(&summary))?;
    if trace {
        let mut t = String::from("order,ix,iy,itheta,g,h,parent_ix,parent_iy,parent_itheta\n");
        for (i, r) in path.trace.iter().enumerate() {
            let parent = r.parent.map_or(",,".to_string(), |p| {
                format!("{},{},{}", p.ix, p.iy, p.itheta)
            });
            writeln!(
                t,
                "{i},{},{},{},{:.6},{:.6},{parent}",
                r.key.ix, r.key.iy, r.key.itheta, r.g, r.h
            )
            .expect("string write");
        }
        write(&common.out, "trace.csv", &t)?;
    }
    println!(
        "{}: agent {agent} planned with {} nodes expanded in {:.4} s (cost {:.3})",
        file.metadata.name,
        path.nodes_expanded,
        run.wall_time.as_secs_f64(),
        path.cost
    );
    Ok(())
}

fn cmd_simulate(common: &Common) -> Result<(), Failure> {
    let file = load(&common.scenario)?;
    let art = simulate(&file)?;
    prepare_out(&common.out)?;
    write(&common.out, "trajectory.csv", &art.trajectory_csv)?;
    write(&common.out, "references.csv", &art.references_csv)?;
    write(&common.out, "metrics.json", &to_json(&art.metrics))?;
    write(&common.out, "events.json", &to_json(&art.events))?;
    write(&common.out, "run_stats.json", &to_json(&art.stats))?;
    println!(
        "{}: {} steps, mean step time {:.4} s",
        file.metadata.name,
        art.metrics.steps,
        art.stats.mean_step_time()
    );
    for a in &art.metrics.agents {
        println!(
            "  agent {}: {} max deviation {:.3} m, stop episodes {}",
            a.id,
            a.status.as_str(),
            a.max_deviation,
            a.stop_episodes
        );
    }
    Ok(())
}

fn cmd_bench(
    common: &Common,
    agent: usize,
    variants: &[String],
    horizons: &[usize],
) -> Result<(), Failure> {
    let wants_mpc = variants.iter().any(|v| v.trim() == "mpc");
    let search_variants = variants
        .iter()
        .filter(|v| v.trim() != "mpc")
        .map(|v| SearchVariant::parse(v))
        .collect::<Result<Vec<_>, _>>()?;
    let file = load(&common.scenario)?;
    let scenario = file.build().map_err(|e| Failure::Load(e.to_string()))?;
    prepare_out(&common.out)?;

    if !search_variants.is_empty() {
        let options = PlanOptions {
            record_trace: false,
            max_expansions: Some(BENCH_MAX_EXPANSIONS),
            max_time: Some(BENCH_MAX_TIME),
        };
        let mut csv = String::from("variant,found,nodes_expanded,cost,wall_time\n");
        println!(
            "{:<10} {:>14} {:>10} {:>10}",
            "variant", "nodes", "cost", "time_s"
        );
        for v in search_variants {
            let run = plan_agent(&scenario, agent, v, options)?;
            let (found, nodes, cost) = match &run.result {
                Ok(p) => (true, p.nodes_expanded, p.cost),
                Err(PlanError::NoPath { nodes_expanded, .. }) => (false, *nodes_expanded, f64::NAN),
                Err(PlanError::StartInvalid) => (false, 0, f64::NAN),
            };
            let t = run.wall_time.as_secs_f64();
            writeln!(csv, "{},{found},{nodes},{cost:.6},{t:.6}", v.name()).expect("string write");
            println!("{:<10} {nodes:>14} {cost:>10.3} {t:>10.4}", v.name());
        }
        write(&common.out, "bench_search.csv", &csv)?;
    }
    if wants_mpc {
        let rows = time_horizons(&file, horizons)?;
        let mut csv = String::from("horizon,steps,mean_step_time,mean_control_time\n");
        println!(
            "{:<8} {:>8} {:>14} {:>14}",
            "horizon", "steps", "step_s", "control_s"
        );
        for r in rows {
            writeln!(
                csv,
                "{},{},{:.6},{:.6}",
                r.horizon, r.steps, r.mean_step_time, r.mean_control_time
            )
            .expect("string write");
            println!(
                "{:<8} {:>8} {:>14.5} {:>14.5}",
                r.horizon, r.steps, r.mean_step_time, r.mean_control_time
            );
        }
        write(&common.out, "bench_mpc.csv", &csv)?;
    }
    Ok(())
}

fn parse_values(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Failure::Usage(format!("invalid value `{s}`")))
        })
        .collect()
}

fn cmd_sweep(common: &Common, param: &str, values: &str) -> Result<(), Failure> {
    if !SWEEP_PARAMETERS.contains(&param) {
        return Err(Failure::Usage(format!(
            "unknown parameter `{param}`; expected one of {}",
            SWEEP_PARAMETERS.join(", ")
        )));
    }
    let values = parse_values(values)?;
    let file = load(&common.scenario)?;
    let rows = sweep(&file, param, &values)?;
    prepare_out(&common.out)?;
    let mut csv = format!(
        "{param},nodes_expanded,planning_time,max_deviation,mean_deviation,min_clearance,arrived,collided,stop_episodes,mean_step_time\n"
    );
    for r in &rows {
        writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.6},{},{},{},{},{:.6}",
            r.value,
            r.nodes_expanded,
            r.planning_time,
            r.max_deviation,
            r.mean_deviation,
            r.min_clearance.map_or(String::new(), |c| format!("{c:.6}")),
            r.arrived,
            r.collided,
            r.stop_episodes,
            r.mean_step_time
        )
        .expect("string write");
    }
    write(&common.out, "sweep.csv", &csv)?;
    print!("{csv}");
    Ok(())
}
