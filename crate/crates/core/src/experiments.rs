//! Drivers shared by the command-line tool and the test suites: search
//! variant benchmarks, controller horizon timing, parameter sweeps and full
//! simulation runs rendered to their on-disk formats.

use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::planner::{search, PlanError, PlannedPath, PlannerWeights};
use crate::scenario::{
    compute_metrics, parse_references, parse_trajectory, references_to_string,
    trajectory_to_string, MetricsReport, ReferencePath, ScenarioError, ScenarioFile,
};
use crate::sim::{run, AgentStatus, RunStats, Scenario, SimEvent};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("scenario has no agent {0}")]
    UnknownAgent(usize),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("unknown search variant `{0}`")]
    UnknownVariant(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Heuristic configurations compared in the search benchmark. All share the
/// transition costs of the scenario; only the heuristic terms differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchVariant {
    Dijkstra,
    Euclidean,
    Direction,
    Steering,
    Proposed,
}

impl SearchVariant {
    pub const ALL: [SearchVariant; 5] = [
        SearchVariant::Dijkstra,
        SearchVariant::Euclidean,
        SearchVariant::Direction,
        SearchVariant::Steering,
        SearchVariant::Proposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SearchVariant::Dijkstra => "dijkstra",
            SearchVariant::Euclidean => "euclidean",
            SearchVariant::Direction => "direction",
            SearchVariant::Steering => "steering",
            SearchVariant::Proposed => "proposed",
        }
    }

    pub fn parse(name: &str) -> Result<Self, ExperimentError> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name.trim())
            .ok_or_else(|| ExperimentError::UnknownVariant(name.to_string()))
    }

    pub fn weights(self, base: PlannerWeights) -> PlannerWeights {
        match self {
            SearchVariant::Dijkstra => base.with_heuristic(0.0, 0.0, 0.0),
            SearchVariant::Euclidean => base.with_heuristic(base.w_hd, 0.0, 0.0),
            SearchVariant::Direction => base.with_heuristic(base.w_hd, base.w_htheta, 0.0),
            SearchVariant::Steering => base.with_heuristic(base.w_hd, 0.0, base.w_hphi),
            SearchVariant::Proposed => base,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PlanOptions {
    pub record_trace: bool,
    /// Overrides the scenario's expansion budget.
    pub max_expansions: Option<usize>,
    /// Overrides the scenario's time budget, in seconds.
    pub max_time: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PlanRun {
    pub variant: SearchVariant,
    pub result: Result<PlannedPath, PlanError>,
    pub wall_time: Duration,
}

/// Plans one agent of `scenario` from its start state, honouring its own
/// forbidden regions.
pub fn plan_agent(
    scenario: &Scenario,
    agent_id: usize,
    variant: SearchVariant,
    options: PlanOptions,
) -> Result<PlanRun, ExperimentError> {
    let agent = scenario
        .agents
        .iter()
        .find(|a| a.id == agent_id)
        .ok_or(ExperimentError::UnknownAgent(agent_id))?;
    let mut planner = scenario.planner;
    if let Some(n) = options.max_expansions {
        planner.max_expansions = n;
    }
    if let Some(t) = options.max_time {
        planner.max_time = t;
    }
    let mut settings = planner.settings(variant.weights(agent.planner_weights), &agent.vehicle);
    settings.limits.record_trace = options.record_trace;
    let set = planner.primitive_set(&agent.vehicle);
    let env = scenario.environment.with_extra_regions(&agent.forbidden);
    let started = Instant::now();
    let result = search(&agent.start.pose(), &agent.goal, &set, &env, &settings);
    Ok(PlanRun {
        variant,
        result,
        wall_time: started.elapsed(),
    })
}

/// Everything a simulation run produces, in the forms written to disk.
/// Metrics are computed from the serialized trajectory and references, so
/// recomputing them from the files gives the same report.
#[derive(Debug, Clone)]
pub struct SimulationArtifacts {
    pub trajectory_csv: String,
    pub references_csv: String,
    pub metrics: MetricsReport,
    pub events: Vec<SimEvent>,
    pub stats: RunStats,
    pub statuses: Vec<(usize, AgentStatus)>,
}

impl SimulationArtifacts {
    pub fn status(&self, id: usize) -> Option<AgentStatus> {
        self.statuses
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, s)| *s)
    }

    pub fn unavoidable_raised(&self) -> bool {
        self.stats.agents.iter().any(|a| a.unavoidable)
    }
}

pub fn simulate(file: &ScenarioFile) -> Result<SimulationArtifacts, ExperimentError> {
    let scenario = file.build()?;
    let out = run(&scenario);
    let refs: Vec<ReferencePath> = out
        .references
        .iter()
        .filter_map(|(id, r)| r.as_ref().map(|r| ReferencePath::from_trajectory(*id, r)))
        .collect();
    let trajectory_csv = trajectory_to_string(&out.log);
    let references_csv = references_to_string(&refs);
    let metrics = metrics_from_files(file, &trajectory_csv, &references_csv)?;
    Ok(SimulationArtifacts {
        trajectory_csv,
        references_csv,
        metrics,
        events: out.events,
        stats: out.stats,
        statuses: out.statuses,
    })
}

pub fn metrics_from_files(
    file: &ScenarioFile,
    trajectory_csv: &str,
    references_csv: &str,
) -> Result<MetricsReport, ExperimentError> {
    let log = parse_trajectory(trajectory_csv)?;
    let refs = parse_references(references_csv)?;
    Ok(compute_metrics(&log, file, &refs))
}

/// Sets the controller horizon of every agent, stretching the prediction
/// horizon of the avoidance layer when it would no longer exceed it.
pub fn with_horizon(file: &ScenarioFile, horizon: usize) -> ScenarioFile {
    let mut f = file.clone();
    for a in &mut f.agents {
        a.mpc.horizon = horizon;
        if a.avoidance.n_pred <= horizon {
            a.avoidance.n_pred = horizon + 1;
            a.avoidance.t_pred = a.avoidance.n_pred as f64 * a.avoidance.dt;
        }
    }
    f
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HorizonTiming {
    pub horizon: usize,
    pub steps: usize,
    pub mean_step_time: f64,
    pub mean_control_time: f64,
}

pub fn time_horizons(
    file: &ScenarioFile,
    horizons: &[usize],
) -> Result<Vec<HorizonTiming>, ExperimentError> {
    horizons
        .iter()
        .map(|&h| {
            let f = with_horizon(file, h);
            f.validate()?;
            let out = run(&f.build()?);
            Ok(HorizonTiming {
                horizon: h,
                steps: out.stats.steps,
                mean_step_time: out.stats.mean_step_time(),
                mean_control_time: out.stats.mean_control_time(),
            })
        })
        .collect()
}

/// Parameters accepted by [`apply_parameter`]; each applies to every agent.
pub const SWEEP_PARAMETERS: &[&str] = &[
    "w_hd",
    "w_htheta",
    "w_hphi",
    "w_cd",
    "w_cphi",
    "w_cc",
    "w_perp",
    "w_par",
    "horizon",
    "r_detect",
    "reaction_delay_steps",
    "v_desired",
];

pub fn apply_parameter(
    file: &mut ScenarioFile,
    name: &str,
    value: f64,
) -> Result<(), ExperimentError> {
    if !SWEEP_PARAMETERS.contains(&name) {
        return Err(ExperimentError::UnknownParameter(name.to_string()));
    }
    if name == "horizon" {
        *file = with_horizon(file, value.round().max(0.0) as usize);
        return Ok(());
    }
    for a in &mut file.agents {
        let w = &mut a.planner_weights;
        match name {
            "w_hd" => w.w_hd = value,
            "w_htheta" => w.w_htheta = value,
            "w_hphi" => w.w_hphi = value,
            "w_cd" => w.w_cd = value,
            "w_cphi" => w.w_cphi = value,
            "w_cc" => w.w_cc = value,
            "w_perp" => a.mpc_weights.w_perp = value,
            "w_par" => a.mpc_weights.w_par = value,
            "r_detect" => a.avoidance.r_detect = value,
            "reaction_delay_steps" => a.reaction_delay_steps = value.round().max(0.0) as usize,
            "v_desired" => a.v_desired = value,
            _ => unreachable!("checked against SWEEP_PARAMETERS"),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    /// Nodes expanded over all plans of all agents.
    pub nodes_expanded: usize,
    pub planning_time: f64,
    pub max_deviation: f64,
    pub mean_deviation: f64,
    pub min_clearance: Option<f64>,
    pub arrived: usize,
    pub collided: usize,
    pub stop_episodes: usize,
    pub mean_step_time: f64,
}

/// One full simulation per value of `parameter`, in the order given.
pub fn sweep(
    file: &ScenarioFile,
    parameter: &str,
    values: &[f64],
) -> Result<Vec<SweepRow>, ExperimentError> {
    if !SWEEP_PARAMETERS.contains(&parameter) {
        return Err(ExperimentError::UnknownParameter(parameter.to_string()));
    }
    values
        .iter()
        .map(|&value| {
            let mut f = file.clone();
            apply_parameter(&mut f, parameter, value)?;
            f.validate()?;
            let art = simulate(&f)?;
            let m = &art.metrics;
            let count = |s: AgentStatus| m.agents.iter().filter(|a| a.status == s).count();
            let n = m.agents.len().max(1) as f64;
            Ok(SweepRow {
                value,
                nodes_expanded: art.stats.agents.iter().map(|a| a.nodes_expanded).sum(),
                planning_time: art.stats.agents.iter().map(|a| a.planning_time).sum(),
                max_deviation: m.agents.iter().map(|a| a.max_deviation).fold(0.0, f64::max),
                mean_deviation: m.agents.iter().map(|a| a.mean_deviation).sum::<f64>() / n,
                min_clearance: m.min_clearance,
                arrived: count(AgentStatus::Arrived),
                collided: count(AgentStatus::Collided),
                stop_episodes: m.agents.iter().map(|a| a.stop_episodes).sum(),
                mean_step_time: art.stats.mean_step_time(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn variant_names_round_trip() {
        for v in SearchVariant::ALL {
            assert_eq!(SearchVariant::parse(v.name()).unwrap(), v);
        }
        assert!(SearchVariant::parse("bfs").is_err());
        let w = SearchVariant::Steering.weights(PlannerWeights::default());
        assert_eq!((w.w_hd, w.w_htheta, w.w_hphi), (1.0, 0.0, 15.0));
        assert_eq!(w.w_cphi, PlannerWeights::default().w_cphi);
    }

    #[test]
    fn horizon_override_keeps_prediction_longer() {
        let f = bundled::get("fourleg_left_turn").unwrap().load().unwrap();
        let g = with_horizon(&f, 50);
        assert_eq!(g.agents[0].mpc.horizon, 50);
        assert_eq!(g.agents[0].avoidance.n_pred, 51);
        g.validate().unwrap();
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let f = bundled::get("fourleg_left_turn").unwrap().load().unwrap();
        assert!(matches!(
            sweep(&f, "gravity", &[1.0]),
            Err(ExperimentError::UnknownParameter(_))
        ));
        assert!(sweep(&f, "w_hphi", &[]).unwrap().is_empty());
    }

    #[test]
    fn plan_unknown_agent() {
        let s = bundled::get("fourleg_left_turn")
            .unwrap()
            .load()
            .unwrap()
            .build()
            .unwrap();
        assert!(matches!(
            plan_agent(&s, 9, SearchVariant::Proposed, PlanOptions::default()),
            Err(ExperimentError::UnknownAgent(9))
        ));
    }
}
