//! Fixed-step multi-agent loop: delayed perception, per-agent
//! plan / avoid / track pipeline, RK4 plant, collision audit.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::avoidance::{
    detect_conflict, estimate_steering, plan_stop, predict_ego, predict_other,
    refine_conflict_point, AvoidanceConfig, ProfileChoice,
};
use crate::geometry::{footprints_overlap, wrap_angle, ConvexPolygon, Footprint};
use crate::mpc::{self, MpcConfig, MpcWeights};
use crate::planner::{
    is_goal, search, Environment, FootprintParams, GoalSpec, KeyResolution, NoPathReason,
    PlanError, PlannerSettings, PlannerWeights, SearchLimits,
};
use crate::primitives::{generate_set, PrimitiveSet};
use crate::reference::{ProfileLimits, ReferenceTrajectory};
use crate::vehicle::{step_plant_substeps, ControlInput, VehicleParams, VehicleState};

/// Speed below which a vehicle counts as stationary.
const STANDSTILL: f64 = 0.05;
const PLANT_SUBSTEPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentStatus {
    Running,
    Arrived,
    Collided,
    Deadlocked,
}

impl AgentStatus {
    pub fn is_terminal(self) -> bool {
        self != AgentStatus::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentStatus::Running => "Running",
            AgentStatus::Arrived => "Arrived",
            AgentStatus::Collided => "Collided",
            AgentStatus::Deadlocked => "Deadlocked",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Running" => AgentStatus::Running,
            "Arrived" => AgentStatus::Arrived,
            "Collided" => AgentStatus::Collided,
            "Deadlocked" => AgentStatus::Deadlocked,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub id: usize,
    pub vehicle: VehicleParams,
    pub start: VehicleState,
    pub goal: GoalSpec,
    pub v_desired: f64,
    /// Deceleration used to shape the end of the speed profile.
    pub a_dec_comfort: f64,
    pub planner_weights: PlannerWeights,
    pub mpc_weights: MpcWeights,
    pub mpc: MpcConfig,
    pub avoidance: AvoidanceConfig,
    pub reaction_delay_steps: usize,
    /// Traffic-rule regions that apply to this agent only (e.g. oncoming lanes).
    pub forbidden: Vec<ConvexPolygon>,
}

/// Lattice and search settings shared by all agents of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Added to the body radius for planning.
    pub margin: f64,
    pub primitives: usize,
    pub arc_length: f64,
    pub sample_spacing: f64,
    pub position_resolution: f64,
    pub heading_resolution: f64,
    pub clearance_distance: f64,
    pub max_expansions: usize,
    pub max_time: f64,
    pub replan_threshold: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        let res = KeyResolution::default();
        Self {
            margin: 0.5,
            primitives: 9,
            arc_length: 1.0,
            sample_spacing: 0.25,
            position_resolution: res.position,
            heading_resolution: res.heading,
            clearance_distance: 1.0,
            max_expansions: 200_000,
            max_time: 20.0,
            replan_threshold: 1.0,
        }
    }
}

impl PlannerConfig {
    pub fn settings(&self, weights: PlannerWeights, vehicle: &VehicleParams) -> PlannerSettings {
        PlannerSettings {
            weights,
            footprint: FootprintParams {
                wheelbase: vehicle.wheelbase,
                radius: vehicle.body_radius() + self.margin,
            },
            resolution: KeyResolution {
                position: self.position_resolution,
                heading: self.heading_resolution,
            },
            clearance_distance: self.clearance_distance,
            limits: SearchLimits {
                max_expansions: self.max_expansions,
                max_time: Duration::from_secs_f64(self.max_time),
                record_trace: false,
            },
        }
    }

    pub fn primitive_set(&self, vehicle: &VehicleParams) -> PrimitiveSet {
        generate_set(
            self.primitives,
            vehicle.delta_max,
            self.arc_length,
            self.sample_spacing,
            vehicle.wheelbase,
        )
        .expect("validated planner configuration")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub ts: f64,
    pub max_duration: f64,
    pub deadlock_timeout: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            ts: 0.1,
            max_duration: 60.0,
            deadlock_timeout: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub environment: Environment,
    pub agents: Vec<AgentSpec>,
    pub planner: PlannerConfig,
    pub sim: SimConfig,
}

/// Another vehicle as seen by an agent, possibly delayed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub id: usize,
    pub state: VehicleState,
    /// Observation one step older, used to estimate steering.
    pub previous: Option<VehicleState>,
    pub wheelbase: f64,
    pub radius: f64,
}

/// Rolling buffer of true world snapshots, newest last.
#[derive(Debug, Clone)]
pub struct History {
    snapshots: VecDeque<Vec<VehicleState>>,
    capacity: usize,
}

impl History {
    pub fn new(max_delay: usize) -> Self {
        Self {
            snapshots: VecDeque::new(),
            capacity: max_delay + 2,
        }
    }

    pub fn push(&mut self, snapshot: Vec<VehicleState>) {
        if self.snapshots.len() == self.capacity {
            self.snapshots.pop_front();
        }
        self.snapshots.push_back(snapshot);
    }

    /// Snapshot `delay` steps back, or the oldest one held.
    fn delayed(&self, delay: usize) -> Option<(&Vec<VehicleState>, Option<&Vec<VehicleState>>)> {
        let n = self.snapshots.len();
        if n == 0 {
            return None;
        }
        let i = n - 1 - delay.min(n - 1);
        Some((
            &self.snapshots[i],
            i.checked_sub(1).map(|j| &self.snapshots[j]),
        ))
    }
}

/// Vehicles within the ego's detection range, read `reaction_delay_steps`
/// snapshots back. Arrived vehicles have left the junction and are not reported.
pub fn perceive(
    history: &History,
    ego: usize,
    agents: &[AgentSpec],
    statuses: &[AgentStatus],
    ego_state: &VehicleState,
) -> Vec<Observation> {
    let spec = &agents[ego];
    let Some((snap, prev)) = history.delayed(spec.reaction_delay_steps) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (j, other) in agents.iter().enumerate() {
        if j == ego || statuses[j] == AgentStatus::Arrived {
            continue;
        }
        let s = snap[j];
        if s.position().dist(ego_state.position()) <= spec.avoidance.r_detect {
            out.push(Observation {
                id: other.id,
                state: s,
                previous: prev.map(|p| p[j]),
                wheelbase: other.vehicle.wheelbase,
                radius: other.vehicle.body_radius(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    Planned {
        nodes_expanded: usize,
        plan_time: f64,
        replan: bool,
    },
    PlanFailed {
        reason: String,
    },
    Stop {
        other_id: usize,
        step: usize,
        s_conflict: f64,
        s_stop: f64,
        unavoidable: bool,
    },
    Released,
    Collision {
        other_id: usize,
    },
    Arrived,
    Deadlocked,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEvent {
    pub t: f64,
    pub agent_id: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Mutable per-agent controller state carried between steps.
#[derive(Debug, Clone)]
pub struct AgentRuntime {
    pub reference: Option<ReferenceTrajectory>,
    hint: Option<usize>,
    pub previous_input: ControlInput,
    stopping: bool,
    clear_steps: usize,
    pub no_path: bool,
    primitives: PrimitiveSet,
    settings: PlannerSettings,
    /// Shared environment plus this agent's own regions, if it has any.
    own_env: Option<Environment>,
}

impl AgentRuntime {
    pub fn new(spec: &AgentSpec, planner: &PlannerConfig, env: &Environment) -> Self {
        Self {
            reference: None,
            hint: None,
            previous_input: ControlInput::default(),
            stopping: false,
            clear_steps: 0,
            no_path: false,
            primitives: planner.primitive_set(&spec.vehicle),
            settings: planner.settings(spec.planner_weights, &spec.vehicle),
            own_env: (!spec.forbidden.is_empty()).then(|| env.with_extra_regions(&spec.forbidden)),
        }
    }

    pub fn is_stopping(&self) -> bool {
        self.stopping
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub input: ControlInput,
    pub conflict: bool,
    pub planning_time: Duration,
    pub degraded: bool,
    pub events: Vec<EventKind>,
}

fn full_brake(spec: &AgentSpec, rt: &AgentRuntime) -> ControlInput {
    spec.vehicle.clamp_input(ControlInput::new(
        spec.vehicle.a_min,
        rt.previous_input.delta,
    ))
}

/// Plans, runs avoidance against the perceived vehicles, then tracks.
pub fn agent_step(
    spec: &AgentSpec,
    rt: &mut AgentRuntime,
    state: &VehicleState,
    perception: &[Observation],
    env: &Environment,
    planner: &PlannerConfig,
) -> StepOutcome {
    let mut events = Vec::new();
    let mut planning_time = Duration::ZERO;
    if rt.no_path {
        return StepOutcome {
            input: full_brake(spec, rt),
            conflict: false,
            planning_time,
            degraded: false,
            events,
        };
    }

    let replan = match &rt.reference {
        None => true,
        Some(r) => r.needs_replan(state.position(), planner.replan_threshold),
    };
    if replan {
        let started = Instant::now();
        let env = rt.own_env.as_ref().unwrap_or(env);
        let result = search(&state.pose(), &spec.goal, &rt.primitives, env, &rt.settings);
        planning_time = started.elapsed();
        match result {
            Ok(path) => {
                let limits = ProfileLimits {
                    v_desired: spec.v_desired,
                    a_max: spec.vehicle.a_max,
                    a_dec: spec.a_dec_comfort,
                };
                events.push(EventKind::Planned {
                    nodes_expanded: path.nodes_expanded,
                    plan_time: planning_time.as_secs_f64(),
                    replan: rt.reference.is_some(),
                });
                rt.reference = Some(ReferenceTrajectory::from_poses(
                    &path.dense_poses,
                    limits,
                    state.v,
                ));
                rt.hint = None;
                rt.stopping = false;
                rt.clear_steps = 0;
            }
            Err(e) => {
                events.push(EventKind::PlanFailed {
                    reason: describe_plan_error(&e),
                });
                if rt.reference.is_none() {
                    rt.no_path = true;
                    return StepOutcome {
                        input: full_brake(spec, rt),
                        conflict: false,
                        planning_time,
                        degraded: false,
                        events,
                    };
                }
            }
        }
    }
    let mut reference = rt
        .reference
        .take()
        .expect("reference present after planning");

    let s_now = reference.project(state.position(), rt.hint).s;
    let cfg = &spec.avoidance;
    let mut conflict = false;
    if !perception.is_empty() {
        let ego_path = predict_ego(
            state,
            s_now,
            &reference,
            ProfileChoice::Nominal,
            &spec.vehicle,
            cfg,
        );
        let others: Vec<_> = perception
            .iter()
            .map(|o| {
                let delta = o.previous.map_or(0.0, |p| {
                    estimate_steering(
                        &p,
                        &o.state,
                        spec.mpc.ts,
                        o.wheelbase,
                        spec.vehicle.delta_max,
                    )
                });
                (
                    o.id,
                    predict_other(&o.state, delta, o.wheelbase, o.radius, cfg),
                )
            })
            .collect();
        if let Some(report) = detect_conflict(&ego_path, &others, cfg) {
            let other = &others
                .iter()
                .find(|(id, _)| *id == report.other_id)
                .expect("reported agent")
                .1;
            let report =
                refine_conflict_point(&report, s_now, &reference, other, &spec.vehicle, cfg, 0.25);
            let plan = plan_stop(&report, state.v, s_now, &reference, spec.vehicle.a_min, cfg);
            if !plan.ignored {
                conflict = true;
                rt.stopping = true;
                rt.clear_steps = 0;
                events.push(EventKind::Stop {
                    other_id: report.other_id,
                    step: report.step,
                    s_conflict: report.s_conflict,
                    s_stop: plan.s_stop,
                    unavoidable: plan.unavoidable,
                });
                reference = plan.reference;
            }
        }
    }
    if !conflict && rt.stopping {
        rt.clear_steps += 1;
        if rt.clear_steps >= cfg.k_clear {
            reference = reference.reprofile_from(s_now, state.v);
            rt.stopping = false;
            rt.clear_steps = 0;
            events.push(EventKind::Released);
        }
    }

    let result = mpc::step(
        state,
        &rt.previous_input,
        &reference,
        rt.hint,
        &spec.vehicle,
        &spec.mpc_weights,
        &spec.mpc,
    );
    rt.reference = Some(reference);
    let (input, degraded) = match result {
        Ok(sol) => {
            rt.hint = Some(sol.projection.index);
            (sol.u0, sol.degraded)
        }
        Err(_) => (full_brake(spec, rt), true),
    };
    rt.previous_input = input;
    StepOutcome {
        input,
        conflict: conflict || rt.stopping,
        planning_time,
        degraded,
        events,
    }
}

fn describe_plan_error(e: &PlanError) -> String {
    match e {
        PlanError::StartInvalid => "start pose invalid".into(),
        PlanError::NoPath {
            reason,
            nodes_expanded,
        } => {
            let why = match reason {
                NoPathReason::FrontierEmpty => "frontier exhausted",
                NoPathReason::ExpansionBudget => "expansion budget",
                NoPathReason::TimeBudget => "time budget",
            };
            format!("{why} after {nodes_expanded} expansions")
        }
    }
}

/// Goal reached on the true state, or at rest at the end of the reference
/// within tracking tolerance of the goal region.
fn has_arrived(
    spec: &AgentSpec,
    state: &VehicleState,
    reference: Option<&ReferenceTrajectory>,
    tolerance: f64,
) -> bool {
    if is_goal(&state.pose(), &spec.goal) {
        return true;
    }
    let Some(r) = reference else { return false };
    if r.truncated_at().is_some() || state.v > STANDSTILL {
        return false;
    }
    let at_end = r.total_length() - r.project(state.position(), None).s <= tolerance;
    let g = &spec.goal;
    at_end
        && state.position().dist(g.center) <= g.epsilon + tolerance
        && wrap_angle(state.theta - g.theta).abs() <= g.delta_theta
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub agent_id: usize,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
    pub a: f64,
    pub delta: f64,
    pub deviation: f64,
    pub conflict: bool,
    pub status: AgentStatus,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AgentRunStats {
    pub id: usize,
    pub compute_time: f64,
    pub planning_time: f64,
    pub nodes_expanded: usize,
    pub plans: usize,
    pub degraded_steps: usize,
    pub unavoidable: bool,
    pub no_path: bool,
}

/// Wall-clock statistics; unlike the log these vary between runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub steps: usize,
    /// Summed agent compute per step, planning included.
    pub step_times: Vec<f64>,
    /// Same, without global planning.
    pub control_times: Vec<f64>,
    pub agents: Vec<AgentRunStats>,
}

impl RunStats {
    pub fn mean_step_time(&self) -> f64 {
        mean(&self.step_times)
    }

    pub fn mean_control_time(&self) -> f64 {
        mean(&self.control_times)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub log: TrajectoryLog,
    pub events: Vec<SimEvent>,
    /// Final reference of each agent (None if it never planned).
    pub references: Vec<(usize, Option<ReferenceTrajectory>)>,
    pub statuses: Vec<(usize, AgentStatus)>,
    pub stats: RunStats,
}

/// Runs the scenario to completion. Agents are processed in ascending id
/// order against a common start-of-step snapshot.
pub fn run(scenario: &Scenario) -> SimOutput {
    let mut order: Vec<usize> = (0..scenario.agents.len()).collect();
    order.sort_by_key(|&i| scenario.agents[i].id);
    let agents: Vec<AgentSpec> = order.iter().map(|&i| scenario.agents[i].clone()).collect();
    let n = agents.len();
    let ts = scenario.sim.ts;
    let max_steps = (scenario.sim.max_duration / ts).round() as usize;
    let deadlock_steps = (scenario.sim.deadlock_timeout / ts).round() as usize;

    let mut states: Vec<VehicleState> = agents.iter().map(|a| a.start).collect();
    let mut statuses = vec![AgentStatus::Running; n];
    let mut runtimes: Vec<AgentRuntime> = agents
        .iter()
        .map(|a| AgentRuntime::new(a, &scenario.planner, &scenario.environment))
        .collect();
    let mut history = History::new(
        agents
            .iter()
            .map(|a| a.reaction_delay_steps)
            .max()
            .unwrap_or(0),
    );
    let mut log = TrajectoryLog::default();
    let mut events = Vec::new();
    let mut stats = RunStats {
        agents: agents
            .iter()
            .map(|a| AgentRunStats {
                id: a.id,
                ..Default::default()
            })
            .collect(),
        ..Default::default()
    };
    let mut standstill_steps = 0usize;
    let mut step = 0usize;

    loop {
        let t = step as f64 * ts;
        history.push(states.clone());
        let finished = n == 0 || statuses.iter().all(|s| s.is_terminal()) || step >= max_steps;

        let mut inputs = vec![ControlInput::default(); n];
        let mut conflicts = vec![false; n];
        let mut step_time = 0.0;
        let mut control_time = 0.0;
        if !finished {
            for i in 0..n {
                if statuses[i] != AgentStatus::Running {
                    inputs[i] = ControlInput::new(0.0, runtimes[i].previous_input.delta);
                    continue;
                }
                let started = Instant::now();
                let perception = perceive(&history, i, &agents, &statuses, &states[i]);
                let out = agent_step(
                    &agents[i],
                    &mut runtimes[i],
                    &states[i],
                    &perception,
                    &scenario.environment,
                    &scenario.planner,
                );
                let elapsed = started.elapsed().as_secs_f64();
                let plan_s = out.planning_time.as_secs_f64();
                step_time += elapsed;
                control_time += elapsed - plan_s;
                let st = &mut stats.agents[i];
                st.compute_time += elapsed;
                st.planning_time += plan_s;
                st.degraded_steps += out.degraded as usize;
                st.no_path = runtimes[i].no_path;
                for ev in out.events {
                    match &ev {
                        EventKind::Planned { nodes_expanded, .. } => {
                            st.nodes_expanded += nodes_expanded;
                            st.plans += 1;
                        }
                        EventKind::Stop {
                            unavoidable: true, ..
                        } => st.unavoidable = true,
                        _ => {}
                    }
                    events.push(SimEvent {
                        t,
                        agent_id: agents[i].id,
                        kind: ev,
                    });
                }
                inputs[i] = out.input;
                conflicts[i] = out.conflict;
            }
            stats.step_times.push(step_time);
            stats.control_times.push(control_time);
        }

        for i in 0..n {
            let deviation = runtimes[i]
                .reference
                .as_ref()
                .map_or(0.0, |r| r.distance_to(states[i].position()));
            let s = &states[i];
            log.rows.push(LogRow {
                t,
                agent_id: agents[i].id,
                x: s.x,
                y: s.y,
                v: s.v,
                theta: s.theta,
                a: inputs[i].a,
                delta: inputs[i].delta,
                deviation,
                conflict: conflicts[i],
                status: statuses[i],
            });
        }
        if finished {
            break;
        }

        for i in 0..n {
            if statuses[i] == AgentStatus::Running {
                states[i] = step_plant_substeps(
                    &states[i],
                    &inputs[i],
                    &agents[i].vehicle,
                    ts,
                    PLANT_SUBSTEPS,
                );
            }
        }
        step += 1;
        let t_next = step as f64 * ts;

        // Collision audit on the body footprint.
        let footprints: Vec<Footprint> = (0..n)
            .map(|i| {
                Footprint::at(
                    &states[i].pose(),
                    agents[i].vehicle.wheelbase,
                    agents[i].vehicle.body_radius(),
                )
            })
            .collect();
        let mut hit = vec![None; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let involved = [statuses[i], statuses[j]];
                if involved.contains(&AgentStatus::Arrived)
                    || !involved.contains(&AgentStatus::Running)
                {
                    continue;
                }
                if footprints_overlap(&footprints[i], &footprints[j]) {
                    hit[i].get_or_insert(agents[j].id);
                    hit[j].get_or_insert(agents[i].id);
                }
            }
        }
        for i in 0..n {
            if let Some(other) = hit[i] {
                if statuses[i] == AgentStatus::Running {
                    statuses[i] = AgentStatus::Collided;
                    states[i].v = 0.0;
                    events.push(SimEvent {
                        t: t_next,
                        agent_id: agents[i].id,
                        kind: EventKind::Collision { other_id: other },
                    });
                }
            }
        }

        for i in 0..n {
            if statuses[i] == AgentStatus::Running
                && has_arrived(
                    &agents[i],
                    &states[i],
                    runtimes[i].reference.as_ref(),
                    scenario.planner.replan_threshold,
                )
            {
                statuses[i] = AgentStatus::Arrived;
                states[i].v = 0.0;
                events.push(SimEvent {
                    t: t_next,
                    agent_id: agents[i].id,
                    kind: EventKind::Arrived,
                });
            }
        }

        let running: Vec<usize> = (0..n)
            .filter(|&i| statuses[i] == AgentStatus::Running)
            .collect();
        if !running.is_empty() && running.iter().all(|&i| states[i].v.abs() < STANDSTILL) {
            standstill_steps += 1;
        } else {
            standstill_steps = 0;
        }
        if standstill_steps > deadlock_steps {
            for &i in &running {
                statuses[i] = AgentStatus::Deadlocked;
                events.push(SimEvent {
                    t: t_next,
                    agent_id: agents[i].id,
                    kind: EventKind::Deadlocked,
                });
            }
        }
    }

    stats.steps = step;
    SimOutput {
        log,
        events,
        references: agents
            .iter()
            .zip(runtimes)
            .map(|(a, r)| (a.id, r.reference))
            .collect(),
        statuses: agents
            .iter()
            .zip(&statuses)
            .map(|(a, s)| (a.id, *s))
            .collect(),
        stats,
    }
}
