//! Scenario files (TOML), trajectory and reference CSV, and run metrics.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::avoidance::AvoidanceConfig;
use crate::geometry::{
    polyline_arc, polyline_circle, ConvexPolygon, Footprint, Point2, Pose, Segment,
};
use crate::mpc::{MpcConfig, MpcWeights};
use crate::planner::{Bounds, Environment, GoalSpec, PlannerWeights};
use crate::reference::ReferenceTrajectory;
use crate::sim::{
    AgentSpec, AgentStatus, LogRow, PlannerConfig, Scenario, SimConfig, TrajectoryLog,
};
use crate::vehicle::{VehicleParams, VehicleState};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("malformed csv at line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Quantity {
    Number(f64),
    Text(String),
}

fn with_unit(q: Quantity, units: &[(&str, f64)], default: f64) -> Result<f64, String> {
    match q {
        Quantity::Number(x) => Ok(x * default),
        Quantity::Text(t) => {
            let t = t.trim();
            for (suffix, factor) in units {
                if let Some(num) = t.strip_suffix(suffix) {
                    return num
                        .trim()
                        .parse::<f64>()
                        .map(|x| x * factor)
                        .map_err(|e| format!("bad number in {t:?}: {e}"));
                }
            }
            let known: Vec<&str> = units.iter().map(|u| u.0).collect();
            Err(format!("unknown unit in {t:?}; expected one of {known:?}"))
        }
    }
}

/// Speed in m/s, or a string with a `km/h` or `m/s` suffix.
fn speed<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    with_unit(
        Quantity::deserialize(d)?,
        &[("km/h", 1.0 / 3.6), ("m/s", 1.0)],
        1.0,
    )
    .map_err(serde::de::Error::custom)
}

/// Angle in radians, or a string with a `deg` or `rad` suffix.
fn angle<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    with_unit(
        Quantity::deserialize(d)?,
        &[("deg", std::f64::consts::PI / 180.0), ("rad", 1.0)],
        1.0,
    )
    .map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolylineSpec {
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub closed: bool,
}

fn default_chord_error() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleSpec {
    pub center: [f64; 2],
    pub radius: f64,
    #[serde(default = "default_chord_error")]
    pub max_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSpec {
    pub center: [f64; 2],
    pub radius: f64,
    #[serde(deserialize_with = "angle")]
    pub start: f64,
    #[serde(deserialize_with = "angle")]
    pub sweep: f64,
    #[serde(default = "default_chord_error")]
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolygonSpec {
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub bounds: Option<BoundsSpec>,
    pub polylines: Vec<PolylineSpec>,
    pub circles: Vec<CircleSpec>,
    pub arcs: Vec<ArcSpec>,
    pub forbidden: Vec<PolygonSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    pub x: f64,
    pub y: f64,
    #[serde(deserialize_with = "angle")]
    pub theta: f64,
    #[serde(default, deserialize_with = "speed")]
    pub v: f64,
}

fn default_epsilon() -> f64 {
    1.0
}

fn default_delta_theta() -> f64 {
    15f64.to_radians()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalFile {
    pub x: f64,
    pub y: f64,
    #[serde(deserialize_with = "angle")]
    pub theta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta_theta", deserialize_with = "angle")]
    pub delta_theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcFile {
    pub horizon: usize,
    pub ts: f64,
}

impl Default for MpcFile {
    fn default() -> Self {
        let c = MpcConfig::default();
        Self {
            horizon: c.horizon,
            ts: c.ts,
        }
    }
}

fn default_v_desired() -> f64 {
    30.0 / 3.6
}

fn default_a_dec() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentFile {
    pub id: usize,
    pub start: StartSpec,
    pub goal: GoalFile,
    #[serde(default = "default_v_desired", deserialize_with = "speed")]
    pub v_desired: f64,
    #[serde(default = "default_a_dec")]
    pub a_dec_comfort: f64,
    #[serde(default)]
    pub reaction_delay_steps: usize,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub planner_weights: PlannerWeights,
    #[serde(default)]
    pub mpc_weights: MpcWeights,
    #[serde(default)]
    pub mpc: MpcFile,
    #[serde(default)]
    pub avoidance: AvoidanceConfig,
    /// Regions this agent may not enter, on top of the shared ones.
    #[serde(default)]
    pub forbidden: Vec<PolygonSpec>,
}

/// A validated scenario as written on disk. Quantities are held in SI units
/// and radians, so serializing it back gives a canonical file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub metadata: Metadata,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub agents: Vec<AgentFile>,
}

fn point(p: [f64; 2]) -> Point2 {
    Point2::new(p[0], p[1])
}

fn convex_polygons(
    specs: &[PolygonSpec],
    field: &str,
) -> Result<Vec<ConvexPolygon>, ScenarioError> {
    specs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            ConvexPolygon::new(p.points.iter().copied().map(point).collect())
                .map_err(|e| invalid(format!("{field}[{i}]"), e.to_string()))
        })
        .collect()
}

impl ScenarioFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario values are representable in TOML")
    }

    pub fn agent(&self, id: usize) -> Option<&AgentFile> {
        self.agents.iter().find(|a| a.id == id)
    }

    fn segments(&self) -> Result<Vec<Segment>, ScenarioError> {
        let env = &self.environment;
        let mut out = Vec::new();
        for (i, pl) in env.polylines.iter().enumerate() {
            let field = format!("environment.polylines[{i}]");
            if pl.points.len() < 2 {
                return Err(invalid(field, "a polyline needs at least 2 points"));
            }
            let mut pts: Vec<Point2> = pl.points.iter().copied().map(point).collect();
            if pl.closed {
                pts.push(pts[0]);
            }
            for w in pts.windows(2) {
                out.push(Segment::new(w[0], w[1]).map_err(|e| invalid(&field, e.to_string()))?);
            }
        }
        for (i, c) in env.circles.iter().enumerate() {
            if !(c.radius > 0.0 && c.max_error > 0.0 && c.max_error < c.radius) {
                return Err(invalid(
                    format!("environment.circles[{i}]"),
                    "radius > max_error > 0",
                ));
            }
            out.extend(polyline_circle(point(c.center), c.radius, c.max_error));
        }
        for (i, a) in env.arcs.iter().enumerate() {
            if !(a.radius > 0.0 && a.max_error > 0.0 && a.max_error < a.radius) || a.sweep == 0.0 {
                return Err(invalid(
                    format!("environment.arcs[{i}]"),
                    "radius > max_error > 0 and sweep != 0",
                ));
            }
            out.extend(polyline_arc(
                point(a.center),
                a.radius,
                a.start,
                a.sweep,
                a.max_error,
            ));
        }
        Ok(out)
    }

    fn polygons(&self) -> Result<Vec<ConvexPolygon>, ScenarioError> {
        convex_polygons(&self.environment.forbidden, "environment.forbidden")
    }

    fn bounds(&self) -> Option<Bounds> {
        self.environment.bounds.map(|b| Bounds {
            min: point(b.min),
            max: point(b.max),
        })
    }

    /// Checks every invariant the simulation relies on.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.metadata.name.trim().is_empty() {
            return Err(invalid("metadata.name", "must not be empty"));
        }
        let sim = &self.sim;
        if !(sim.ts > 0.0 && sim.max_duration > 0.0 && sim.deadlock_timeout > 0.0) {
            return Err(invalid(
                "sim",
                "ts > 0, max_duration > 0 and deadlock_timeout > 0",
            ));
        }
        let p = &self.planner;
        if p.primitives == 0
            || !(p.arc_length > 0.0)
            || !(p.sample_spacing > 0.0 && p.sample_spacing <= p.arc_length)
        {
            return Err(invalid(
                "planner",
                "primitives >= 1 and 0 < sample_spacing <= arc_length",
            ));
        }
        if !(p.position_resolution > 0.0 && p.heading_resolution > 0.0) {
            return Err(invalid("planner", "resolutions > 0"));
        }
        if !(p.margin >= 0.0
            && p.replan_threshold > 0.0
            && p.max_time > 0.0
            && p.clearance_distance >= 0.0)
        {
            return Err(invalid(
                "planner",
                "margin >= 0, clearance_distance >= 0, replan_threshold > 0, max_time > 0",
            ));
        }

        let bounds = self.bounds();
        if let Some(b) = bounds {
            if !(b.min.x < b.max.x && b.min.y < b.max.y) {
                return Err(invalid("environment.bounds", "min < max"));
            }
        }
        let segments = self.segments()?;
        let polygons = self.polygons()?;
        if let Some(b) = bounds {
            if segments
                .iter()
                .any(|s| !b.contains(s.a) || !b.contains(s.b))
            {
                return Err(invalid(
                    "environment",
                    "obstacle geometry must lie within bounds",
                ));
            }
            if polygons
                .iter()
                .any(|poly| poly.vertices().iter().any(|v| !b.contains(*v)))
            {
                return Err(invalid(
                    "environment.forbidden",
                    "polygons must lie within bounds",
                ));
            }
        }

        let mut ids: Vec<usize> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(
                "agents",
                format!("agent ids must be unique (duplicate {})", w[0]),
            ));
        }
        for a in &self.agents {
            let f = |name: &str| format!("agents[id={}].{name}", a.id);
            a.vehicle
                .validate()
                .map_err(|e| invalid(f("vehicle"), e.to_string()))?;
            if !a.planner_weights.is_valid() {
                return Err(invalid(f("planner_weights"), "all weights >= 0"));
            }
            a.mpc_weights
                .validate()
                .map_err(|e| invalid(f("mpc_weights"), e))?;
            if a.mpc.horizon == 0 {
                return Err(invalid(f("mpc.horizon"), "horizon >= 1"));
            }
            if (a.mpc.ts - sim.ts).abs() > 1e-12 {
                return Err(invalid(f("mpc.ts"), "controller step must equal sim.ts"));
            }
            a.avoidance
                .validate(a.mpc.horizon)
                .map_err(|e| invalid(f("avoidance"), e))?;
            if !(a.goal.epsilon > 0.0 && a.goal.delta_theta > 0.0) {
                return Err(invalid(f("goal"), "epsilon > 0 and delta_theta > 0"));
            }
            if !(a.v_desired > 0.0 && a.v_desired <= a.vehicle.v_max) {
                return Err(invalid(f("v_desired"), "0 < v_desired <= v_max"));
            }
            if !(a.start.v >= a.vehicle.v_min && a.start.v <= a.vehicle.v_max) {
                return Err(invalid(f("start.v"), "v_min <= v <= v_max"));
            }
            convex_polygons(&a.forbidden, &f("forbidden"))?;
            if !(a.a_dec_comfort > 0.0) {
                return Err(invalid(f("a_dec_comfort"), "a_dec_comfort > 0"));
            }
            let finite = [
                a.start.x,
                a.start.y,
                a.start.theta,
                a.goal.x,
                a.goal.y,
                a.goal.theta,
            ];
            if finite.iter().any(|x| !x.is_finite()) {
                return Err(invalid(f("start/goal"), "coordinates must be finite"));
            }
            if let Some(b) = bounds {
                if !b.contains(Point2::new(a.start.x, a.start.y))
                    || !b.contains(Point2::new(a.goal.x, a.goal.y))
                {
                    return Err(invalid(f("start/goal"), "must lie within bounds"));
                }
            }
        }
        Ok(())
    }

    /// Runtime scenario. Assumes `validate` has passed.
    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        let environment = Environment::new(self.segments()?, self.polygons()?, self.bounds());
        let agents = self
            .agents
            .iter()
            .map(|a| {
                Ok(AgentSpec {
                    id: a.id,
                    vehicle: a.vehicle,
                    start: VehicleState::new(a.start.x, a.start.y, a.start.v, a.start.theta),
                    goal: GoalSpec {
                        center: Point2::new(a.goal.x, a.goal.y),
                        theta: a.goal.theta,
                        epsilon: a.goal.epsilon,
                        delta_theta: a.goal.delta_theta,
                    },
                    v_desired: a.v_desired,
                    a_dec_comfort: a.a_dec_comfort,
                    planner_weights: a.planner_weights,
                    mpc_weights: a.mpc_weights,
                    mpc: MpcConfig {
                        horizon: a.mpc.horizon,
                        ts: a.mpc.ts,
                        ..MpcConfig::default()
                    },
                    avoidance: a.avoidance,
                    reaction_delay_steps: a.reaction_delay_steps,
                    forbidden: convex_polygons(&a.forbidden, "forbidden")?,
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        Ok(Scenario {
            name: self.metadata.name.clone(),
            environment,
            agents,
            planner: self.planner,
            sim: self.sim,
        })
    }
}

/// Parses and validates a scenario.
pub fn load_scenario(text: &str) -> Result<ScenarioFile, ScenarioError> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    file.validate()?;
    Ok(file)
}

pub const TRAJECTORY_HEADER: &str =
    "t,agent_id,x,y,v,theta,a,delta,deviation_m,conflict_flag,status";

pub fn trajectory_to_string(log: &TrajectoryLog) -> String {
    let mut s = String::with_capacity(64 * (log.rows.len() + 1));
    s.push_str(TRAJECTORY_HEADER);
    s.push('\n');
    for r in &log.rows {
        writeln!(
            s,
            "{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.t,
            r.agent_id,
            r.x,
            r.y,
            r.v,
            r.theta,
            r.a,
            r.delta,
            r.deviation,
            r.conflict as u8,
            r.status.as_str()
        )
        .expect("writing to a String cannot fail");
    }
    s
}

pub fn write_trajectory(log: &TrajectoryLog, out: &mut impl Write) -> Result<(), ScenarioError> {
    out.write_all(trajectory_to_string(log).as_bytes())?;
    Ok(())
}

fn field<T: std::str::FromStr>(cols: &[&str], i: usize, line: usize) -> Result<T, ScenarioError>
where
    T::Err: std::fmt::Display,
{
    cols[i].parse::<T>().map_err(|e| ScenarioError::Csv {
        line,
        reason: format!("column {}: {e}", i + 1),
    })
}

pub fn parse_trajectory(text: &str) -> Result<TrajectoryLog, ScenarioError> {
    let mut lines = text.lines();
    if lines.next() != Some(TRAJECTORY_HEADER) {
        return Err(ScenarioError::Csv {
            line: 1,
            reason: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for (k, l) in lines.enumerate() {
        let line = k + 2;
        let cols: Vec<&str> = l.split(',').collect();
        if cols.len() != 11 {
            return Err(ScenarioError::Csv {
                line,
                reason: format!("expected 11 columns, found {}", cols.len()),
            });
        }
        let conflict = match cols[9] {
            "0" => false,
            "1" => true,
            other => {
                return Err(ScenarioError::Csv {
                    line,
                    reason: format!("conflict_flag {other:?}"),
                })
            }
        };
        let status = AgentStatus::parse(cols[10]).ok_or_else(|| ScenarioError::Csv {
            line,
            reason: format!("status {:?}", cols[10]),
        })?;
        rows.push(LogRow {
            t: field(&cols, 0, line)?,
            agent_id: field(&cols, 1, line)?,
            x: field(&cols, 2, line)?,
            y: field(&cols, 3, line)?,
            v: field(&cols, 4, line)?,
            theta: field(&cols, 5, line)?,
            a: field(&cols, 6, line)?,
            delta: field(&cols, 7, line)?,
            deviation: field(&cols, 8, line)?,
            conflict,
            status,
        });
    }
    Ok(TrajectoryLog { rows })
}

/// Geometry of an agent's final reference, as written to `references.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub agent_id: usize,
    pub points: Vec<(f64, Pose, f64)>,
}

impl ReferencePath {
    pub fn from_trajectory(agent_id: usize, r: &ReferenceTrajectory) -> Self {
        Self {
            agent_id,
            points: r
                .waypoints()
                .iter()
                .map(|w| (w.s, w.pose, w.v_ref))
                .collect(),
        }
    }

    /// Distance from `p` to the polyline through the reference poses.
    pub fn distance_to(&self, p: Point2) -> f64 {
        match self.points.len() {
            0 => f64::INFINITY,
            1 => self.points[0].1.position().dist(p),
            _ => self
                .points
                .windows(2)
                .map(|w| {
                    let (a, b) = (w[0].1.position(), w[1].1.position());
                    let d = b - a;
                    let len2 = d.dot(d);
                    let t = if len2 > 0.0 {
                        ((p - a).dot(d) / len2).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    (a + d * t).dist(p)
                })
                .fold(f64::INFINITY, f64::min),
        }
    }
}

pub const REFERENCE_HEADER: &str = "agent_id,s,x,y,theta,v_ref";

pub fn references_to_string(refs: &[ReferencePath]) -> String {
    let mut s = String::from(REFERENCE_HEADER);
    s.push('\n');
    for r in refs {
        for (sv, pose, v) in &r.points {
            writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.agent_id, sv, pose.x, pose.y, pose.theta, v
            )
            .expect("writing to a String cannot fail");
        }
    }
    s
}

pub fn parse_references(text: &str) -> Result<Vec<ReferencePath>, ScenarioError> {
    let mut lines = text.lines();
    if lines.next() != Some(REFERENCE_HEADER) {
        return Err(ScenarioError::Csv {
            line: 1,
            reason: "unexpected header".into(),
        });
    }
    let mut out: Vec<ReferencePath> = Vec::new();
    for (k, l) in lines.enumerate() {
        let line = k + 2;
        let cols: Vec<&str> = l.split(',').collect();
        if cols.len() != 6 {
            return Err(ScenarioError::Csv {
                line,
                reason: format!("expected 6 columns, found {}", cols.len()),
            });
        }
        let id: usize = field(&cols, 0, line)?;
        let entry = (
            field(&cols, 1, line)?,
            Pose::new(
                field(&cols, 2, line)?,
                field(&cols, 3, line)?,
                field(&cols, 4, line)?,
            ),
            field(&cols, 5, line)?,
        );
        match out.last_mut() {
            Some(r) if r.agent_id == id => r.points.push(entry),
            _ => out.push(ReferencePath {
                agent_id: id,
                points: vec![entry],
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentMetrics {
    pub id: usize,
    pub status: AgentStatus,
    pub max_deviation: f64,
    pub mean_deviation: f64,
    /// Time of arrival, if the agent arrived.
    pub travel_time: Option<f64>,
    /// Smallest body-footprint clearance to any other agent; absent when alone.
    pub min_clearance: Option<f64>,
    /// Number of contiguous runs of steps flagged as conflict.
    pub stop_episodes: usize,
    pub max_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub steps: usize,
    pub duration: f64,
    pub min_clearance: Option<f64>,
    pub agents: Vec<AgentMetrics>,
}

impl MetricsReport {
    pub fn agent(&self, id: usize) -> Option<&AgentMetrics> {
        self.agents.iter().find(|a| a.id == id)
    }
}

/// Metrics as a pure function of the log, the scenario and the final
/// reference geometry. Deviations are distances to the reference polyline;
/// clearances use the body dual-circle footprint and skip arrived agents.
pub fn compute_metrics(
    log: &TrajectoryLog,
    scenario: &ScenarioFile,
    references: &[ReferencePath],
) -> MetricsReport {
    let mut ids: Vec<usize> = scenario.agents.iter().map(|a| a.id).collect();
    ids.sort_unstable();
    let vehicle = |id: usize| scenario.agent(id).map(|a| a.vehicle).unwrap_or_default();

    // Group rows by time; rows are time-ordered with one row per agent.
    let mut frames: Vec<&[LogRow]> = Vec::new();
    let mut start = 0;
    for i in 1..=log.rows.len() {
        if i == log.rows.len() || log.rows[i].t != log.rows[start].t {
            if i > start {
                frames.push(&log.rows[start..i]);
            }
            start = i;
        }
    }

    let mut per_agent: Vec<AgentMetrics> = ids
        .iter()
        .map(|&id| AgentMetrics {
            id,
            status: AgentStatus::Running,
            max_deviation: 0.0,
            mean_deviation: 0.0,
            travel_time: None,
            min_clearance: None,
            stop_episodes: 0,
            max_speed: 0.0,
        })
        .collect();
    let index_of = |id: usize| ids.binary_search(&id).ok();
    let mut dev_sum = vec![0.0; ids.len()];
    let mut dev_n = vec![0usize; ids.len()];
    let mut last_conflict = vec![false; ids.len()];
    let mut global_min: Option<f64> = None;

    for frame in &frames {
        for r in frame.iter() {
            let Some(i) = index_of(r.agent_id) else {
                continue;
            };
            let m = &mut per_agent[i];
            if let Some(rp) = references.iter().find(|p| p.agent_id == r.agent_id) {
                let d = rp.distance_to(Point2::new(r.x, r.y));
                m.max_deviation = m.max_deviation.max(d);
                dev_sum[i] += d;
                dev_n[i] += 1;
            }
            m.max_speed = m.max_speed.max(r.v);
            if r.status == AgentStatus::Arrived && m.travel_time.is_none() {
                m.travel_time = Some(r.t);
            }
            if r.conflict && !last_conflict[i] {
                m.stop_episodes += 1;
            }
            last_conflict[i] = r.conflict;
            m.status = r.status;
        }
        for (a, ra) in frame.iter().enumerate() {
            for rb in frame.iter().skip(a + 1) {
                if ra.status == AgentStatus::Arrived || rb.status == AgentStatus::Arrived {
                    continue;
                }
                let (va, vb) = (vehicle(ra.agent_id), vehicle(rb.agent_id));
                let fa = Footprint::at(
                    &Pose::new(ra.x, ra.y, ra.theta),
                    va.wheelbase,
                    va.body_radius(),
                );
                let fb = Footprint::at(
                    &Pose::new(rb.x, rb.y, rb.theta),
                    vb.wheelbase,
                    vb.body_radius(),
                );
                let c = fa.clearance(&fb);
                for id in [ra.agent_id, rb.agent_id] {
                    if let Some(i) = index_of(id) {
                        let m = &mut per_agent[i].min_clearance;
                        *m = Some(m.map_or(c, |x| x.min(c)));
                    }
                }
                global_min = Some(global_min.map_or(c, |x| x.min(c)));
            }
        }
    }
    for (i, m) in per_agent.iter_mut().enumerate() {
        if dev_n[i] > 0 {
            m.mean_deviation = dev_sum[i] / dev_n[i] as f64;
        }
    }
    MetricsReport {
        scenario: scenario.metadata.name.clone(),
        steps: frames.len().saturating_sub(1),
        duration: frames.last().map_or(0.0, |f| f[0].t),
        min_clearance: global_min,
        agents: per_agent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[metadata]
name = "minimal"

[[agents]]
id = 0
start = { x = 0.0, y = 0.0, theta = "90 deg", v = "36 km/h" }
goal = { x = 0.0, y = 30.0, theta = 1.5707963267948966 }
v_desired = "30 km/h"
"#;

    #[test]
    fn units_are_converted() {
        let f = load_scenario(MINIMAL).unwrap();
        let a = &f.agents[0];
        assert!((a.start.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((a.start.v - 10.0).abs() < 1e-12);
        assert!((a.v_desired - 30.0 / 3.6).abs() < 1e-12);
        assert_eq!(a.goal.epsilon, 1.0);
        assert_eq!(a.mpc.horizon, 13);
    }

    #[test]
    fn round_trip_is_a_fixed_point() {
        let f = load_scenario(MINIMAL).unwrap();
        let text = f.to_toml();
        let g = load_scenario(&text).unwrap();
        assert_eq!(f, g);
        assert_eq!(text, g.to_toml());
    }

    #[test]
    fn invariant_violations_are_named() {
        let bad_weights = format!("{MINIMAL}\n[agents.mpc_weights]\nw_par = 0.0\n");
        let e = load_scenario(&bad_weights).unwrap_err().to_string();
        assert!(e.contains("w_perp >= w_par > 0"), "{e}");
        let bad_pred = format!("{MINIMAL}\n[agents.avoidance]\nn_pred = 10\nt_pred = 1.0\n");
        let e = load_scenario(&bad_pred).unwrap_err().to_string();
        assert!(e.contains("n_pred > MPC horizon"), "{e}");
        let dup = format!("{MINIMAL}\n[[agents]]\nid = 0\nstart = {{ x = 5.0, y = 0.0, theta = 0.0 }}\ngoal = {{ x = 9.0, y = 0.0, theta = 0.0 }}\n");
        assert!(load_scenario(&dup)
            .unwrap_err()
            .to_string()
            .contains("unique"));
        let unit = MINIMAL.replace("\"30 km/h\"", "\"30 mph\"");
        assert!(matches!(load_scenario(&unit), Err(ScenarioError::Parse(_))));
        let syntax = "[metadata\nname = 1";
        let e = load_scenario(syntax).unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
    }

    fn row(t: f64, id: usize, x: f64, y: f64) -> LogRow {
        LogRow {
            t,
            agent_id: id,
            x,
            y,
            v: 1.0,
            theta: 0.0,
            a: 0.0,
            delta: 0.0,
            deviation: 0.0,
            conflict: false,
            status: AgentStatus::Running,
        }
    }

    #[test]
    fn trajectory_csv_round_trip() {
        assert_eq!(
            trajectory_to_string(&TrajectoryLog::default()),
            format!("{TRAJECTORY_HEADER}\n")
        );
        let log = TrajectoryLog {
            rows: vec![row(0.0, 0, 1.0 / 3.0, -0.0), row(0.1, 0, 2.0, 1e-9)],
        };
        let text = trajectory_to_string(&log);
        assert_eq!(text.lines().count(), 3);
        let parsed = parse_trajectory(&text).unwrap();
        assert_eq!(trajectory_to_string(&parsed), text);
    }

    #[test]
    fn metrics_examples() {
        let scen = load_scenario(&format!(
            "{MINIMAL}\n[[agents]]\nid = 1\nstart = {{ x = 5.0, y = 0.0, theta = \"90 deg\" }}\ngoal = {{ x = 5.0, y = 30.0, theta = \"90 deg\" }}\n"
        ))
        .unwrap();
        let mut log = TrajectoryLog::default();
        for k in 0..3 {
            let t = k as f64 * 0.1;
            log.rows.push(LogRow {
                theta: std::f64::consts::FRAC_PI_2,
                ..row(t, 0, 0.0, k as f64)
            });
            log.rows.push(LogRow {
                theta: std::f64::consts::FRAC_PI_2,
                ..row(t, 1, 5.0, k as f64)
            });
        }
        let line = |id: usize, x: f64| ReferencePath {
            agent_id: id,
            points: vec![
                (0.0, Pose::new(x, 0.0, 1.57), 0.0),
                (30.0, Pose::new(x, 30.0, 1.57), 0.0),
            ],
        };
        let m = compute_metrics(&log, &scen, &[line(0, 0.0), line(1, 5.0)]);
        assert_eq!(m.agent(0).unwrap().max_deviation, 0.0);
        assert!((m.min_clearance.unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(m.steps, 2);

        let mut crash = log.clone();
        for r in crash.rows.iter_mut().filter(|r| r.agent_id == 1) {
            r.x = 1.5;
        }
        let m = compute_metrics(&crash, &scen, &[line(0, 0.0), line(1, 5.0)]);
        assert!(m.min_clearance.unwrap() <= 0.0);
        assert!((m.agent(1).unwrap().max_deviation - 3.5).abs() < 1e-12);
    }
}
