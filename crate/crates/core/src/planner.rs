//! A* over the motion-primitive lattice. Vertices are generated lazily from
//! primitive end poses and deduplicated through a coarse discrete key.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    circle_segment_collides, wrap_angle, Circle, ConvexPolygon, Footprint, Point2, Pose, Segment,
};
use crate::primitives::{MotionPrimitive, PrimitiveSet};

pub type Configuration = Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no path found after {nodes_expanded} expansions ({reason})")]
    NoPath {
        nodes_expanded: usize,
        reason: NoPathReason,
    },
    #[error("start configuration collides with the environment")]
    StartInvalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoPathReason {
    FrontierEmpty,
    ExpansionBudget,
    TimeBudget,
}

impl std::fmt::Display for NoPathReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoPathReason::FrontierEmpty => "frontier empty",
            NoPathReason::ExpansionBudget => "expansion budget exhausted",
            NoPathReason::TimeBudget => "time budget exhausted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DiscreteKey {
    pub ix: i64,
    pub iy: i64,
    pub itheta: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyResolution {
    pub position: f64,
    pub heading: f64,
}

impl Default for KeyResolution {
    fn default() -> Self {
        Self {
            position: 0.5,
            heading: 10f64.to_radians(),
        }
    }
}

impl KeyResolution {
    pub fn key(&self, q: &Configuration) -> DiscreteKey {
        let bins = (std::f64::consts::TAU / self.heading).round() as i64;
        DiscreteKey {
            ix: (q.x / self.position).floor() as i64,
            iy: (q.y / self.position).floor() as i64,
            itheta: ((q.theta / self.heading).round() as i64).rem_euclid(bins),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerWeights {
    pub w_hd: f64,
    pub w_htheta: f64,
    pub w_hphi: f64,
    pub w_cd: f64,
    pub w_cphi: f64,
    pub w_cc: f64,
}

impl Default for PlannerWeights {
    fn default() -> Self {
        Self {
            w_hd: 1.0,
            w_htheta: 2.7,
            w_hphi: 15.0,
            w_cd: 1.0,
            w_cphi: 5.0,
            w_cc: 0.0,
        }
    }
}

impl PlannerWeights {
    /// Same cost weights, heuristic replaced by the given term weights.
    pub fn with_heuristic(&self, w_hd: f64, w_htheta: f64, w_hphi: f64) -> Self {
        Self {
            w_hd,
            w_htheta,
            w_hphi,
            ..*self
        }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.w_hd,
            self.w_htheta,
            self.w_hphi,
            self.w_cd,
            self.w_cphi,
            self.w_cc,
        ]
        .iter()
        .all(|w| w.is_finite() && *w >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub center: Point2,
    pub theta: f64,
    pub epsilon: f64,
    pub delta_theta: f64,
}

impl GoalSpec {
    pub fn new(center: Point2, theta: f64) -> Self {
        Self {
            center,
            theta,
            epsilon: 1.0,
            delta_theta: 15f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point2,
    pub max: Point2,
}

impl Bounds {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Uniform-grid bucket index over segments.
#[derive(Debug, Clone)]
struct SegmentGrid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl SegmentGrid {
    const CELL: f64 = 2.0;

    fn new(segments: &[Segment]) -> Self {
        let cell = Self::CELL;
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, s) in segments.iter().enumerate() {
            let (x0, x1) = (s.a.x.min(s.b.x), s.a.x.max(s.b.x));
            let (y0, y1) = (s.a.y.min(s.b.y), s.a.y.max(s.b.y));
            for cx in (x0 / cell).floor() as i64..=(x1 / cell).floor() as i64 {
                for cy in (y0 / cell).floor() as i64..=(y1 / cell).floor() as i64 {
                    cells.entry((cx, cy)).or_default().push(i);
                }
            }
        }
        Self { cell, cells }
    }

    fn for_each_near(&self, p: Point2, radius: f64, mut f: impl FnMut(usize) -> bool) -> bool {
        let c = self.cell;
        for cx in ((p.x - radius) / c).floor() as i64..=((p.x + radius) / c).floor() as i64 {
            for cy in ((p.y - radius) / c).floor() as i64..=((p.y + radius) / c).floor() as i64 {
                if let Some(ids) = self.cells.get(&(cx, cy)) {
                    for &i in ids {
                        if f(i) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

#[derive(Debug, Clone)]
pub struct Environment {
    obstacles: Vec<Segment>,
    forbidden_regions: Vec<ConvexPolygon>,
    bounds: Option<Bounds>,
    grid: SegmentGrid,
}

impl Environment {
    pub fn new(
        obstacles: Vec<Segment>,
        forbidden_regions: Vec<ConvexPolygon>,
        bounds: Option<Bounds>,
    ) -> Self {
        let grid = SegmentGrid::new(&obstacles);
        Self {
            obstacles,
            forbidden_regions,
            bounds,
            grid,
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new(), None)
    }

    pub fn obstacles(&self) -> &[Segment] {
        &self.obstacles
    }

    pub fn forbidden_regions(&self) -> &[ConvexPolygon] {
        &self.forbidden_regions
    }

    pub fn bounds(&self) -> Option<Bounds> {
        self.bounds
    }

    /// Copy with extra forbidden regions appended.
    pub fn with_extra_regions(&self, extra: &[ConvexPolygon]) -> Self {
        let mut e = self.clone();
        e.forbidden_regions.extend_from_slice(extra);
        e
    }

    pub fn circle_hits_obstacle(&self, c: &Circle) -> bool {
        self.grid.for_each_near(c.center, c.radius, |i| {
            circle_segment_collides(c, &self.obstacles[i])
        })
    }

    /// Distance from `p` to the nearest obstacle segment, capped at `cap`.
    pub fn nearest_obstacle_distance(&self, p: Point2, cap: f64) -> f64 {
        let mut best = cap;
        self.grid.for_each_near(p, cap, |i| {
            best = best.min(self.obstacles[i].distance_to(p));
            false
        });
        best
    }

    pub fn in_forbidden_region(&self, p: Point2) -> bool {
        self.forbidden_regions.iter().any(|r| r.contains(p))
    }

    pub fn pose_is_free(&self, pose: &Pose, wheelbase: f64, radius: f64) -> bool {
        if let Some(b) = self.bounds {
            if !b.contains(pose.position()) {
                return false;
            }
        }
        let f = Footprint::at(pose, wheelbase, radius);
        f.circles()
            .iter()
            .all(|c| !self.circle_hits_obstacle(c) && !self.in_forbidden_region(c.center))
    }
}

/// Dual-circle footprint used for planning: wheelbase plus the inflated radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootprintParams {
    pub wheelbase: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchLimits {
    pub max_expansions: usize,
    pub max_time: Duration,
    pub record_trace: bool,
}

impl Default for SearchLimits {
    fn default() -> Self {
        Self {
            max_expansions: 200_000,
            max_time: Duration::from_secs(20),
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerSettings {
    pub weights: PlannerWeights,
    pub footprint: FootprintParams,
    pub resolution: KeyResolution,
    pub clearance_distance: f64,
    pub limits: SearchLimits,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub key: DiscreteKey,
    pub g: f64,
    pub h: f64,
    pub parent: Option<DiscreteKey>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    pub configurations: Vec<Configuration>,
    pub primitive_ids: Vec<usize>,
    pub dense_poses: Vec<Pose>,
    pub cost: f64,
    pub nodes_expanded: usize,
    pub trace: Vec<TraceRecord>,
}

pub fn is_valid(
    q: &Configuration,
    m: &MotionPrimitive,
    env: &Environment,
    fp: &FootprintParams,
) -> bool {
    m.local_poses
        .iter()
        .skip(1)
        .all(|p| env.pose_is_free(&q.compose(p), fp.wheelbase, fp.radius))
}

/// Clearance shortfall summed over the samples of `m` placed at `q`.
pub fn clearance_penalty(
    q: &Configuration,
    m: &MotionPrimitive,
    env: &Environment,
    d_safe: f64,
    spacing: f64,
) -> f64 {
    m.collision_points
        .iter()
        .skip(1)
        .map(|p| {
            let d = env.nearest_obstacle_distance(q.transform_point(*p), d_safe);
            (d_safe - d).max(0.0) * spacing
        })
        .sum()
}

pub fn transition_cost(
    q: &Configuration,
    m: &MotionPrimitive,
    env: &Environment,
    w: &PlannerWeights,
    d_safe: f64,
    spacing: f64,
) -> f64 {
    let mut c = w.w_cd * m.arc_length + w.w_cphi * m.steering.abs();
    if w.w_cc > 0.0 {
        c += w.w_cc * clearance_penalty(q, m, env, d_safe, spacing);
    }
    c
}

/// Successors reachable from `q` through valid primitives, with transition cost.
pub fn neighbors(
    q: &Configuration,
    set: &PrimitiveSet,
    env: &Environment,
    s: &PlannerSettings,
) -> Vec<(usize, Configuration, f64)> {
    set.primitives
        .iter()
        .enumerate()
        .filter(|(_, m)| is_valid(q, m, env, &s.footprint))
        .map(|(i, m)| {
            let c = transition_cost(
                q,
                m,
                env,
                &s.weights,
                s.clearance_distance,
                set.sample_spacing,
            );
            (i, m.end_at(q), c)
        })
        .collect()
}

/// Heuristic terms: distance to the goal disc, heading misalignment with the
/// disc (blended into the goal heading close to it), and a turning-effort proxy.
pub fn heuristic(
    q: &Configuration,
    goal: &GoalSpec,
    w: &PlannerWeights,
    min_turn_radius: f64,
) -> f64 {
    let diff = goal.center - q.position();
    let dist = diff.norm();
    let h_d = (dist - goal.epsilon).max(0.0);
    if w.w_htheta == 0.0 && w.w_hphi == 0.0 {
        return w.w_hd * h_d;
    }
    let to_goal = wrap_angle(q.theta - goal.theta).abs();
    let (bearing_err, lambda) = if dist > 1e-9 {
        let bearing = diff.y.atan2(diff.x);
        // Headings that point anywhere into the goal disc count as aligned.
        let tolerance = (goal.epsilon / dist).min(1.0).asin();
        (
            (wrap_angle(bearing - q.theta).abs() - tolerance).max(0.0),
            (dist / (3.0 * goal.epsilon)).clamp(0.0, 1.0),
        )
    } else {
        (0.0, 0.0)
    };
    let h_theta = lambda * bearing_err + (1.0 - lambda) * to_goal;
    let h_phi = bearing_err * min_turn_radius;
    w.w_hd * h_d + w.w_htheta * h_theta + w.w_hphi * h_phi
}

pub fn is_goal(q: &Configuration, goal: &GoalSpec) -> bool {
    q.position().dist(goal.center) <= goal.epsilon
        && wrap_angle(q.theta - goal.theta).abs() <= goal.delta_theta
}

#[derive(Debug)]
struct Node {
    pose: Pose,
    g: f64,
    parent: Option<usize>,
    primitive: Option<usize>,
}

#[derive(Debug, PartialEq)]
struct OpenEntry {
    f: f64,
    h: f64,
    seq: u64,
    node: usize,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    // Reversed so that BinaryHeap pops the smallest (f, h, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn search(
    start: &Configuration,
    goal: &GoalSpec,
    set: &PrimitiveSet,
    env: &Environment,
    settings: &PlannerSettings,
) -> Result<PlannedPath, PlanError> {
    let fp = &settings.footprint;
    if !env.pose_is_free(start, fp.wheelbase, fp.radius) {
        return Err(PlanError::StartInvalid);
    }
    let started = Instant::now();
    let r_turn = set.min_turn_radius();
    let res = &settings.resolution;
    let limits = &settings.limits;

    let mut nodes = vec![Node {
        pose: *start,
        g: 0.0,
        parent: None,
        primitive: None,
    }];
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    let h0 = heuristic(start, goal, &settings.weights, r_turn);
    open.push(OpenEntry {
        f: h0,
        h: h0,
        seq,
        node: 0,
    });
    let mut closed: HashSet<DiscreteKey> = HashSet::new();
    let mut best_g: HashMap<DiscreteKey, f64> = HashMap::new();
    best_g.insert(res.key(start), 0.0);
    let mut trace = Vec::new();
    let mut expanded = 0usize;

    while let Some(entry) = open.pop() {
        let idx = entry.node;
        let pose = nodes[idx].pose;
        let key = res.key(&pose);
        // Superseded by a cheaper entry for the same key.
        if best_g.get(&key).is_some_and(|&bg| nodes[idx].g > bg) {
            continue;
        }
        if !closed.insert(key) {
            continue;
        }
        if is_goal(&pose, goal) {
            return Ok(reconstruct(&nodes, idx, set, expanded, trace));
        }
        if expanded >= limits.max_expansions {
            return Err(PlanError::NoPath {
                nodes_expanded: expanded,
                reason: NoPathReason::ExpansionBudget,
            });
        }
        if expanded.is_multiple_of(256) && started.elapsed() > limits.max_time {
            return Err(PlanError::NoPath {
                nodes_expanded: expanded,
                reason: NoPathReason::TimeBudget,
            });
        }
        expanded += 1;
        let g = nodes[idx].g;
        if limits.record_trace {
            trace.push(TraceRecord {
                key,
                g,
                h: entry.h,
                parent: nodes[idx].parent.map(|p| res.key(&nodes[p].pose)),
            });
        }
        for (pid, child, cost) in neighbors(&pose, set, env, settings) {
            let ck = res.key(&child);
            if closed.contains(&ck) {
                continue;
            }
            let cg = g + cost;
            match best_g.get(&ck) {
                Some(&bg) if bg <= cg => continue,
                _ => {
                    best_g.insert(ck, cg);
                }
            }
            let h = heuristic(&child, goal, &settings.weights, r_turn);
            nodes.push(Node {
                pose: child,
                g: cg,
                parent: Some(idx),
                primitive: Some(pid),
            });
            seq += 1;
            open.push(OpenEntry {
                f: cg + h,
                h,
                seq,
                node: nodes.len() - 1,
            });
        }
    }
    Err(PlanError::NoPath {
        nodes_expanded: expanded,
        reason: NoPathReason::FrontierEmpty,
    })
}

fn reconstruct(
    nodes: &[Node],
    goal_idx: usize,
    set: &PrimitiveSet,
    expanded: usize,
    trace: Vec<TraceRecord>,
) -> PlannedPath {
    let mut chain = vec![goal_idx];
    while let Some(p) = nodes[*chain.last().unwrap()].parent {
        chain.push(p);
    }
    chain.reverse();
    let configurations: Vec<Pose> = chain.iter().map(|&i| nodes[i].pose).collect();
    let primitive_ids: Vec<usize> = chain
        .iter()
        .skip(1)
        .map(|&i| nodes[i].primitive.unwrap())
        .collect();
    let mut dense_poses = vec![configurations[0]];
    for (q, &pid) in configurations.iter().zip(&primitive_ids) {
        let (poses, _) = set.primitives[pid].transform_to_global(q);
        dense_poses.extend(poses.into_iter().skip(1));
    }
    PlannedPath {
        configurations,
        primitive_ids,
        dense_poses,
        cost: nodes[goal_idx].g,
        nodes_expanded: expanded,
        trace,
    }
}
