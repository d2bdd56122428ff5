//! Uniform-cost search over the planner's keyed lattice and random obstacle fields.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use junction_core::geometry::{polyline_circle, Point2, Pose, Segment};
use junction_core::planner::{
    is_goal, neighbors, Bounds, Environment, FootprintParams, GoalSpec, KeyResolution,
    PlannerSettings, PlannerWeights, SearchLimits,
};
use junction_core::primitives::{default_set, PrimitiveSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(PartialEq)]
struct Entry(f64, u64, Pose);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// Uniform-cost search on the keyed lattice; returns the optimal cost.
pub fn dijkstra(
    start: &Pose,
    goal: &GoalSpec,
    set: &PrimitiveSet,
    env: &Environment,
    s: &PlannerSettings,
) -> Option<f64> {
    let res = s.resolution;
    let mut open = BinaryHeap::new();
    let mut best: HashMap<_, f64> = HashMap::new();
    let mut closed = HashSet::new();
    let mut seq = 0;
    best.insert(res.key(start), 0.0);
    open.push(Entry(0.0, seq, *start));
    while let Some(Entry(g, _, q)) = open.pop() {
        let k = res.key(&q);
        if best.get(&k).is_some_and(|&b| g > b) || !closed.insert(k) {
            continue;
        }
        if is_goal(&q, goal) {
            return Some(g);
        }
        for (_, c, cost) in neighbors(&q, set, env, s) {
            let ck = res.key(&c);
            let cg = g + cost;
            if closed.contains(&ck) || best.get(&ck).is_some_and(|&b| b <= cg) {
                continue;
            }
            best.insert(ck, cg);
            seq += 1;
            open.push(Entry(cg, seq, c));
        }
    }
    None
}

/// A 30 m square with 2-5 circular obstacles, start on the left and goal on
/// the right, both footprint-free.
pub fn random_case(rng: &mut ChaCha8Rng) -> (Environment, Pose, GoalSpec) {
    let size = 30.0;
    loop {
        let mut segments: Vec<Segment> = Vec::new();
        for _ in 0..rng.gen_range(2..6) {
            let c = Point2::new(rng.gen_range(5.0..25.0), rng.gen_range(5.0..25.0));
            segments.extend(polyline_circle(c, rng.gen_range(0.5..2.5), 0.1));
        }
        let bounds = Bounds {
            min: Point2::new(0.0, 0.0),
            max: Point2::new(size, size),
        };
        let env = Environment::new(segments, vec![], Some(bounds));
        let start = Pose::new(
            rng.gen_range(3.0..8.0),
            rng.gen_range(3.0..27.0),
            rng.gen_range(-1.0..1.0),
        );
        let goal = GoalSpec::new(
            Point2::new(rng.gen_range(18.0..27.0), rng.gen_range(3.0..27.0)),
            rng.gen_range(-1.0..1.0),
        );
        let goal_pose = Pose::new(goal.center.x, goal.center.y, goal.theta);
        if env.pose_is_free(&start, 2.7, 1.5) && env.pose_is_free(&goal_pose, 2.7, 1.5) {
            return (env, start, goal);
        }
    }
}

/// Distance-only heuristic, no clearance cost, inflated planning radius.
pub fn oracle_settings() -> PlannerSettings {
    PlannerSettings {
        weights: PlannerWeights {
            w_cc: 0.0,
            ..PlannerWeights::default()
        }
        .with_heuristic(1.0, 0.0, 0.0),
        footprint: FootprintParams {
            wheelbase: 2.7,
            radius: 1.5,
        },
        resolution: KeyResolution::default(),
        clearance_distance: 1.0,
        limits: SearchLimits {
            max_expansions: 2_000_000,
            ..SearchLimits::default()
        },
    }
}

pub fn primitives() -> PrimitiveSet {
    default_set(2.7)
}

/// Outcome of comparing A* and the oracle over a batch of random fields.
#[derive(Debug, Default)]
pub struct OracleComparison {
    pub cases: usize,
    pub solved_by_both: usize,
    pub solvability_disagreements: usize,
    pub cost_matches: usize,
    pub max_abs_cost_gap: f64,
}

pub fn compare_with_oracle(seed: u64, cases: usize) -> OracleComparison {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let set = primitives();
    let settings = oracle_settings();
    let mut out = OracleComparison {
        cases,
        ..OracleComparison::default()
    };
    for _ in 0..cases {
        let (env, start, goal) = random_case(&mut rng);
        let astar = junction_core::planner::search(&start, &goal, &set, &env, &settings).ok();
        let oracle = dijkstra(&start, &goal, &set, &env, &settings);
        match (astar, oracle) {
            (Some(p), Some(c)) => {
                out.solved_by_both += 1;
                let gap = (p.cost - c).abs();
                if gap <= 1e-9 {
                    out.cost_matches += 1;
                }
                out.max_abs_cost_gap = out.max_abs_cost_gap.max(gap);
            }
            (None, None) => {}
            _ => out.solvability_disagreements += 1,
        }
    }
    out
}
