//! A* against a uniform-cost search over the same keyed lattice.

mod common;

use common::planning::{compare_with_oracle, dijkstra, oracle_settings, primitives};
use junction_core::geometry::{Point2, Pose};
use junction_core::planner::{search, Bounds, Environment, GoalSpec};

fn open_field() -> Environment {
    Environment::new(
        vec![],
        vec![],
        Some(Bounds {
            min: Point2::new(0.0, 0.0),
            max: Point2::new(40.0, 20.0),
        }),
    )
}

#[test]
fn matches_oracle_on_straight_corridor() {
    let env = open_field();
    let set = primitives();
    let settings = oracle_settings();
    let start = Pose::new(5.0, 10.0, 0.0);
    for (gx, gy) in [(15.0, 10.0), (22.0, 10.0), (30.0, 10.0)] {
        let goal = GoalSpec::new(Point2::new(gx, gy), 0.0);
        let p = search(&start, &goal, &set, &env, &settings).unwrap();
        let c = dijkstra(&start, &goal, &set, &env, &settings).unwrap();
        assert!(
            (p.cost - c).abs() <= 1e-9,
            "goal ({gx}, {gy}): {} vs {c}",
            p.cost
        );
    }
}

#[test]
fn agrees_with_oracle_on_solvability() {
    let r = compare_with_oracle(7, 20);
    eprintln!("{r:?}");
    assert_eq!(r.solvability_disagreements, 0);
    assert!(
        r.solved_by_both >= 15,
        "only {} solvable cases",
        r.solved_by_both
    );
}
