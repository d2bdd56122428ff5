//! End-to-end runs of the bundled scenarios, audited from the written logs.

use junction_core::bundled::{self, Category};
use junction_core::experiments::{simulate, sweep, SimulationArtifacts};
use junction_core::geometry::{
    footprints_overlap, project_point_to_segment, Footprint, Point2, Pose, Segment,
};
use junction_core::scenario::{load_scenario, parse_references, parse_trajectory, ScenarioFile};
use junction_core::sim::{AgentStatus, EventKind, TrajectoryLog};

fn run(name: &str) -> (ScenarioFile, SimulationArtifacts) {
    let file = bundled::get(name).unwrap().load().unwrap();
    let art = simulate(&file).unwrap();
    (file, art)
}

fn log_of(art: &SimulationArtifacts) -> TrajectoryLog {
    parse_trajectory(&art.trajectory_csv).unwrap()
}

/// Every applied input lies inside the agent's boxes and steering moves no
/// faster than the rate limit allows.
fn audit_inputs(file: &ScenarioFile, log: &TrajectoryLog) {
    let scenario = file.build().unwrap();
    for agent in &scenario.agents {
        let p = agent.vehicle;
        let ts = file.sim.ts;
        let rows: Vec<_> = log.rows.iter().filter(|r| r.agent_id == agent.id).collect();
        for r in &rows {
            assert!(
                r.a >= p.a_min - 1e-6 && r.a <= p.a_max + 1e-6,
                "a = {}",
                r.a
            );
            assert!(r.delta.abs() <= p.delta_max + 1e-6, "delta = {}", r.delta);
        }
        for w in rows.windows(2) {
            let rate = (w[1].delta - w[0].delta).abs() / ts;
            assert!(rate <= p.delta_rate_max + 1e-4, "steering rate {rate}");
        }
    }
}

/// No running vehicle drives through the spot where another one has parked
/// after arriving.
fn assert_no_ghosts(log: &TrajectoryLog) {
    let mut parked: Vec<(usize, f64, Pose)> = Vec::new();
    for r in &log.rows {
        if r.status == AgentStatus::Arrived && !parked.iter().any(|p| p.0 == r.agent_id) {
            parked.push((r.agent_id, r.t, Pose::new(r.x, r.y, r.theta)));
        }
    }
    for r in &log.rows {
        for (id, t, pose) in &parked {
            if r.agent_id != *id && r.t > *t && r.status == AgentStatus::Running {
                let a = Footprint::at(pose, 2.7, 1.0);
                let b = Footprint::at(&Pose::new(r.x, r.y, r.theta), 2.7, 1.0);
                assert!(
                    !footprints_overlap(&a, &b),
                    "agent {} passes parked agent {id}",
                    r.agent_id
                );
            }
        }
    }
}

fn brute_force_deviation(points: &[Point2], p: Point2) -> f64 {
    points
        .windows(2)
        .filter_map(|w| Segment::new(w[0], w[1]).ok())
        .map(|s| p.dist(project_point_to_segment(p, &s).1))
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn isolated_and_layout_scenarios_arrive_close_to_the_reference() {
    let names: Vec<_> = bundled::in_category(Category::Isolated)
        .chain(bundled::in_category(Category::Layout))
        .map(|s| s.name)
        .collect();
    for name in names {
        let (file, art) = run(name);
        let m = art.metrics.agent(0).unwrap();
        assert_eq!(m.status, AgentStatus::Arrived, "{name}");
        assert!(
            m.max_deviation <= 0.3,
            "{name}: deviation {}",
            m.max_deviation
        );
        assert!(m.travel_time.unwrap() <= 30.0, "{name}");
        audit_inputs(&file, &log_of(&art));
    }
}

#[test]
fn multi_agent_scenarios_stop_instead_of_colliding() {
    for s in bundled::in_category(Category::MultiAgent) {
        let (file, art) = run(s.name);
        for a in &art.metrics.agents {
            assert_eq!(a.status, AgentStatus::Arrived, "{}: agent {}", s.name, a.id);
            assert!(a.max_deviation <= 0.3, "{}: agent {}", s.name, a.id);
        }
        assert!(art.metrics.min_clearance.unwrap() > 0.0, "{}", s.name);
        let stops: usize = art.metrics.agents.iter().map(|a| a.stop_episodes).sum();
        assert!(stops >= 1, "{}: no stop episode", s.name);
        assert!(!art
            .events
            .iter()
            .any(|e| matches!(e.kind, EventKind::Collision { .. })));
        let log = log_of(&art);
        assert_no_ghosts(&log);
        audit_inputs(&file, &log);
    }
}

#[test]
fn late_detection_ends_in_a_collision() {
    let (_, art) = run("accident_a");
    assert_eq!(art.status(0), Some(AgentStatus::Collided));
    assert_eq!(art.status(1), Some(AgentStatus::Collided));
    let stop_t = art
        .events
        .iter()
        .find(|e| e.agent_id == 0 && matches!(e.kind, EventKind::Stop { .. }))
        .map(|e| e.t)
        .expect("ego reacts before the crash");
    let crash_t = art
        .events
        .iter()
        .find(|e| matches!(e.kind, EventKind::Collision { .. }))
        .unwrap()
        .t;
    assert!(stop_t < crash_t);
}

#[test]
fn timely_detection_avoids_the_same_crash() {
    let mut file = bundled::get("accident_a").unwrap().load().unwrap();
    for a in &mut file.agents {
        if a.id == 0 {
            a.avoidance.r_detect = 50.0;
            a.reaction_delay_steps = 0;
        }
    }
    let art = simulate(&file).unwrap();
    assert_eq!(art.status(0), Some(AgentStatus::Arrived));
    assert!(art.metrics.min_clearance.unwrap() > 0.0);
}

#[test]
fn excessive_speed_collision_is_flagged_unavoidable() {
    let (_, art) = run("accident_b");
    assert_eq!(art.status(0), Some(AgentStatus::Collided));
    assert!(art.unavoidable_raised());
}

#[test]
fn runs_are_deterministic() {
    for name in [
        "fourleg_left_turn_multi",
        "roundabout_uturn_multi",
        "accident_a",
    ] {
        let (_, a) = run(name);
        let (_, b) = run(name);
        assert_eq!(a.trajectory_csv, b.trajectory_csv, "{name}");
        assert_eq!(a.references_csv, b.references_csv, "{name}");
        assert_eq!(a.metrics, b.metrics, "{name}");
    }
}

#[test]
fn metrics_agree_with_an_independent_recount() {
    let (_, art) = run("fourleg_straight_multi");
    let log = log_of(&art);
    let refs = parse_references(&art.references_csv).unwrap();
    for m in &art.metrics.agents {
        let polyline: Vec<Point2> = refs
            .iter()
            .find(|r| r.agent_id == m.id)
            .unwrap()
            .points
            .iter()
            .map(|(_, p, _)| p.position())
            .collect();
        let devs: Vec<f64> = log
            .rows
            .iter()
            .filter(|r| r.agent_id == m.id)
            .map(|r| brute_force_deviation(&polyline, Point2::new(r.x, r.y)))
            .collect();
        let max = devs.iter().cloned().fold(0.0, f64::max);
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        assert!((m.max_deviation - max).abs() <= 1e-9, "agent {}", m.id);
        assert!((m.mean_deviation - mean).abs() <= 1e-9, "agent {}", m.id);
        let mut episodes = 0;
        let mut prev = false;
        for r in log.rows.iter().filter(|r| r.agent_id == m.id) {
            if r.conflict && !prev {
                episodes += 1;
            }
            prev = r.conflict;
        }
        assert_eq!(m.stop_episodes, episodes);
    }
}

#[test]
fn bundled_scenarios_round_trip_through_text() {
    for s in bundled::ALL {
        let file = s.load().unwrap();
        let again = load_scenario(&file.to_toml()).unwrap();
        assert_eq!(file, again, "{}", s.name);
    }
}

#[test]
fn steering_heuristic_weight_reduces_search_effort() {
    let file = bundled::get("fourleg_left_turn").unwrap().load().unwrap();
    let rows = sweep(&file, "w_hphi", &[0.0, 5.0, 15.0]).unwrap();
    assert!(
        rows.windows(2)
            .all(|w| w[1].nodes_expanded <= w[0].nodes_expanded),
        "{rows:?}"
    );
}

#[test]
fn lateral_weight_tightens_tracking() {
    let file = bundled::get("fourleg_left_turn").unwrap().load().unwrap();
    let rows = sweep(&file, "w_perp", &[1.0, 20.0]).unwrap();
    assert!(rows[1].max_deviation <= rows[0].max_deviation, "{rows:?}");
}
