//! Scenario library shipped with the crate.

use crate::scenario::{load_scenario, ScenarioError, ScenarioFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    /// One vehicle, no interaction.
    Isolated,
    /// Ego plus two interacting vehicles.
    MultiAgent,
    /// Additional single-vehicle layouts (T-junction, multi-lane).
    Layout,
    Accident,
}

#[derive(Debug, Clone, Copy)]
pub struct BundledScenario {
    pub name: &'static str,
    pub category: Category,
    pub text: &'static str,
}

impl BundledScenario {
    pub fn load(&self) -> Result<ScenarioFile, ScenarioError> {
        load_scenario(self.text)
    }
}

macro_rules! bundle {
    ($($name:literal => $cat:ident),* $(,)?) => {
        &[$(BundledScenario {
            name: $name,
            category: Category::$cat,
            text: include_str!(concat!("../scenarios/", $name, ".toml")),
        }),*]
    };
}

pub const ALL: &[BundledScenario] = bundle! {
    "fourleg_left_turn" => Isolated,
    "fourleg_straight" => Isolated,
    "fourleg_right_turn" => Isolated,
    "roundabout_left_turn" => Isolated,
    "roundabout_straight" => Isolated,
    "roundabout_uturn" => Isolated,
    "fourleg_left_turn_multi" => MultiAgent,
    "fourleg_straight_multi" => MultiAgent,
    "fourleg_right_turn_multi" => MultiAgent,
    "roundabout_left_turn_multi" => MultiAgent,
    "roundabout_straight_multi" => MultiAgent,
    "roundabout_uturn_multi" => MultiAgent,
    "t_intersection_left_turn" => Layout,
    "t_intersection_right_turn" => Layout,
    "t_intersection_straight" => Layout,
    "multilane_left_turn" => Layout,
    "multilane_lane_change" => Layout,
    "accident_a" => Accident,
    "accident_b" => Accident,
};

pub fn get(name: &str) -> Option<&'static BundledScenario> {
    ALL.iter().find(|s| s.name == name)
}

pub fn in_category(category: Category) -> impl Iterator<Item = &'static BundledScenario> {
    ALL.iter().filter(move |s| s.category == category)
}

/// `n` vehicles driving east on parallel lanes 4 m apart, all within
/// detection range of each other. Used to measure how step cost grows with
/// the number of agents.
pub fn scaling(n: usize, duration: f64) -> ScenarioFile {
    let mut text = format!(
        "[metadata]\nname = \"scaling_{n}\"\n\n\
         [sim]\nmax_duration = {duration:?}\n\n\
         [environment]\nbounds = {{ min = [-5.0, -5.0], max = [80.0, {:?}] }}\n",
        4.0 * n as f64 + 5.0
    );
    for i in 0..n {
        let y = 4.0 * i as f64;
        text.push_str(&format!(
            "\n[[agents]]\nid = {i}\nstart = {{ x = 0.0, y = {y:?}, theta = 0.0 }}\n\
             goal = {{ x = 70.0, y = {y:?}, theta = 0.0 }}\n"
        ));
    }
    load_scenario(&text).expect("generated scaling scenario is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_scenario_loads_and_builds() {
        for s in ALL {
            let file = s.load().unwrap_or_else(|e| panic!("{}: {e}", s.name));
            assert_eq!(file.metadata.name, s.name);
            file.build().unwrap();
        }
    }

    #[test]
    fn library_composition() {
        assert_eq!(in_category(Category::Isolated).count(), 6);
        assert_eq!(in_category(Category::MultiAgent).count(), 6);
        for s in in_category(Category::MultiAgent) {
            assert_eq!(s.load().unwrap().agents.len(), 3, "{}", s.name);
        }
        assert!(get("accident_a").is_some());
        assert!(get("missing").is_none());
    }

    #[test]
    fn scaling_scenario_sizes() {
        for n in [1, 2, 4, 8] {
            let s = scaling(n, 2.0);
            assert_eq!(s.agents.len(), n);
            s.build().unwrap();
        }
    }
}
