//! TOML scenario files: a complete, reproducible run description.
//!
//! A scenario names the workspace, the team structure, robot starts, target
//! models with both true initial states and prior estimates, sensor and
//! planner settings, the coordination strategy, the seed, and the horizon.
//! Parsing is strict: unknown keys are rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Point2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{InputProfile, SensorModel, TargetModel};
use crate::geometry::{Rect, Segment};
use crate::planner::PlannerParams;
use crate::runtime::{SimConfig, Strategy};
use crate::team_graph::{RobotId, TeamGraph};
use crate::world::Workspace;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("scenario invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub comm_range: f64,
    pub sense_range: f64,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamSpec {
    pub robots: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: u32,
    pub start: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// True initial state.
    pub start: [f64; 3],
    /// Initial estimate held by every filter.
    pub xhat0: [f64; 3],
    /// Process noise intensity per axis.
    pub q: f64,
    pub profile: InputProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSpec {
    /// Initial variance per state component.
    pub initial_variance: f64,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec {
            initial_variance: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeSpec {
    pub prune_horizon: Option<i64>,
    pub audit_propagation: bool,
}

/// A full scenario as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    pub t_end: i64,
    pub strategy: Strategy,
    pub workspace: WorkspaceSpec,
    #[serde(default)]
    pub planner: PlannerParams,
    #[serde(default)]
    pub sensor: SensorModel,
    pub teams: Vec<TeamSpec>,
    pub robots: Vec<RobotSpec>,
    pub targets: Vec<TargetSpec>,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub runtime: RuntimeSpec,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Builds the runnable configuration, validating cross references.
    pub fn to_sim_config(&self) -> Result<SimConfig, ScenarioError> {
        let team_lists: Vec<Vec<RobotId>> = self
            .teams
            .iter()
            .map(|t| t.robots.iter().map(|&id| RobotId(id)).collect())
            .collect();
        let graph =
            TeamGraph::build(&team_lists).map_err(|e| ScenarioError::Invalid(e.to_string()))?;

        let mut starts: BTreeMap<RobotId, Point2<f64>> = BTreeMap::new();
        for r in &self.robots {
            let prev = starts.insert(RobotId(r.id), Point2::new(r.start[0], r.start[1]));
            if prev.is_some() {
                return Err(ScenarioError::Invalid(format!(
                    "robot {} listed twice",
                    r.id
                )));
            }
        }
        for id in graph.robots() {
            if !starts.contains_key(&id) {
                return Err(ScenarioError::Invalid(format!(
                    "robot {id} appears in a team but has no start"
                )));
            }
        }
        if starts.len() != graph.num_robots() {
            return Err(ScenarioError::Invalid(
                "every listed robot must appear in exactly two teams".into(),
            ));
        }

        if self.targets.is_empty() {
            return Err(ScenarioError::Invalid("at least one target".into()));
        }
        let models: Vec<TargetModel> = self
            .targets
            .iter()
            .map(|t| TargetModel::driven(t.profile.clone(), t.q))
            .collect();
        let targets0: Vec<Vector3<f64>> = self
            .targets
            .iter()
            .map(|t| Vector3::new(t.start[0], t.start[1], t.start[2]))
            .collect();
        let dim = 3 * self.targets.len();
        let mut xhat0 = DVector::zeros(dim);
        for (k, t) in self.targets.iter().enumerate() {
            for i in 0..3 {
                xhat0[3 * k + i] = t.xhat0[i];
            }
        }
        let variance = self.estimator.initial_variance;
        if variance.is_nan() || variance <= 0.0 {
            return Err(ScenarioError::Invalid(
                "initial variance must be positive".into(),
            ));
        }
        let cov0 = DMatrix::identity(dim, dim) * variance;

        let ws = Workspace {
            bounds: Rect::new(self.workspace.min, self.workspace.max),
            obstacles: self
                .workspace
                .obstacles
                .iter()
                .map(|o| Segment::new(o.a, o.b))
                .collect(),
            comm_range: self.workspace.comm_range,
            sense_range: self.workspace.sense_range,
        };

        let config = SimConfig {
            ws,
            graph,
            starts,
            models,
            targets0,
            xhat0,
            cov0,
            sensor: self.sensor.clone(),
            params: self.planner.clone(),
            strategy: self.strategy,
            seed: self.seed,
            t_end: self.t_end,
            prune_horizon: self.runtime.prune_horizon,
            audit_propagation: self.runtime.audit_propagation,
        };
        config
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(config)
    }
}

/// Directory holding the scenarios shipped with the repository.
pub fn bundled_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join("..")
        .join("scenarios")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        r#"
seed = 7
t_end = 50
strategy = "intermittent"

[workspace]
min = [0.0, 0.0]
max = [10.0, 10.0]
comm_range = 0.4
sense_range = 5.0

[planner]
n_sample = 60
epsilon = 1.0
u_max = 0.25
delta = 0.0144
dt = 1

[[teams]]
robots = [1, 2]

[[teams]]
robots = [2, 3]

[[teams]]
robots = [1, 3]

[[robots]]
id = 1
start = [2.0, 2.0]

[[robots]]
id = 2
start = [3.0, 2.0]

[[robots]]
id = 3
start = [2.5, 3.0]

[[targets]]
start = [5.0, 5.0, 0.3]
xhat0 = [5.1, 4.9, 0.25]
q = 2e-3
profile = { kind = "stationary" }
"#
        .to_string()
    }

    #[test]
    fn minimal_scenario_parses_and_builds() {
        let sc = Scenario::from_toml_str(&minimal_toml()).unwrap();
        let config = sc.to_sim_config().unwrap();
        assert_eq!(config.graph.num_teams(), 3);
        assert_eq!(config.models.len(), 1);
        assert_eq!(config.xhat0.len(), 3);
        assert_eq!(config.cov0[(0, 0)], 0.25);
        assert_eq!(config.seed, 7);
    }

    #[test]
    fn scenario_round_trips_through_toml() {
        let sc = Scenario::from_toml_str(&minimal_toml()).unwrap();
        let text = sc.to_toml();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(sc, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = minimal_toml().replace("seed = 7", "seed = 7\nbogus_key = 1");
        assert!(Scenario::from_toml_str(&text).is_err());
    }

    #[test]
    fn missing_start_is_rejected() {
        let text = minimal_toml().replace("[[robots]]\nid = 3\nstart = [2.5, 3.0]\n", "");
        let sc = Scenario::from_toml_str(&text).unwrap();
        let err = sc.to_sim_config().unwrap_err();
        assert!(err.to_string().contains("no start"), "{err}");
    }

    #[test]
    fn robot_in_one_team_is_rejected() {
        let text = minimal_toml().replace("robots = [1, 3]", "robots = [2, 1]");
        let sc = Scenario::from_toml_str(&text).unwrap();
        // Robot 3 now appears once, robots 1 and 2 three times.
        assert!(sc.to_sim_config().is_err());
    }

    #[test]
    fn unknown_strategy_is_rejected() {
        let text = minimal_toml().replace("\"intermittent\"", "\"telepathy\"");
        assert!(Scenario::from_toml_str(&text).is_err());
    }

    #[test]
    fn profile_variants_parse() {
        let text = minimal_toml().replace(
            r#"profile = { kind = "stationary" }"#,
            r#"profile = { kind = "circle", center = [5.0, 5.0, 0.3], radius = 2.0, omega = 0.05 }"#,
        );
        let sc = Scenario::from_toml_str(&text).unwrap();
        assert!(matches!(
            sc.targets[0].profile,
            InputProfile::Circle { radius, .. } if radius == 2.0
        ));
        let text2 = minimal_toml().replace(
            r#"profile = { kind = "stationary" }"#,
            r#"profile = { kind = "waypoints", points = [[1.0, 1.0, 0.2], [2.0, 1.0, 0.2]], speed = 0.1 }"#,
        );
        Scenario::from_toml_str(&text2).unwrap();
    }

    #[test]
    fn parsed_scenario_runs_deterministically() {
        let sc = Scenario::from_toml_str(&minimal_toml()).unwrap();
        let config = sc.to_sim_config().unwrap();
        let a = crate::runtime::run(&config).unwrap();
        let b = crate::runtime::run(&config).unwrap();
        assert_eq!(a.timeseries_csv(), b.timeseries_csv());
    }
}
