//! Team decomposition of a robot fleet and the induced team graph.
//!
//! The fleet is split into teams such that every robot belongs to exactly two
//! distinct teams. Teams that share a robot are adjacent; the resulting graph
//! must be connected so that information can percolate across the whole fleet
//! through successive rendezvous events.
//!
//! The key quantity derived here is the information delay bound: with a
//! conflict-free periodic schedule of period `T`, a measurement taken by any
//! robot reaches every other robot within `(T - 1) * L` epochs, where `L` is
//! the longest shortest path in the team graph counted in nodes. A variant
//! counting edges is also provided for diagnostic output.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque robot identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RobotId(pub u32);

impl std::fmt::Display for RobotId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TeamGraphError {
    /// A robot must appear in exactly two distinct teams.
    #[error("robot {0} does not belong to exactly two distinct teams")]
    RobotNotInTwoTeams(RobotId),
    /// The team graph must be connected; carries the team indices of each
    /// connected component for diagnostics.
    #[error("team graph is disconnected; components: {components:?}")]
    Disconnected { components: Vec<Vec<usize>> },
}

/// Validated team decomposition with its adjacency structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeamGraph {
    teams: Vec<BTreeSet<RobotId>>,
    adjacency: BTreeSet<(usize, usize)>,
    robot_teams: BTreeMap<RobotId, (usize, usize)>,
}

impl TeamGraph {
    /// Builds and validates a team graph from a team membership listing.
    ///
    /// Every robot must appear in exactly two distinct teams (two identical
    /// member sets at different indices are allowed), and the induced graph
    /// must be connected.
    pub fn build(team_lists: &[Vec<RobotId>]) -> Result<Self, TeamGraphError> {
        let mut occurrences: BTreeMap<RobotId, Vec<usize>> = BTreeMap::new();
        for (idx, list) in team_lists.iter().enumerate() {
            for &robot in list {
                occurrences.entry(robot).or_default().push(idx);
            }
        }

        let mut robot_teams = BTreeMap::new();
        for (&robot, teams) in &occurrences {
            if teams.len() != 2 || teams[0] == teams[1] {
                return Err(TeamGraphError::RobotNotInTwoTeams(robot));
            }
            robot_teams.insert(robot, (teams[0], teams[1]));
        }

        let teams: Vec<BTreeSet<RobotId>> = team_lists
            .iter()
            .map(|l| l.iter().copied().collect())
            .collect();

        let mut adjacency = BTreeSet::new();
        for &(i, j) in robot_teams.values() {
            adjacency.insert((i.min(j), i.max(j)));
        }

        let graph = TeamGraph {
            teams,
            adjacency,
            robot_teams,
        };

        let components = graph.components();
        if components.len() > 1 {
            return Err(TeamGraphError::Disconnected { components });
        }
        Ok(graph)
    }

    pub fn num_teams(&self) -> usize {
        self.teams.len()
    }

    pub fn team(&self, idx: usize) -> &BTreeSet<RobotId> {
        &self.teams[idx]
    }

    pub fn teams(&self) -> &[BTreeSet<RobotId>] {
        &self.teams
    }

    /// All robots, in id order.
    pub fn robots(&self) -> impl Iterator<Item = RobotId> + '_ {
        self.robot_teams.keys().copied()
    }

    pub fn num_robots(&self) -> usize {
        self.robot_teams.len()
    }

    /// The two teams a robot belongs to, in index order.
    pub fn teams_of(&self, robot: RobotId) -> Option<(usize, usize)> {
        self.robot_teams.get(&robot).copied()
    }

    /// Unordered adjacent team pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency.iter().copied()
    }

    pub fn neighbors(&self, team: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .adjacency
            .iter()
            .filter_map(|&(a, b)| {
                if a == team {
                    Some(b)
                } else if b == team {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn degree(&self, team: usize) -> usize {
        self.neighbors(team).len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_teams())
            .map(|i| self.degree(i))
            .max()
            .unwrap_or(0)
    }

    /// Connected components as sorted team index lists.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.num_teams();
        let mut seen = vec![false; n];
        let mut components = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(u) = queue.pop_front() {
                comp.push(u);
                for v in self.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }

    /// Longest shortest path between any two teams, counted in nodes (a path
    /// visiting k teams has length k). Computed by BFS from every team.
    pub fn longest_shortest_path(&self) -> usize {
        let n = self.num_teams();
        let mut longest = 0usize;
        for start in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[start] = 0;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for v in self.neighbors(u) {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            let ecc = dist.iter().copied().max().unwrap_or(0);
            longest = longest.max(ecc);
        }
        longest + 1
    }

    /// Longest shortest path counted in edges (one less than the node count).
    pub fn longest_shortest_path_edges(&self) -> usize {
        self.longest_shortest_path() - 1
    }

    /// Worst-case number of epochs for information to propagate from any
    /// robot to any other under a conflict-free schedule of the given period:
    /// `(period - 1) * L` with `L` the longest shortest path in nodes.
    pub fn delay_bound(&self, period: usize) -> usize {
        (period.saturating_sub(1)) * self.longest_shortest_path()
    }

    /// Variant of [`delay_bound`](Self::delay_bound) with path length counted
    /// in edges; reported alongside the node-count bound by the schedule
    /// analyzer.
    pub fn delay_bound_edges(&self, period: usize) -> usize {
        (period.saturating_sub(1)) * self.longest_shortest_path_edges()
    }

    /// Generates a random connected team graph with `num_teams` teams by
    /// drawing a random spanning tree and `extra_edges` additional edges;
    /// every edge becomes one robot shared by its two endpoint teams.
    pub fn random_connected<R: Rng>(num_teams: usize, extra_edges: usize, rng: &mut R) -> Self {
        assert!(num_teams >= 2, "need at least two teams");
        let mut team_lists: Vec<Vec<RobotId>> = vec![Vec::new(); num_teams];
        let mut next_robot = 1u32;
        let add_edge = |lists: &mut Vec<Vec<RobotId>>, i: usize, j: usize, id: &mut u32| {
            let robot = RobotId(*id);
            *id += 1;
            lists[i].push(robot);
            lists[j].push(robot);
        };
        // Random spanning tree: attach each new team to a uniformly chosen
        // earlier team.
        for j in 1..num_teams {
            let i = rng.random_range(0..j);
            add_edge(&mut team_lists, i, j, &mut next_robot);
        }
        for _ in 0..extra_edges {
            let i = rng.random_range(0..num_teams);
            let mut j = rng.random_range(0..num_teams);
            if i == j {
                j = (j + 1) % num_teams;
            }
            add_edge(&mut team_lists, i, j, &mut next_robot);
        }
        TeamGraph::build(&team_lists).expect("construction yields a valid team graph")
    }
}

/// The eight-team cycle used by the bundled eight-robot scenario: team `i`
/// shares one robot with team `i+1` around a ring.
pub fn cycle_team_lists(num_teams: usize) -> Vec<Vec<RobotId>> {
    assert!(num_teams >= 3);
    let mut lists = vec![Vec::new(); num_teams];
    for i in 0..num_teams {
        let j = (i + 1) % num_teams;
        // Robot shared by teams i and j, named by its team pair (1-based).
        let id = RobotId(((i + 1) * 10 + (j + 1)) as u32);
        lists[i].push(id);
        lists[j].push(id);
    }
    lists
}
