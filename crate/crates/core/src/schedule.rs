//! Periodic communication schedules over a team graph.
//!
//! Each team is assigned one slot in a repeating period of `T` slots; a team
//! meets at every epoch congruent to its slot. A schedule is conflict-free
//! when adjacent teams (teams sharing a robot) occupy distinct slots, which is
//! exactly a proper vertex coloring of the team graph. Slots are synthesized
//! greedily in descending-degree order, so the period never exceeds the
//! maximum team degree plus one.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::team_graph::{RobotId, TeamGraph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("robot {0} is not part of the schedule")]
    UnknownRobot(RobotId),
    #[error("team index {0} is out of range")]
    UnknownTeam(usize),
}

/// One entry of a robot's periodic slot sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotEvent {
    /// The robot meets the given team at this slot.
    Team(usize),
    /// The robot travels without a communication event at this slot.
    Idle,
}

/// Conflict-free periodic schedule: one slot per team, period `T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    period: usize,
    /// 1-based slot per team index.
    slots: Vec<usize>,
    robot_teams: BTreeMap<RobotId, (usize, usize)>,
}

impl Schedule {
    /// Synthesizes a schedule by greedy coloring in descending-degree order
    /// (ties broken by team index). The period is the number of distinct
    /// slots actually used.
    pub fn synthesize(graph: &TeamGraph) -> Schedule {
        let n = graph.num_teams();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(graph.degree(i)), i));

        let mut slots = vec![0usize; n];
        for &team in &order {
            let taken: Vec<usize> = graph
                .neighbors(team)
                .into_iter()
                .map(|nb| slots[nb])
                .filter(|&s| s != 0)
                .collect();
            let mut slot = 1;
            while taken.contains(&slot) {
                slot += 1;
            }
            slots[team] = slot;
        }
        let period = slots.iter().copied().max().unwrap_or(1);

        Schedule {
            period,
            slots,
            robot_teams: graph
                .robots()
                .map(|r| (r, graph.teams_of(r).unwrap()))
                .collect(),
        }
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// 1-based slot of a team.
    pub fn slot(&self, team: usize) -> Result<usize, ScheduleError> {
        self.slots
            .get(team)
            .copied()
            .ok_or(ScheduleError::UnknownTeam(team))
    }

    /// The robot's periodic slot sequence of length `period`.
    pub fn robot_sequence(&self, robot: RobotId) -> Result<Vec<SlotEvent>, ScheduleError> {
        let &(i, j) = self
            .robot_teams
            .get(&robot)
            .ok_or(ScheduleError::UnknownRobot(robot))?;
        Ok((1..=self.period)
            .map(|slot| {
                if self.slots[i] == slot {
                    SlotEvent::Team(i)
                } else if self.slots[j] == slot {
                    SlotEvent::Team(j)
                } else {
                    SlotEvent::Idle
                }
            })
            .collect())
    }

    /// What the robot does at epoch `k >= 1`.
    pub fn event_at(&self, robot: RobotId, epoch: usize) -> Result<SlotEvent, ScheduleError> {
        assert!(epoch >= 1, "epochs are 1-based");
        let seq = self.robot_sequence(robot)?;
        Ok(seq[(epoch - 1) % self.period])
    }

    /// Epochs at which the team meets, up to and including `up_to`.
    pub fn team_epochs(&self, team: usize, up_to: usize) -> Result<Vec<usize>, ScheduleError> {
        let slot = self.slot(team)?;
        Ok((slot..=up_to).step_by(self.period).collect())
    }

    /// The epoch of the team's next meeting strictly after `after`.
    pub fn next_team_epoch(&self, team: usize, after: usize) -> Result<usize, ScheduleError> {
        let slot = self.slot(team)?;
        let mut k = slot;
        while k <= after {
            k += self.period;
        }
        Ok(k)
    }

    /// Checks conflict-freeness against a team graph: slots in range,
    /// adjacent teams on distinct slots, and every robot's derived sequence
    /// containing each of its two teams exactly once per period.
    pub fn validate(&self, graph: &TeamGraph) -> bool {
        if self.slots.len() != graph.num_teams() {
            return false;
        }
        if self.slots.iter().any(|&s| s < 1 || s > self.period) {
            return false;
        }
        for (i, j) in graph.edges() {
            if self.slots[i] == self.slots[j] {
                return false;
            }
        }
        for robot in graph.robots() {
            let Some((i, j)) = graph.teams_of(robot) else {
                return false;
            };
            let Ok(seq) = self.robot_sequence(robot) else {
                return false;
            };
            let count_i = seq.iter().filter(|e| **e == SlotEvent::Team(i)).count();
            let count_j = seq.iter().filter(|e| **e == SlotEvent::Team(j)).count();
            if count_i != 1 || count_j != 1 {
                return false;
            }
        }
        true
    }

    /// Builds a schedule from explicit team slots; used for round-tripping
    /// configured schedules and for validation tests.
    pub fn from_slots(graph: &TeamGraph, slots: Vec<usize>) -> Schedule {
        let period = slots.iter().copied().max().unwrap_or(1);
        Schedule {
            period,
            slots,
            robot_teams: graph
                .robots()
                .map(|r| (r, graph.teams_of(r).unwrap()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::team_graph::cycle_team_lists;
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eight_cycle_alternates_two_slots() {
        let g = TeamGraph::build(&cycle_team_lists(8)).unwrap();
        let s = Schedule::synthesize(&g);
        assert_eq!(s.period(), 2);
        for i in 0..8 {
            assert_eq!(s.slot(i).unwrap(), 1 + i % 2);
        }
        assert!(s.validate(&g));
    }

    #[test]
    fn robot_sequence_covers_both_teams_once() {
        let g = TeamGraph::build(&cycle_team_lists(8)).unwrap();
        let s = Schedule::synthesize(&g);
        for robot in g.robots() {
            let (i, j) = g.teams_of(robot).unwrap();
            let seq = s.robot_sequence(robot).unwrap();
            let mut teams: Vec<usize> = seq
                .iter()
                .filter_map(|e| match e {
                    SlotEvent::Team(t) => Some(*t),
                    SlotEvent::Idle => None,
                })
                .collect();
            teams.sort_unstable();
            assert_eq!(teams, vec![i.min(j), i.max(j)]);
        }
    }

    #[test]
    fn mirror_pair_gets_slots_one_and_two() {
        let g = TeamGraph::build(&[vec![RobotId(1), RobotId(2)], vec![RobotId(1), RobotId(2)]])
            .unwrap();
        let s = Schedule::synthesize(&g);
        assert_eq!(s.period(), 2);
        assert_eq!(s.slot(0).unwrap(), 1);
        assert_eq!(s.slot(1).unwrap(), 2);
    }

    #[test]
    fn wheel_graph_needs_three_slots() {
        // Hub team adjacent to four rim teams arranged in a cycle: the greedy
        // coloring uses three slots even though the maximum degree is four.
        let r = RobotId;
        let g = TeamGraph::build(&[
            vec![r(12), r(14), r(15)],
            vec![r(12), r(23), r(25)],
            vec![r(23), r(34), r(35)],
            vec![r(14), r(34), r(45)],
            vec![r(15), r(25), r(35), r(45)],
        ])
        .unwrap();
        let s = Schedule::synthesize(&g);
        assert_eq!(s.period(), 3);
        assert!(s.validate(&g));
        assert!(s.period() <= g.max_degree() + 1);
    }

    #[test]
    fn adjacent_teams_on_same_slot_fail_validation() {
        let g = TeamGraph::build(&cycle_team_lists(8)).unwrap();
        let bad = Schedule::from_slots(&g, vec![1, 1, 2, 1, 2, 1, 2, 1]);
        assert!(!bad.validate(&g));
    }

    #[test]
    fn event_at_is_periodic() {
        let g = TeamGraph::build(&cycle_team_lists(5)).unwrap();
        let s = Schedule::synthesize(&g);
        for robot in g.robots() {
            for k in 1..=6 {
                assert_eq!(
                    s.event_at(robot, k).unwrap(),
                    s.event_at(robot, k + s.period()).unwrap()
                );
            }
        }
    }

    #[test]
    fn team_epochs_are_slot_plus_period_steps() {
        let g = TeamGraph::build(&cycle_team_lists(8)).unwrap();
        let s = Schedule::synthesize(&g);
        let epochs = s.team_epochs(2, 9).unwrap();
        assert_eq!(epochs, vec![1, 3, 5, 7, 9]);
        assert_eq!(s.next_team_epoch(2, 9).unwrap(), 11);
    }

    #[test]
    fn unknown_ids_error() {
        let g = TeamGraph::build(&cycle_team_lists(3)).unwrap();
        let s = Schedule::synthesize(&g);
        assert_eq!(
            s.event_at(RobotId(999), 1),
            Err(ScheduleError::UnknownRobot(RobotId(999)))
        );
        assert_eq!(s.team_epochs(7, 5), Err(ScheduleError::UnknownTeam(7)));
    }

    #[test]
    fn random_graphs_synthesize_conflict_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m = rng.random_range(2..=20usize);
            let extra = rng.random_range(0..=4usize);
            let g = TeamGraph::random_connected(m, extra, &mut rng);
            let s = Schedule::synthesize(&g);
            assert!(s.validate(&g));
            assert!(s.period() <= g.max_degree() + 1);
        }
    }

    proptest! {
        #[test]
        fn synthesized_schedules_are_always_valid(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.random_range(2..=12usize);
            let extra = rng.random_range(0..=3usize);
            let g = TeamGraph::random_connected(m, extra, &mut rng);
            let s = Schedule::synthesize(&g);
            prop_assert!(s.validate(&g));
            prop_assert!(s.period() <= g.max_degree() + 1);
        }
    }
}
