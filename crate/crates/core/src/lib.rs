//! Distributed target tracking with intermittently connected robot teams.
//!
//! A fleet of mobile robots is partitioned into small overlapping teams; each
//! robot belongs to exactly two teams, and the overlaps induce a team graph.
//! Teams meet at scheduled rendezvous events, exchange measurement logs, fuse
//! them into a common belief over the target states, and plan the next joint
//! path segment that ends in a new connected rendezvous. Between meetings the
//! network is deliberately disconnected so robots can spread out and cover
//! more targets.
//!
//! The crate provides the building blocks and a deterministic simulator:
//!
//! - [`team_graph`]: team decomposition, connectivity, information-delay bound
//! - [`schedule`]: conflict-free periodic communication schedules
//! - [`estimator`]: range-only EKF over stacked target states, path costs
//! - [`world`]: workspace geometry, target dynamics, sensing, geodesics
//! - [`planner`]: sampling-based joint path planning toward rendezvous goals
//! - [`runtime`]: event-driven simulation loop, exchange/refilter, metrics
//! - [`baselines`]: all-time-connected and random-meeting reference strategies
//! - [`scenario`]: TOML scenario configuration and validation
//!
//! All randomness is derived from a single master seed; repeated runs with the
//! same configuration produce byte-identical outputs.

pub mod baselines;
pub mod estimator;
pub mod geometry;
pub mod planner;
pub mod rng;
pub mod runtime;
pub mod scenario;
pub mod schedule;
pub mod team_graph;
pub mod world;

pub use team_graph::{RobotId, TeamGraph};
