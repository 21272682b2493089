//! Closed-loop simulation of intermittently connected tracking teams.
//!
//! Robots execute timed waypoint segments. Every segment ends at a meeting
//! of one of the robot's two teams; at that moment the members pool their
//! measurement records, rebuild their filters so that everyone holds the
//! exact filter of the pooled record set, and plan the team's next segment.
//! Between meetings robots sense on their own and update only their local
//! filter. A global oracle that fuses every measurement the instant it is
//! taken runs alongside as the comparison baseline.
//!
//! Record exchange is eventually consistent: a record tagged with meeting
//! epoch `e` provably reaches every robot within `(period - 1) * L` epochs,
//! where `L` is the longest shortest path in the team adjacency graph. The
//! runtime can audit that bound online.
//!
//! Filter rebuilds use per-robot belief checkpoints. Every checkpoint
//! incorporates exactly the records at or before its time that the robot
//! currently holds; when late records arrive, checkpoints newer than the
//! oldest late record are discarded and the filter replays forward from the
//! newest surviving one. Replayed filters are therefore bit-identical to a
//! from-scratch chronological filter of the full record set, which makes the
//! post-meeting beliefs of all team members bit-identical as well.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, Point2, Vector2, Vector3};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::estimator::{
    predict, predict_step, uncertainty, update, Belief, EstimatorError, MeasurementRecord,
    RecordKey, SensorModel, TargetModel,
};
use crate::geometry::point_segment_dist2;
use crate::planner::{
    algebraic_connectivity, plan, PlanInput, PlannerError, PlannerParams, RelaxLevel, TimedPath,
};
use crate::rng::stream;
use crate::schedule::{Schedule, ScheduleError};
use crate::team_graph::{RobotId, TeamGraph, TeamGraphError};
use crate::world::{
    geodesic, polyline_length, sense, step_targets, Workspace, WorldError, WorldState,
    GEODESIC_CLEARANCE,
};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Graph(#[from] TeamGraphError),
    #[error("configuration invalid: {0}")]
    BadConfig(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// How robots coordinate sensing and fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Teams plan jointly informative paths between scheduled meetings.
    Intermittent,
    /// Teams keep the same meeting schedule but rendezvous at uniformly
    /// drawn points instead of informative ones.
    Heuristic,
    /// All robots move as one rigid formation and fuse instantly.
    AllTime,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Intermittent => "intermittent",
            Strategy::Heuristic => "heuristic",
            Strategy::AllTime => "all_time",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intermittent" => Ok(Strategy::Intermittent),
            "heuristic" => Ok(Strategy::Heuristic),
            "all_time" => Ok(Strategy::AllTime),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

/// Complete description of one simulation run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub ws: Workspace,
    pub graph: TeamGraph,
    pub starts: BTreeMap<RobotId, Point2<f64>>,
    pub models: Vec<TargetModel>,
    pub targets0: Vec<Vector3<f64>>,
    pub xhat0: DVector<f64>,
    pub cov0: DMatrix<f64>,
    pub sensor: SensorModel,
    pub params: PlannerParams,
    pub strategy: Strategy,
    pub seed: u64,
    pub t_end: i64,
    /// When set, records and checkpoints older than this many steps behind
    /// the current meeting are discarded at meetings. Filters may then
    /// replay from an approximate base if extremely late records arrive.
    pub prune_horizon: Option<i64>,
    /// Audit at every meeting that all records old enough to be covered by
    /// the propagation bound have actually arrived.
    pub audit_propagation: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        self.ws.validate()?;
        self.sensor
            .validate()
            .map_err(|e| RuntimeError::BadConfig(e.to_string()))?;
        self.params.validate()?;
        if self.t_end < 1 {
            return Err(RuntimeError::BadConfig("t_end must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(RuntimeError::BadConfig("at least one target".into()));
        }
        if self.targets0.len() != self.models.len() {
            return Err(RuntimeError::BadConfig(
                "one initial state per target".into(),
            ));
        }
        let dim = 3 * self.models.len();
        if self.xhat0.len() != dim || self.cov0.nrows() != dim || self.cov0.ncols() != dim {
            return Err(RuntimeError::BadConfig(
                "prior dimensions must be three per target".into(),
            ));
        }
        for id in self.graph.robots() {
            if !self.starts.contains_key(&id) {
                return Err(RuntimeError::BadConfig(format!(
                    "robot {id} has no start position"
                )));
            }
        }
        for (id, p) in &self.starts {
            if !self.ws.bounds.contains(p) {
                return Err(RuntimeError::BadConfig(format!(
                    "robot {id} starts outside the workspace"
                )));
            }
        }
        Ok(())
    }
}

/// One committed motion segment of a single robot, ending at a team meeting.
#[derive(Debug, Clone)]
pub struct Segment {
    pub team: usize,
    pub epoch: usize,
    /// One waypoint per step, from the robot's segment start time to the
    /// meeting time.
    pub waypoints: Vec<(i64, Point2<f64>)>,
}

impl Segment {
    pub fn start_t(&self) -> i64 {
        self.waypoints.first().unwrap().0
    }

    pub fn end_t(&self) -> i64 {
        self.waypoints.last().unwrap().0
    }

    pub fn end_pos(&self) -> Point2<f64> {
        self.waypoints.last().unwrap().1
    }

    pub fn position_at(&self, t: i64) -> Option<Point2<f64>> {
        if t < self.start_t() || t > self.end_t() {
            return None;
        }
        Some(self.waypoints[(t - self.start_t()) as usize].1)
    }
}

struct RobotState {
    queue: VecDeque<Segment>,
    store: BTreeMap<RecordKey, MeasurementRecord>,
    /// Belief checkpoints, time-ascending; index 0 is the prior.
    checkpoints: Vec<Belief>,
    belief: Belief,
    sense_rng: ChaCha8Rng,
}

impl RobotState {
    fn executing(&self, t: i64) -> &Segment {
        let seg = self.queue.front().expect("robot always has a segment");
        debug_assert!(seg.start_t() <= t && t <= seg.end_t());
        seg
    }

    fn position_at(&self, t: i64) -> Point2<f64> {
        for seg in &self.queue {
            if let Some(p) = seg.position_at(t) {
                return p;
            }
        }
        panic!("no segment covers time {t}");
    }

    /// End state of the last committed segment: where the next plan roots.
    fn root(&self) -> (Point2<f64>, i64) {
        let seg = self.queue.back().expect("robot always has a segment");
        (seg.end_pos(), seg.end_t())
    }
}

/// Why a meeting produced the segment it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanOutcome {
    /// Informative joint plan; carries which goal relaxation was used.
    Rendezvous(RelaxLevel),
    /// Uniformly drawn meeting point reached by shortest paths.
    Heuristic,
    /// Fallback regrouping on the spot after planning failed.
    Regroup,
    /// The run ended at this meeting; no further segment was planned.
    EndOfRun,
}

impl std::fmt::Display for PlanOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlanOutcome::Rendezvous(RelaxLevel::UncertaintyBound(k)) => {
                write!(f, "bound_{k}")
            }
            PlanOutcome::Rendezvous(RelaxLevel::ConnectivityOnly) => f.write_str("connectivity"),
            PlanOutcome::Heuristic => f.write_str("heuristic"),
            PlanOutcome::Regroup => f.write_str("regroup"),
            PlanOutcome::EndOfRun => f.write_str("end"),
        }
    }
}

/// One team meeting as it happened.
#[derive(Debug, Clone)]
pub struct EventLog {
    pub t: i64,
    pub team: usize,
    pub epoch: usize,
    pub members: Vec<RobotId>,
    pub positions: Vec<Point2<f64>>,
    /// Fused belief shared by all members after the exchange.
    pub belief: Belief,
    /// Records that at least one member was missing before the exchange.
    pub new_records: usize,
    /// Whether the meeting configuration was connected at communication
    /// range.
    pub connected: bool,
    pub outcome: PlanOutcome,
}

/// World and oracle state at one step.
#[derive(Debug, Clone)]
pub struct StepLog {
    pub t: i64,
    pub targets: Vec<Vector3<f64>>,
    pub robots: BTreeMap<RobotId, Point2<f64>>,
    /// Norm of the oracle's stacked estimation error.
    pub error: f64,
    /// Largest eigenvalue of the oracle covariance.
    pub lambda_max: f64,
}

/// Full record of one run.
#[derive(Debug, Clone)]
pub struct SimulationLog {
    pub steps: Vec<StepLog>,
    pub oracle_trace: Vec<Belief>,
    pub events: Vec<EventLog>,
    pub records: BTreeMap<RecordKey, MeasurementRecord>,
    pub propagation_violations: usize,
    pub t_end: i64,
    pub period: usize,
    pub delay_bound: usize,
}

/// Aggregate run metrics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Metrics {
    /// Time-averaged oracle error norm.
    pub mean_error: f64,
    /// Time-averaged largest oracle covariance eigenvalue.
    pub mean_uncertainty: f64,
    /// Per team: first meeting time at which the fused belief differed from
    /// the oracle by more than 1e-9 in any mean or covariance component
    /// (the final time when it never did).
    pub team_t_star: Vec<(usize, i64)>,
    /// Per team: mean distance between the oracle mean and the team's
    /// propagated fused mean over the steps after the divergence time.
    pub team_mean_divergence: Vec<(usize, f64)>,
    pub mean_t_star: f64,
    pub mean_divergence: f64,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

impl SimulationLog {
    /// Aggregate metrics; `models` drive the forward prediction of team
    /// beliefs between meetings.
    pub fn metrics(&self, models: &[TargetModel]) -> Metrics {
        let t_end = self.t_end;
        let sum_err: f64 = self.steps.iter().map(|s| s.error).sum();
        let sum_lam: f64 = self.steps.iter().map(|s| s.lambda_max).sum();
        let mean_error = sum_err / t_end as f64;
        let mean_uncertainty = sum_lam / t_end as f64;

        let mut teams: BTreeSet<usize> = self.events.iter().map(|e| e.team).collect();
        if teams.is_empty() {
            teams.insert(0);
        }
        let mut team_t_star = Vec::new();
        let mut team_mean_divergence = Vec::new();
        for &team in &teams {
            let events: Vec<&EventLog> = self.events.iter().filter(|e| e.team == team).collect();
            let mut t_star = t_end;
            for e in &events {
                if e.t > t_end {
                    break;
                }
                let oracle = &self.oracle_trace[e.t as usize];
                let mean_diff = (&e.belief.xhat - &oracle.xhat).amax();
                let cov_diff = (&e.belief.cov - &oracle.cov).amax();
                if mean_diff > 1e-9 || cov_diff > 1e-9 {
                    t_star = e.t;
                    break;
                }
            }
            let mean_div = if t_star >= t_end {
                0.0
            } else {
                // Walk the team's belief forward: replace at meetings,
                // predict in between, and accumulate the distance to the
                // oracle mean after the divergence time.
                let mut current: Option<Belief> = None;
                let mut next_event = 0usize;
                let mut sum = 0.0;
                for t in 0..=t_end {
                    while next_event < events.len() && events[next_event].t == t {
                        current = Some(events[next_event].belief.clone());
                        next_event += 1;
                    }
                    if let Some(b) = current.take() {
                        current = Some(predict(&b, models, t));
                    }
                    if t > t_star {
                        if let Some(b) = &current {
                            let oracle = &self.oracle_trace[t as usize];
                            sum += (&b.xhat - &oracle.xhat).norm();
                        }
                    }
                }
                sum / (t_end - t_star) as f64
            };
            team_t_star.push((team, t_star));
            team_mean_divergence.push((team, mean_div));
        }
        let n = team_t_star.len() as f64;
        let mean_t_star = team_t_star.iter().map(|&(_, t)| t as f64).sum::<f64>() / n;
        let mean_divergence = team_mean_divergence.iter().map(|&(_, d)| d).sum::<f64>() / n;
        Metrics {
            mean_error,
            mean_uncertainty,
            team_t_star,
            team_mean_divergence,
            mean_t_star,
            mean_divergence,
        }
    }

    /// Per-step CSV: time, stacked error norm, largest covariance
    /// eigenvalue, then one error column per target.
    pub fn timeseries_csv(&self) -> String {
        let n_targets = self.steps.first().map_or(0, |s| s.targets.len());
        let mut out = String::from("t,error,lambda_max");
        for k in 0..n_targets {
            out.push_str(&format!(",err_{k}"));
        }
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!("{},{},{}", s.t, s.error, s.lambda_max));
            let oracle = &self.oracle_trace[s.t as usize];
            for (k, x) in s.targets.iter().enumerate() {
                let err = (oracle.target_estimate(k) - x).norm();
                out.push_str(&format!(",{err}"));
            }
            out.push('\n');
        }
        out
    }

    /// Per-meeting CSV.
    pub fn events_csv(&self) -> String {
        let mut out = String::from("t,team,epoch,members,new_records,connected,outcome\n");
        for e in &self.events {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.t,
                e.team,
                e.epoch,
                e.members.len(),
                e.new_records,
                e.connected,
                e.outcome
            ));
        }
        out
    }
}

/// Evenly spaced points on an axis-aligned line through `center`, all inside
/// the workspace and clear of obstacles. Tries the x direction first, then
/// y.
pub fn line_formation(
    center: Point2<f64>,
    n: usize,
    spacing: f64,
    ws: &Workspace,
) -> Option<Vec<Point2<f64>>> {
    for dir in [Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0)] {
        let points: Vec<Point2<f64>> = (0..n)
            .map(|i| center + dir * ((i as f64 - (n as f64 - 1.0) / 2.0) * spacing))
            .collect();
        let ok = points.iter().all(|p| {
            ws.bounds.contains(p)
                && ws.obstacles.iter().all(|o| {
                    point_segment_dist2(p, &o.start(), &o.end())
                        > GEODESIC_CLEARANCE * GEODESIC_CLEARANCE
                })
        });
        if ok {
            return Some(points);
        }
    }
    None
}

/// Walks a polyline at full speed, one waypoint per step, then holds the end
/// point until `min_end`.
pub fn walk_polyline(
    path: &[Point2<f64>],
    u_max: f64,
    start_t: i64,
    min_end: i64,
) -> Vec<(i64, Point2<f64>)> {
    let total = polyline_length(path);
    let steps = if total <= 1e-12 {
        0
    } else {
        (total / u_max - 1e-9).ceil() as i64
    };
    let mut wp = vec![(start_t, path[0])];
    for k in 1..=steps {
        let s = (k as f64 * u_max).min(total);
        let p = if k == steps {
            *path.last().unwrap()
        } else {
            point_at_arclength(path, s)
        };
        wp.push((start_t + k, p));
    }
    while wp.last().unwrap().0 < min_end {
        let &(t, p) = wp.last().unwrap();
        wp.push((t + 1, p));
    }
    wp
}

fn point_at_arclength(path: &[Point2<f64>], s: f64) -> Point2<f64> {
    let mut remaining = s;
    for pair in path.windows(2) {
        let len = (pair[1] - pair[0]).norm();
        if remaining <= len {
            if len <= 1e-12 {
                return pair[0];
            }
            return pair[0] + (pair[1] - pair[0]) * (remaining / len);
        }
        remaining -= len;
    }
    *path.last().unwrap()
}

/// Waypoints that gather all members in a line formation near `center`:
/// shortest collision-free paths walked at full speed, early arrivals
/// waiting at their spot. Returns per-member waypoints and the meeting time.
pub fn formation_rendezvous(
    roots: &[(Point2<f64>, i64)],
    center: Point2<f64>,
    spacing: f64,
    ws: &Workspace,
    u_max: f64,
) -> Result<(Vec<TimedPath>, i64), RuntimeError> {
    let points = line_formation(center, roots.len(), spacing, ws).ok_or_else(|| {
        RuntimeError::Internal(format!(
            "no clear line formation near ({:.2},{:.2})",
            center.x, center.y
        ))
    })?;
    let mut paths = Vec::with_capacity(roots.len());
    let mut t_meet = roots.iter().map(|&(_, t)| t).max().unwrap() + 1;
    for (&(pos, t0), goal) in roots.iter().zip(&points) {
        let path = geodesic(&pos, goal, ws)?;
        let total = polyline_length(&path);
        let steps = if total <= 1e-12 {
            0
        } else {
            (total / u_max - 1e-9).ceil() as i64
        };
        t_meet = t_meet.max(t0 + steps);
        paths.push(path);
    }
    let waypoints = roots
        .iter()
        .zip(&paths)
        .map(|(&(_, t0), path)| walk_polyline(path, u_max, t0, t_meet))
        .collect();
    Ok((waypoints, t_meet))
}

/// Rebuilds one member's filter after a record exchange so that it equals
/// the chronological filter of the full pooled record set, and snapshots the
/// result as a checkpoint. Returns how many records were new to the member.
fn refilter_member(
    st: &mut RobotState,
    union: &BTreeMap<RecordKey, MeasurementRecord>,
    t_event: i64,
    models: &[TargetModel],
    sensor: &SensorModel,
) -> Result<usize, RuntimeError> {
    let mut oldest_new: Option<i64> = None;
    let mut new_count = 0usize;
    for key in union.keys() {
        if !st.store.contains_key(key) {
            new_count += 1;
            if oldest_new.is_none() {
                oldest_new = Some(key.t);
            }
        }
    }
    st.store = union.clone();
    let belief = match oldest_new {
        Some(t_on) => {
            // Checkpoints at or after the oldest late record miss it; drop
            // them and replay from the newest surviving one.
            while st.checkpoints.last().map(|c| c.t >= t_on).unwrap_or(false)
                && st.checkpoints.len() > 1
            {
                st.checkpoints.pop();
            }
            let base = st.checkpoints.last().unwrap();
            debug_assert!(base.t < t_on, "prior checkpoint must predate new records");
            let mut b = base.clone();
            while b.t < t_event {
                predict_step(&mut b, models);
                let lo = RecordKey {
                    t: b.t,
                    robot: RobotId(0),
                    target: 0,
                };
                let hi = RecordKey {
                    t: b.t,
                    robot: RobotId(u32::MAX),
                    target: usize::MAX,
                };
                let batch: Vec<MeasurementRecord> =
                    st.store.range(lo..=hi).map(|(_, r)| r.clone()).collect();
                if !batch.is_empty() {
                    update(&mut b, &batch, sensor, false)?;
                }
            }
            b
        }
        None => predict(&st.belief, models, t_event),
    };
    st.belief = belief.clone();
    st.checkpoints.push(belief);
    Ok(new_count)
}

/// Runs one simulation to completion.
pub fn run(config: &SimConfig) -> Result<SimulationLog, RuntimeError> {
    config.validate()?;
    if config.strategy == Strategy::AllTime {
        return crate::baselines::run_all_time(config);
    }
    let graph = &config.graph;
    let schedule = Schedule::synthesize(graph);
    let period = schedule.period();
    let delay_bound = graph.delay_bound(period);
    let prior = Belief::new(0, config.xhat0.clone(), config.cov0.clone());

    let mut robots: BTreeMap<RobotId, RobotState> = graph
        .robots()
        .map(|id| {
            (
                id,
                RobotState {
                    queue: VecDeque::new(),
                    store: BTreeMap::new(),
                    checkpoints: vec![prior.clone()],
                    belief: prior.clone(),
                    sense_rng: stream(config.seed, "sense", id.0 as u64, 0),
                },
            )
        })
        .collect();

    // Initial segments, teams in slot order: members gather in a line
    // formation through the centroid of their current root positions.
    let mut events: BTreeSet<(i64, usize, usize)> = BTreeSet::new();
    let mut order: Vec<usize> = (0..graph.num_teams()).collect();
    order.sort_by_key(|&team| (schedule.slot(team).unwrap(), team));
    for team in order {
        let members: Vec<RobotId> = graph.team(team).iter().copied().collect();
        let roots: Vec<(Point2<f64>, i64)> = members
            .iter()
            .map(|id| {
                let st = &robots[id];
                st.queue
                    .back()
                    .map(|s| (s.end_pos(), s.end_t()))
                    .unwrap_or((config.starts[id], 0))
            })
            .collect();
        let centroid = Point2::from(
            roots.iter().map(|(p, _)| p.coords).sum::<Vector2<f64>>() / roots.len() as f64,
        );
        let (waypoints, t_meet) = formation_rendezvous(
            &roots,
            centroid,
            config.ws.comm_range / 2.0,
            &config.ws,
            config.params.u_max,
        )?;
        let epoch = schedule.slot(team)?;
        for (id, wp) in members.iter().zip(waypoints) {
            robots.get_mut(id).unwrap().queue.push_back(Segment {
                team,
                epoch,
                waypoints: wp,
            });
        }
        events.insert((t_meet, epoch, team));
    }
    for (id, st) in &robots {
        if st.queue.len() != 2 {
            return Err(RuntimeError::Internal(format!(
                "robot {id} seeded with {} segments",
                st.queue.len()
            )));
        }
    }

    let mut world = WorldState {
        t: 0,
        targets: config.targets0.clone(),
        robots: config.starts.clone(),
    };
    let mut world_rng = stream(config.seed, "world", 0, 0);
    let mut oracle = prior.clone();
    let mut registry: BTreeMap<RecordKey, MeasurementRecord> = BTreeMap::new();
    let offsets = [Vector2::zeros()];

    let mut steps: Vec<StepLog> = Vec::with_capacity(config.t_end as usize + 1);
    let mut oracle_trace: Vec<Belief> = Vec::with_capacity(config.t_end as usize + 1);
    let mut event_log: Vec<EventLog> = Vec::new();
    let mut violations = 0usize;

    for t in 0..=config.t_end {
        if t > 0 {
            step_targets(&mut world, &config.models, &config.ws, &mut world_rng);
            debug_assert_eq!(world.t, t);
            let ids: Vec<RobotId> = robots.keys().copied().collect();
            for id in &ids {
                let pos = robots[id].position_at(t);
                world.robots.insert(*id, pos);
            }
            let mut new_at_t: Vec<MeasurementRecord> = Vec::new();
            if t % config.params.dt == 0 {
                for id in &ids {
                    let st = robots.get_mut(id).unwrap();
                    let epoch = st.executing(t).epoch;
                    let recs = sense(
                        &world,
                        *id,
                        &config.sensor,
                        &config.ws,
                        epoch,
                        &mut st.sense_rng,
                    );
                    if !recs.is_empty() {
                        st.belief = predict(&st.belief, &config.models, t);
                        update(&mut st.belief, &recs, &config.sensor, false)?;
                        for rec in &recs {
                            st.store.insert(rec.key(), rec.clone());
                            registry.insert(rec.key(), rec.clone());
                        }
                        new_at_t.extend(recs);
                    }
                }
            }
            oracle = predict(&oracle, &config.models, t);
            if !new_at_t.is_empty() {
                new_at_t.sort_by_key(|r| r.key());
                update(&mut oracle, &new_at_t, &config.sensor, false)?;
            }
        }
        oracle_trace.push(oracle.clone());
        let truth_err = {
            let mut sum = 0.0;
            for (k, x) in world.targets.iter().enumerate() {
                sum += (oracle.target_estimate(k) - x).norm_squared();
            }
            sum.sqrt()
        };
        steps.push(StepLog {
            t,
            targets: world.targets.clone(),
            robots: world.robots.clone(),
            error: truth_err,
            lambda_max: uncertainty(&oracle),
        });

        // Team meetings at this step, in epoch order.
        while let Some(&(te, epoch, team)) = events.iter().next() {
            if te != t {
                break;
            }
            events.pop_first();
            let members: Vec<RobotId> = graph.team(team).iter().copied().collect();

            // Arriving members retire the segment that just ended.
            for id in &members {
                let st = robots.get_mut(id).unwrap();
                let seg = st.queue.pop_front().ok_or_else(|| {
                    RuntimeError::Internal(format!("robot {id} arrived without a segment"))
                })?;
                if seg.team != team || seg.epoch != epoch || seg.end_t() != t {
                    return Err(RuntimeError::Internal(format!(
                        "robot {id} arrived with mismatched segment"
                    )));
                }
                if st.queue.len() != 1 {
                    return Err(RuntimeError::Internal(format!(
                        "robot {id} holds {} pending segments at a meeting",
                        st.queue.len()
                    )));
                }
            }

            // Pool records.
            let mut union: BTreeMap<RecordKey, MeasurementRecord> = BTreeMap::new();
            for id in &members {
                for (k, r) in &robots[id].store {
                    union.insert(*k, r.clone());
                }
            }
            if let Some(w) = config.prune_horizon {
                let floor = t - w;
                union.retain(|k, _| k.t >= floor);
            }
            let mut new_records = 0usize;
            let mut fused: Option<Belief> = None;
            for id in &members {
                let st = robots.get_mut(id).unwrap();
                let n = refilter_member(st, &union, t, &config.models, &config.sensor)?;
                new_records = new_records.max(n);
                if let Some(w) = config.prune_horizon {
                    let floor = t - w;
                    while st.checkpoints.len() > 1 && st.checkpoints[0].t < floor {
                        st.checkpoints.remove(0);
                    }
                }
                match &fused {
                    None => fused = Some(st.belief.clone()),
                    Some(f) => {
                        if f.xhat != st.belief.xhat || f.cov != st.belief.cov {
                            return Err(RuntimeError::Internal(format!(
                                "members of team {team} disagree after exchange at t={t}"
                            )));
                        }
                    }
                }
            }
            let fused = fused.expect("team has members");

            if config.audit_propagation && config.prune_horizon.is_none() {
                for (key, rec) in &registry {
                    if rec.epoch + delay_bound <= epoch && !union.contains_key(key) {
                        violations += 1;
                    }
                }
            }

            let positions: Vec<Point2<f64>> = members.iter().map(|id| world.robots[id]).collect();
            let connected = algebraic_connectivity(&positions, config.ws.comm_range) > 1e-9;

            // Plan the team's next segment unless the run is over.
            let outcome = if t >= config.t_end {
                PlanOutcome::EndOfRun
            } else {
                let roots: Vec<(Point2<f64>, i64)> =
                    members.iter().map(|id| robots[id].root()).collect();
                let next_epoch = epoch + period;
                let mut plan_rng = stream(config.seed, "plan", team as u64, next_epoch as u64);
                let (waypoints, t_meet, outcome) = match config.strategy {
                    Strategy::Intermittent => {
                        let root_positions: Vec<Point2<f64>> =
                            roots.iter().map(|&(p, _)| p).collect();
                        let root_times: Vec<i64> = roots.iter().map(|&(_, t)| t).collect();
                        let max_root = *root_times.iter().max().unwrap();
                        let root_belief = predict(&fused, &config.models, max_root);
                        let input = PlanInput {
                            ws: &config.ws,
                            models: &config.models,
                            sensor: &config.sensor,
                            params: &config.params,
                            offsets: &offsets,
                        };
                        match plan(
                            root_positions,
                            root_times,
                            root_belief,
                            &input,
                            &mut plan_rng,
                        ) {
                            Ok(res) => (
                                res.waypoints.clone(),
                                res.t_f,
                                PlanOutcome::Rendezvous(res.relax_level),
                            ),
                            Err(PlannerError::NoGoalFound) => {
                                let centroid = Point2::from(
                                    roots.iter().map(|(p, _)| p.coords).sum::<Vector2<f64>>()
                                        / roots.len() as f64,
                                );
                                let (wp, tm) = formation_rendezvous(
                                    &roots,
                                    centroid,
                                    config.ws.comm_range / 2.0,
                                    &config.ws,
                                    config.params.u_max,
                                )?;
                                (wp, tm, PlanOutcome::Regroup)
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                    Strategy::Heuristic => {
                        match crate::baselines::heuristic_rendezvous(
                            &roots,
                            &config.ws,
                            config.params.u_max,
                            &mut plan_rng,
                        ) {
                            Some((wp, tm)) => (wp, tm, PlanOutcome::Heuristic),
                            None => {
                                let centroid = Point2::from(
                                    roots.iter().map(|(p, _)| p.coords).sum::<Vector2<f64>>()
                                        / roots.len() as f64,
                                );
                                let (wp, tm) = formation_rendezvous(
                                    &roots,
                                    centroid,
                                    config.ws.comm_range / 2.0,
                                    &config.ws,
                                    config.params.u_max,
                                )?;
                                (wp, tm, PlanOutcome::Regroup)
                            }
                        }
                    }
                    Strategy::AllTime => unreachable!("dispatched above"),
                };
                for (id, wp) in members.iter().zip(waypoints) {
                    robots.get_mut(id).unwrap().queue.push_back(Segment {
                        team,
                        epoch: next_epoch,
                        waypoints: wp,
                    });
                }
                events.insert((t_meet, next_epoch, team));
                outcome
            };

            event_log.push(EventLog {
                t,
                team,
                epoch,
                members,
                positions,
                belief: fused,
                new_records,
                connected,
                outcome,
            });
        }
    }

    Ok(SimulationLog {
        steps,
        oracle_trace,
        events: event_log,
        records: registry,
        propagation_violations: violations,
        t_end: config.t_end,
        period,
        delay_bound,
    })
}
