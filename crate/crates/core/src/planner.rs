//! Sampling-based joint path planning toward connected rendezvous goals.
//!
//! A team plans in the joint configuration space of all its members. Tree
//! nodes carry one ground-plane position and one arrival time per robot plus
//! the belief snapshot at the latest arrival; edge costs accumulate the
//! largest covariance eigenvalue at every intermediate step, so cheap paths
//! are paths along which the predicted estimate stays sharp.
//!
//! A node is a valid rendezvous goal when (i) the members' positions form a
//! connected disk graph at communication range, (ii) all members arrive at
//! the same step, and (iii) the most uncertain target's covariance block has
//! dropped below the configured bound. Steering equalizes arrival times:
//! robots whose clocks lag take full steps while robots that are ahead take
//! shortened steps, so the arrival-time spread never grows along a branch and
//! reaches zero after finitely many extensions.
//!
//! Sampling is biased in two phases: an initial uniform phase explores the
//! workspace, then samples concentrate around a randomly drawn joint meeting
//! point so that synchronized, connected configurations appear quickly.

use nalgebra::{DMatrix, Point2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::estimator::{
    predict_step, range_3d, target_uncertainty, uncertainty, uncertainty_ranking, update, Belief,
    MeasurementRecord, SensorModel, TargetModel,
};
use crate::team_graph::RobotId;
use crate::world::Workspace;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("no rendezvous goal found within the sampling budget")]
    NoGoalFound,
    #[error("planner parameters invalid: {0}")]
    BadParams(&'static str),
}

/// Tuning knobs of the joint planner.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    /// Sampling iterations per planning call.
    pub n_sample: usize,
    /// Iterations drawn uniformly before switching to meeting-point bias.
    /// Zero means 30% of `n_sample`.
    pub phase_one: usize,
    /// Maximum per-robot displacement per tree edge.
    pub epsilon: f64,
    /// Scale of the shrinking rewiring radius.
    pub gamma: f64,
    /// Robot speed per step.
    pub u_max: f64,
    /// Uncertainty bound on the constrained target (squared length scale).
    pub delta: f64,
    /// Measurement period in steps.
    pub dt: i64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            n_sample: 300,
            phase_one: 0,
            epsilon: 1.0,
            gamma: 3.0,
            u_max: 0.1,
            delta: 0.12 * 0.12,
            dt: 1,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.n_sample == 0 {
            return Err(PlannerError::BadParams("n_sample must be positive"));
        }
        let bad_length = |v: f64| v.is_nan() || v <= 0.0;
        if bad_length(self.epsilon) || bad_length(self.u_max) || bad_length(self.gamma) {
            return Err(PlannerError::BadParams("lengths must be positive"));
        }
        if self.epsilon < self.u_max {
            return Err(PlannerError::BadParams(
                "epsilon must cover at least one step",
            ));
        }
        // Positive or +inf (which disables the uncertainty goal); NaN is
        // rejected.
        if self.delta.is_nan() || self.delta <= 0.0 {
            return Err(PlannerError::BadParams("delta must be positive"));
        }
        if self.dt < 1 {
            return Err(PlannerError::BadParams("dt must be at least 1"));
        }
        Ok(())
    }

    fn phase_one_count(&self) -> usize {
        if self.phase_one > 0 {
            self.phase_one
        } else {
            (self.n_sample * 3) / 10
        }
    }
}

/// Everything the planner needs besides the root state.
pub struct PlanInput<'a> {
    pub ws: &'a Workspace,
    pub models: &'a [TargetModel],
    pub sensor: &'a SensorModel,
    pub params: &'a PlannerParams,
    /// Sensing and collision footprint around each planned position. Teams
    /// plan their members individually (a single zero offset); the rigid
    /// formation of the always-connected baseline plans its center and
    /// expands to all member offsets.
    pub offsets: &'a [Vector2<f64>],
}

/// One node of the joint planning tree.
#[derive(Debug, Clone)]
pub struct Node {
    pub positions: Vec<Point2<f64>>,
    /// Per-robot arrival times.
    pub times: Vec<i64>,
    /// Accumulated uncertainty cost from the root.
    pub cost: f64,
    /// Belief snapshot at the latest arrival time.
    pub belief: Belief,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

impl Node {
    pub fn max_time(&self) -> i64 {
        *self.times.iter().max().unwrap()
    }

    pub fn min_time(&self) -> i64 {
        *self.times.iter().min().unwrap()
    }

    /// Arrival-time spread; zero means the node is time-synchronized.
    pub fn delay(&self) -> i64 {
        self.max_time() - self.min_time()
    }
}

/// The grown tree, exposed for inspection and bookkeeping audits.
#[derive(Debug, Clone)]
pub struct PlanTree {
    pub nodes: Vec<Node>,
}

impl PlanTree {
    /// Recomputes every node's cost by fresh root-to-node accumulation,
    /// independent of the incremental bookkeeping kept during growth.
    pub fn recompute_costs(&self, input: &PlanInput) -> Vec<f64> {
        let mut costs = vec![f64::NAN; self.nodes.len()];
        let mut beliefs: Vec<Option<Belief>> = vec![None; self.nodes.len()];
        costs[0] = self.nodes[0].cost;
        beliefs[0] = Some(self.nodes[0].belief.clone());
        // Children always have larger indices than their original insertion
        // order, but rewiring can reorder ancestry; walk by BFS.
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for &c in &self.nodes[u].children {
                let (inc, belief) = path_cost(
                    &self.nodes[u].positions,
                    &self.nodes[u].times,
                    &self.nodes[c].positions,
                    &self.nodes[c].times,
                    beliefs[u].as_ref().unwrap(),
                    input,
                );
                costs[c] = costs[u] + inc;
                beliefs[c] = Some(belief);
                queue.push_back(c);
            }
        }
        costs
    }

    /// Structured text table of the tree for debugging.
    pub fn dump(&self) -> String {
        let mut out = String::from("idx\tparent\tcost\ttimes\tpositions\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let parent = n
                .parent
                .map(|p| p.to_string())
                .unwrap_or_else(|| "-".into());
            let times: Vec<String> = n.times.iter().map(|t| t.to_string()).collect();
            let pos: Vec<String> = n
                .positions
                .iter()
                .map(|p| format!("({:.3},{:.3})", p.x, p.y))
                .collect();
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t[{}]\t[{}]\n",
                i,
                parent,
                n.cost,
                times.join(","),
                pos.join(",")
            ));
        }
        out
    }
}

/// Which goal condition level the returned plan satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxLevel {
    /// Connected, synchronized, and the k-th most uncertain target within
    /// bound (0 is the most uncertain).
    UncertaintyBound(usize),
    /// Connected and synchronized only.
    ConnectivityOnly,
}

/// One robot's motion as consecutive (time, position) waypoints.
pub type TimedPath = Vec<(i64, Point2<f64>)>;

/// Result of one planning call.
#[derive(Debug, Clone)]
pub struct PlanResult {
    /// Per robot (team order): timed waypoints, one per step, from the
    /// robot's root time to the common final time.
    pub waypoints: Vec<TimedPath>,
    /// Common arrival time of all members.
    pub t_f: i64,
    pub cost: f64,
    pub goal_positions: Vec<Point2<f64>>,
    pub relax_level: RelaxLevel,
    pub tree: PlanTree,
    pub goal_index: usize,
}

/// Second-smallest Laplacian eigenvalue of the disk graph over the given
/// positions at the given radius. Positive iff the graph is connected; a
/// single position counts as connected.
pub fn algebraic_connectivity(positions: &[Point2<f64>], radius: f64) -> f64 {
    let n = positions.len();
    if n <= 1 {
        return 1.0;
    }
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if (positions[i] - positions[j]).norm() <= radius {
                lap[(i, j)] = -1.0;
                lap[(j, i)] = -1.0;
                lap[(i, i)] += 1.0;
                lap[(j, j)] += 1.0;
            }
        }
    }
    let mut eigs: Vec<f64> = lap.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs[1]
}

/// Interpolated position of robot `r` at time `t` along the edge, holding at
/// the endpoint once the robot has arrived.
fn position_on_edge(
    from_pos: &[Point2<f64>],
    from_t: &[i64],
    to_pos: &[Point2<f64>],
    to_t: &[i64],
    r: usize,
    t: i64,
) -> Point2<f64> {
    if t >= to_t[r] {
        return to_pos[r];
    }
    if t <= from_t[r] {
        return from_pos[r];
    }
    let frac = (t - from_t[r]) as f64 / (to_t[r] - from_t[r]) as f64;
    from_pos[r] + (to_pos[r] - from_pos[r]) * frac
}

/// Accumulated uncertainty cost of traversing one edge, together with the
/// belief snapshot at the child's latest arrival time.
///
/// Starting from the parent's belief (timestamped at the parent's latest
/// arrival), the filter is advanced one step at a time up to the child's
/// latest arrival. At measurement steps every robot footprint position that
/// has a target in range and line of sight contributes a predicted-only
/// update; the largest covariance eigenvalue is added to the cost at every
/// step, after the update where one occurs. Identical parent and child
/// states yield a zero increment.
pub fn path_cost(
    from_pos: &[Point2<f64>],
    from_t: &[i64],
    to_pos: &[Point2<f64>],
    to_t: &[i64],
    belief_at_parent: &Belief,
    input: &PlanInput,
) -> (f64, Belief) {
    let t_start = *from_t.iter().max().unwrap();
    let t_end = *to_t.iter().max().unwrap();
    debug_assert_eq!(belief_at_parent.t, t_start, "belief must sit at the parent");
    let mut belief = belief_at_parent.clone();
    let mut cost = 0.0;
    let mut batch: Vec<MeasurementRecord> = Vec::new();
    for t in (t_start + 1)..=t_end {
        predict_step(&mut belief, input.models);
        if t % input.params.dt == 0 {
            batch.clear();
            for r in 0..from_pos.len() {
                let base = position_on_edge(from_pos, from_t, to_pos, to_t, r, t);
                for (oi, off) in input.offsets.iter().enumerate() {
                    let q = base + off;
                    for (a, _) in input.models.iter().enumerate() {
                        let est = belief.target_estimate(a);
                        let range = range_3d(&[q.x, q.y], &est);
                        if range <= input.ws.effective_sense_range(input.sensor)
                            && input.ws.line_of_sight(&q, &est)
                        {
                            batch.push(MeasurementRecord {
                                robot: RobotId((r * input.offsets.len() + oi) as u32),
                                t,
                                robot_pos: [q.x, q.y],
                                target: a,
                                range,
                                epoch: 0,
                            });
                        }
                    }
                }
            }
            if !batch.is_empty() {
                // A singular innovation batch is skipped; prediction alone
                // then determines the step cost.
                let _ = update(&mut belief, &batch, input.sensor, true);
            }
        }
        cost += uncertainty(&belief);
    }
    (cost, belief)
}

/// Time-synchronizing steering toward a sampled joint position.
///
/// The step length is the smallest per-robot distance toward the sample,
/// capped by `epsilon`, converted to whole steps at full speed. Robots whose
/// arrival time lags the team minimum use the full duration; robots that are
/// ahead move only for the remainder, so the arrival-time spread shrinks.
fn steer(
    nearest_pos: &[Point2<f64>],
    nearest_t: &[i64],
    sample: &[Point2<f64>],
    params: &PlannerParams,
) -> Option<(Vec<Point2<f64>>, Vec<i64>)> {
    let m = *nearest_t.iter().min().unwrap();
    let mut dirs = Vec::with_capacity(sample.len());
    let mut s = f64::INFINITY;
    for (p, q) in nearest_pos.iter().zip(sample) {
        let d = q - p;
        let norm = d.norm();
        s = s.min(params.epsilon.min(norm));
        dirs.push((d, norm));
    }
    if s <= 1e-12 {
        return None;
    }
    // The small bias keeps whole-step conversion stable against division
    // noise (0.3 / 0.1 rounds below 3.0 in binary floating point).
    let max_steps = (params.epsilon / params.u_max + 1e-9).floor() as i64;
    let dt_s = ((s / params.u_max - 1e-9).ceil() as i64).clamp(1, max_steps.max(1));
    let mut positions = Vec::with_capacity(sample.len());
    let mut times = Vec::with_capacity(sample.len());
    for (r, (d, norm)) in dirs.iter().enumerate() {
        let catch_up = dt_s - (nearest_t[r] - m);
        if catch_up > 0 {
            let step = params.u_max * catch_up as f64;
            positions.push(nearest_pos[r] + d / *norm * step);
            times.push(nearest_t[r] + catch_up);
        } else {
            positions.push(nearest_pos[r]);
            times.push(nearest_t[r]);
        }
    }
    Some((positions, times))
}

/// True if robots can travel from the parent to the child within the per
/// robot time spans at bounded speed (waiting in place is allowed).
fn edge_feasible(
    from_pos: &[Point2<f64>],
    from_t: &[i64],
    to_pos: &[Point2<f64>],
    to_t: &[i64],
    u_max: f64,
) -> bool {
    for r in 0..from_pos.len() {
        let span = to_t[r] - from_t[r];
        if span < 0 {
            return false;
        }
        let dist = (to_pos[r] - from_pos[r]).norm();
        if dist > u_max * span as f64 + 1e-9 {
            return false;
        }
    }
    true
}

fn edge_collision_free(
    from_pos: &[Point2<f64>],
    to_pos: &[Point2<f64>],
    input: &PlanInput,
) -> bool {
    for r in 0..from_pos.len() {
        for off in input.offsets {
            if !input
                .ws
                .collision_free(&(from_pos[r] + off), &(to_pos[r] + off))
            {
                return false;
            }
        }
    }
    true
}

struct GoalCheck {
    comm_range: f64,
    delta: f64,
}

impl GoalCheck {
    /// Conditions (i) connectivity and (ii) synchronization.
    fn connected_synchronized(&self, node: &Node) -> bool {
        node.delay() == 0 && algebraic_connectivity(&node.positions, self.comm_range) > 1e-9
    }

    fn satisfies(&self, node: &Node, constraint_target: Option<usize>) -> bool {
        if !self.connected_synchronized(node) {
            return false;
        }
        match constraint_target {
            Some(a) => target_uncertainty(&node.belief, a) <= self.delta,
            None => true,
        }
    }
}

fn is_ancestor(tree: &[Node], candidate: usize, of: usize) -> bool {
    let mut cur = Some(of);
    while let Some(i) = cur {
        if i == candidate {
            return true;
        }
        cur = tree[i].parent;
    }
    false
}

/// Grows the joint tree and returns the cheapest rendezvous plan.
///
/// The root carries per-robot start positions and start times (the end
/// states of each member's previously committed segment) plus the team
/// belief predicted to the latest of those times. The returned waypoints
/// advance every robot from its root time to a common final time strictly
/// after the latest root time.
pub fn plan<R: Rng>(
    root_positions: Vec<Point2<f64>>,
    root_times: Vec<i64>,
    root_belief: Belief,
    input: &PlanInput,
    rng: &mut R,
) -> Result<PlanResult, PlannerError> {
    input.params.validate()?;
    assert_eq!(root_positions.len(), root_times.len());
    assert_eq!(root_belief.t, *root_times.iter().max().unwrap());
    let n_robots = root_positions.len();
    let params = input.params;
    let bounds = input.ws.bounds;
    let comm_range = input.ws.comm_range;

    let ranking = uncertainty_ranking(&root_belief);
    let primary = if params.delta.is_finite() && !ranking.is_empty() {
        Some(ranking[0])
    } else {
        None
    };
    let check = GoalCheck {
        comm_range,
        delta: params.delta,
    };

    let mut tree = vec![Node {
        positions: root_positions,
        times: root_times,
        cost: 0.0,
        belief: root_belief,
        parent: None,
        children: Vec::new(),
    }];
    let mut goal_set: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();

    let dim = 2 * n_robots;
    let mut sample_buf = vec![Point2::origin(); n_robots];

    let mut grow = |tree: &mut Vec<Node>,
                    goal_set: &mut std::collections::BTreeSet<usize>,
                    rng: &mut R,
                    iterations: usize,
                    uniform_first: usize| {
        for it in 0..iterations {
            // Sample a joint configuration.
            if it < uniform_first {
                for p in sample_buf.iter_mut() {
                    *p = Point2::new(
                        rng.random_range(bounds.min[0]..bounds.max[0]),
                        rng.random_range(bounds.min[1]..bounds.max[1]),
                    );
                }
            } else {
                let q = Point2::new(
                    rng.random_range(bounds.min[0]..bounds.max[0]),
                    rng.random_range(bounds.min[1]..bounds.max[1]),
                );
                let spread = 2.0 * comm_range;
                for p in sample_buf.iter_mut() {
                    for axis in 0..2 {
                        let mut v = f64::NAN;
                        for _ in 0..64 {
                            let z: f64 = rng.sample(StandardNormal);
                            v = q[axis] + spread * z;
                            if v >= bounds.min[axis] && v <= bounds.max[axis] {
                                break;
                            }
                        }
                        p[axis] = bounds.clamp_axis(axis, v);
                    }
                }
            }

            // Nearest node in joint position space; ties to the lowest index.
            let mut nearest = 0usize;
            let mut best_d2 = f64::INFINITY;
            for (i, node) in tree.iter().enumerate() {
                let d2: f64 = node
                    .positions
                    .iter()
                    .zip(&sample_buf)
                    .map(|(p, q)| (p - q).norm_squared())
                    .sum();
                if d2 < best_d2 {
                    best_d2 = d2;
                    nearest = i;
                }
            }

            let Some((new_pos, new_times)) = steer(
                &tree[nearest].positions,
                &tree[nearest].times,
                &sample_buf,
                params,
            ) else {
                continue;
            };
            if !edge_collision_free(&tree[nearest].positions, &new_pos, input) {
                continue;
            }

            // Shrinking near radius in the joint space.
            let n = (tree.len() + 1) as f64;
            let r_near =
                (params.gamma * ((n.ln() / n).powf(1.0 / dim as f64))).min(4.0 * params.epsilon);

            let mut near: Vec<usize> = Vec::new();
            for (i, node) in tree.iter().enumerate() {
                let d2: f64 = node
                    .positions
                    .iter()
                    .zip(&new_pos)
                    .map(|(p, q)| (p - q).norm_squared())
                    .sum();
                if d2.sqrt() <= r_near {
                    near.push(i);
                }
            }

            // Choose the cheapest feasible parent among nearest and near set.
            let (mut best_inc, mut best_belief) = path_cost(
                &tree[nearest].positions,
                &tree[nearest].times,
                &new_pos,
                &new_times,
                &tree[nearest].belief,
                input,
            );
            let mut best_parent = nearest;
            let mut best_cost = tree[nearest].cost + best_inc;
            for &c in &near {
                if c == nearest {
                    continue;
                }
                if !edge_feasible(
                    &tree[c].positions,
                    &tree[c].times,
                    &new_pos,
                    &new_times,
                    params.u_max,
                ) {
                    continue;
                }
                if !edge_collision_free(&tree[c].positions, &new_pos, input) {
                    continue;
                }
                let (inc, belief) = path_cost(
                    &tree[c].positions,
                    &tree[c].times,
                    &new_pos,
                    &new_times,
                    &tree[c].belief,
                    input,
                );
                if tree[c].cost + inc < best_cost {
                    best_cost = tree[c].cost + inc;
                    best_parent = c;
                    best_inc = inc;
                    best_belief = belief;
                }
            }
            let _ = best_inc;

            let new_idx = tree.len();
            tree.push(Node {
                positions: new_pos,
                times: new_times,
                cost: best_cost,
                belief: best_belief,
                parent: Some(best_parent),
                children: Vec::new(),
            });
            tree[best_parent].children.push(new_idx);
            if check.satisfies(&tree[new_idx], primary) {
                goal_set.insert(new_idx);
            }

            // Rewire synchronized near nodes through the new node when that
            // is strictly cheaper; subtree times shift uniformly because a
            // rewired node's arrival times were equal beforehand.
            for &c in &near {
                if c == new_idx || is_ancestor(tree, c, new_idx) {
                    continue;
                }
                if tree[c].delay() != 0 {
                    continue;
                }
                let tau_old = tree[c].max_time();
                let mut tau_new = i64::MIN;
                for r in 0..n_robots {
                    let dist = (tree[c].positions[r] - tree[new_idx].positions[r]).norm();
                    let travel = (dist / params.u_max).ceil() as i64;
                    tau_new = tau_new.max(tree[new_idx].times[r] + travel);
                }
                if !edge_collision_free(&tree[new_idx].positions, &tree[c].positions, input) {
                    continue;
                }
                let cand_times = vec![tau_new; n_robots];
                if !edge_feasible(
                    &tree[new_idx].positions,
                    &tree[new_idx].times,
                    &tree[c].positions,
                    &cand_times,
                    params.u_max,
                ) {
                    continue;
                }
                let (inc, belief) = path_cost(
                    &tree[new_idx].positions,
                    &tree[new_idx].times,
                    &tree[c].positions,
                    &cand_times,
                    &tree[new_idx].belief,
                    input,
                );
                if tree[new_idx].cost + inc >= tree[c].cost {
                    continue;
                }
                // Detach from the old parent and attach under the new node.
                let old_parent = tree[c].parent.expect("non-root rewire target");
                tree[old_parent].children.retain(|&x| x != c);
                tree[new_idx].children.push(c);
                tree[c].parent = Some(new_idx);
                tree[c].cost = tree[new_idx].cost + inc;
                tree[c].belief = belief;
                let shift = tau_new - tau_old;
                for t in tree[c].times.iter_mut() {
                    *t += shift;
                }
                let in_goal = check.satisfies(&tree[c], primary);
                if in_goal {
                    goal_set.insert(c);
                } else {
                    goal_set.remove(&c);
                }
                // Propagate times, costs and beliefs through the subtree.
                let mut stack: Vec<usize> = tree[c].children.clone();
                while let Some(w) = stack.pop() {
                    for t in tree[w].times.iter_mut() {
                        *t += shift;
                    }
                    let p = tree[w].parent.unwrap();
                    let (inc_w, belief_w) = path_cost(
                        &tree[p].positions,
                        &tree[p].times,
                        &tree[w].positions,
                        &tree[w].times,
                        &tree[p].belief,
                        input,
                    );
                    tree[w].cost = tree[p].cost + inc_w;
                    tree[w].belief = belief_w;
                    if check.satisfies(&tree[w], primary) {
                        goal_set.insert(w);
                    } else {
                        goal_set.remove(&w);
                    }
                    stack.extend(tree[w].children.iter().copied());
                }
            }
        }
    };

    grow(
        &mut tree,
        &mut goal_set,
        rng,
        params.n_sample,
        params.phase_one_count(),
    );

    // Goal selection ladder: the maintained goal set first, then a re-scan
    // against successively less uncertain targets, then connectivity and
    // synchronization alone, then one sampling extension.
    let select = |tree: &Vec<Node>,
                  goal_set: &std::collections::BTreeSet<usize>|
     -> Option<(usize, RelaxLevel)> {
        let best_of = |candidates: &mut dyn Iterator<Item = usize>| -> Option<usize> {
            let mut best: Option<usize> = None;
            for i in candidates {
                if best.is_none_or(|b| tree[i].cost < tree[b].cost) {
                    best = Some(i);
                }
            }
            best
        };
        if primary.is_some() {
            if let Some(best) = best_of(&mut goal_set.iter().copied()) {
                return Some((best, RelaxLevel::UncertaintyBound(0)));
            }
            for (rank, &a) in ranking.iter().enumerate().skip(1) {
                let mut it = (1..tree.len()).filter(|&i| check.satisfies(&tree[i], Some(a)));
                if let Some(best) = best_of(&mut it) {
                    return Some((best, RelaxLevel::UncertaintyBound(rank)));
                }
            }
        } else {
            let mut it = (1..tree.len()).filter(|&i| check.satisfies(&tree[i], None));
            if let Some(best) = best_of(&mut it) {
                return Some((best, RelaxLevel::UncertaintyBound(0)));
            }
        }
        let mut it = (1..tree.len()).filter(|&i| check.connected_synchronized(&tree[i]));
        best_of(&mut it).map(|best| (best, RelaxLevel::ConnectivityOnly))
    };

    let mut chosen = select(&tree, &goal_set);
    if chosen.is_none() {
        grow(&mut tree, &mut goal_set, rng, params.n_sample, 0);
        chosen = select(&tree, &goal_set);
    }
    let Some((goal_idx, relax_level)) = chosen else {
        return Err(PlannerError::NoGoalFound);
    };

    // Extract the root-to-goal node chain.
    let mut chain = vec![goal_idx];
    while let Some(p) = tree[chain[chain.len() - 1]].parent {
        chain.push(p);
    }
    chain.reverse();

    // Per-robot timed waypoints, one per step.
    let t_f = tree[goal_idx].max_time();
    let mut waypoints: Vec<TimedPath> = Vec::with_capacity(n_robots);
    for r in 0..n_robots {
        let mut wp = vec![(tree[chain[0]].times[r], tree[chain[0]].positions[r])];
        for leg in chain.windows(2) {
            let (a, b) = (&tree[leg[0]], &tree[leg[1]]);
            for t in (a.times[r] + 1)..=b.times[r] {
                let pos = if t == b.times[r] {
                    b.positions[r]
                } else {
                    position_on_edge(&a.positions, &a.times, &b.positions, &b.times, r, t)
                };
                wp.push((t, pos));
            }
        }
        // Synchronized goals leave early arrivers in place up to t_f.
        while wp.last().unwrap().0 < t_f {
            let &(t, p) = wp.last().unwrap();
            wp.push((t + 1, p));
        }
        waypoints.push(wp);
    }

    Ok(PlanResult {
        waypoints,
        t_f,
        cost: tree[goal_idx].cost,
        goal_positions: tree[goal_idx].positions.clone(),
        relax_level,
        goal_index: goal_idx,
        tree: PlanTree { nodes: tree },
    })
}
