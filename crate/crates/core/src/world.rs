//! Workspace, ground-truth target simulation, sensing and shortest paths.
//!
//! Robots move in the ground plane of a rectangular workspace whose obstacles
//! are line segments (walls seen from above); targets move in 3D above the
//! same plane. Occlusion and collision are evaluated on the 2D projection.
//! Process noise that would push a target through a wall or out of the
//! workspace is rejected and redrawn, so ground-truth trajectories respect
//! the map while remaining driven by the configured motion profiles.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::estimator::{range_3d, MeasurementRecord, SensorModel, TargetModel};
use crate::geometry::{segment_hits_obstacle, segments_intersect, Rect, Segment};
use crate::team_graph::RobotId;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("no collision-free path from ({0:.3}, {1:.3}) to ({2:.3}, {3:.3})")]
    NoPath(f64, f64, f64, f64),
    #[error("communication range must be positive and smaller than the workspace diameter")]
    BadCommRange,
}

/// Static workspace description.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub bounds: Rect,
    pub obstacles: Vec<Segment>,
    /// Communication radius used for rendezvous connectivity.
    pub comm_range: f64,
    /// Sensing radius imposed by the environment (occlusion, clutter). The
    /// effective gate is the tighter of this and the sensor envelope.
    pub sense_range: f64,
}

impl Workspace {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.comm_range <= 0.0 || self.comm_range >= self.bounds.diameter() {
            return Err(WorldError::BadCommRange);
        }
        Ok(())
    }

    /// Sensing gate applied in this workspace: the sensor envelope curtailed
    /// by the environment limit.
    pub fn effective_sense_range(&self, sensor: &SensorModel) -> f64 {
        sensor.max_range.min(self.sense_range)
    }

    /// True if the straight ground-plane motion from `a` to `b` stays inside
    /// the workspace and touches no obstacle (closed test).
    pub fn collision_free(&self, a: &Point2<f64>, b: &Point2<f64>) -> bool {
        if !self.bounds.contains(a) || !self.bounds.contains(b) {
            return false;
        }
        self.obstacles
            .iter()
            .all(|obs| !segment_hits_obstacle(a, b, obs))
    }

    /// True if the segment from the robot position to the target's ground
    /// projection crosses no obstacle.
    pub fn line_of_sight(&self, robot: &Point2<f64>, target: &Vector3<f64>) -> bool {
        let t2 = Point2::new(target.x, target.y);
        self.obstacles
            .iter()
            .all(|obs| !segments_intersect(robot, &t2, &obs.start(), &obs.end()))
    }
}

/// Ground truth at one discrete time.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub t: i64,
    pub targets: Vec<Vector3<f64>>,
    pub robots: BTreeMap<RobotId, Point2<f64>>,
}

fn sample_noise<R: Rng>(q: &Matrix3<f64>, rng: &mut R) -> Vector3<f64> {
    if q.iter().all(|&v| v == 0.0) {
        return Vector3::zeros();
    }
    let l = q.cholesky().expect("process noise must be PSD").l();
    let z = Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    l * z
}

/// Advances all targets by one step. Noise draws that would move a target
/// across an obstacle or out of bounds (in ground projection) are rejected
/// and redrawn a bounded number of times, then replaced by the noiseless
/// step, and as a last resort the target stays put.
pub fn step_targets<R: Rng>(
    state: &mut WorldState,
    models: &[TargetModel],
    ws: &Workspace,
    rng: &mut R,
) {
    assert_eq!(state.targets.len(), models.len());
    let t = state.t;
    for (x, model) in state.targets.iter_mut().zip(models) {
        let mean = model.step_mean(x, t);
        let from = Point2::new(x.x, x.y);
        let admissible = |cand: &Vector3<f64>| {
            let to = Point2::new(cand.x, cand.y);
            ws.bounds.contains(&to) && ws.collision_free(&from, &to)
        };
        let mut accepted = None;
        for _ in 0..100 {
            let cand = mean + sample_noise(&model.q, rng);
            if admissible(&cand) {
                accepted = Some(cand);
                break;
            }
        }
        let next = accepted.unwrap_or(if admissible(&mean) { mean } else { *x });
        *x = next;
    }
    state.t += 1;
}

/// Measurements the robot obtains at the current step: one range per target
/// that is within sensing range and in line of sight. Noise is drawn in
/// target order from the provided stream.
pub fn sense<R: Rng>(
    state: &WorldState,
    robot: RobotId,
    sensor: &SensorModel,
    ws: &Workspace,
    epoch: usize,
    rng: &mut R,
) -> Vec<MeasurementRecord> {
    let pos = state.robots[&robot];
    let mut out = Vec::new();
    for (target, x) in state.targets.iter().enumerate() {
        let range = range_3d(&[pos.x, pos.y], x);
        if range > ws.effective_sense_range(sensor) || !ws.line_of_sight(&pos, x) {
            continue;
        }
        let sigma = sensor.sigma(range).expect("range checked in envelope");
        let noise: f64 = rng.sample(StandardNormal);
        out.push(MeasurementRecord {
            robot,
            t: state.t,
            robot_pos: [pos.x, pos.y],
            target,
            range: range + sensor.noise_scale * sigma * noise,
            epoch,
        });
    }
    out
}

/// Clearance used when routing around obstacle endpoints.
pub const GEODESIC_CLEARANCE: f64 = 0.05;

/// Shortest collision-free polyline from `a` to `b`, via a visibility graph
/// over obstacle endpoints inflated by a small clearance.
pub fn geodesic(
    a: &Point2<f64>,
    b: &Point2<f64>,
    ws: &Workspace,
) -> Result<Vec<Point2<f64>>, WorldError> {
    if (a - b).norm() <= 1e-12 {
        return Ok(vec![*a]);
    }
    if ws.collision_free(a, b) {
        return Ok(vec![*a, *b]);
    }

    let mut nodes: Vec<Point2<f64>> = vec![*a, *b];
    for obs in &ws.obstacles {
        for tip in [obs.start(), obs.end()] {
            for k in 0..8 {
                let ang = std::f64::consts::TAU * (k as f64 + 0.5) / 8.0;
                let p = Point2::new(
                    tip.x + GEODESIC_CLEARANCE * ang.cos(),
                    tip.y + GEODESIC_CLEARANCE * ang.sin(),
                );
                if ws.bounds.contains(&p)
                    && ws
                        .obstacles
                        .iter()
                        .all(|o| !segments_intersect(&p, &p, &o.start(), &o.end()))
                {
                    nodes.push(p);
                }
            }
        }
    }

    let n = nodes.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if ws.collision_free(&nodes[i], &nodes[j]) {
                let w = (nodes[i] - nodes[j]).norm();
                adj[i].push((j, w));
                adj[j].push((i, w));
            }
        }
    }

    // Dijkstra from node 0 (a) to node 1 (b).
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    dist[0] = 0.0;
    loop {
        let mut u = usize::MAX;
        let mut best = f64::INFINITY;
        for i in 0..n {
            if !done[i] && dist[i] < best {
                best = dist[i];
                u = i;
            }
        }
        if u == usize::MAX {
            break;
        }
        if u == 1 {
            break;
        }
        done[u] = true;
        for &(v, w) in &adj[u] {
            if dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
                prev[v] = u;
            }
        }
    }
    if dist[1].is_infinite() {
        return Err(WorldError::NoPath(a.x, a.y, b.x, b.y));
    }
    let mut path = vec![1usize];
    while *path.last().unwrap() != 0 {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    Ok(path.into_iter().map(|i| nodes[i]).collect())
}

/// Total length of a polyline.
pub fn polyline_length(path: &[Point2<f64>]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::InputProfile;
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn open_workspace() -> Workspace {
        Workspace {
            bounds: Rect::new([0.0, 0.0], [10.0, 10.0]),
            obstacles: vec![],
            comm_range: 0.2,
            sense_range: 5.0,
        }
    }

    fn walled_workspace() -> Workspace {
        Workspace {
            obstacles: vec![Segment::new([5.0, 2.0], [5.0, 8.0])],
            ..open_workspace()
        }
    }

    #[test]
    fn comm_range_must_fit_workspace() {
        let mut ws = open_workspace();
        ws.validate().unwrap();
        ws.comm_range = 100.0;
        assert_eq!(ws.validate(), Err(WorldError::BadCommRange));
    }

    #[test]
    fn collision_checks_respect_walls_and_bounds() {
        let ws = walled_workspace();
        assert!(ws.collision_free(&Point2::new(1.0, 1.0), &Point2::new(2.0, 2.0)));
        assert!(!ws.collision_free(&Point2::new(4.0, 5.0), &Point2::new(6.0, 5.0)));
        assert!(!ws.collision_free(&Point2::new(1.0, 1.0), &Point2::new(11.0, 1.0)));
    }

    #[test]
    fn line_of_sight_uses_ground_projection() {
        let ws = walled_workspace();
        let robot = Point2::new(4.0, 5.0);
        assert!(!ws.line_of_sight(&robot, &Vector3::new(6.0, 5.0, 3.0)));
        assert!(ws.line_of_sight(&robot, &Vector3::new(4.5, 6.0, 3.0)));
    }

    #[test]
    fn noiseless_circle_returns_to_start() {
        let ws = open_workspace();
        let profile = InputProfile::Circle {
            center: [5.0, 5.0, 1.0],
            radius: 1.0,
            omega: std::f64::consts::TAU / 50.0,
            phase: 0.0,
        };
        let start = Vector3::new(6.0, 5.0, 1.0);
        let models = vec![TargetModel::driven(profile, 0.0)];
        let mut state = WorldState {
            t: 0,
            targets: vec![start],
            robots: BTreeMap::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            step_targets(&mut state, &models, &ws, &mut rng);
        }
        assert!((state.targets[0] - start).norm() < 1e-6);
    }

    #[test]
    fn process_noise_variance_matches_model() {
        let ws = Workspace {
            bounds: Rect::new([-1e4, -1e4], [1e4, 1e4]),
            obstacles: vec![],
            comm_range: 0.2,
            sense_range: 5.0,
        };
        let q = 1e-4;
        let models = vec![TargetModel::driven(InputProfile::Stationary, q)];
        let mut state = WorldState {
            t: 0,
            targets: vec![Vector3::zeros()],
            robots: BTreeMap::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut prev = state.targets[0];
        let mut sum_sq = Vector3::zeros();
        for _ in 0..n {
            step_targets(&mut state, &models, &ws, &mut rng);
            let inc = state.targets[0] - prev;
            sum_sq += inc.component_mul(&inc);
            prev = state.targets[0];
        }
        for axis in 0..3 {
            let var = sum_sq[axis] / n as f64;
            assert!(
                (var - q).abs() / q < 0.05,
                "axis {axis}: sample variance {var} vs {q}"
            );
        }
    }

    #[test]
    fn noise_never_pushes_target_through_wall() {
        // A wall spanning the whole workspace: the target must stay on its
        // side no matter how large the noise is.
        let ws = Workspace {
            obstacles: vec![Segment::new([5.0, -100.0], [5.0, 100.0])],
            ..open_workspace()
        };
        let models = vec![TargetModel::driven(InputProfile::Stationary, 0.04)];
        let mut state = WorldState {
            t: 0,
            targets: vec![Vector3::new(4.5, 5.0, 1.0)],
            robots: BTreeMap::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            step_targets(&mut state, &models, &ws, &mut rng);
            assert!(state.targets[0].x < 5.0);
        }
    }

    #[test]
    fn sensing_respects_range_and_occlusion() {
        let ws = walled_workspace();
        let mut robots = BTreeMap::new();
        robots.insert(RobotId(1), Point2::new(4.0, 5.0));
        let state = WorldState {
            t: 3,
            targets: vec![
                Vector3::new(4.0, 7.0, 0.0),  // range 2, visible
                Vector3::new(6.0, 5.0, 1.0),  // behind the wall
                Vector3::new(4.0, 10.0, 4.0), // range > 5
            ],
            robots,
        };
        let sensor = SensorModel {
            noise_scale: 0.0,
            ..SensorModel::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let recs = sense(&state, RobotId(1), &sensor, &ws, 1, &mut rng);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].target, 0);
        assert_relative_eq!(recs[0].range, 2.0, epsilon = 1e-12);
        assert_eq!(recs[0].t, 3);
    }

    #[test]
    fn geodesic_is_straight_without_obstacles() {
        let ws = open_workspace();
        let a = Point2::new(1.0, 1.0);
        let b = Point2::new(9.0, 6.0);
        let path = geodesic(&a, &b, &ws).unwrap();
        assert_eq!(path.len(), 2);
        assert_relative_eq!(polyline_length(&path), (b - a).norm(), epsilon = 1e-12);
    }

    /// Brute-force grid Dijkstra with 8-connectivity, used as an oracle for
    /// geodesic lengths. The test geometry routes diagonally, where the grid
    /// metric is exact.
    fn grid_oracle(ws: &Workspace, a: Point2<f64>, b: Point2<f64>, step: f64) -> f64 {
        let nx = ((ws.bounds.max[0] - ws.bounds.min[0]) / step).round() as usize + 1;
        let ny = ((ws.bounds.max[1] - ws.bounds.min[1]) / step).round() as usize + 1;
        let idx = |ix: usize, iy: usize| iy * nx + ix;
        let pos = |ix: usize, iy: usize| {
            Point2::new(
                ws.bounds.min[0] + ix as f64 * step,
                ws.bounds.min[1] + iy as f64 * step,
            )
        };
        let to_cell = |p: Point2<f64>| {
            (
                ((p.x - ws.bounds.min[0]) / step).round() as usize,
                ((p.y - ws.bounds.min[1]) / step).round() as usize,
            )
        };
        let (ax, ay) = to_cell(a);
        let (bx, by) = to_cell(b);
        let mut dist = vec![f64::INFINITY; nx * ny];
        let mut heap = std::collections::BinaryHeap::new();
        dist[idx(ax, ay)] = 0.0;
        heap.push((std::cmp::Reverse(ordered_float(0.0)), ax, ay));
        while let Some((std::cmp::Reverse(d), ix, iy)) = heap.pop() {
            let d = d.0;
            if d > dist[idx(ix, iy)] {
                continue;
            }
            if (ix, iy) == (bx, by) {
                return d;
            }
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let jx = ix as i64 + dx;
                    let jy = iy as i64 + dy;
                    if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                        continue;
                    }
                    let (jx, jy) = (jx as usize, jy as usize);
                    if !ws.collision_free(&pos(ix, iy), &pos(jx, jy)) {
                        continue;
                    }
                    let w = ((dx * dx + dy * dy) as f64).sqrt() * step;
                    if d + w < dist[idx(jx, jy)] {
                        dist[idx(jx, jy)] = d + w;
                        heap.push((std::cmp::Reverse(ordered_float(d + w)), jx, jy));
                    }
                }
            }
        }
        f64::INFINITY
    }

    fn ordered_float(v: f64) -> ordered::OrdF64 {
        ordered::OrdF64(v)
    }

    mod ordered {
        #[derive(PartialEq, PartialOrd)]
        pub struct OrdF64(pub f64);
        impl Eq for OrdF64 {}
        #[allow(clippy::derive_ord_xor_partial_ord)]
        impl Ord for OrdF64 {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                self.partial_cmp(other).unwrap()
            }
        }
    }

    #[test]
    fn geodesic_around_wall_matches_grid_oracle() {
        let ws = walled_workspace();
        let a = Point2::new(2.0, 5.0);
        let b = Point2::new(8.0, 5.0);
        let path = geodesic(&a, &b, &ws).unwrap();
        assert!(path.len() >= 3, "must route around the wall");
        // Every leg must be collision-free.
        for w in path.windows(2) {
            assert!(ws.collision_free(&w[0], &w[1]));
        }
        let len = polyline_length(&path);
        let oracle = grid_oracle(&ws, a, b, 0.05);
        assert!(
            (len - oracle).abs() / oracle < 0.02,
            "geodesic {len} vs grid {oracle}"
        );
    }

    #[test]
    fn enclosed_goal_has_no_path() {
        let ws = Workspace {
            obstacles: vec![
                Segment::new([4.0, 4.0], [6.0, 4.0]),
                Segment::new([6.0, 4.0], [6.0, 6.0]),
                Segment::new([6.0, 6.0], [4.0, 6.0]),
                Segment::new([4.0, 6.0], [4.0, 4.0]),
            ],
            ..open_workspace()
        };
        let a = Point2::new(1.0, 1.0);
        let b = Point2::new(5.0, 5.0);
        assert!(matches!(geodesic(&a, &b, &ws), Err(WorldError::NoPath(..))));
    }
}
