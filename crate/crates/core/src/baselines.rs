//! Comparison strategies: random-rendezvous planning and an always
//! connected rigid formation with instant fusion.

use std::collections::BTreeMap;

use nalgebra::{Point2, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::estimator::{predict, uncertainty, update, Belief, MeasurementRecord, RecordKey};
use crate::geometry::point_segment_dist2;
use crate::planner::{algebraic_connectivity, plan, PlanInput, PlannerError, TimedPath};
use crate::rng::stream;
use crate::runtime::{
    walk_polyline, EventLog, PlanOutcome, RuntimeError, SimConfig, SimulationLog, StepLog,
};
use crate::team_graph::RobotId;
use crate::world::{
    geodesic, polyline_length, sense, step_targets, WorldState, GEODESIC_CLEARANCE,
};

/// Spacing of the chain formations used by the comparison strategies,
/// as a fraction of the communication range.
pub const CHAIN_SPACING: f64 = 0.75;

/// Meeting plan for the random-rendezvous strategy: a uniformly drawn
/// meeting point, a chain formation there, and shortest collision-free
/// paths walked at full speed with early arrivals waiting. Returns per
/// member waypoints plus the meeting time, or `None` when no drawn point
/// admits a formation and paths within 100 attempts.
pub fn heuristic_rendezvous(
    roots: &[(Point2<f64>, i64)],
    ws: &crate::world::Workspace,
    u_max: f64,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<TimedPath>, i64)> {
    let spacing = CHAIN_SPACING * ws.comm_range;
    'attempt: for _ in 0..100 {
        let q = Point2::new(
            rng.random_range(ws.bounds.min[0]..ws.bounds.max[0]),
            rng.random_range(ws.bounds.min[1]..ws.bounds.max[1]),
        );
        let Some(points) = crate::runtime::line_formation(q, roots.len(), spacing, ws) else {
            continue;
        };
        let mut paths = Vec::with_capacity(roots.len());
        let mut t_meet = roots.iter().map(|&(_, t)| t).max().unwrap() + 1;
        for (&(pos, t0), goal) in roots.iter().zip(&points) {
            let Ok(path) = geodesic(&pos, goal, ws) else {
                continue 'attempt;
            };
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
        return Some((waypoints, t_meet));
    }
    None
}

/// Runs the always-connected baseline: every robot keeps a fixed offset in
/// a chain formation, the formation center follows informative plans, and
/// every measurement is fused instantly by all robots. The schedule and the
/// team structure play no role; there is no information delay.
pub fn run_all_time(config: &SimConfig) -> Result<SimulationLog, RuntimeError> {
    let ids: Vec<RobotId> = config.graph.robots().collect();
    let n = ids.len();
    let spacing = CHAIN_SPACING * config.ws.comm_range;
    let centroid = Point2::from(
        ids.iter()
            .map(|id| config.starts[id].coords)
            .sum::<Vector2<f64>>()
            / n as f64,
    );

    // A fixed chain direction that is clear of obstacles at the gathering
    // point; the offsets stay rigid for the whole run.
    let mut offsets: Option<Vec<Vector2<f64>>> = None;
    for dir in [Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0)] {
        let cand: Vec<Vector2<f64>> = (0..n)
            .map(|i| dir * ((i as f64 - (n as f64 - 1.0) / 2.0) * spacing))
            .collect();
        let ok = cand.iter().all(|off| {
            let p = centroid + off;
            config.ws.bounds.contains(&p)
                && config.ws.obstacles.iter().all(|o| {
                    point_segment_dist2(&p, &o.start(), &o.end())
                        > GEODESIC_CLEARANCE * GEODESIC_CLEARANCE
                })
        });
        if ok {
            offsets = Some(cand);
            break;
        }
    }
    let offsets = offsets.ok_or_else(|| {
        RuntimeError::Internal("no clear chain formation at the start centroid".into())
    })?;

    // Gather phase: every robot walks a shortest path to its formation slot.
    let mut gather: Vec<TimedPath> = Vec::with_capacity(n);
    let mut t0 = 1i64;
    let mut paths = Vec::with_capacity(n);
    for (id, off) in ids.iter().zip(&offsets) {
        let goal = centroid + off;
        let path = geodesic(&config.starts[id], &goal, &config.ws)?;
        let total = polyline_length(&path);
        let steps = if total <= 1e-12 {
            0
        } else {
            (total / config.params.u_max - 1e-9).ceil() as i64
        };
        t0 = t0.max(steps);
        paths.push(path);
    }
    for path in &paths {
        gather.push(walk_polyline(path, config.params.u_max, 0, t0));
    }

    // The formation center's committed trajectory, one waypoint per step.
    let mut center_wp: Vec<(i64, Point2<f64>)> = vec![(t0, centroid)];
    let mut next_event = t0;
    let mut leg = 0usize;

    let prior = Belief::new(0, config.xhat0.clone(), config.cov0.clone());
    let mut oracle = prior.clone();
    let mut world = WorldState {
        t: 0,
        targets: config.targets0.clone(),
        robots: config.starts.clone(),
    };
    let mut world_rng = stream(config.seed, "world", 0, 0);
    let mut sense_rngs: BTreeMap<RobotId, ChaCha8Rng> = ids
        .iter()
        .map(|id| (*id, stream(config.seed, "sense", id.0 as u64, 0)))
        .collect();
    let mut registry: BTreeMap<RecordKey, MeasurementRecord> = BTreeMap::new();

    let mut steps: Vec<StepLog> = Vec::with_capacity(config.t_end as usize + 1);
    let mut oracle_trace: Vec<Belief> = Vec::with_capacity(config.t_end as usize + 1);
    let mut events: Vec<EventLog> = Vec::new();

    let center_at = |center_wp: &Vec<(i64, Point2<f64>)>, t: i64| -> Point2<f64> {
        let idx = (t - center_wp[0].0) as usize;
        center_wp[idx].1
    };

    for t in 0..=config.t_end {
        if t > 0 {
            step_targets(&mut world, &config.models, &config.ws, &mut world_rng);
            for (i, id) in ids.iter().enumerate() {
                let pos = if t <= t0 {
                    gather[i][(t - gather[i][0].0) as usize].1
                } else {
                    center_at(&center_wp, t) + offsets[i]
                };
                world.robots.insert(*id, pos);
            }
            let mut new_at_t: Vec<MeasurementRecord> = Vec::new();
            if t % config.params.dt == 0 {
                for id in &ids {
                    let rng = sense_rngs.get_mut(id).unwrap();
                    let recs = sense(&world, *id, &config.sensor, &config.ws, leg, rng);
                    for rec in &recs {
                        registry.insert(rec.key(), rec.clone());
                    }
                    new_at_t.extend(recs);
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

        if t == next_event {
            leg += 1;
            let positions: Vec<Point2<f64>> = ids.iter().map(|id| world.robots[id]).collect();
            let connected = algebraic_connectivity(&positions, config.ws.comm_range) > 1e-9;
            let outcome = if t >= config.t_end {
                PlanOutcome::EndOfRun
            } else {
                let center = center_at(&center_wp, t);
                let mut plan_rng = stream(config.seed, "plan", 0, leg as u64);
                let input = PlanInput {
                    ws: &config.ws,
                    models: &config.models,
                    sensor: &config.sensor,
                    params: &config.params,
                    offsets: &offsets,
                };
                match plan(
                    vec![center],
                    vec![t],
                    predict(&oracle, &config.models, t),
                    &input,
                    &mut plan_rng,
                ) {
                    Ok(res) => {
                        for &wp in res.waypoints[0].iter().skip(1) {
                            center_wp.push(wp);
                        }
                        next_event = res.t_f;
                        PlanOutcome::Rendezvous(res.relax_level)
                    }
                    Err(PlannerError::NoGoalFound) => {
                        center_wp.push((t + 1, center));
                        next_event = t + 1;
                        PlanOutcome::Regroup
                    }
                    Err(e) => return Err(e.into()),
                }
            };
            events.push(EventLog {
                t,
                team: 0,
                epoch: leg,
                members: ids.clone(),
                positions,
                belief: oracle.clone(),
                new_records: 0,
                connected,
                outcome,
            });
        }
    }

    Ok(SimulationLog {
        steps,
        oracle_trace,
        events,
        records: registry,
        propagation_violations: 0,
        t_end: config.t_end,
        period: 1,
        delay_bound: 0,
    })
}
