//! Range-only extended Kalman filtering over stacked target states.
//!
//! All targets are estimated jointly: the belief stacks every target's 3D
//! position into one state vector with a single covariance matrix. Robots
//! measure the distance to a target from their ground-plane position with a
//! range-dependent noise level; updates linearize the range map at the
//! current estimate. A predicted-only mode applies the covariance update with
//! zero innovation, which is what path planning uses to score candidate
//! trajectories before any measurement exists.
//!
//! Measurement noise grows with range in three pieces: a constant near
//! branch, a linear mid branch and a constant far branch, continuous at both
//! breakpoints. Beyond the maximum sensing range no measurement is produced.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::team_graph::RobotId;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("range {0} is outside the sensing envelope")]
    OutOfSensingRange(f64),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("sensor parameters are discontinuous at a breakpoint")]
    DiscontinuousSensor,
}

/// Range-dependent measurement noise model.
///
/// `sigma` is `near_sigma` up to `break_near`, then `slope * range +
/// intercept` up to `break_far`, then `far_sigma` up to `max_range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    pub near_sigma: f64,
    pub slope: f64,
    pub intercept: f64,
    pub far_sigma: f64,
    pub break_near: f64,
    pub break_far: f64,
    pub max_range: f64,
    /// Scales the noise actually drawn when simulating measurements; the
    /// filter always assumes the unscaled model. Zero gives noiseless data.
    pub noise_scale: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            near_sigma: 0.01,
            slope: 0.045,
            intercept: -0.035,
            far_sigma: 0.1,
            break_near: 1.0,
            break_far: 3.0,
            max_range: 5.0,
            noise_scale: 1.0,
        }
    }
}

impl SensorModel {
    /// Checks continuity of the three branches at both breakpoints.
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let at_near = self.slope * self.break_near + self.intercept;
        let at_far = self.slope * self.break_far + self.intercept;
        if (at_near - self.near_sigma).abs() > 1e-12 || (at_far - self.far_sigma).abs() > 1e-12 {
            return Err(EstimatorError::DiscontinuousSensor);
        }
        Ok(())
    }

    /// Noise standard deviation at the given range. Errors outside
    /// `[0, max_range]`.
    pub fn sigma(&self, range: f64) -> Result<f64, EstimatorError> {
        if !(0.0..=self.max_range).contains(&range) {
            return Err(EstimatorError::OutOfSensingRange(range));
        }
        Ok(self.sigma_unchecked(range))
    }

    /// Noise level with the range saturated into the sensing envelope; used
    /// when evaluating the filter's noise assumption at a predicted range
    /// that may momentarily fall outside the envelope.
    pub fn sigma_saturated(&self, range: f64) -> f64 {
        self.sigma_unchecked(range.clamp(0.0, self.max_range))
    }

    fn sigma_unchecked(&self, range: f64) -> f64 {
        if range <= self.break_near {
            self.near_sigma
        } else if range < self.break_far {
            // Anchored at the near breakpoint, and excluding the far
            // breakpoint itself, so both boundary values are exact.
            self.slope * (range - self.break_near) + self.near_sigma
        } else {
            self.far_sigma
        }
    }
}

/// Nominal motion pattern generating the known input sequence of a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputProfile {
    /// No input: the target only drifts with process noise.
    Stationary,
    /// Constant input vector per step.
    Constant { u: [f64; 3] },
    /// Piecewise-linear motion through a cyclic waypoint list at a fixed
    /// speed per step, starting from the first waypoint.
    Waypoints { points: Vec<[f64; 3]>, speed: f64 },
    /// Circular motion in a horizontal plane.
    Circle {
        center: [f64; 3],
        radius: f64,
        /// Angular rate in radians per step.
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl InputProfile {
    /// Nominal position at discrete time `t` for profiles that define one.
    fn nominal(&self, t: i64) -> Option<Vector3<f64>> {
        match self {
            InputProfile::Stationary | InputProfile::Constant { .. } => None,
            InputProfile::Waypoints { points, speed } => {
                assert!(!points.is_empty(), "waypoint profile needs points");
                if points.len() == 1 {
                    return Some(Vector3::from_column_slice(&points[0]));
                }
                let pts: Vec<Vector3<f64>> = points
                    .iter()
                    .map(|p| Vector3::from_column_slice(p))
                    .collect();
                let mut leg_lengths = Vec::with_capacity(pts.len());
                let mut perimeter = 0.0;
                for i in 0..pts.len() {
                    let len = (pts[(i + 1) % pts.len()] - pts[i]).norm();
                    leg_lengths.push(len);
                    perimeter += len;
                }
                if perimeter <= 0.0 {
                    return Some(pts[0]);
                }
                let mut dist = (speed * t as f64) % perimeter;
                for i in 0..pts.len() {
                    if dist <= leg_lengths[i] {
                        let dir = if leg_lengths[i] > 0.0 {
                            (pts[(i + 1) % pts.len()] - pts[i]) / leg_lengths[i]
                        } else {
                            Vector3::zeros()
                        };
                        return Some(pts[i] + dir * dist);
                    }
                    dist -= leg_lengths[i];
                }
                Some(pts[0])
            }
            InputProfile::Circle {
                center,
                radius,
                omega,
                phase,
            } => {
                let c = Vector3::from_column_slice(center);
                let angle = phase + omega * t as f64;
                Some(c + Vector3::new(radius * angle.cos(), radius * angle.sin(), 0.0))
            }
        }
    }

    /// Input applied between times `t` and `t + 1`.
    pub fn input(&self, t: i64) -> Vector3<f64> {
        match self {
            InputProfile::Stationary => Vector3::zeros(),
            InputProfile::Constant { u } => Vector3::from_column_slice(u),
            _ => self.nominal(t + 1).unwrap() - self.nominal(t).unwrap(),
        }
    }
}

/// Linear time-invariant dynamics of one target with a known input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    /// State matrix.
    pub a: Matrix3<f64>,
    /// Input matrix.
    pub b: Matrix3<f64>,
    /// Known input sequence.
    pub profile: InputProfile,
    /// Process noise covariance per step.
    pub q: Matrix3<f64>,
}

impl TargetModel {
    /// Identity dynamics driven directly by the profile input.
    pub fn driven(profile: InputProfile, q_diag: f64) -> Self {
        TargetModel {
            a: Matrix3::identity(),
            b: Matrix3::identity(),
            profile,
            q: Matrix3::identity() * q_diag,
        }
    }

    /// One noiseless step of the nominal dynamics.
    pub fn step_mean(&self, x: &Vector3<f64>, t: i64) -> Vector3<f64> {
        self.a * x + self.b * self.profile.input(t)
    }
}

/// Joint belief over all target states at a discrete time.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub t: i64,
    /// Stacked target positions, 3 entries per target.
    pub xhat: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Belief {
    pub fn new(t: i64, xhat: DVector<f64>, cov: DMatrix<f64>) -> Self {
        assert_eq!(xhat.len(), cov.nrows());
        assert_eq!(cov.nrows(), cov.ncols());
        Belief { t, xhat, cov }
    }

    pub fn num_targets(&self) -> usize {
        self.xhat.len() / 3
    }

    pub fn target_estimate(&self, target: usize) -> Vector3<f64> {
        Vector3::new(
            self.xhat[3 * target],
            self.xhat[3 * target + 1],
            self.xhat[3 * target + 2],
        )
    }

    /// Covariance block of one target.
    pub fn target_cov(&self, target: usize) -> Matrix3<f64> {
        self.cov.fixed_view::<3, 3>(3 * target, 3 * target).into()
    }
}

/// One range measurement, identified by `(time, robot, target)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub robot: RobotId,
    pub t: i64,
    /// Ground-plane position the measurement was taken from.
    pub robot_pos: [f64; 2],
    pub target: usize,
    pub range: f64,
    /// Epoch of the segment the robot was executing when measuring; used for
    /// log pruning and propagation analysis.
    pub epoch: usize,
}

/// Chronological record identity: ordered by time, then robot, then target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub t: i64,
    pub robot: RobotId,
    pub target: usize,
}

impl MeasurementRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            t: self.t,
            robot: self.robot,
            target: self.target,
        }
    }
}

/// 3D range from a ground-plane position to a target position.
pub fn range_3d(robot_pos: &[f64; 2], target: &Vector3<f64>) -> f64 {
    let dx = target.x - robot_pos[0];
    let dy = target.y - robot_pos[1];
    let dz = target.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Advances the belief to `to_time` with the model dynamics; no measurements.
pub fn predict(belief: &Belief, models: &[TargetModel], to_time: i64) -> Belief {
    assert!(to_time >= belief.t, "prediction cannot go backwards");
    assert_eq!(belief.num_targets(), models.len());
    let mut out = belief.clone();
    while out.t < to_time {
        predict_step(&mut out, models);
    }
    out
}

/// One in-place prediction step; block structure of the stacked dynamics is
/// applied per target.
pub fn predict_step(belief: &mut Belief, models: &[TargetModel]) {
    let t = belief.t;
    let n = models.len();
    // Mean: x_a <- A_a x_a + B_a u_a(t).
    for (a, model) in models.iter().enumerate() {
        let x = belief.target_estimate(a);
        let next = model.step_mean(&x, t);
        belief.xhat[3 * a] = next.x;
        belief.xhat[3 * a + 1] = next.y;
        belief.xhat[3 * a + 2] = next.z;
    }
    // Covariance: C <- F C F^T + Q with F = blockdiag(A_a). Row and column
    // block transforms are applied separately.
    let cov = &mut belief.cov;
    for a in 0..n {
        for b in 0..n {
            let block: Matrix3<f64> = cov.fixed_view::<3, 3>(3 * a, 3 * b).into();
            let transformed = models[a].a * block * models[b].a.transpose();
            cov.fixed_view_mut::<3, 3>(3 * a, 3 * b)
                .copy_from(&transformed);
        }
        let diag: Matrix3<f64> = cov.fixed_view::<3, 3>(3 * a, 3 * a).into();
        cov.fixed_view_mut::<3, 3>(3 * a, 3 * a)
            .copy_from(&(diag + models[a].q));
    }
    belief.t += 1;
}

/// Low-level linearized update: `S = H C H^T + R`, `K = C H^T S^{-1}`,
/// `x += K v`, `C = (I - K H) C`, then symmetrization. `r_diag` holds the
/// measurement noise variances.
pub fn ekf_update_linearized(
    belief: &mut Belief,
    h: &DMatrix<f64>,
    r_diag: &DVector<f64>,
    innovation: &DVector<f64>,
) -> Result<(), EstimatorError> {
    let m = h.nrows();
    assert_eq!(r_diag.len(), m);
    assert_eq!(innovation.len(), m);
    if m == 0 {
        return Ok(());
    }
    let c = &belief.cov;
    let hc = h * c;
    let mut s = &hc * h.transpose();
    for i in 0..m {
        s[(i, i)] += r_diag[i];
    }
    let chol = s.cholesky().ok_or(EstimatorError::SingularInnovation)?;
    // K = C H^T S^{-1}; with C symmetric, K^T = S^{-1} H C.
    let k = chol.solve(&hc).transpose();
    belief.xhat += &k * innovation;
    let n = c.nrows();
    let ikh = DMatrix::identity(n, n) - &k * h;
    belief.cov = &ikh * c;
    // Symmetrize to keep the covariance numerically well behaved.
    let sym = (&belief.cov + belief.cov.transpose()) * 0.5;
    belief.cov = sym;
    Ok(())
}

/// Stacked range update at the belief's current time.
///
/// Every record contributes one row linearized at the current estimate; rows
/// with a degenerate predicted range are skipped. With `predicted_only` the
/// innovation is zeroed, so only the covariance contracts; this is the
/// planning mode where measured values do not exist yet.
pub fn update(
    belief: &mut Belief,
    records: &[MeasurementRecord],
    sensor: &SensorModel,
    predicted_only: bool,
) -> Result<(), EstimatorError> {
    let dim = belief.xhat.len();
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(records.len());
    let mut r_diag = Vec::with_capacity(records.len());
    let mut innov = Vec::with_capacity(records.len());
    for rec in records {
        assert!(rec.target < belief.num_targets());
        let est = belief.target_estimate(rec.target);
        let predicted_range = range_3d(&rec.robot_pos, &est);
        if predicted_range < 1e-9 {
            continue;
        }
        let mut row = DVector::zeros(dim);
        row[3 * rec.target] = (est.x - rec.robot_pos[0]) / predicted_range;
        row[3 * rec.target + 1] = (est.y - rec.robot_pos[1]) / predicted_range;
        row[3 * rec.target + 2] = est.z / predicted_range;
        rows.push(row);
        let sigma = sensor.sigma_saturated(predicted_range);
        r_diag.push(sigma * sigma);
        innov.push(if predicted_only {
            0.0
        } else {
            rec.range - predicted_range
        });
    }
    if rows.is_empty() {
        return Ok(());
    }
    let m = rows.len();
    let mut h = DMatrix::zeros(m, dim);
    for (i, row) in rows.iter().enumerate() {
        h.row_mut(i).copy_from(&row.transpose());
    }
    ekf_update_linearized(
        belief,
        &h,
        &DVector::from_vec(r_diag),
        &DVector::from_vec(innov),
    )
}

/// Largest eigenvalue of a symmetric 3x3 matrix, by the trigonometric
/// closed form.
pub fn sym3_max_eigenvalue(m: &Matrix3<f64>) -> f64 {
    let p1 = m[(0, 1)] * m[(0, 1)] + m[(0, 2)] * m[(0, 2)] + m[(1, 2)] * m[(1, 2)];
    if p1 == 0.0 {
        return m[(0, 0)].max(m[(1, 1)]).max(m[(2, 2)]);
    }
    let q = m.trace() / 3.0;
    let d0 = m[(0, 0)] - q;
    let d1 = m[(1, 1)] - q;
    let d2 = m[(2, 2)] - q;
    let p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p == 0.0 {
        return q;
    }
    let b = (m - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    q + 2.0 * p * phi.cos()
}

fn is_block_diagonal_3(cov: &DMatrix<f64>) -> bool {
    let n = cov.nrows();
    if !n.is_multiple_of(3) {
        return false;
    }
    for i in 0..n {
        for j in 0..n {
            if i / 3 != j / 3 && cov[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

/// Largest eigenvalue of the belief covariance.
///
/// Covariances that retain the per-target block-diagonal structure (range
/// rows never couple distinct targets) are solved block-wise; general
/// matrices fall back to a full symmetric eigendecomposition.
pub fn uncertainty(belief: &Belief) -> f64 {
    let cov = &belief.cov;
    if is_block_diagonal_3(cov) {
        let mut max = f64::NEG_INFINITY;
        for a in 0..belief.num_targets() {
            let block: Matrix3<f64> = cov.fixed_view::<3, 3>(3 * a, 3 * a).into();
            max = max.max(sym3_max_eigenvalue(&block));
        }
        max
    } else {
        cov.clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Largest eigenvalue of one target's covariance block.
pub fn target_uncertainty(belief: &Belief, target: usize) -> f64 {
    sym3_max_eigenvalue(&belief.target_cov(target))
}

/// Target indices ordered from most to least uncertain; ties broken by index.
pub fn uncertainty_ranking(belief: &Belief) -> Vec<usize> {
    let mut ranked: Vec<(usize, f64)> = (0..belief.num_targets())
        .map(|a| (a, target_uncertainty(belief, a)))
        .collect();
    ranked.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    ranked.into_iter().map(|(a, _)| a).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigma_piecewise_values() {
        let s = SensorModel::default();
        s.validate().unwrap();
        assert_eq!(s.sigma(0.5).unwrap(), 0.01);
        assert_eq!(s.sigma(1.0).unwrap(), 0.01);
        assert_eq!(s.sigma(2.0).unwrap(), 0.055);
        assert_eq!(s.sigma(3.0).unwrap(), 0.1);
        assert_eq!(s.sigma(4.0).unwrap(), 0.1);
        assert_eq!(s.sigma(5.0).unwrap(), 0.1);
        assert!(matches!(
            s.sigma(5.1),
            Err(EstimatorError::OutOfSensingRange(_))
        ));
        assert!(matches!(
            s.sigma(-0.1),
            Err(EstimatorError::OutOfSensingRange(_))
        ));
    }

    #[test]
    fn sigma_is_continuous_at_breakpoints() {
        let s = SensorModel::default();
        for (at, expect) in [(1.0, 0.01), (3.0, 0.1)] {
            let below = s.sigma(at - 1e-12).unwrap();
            let above = s.sigma(at + 1e-12).unwrap();
            assert!((below - expect).abs() < 1e-12);
            assert!((above - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn discontinuous_sensor_is_rejected() {
        let s = SensorModel {
            far_sigma: 0.2,
            ..SensorModel::default()
        };
        assert_eq!(s.validate(), Err(EstimatorError::DiscontinuousSensor));
    }

    fn static_belief(n: usize, var: f64) -> Belief {
        Belief::new(
            0,
            DVector::zeros(3 * n),
            DMatrix::identity(3 * n, 3 * n) * var,
        )
    }

    #[test]
    fn predict_accumulates_process_noise() {
        let models = vec![TargetModel::driven(InputProfile::Stationary, 1e-4)];
        let b = static_belief(1, 0.25);
        let out = predict(&b, &models, 10);
        assert_eq!(out.t, 10);
        assert_relative_eq!(out.cov[(0, 0)], 0.25 + 10.0 * 1e-4, epsilon = 1e-12);
    }

    #[test]
    fn predict_moves_mean_with_input() {
        let models = vec![TargetModel::driven(
            InputProfile::Constant { u: [0.1, 0.0, 0.0] },
            0.0,
        )];
        let b = static_belief(1, 0.0);
        let out = predict(&b, &models, 5);
        assert_relative_eq!(out.xhat[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn circle_profile_input_telescopes_over_a_period() {
        let profile = InputProfile::Circle {
            center: [2.0, 3.0, 1.0],
            radius: 0.5,
            omega: std::f64::consts::TAU / 40.0,
            phase: 0.3,
        };
        let mut pos = profile.nominal(0).unwrap();
        for t in 0..40 {
            pos += profile.input(t);
        }
        assert_relative_eq!(
            (pos - profile.nominal(0).unwrap()).norm(),
            0.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn waypoint_profile_walks_the_polyline() {
        let profile = InputProfile::Waypoints {
            points: vec![
                [0.0, 0.0, 1.0],
                [1.0, 0.0, 1.0],
                [1.0, 1.0, 1.0],
                [0.0, 1.0, 1.0],
            ],
            speed: 0.5,
        };
        // Perimeter 4.0 at speed 0.5: back at the start every 8 steps.
        let mut pos = profile.nominal(0).unwrap();
        for t in 0..8 {
            pos += profile.input(t);
        }
        assert_relative_eq!(
            (pos - profile.nominal(0).unwrap()).norm(),
            0.0,
            epsilon = 1e-9
        );
    }

    fn record(robot: u32, t: i64, pos: [f64; 2], target: usize, range: f64) -> MeasurementRecord {
        MeasurementRecord {
            robot: RobotId(robot),
            t,
            robot_pos: pos,
            target,
            range,
            epoch: 1,
        }
    }

    #[test]
    fn update_reduces_uncertainty() {
        // A single range row contracts variance along the range gradient;
        // the trace must shrink and no eigenvalue may grow.
        let sensor = SensorModel::default();
        let mut b = Belief::new(
            0,
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
            DMatrix::identity(3, 3) * 0.25,
        );
        let before = b.cov.trace();
        update(&mut b, &[record(1, 0, [1.0, 0.5], 0, 1.1)], &sensor, false).unwrap();
        assert!(b.cov.trace() < before);
        assert!(uncertainty(&b) <= 0.25 + 1e-12);
    }

    #[test]
    fn predicted_only_update_keeps_mean() {
        let sensor = SensorModel::default();
        let mut b = Belief::new(
            0,
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
            DMatrix::identity(3, 3) * 0.25,
        );
        let mean_before = b.xhat.clone();
        let trace_before = b.cov.trace();
        update(&mut b, &[record(1, 0, [0.5, 0.5], 0, 0.0)], &sensor, true).unwrap();
        assert_eq!(b.xhat, mean_before);
        assert!(b.cov.trace() < trace_before);
    }

    #[test]
    fn huge_noise_leaves_covariance_unchanged() {
        // An (almost) uninformative measurement must not move the belief.
        let mut b = Belief::new(0, DVector::zeros(3), DMatrix::identity(3, 3) * 0.25);
        let h = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let r = DVector::from_vec(vec![1e12]);
        let innov = DVector::from_vec(vec![0.3]);
        ekf_update_linearized(&mut b, &h, &r, &innov).unwrap();
        assert_relative_eq!(b.cov[(0, 0)], 0.25, epsilon = 1e-6);
    }

    #[test]
    fn concurrent_batch_equals_sequential_scalar_updates() {
        // Two simultaneous measurements of the same target from different
        // robots, with innovations pinned to zero so the linearization point
        // stays fixed: the stacked update must equal two scalar updates.
        let sensor = SensorModel::default();
        let recs = [
            record(1, 0, [0.0, 0.0], 0, 0.0),
            record(2, 0, [2.0, 0.0], 0, 0.0),
        ];
        let start = Belief::new(
            0,
            DVector::from_vec(vec![1.0, 0.7, 0.9]),
            DMatrix::identity(3, 3) * 0.25,
        );

        let mut batch = start.clone();
        update(&mut batch, &recs, &sensor, true).unwrap();

        let mut seq = start.clone();
        update(&mut seq, &recs[..1], &sensor, true).unwrap();
        update(&mut seq, &recs[1..], &sensor, true).unwrap();

        assert_relative_eq!(batch.cov.norm(), seq.cov.norm(), epsilon = 1e-9);
        assert!((&batch.cov - &seq.cov).abs().max() < 1e-9);
    }

    #[test]
    fn sequential_ekf_matches_batch_least_squares_on_linear_system() {
        // Fully linear measurement model (identity observation rows): the
        // EKF reduces to a Kalman filter whose posterior must match the
        // closed-form information fusion of all measurements.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 6;
        let prior_var = 0.5;
        let x0 = DVector::from_fn(dim, |_, _| rng.random::<f64>());
        let mut b = Belief::new(0, x0.clone(), DMatrix::identity(dim, dim) * prior_var);

        let mut info = DMatrix::identity(dim, dim) / prior_var;
        let mut info_vec = info.clone() * &x0;
        for k in 0..25 {
            let i = k % dim;
            let mut h = DMatrix::zeros(1, dim);
            h[(0, i)] = 1.0;
            let var = 0.01 + 0.005 * (k as f64);
            let y = rng.random::<f64>() * 2.0;
            let innov = DVector::from_vec(vec![y - b.xhat[i]]);
            ekf_update_linearized(&mut b, &h, &DVector::from_vec(vec![var]), &innov).unwrap();

            info += h.transpose() * &h / var;
            info_vec += h.transpose() * DVector::from_vec(vec![y]) / var;
        }
        let cov_batch = info.try_inverse().unwrap();
        let x_batch = &cov_batch * info_vec;
        assert!((&b.xhat - &x_batch).abs().max() < 1e-9);
        assert!((&b.cov - &cov_batch).abs().max() < 1e-9);
    }

    /// Power iteration oracle for the largest eigenvalue.
    fn power_iteration_max_eig(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            let w = m * &v;
            let next = w.norm();
            v = w / next;
            if (next - lambda).abs() < 1e-14 {
                return next;
            }
            lambda = next;
        }
        lambda
    }

    #[test]
    fn uncertainty_matches_power_iteration_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = 9;
            let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let spd = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
            let b = Belief::new(0, DVector::zeros(n), spd.clone());
            assert_relative_eq!(
                uncertainty(&b),
                power_iteration_max_eig(&spd),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn uncertainty_of_scaled_identity() {
        let b = static_belief(8, 0.25);
        assert_relative_eq!(uncertainty(&b), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn block_fast_path_matches_dense_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n_targets = 4;
        let mut cov = DMatrix::zeros(3 * n_targets, 3 * n_targets);
        for a in 0..n_targets {
            let m = Matrix3::from_fn(|_, _| rng.random::<f64>() - 0.5);
            let spd = m * m.transpose() + Matrix3::identity() * 0.05;
            cov.fixed_view_mut::<3, 3>(3 * a, 3 * a).copy_from(&spd);
        }
        let b = Belief::new(0, DVector::zeros(3 * n_targets), cov.clone());
        let dense = cov
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(uncertainty(&b), dense, epsilon = 1e-10);
    }

    #[test]
    fn updates_preserve_block_diagonal_structure() {
        let sensor = SensorModel::default();
        let mut b = static_belief(3, 0.25);
        b.xhat = DVector::from_vec(vec![1.0, 1.0, 1.0, 4.0, 4.0, 1.0, 7.0, 1.0, 1.0]);
        let recs = [
            record(1, 0, [0.5, 0.5], 0, 1.0),
            record(1, 0, [4.2, 4.2], 1, 0.9),
            record(2, 0, [0.4, 0.6], 0, 1.1),
        ];
        update(&mut b, &recs, &sensor, false).unwrap();
        assert!(is_block_diagonal_3(&b.cov));
        let models = vec![TargetModel::driven(InputProfile::Stationary, 1e-4); 3];
        let out = predict(&b, &models, 3);
        assert!(is_block_diagonal_3(&out.cov));
    }

    #[test]
    fn ranking_orders_targets_by_block_uncertainty() {
        let mut b = static_belief(3, 0.1);
        b.cov[(3, 3)] = 0.9;
        b.cov[(8, 8)] = 0.5;
        assert_eq!(uncertainty_ranking(&b), vec![1, 2, 0]);
        assert_relative_eq!(target_uncertainty(&b, 1), 0.9, epsilon = 1e-12);
    }
}
