//! Constant-velocity Kalman filter over ground-plane box centroids.
//!
//! State is (cx, cy, vx, vy). Prediction applies exact constant-velocity
//! kinematics; the update corrects position against a measured centroid
//! with measurement model H = [I2 | 0].

use nalgebra::{Matrix2, Matrix4, Matrix4x2, Matrix2x4, Vector2, Vector4};

/// Noise configuration for the filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanParams {
    /// Process noise variance added to each position component per step.
    pub process_position_var: f64,
    /// Process noise variance added to each velocity component per step.
    pub process_velocity_var: f64,
    /// Measurement noise variance per centroid component.
    pub measurement_var: f64,
    /// Velocity variance for a freshly spawned track.
    pub initial_velocity_var: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        // Centroid measurements from dense returns are far more precise
        // than the constant-velocity motion assumption.
        Self {
            process_position_var: 0.01,
            process_velocity_var: 1.0,
            measurement_var: 0.04,
            initial_velocity_var: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    /// (cx, cy, vx, vy) in meters and meters/second.
    pub state: Vector4<f64>,
    /// Symmetric positive semi-definite covariance.
    pub covariance: Matrix4<f64>,
}

impl KalmanState {
    /// Spawns a state at a measured centroid with zero velocity and an
    /// uninformative velocity prior.
    pub fn new_track(centroid: Vector2<f64>, params: &KalmanParams) -> Self {
        let mut covariance = Matrix4::zeros();
        covariance[(0, 0)] = params.measurement_var;
        covariance[(1, 1)] = params.measurement_var;
        covariance[(2, 2)] = params.initial_velocity_var;
        covariance[(3, 3)] = params.initial_velocity_var;
        Self {
            state: Vector4::new(centroid.x, centroid.y, 0.0, 0.0),
            covariance,
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.state[0], self.state[1])
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.state[2], self.state[3])
    }

    fn symmetrize(&mut self) {
        self.covariance = (self.covariance + self.covariance.transpose()) * 0.5;
    }
}

fn transition(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

fn process_noise(params: &KalmanParams) -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::new(
        params.process_position_var,
        params.process_position_var,
        params.process_velocity_var,
        params.process_velocity_var,
    ))
}

fn measurement_matrix() -> Matrix2x4<f64> {
    let mut h = Matrix2x4::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h
}

/// Propagates the state by dt seconds under the constant-velocity model.
pub fn kalman_predict(s: &KalmanState, dt: f64, params: &KalmanParams) -> KalmanState {
    let f = transition(dt);
    let mut out = KalmanState {
        state: f * s.state,
        covariance: f * s.covariance * f.transpose() + process_noise(params),
    };
    out.symmetrize();
    out
}

/// Corrects the state against a measured centroid.
pub fn kalman_update(
    s: &KalmanState,
    measurement: Vector2<f64>,
    params: &KalmanParams,
) -> KalmanState {
    let h = measurement_matrix();
    let r = Matrix2::from_diagonal(&Vector2::new(params.measurement_var, params.measurement_var));
    let innovation = measurement - h * s.state;
    let innovation_cov = h * s.covariance * h.transpose() + r;
    let inv = innovation_cov
        .try_inverse()
        .expect("innovation covariance is PD: R has positive diagonal");
    let gain: Matrix4x2<f64> = s.covariance * h.transpose() * inv;
    // Joseph form keeps the posterior covariance symmetric PSD even when
    // the gain is numerically imperfect.
    let identity = Matrix4::identity();
    let a = identity - gain * h;
    let mut out = KalmanState {
        state: s.state + gain * innovation,
        covariance: a * s.covariance * a.transpose() + gain * r * gain.transpose(),
    };
    out.symmetrize();
    out
}
