//! Velocity-adaptive cubature Kalman filter over the 9-dim box state
//! `[cx, cy, w, h, vx, vy, vw, vh, a]`.
//!
//! Positions/sizes are pixels, velocities pixels/frame. `a` is a scalar
//! acceleration magnitude applied along the current velocity heading; the
//! transition decays it exponentially and zeroes it outright once it drops to
//! the manoeuvre threshold, so a target that stops accelerating falls back to
//! constant-velocity motion instead of overshooting.
//!
//! The spherical-radial cubature rule propagates `2n = 18` sigma points
//! through the nonlinear transition; because the observation model is linear
//! (the first four state components), the update step reduces exactly to the
//! classic Kalman update when the acceleration channel is pinned at zero.
//! `predict_linear` / `update_linear` provide that closed-form
//! constant-velocity filter directly for baseline/ablation runs.

use nalgebra::{Cholesky, SMatrix, SVector, Vector2};
use thiserror::Error;

use crate::model::BBox;

pub const STATE_DIM: usize = 9;
pub const OBS_DIM: usize = 4;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateCov = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type ObsVector = SVector<f64, OBS_DIM>;
pub type ObsCov = SMatrix<f64, OBS_DIM, OBS_DIM>;

/// Diagonal jitter added before every Cholesky factorization so that merely
/// positive *semi*-definite covariances (e.g. a pinned acceleration channel)
/// still factor.
const CHOLESKY_JITTER: f64 = 1e-9;

/// Velocities below this are treated as "no heading": the acceleration term
/// is suppressed rather than applied along an arbitrary direction.
const MIN_SPEED: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    /// The covariance lost positive definiteness; the track should be dropped.
    #[error("covariance is not positive semi-definite")]
    CovarianceNotPSD,
    /// The innovation covariance could not be inverted.
    #[error("innovation covariance is singular")]
    SingularInnovation,
}

/// Noise scales and manoeuvre constants. All process/observation standard
/// deviations are relative to the current track height, so noise grows with
/// apparent target size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Process/observation std of the position-like states (cx, cy, w, h) as a
    /// fraction of track height.
    pub std_weight_position: f64,
    /// Process std of the velocity states as a fraction of track height.
    pub std_weight_velocity: f64,
    /// Process std of the acceleration state as a fraction of track height.
    pub std_weight_accel: f64,
    /// Accelerations at or below this magnitude are zeroed by the transition.
    pub accel_threshold: f64,
    /// Exponential decay rate of the acceleration state per frame.
    pub accel_decay_rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
            std_weight_accel: 1.0 / 160.0,
            accel_threshold: 0.1,
            accel_decay_rate: 0.1,
        }
    }
}

impl NoiseConfig {
    /// Diagonal process noise for a step of `dt` frames, scaled by track
    /// height `h`. Linear in `dt`, so `Q(0) = 0`.
    pub fn process_noise(&self, h: f64, dt: f64) -> StateCov {
        let h = h.max(1.0);
        let sp = (self.std_weight_position * h).powi(2);
        let sv = (self.std_weight_velocity * h).powi(2);
        let sa = (self.std_weight_accel * h).powi(2);
        StateCov::from_diagonal(&StateVector::from_row_slice(&[
            sp, sp, sp, sp, sv, sv, sv, sv, sa,
        ])) * dt
    }

    /// Diagonal observation noise for a box observation, scaled by height.
    pub fn observation_noise(&self, h: f64) -> ObsCov {
        let sp = (self.std_weight_position * h.max(1.0)).powi(2);
        ObsCov::from_diagonal(&ObsVector::from_row_slice(&[sp, sp, sp, sp]))
    }
}

/// Applies the manoeuvre gate to an acceleration value: magnitudes at or below
/// `accel_threshold` are zeroed, anything larger decays exponentially with
/// sign preserved.
pub fn accel_decay(a: f64, dt: f64, cfg: &NoiseConfig) -> f64 {
    if a.abs() <= cfg.accel_threshold {
        0.0
    } else {
        a * (-cfg.accel_decay_rate * dt).exp()
    }
}

/// Nonlinear state transition over `dt` frames. Acceleration acts along the
/// unit velocity heading and is suppressed when the speed is (numerically)
/// zero; the stored acceleration itself is decayed afterwards.
pub fn transition(x: &StateVector, dt: f64, cfg: &NoiseConfig) -> StateVector {
    let mut out = *x;
    let v = Vector2::new(x[4], x[5]);
    let speed = v.norm();
    let a = x[8];
    let heading = if speed >= MIN_SPEED { v / speed } else { Vector2::zeros() };

    out[0] = x[0] + x[4] * dt + 0.5 * a * heading.x * dt * dt;
    out[1] = x[1] + x[5] * dt + 0.5 * a * heading.y * dt * dt;
    out[2] = x[2] + x[6] * dt;
    out[3] = x[3] + x[7] * dt;
    out[4] = x[4] + a * heading.x * dt;
    out[5] = x[5] + a * heading.y * dt;
    out[8] = accel_decay(a, dt, cfg);
    out
}

/// Gaussian state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: StateVector,
    pub p: StateCov,
}

impl FilterState {
    /// Initializes from a first detection: zero velocities and acceleration.
    /// Each state's initial std is a multiple of its own per-frame process
    /// std (2x for observed states, 10x for the unobserved derivatives), so
    /// the unobserved states start uncertain without letting the scalar
    /// acceleration absorb the whole cold-start position transient.
    pub fn from_detection(bbox: &BBox, cfg: &NoiseConfig) -> Self {
        let mut x = StateVector::zeros();
        x[0] = bbox.cx;
        x[1] = bbox.cy;
        x[2] = bbox.w;
        x[3] = bbox.h;
        let h = bbox.h.max(1.0);
        let sp = (2.0 * cfg.std_weight_position * h).powi(2);
        let sv = (10.0 * cfg.std_weight_velocity * h).powi(2);
        let sa = (10.0 * cfg.std_weight_accel * h).powi(2);
        let p = StateCov::from_diagonal(&StateVector::from_row_slice(&[
            sp, sp, sp, sp, sv, sv, sv, sv, sa,
        ]));
        Self { x, p }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.x[0], self.x[1], self.x[2], self.x[3])
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x[0], self.x[1])
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.x[4], self.x[5])
    }

    /// Observed components of the current mean.
    pub fn observation(&self) -> ObsVector {
        ObsVector::new(self.x[0], self.x[1], self.x[2], self.x[3])
    }
}

/// The 18 equally weighted sigma points of the third-degree spherical-radial
/// cubature rule.
#[derive(Debug, Clone)]
pub struct CubatureSet {
    pub points: Vec<StateVector>,
    pub weight: f64,
}

/// Generates cubature points `mean ± sqrt(n) * S * e_i` where `S Sᵀ = cov`
/// (after jitter). Fails when the jittered covariance is still not PSD.
pub fn cubature_points(mean: &StateVector, cov: &StateCov) -> Result<CubatureSet, FilterError> {
    let jittered = cov + StateCov::identity() * CHOLESKY_JITTER;
    let chol = Cholesky::new(jittered).ok_or(FilterError::CovarianceNotPSD)?;
    let s = chol.l();
    let scale = (STATE_DIM as f64).sqrt();
    let mut points = Vec::with_capacity(2 * STATE_DIM);
    for i in 0..STATE_DIM {
        let offset = s.column(i) * scale;
        points.push(mean + offset);
    }
    for i in 0..STATE_DIM {
        let offset = s.column(i) * scale;
        points.push(mean - offset);
    }
    Ok(CubatureSet { points, weight: 1.0 / (2.0 * STATE_DIM as f64) })
}

fn symmetrize(m: &mut StateCov) {
    *m = (*m + m.transpose()) * 0.5;
}

/// Cubature prediction: propagates the sigma points through [`transition`] and
/// adds process noise scaled by the pre-step height estimate.
pub fn predict(s: &FilterState, dt: f64, cfg: &NoiseConfig) -> Result<FilterState, FilterError> {
    let set = cubature_points(&s.x, &s.p)?;
    let propagated: Vec<StateVector> = set.points.iter().map(|p| transition(p, dt, cfg)).collect();
    let mut mean = StateVector::zeros();
    for p in &propagated {
        mean += p;
    }
    mean *= set.weight;
    let mut cov = StateCov::zeros();
    for p in &propagated {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov *= set.weight;
    cov += cfg.process_noise(s.x[3], dt);
    symmetrize(&mut cov);
    Ok(FilterState { x: mean, p: cov })
}

/// Cubature measurement update with a full box observation. Returns the
/// posterior with width/height clamped to at least one pixel.
pub fn update(s: &FilterState, z: &BBox, cfg: &NoiseConfig) -> Result<FilterState, FilterError> {
    let set = cubature_points(&s.x, &s.p)?;
    let obs: Vec<ObsVector> = set
        .points
        .iter()
        .map(|p| ObsVector::new(p[0], p[1], p[2], p[3]))
        .collect();
    let mut z_mean = ObsVector::zeros();
    for z_i in &obs {
        z_mean += z_i;
    }
    z_mean *= set.weight;

    let mut p_zz = cfg.observation_noise(s.x[3]);
    let mut p_xz = SMatrix::<f64, STATE_DIM, OBS_DIM>::zeros();
    for (p_i, z_i) in set.points.iter().zip(&obs) {
        let dz = z_i - z_mean;
        p_zz += dz * dz.transpose() * set.weight;
        p_xz += (p_i - s.x) * dz.transpose() * set.weight;
    }

    let inv = Cholesky::new(p_zz)
        .ok_or(FilterError::SingularInnovation)?
        .inverse();
    let gain = p_xz * inv;
    let measured = ObsVector::new(z.cx, z.cy, z.w, z.h);
    let mut x = s.x + gain * (measured - z_mean);
    let mut p = s.p - gain * p_zz * gain.transpose();
    symmetrize(&mut p);
    x[2] = x[2].max(1.0);
    x[3] = x[3].max(1.0);
    Ok(FilterState { x, p })
}

fn linear_f(dt: f64) -> StateCov {
    let mut f = StateCov::identity();
    f[(0, 4)] = dt;
    f[(1, 5)] = dt;
    f[(2, 6)] = dt;
    f[(3, 7)] = dt;
    f
}

fn obs_matrix() -> SMatrix<f64, OBS_DIM, STATE_DIM> {
    let mut h = SMatrix::<f64, OBS_DIM, STATE_DIM>::zeros();
    for i in 0..OBS_DIM {
        h[(i, i)] = 1.0;
    }
    h
}

/// Closed-form constant-velocity prediction (acceleration ignored). Used when
/// the adaptive filter is disabled.
pub fn predict_linear(s: &FilterState, dt: f64, cfg: &NoiseConfig) -> FilterState {
    let f = linear_f(dt);
    let x = f * s.x;
    let mut p = f * s.p * f.transpose() + cfg.process_noise(s.x[3], dt);
    symmetrize(&mut p);
    FilterState { x, p }
}

/// Closed-form Kalman update, counterpart of [`predict_linear`].
pub fn update_linear(s: &FilterState, z: &BBox, cfg: &NoiseConfig) -> Result<FilterState, FilterError> {
    let h = obs_matrix();
    let innovation_cov = h * s.p * h.transpose() + cfg.observation_noise(s.x[3]);
    let inv = Cholesky::new(innovation_cov)
        .ok_or(FilterError::SingularInnovation)?
        .inverse();
    let gain = s.p * h.transpose() * inv;
    let measured = ObsVector::new(z.cx, z.cy, z.w, z.h);
    let mut x = s.x + gain * (measured - h * s.x);
    let mut p = s.p - gain * h * s.p;
    symmetrize(&mut p);
    x[2] = x[2].max(1.0);
    x[3] = x[3].max(1.0);
    Ok(FilterState { x, p })
}
