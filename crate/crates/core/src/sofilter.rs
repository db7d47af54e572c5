//! Single-object Gaussian filtering for a rectangle moving with constant
//! turn rate and velocity.
//!
//! State layout: `[x, y, yaw, length, width, speed, yaw_rate]`.
//! Measurements observe the first five entries.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, OrientedRect};

pub const STATE_DIM: usize = 7;
pub const MEAS_DIM: usize = 5;

pub type StateVec = SVector<f64, STATE_DIM>;
pub type StateCov = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type MeasVec = SVector<f64, MEAS_DIM>;
pub type MeasCov = SMatrix<f64, MEAS_DIM, MEAS_DIM>;

pub const IX: usize = 0;
pub const IY: usize = 1;
pub const IYAW: usize = 2;
pub const ILEN: usize = 3;
pub const IWID: usize = 4;
pub const ISPEED: usize = 5;
pub const IYAWRATE: usize = 6;

/// Floor applied to length and width means after an update.
pub const SHAPE_FLOOR: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("negative time step {0}")]
    NegativeDt(f64),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("covariance is not positive semi-definite")]
    NotPsd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicState {
    pub mean: StateVec,
    pub covariance: StateCov,
}

impl KinematicState {
    pub fn new(mean: StateVec, covariance: StateCov) -> Self {
        Self { mean, covariance }
    }

    pub fn rect(&self) -> OrientedRect {
        OrientedRect {
            cx: self.mean[IX],
            cy: self.mean[IY],
            yaw: wrap_angle(self.mean[IYAW]),
            length: self.mean[ILEN].max(1e-6),
            width: self.mean[IWID].max(1e-6),
        }
    }

    pub fn speed(&self) -> f64 {
        self.mean[ISPEED]
    }

    pub fn yaw_rate(&self) -> f64 {
        self.mean[IYAWRATE]
    }

    /// Trace of the planar position covariance.
    pub fn position_spread(&self) -> f64 {
        self.covariance[(IX, IX)] + self.covariance[(IY, IY)]
    }
}

/// A single detection: footprint, detector confidence and measurement noise
/// over `(x, y, yaw, length, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub rect: OrientedRect,
    pub score: f64,
    pub noise: MeasCov,
}

impl Detection {
    pub fn measurement(&self) -> MeasVec {
        MeasVec::new(self.rect.cx, self.rect.cy, self.rect.yaw, self.rect.length, self.rect.width)
    }
}

/// Process-noise intensities (variance per second) for each state entry,
/// plus exponential decay rates (1/s) pulling speed and yaw rate toward 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    pub process_noise: [f64; STATE_DIM],
    pub speed_decay_per_s: f64,
    pub yaw_rate_decay_per_s: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            process_noise: [0.2, 0.2, 0.05, 0.01, 0.01, 4.0, 0.2],
            speed_decay_per_s: 0.02,
            yaw_rate_decay_per_s: 0.2,
        }
    }
}

impl MotionParams {
    /// Noise-free, decay-free dynamics.
    pub fn noiseless() -> Self {
        Self {
            process_noise: [0.0; STATE_DIM],
            speed_decay_per_s: 0.0,
            yaw_rate_decay_per_s: 0.0,
        }
    }
}

/// Deterministic CTRV transition of a mean vector over `dt`.
pub fn propagate_mean(mean: &StateVec, dt: f64, params: &MotionParams) -> StateVec {
    let mut out = *mean;
    let (x, y, yaw, v, w) = (mean[IX], mean[IY], mean[IYAW], mean[ISPEED], mean[IYAWRATE]);
    if w.abs() > 1e-9 {
        let yaw1 = yaw + w * dt;
        out[IX] = x + v / w * (yaw1.sin() - yaw.sin());
        out[IY] = y + v / w * (yaw.cos() - yaw1.cos());
        out[IYAW] = yaw1;
    } else {
        out[IX] = x + v * dt * yaw.cos();
        out[IY] = y + v * dt * yaw.sin();
        out[IYAW] = yaw + w * dt;
    }
    out[ISPEED] = v * (-params.speed_decay_per_s * dt).exp();
    out[IYAWRATE] = w * (-params.yaw_rate_decay_per_s * dt).exp();
    out
}

const UT_LAMBDA: f64 = 1.0;

fn sqrt_psd(cov: &StateCov, scale: f64) -> Result<StateCov, FilterError> {
    let sym = 0.5 * (cov + cov.transpose()) * scale;
    if let Some(ch) = sym.cholesky() {
        return Ok(ch.l());
    }
    // Fall back to a symmetric eigen square root, clipping tiny negatives.
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&e| e < -1e-9 * scale.max(1.0)) {
        return Err(FilterError::NotPsd);
    }
    let d = StateCov::from_diagonal(&eig.eigenvalues.map(|e| e.max(0.0).sqrt()));
    Ok(eig.eigenvectors * d)
}

/// Propagates the state over `dt` seconds.
///
/// The mean follows [`propagate_mean`]. The covariance is the sigma-point
/// second moment taken about that mean, plus additive process noise scaled by
/// `dt`.
pub fn predict(state: &KinematicState, dt: f64, params: &MotionParams) -> Result<KinematicState, FilterError> {
    if dt < 0.0 || !dt.is_finite() {
        return Err(FilterError::NegativeDt(dt));
    }
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let n = STATE_DIM as f64;
    let root = sqrt_psd(&state.covariance, n + UT_LAMBDA)?;
    let mean = propagate_mean(&state.mean, dt, params);
    let w0 = UT_LAMBDA / (n + UT_LAMBDA);
    let wi = 0.5 / (n + UT_LAMBDA);

    let mut cov = StateCov::zeros();
    let mut accumulate = |sigma: &StateVec, w: f64| {
        let mut d = propagate_mean(sigma, dt, params) - mean;
        d[IYAW] = wrap_angle(d[IYAW]);
        cov += w * d * d.transpose();
    };
    accumulate(&state.mean, w0);
    for i in 0..STATE_DIM {
        let col: StateVec = root.column(i).into();
        accumulate(&(state.mean + col), wi);
        accumulate(&(state.mean - col), wi);
    }
    for i in 0..STATE_DIM {
        cov[(i, i)] += params.process_noise[i] * dt;
    }
    let cov = 0.5 * (cov + cov.transpose());
    Ok(KinematicState::new(mean, cov))
}

fn measurement_matrix() -> SMatrix<f64, MEAS_DIM, STATE_DIM> {
    let mut h = SMatrix::<f64, MEAS_DIM, STATE_DIM>::zeros();
    for i in 0..MEAS_DIM {
        h[(i, i)] = 1.0;
    }
    h
}

#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub state: KinematicState,
    /// Log marginal density of the measurement under the prior.
    pub log_likelihood: f64,
    /// Squared Mahalanobis distance of the innovation.
    pub mahalanobis_sq: f64,
}

/// Squared Mahalanobis distance of the detection centre using only the
/// position block. Never exceeds the full innovation distance.
pub fn position_mahalanobis_sq(state: &KinematicState, det: &Detection) -> f64 {
    let p = &state.covariance;
    let a = p[(0, 0)] + det.noise[(0, 0)];
    let b = p[(0, 1)] + det.noise[(0, 1)];
    let d = p[(1, 1)] + det.noise[(1, 1)];
    let det2 = a * d - b * b;
    if det2 <= 0.0 {
        return 0.0;
    }
    let dx = det.rect.cx - state.mean[0];
    let dy = det.rect.cy - state.mean[1];
    (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det2
}

/// Innovation statistics without forming the posterior.
pub fn innovation(state: &KinematicState, det: &Detection) -> Result<(f64, f64), FilterError> {
    let h = measurement_matrix();
    let s = h * state.covariance * h.transpose() + det.noise;
    let s = 0.5 * (s + s.transpose());
    let chol = s.cholesky().ok_or(FilterError::SingularInnovation)?;
    let mut innov = det.measurement() - h * state.mean;
    innov[2] = wrap_angle(innov[2]);
    let maha = innov.dot(&chol.solve(&innov));
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_likelihood = -0.5 * (maha + log_det + MEAS_DIM as f64 * (2.0 * std::f64::consts::PI).ln());
    Ok((maha, log_likelihood))
}

/// Kalman update against one detection, with the yaw innovation wrapped.
pub fn update(state: &KinematicState, det: &Detection) -> Result<UpdateOutcome, FilterError> {
    let h = measurement_matrix();
    let p = &state.covariance;
    let s = h * p * h.transpose() + det.noise;
    let s = 0.5 * (s + s.transpose());
    let chol = s.cholesky().ok_or(FilterError::SingularInnovation)?;

    let mut innov = det.measurement() - h * state.mean;
    innov[2] = wrap_angle(innov[2]);

    let s_inv_innov = chol.solve(&innov);
    let maha = innov.dot(&s_inv_innov);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_likelihood = -0.5 * (maha + log_det + MEAS_DIM as f64 * (2.0 * std::f64::consts::PI).ln());

    // K = P Hᵀ S⁻¹
    let pht = p * h.transpose();
    let gain = chol.solve(&pht.transpose()).transpose();
    let mut mean = state.mean + gain * innov;
    mean[IYAW] = wrap_angle(mean[IYAW]);
    mean[ILEN] = mean[ILEN].max(SHAPE_FLOOR);
    mean[IWID] = mean[IWID].max(SHAPE_FLOOR);

    // Joseph form keeps the result symmetric PSD.
    let ikh = StateCov::identity() - gain * h;
    let cov = ikh * p * ikh.transpose() + gain * det.noise * gain.transpose();
    let cov = 0.5 * (cov + cov.transpose());

    Ok(UpdateOutcome {
        state: KinematicState::new(mean, cov),
        log_likelihood,
        mahalanobis_sq: maha,
    })
}

/// Mean footprint after `horizon` seconds, propagating in steps of `step`.
pub fn predict_horizon(state: &KinematicState, horizon: f64, step: f64, params: &MotionParams) -> Result<OrientedRect, FilterError> {
    if horizon < 0.0 || !horizon.is_finite() {
        return Err(FilterError::NegativeDt(horizon));
    }
    if step <= 0.0 || !step.is_finite() {
        return Err(FilterError::NegativeDt(step));
    }
    let mut mean = state.mean;
    let mut remaining = horizon;
    while remaining > 1e-12 {
        let dt = if remaining < step * (1.0 + 1e-9) { remaining } else { step };
        mean = propagate_mean(&mean, dt, params);
        remaining -= dt;
    }
    Ok(KinematicState::new(mean, state.covariance).rect())
}
