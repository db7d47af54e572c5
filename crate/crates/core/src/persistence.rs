//! Persistence kernels: object detectability and object genuity.
//!
//! Detectability is the probability that an object is currently in the
//! latent "detectable" state of a two-state Markov chain. An object that is
//! not detectable produces no detection, so consecutive misses of a
//! well-tracked object are explained by a loss of detectability rather than
//! by the object disappearing.
//!
//! Genuity is the probability that a tracked object is a real object rather
//! than a persistent false-detection source. Detector scores update it on
//! every detection; survival differs between the two classes, and two latent
//! cues (motion, change of viewpoint) shift the balance during prediction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::wrap_angle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PersistenceError {
    #[error("a miss is impossible when detectability times detection probability is 1")]
    ImpossibleMiss,
    #[error("genuine and false path weights are both zero")]
    ZeroWeights,
}

/// Lower and upper clip on the score likelihood ratio.
pub const SCORE_RATIO_MIN: f64 = 0.01;
pub const SCORE_RATIO_MAX: f64 = 99.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectabilityParams {
    pub steady_state: f64,
    /// Time for the deviation from steady state to halve.
    pub half_life_s: f64,
    /// Transition ignores the previous value (independent misses).
    #[serde(default)]
    pub stationary: bool,
    /// Detection probability of a detectable, unoccluded object.
    pub r_d_given_detectable: f64,
}

impl Default for DetectabilityParams {
    fn default() -> Self {
        Self {
            steady_state: 0.95,
            half_life_s: 0.1,
            stationary: false,
            r_d_given_detectable: 1.0,
        }
    }
}

impl DetectabilityParams {
    /// Per-step detection probability implied by the steady state.
    pub fn marginal_detection(&self) -> f64 {
        self.steady_state * self.r_d_given_detectable
    }

    /// The independent-miss model with the same marginal detection rate.
    pub fn as_independent(&self) -> Self {
        Self {
            steady_state: 1.0,
            half_life_s: self.half_life_s,
            stationary: true,
            r_d_given_detectable: self.marginal_detection(),
        }
    }

    /// Fraction of deviation from steady state that survives `dt`.
    pub fn retention(&self, dt: f64) -> f64 {
        if self.stationary {
            0.0
        } else {
            (-dt / self.half_life_s).exp2()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenuityParams {
    /// Survival probability per second of a genuine object.
    pub r_s_genuine: f64,
    /// Survival probability per second of a false object seen from a fixed viewpoint.
    pub r_s_false_base: f64,
    pub speed_threshold_mps: f64,
    /// Likelihood ratio applied once when the object is confidently moving.
    pub speed_genuity_boost: f64,
    /// Viewpoint change (radians) that halves false-object survival.
    pub viewpoint_decay_rad: f64,
}

impl Default for GenuityParams {
    fn default() -> Self {
        Self {
            r_s_genuine: 0.992,
            r_s_false_base: 0.3,
            speed_threshold_mps: 6.0,
            speed_genuity_boost: 20.0,
            viewpoint_decay_rad: 0.1,
        }
    }
}

/// Advances detectability by `dt` along the two-state chain:
/// `d' = steady + (d − steady)·2^(−dt/half_life)`.
pub fn detectability_transition(d: f64, dt: f64, p: &DetectabilityParams) -> f64 {
    let s = p.steady_state;
    (s + (d - s) * p.retention(dt)).clamp(0.0, 1.0)
}

/// Posterior detectability after a miss with effective detection probability `r_d_eff`.
pub fn detectability_on_miss(d: f64, r_d_eff: f64) -> Result<f64, PersistenceError> {
    let denom = 1.0 - d * r_d_eff;
    if denom <= 0.0 {
        return Err(PersistenceError::ImpossibleMiss);
    }
    Ok((d * (1.0 - r_d_eff) / denom).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissModel {
    /// Misses are independent across steps with probability `1 − steady·r_D`.
    Independent,
    /// Misses are driven by the detectability chain.
    Detectability,
}

/// Existence probability of a single, previously detected object after `n`
/// consecutive missed steps of length `dt`, ignoring survival and other objects.
pub fn miss_sequence_existence(r0: f64, n: usize, dt: f64, p: &DetectabilityParams, mode: MissModel) -> f64 {
    let mut r = r0;
    let mut d = 1.0;
    for _ in 0..n {
        let miss_lik = match mode {
            MissModel::Independent => 1.0 - p.marginal_detection(),
            MissModel::Detectability => {
                d = detectability_transition(d, dt, p);
                let lik = 1.0 - d * p.r_d_given_detectable;
                d = detectability_on_miss(d, p.r_d_given_detectable).unwrap_or(0.0);
                lik
            }
        };
        let num = r * miss_lik;
        let den = num + (1.0 - r);
        r = if den > 0.0 { num / den } else { 0.0 };
    }
    r
}

/// Genuine-versus-false likelihood ratio of a detector score, `s/(1−s)`
/// clipped to [`SCORE_RATIO_MIN`], [`SCORE_RATIO_MAX`].
pub fn score_likelihood_ratio(score: f64) -> f64 {
    let s = score.clamp(0.0, 1.0);
    if s >= 1.0 {
        return SCORE_RATIO_MAX;
    }
    (s / (1.0 - s)).clamp(SCORE_RATIO_MIN, SCORE_RATIO_MAX)
}

fn odds_update(g: f64, ratio: f64) -> f64 {
    let num = g * ratio;
    let den = num + (1.0 - g);
    if den <= 0.0 {
        0.0
    } else {
        (num / den).clamp(0.0, 1.0)
    }
}

/// Bayes update of genuity from one detection's score.
pub fn genuity_on_detect(g: f64, score: f64) -> f64 {
    odds_update(g, score_likelihood_ratio(score))
}

/// Normalized weight of the genuine explanation.
pub fn genuity_ratio(genuine_path_weight: f64, false_path_weight: f64) -> Result<f64, PersistenceError> {
    let total = genuine_path_weight + false_path_weight;
    if total <= 0.0 {
        return Err(PersistenceError::ZeroWeights);
    }
    Ok(genuine_path_weight / total)
}

/// Inputs of the survival model that come from a tracked component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalInputs {
    pub genuity: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    /// Whether the motion cue has already been applied to this component.
    pub motion_cue_used: bool,
    /// Bearing from the ego at the component's previous prediction.
    pub last_viewpoint: f64,
}

/// Genuity after the one-time motion cue, and whether the cue fired.
pub fn motion_cue(inputs: &SurvivalInputs, p: &GenuityParams) -> (f64, bool) {
    let confident = inputs.speed_mean.abs() - 2.0 * inputs.speed_std > p.speed_threshold_mps;
    if !inputs.motion_cue_used && confident {
        (odds_update(inputs.genuity, p.speed_genuity_boost), true)
    } else {
        (inputs.genuity, false)
    }
}

/// Per-class survival over `dt` seconds: `(genuine, false)`.
pub fn class_survival(viewpoint_change: f64, dt: f64, p: &GenuityParams) -> (f64, f64) {
    let r_gen = p.r_s_genuine.powf(dt);
    let view = (-wrap_angle(viewpoint_change).abs() / p.viewpoint_decay_rad).exp2();
    let r_false = p.r_s_false_base.powf(dt) * view;
    (r_gen.clamp(0.0, 1.0), r_false.clamp(0.0, 1.0))
}

/// Mixture survival probability `g·r_gen + (1−g)·r_false` over `dt` seconds,
/// with genuity first adjusted by the motion cue.
pub fn survival_probability(inputs: &SurvivalInputs, viewpoint_now: f64, dt: f64, p: &GenuityParams) -> f64 {
    let (g, _) = motion_cue(inputs, p);
    let (r_gen, r_false) = class_survival(viewpoint_now - inputs.last_viewpoint, dt, p);
    (g * r_gen + (1.0 - g) * r_false).clamp(0.0, 1.0)
}

/// Existence factor and updated genuity after one survival step.
pub fn genuity_after_survival(g: f64, r_gen: f64, r_false: f64) -> (f64, f64) {
    let exists = g * r_gen + (1.0 - g) * r_false;
    let g_new = if exists > 0.0 { (g * r_gen / exists).clamp(0.0, 1.0) } else { 0.0 };
    (exists.clamp(0.0, 1.0), g_new)
}
