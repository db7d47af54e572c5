//! Multi-object prediction and update.
//!
//! The tracked distribution is a weighted set of global hypotheses over a
//! shared pool of components. Each component is a Bernoulli object: a
//! Gaussian kinematic state with a conditional existence probability (given
//! that its hypothesis holds), a detectability probability and a genuity
//! probability. Undetected objects live in a [`BirthGrid`].
//!
//! Per frame, every prior hypothesis is expanded into child hypotheses by
//! enumerating its highest-weight association events. The factors of an
//! event are:
//!
//! * match `(i, j)`: `r·d·r_D·N(z_j; Hx, S)·(g·L(s_j) + 1 − g)`
//! * miss `i`: `1 − r·d·r_D`
//! * birth `j`: genuine-birth term plus false-birth (or clutter) term
//!
//! where `L(s)` is the score likelihood ratio. All factors for a detection
//! are expressed relative to the score density of false detections, which
//! is common to every event.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{kbest_partitioned, AssociationError, CostMatrix};
use crate::birthgrid::{grid_predict, grid_update, BirthGrid, OcclusionMask};
use crate::geometry::{wrap_angle, OrientedRect, Pose2D};
use crate::persistence::{
    class_survival, detectability_on_miss, detectability_transition, genuity_after_survival, genuity_on_detect, genuity_ratio, motion_cue,
    score_likelihood_ratio, DetectabilityParams, GenuityParams, SurvivalInputs,
};
use crate::sofilter::{self, Detection, FilterError, KinematicState, MeasCov, MotionParams, StateCov, StateVec};

pub type ComponentId = u64;

#[derive(Debug, Error)]
pub enum UpdateError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error("all association events have zero weight")]
    ZeroTotalWeight,
}

/// Where a posterior component came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Prior,
    Missed(ComponentId),
    Matched(ComponentId, usize),
    Born(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackComponent {
    pub id: ComponentId,
    /// Stable label shared by all components descending from one birth.
    pub lineage: u64,
    pub state: KinematicState,
    /// Probability of existence given that a hypothesis containing it holds.
    pub existence: f64,
    pub detectability: f64,
    pub genuity: f64,
    pub last_viewpoint: f64,
    pub motion_cue_used: bool,
    pub origin: Origin,
}

impl TrackComponent {
    fn survival_inputs(&self) -> SurvivalInputs {
        SurvivalInputs {
            genuity: self.genuity,
            speed_mean: self.state.speed(),
            speed_std: self.state.covariance[(sofilter::ISPEED, sofilter::ISPEED)].max(0.0).sqrt(),
            motion_cue_used: self.motion_cue_used,
            last_viewpoint: self.last_viewpoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub log_weight: f64,
    /// Sorted component ids.
    pub members: Vec<ComponentId>,
}

impl Hypothesis {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    pub components: BTreeMap<ComponentId, TrackComponent>,
    pub hypotheses: Vec<Hypothesis>,
    pub next_component_id: ComponentId,
    pub next_lineage: u64,
}

impl Default for HypothesisSet {
    fn default() -> Self {
        Self::empty()
    }
}

/// `ln Σ exp(x)` with max shift.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl HypothesisSet {
    /// No components and a single empty hypothesis of weight 1.
    pub fn empty() -> Self {
        Self {
            components: BTreeMap::new(),
            hypotheses: vec![Hypothesis {
                log_weight: 0.0,
                members: Vec::new(),
            }],
            next_component_id: 0,
            next_lineage: 0,
        }
    }

    /// Adds a component with a fresh id and lineage to the pool.
    /// The caller decides which hypotheses include it.
    pub fn insert_new(&mut self, mut comp: TrackComponent) -> ComponentId {
        comp.id = self.next_component_id;
        comp.lineage = self.next_lineage;
        self.next_component_id += 1;
        self.next_lineage += 1;
        let id = comp.id;
        self.components.insert(id, comp);
        id
    }

    pub fn weights(&self) -> Vec<f64> {
        self.hypotheses.iter().map(Hypothesis::weight).collect()
    }

    pub fn normalize(&mut self) {
        let total = log_sum_exp(self.hypotheses.iter().map(|h| h.log_weight));
        if total.is_finite() {
            for h in &mut self.hypotheses {
                h.log_weight -= total;
            }
        }
    }

    pub fn marginal_existences(&self) -> HashMap<ComponentId, f64> {
        let mut out: HashMap<ComponentId, f64> = HashMap::new();
        for h in &self.hypotheses {
            let w = h.weight();
            for id in &h.members {
                *out.entry(*id).or_default() += w * self.components[id].existence;
            }
        }
        out
    }

    pub fn marginal_existence(&self, id: ComponentId) -> f64 {
        let Some(c) = self.components.get(&id) else {
            return 0.0;
        };
        self.hypotheses
            .iter()
            .filter(|h| h.members.binary_search(&id).is_ok())
            .map(|h| h.weight())
            .sum::<f64>()
            * c.existence
    }

    /// Index of the heaviest hypothesis.
    pub fn best_hypothesis(&self) -> Option<usize> {
        (0..self.hypotheses.len()).max_by(|&a, &b| {
            self.hypotheses[a]
                .log_weight
                .total_cmp(&self.hypotheses[b].log_weight)
                .then(b.cmp(&a))
        })
    }

    pub(crate) fn merge_duplicates(&mut self) {
        let mut index: HashMap<Vec<ComponentId>, usize> = HashMap::new();
        let mut merged: Vec<Hypothesis> = Vec::with_capacity(self.hypotheses.len());
        for h in self.hypotheses.drain(..) {
            match index.get(&h.members) {
                Some(&i) => {
                    let a = merged[i].log_weight;
                    merged[i].log_weight = log_sum_exp([a, h.log_weight]);
                }
                None => {
                    index.insert(h.members.clone(), merged.len());
                    merged.push(h);
                }
            }
        }
        self.hypotheses = merged;
    }

    pub(crate) fn retain_referenced(&mut self) {
        let mut used = std::collections::HashSet::new();
        for h in &self.hypotheses {
            used.extend(h.members.iter().copied());
        }
        self.components.retain(|id, _| used.contains(id));
    }

    /// Checks normalization, bounded probabilities and referential integrity.
    pub fn check_invariants(&self) -> Result<(), String> {
        let total: f64 = self.weights().iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("hypothesis weights sum to {total}"));
        }
        for h in &self.hypotheses {
            for id in &h.members {
                if !self.components.contains_key(id) {
                    return Err(format!("hypothesis references missing component {id}"));
                }
            }
            if h.members.windows(2).any(|w| w[0] >= w[1]) {
                return Err("hypothesis members not sorted and unique".into());
            }
        }
        for c in self.components.values() {
            for (name, v) in [
                ("existence", c.existence),
                ("detectability", c.detectability),
                ("genuity", c.genuity),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("component {} has {name} {v}", c.id));
                }
            }
        }
        Ok(())
    }
}

/// Initial detectability given to components created from detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewDetectability {
    SteadyState,
    Fixed(f64),
}

/// How detections not explained by tracked objects are modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FalseDetectionModel {
    /// False detections come from tracked false objects (genuity).
    Genuity,
    /// False detections are independent Poisson clutter; genuity pinned to 1.
    Clutter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub motion: MotionParams,
    pub detectability: DetectabilityParams,
    pub genuity: GenuityParams,
    pub false_model: FalseDetectionModel,
    /// Standard deviations of detection noise on (x, y, yaw, length, width).
    pub measurement_noise_std: [f64; 5],
    /// Squared Mahalanobis gate; pairs beyond it get weight 0.
    pub gate_mahalanobis_sq: f64,
    /// Expected new false objects per m² per frame (genuity model).
    pub false_birth_density: f64,
    /// Expected clutter detections per m² per frame (clutter model).
    pub clutter_density: f64,
    pub shape_prior_mean: [f64; 2],
    pub shape_prior_std: [f64; 2],
    pub birth_noise_inflation: f64,
    pub birth_speed_std: f64,
    pub birth_yaw_rate_std: f64,
    pub new_detectability: NewDetectability,
    pub use_occlusion: bool,
    /// Grid dynamics: mixing fraction per step, rim entry (objects/tile/s),
    /// survival per second of undetected objects.
    pub grid_mixing: f64,
    pub grid_entry_rate: f64,
    pub grid_survival_per_s: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            motion: MotionParams::default(),
            detectability: DetectabilityParams::default(),
            genuity: GenuityParams::default(),
            false_model: FalseDetectionModel::Genuity,
            measurement_noise_std: [0.3, 0.3, 0.1, 0.3, 0.15],
            gate_mahalanobis_sq: 25.7,
            false_birth_density: 1e-3,
            clutter_density: 1e-3,
            shape_prior_mean: [4.5, 1.8],
            shape_prior_std: [0.7, 0.25],
            birth_noise_inflation: 2.0,
            birth_speed_std: 10.0,
            birth_yaw_rate_std: 0.5,
            new_detectability: NewDetectability::SteadyState,
            use_occlusion: true,
            grid_mixing: 0.05,
            grid_entry_rate: 0.02,
            grid_survival_per_s: 0.98,
        }
    }
}

impl ModelParams {
    pub fn measurement_noise(&self) -> MeasCov {
        MeasCov::from_diagonal(&nalgebra::SVector::<f64, 5>::from_iterator(
            self.measurement_noise_std.iter().map(|s| s * s),
        ))
    }

    fn uses_genuity(&self) -> bool {
        self.false_model == FalseDetectionModel::Genuity
    }

    /// Effective detection probability of a detectable object.
    pub fn r_d_effective(&self, occluded: f64) -> f64 {
        let occ = if self.use_occlusion { occluded.clamp(0.0, 1.0) } else { 0.0 };
        self.detectability.r_d_given_detectable * (1.0 - occ)
    }

    fn new_detectability(&self) -> f64 {
        match self.new_detectability {
            NewDetectability::SteadyState => self.detectability.steady_state,
            NewDetectability::Fixed(v) => v.clamp(0.0, 1.0),
        }
    }

    /// Density of a new object's measurement over yaw and shape (per m² of position).
    fn birth_shape_density(&self, det: &Detection) -> f64 {
        let mut dens = 1.0 / (2.0 * PI);
        for (k, z) in [det.rect.length, det.rect.width].into_iter().enumerate() {
            let var = self.shape_prior_std[k].powi(2) + det.noise[(3 + k, 3 + k)];
            let e = z - self.shape_prior_mean[k];
            dens *= (-0.5 * e * e / var).exp() / (2.0 * PI * var).sqrt();
        }
        dens
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must be in [0, 1], got {v}"))
            }
        };
        unit("steady_state", self.detectability.steady_state)?;
        unit("r_d_given_detectable", self.detectability.r_d_given_detectable)?;
        unit("r_s_genuine", self.genuity.r_s_genuine)?;
        unit("r_s_false_base", self.genuity.r_s_false_base)?;
        unit("grid_mixing", self.grid_mixing)?;
        unit("grid_survival_per_s", self.grid_survival_per_s)?;
        if !self.detectability.stationary && self.detectability.half_life_s <= 0.0 {
            return Err("half_life_s must be positive".into());
        }
        if self.detectability.marginal_detection() >= 1.0 {
            return Err("steady_state * r_d_given_detectable must be below 1".into());
        }
        for (name, v) in [
            ("false_birth_density", self.false_birth_density),
            ("clutter_density", self.clutter_density),
            ("grid_entry_rate", self.grid_entry_rate),
            ("gate_mahalanobis_sq", self.gate_mahalanobis_sq),
        ] {
            if !(v >= 0.0) {
                return Err(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.measurement_noise_std.iter().any(|s| !(*s > 0.0)) {
            return Err("measurement_noise_std entries must be positive".into());
        }
        if self.genuity.viewpoint_decay_rad <= 0.0 || self.genuity.speed_genuity_boost <= 0.0 {
            return Err("viewpoint_decay_rad and speed_genuity_boost must be positive".into());
        }
        Ok(())
    }
}

/// One timestamped set of detections with the ego pose and occlusion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrame {
    pub t: f64,
    pub ego: Pose2D,
    pub detections: Vec<Detection>,
    pub occlusion: OcclusionMask,
}

/// Advances every component and the undetected-object grid by `dt`.
///
/// Component existence is multiplied by its survival probability, which is
/// equivalent to splitting each hypothesis into survive/exit children.
pub fn predict_step(
    hyps: &HypothesisSet,
    grid: &BirthGrid,
    dt: f64,
    params: &ModelParams,
    ego: &Pose2D,
) -> Result<(HypothesisSet, BirthGrid), UpdateError> {
    let mut out = hyps.clone();
    for comp in out.components.values_mut() {
        comp.state = sofilter::predict(&comp.state, dt, &params.motion)?;
        comp.detectability = detectability_transition(comp.detectability, dt, &params.detectability);
        let viewpoint = ego.bearing_to(comp.state.mean[0], comp.state.mean[1]);
        if params.uses_genuity() {
            let inputs = comp.survival_inputs();
            let (g, fired) = motion_cue(&inputs, &params.genuity);
            comp.motion_cue_used |= fired;
            let (r_gen, r_false) = class_survival(viewpoint - comp.last_viewpoint, dt, &params.genuity);
            let (factor, g_new) = genuity_after_survival(g, r_gen, r_false);
            comp.existence *= factor;
            comp.genuity = g_new;
        } else {
            comp.existence *= params.genuity.r_s_genuine.powf(dt);
            comp.genuity = 1.0;
        }
        comp.last_viewpoint = viewpoint;
    }
    let survival = params.grid_survival_per_s.powf(dt);
    let grid = grid_predict(grid, dt, params.grid_mixing, params.grid_entry_rate, survival);
    Ok((out, grid))
}

/// Association weight of `comp` with `det`; 0 outside the gate.
pub fn match_likelihood(comp: &TrackComponent, det: &Detection, params: &ModelParams, occluded: f64) -> Result<f64, UpdateError> {
    if sofilter::position_mahalanobis_sq(&comp.state, det) > params.gate_mahalanobis_sq {
        return Ok(0.0);
    }
    let (maha, log_likelihood) = sofilter::innovation(&comp.state, det)?;
    if maha > params.gate_mahalanobis_sq {
        return Ok(0.0);
    }
    let ratio = score_likelihood_ratio(det.score);
    let g = if params.uses_genuity() { comp.genuity } else { 1.0 };
    let score_factor = g * ratio + (1.0 - g);
    Ok(comp.existence * comp.detectability * params.r_d_effective(occluded) * log_likelihood.exp() * score_factor)
}

fn match_posterior(comp: &TrackComponent, det: &Detection, params: &ModelParams) -> Result<TrackComponent, UpdateError> {
    let upd = sofilter::update(&comp.state, det)?;
    let mut post = comp.clone();
    post.state = upd.state;
    post.existence = 1.0;
    post.detectability = 1.0;
    post.genuity = if params.uses_genuity() {
        genuity_on_detect(comp.genuity, det.score)
    } else {
        1.0
    };
    Ok(post)
}

/// Weight and posterior for associating `comp` with `det`.
///
/// Returns weight 0 for pairs outside the gate.
pub fn match_weight(
    comp: &TrackComponent,
    det: &Detection,
    params: &ModelParams,
    occluded: f64,
) -> Result<(f64, TrackComponent), UpdateError> {
    let w = match_likelihood(comp, det, params, occluded)?;
    Ok((w, match_posterior(comp, det, params)?))
}

/// Weight and posterior for `comp` producing no detection.
pub fn miss_weight(comp: &TrackComponent, params: &ModelParams, occluded: f64) -> (f64, TrackComponent) {
    let r_d = params.r_d_effective(occluded);
    let detect = comp.detectability * r_d;
    let w = (1.0 - comp.existence * detect).max(0.0);
    let mut post = comp.clone();
    if w > 0.0 {
        post.existence = (comp.existence * (1.0 - detect) / w).clamp(0.0, 1.0);
        post.detectability = detectability_on_miss(comp.detectability, r_d).unwrap_or(comp.detectability);
    }
    (w, post)
}

/// Genuine and false terms of the birth weight for `det`.
pub fn birth_terms(det: &Detection, grid: &BirthGrid, params: &ModelParams) -> (f64, f64) {
    let shape = params.birth_shape_density(det);
    let undetected = grid.intensity_at(det.rect.cx, det.rect.cy) / grid.geometry.tile_area();
    let r_d = params.detectability.steady_state * params.detectability.r_d_given_detectable;
    let genuine = undetected * r_d * shape * score_likelihood_ratio(det.score);
    let false_density = if params.uses_genuity() {
        params.false_birth_density
    } else {
        params.clutter_density
    };
    (genuine, false_density * shape)
}

/// Weight and new component for `det` being explained by a previously
/// untracked object.
///
/// Under the genuity model the new component certainly exists and its
/// genuity is the genuine share of the weight. Under the clutter model its
/// existence is that share and genuity is 1.
pub fn birth_weight(det: &Detection, grid: &BirthGrid, params: &ModelParams, ego: &Pose2D) -> (f64, TrackComponent) {
    let (genuine, false_term) = birth_terms(det, grid, params);
    let total = genuine + false_term;
    let share = genuity_ratio(genuine, false_term).unwrap_or(0.0);
    let (existence, genuity) = if params.uses_genuity() { (1.0, share) } else { (share, 1.0) };

    let noise = &det.noise;
    let infl = params.birth_noise_inflation;
    let mut cov = StateCov::zeros();
    cov[(0, 0)] = noise[(0, 0)] * infl;
    cov[(1, 1)] = noise[(1, 1)] * infl;
    cov[(2, 2)] = noise[(2, 2)] * infl;
    cov[(3, 3)] = noise[(3, 3)];
    cov[(4, 4)] = noise[(4, 4)];
    cov[(5, 5)] = params.birth_speed_std.powi(2);
    cov[(6, 6)] = params.birth_yaw_rate_std.powi(2);
    let r = &det.rect;
    let mean = StateVec::from_row_slice(&[r.cx, r.cy, r.yaw, r.length, r.width, 0.0, 0.0]);
    let comp = TrackComponent {
        id: 0,
        lineage: 0,
        state: KinematicState::new(mean, cov),
        existence,
        detectability: params.new_detectability(),
        genuity,
        last_viewpoint: ego.bearing_to(r.cx, r.cy),
        motion_cue_used: false,
        origin: Origin::Prior,
    };
    (total, comp)
}

#[derive(Debug, Clone)]
pub struct AssociationLimits {
    /// Child events per parent hypothesis.
    pub k: usize,
}

/// Summary of one posterior computation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateSummary {
    pub parents: usize,
    pub children: usize,
    /// Per detection, posterior probability of a genuine new object.
    pub genuine_birth_mass: Vec<f64>,
}

/// Bayes update of the hypothesis set with one frame of detections.
pub fn posterior_hypotheses(
    hyps: &HypothesisSet,
    frame: &DetectionFrame,
    params: &ModelParams,
    grid: &BirthGrid,
    limits: &AssociationLimits,
) -> Result<(HypothesisSet, BirthGrid, UpdateSummary), UpdateError> {
    let dets = &frame.detections;
    let m = dets.len();
    let occ_of = |c: &TrackComponent| frame.occlusion.at(c.state.mean[0], c.state.mean[1]);

    // Factors per prior component, shared by every hypothesis containing it.
    let mut miss: HashMap<ComponentId, (f64, TrackComponent)> = HashMap::new();
    let mut match_cost_of: HashMap<ComponentId, Vec<f64>> = HashMap::new();
    for (id, comp) in &hyps.components {
        let occ = occ_of(comp);
        miss.insert(*id, miss_weight(comp, params, occ));
        let row = dets
            .iter()
            .map(|d| match_likelihood(comp, d, params, occ).map(|w| if w > 0.0 { -w.ln() } else { f64::INFINITY }))
            .collect::<Result<Vec<_>, _>>()?;
        match_cost_of.insert(*id, row);
    }
    let births: Vec<(f64, TrackComponent)> = dets.iter().map(|d| birth_weight(d, grid, params, &frame.ego)).collect();

    let mut out = HypothesisSet {
        components: BTreeMap::new(),
        hypotheses: Vec::new(),
        next_component_id: hyps.next_component_id,
        next_lineage: hyps.next_lineage,
    };
    // Birth lineages are allocated per detection, shared across parents.
    let birth_lineage: Vec<u64> = (0..m).map(|j| out.next_lineage + j as u64).collect();
    out.next_lineage += m as u64;
    let mut created: HashMap<Origin, ComponentId> = HashMap::new();
    // Posteriors are only formed for components some hypothesis uses.
    let mut intern = |out: &mut HypothesisSet, origin: Origin, lineage: u64| -> Result<ComponentId, UpdateError> {
        if let Some(id) = created.get(&origin) {
            return Ok(*id);
        }
        let mut c = match origin {
            Origin::Matched(pid, j) => match_posterior(&hyps.components[&pid], &dets[j], params)?,
            Origin::Missed(pid) => miss[&pid].1.clone(),
            Origin::Born(j) => births[j].1.clone(),
            Origin::Prior => unreachable!("prior components are never re-interned"),
        };
        let id = out.next_component_id;
        out.next_component_id += 1;
        c.id = id;
        c.lineage = lineage;
        c.origin = origin;
        out.components.insert(id, c);
        created.insert(origin, id);
        Ok(id)
    };

    let ln = |w: f64| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
    let birth_cost: Vec<f64> = births.iter().map(|(w, _)| -ln(w.max(f64::MIN_POSITIVE))).collect();
    let mut child_births: Vec<(f64, Vec<usize>)> = Vec::new();

    for parent in &hyps.hypotheses {
        let rows = &parent.members;
        let match_cost: Vec<Vec<f64>> = rows.iter().map(|id| match_cost_of[id].clone()).collect();
        let miss_cost: Vec<f64> = rows.iter().map(|id| -ln(miss[id].0)).collect();
        let cm = CostMatrix::new(match_cost, miss_cost, birth_cost.clone())?;
        for event in kbest_partitioned(&cm, limits.k) {
            let mut members = Vec::with_capacity(rows.len() + event.births.len());
            for (row, a) in event.assignment.iter().enumerate() {
                let pid = rows[row];
                let lineage = hyps.components[&pid].lineage;
                let id = match a {
                    Some(j) => intern(&mut out, Origin::Matched(pid, *j), lineage)?,
                    None => intern(&mut out, Origin::Missed(pid), lineage)?,
                };
                members.push(id);
            }
            for &j in &event.births {
                members.push(intern(&mut out, Origin::Born(j), birth_lineage[j])?);
            }
            members.sort_unstable();
            child_births.push((parent.log_weight - event.cost, event.births.clone()));
            out.hypotheses.push(Hypothesis {
                log_weight: parent.log_weight - event.cost,
                members,
            });
        }
    }

    let total = log_sum_exp(out.hypotheses.iter().map(|h| h.log_weight));
    if !total.is_finite() {
        return Err(UpdateError::ZeroTotalWeight);
    }
    out.normalize();

    let mut genuine_birth_mass = vec![0.0; m];
    for (lw, born) in &child_births {
        let w = (lw - total).exp();
        for &j in born {
            let c = &births[j].1;
            genuine_birth_mass[j] += w * c.existence * c.genuity;
        }
    }
    out.merge_duplicates();
    out.normalize();

    let absorbed: Vec<(f64, f64, f64)> = dets
        .iter()
        .zip(&genuine_birth_mass)
        .map(|(d, &mass)| (d.rect.cx, d.rect.cy, mass))
        .collect();
    let thinning = params.detectability.steady_state * params.detectability.r_d_given_detectable;
    let mask = if params.use_occlusion {
        frame.occlusion.clone()
    } else {
        OcclusionMask::clear(frame.occlusion.geometry)
    };
    let grid = grid_update(grid, &absorbed, thinning, &mask);
    let summary = UpdateSummary {
        parents: hyps.hypotheses.len(),
        children: out.hypotheses.len(),
        genuine_birth_mass,
    };
    Ok((out, grid, summary))
}

/// Aggregated view of one lineage across hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct LineageEstimate {
    pub lineage: u64,
    pub existence: f64,
    pub genuity: f64,
    /// State of the lineage's most probable component.
    pub state: KinematicState,
}

impl LineageEstimate {
    pub fn rect(&self) -> OrientedRect {
        self.state.rect()
    }
}

/// Marginal existence and existence-weighted genuity per lineage, ordered by lineage.
pub fn lineage_estimates(hyps: &HypothesisSet) -> Vec<LineageEstimate> {
    struct Acc {
        existence: f64,
        genuine: f64,
        best: f64,
        best_id: ComponentId,
    }
    let mut acc: BTreeMap<u64, Acc> = BTreeMap::new();
    for h in &hyps.hypotheses {
        let w = h.weight();
        for id in &h.members {
            let c = &hyps.components[id];
            let mass = w * c.existence;
            let a = acc.entry(c.lineage).or_insert(Acc {
                existence: 0.0,
                genuine: 0.0,
                best: -1.0,
                best_id: *id,
            });
            a.existence += mass;
            a.genuine += mass * c.genuity;
            if mass > a.best {
                a.best = mass;
                a.best_id = *id;
            }
        }
    }
    acc.into_iter()
        .map(|(lineage, a)| LineageEstimate {
            lineage,
            existence: a.existence.clamp(0.0, 1.0),
            genuity: if a.existence > 0.0 {
                (a.genuine / a.existence).clamp(0.0, 1.0)
            } else {
                0.0
            },
            state: hyps.components[&a.best_id].state.clone(),
        })
        .collect()
}

/// Wrapped bearing change between two viewpoints.
pub fn viewpoint_change(before: f64, after: f64) -> f64 {
    wrap_angle(after - before)
}
