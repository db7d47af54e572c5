//! Per-frame tracker loop: predict, update, prune, report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::prune_and_cap;
use crate::birthgrid::{detection_importance, BirthGrid, GridGeometry, OcclusionMask};
use crate::geometry::OrientedRect;
use crate::moupdate::{
    lineage_estimates, posterior_hypotheses, predict_step, AssociationLimits, DetectionFrame, FalseDetectionModel, HypothesisSet,
    ModelParams, NewDetectability, UpdateError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame at t={t} arrived after t={last}")]
    OutOfOrder { t: f64, last: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub geometry: GridGeometry,
    /// Initial expected number of undetected objects per tile.
    pub initial_intensity: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            geometry: GridGeometry::default(),
            initial_intensity: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationCaps {
    /// Child events per parent hypothesis.
    pub k: usize,
    pub max_hyps: usize,
    pub weight_floor: f64,
    pub existence_floor: f64,
}

impl Default for AssociationCaps {
    fn default() -> Self {
        Self {
            k: 8,
            max_hyps: 100,
            weight_floor: 1e-4,
            existence_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub model: ModelParams,
    pub grid: GridConfig,
    pub association: AssociationCaps,
    pub use_detectability: bool,
    pub use_genuity: bool,
    /// Tracks are reported when existence × genuity exceeds this.
    pub report_threshold: f64,
    /// If set, only detections in this fraction of the most important tiles are used.
    pub subselect_fraction: Option<f64>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            model: ModelParams::default(),
            grid: GridConfig::default(),
            association: AssociationCaps::default(),
            use_detectability: true,
            use_genuity: true,
            report_threshold: 0.5,
            subselect_fraction: None,
        }
    }
}

/// Which augmentation to switch off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    Detectability,
    Genuity,
}

impl TrackerConfig {
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        match ablation {
            Ablation::None => {}
            Ablation::Detectability => self.use_detectability = false,
            Ablation::Genuity => self.use_genuity = false,
        }
        self
    }

    /// Model parameters after applying the ablation flags.
    pub fn effective_model(&self) -> ModelParams {
        let mut m = self.model.clone();
        if !self.use_detectability {
            m.detectability = m.detectability.as_independent();
            m.new_detectability = NewDetectability::Fixed(1.0);
        }
        if !self.use_genuity {
            m.false_model = FalseDetectionModel::Clutter;
        }
        m
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.model.validate().map_err(PipelineError::InvalidConfig)?;
        let a = &self.association;
        if a.k == 0 || a.max_hyps == 0 {
            return Err(PipelineError::InvalidConfig("association.k and max_hyps must be positive".into()));
        }
        if !(0.0..1.0).contains(&a.weight_floor) || !(0.0..1.0).contains(&a.existence_floor) {
            return Err(PipelineError::InvalidConfig("association floors must be in [0, 1)".into()));
        }
        let g = &self.grid.geometry;
        if g.nx == 0 || g.ny == 0 || !(g.tile_size > 0.0) {
            return Err(PipelineError::InvalidConfig("grid.geometry must have positive size".into()));
        }
        if !(self.grid.initial_intensity >= 0.0) {
            return Err(PipelineError::InvalidConfig("grid.initial_intensity must be nonnegative".into()));
        }
        if let Some(f) = self.subselect_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(PipelineError::InvalidConfig("subselect_fraction must be in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// One reported track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub id: u64,
    pub rect: OrientedRect,
    pub existence: f64,
    pub genuity: f64,
    pub speed: f64,
    pub yaw_rate: f64,
}

impl TrackEntry {
    pub fn confidence(&self) -> f64 {
        self.existence * self.genuity
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    pub detections_used: usize,
    pub hypotheses: usize,
    pub components: usize,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    model: ModelParams,
    hyps: HypothesisSet,
    grid: BirthGrid,
    last_t: Option<f64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let model = cfg.effective_model();
        let grid = BirthGrid::uniform(cfg.grid.geometry, cfg.grid.initial_intensity);
        Ok(Self {
            cfg,
            model,
            hyps: HypothesisSet::empty(),
            grid,
            last_t: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn hypotheses(&self) -> &HypothesisSet {
        &self.hyps
    }

    pub fn grid(&self) -> &BirthGrid {
        &self.grid
    }

    pub fn last_time(&self) -> Option<f64> {
        self.last_t
    }

    /// Advances to the frame's time and incorporates its detections.
    ///
    /// Frames may skip timesteps; the prediction spans the gap.
    pub fn step(&mut self, frame: &DetectionFrame) -> Result<StepStats, PipelineError> {
        if let Some(last) = self.last_t {
            if !(frame.t >= last) {
                return Err(PipelineError::OutOfOrder { t: frame.t, last });
            }
            let dt = frame.t - last;
            if dt > 0.0 {
                let (h, g) = predict_step(&self.hyps, &self.grid, dt, &self.model, &frame.ego)?;
                self.hyps = h;
                self.grid = g;
            }
        }
        self.last_t = Some(frame.t);

        let mut frame = match self.cfg.subselect_fraction {
            Some(f) => self.subselect(frame, f),
            None => frame.clone(),
        };
        // The tracker's own noise model replaces whatever the source attached.
        let noise = self.model.measurement_noise();
        for d in &mut frame.detections {
            d.noise = noise;
        }
        let limits = AssociationLimits { k: self.cfg.association.k };
        let (h, g, _) = posterior_hypotheses(&self.hyps, &frame, &self.model, &self.grid, &limits)?;
        let caps = &self.cfg.association;
        self.hyps = prune_and_cap(&h, caps.max_hyps, caps.weight_floor, caps.existence_floor);
        self.grid = g;
        self.hyps.check_invariants().map_err(PipelineError::Invariant)?;
        Ok(StepStats {
            detections_used: frame.detections.len(),
            hypotheses: self.hyps.hypotheses.len(),
            components: self.hyps.components.len(),
        })
    }

    /// Restricts the frame to the most important tiles. Unselected tiles are
    /// treated as unobserved, so their undetected mass and tracks are not
    /// penalized for missing detections.
    fn subselect(&self, frame: &DetectionFrame, fraction: f64) -> DetectionFrame {
        let geom = self.grid.geometry;
        let mask = if frame.occlusion.geometry == geom {
            frame.occlusion.clone()
        } else {
            OcclusionMask::clear(geom)
        };
        let selected = detection_importance(&self.grid, &self.hyps, fraction, &mask);
        let unobserved = OcclusionMask {
            geometry: geom,
            values: selected.iter().map(|&s| if s { 0.0 } else { 1.0 }).collect(),
        };
        let detections = frame
            .detections
            .iter()
            .filter(|d| geom.tile_of(d.rect.cx, d.rect.cy).is_none_or(|i| selected[i]))
            .cloned()
            .collect();
        DetectionFrame {
            t: frame.t,
            ego: frame.ego,
            detections,
            occlusion: mask.union(&unobserved),
        }
    }

    /// Tracks whose existence × genuity exceeds `threshold`; a nonpositive
    /// threshold reports every lineage. Ordered by id.
    pub fn report(&self, threshold: f64) -> Vec<TrackEntry> {
        lineage_estimates(&self.hyps)
            .into_iter()
            .filter(|e| threshold <= 0.0 || e.existence * e.genuity > threshold)
            .map(|e| TrackEntry {
                id: e.lineage,
                rect: e.rect(),
                existence: e.existence,
                genuity: e.genuity,
                speed: e.state.speed(),
                yaw_rate: e.state.yaw_rate(),
            })
            .collect()
    }

    /// Report with the configured threshold.
    pub fn report_default(&self) -> Vec<TrackEntry> {
        self.report(self.cfg.report_threshold)
    }
}

/// Runs a whole frame sequence, returning the per-frame reports at `threshold`.
pub fn run_sequence(cfg: &TrackerConfig, frames: &[DetectionFrame], threshold: f64) -> Result<Vec<(f64, Vec<TrackEntry>)>, PipelineError> {
    let mut tracker = Tracker::new(cfg.clone())?;
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        tracker.step(f)?;
        out.push((f.t, tracker.report(threshold)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2D;
    use crate::moupdate::{Origin, TrackComponent};
    use crate::sofilter::{KinematicState, StateCov, StateVec};

    fn empty_frame(t: f64) -> DetectionFrame {
        DetectionFrame {
            t,
            ego: Pose2D::identity(),
            detections: vec![],
            occlusion: OcclusionMask::clear(GridGeometry::default()),
        }
    }

    #[test]
    fn empty_stream_only_evolves_grid() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        let before = t.grid().clone();
        for i in 0..5 {
            t.step(&empty_frame(0.1 * i as f64)).unwrap();
        }
        assert!(t.hypotheses().components.is_empty());
        assert_eq!(t.hypotheses().hypotheses.len(), 1);
        assert_ne!(t.grid(), &before);
    }

    #[test]
    fn out_of_order_frames_are_rejected() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        t.step(&empty_frame(1.0)).unwrap();
        assert!(matches!(t.step(&empty_frame(0.5)), Err(PipelineError::OutOfOrder { .. })));
    }

    fn fixture() -> Tracker {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        let mut hyps = HypothesisSet::empty();
        for (existence, genuity) in [(0.9, 0.9), (0.9, 0.4), (0.3, 1.0), (1.0, 0.6)] {
            let id = hyps.insert_new(TrackComponent {
                id: 0,
                lineage: 0,
                state: KinematicState::new(StateVec::zeros(), StateCov::identity()),
                existence,
                detectability: 1.0,
                genuity,
                last_viewpoint: 0.0,
                motion_cue_used: false,
                origin: Origin::Prior,
            });
            hyps.hypotheses[0].members.push(id);
        }
        t.hyps = hyps;
        t
    }

    #[test]
    fn report_thresholds() {
        let t = fixture();
        assert_eq!(t.report(0.0).len(), 4);
        assert!(t.report(1.0).is_empty());
        // Products are 0.81, 0.36, 0.3, 0.6.
        let ids: Vec<u64> = t.report(0.5).iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![0, 3]);
    }

    #[test]
    fn ablation_flags_change_effective_model() {
        let base = TrackerConfig::default();
        let no_det = base.clone().with_ablation(Ablation::Detectability).effective_model();
        assert_eq!(no_det.detectability.steady_state, 1.0);
        assert!(no_det.detectability.stationary);
        let no_gen = base.with_ablation(Ablation::Genuity).effective_model();
        assert_eq!(no_gen.false_model, FalseDetectionModel::Clutter);
    }

    #[test]
    fn certain_detection_configuration_is_rejected() {
        let mut cfg = TrackerConfig::default();
        cfg.model.detectability.steady_state = 1.0;
        assert!(Tracker::new(cfg).is_err());
    }
}
