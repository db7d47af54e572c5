//! Synthetic scenarios with persistent detector failures.
//!
//! Misses follow a per-object two-state Markov chain (detectable or not).
//! False positives come from static world-anchored sources that live for a
//! geometric number of frames and die once the ego's bearing to them has
//! changed by more than a kill angle.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::birthgrid::{blocks_line_of_sight, occlusion_from_objects, GridGeometry, OcclusionMask};
use crate::geometry::{wrap_angle, OrientedRect, Pose2D};
use crate::moupdate::DetectionFrame;
use crate::sofilter::{Detection, MeasCov};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown preset `{name}`; available: {available}")]
    UnknownPreset { name: String, available: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionSpec {
    Stationary,
    ConstantVelocity { speed_mps: f64 },
    ConstantTurn { speed_mps: f64, yaw_rate_rps: f64 },
}

impl MotionSpec {
    fn speed(&self) -> f64 {
        match *self {
            MotionSpec::Stationary => 0.0,
            MotionSpec::ConstantVelocity { speed_mps } | MotionSpec::ConstantTurn { speed_mps, .. } => speed_mps,
        }
    }

    fn yaw_rate(&self) -> f64 {
        match *self {
            MotionSpec::ConstantTurn { yaw_rate_rps, .. } => yaw_rate_rps,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    pub motion: MotionSpec,
    #[serde(default)]
    pub birth_frame: usize,
    #[serde(default)]
    pub death_frame: Option<usize>,
    /// Frames on which the detector is forced to miss this object.
    #[serde(default)]
    pub forced_miss_frames: Vec<usize>,
    /// Overrides the detector's true-score distribution.
    #[serde(default)]
    pub fixed_score: Option<f64>,
}

fn default_length() -> f64 {
    4.5
}

fn default_width() -> f64 {
    1.8
}

/// Objects placed uniformly in the arena with random headings and speeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomObjects {
    pub count: usize,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub stationary_fraction: f64,
    pub turning_fraction: f64,
    pub max_yaw_rate_rps: f64,
}

impl Default for RandomObjects {
    fn default() -> Self {
        Self {
            count: 0,
            speed_min_mps: 2.0,
            speed_max_mps: 12.0,
            stationary_fraction: 0.2,
            turning_fraction: 0.3,
            max_yaw_rate_rps: 0.3,
        }
    }
}

/// A static false-detection source placed by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FalseSourceSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub yaw: f64,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub birth_frame: usize,
    #[serde(default)]
    pub fixed_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoSpec {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed_mps: f64,
    pub yaw_rate_rps: f64,
}

impl Default for EgoSpec {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            speed_mps: 0.0,
            yaw_rate_rps: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Self {
            x_min: -50.0,
            x_max: 50.0,
            y_min: -50.0,
            y_max: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreModel {
    Beta { alpha: f64, beta: f64 },
    Fixed { value: f64 },
}

impl ScoreModel {
    fn validate(&self, field: &str) -> Result<(), ScenarioError> {
        match *self {
            ScoreModel::Beta { alpha, beta } if !(alpha > 0.0 && beta > 0.0) => Err(invalid(field, "beta parameters must be positive")),
            ScoreModel::Fixed { value } if !(0.0..=1.0).contains(&value) => Err(invalid(field, "score must be in [0, 1]")),
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            ScoreModel::Beta { alpha, beta } => Beta::new(alpha, beta).expect("validated").sample(rng),
            ScoreModel::Fixed { value } => value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    /// Detection probability of a detectable, visible object.
    pub r_d: f64,
    pub steady_state: f64,
    pub half_life_s: f64,
    /// Misses independent across frames.
    pub stationary: bool,
    /// Standard deviations on (x, y, yaw, length, width).
    pub noise_std: [f64; 5],
    pub true_score: ScoreModel,
    pub false_score: ScoreModel,
    pub false_rate_per_frame: f64,
    pub false_mean_lifetime_frames: f64,
    pub kill_angle_rad: f64,
    pub max_range_m: f64,
    /// Objects hidden behind other objects are not detected.
    pub use_occlusion: bool,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            r_d: 1.0,
            steady_state: 0.95,
            half_life_s: 0.2,
            stationary: false,
            noise_std: [0.3, 0.3, 0.1, 0.3, 0.15],
            true_score: ScoreModel::Beta { alpha: 8.0, beta: 2.0 },
            false_score: ScoreModel::Beta { alpha: 2.0, beta: 4.0 },
            false_rate_per_frame: 0.0,
            false_mean_lifetime_frames: 5.0,
            kill_angle_rad: 0.35,
            max_range_m: 60.0,
            use_occlusion: true,
        }
    }
}

impl DetectorModel {
    pub fn noise_cov(&self) -> MeasCov {
        MeasCov::from_diagonal(&nalgebra::SVector::<f64, 5>::from_iterator(self.noise_std.iter().map(|s| s * s)))
    }

    /// Per-frame retention of the detectable bit's deviation from steady state.
    fn retention(&self, dt: f64) -> f64 {
        if self.stationary {
            0.0
        } else {
            (-dt / self.half_life_s).exp2()
        }
    }

    /// Probability of being detectable next frame given detectable now.
    pub fn p_stay_detectable(&self, dt: f64) -> f64 {
        let (pi, lambda) = (self.steady_state, self.retention(dt));
        pi + (1.0 - pi) * lambda
    }

    /// Probability of becoming detectable next frame given undetectable now.
    pub fn p_become_detectable(&self, dt: f64) -> f64 {
        self.steady_state * (1.0 - self.retention(dt))
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        for (name, v) in [("detector.r_d", self.r_d), ("detector.steady_state", self.steady_state)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, "must be in [0, 1]"));
            }
        }
        if !self.stationary && !(self.half_life_s > 0.0) {
            return Err(invalid("detector.half_life_s", "must be positive"));
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(invalid("detector.noise_std", "must be nonnegative"));
        }
        if !(self.false_rate_per_frame >= 0.0) {
            return Err(invalid("detector.false_rate_per_frame", "must be nonnegative"));
        }
        if !(self.false_mean_lifetime_frames >= 1.0) {
            return Err(invalid("detector.false_mean_lifetime_frames", "must be at least 1"));
        }
        if !(self.kill_angle_rad > 0.0) {
            return Err(invalid("detector.kill_angle_rad", "must be positive"));
        }
        if !(self.max_range_m > 0.0) {
            return Err(invalid("detector.max_range_m", "must be positive"));
        }
        self.true_score.validate("detector.true_score")?;
        self.false_score.validate("detector.false_score")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration_s: f64,
    pub timestep_s: f64,
    pub arena: Arena,
    pub ego: EgoSpec,
    pub objects: Vec<ObjectSpec>,
    pub random_objects: RandomObjects,
    pub false_sources: Vec<FalseSourceSpec>,
    pub detector: DetectorModel,
    /// Tile geometry of the occlusion masks embedded in frames.
    pub grid: GridGeometry,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            duration_s: 10.0,
            timestep_s: 0.1,
            arena: Arena::default(),
            ego: EgoSpec::default(),
            objects: vec![],
            random_objects: RandomObjects::default(),
            false_sources: vec![],
            detector: DetectorModel::default(),
            grid: GridGeometry::default(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn frame_count(&self) -> usize {
        (self.duration_s / self.timestep_s).round() as usize
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.timestep_s > 0.0) {
            return Err(invalid("timestep_s", "must be positive"));
        }
        if !(self.duration_s >= 0.0) {
            return Err(invalid("duration_s", "must be nonnegative"));
        }
        let a = &self.arena;
        if !(a.x_min < a.x_max && a.y_min < a.y_max) {
            return Err(invalid("arena", "bounds must be ordered"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.length > 0.0 && o.width > 0.0) {
                return Err(invalid(format!("objects[{i}].length"), "dimensions must be positive"));
            }
            if o.death_frame.is_some_and(|d| d <= o.birth_frame) {
                return Err(invalid(format!("objects[{i}].death_frame"), "must follow birth_frame"));
            }
            if o.fixed_score.is_some_and(|s| !(0.0..=1.0).contains(&s)) {
                return Err(invalid(format!("objects[{i}].fixed_score"), "must be in [0, 1]"));
            }
        }
        let r = &self.random_objects;
        if !(0.0 <= r.speed_min_mps && r.speed_min_mps <= r.speed_max_mps) {
            return Err(invalid("random_objects.speed_min_mps", "must be in [0, speed_max_mps]"));
        }
        if !(0.0..=1.0).contains(&r.stationary_fraction) || !(0.0..=1.0).contains(&r.turning_fraction) {
            return Err(invalid("random_objects.stationary_fraction", "fractions must be in [0, 1]"));
        }
        let g = &self.grid;
        if g.nx == 0 || g.ny == 0 || !(g.tile_size > 0.0) {
            return Err(invalid("grid", "must have positive size"));
        }
        self.detector.validate()
    }
}

/// One truth object in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub id: u64,
    pub rect: OrientedRect,
    pub speed: f64,
}

/// Ground truth of one object over its contiguous presence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrack {
    pub id: u64,
    pub birth_frame: usize,
    /// `(rect, speed)` per present frame, starting at `birth_frame`.
    pub states: Vec<(OrientedRect, f64)>,
    pub forced_miss_frames: Vec<usize>,
    pub fixed_score: Option<f64>,
}

impl TruthTrack {
    pub fn death_frame(&self) -> usize {
        self.birth_frame + self.states.len()
    }

    pub fn at(&self, frame: usize) -> Option<(OrientedRect, f64)> {
        frame.checked_sub(self.birth_frame).and_then(|k| self.states.get(k)).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub times: Vec<f64>,
    pub ego: Vec<Pose2D>,
    pub tracks: Vec<TruthTrack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFrame {
    pub t: f64,
    pub ego: Pose2D,
    pub objects: Vec<TruthObject>,
}

impl Truth {
    pub fn frame(&self, i: usize) -> TruthFrame {
        TruthFrame {
            t: self.times[i],
            ego: self.ego[i],
            objects: self
                .tracks
                .iter()
                .filter_map(|tr| tr.at(i).map(|(rect, speed)| TruthObject { id: tr.id, rect, speed }))
                .collect(),
        }
    }

    pub fn frames(&self) -> Vec<TruthFrame> {
        (0..self.times.len()).map(|i| self.frame(i)).collect()
    }
}

// Stream layout under one master seed.
const STREAM_LAYOUT: u64 = 1;
const STREAM_FALSE_SPAWN: u64 = 2;
const STREAM_OBJECT_BASE: u64 = 1 << 20;
const STREAM_SOURCE_BASE: u64 = 1 << 40;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Exact constant-turn-rate step.
fn advance(x: f64, y: f64, yaw: f64, speed: f64, yaw_rate: f64, dt: f64) -> (f64, f64, f64) {
    if yaw_rate.abs() < 1e-9 {
        (x + speed * yaw.cos() * dt, y + speed * yaw.sin() * dt, yaw)
    } else {
        let yaw1 = yaw + yaw_rate * dt;
        let k = speed / yaw_rate;
        (x + k * (yaw1.sin() - yaw.sin()), y + k * (yaw.cos() - yaw1.cos()), yaw1)
    }
}

/// Mirrors a position that left the arena back inside, turning the heading.
fn reflect(arena: &Arena, mut x: f64, mut y: f64, mut yaw: f64) -> (f64, f64, f64) {
    if x < arena.x_min {
        x = 2.0 * arena.x_min - x;
        yaw = PI - yaw;
    } else if x > arena.x_max {
        x = 2.0 * arena.x_max - x;
        yaw = PI - yaw;
    }
    if y < arena.y_min {
        y = 2.0 * arena.y_min - y;
        yaw = -yaw;
    } else if y > arena.y_max {
        y = 2.0 * arena.y_max - y;
        yaw = -yaw;
    }
    (
        x.clamp(arena.x_min, arena.x_max),
        y.clamp(arena.y_min, arena.y_max),
        wrap_angle(yaw),
    )
}

fn random_specs(cfg: &ScenarioConfig) -> Vec<ObjectSpec> {
    let r = &cfg.random_objects;
    let a = &cfg.arena;
    let mut rng = stream(cfg.seed, STREAM_LAYOUT);
    (0..r.count)
        .map(|_| {
            let x = rng.random_range(a.x_min..=a.x_max);
            let y = rng.random_range(a.y_min..=a.y_max);
            let yaw = rng.random_range(-PI..PI);
            let speed = rng.random_range(r.speed_min_mps..=r.speed_max_mps);
            let u: f64 = rng.random();
            let motion = if u < r.stationary_fraction {
                MotionSpec::Stationary
            } else if u < r.stationary_fraction + r.turning_fraction {
                let w = rng.random_range(-r.max_yaw_rate_rps..=r.max_yaw_rate_rps);
                MotionSpec::ConstantTurn {
                    speed_mps: speed,
                    yaw_rate_rps: w,
                }
            } else {
                MotionSpec::ConstantVelocity { speed_mps: speed }
            };
            ObjectSpec {
                x,
                y,
                yaw,
                length: rng.random_range(3.8..5.2),
                width: rng.random_range(1.6..2.0),
                motion,
                birth_frame: 0,
                death_frame: None,
                forced_miss_frames: vec![],
                fixed_score: None,
            }
        })
        .collect()
}

/// Integrates the ego and all objects. Frame `i` is at `t = (i + 1)·dt`.
pub fn generate_truth(cfg: &ScenarioConfig) -> Result<Truth, ScenarioError> {
    cfg.validate()?;
    let n = cfg.frame_count();
    let dt = cfg.timestep_s;
    let times: Vec<f64> = (0..n).map(|i| (i + 1) as f64 * dt).collect();

    let e = &cfg.ego;
    let (mut ex, mut ey, mut eh) = (e.x, e.y, e.heading);
    let mut ego = Vec::with_capacity(n);
    for _ in 0..n {
        (ex, ey, eh) = advance(ex, ey, eh, e.speed_mps, e.yaw_rate_rps, dt);
        ego.push(Pose2D::new(ex, ey, eh));
    }

    let specs: Vec<ObjectSpec> = cfg.objects.iter().cloned().chain(random_specs(cfg)).collect();
    let mut tracks = Vec::with_capacity(specs.len());
    for (id, s) in specs.iter().enumerate() {
        let (mut x, mut y, mut yaw) = (s.x, s.y, s.yaw);
        let (speed, rate) = (s.motion.speed(), s.motion.yaw_rate());
        let end = s.death_frame.unwrap_or(n).min(n);
        let mut states = Vec::new();
        for i in 0..end {
            (x, y, yaw) = advance(x, y, yaw, speed, rate, dt);
            (x, y, yaw) = reflect(&cfg.arena, x, y, yaw);
            if i >= s.birth_frame {
                let rect = OrientedRect::new(x, y, yaw, s.length, s.width).map_err(|e| invalid(format!("objects[{id}]"), e.to_string()))?;
                states.push((rect, speed));
            }
        }
        if states.is_empty() {
            continue;
        }
        tracks.push(TruthTrack {
            id: id as u64,
            birth_frame: s.birth_frame,
            states,
            forced_miss_frames: s.forced_miss_frames.clone(),
            fixed_score: s.fixed_score,
        });
    }
    Ok(Truth { times, ego, tracks })
}

struct FalseSource {
    rect: OrientedRect,
    spawn_bearing: f64,
    fixed_score: Option<f64>,
    rng: ChaCha8Rng,
    /// Scheduled sources only die by viewpoint change.
    random_lifetime: bool,
    alive: bool,
}

fn noisy_detection(rect: &OrientedRect, score: f64, noise: &[Normal<f64>; 5], cov: &MeasCov, rng: &mut ChaCha8Rng) -> Detection {
    let e: Vec<f64> = noise.iter().map(|n| n.sample(rng)).collect();
    Detection {
        rect: OrientedRect {
            cx: rect.cx + e[0],
            cy: rect.cy + e[1],
            yaw: wrap_angle(rect.yaw + e[2]),
            length: (rect.length + e[3]).max(0.1),
            width: (rect.width + e[4]).max(0.1),
        },
        score,
        noise: *cov,
    }
}

/// Tiles farther than `range` from the ego count as occluded.
fn range_mask(ego: &Pose2D, range: f64, geometry: &GridGeometry) -> OcclusionMask {
    OcclusionMask {
        geometry: *geometry,
        values: (0..geometry.len())
            .map(|i| {
                let [x, y] = geometry.tile_center(i);
                if ego.distance_to(x, y) > range {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
    }
}

/// Renders detector output for every frame of `truth`.
pub fn render_detections(truth: &Truth, cfg: &ScenarioConfig, seed: u64) -> Result<Vec<DetectionFrame>, ScenarioError> {
    cfg.validate()?;
    let m = &cfg.detector;
    let dt = cfg.timestep_s;
    let cov = m.noise_cov();
    let noise: [Normal<f64>; 5] = std::array::from_fn(|k| Normal::new(0.0, m.noise_std[k]).expect("validated noise"));
    let p_dd = m.p_stay_detectable(dt);
    let p_ud = m.p_become_detectable(dt);

    let mut obj_rng: Vec<ChaCha8Rng> = truth.tracks.iter().map(|t| stream(seed, STREAM_OBJECT_BASE + t.id)).collect();
    let mut detectable: Vec<Option<bool>> = vec![None; truth.tracks.len()];

    let mut spawn_rng = stream(seed, STREAM_FALSE_SPAWN);
    let spawn = (m.false_rate_per_frame > 0.0).then(|| Poisson::new(m.false_rate_per_frame).expect("positive rate"));
    let mut sources: Vec<FalseSource> = Vec::new();
    let mut next_source: u64 = 0;
    let death_p = 1.0 / m.false_mean_lifetime_frames;
    let mut pending: Vec<&FalseSourceSpec> = cfg.false_sources.iter().collect();

    let a = &cfg.arena;
    let mut frames = Vec::with_capacity(truth.times.len());
    for (i, (&t, ego)) in truth.times.iter().zip(&truth.ego).enumerate() {
        let present: Vec<(usize, OrientedRect)> = truth
            .tracks
            .iter()
            .enumerate()
            .filter_map(|(k, tr)| tr.at(i).map(|(r, _)| (k, r)))
            .collect();
        let rects: Vec<OrientedRect> = present.iter().map(|(_, r)| *r).collect();
        let mut occlusion = range_mask(ego, m.max_range_m, &cfg.grid);
        if m.use_occlusion {
            occlusion = occlusion.union(&occlusion_from_objects(ego, &rects, &cfg.grid));
        }

        let mut detections = Vec::new();
        for (slot, &(k, rect)) in present.iter().enumerate() {
            let tr = &truth.tracks[k];
            let rng = &mut obj_rng[k];
            // Every draw happens each frame so that schedules do not shift the stream.
            let u_chain: f64 = rng.random();
            let u_detect: f64 = rng.random();
            let score = match tr.fixed_score {
                Some(s) => s,
                None => m.true_score.sample(rng),
            };
            let det = noisy_detection(&rect, score, &noise, &cov, rng);

            let d = match detectable[k] {
                None => u_chain < m.steady_state,
                Some(true) => u_chain < p_dd,
                Some(false) => u_chain < p_ud,
            };
            detectable[k] = Some(d);
            let in_range = ego.distance_to(rect.cx, rect.cy) <= m.max_range_m;
            let hidden = m.use_occlusion && {
                let others: Vec<OrientedRect> = rects.iter().enumerate().filter(|(j, _)| *j != slot).map(|(_, r)| *r).collect();
                blocks_line_of_sight([ego.x, ego.y], [rect.cx, rect.cy], &others, |_, _| true)
            };
            let forced = tr.forced_miss_frames.contains(&i);
            if d && in_range && !hidden && !forced && u_detect < m.r_d {
                detections.push(det);
            }
        }

        // Scheduled sources first, then random spawns.
        pending.retain(|s| {
            if s.birth_frame != i {
                return s.birth_frame > i;
            }
            let rect = OrientedRect {
                cx: s.x,
                cy: s.y,
                yaw: s.yaw,
                length: s.length,
                width: s.width,
            };
            sources.push(FalseSource {
                rect,
                spawn_bearing: ego.bearing_to(s.x, s.y),
                fixed_score: s.fixed_score,
                rng: stream(seed, STREAM_SOURCE_BASE + next_source),
                random_lifetime: false,
                alive: true,
            });
            next_source += 1;
            false
        });
        if let Some(p) = &spawn {
            let count = p.sample(&mut spawn_rng) as usize;
            for _ in 0..count {
                let x = spawn_rng.random_range(a.x_min..=a.x_max);
                let y = spawn_rng.random_range(a.y_min..=a.y_max);
                let yaw = spawn_rng.random_range(-PI..PI);
                sources.push(FalseSource {
                    rect: OrientedRect {
                        cx: x,
                        cy: y,
                        yaw,
                        length: 4.5,
                        width: 1.8,
                    },
                    spawn_bearing: ego.bearing_to(x, y),
                    fixed_score: None,
                    rng: stream(seed, STREAM_SOURCE_BASE + next_source),
                    random_lifetime: true,
                    alive: true,
                });
                next_source += 1;
            }
        }
        for s in sources.iter_mut() {
            let change = wrap_angle(ego.bearing_to(s.rect.cx, s.rect.cy) - s.spawn_bearing).abs();
            if change > m.kill_angle_rad {
                s.alive = false;
                continue;
            }
            let score = match s.fixed_score {
                Some(v) => v,
                None => m.false_score.sample(&mut s.rng),
            };
            detections.push(noisy_detection(&s.rect, score, &noise, &cov, &mut s.rng));
            // Geometric lifetime: the death draw follows each emission.
            if s.random_lifetime && s.rng.random::<f64>() < death_p {
                s.alive = false;
            }
        }
        sources.retain(|s| s.alive);

        frames.push(DetectionFrame {
            t,
            ego: *ego,
            detections,
            occlusion,
        });
    }
    Ok(frames)
}

/// Truth plus detections for a scenario under its own seed.
pub fn simulate(cfg: &ScenarioConfig) -> Result<(Truth, Vec<DetectionFrame>), ScenarioError> {
    let truth = generate_truth(cfg)?;
    let frames = render_detections(&truth, cfg, cfg.seed)?;
    Ok((truth, frames))
}

pub const PRESET_NAMES: [&str; 4] = ["fig1-miss-burst", "fig2-static-clutter", "fig3-fast-lowscore", "ablation-suite"];

fn quiet_detector() -> DetectorModel {
    DetectorModel {
        r_d: 1.0,
        steady_state: 1.0,
        half_life_s: 0.1,
        stationary: false,
        noise_std: [0.15, 0.15, 0.03, 0.1, 0.05],
        true_score: ScoreModel::Fixed { value: 0.95 },
        false_score: ScoreModel::Fixed { value: 0.15 },
        false_rate_per_frame: 0.0,
        ..DetectorModel::default()
    }
}

fn car(x: f64, y: f64, yaw: f64, motion: MotionSpec) -> ObjectSpec {
    ObjectSpec {
        x,
        y,
        yaw,
        length: 4.5,
        width: 1.8,
        motion,
        birth_frame: 0,
        death_frame: None,
        forced_miss_frames: vec![],
        fixed_score: None,
    }
}

pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let cfg = match name {
        "fig1-miss-burst" => ScenarioConfig {
            name: name.into(),
            duration_s: 1.0,
            objects: vec![ObjectSpec {
                forced_miss_frames: vec![2, 3, 4],
                fixed_score: Some(0.99),
                ..car(15.0, 0.0, 0.0, MotionSpec::ConstantVelocity { speed_mps: 3.0 })
            }],
            detector: quiet_detector(),
            seed: 1,
            ..ScenarioConfig::default()
        },
        "fig2-static-clutter" => ScenarioConfig {
            name: name.into(),
            duration_s: 3.0,
            arena: Arena {
                x_min: -50.0,
                x_max: 100.0,
                y_min: -50.0,
                y_max: 50.0,
            },
            ego: EgoSpec {
                speed_mps: 10.0,
                ..EgoSpec::default()
            },
            objects: vec![ObjectSpec {
                fixed_score: Some(0.85),
                ..car(30.0, -3.5, 0.0, MotionSpec::ConstantVelocity { speed_mps: 10.0 })
            }],
            false_sources: vec![FalseSourceSpec {
                x: 20.0,
                y: 6.0,
                yaw: 0.3,
                length: 3.0,
                width: 1.5,
                birth_frame: 0,
                fixed_score: Some(0.15),
            }],
            detector: quiet_detector(),
            seed: 2,
            ..ScenarioConfig::default()
        },
        "fig3-fast-lowscore" => ScenarioConfig {
            name: name.into(),
            duration_s: 4.0,
            objects: vec![ObjectSpec {
                fixed_score: Some(0.15),
                ..car(-20.0, 8.0, 0.0, MotionSpec::ConstantVelocity { speed_mps: 8.0 })
            }],
            detector: quiet_detector(),
            seed: 3,
            ..ScenarioConfig::default()
        },
        "ablation-suite" => ScenarioConfig {
            name: name.into(),
            duration_s: 60.0,
            arena: Arena {
                x_min: -45.0,
                x_max: 45.0,
                y_min: -45.0,
                y_max: 45.0,
            },
            ego: EgoSpec {
                x: 0.0,
                y: -15.0,
                heading: 0.0,
                speed_mps: 3.0,
                yaw_rate_rps: 0.2,
            },
            random_objects: RandomObjects {
                count: 20,
                ..RandomObjects::default()
            },
            detector: DetectorModel {
                r_d: 0.98,
                steady_state: 0.85,
                half_life_s: 0.2,
                false_rate_per_frame: 0.4,
                false_mean_lifetime_frames: 5.0,
                kill_angle_rad: 0.35,
                max_range_m: 80.0,
                ..DetectorModel::default()
            },
            seed: 7,
            ..ScenarioConfig::default()
        },
        _ => {
            return Err(ScenarioError::UnknownPreset {
                name: name.into(),
                available: PRESET_NAMES.join(", "),
            })
        }
    };
    Ok(cfg)
}

pub fn preset_scenarios() -> Vec<ScenarioConfig> {
    PRESET_NAMES.iter().map(|n| preset(n).expect("known preset")).collect()
}
