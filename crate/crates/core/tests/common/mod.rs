#![allow(dead_code)]

use std::f64::consts::PI;

use bevtrack::association::CostMatrix;
use bevtrack::birthgrid::{BirthGrid, GridGeometry, OcclusionMask};
use bevtrack::geometry::{OrientedRect, Pose2D};
use bevtrack::moupdate::{DetectionFrame, FalseDetectionModel, HypothesisSet, ModelParams, Origin, TrackComponent};
use bevtrack::sofilter::{Detection, KinematicState, StateCov, StateVec};
use nalgebra::{SMatrix, SVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn geometry() -> GridGeometry {
    GridGeometry {
        origin_x: -30.0,
        origin_y: -30.0,
        tile_size: 3.0,
        nx: 20,
        ny: 20,
    }
}

/// A single-hypothesis prior with `n` components, `m` detections near them
/// and randomized model parameters.
pub struct Instance {
    pub hyps: HypothesisSet,
    pub frame: DetectionFrame,
    pub grid: BirthGrid,
    pub params: ModelParams,
}

pub fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = ModelParams::default();
    p.detectability.r_d_given_detectable = rng.random_range(0.5..0.99);
    p.detectability.steady_state = rng.random_range(0.5..0.99);
    p.false_birth_density = rng.random_range(1e-4..1e-2);
    p.clutter_density = p.false_birth_density;
    p
}

pub fn random_component(rng: &mut ChaCha8Rng, x: f64, y: f64) -> TrackComponent {
    let mean = StateVec::from_row_slice(&[
        x,
        y,
        rng.random_range(-0.3..0.3),
        rng.random_range(3.5..5.5),
        rng.random_range(1.5..2.2),
        rng.random_range(0.0..10.0),
        rng.random_range(-0.2..0.2),
    ]);
    let mut cov = StateCov::zeros();
    let diag = [
        rng.random_range(0.2..2.0),
        rng.random_range(0.2..2.0),
        rng.random_range(0.01..0.1),
        rng.random_range(0.05..0.3),
        rng.random_range(0.02..0.1),
        rng.random_range(0.5..4.0),
        rng.random_range(0.01..0.1),
    ];
    for (i, v) in diag.iter().enumerate() {
        cov[(i, i)] = *v;
    }
    let c = rng.random_range(-0.5..0.5) * (diag[0] * diag[1]).sqrt();
    cov[(0, 1)] = c;
    cov[(1, 0)] = c;
    TrackComponent {
        id: 0,
        lineage: 0,
        state: KinematicState::new(mean, cov),
        existence: rng.random_range(0.05..1.0),
        detectability: rng.random_range(0.0..1.0),
        genuity: rng.random_range(0.0..1.0),
        last_viewpoint: 0.0,
        motion_cue_used: false,
        origin: Origin::Prior,
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Instance {
    let params = random_params(rng);
    let noise = params.measurement_noise();
    let mut hyps = HypothesisSet::empty();
    let mut centers = Vec::new();
    for _ in 0..n {
        let (x, y) = (rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0));
        centers.push((x, y));
        let comp = random_component(rng, x, y);
        hyps.insert_new(comp);
    }
    let members: Vec<u64> = hyps.components.keys().copied().collect();
    hyps.hypotheses = vec![bevtrack::moupdate::Hypothesis { log_weight: 0.0, members }];

    let mut detections = Vec::new();
    for j in 0..m {
        // Most detections sit near a component so gates open; some are far.
        let (bx, by) = if !centers.is_empty() && rng.random_bool(0.8) {
            centers[j % centers.len()]
        } else {
            (rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0))
        };
        let rect = OrientedRect::new(
            bx + rng.random_range(-1.5..1.5),
            by + rng.random_range(-1.5..1.5),
            rng.random_range(-0.3..0.3),
            rng.random_range(3.5..5.5),
            rng.random_range(1.5..2.2),
        )
        .unwrap();
        detections.push(Detection {
            rect,
            score: rng.random_range(0.05..0.95),
            noise,
        });
    }
    let geom = geometry();
    let occlusion = OcclusionMask {
        geometry: geom,
        values: (0..geom.len())
            .map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..0.6) } else { 0.0 })
            .collect(),
    };
    let grid = BirthGrid::uniform(geom, rng.random_range(1e-3..5e-2));
    Instance {
        hyps,
        frame: DetectionFrame {
            t: 0.0,
            ego: Pose2D::identity(),
            detections,
            occlusion,
        },
        grid,
        params,
    }
}

fn score_ratio(s: f64) -> f64 {
    if s >= 1.0 {
        return 99.0;
    }
    (s / (1.0 - s)).clamp(0.01, 99.0)
}

fn gauss(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Measurement density and squared Mahalanobis distance via an explicit
/// inverse and determinant.
pub fn reference_density(state: &KinematicState, det: &Detection) -> (f64, f64) {
    let mut s = SMatrix::<f64, 5, 5>::zeros();
    for i in 0..5 {
        for j in 0..5 {
            s[(i, j)] = state.covariance[(i, j)] + det.noise[(i, j)];
        }
    }
    let r = &det.rect;
    let mut e = SVector::<f64, 5>::new(
        r.cx - state.mean[0],
        r.cy - state.mean[1],
        r.yaw - state.mean[2],
        r.length - state.mean[3],
        r.width - state.mean[4],
    );
    e[2] = e[2].sin().atan2(e[2].cos());
    let inv = s.try_inverse().unwrap();
    let maha = (e.transpose() * inv * e)[(0, 0)];
    let dens = (-0.5 * maha).exp() / ((2.0 * PI).powi(5) * s.determinant()).sqrt();
    (dens, maha)
}

/// Independent pairwise weights for one prior hypothesis.
pub struct RefWeights {
    pub match_w: Vec<Vec<f64>>,
    pub miss_w: Vec<f64>,
    pub birth_w: Vec<f64>,
}

pub fn reference_weights(inst: &Instance) -> RefWeights {
    let p = &inst.params;
    let genuity_mode = p.false_model == FalseDetectionModel::Genuity;
    let comps: Vec<&TrackComponent> = inst.hyps.hypotheses[0].members.iter().map(|id| &inst.hyps.components[id]).collect();
    let r_d = |c: &TrackComponent| {
        let occ = if p.use_occlusion {
            inst.frame.occlusion.at(c.state.mean[0], c.state.mean[1])
        } else {
            0.0
        };
        p.detectability.r_d_given_detectable * (1.0 - occ)
    };
    let match_w = comps
        .iter()
        .map(|c| {
            inst.frame
                .detections
                .iter()
                .map(|d| {
                    let (dens, maha) = reference_density(&c.state, d);
                    if maha > p.gate_mahalanobis_sq {
                        return 0.0;
                    }
                    let g = if genuity_mode { c.genuity } else { 1.0 };
                    c.existence * c.detectability * r_d(c) * dens * (g * score_ratio(d.score) + 1.0 - g)
                })
                .collect()
        })
        .collect();
    let miss_w = comps.iter().map(|c| 1.0 - c.existence * c.detectability * r_d(c)).collect();
    let birth_w = inst
        .frame
        .detections
        .iter()
        .map(|d| {
            let shape = gauss(d.rect.length, p.shape_prior_mean[0], p.shape_prior_std[0].powi(2) + d.noise[(3, 3)])
                * gauss(d.rect.width, p.shape_prior_mean[1], p.shape_prior_std[1].powi(2) + d.noise[(4, 4)])
                / (2.0 * PI);
            let undetected = inst.grid.intensity_at(d.rect.cx, d.rect.cy) / inst.grid.geometry.tile_area();
            let genuine = undetected * p.detectability.steady_state * p.detectability.r_d_given_detectable * shape * score_ratio(d.score);
            let density = if genuity_mode { p.false_birth_density } else { p.clutter_density };
            genuine + density * shape
        })
        .collect();
    RefWeights { match_w, miss_w, birth_w }
}

/// Association event read back from a child hypothesis: per prior member
/// the matched detection or `None`, plus detections that started objects.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub assignment: Vec<Option<usize>>,
    pub births: Vec<usize>,
}

pub fn child_events(prior: &HypothesisSet, post: &HypothesisSet) -> Vec<(Event, f64)> {
    let rows = &prior.hypotheses[0].members;
    post.hypotheses
        .iter()
        .map(|h| {
            let mut assignment = vec![None; rows.len()];
            let mut births = Vec::new();
            for id in &h.members {
                match post.components[id].origin {
                    Origin::Matched(pid, j) => {
                        let row = rows
                            .iter()
                            .position(|r| *r == pid)
                            .unwrap_or_else(|| panic!("{pid} not in {rows:?}"));
                        assignment[row] = Some(j);
                    }
                    Origin::Missed(_) => {}
                    Origin::Born(j) => births.push(j),
                    Origin::Prior => panic!("prior component in posterior"),
                }
            }
            births.sort_unstable();
            (Event { assignment, births }, h.weight())
        })
        .collect()
}

/// Every one-to-one association event with its unnormalized weight.
pub fn enumerate_reference(w: &RefWeights) -> Vec<(Event, f64)> {
    let mut out = Vec::new();
    let mut assignment = vec![None; w.miss_w.len()];
    fn rec(w: &RefWeights, row: usize, assignment: &mut Vec<Option<usize>>, out: &mut Vec<(Event, f64)>) {
        let m = w.birth_w.len();
        if row == assignment.len() {
            let mut weight = 1.0;
            let mut used = vec![false; m];
            for (r, a) in assignment.iter().enumerate() {
                match a {
                    Some(j) => {
                        weight *= w.match_w[r][*j];
                        used[*j] = true;
                    }
                    None => weight *= w.miss_w[r],
                }
            }
            let births: Vec<usize> = (0..m).filter(|j| !used[*j]).collect();
            for j in &births {
                weight *= w.birth_w[*j];
            }
            if weight > 0.0 {
                out.push((
                    Event {
                        assignment: assignment.clone(),
                        births,
                    },
                    weight,
                ));
            }
            return;
        }
        assignment[row] = None;
        rec(w, row + 1, assignment, out);
        for j in 0..m {
            if !assignment[..row].contains(&Some(j)) {
                assignment[row] = Some(j);
                rec(w, row + 1, assignment, out);
            }
        }
        assignment[row] = None;
    }
    rec(w, 0, &mut assignment, &mut out);
    let total: f64 = out.iter().map(|e| e.1).sum();
    for e in &mut out {
        e.1 /= total;
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Maximum relative difference between two event-weight lists; panics if
/// the event sets differ.
pub fn max_relative_gap(mut a: Vec<(Event, f64)>, mut b: Vec<(Event, f64)>) -> f64 {
    a.sort_by(|x, y| x.0.cmp(&y.0));
    b.sort_by(|x, y| x.0.cmp(&y.0));
    assert_eq!(a.len(), b.len(), "event sets differ in size");
    a.iter()
        .zip(&b)
        .map(|((ea, wa), (eb, wb))| {
            assert_eq!(ea, eb);
            (wa - wb).abs() / wa.abs().max(wb.abs()).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

/// Ten frames, two truth objects (GT 20). Estimates miss truth 1 on frame 3
/// and truth 2 on frame 7, switch truth 2 from estimate 20 to 21 at frame 5
/// and add one far-away false estimate on frame 9: FN 2, FP 1, IDSW 1.
pub type Labeled = Vec<(u64, OrientedRect)>;

pub fn mot_fixture() -> Vec<(f64, Labeled, Labeled)> {
    let rect = |x: f64, y: f64| OrientedRect::new(x, y, 0.0, 4.0, 2.0).unwrap();
    (0..10)
        .map(|i| {
            let t = 0.1 * (i + 1) as f64;
            let x = i as f64;
            let truth = vec![(1, rect(x, 0.0)), (2, rect(x, 20.0))];
            let mut est = Vec::new();
            if i != 3 {
                est.push((10, rect(x + 0.2, 0.1)));
            }
            if i != 7 {
                est.push((if i < 5 { 20 } else { 21 }, rect(x - 0.1, 20.2)));
            }
            if i == 9 {
                est.push((30, rect(40.0, -30.0)));
            }
            (t, truth, est)
        })
        .collect()
}

/// Plain augmented cost matrix with its own event cost and enumeration.
pub struct RawCosts {
    pub matches: Vec<Vec<f64>>,
    pub miss: Vec<f64>,
    pub birth: Vec<f64>,
}

impl RawCosts {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Self {
        let matches = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        if rng.random_bool(0.2) {
                            f64::INFINITY
                        } else {
                            rng.random_range(-5.0..5.0)
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            matches,
            miss: (0..n).map(|_| rng.random_range(-2.0..5.0)).collect(),
            birth: (0..m).map(|_| rng.random_range(-2.0..5.0)).collect(),
        }
    }

    pub fn matrix(&self) -> CostMatrix {
        CostMatrix::new(self.matches.clone(), self.miss.clone(), self.birth.clone()).unwrap()
    }

    pub fn cost(&self, a: &[Option<usize>]) -> f64 {
        let mut used = vec![false; self.birth.len()];
        let mut total = 0.0;
        for (r, x) in a.iter().enumerate() {
            match x {
                Some(c) => {
                    used[*c] = true;
                    total += self.matches[r][*c];
                }
                None => total += self.miss[r],
            }
        }
        total + used.iter().zip(&self.birth).filter(|(u, _)| !**u).map(|(_, b)| b).sum::<f64>()
    }

    /// All feasible assignments with their costs, by direct recursion.
    pub fn enumerate(&self) -> Vec<(Vec<Option<usize>>, f64)> {
        fn go(raw: &RawCosts, cur: &mut Vec<Option<usize>>, out: &mut Vec<(Vec<Option<usize>>, f64)>) {
            if cur.len() == raw.miss.len() {
                let c = raw.cost(cur);
                if c.is_finite() {
                    out.push((cur.clone(), c));
                }
                return;
            }
            for opt in std::iter::once(None).chain((0..raw.birth.len()).map(Some)) {
                if opt.is_some() && cur.contains(&opt) {
                    continue;
                }
                cur.push(opt);
                go(raw, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        go(self, &mut Vec::new(), &mut out);
        out
    }
}
