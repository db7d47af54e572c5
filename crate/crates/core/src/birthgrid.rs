//! Tile grid holding the intensity of undetected objects, plus per-tile
//! occlusion masks and detection-importance selection.

use serde::{Deserialize, Serialize};

use crate::geometry::{intersection_area, OrientedRect, Pose2D};
use crate::moupdate::HypothesisSet;

/// Axis-aligned grid of square tiles, indexed row-major (`ix + iy·nx`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub origin_x: f64,
    pub origin_y: f64,
    pub tile_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridGeometry {
    fn default() -> Self {
        Self {
            origin_x: -60.0,
            origin_y: -60.0,
            tile_size: 3.0,
            nx: 40,
            ny: 40,
        }
    }
}

impl GridGeometry {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tile_area(&self) -> f64 {
        self.tile_size * self.tile_size
    }

    pub fn tile_of(&self, x: f64, y: f64) -> Option<usize> {
        let fx = ((x - self.origin_x) / self.tile_size).floor();
        let fy = ((y - self.origin_y) / self.tile_size).floor();
        if fx < 0.0 || fy < 0.0 || !fx.is_finite() || !fy.is_finite() {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.nx && iy < self.ny).then_some(ix + iy * self.nx)
    }

    pub fn tile_center(&self, idx: usize) -> [f64; 2] {
        let (ix, iy) = (idx % self.nx, idx / self.nx);
        [
            self.origin_x + (ix as f64 + 0.5) * self.tile_size,
            self.origin_y + (iy as f64 + 0.5) * self.tile_size,
        ]
    }

    fn tile_contains(&self, idx: usize, p: [f64; 2]) -> bool {
        let [cx, cy] = self.tile_center(idx);
        let h = 0.5 * self.tile_size;
        (p[0] - cx).abs() <= h && (p[1] - cy).abs() <= h
    }

    fn tile_overlaps(&self, idx: usize, r: &OrientedRect) -> bool {
        let [cx, cy] = self.tile_center(idx);
        let tile = OrientedRect {
            cx,
            cy,
            yaw: 0.0,
            length: self.tile_size,
            width: self.tile_size,
        };
        intersection_area(&tile, r) > 0.0
    }

    /// 4-neighbors of a tile that lie inside the grid.
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (ix, iy) = (idx % self.nx, idx / self.nx);
        let nx = self.nx;
        let ny = self.ny;
        [
            (ix > 0).then(|| idx - 1),
            (ix + 1 < nx).then(|| idx + 1),
            (iy > 0).then(|| idx - nx),
            (iy + 1 < ny).then(|| idx + nx),
        ]
        .into_iter()
        .flatten()
    }

    pub fn is_rim(&self, idx: usize) -> bool {
        let (ix, iy) = (idx % self.nx, idx / self.nx);
        ix == 0 || iy == 0 || ix + 1 == self.nx || iy + 1 == self.ny
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthGrid {
    pub geometry: GridGeometry,
    /// Expected number of undetected objects per tile.
    pub intensity: Vec<f64>,
    /// Tiles where new objects enter the scene.
    pub entry: Vec<bool>,
    /// Standard deviation of the speed of objects born from the grid.
    pub speed_prior_std: f64,
}

impl BirthGrid {
    /// Uniform grid with entry on the rim tiles.
    pub fn uniform(geometry: GridGeometry, intensity: f64) -> Self {
        Self {
            geometry,
            intensity: vec![intensity; geometry.len()],
            entry: (0..geometry.len()).map(|i| geometry.is_rim(i)).collect(),
            speed_prior_std: 10.0,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.intensity.iter().sum()
    }

    pub fn intensity_at(&self, x: f64, y: f64) -> f64 {
        self.geometry.tile_of(x, y).map_or(0.0, |i| self.intensity[i])
    }
}

/// Per-tile probability that the detector cannot see the tile this frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionMask {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
}

impl OcclusionMask {
    pub fn clear(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            values: vec![0.0; geometry.len()],
        }
    }

    pub fn full(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            values: vec![1.0; geometry.len()],
        }
    }

    /// Occlusion at a world point. Points outside the mask are visible.
    pub fn at(&self, x: f64, y: f64) -> f64 {
        self.geometry.tile_of(x, y).map_or(0.0, |i| self.values[i])
    }

    /// Tile-wise maximum of two masks over the same geometry.
    pub fn union(&self, other: &OcclusionMask) -> OcclusionMask {
        OcclusionMask {
            geometry: self.geometry,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a.max(*b)).collect(),
        }
    }

    /// Run-length encoding as `(value, count)` pairs.
    pub fn to_runs(&self) -> Vec<(f64, usize)> {
        let mut runs: Vec<(f64, usize)> = Vec::new();
        for &v in &self.values {
            match runs.last_mut() {
                Some((last, n)) if *last == v => *n += 1,
                _ => runs.push((v, 1)),
            }
        }
        runs
    }

    pub fn from_runs(geometry: GridGeometry, runs: &[(f64, usize)]) -> Option<Self> {
        let mut values = Vec::with_capacity(geometry.len());
        for &(v, n) in runs {
            if !(0.0..=1.0).contains(&v) {
                return None;
            }
            values.extend(std::iter::repeat_n(v, n));
        }
        (values.len() == geometry.len()).then_some(Self { geometry, values })
    }
}

/// One step of the undetected-object dynamics: local 4-neighbor mixing with
/// reflecting boundaries, survival thinning, and entry on rim tiles.
pub fn grid_predict(g: &BirthGrid, dt: f64, mixing: f64, entry_rate: f64, survival: f64) -> BirthGrid {
    let geom = &g.geometry;
    let share = 0.25 * mixing;
    let mut out = vec![0.0; g.intensity.len()];
    for (i, &mass) in g.intensity.iter().enumerate() {
        let mut kept = (1.0 - mixing) * mass;
        let mut sent = 0;
        for j in geom.neighbors(i) {
            out[j] += share * mass;
            sent += 1;
        }
        // Mass aimed at a missing neighbor is reflected back.
        kept += share * mass * (4 - sent) as f64;
        out[i] += kept;
    }
    for (i, v) in out.iter_mut().enumerate() {
        *v = survival * *v + if g.entry[i] { entry_rate * dt } else { 0.0 };
        *v = v.max(0.0);
    }
    BirthGrid {
        intensity: out,
        ..g.clone()
    }
}

/// Poisson thinning of the undetected intensity by the frame's detection
/// opportunity, then removal of mass absorbed by new tracked components.
///
/// `births_absorbed` holds `(x, y, expected_mass)` triples.
pub fn grid_update(g: &BirthGrid, births_absorbed: &[(f64, f64, f64)], r_d: f64, mask: &OcclusionMask) -> BirthGrid {
    let geom = &g.geometry;
    let mut out = g.intensity.clone();
    for (i, v) in out.iter_mut().enumerate() {
        let [cx, cy] = geom.tile_center(i);
        let visible = 1.0 - mask.at(cx, cy);
        *v *= 1.0 - r_d * visible;
    }
    for &(x, y, mass) in births_absorbed {
        if let Some(i) = geom.tile_of(x, y) {
            out[i] = (out[i] - mass).max(0.0);
        }
    }
    BirthGrid {
        intensity: out,
        ..g.clone()
    }
}

/// Geometric line-of-sight occlusion: a tile is occluded when the ray from
/// the ego to the tile center enters some rectangle before reaching the tile.
/// Rectangles never occlude tiles they overlap.
pub fn occlusion_from_objects(ego: &Pose2D, rects: &[OrientedRect], geometry: &GridGeometry) -> OcclusionMask {
    let mut mask = OcclusionMask::clear(*geometry);
    if rects.is_empty() {
        return mask;
    }
    let p0 = [ego.x, ego.y];
    for (i, v) in mask.values.iter_mut().enumerate() {
        let c = geometry.tile_center(i);
        *v = if blocks_line_of_sight(p0, c, rects, |r, t| {
            let hit = [p0[0] + t * (c[0] - p0[0]), p0[1] + t * (c[1] - p0[1])];
            !geometry.tile_contains(i, hit) && !geometry.tile_overlaps(i, r)
        }) {
            1.0
        } else {
            0.0
        };
    }
    mask
}

/// Whether any rectangle passing `accept` is crossed by the segment p0→p1.
pub fn blocks_line_of_sight(p0: [f64; 2], p1: [f64; 2], rects: &[OrientedRect], accept: impl Fn(&OrientedRect, f64) -> bool) -> bool {
    rects.iter().any(|r| match r.segment_entry(p0, p1) {
        Some(t) => !r.contains(p0[0], p0[1]) && accept(r, t),
        None => false,
    })
}

/// Selects the most informative visible tiles for running the detector.
///
/// Each tile scores its undetected intensity plus, for every component whose
/// mean lies in the tile or one of its 8 surrounding tiles, the component's
/// marginal existence times its position variance. The top `fraction` of
/// visible tiles (rounded up) is selected; ties go to the lower index.
pub fn detection_importance(g: &BirthGrid, hyps: &HypothesisSet, fraction: f64, mask: &OcclusionMask) -> Vec<bool> {
    let geom = &g.geometry;
    let mut score = g.intensity.clone();
    let existence = hyps.marginal_existences();
    for (id, comp) in &hyps.components {
        let r = existence.get(id).copied().unwrap_or(0.0);
        if r <= 0.0 {
            continue;
        }
        let Some(center) = geom.tile_of(comp.state.mean[0], comp.state.mean[1]) else {
            continue;
        };
        let contribution = r * comp.state.position_spread();
        let (cx, cy) = ((center % geom.nx) as i64, (center / geom.nx) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ix, iy) = (cx + dx, cy + dy);
                if ix >= 0 && iy >= 0 && (ix as usize) < geom.nx && (iy as usize) < geom.ny {
                    score[ix as usize + iy as usize * geom.nx] += contribution;
                }
            }
        }
    }
    let visible: Vec<usize> = (0..geom.len())
        .filter(|&i| {
            let [x, y] = geom.tile_center(i);
            mask.at(x, y) < 1.0
        })
        .collect();
    let take = ((fraction.clamp(0.0, 1.0) * visible.len() as f64).ceil() as usize).min(visible.len());
    let mut ranked = visible;
    ranked.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    let mut selected = vec![false; geom.len()];
    for &i in ranked.iter().take(take) {
        selected[i] = true;
    }
    selected
}
