//! 2D environment: scene specs, occupancy grids, distance fields and scans.

use std::collections::HashSet;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;

pub const SCENE_FORMAT: &str = "neotraj-scene/1";
/// Clearance reported when the map contains no occupied cell.
pub const MAX_CLEARANCE: f64 = 1e3;
/// Obstacle centers of random scenes lie in this rectangle.
pub const OBSTACLE_REGION: [f64; 4] = [3.0, -5.0, 27.0, 5.0];
pub const MIN_SPACING: f64 = 1.8;
pub const DEFAULT_START: [f64; 2] = [0.0, 0.0];
pub const DEFAULT_GOAL: [f64; 2] = [30.0, 0.0];
pub const DEFAULT_BOUNDS: [f64; 4] = [-3.0, -10.0, 33.0, 10.0];
pub const DEFAULT_RESOLUTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("could not place {count} obstacles with spacing {spacing} m after {attempts} attempts")]
    PackingFailure {
        count: usize,
        spacing: f64,
        attempts: usize,
    },
    #[error("unknown scene preset {0} (expected 1..=9)")]
    UnknownPreset(u32),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("scene file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
}

impl Obstacle {
    fn contains(&self, p: Vec2) -> bool {
        let h = 0.5 * self.width;
        (p.x - self.cx).abs() <= h && (p.y - self.cy).abs() <= h
    }
}

/// Scene file contents. Obstacles are axis-aligned squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub format: String,
    /// `[x_min, y_min, x_max, y_max]` in meters.
    pub bounds: [f64; 4],
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub seed: u64,
    pub obstacles: Vec<Obstacle>,
}

impl SceneSpec {
    pub fn empty(seed: u64) -> Self {
        Self {
            format: SCENE_FORMAT.to_string(),
            bounds: DEFAULT_BOUNDS,
            start: DEFAULT_START,
            goal: DEFAULT_GOAL,
            seed,
            obstacles: Vec::new(),
        }
    }

    pub fn start(&self) -> Vec2 {
        Vec2::new(self.start[0], self.start[1])
    }

    pub fn goal(&self) -> Vec2 {
        Vec2::new(self.goal[0], self.goal[1])
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let spec: SceneSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.format != SCENE_FORMAT {
            return Err(WorldError::InvalidScene(format!(
                "unsupported format {:?}",
                self.format
            )));
        }
        let [x0, y0, x1, y1] = self.bounds;
        if !(x1 > x0 && y1 > y0) {
            return Err(WorldError::InvalidScene("empty bounds".into()));
        }
        for p in [self.start, self.goal] {
            if !(p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1) {
                return Err(WorldError::InvalidScene("start/goal outside bounds".into()));
            }
        }
        if self
            .obstacles
            .iter()
            .any(|o| !(o.width > 0.0) || !o.cx.is_finite() || !o.cy.is_finite())
        {
            return Err(WorldError::InvalidScene("obstacle widths must be positive".into()));
        }
        Ok(())
    }
}

/// Obstacle count and width range for a random scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneRecipe {
    pub count: usize,
    pub width_min: f64,
    pub width_max: f64,
}

impl SceneRecipe {
    /// Random-scene presets 4..=9.
    pub fn preset(id: u32) -> Option<Self> {
        let (count, width_min, width_max) = match id {
            4 => (14, 0.8, 1.0),
            5 => (15, 0.5, 1.0),
            6 => (16, 0.5, 0.8),
            7 => (18, 0.5, 0.8),
            8 => (20, 0.5, 0.8),
            9 => (24, 0.5, 0.6),
            _ => return None,
        };
        Some(Self {
            count,
            width_min,
            width_max,
        })
    }
}

/// Rejection-samples obstacle centers until every pair is at least
/// [`MIN_SPACING`] apart.
pub fn generate_scene(recipe: SceneRecipe, seed: u64) -> Result<SceneSpec, WorldError> {
    const ATTEMPTS_PER_OBSTACLE: usize = 2000;
    if !(recipe.width_min > 0.0 && recipe.width_max >= recipe.width_min) {
        return Err(WorldError::InvalidScene(
            "width range must be positive and ordered".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [x0, y0, x1, y1] = OBSTACLE_REGION;
    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(recipe.count);
    let mut attempts = 0;
    while obstacles.len() < recipe.count {
        if attempts >= ATTEMPTS_PER_OBSTACLE * recipe.count {
            return Err(WorldError::PackingFailure {
                count: recipe.count,
                spacing: MIN_SPACING,
                attempts,
            });
        }
        attempts += 1;
        let cx = rng.random_range(x0..=x1);
        let cy = rng.random_range(y0..=y1);
        let width = if recipe.width_max > recipe.width_min {
            rng.random_range(recipe.width_min..=recipe.width_max)
        } else {
            recipe.width_min
        };
        let clear = obstacles.iter().all(|o| (o.cx - cx).hypot(o.cy - cy) >= MIN_SPACING);
        if clear {
            obstacles.push(Obstacle { cx, cy, width });
        }
    }
    let mut spec = SceneSpec::empty(seed);
    spec.obstacles = obstacles;
    Ok(spec)
}

/// Any of the nine scene ids: 1..=3 are fixed layouts, 4..=9 are random.
pub fn preset_scene(id: u32, seed: u64) -> Result<SceneSpec, WorldError> {
    let fixed = match id {
        1 => Some(include_str!("../scenes/poles.json")),
        2 => Some(include_str!("../scenes/forest.json")),
        3 => Some(include_str!("../scenes/bricks.json")),
        _ => None,
    };
    if let Some(text) = fixed {
        let mut spec = SceneSpec::from_json(text)?;
        spec.seed = seed;
        return Ok(spec);
    }
    let recipe = SceneRecipe::preset(id).ok_or(WorldError::UnknownPreset(id))?;
    generate_scene(recipe, seed)
}

/// Occupancy grid with an unsigned Euclidean distance field.
///
/// Cell `(ix, iy)` covers `[origin + i·res, origin + (i+1)·res)` and its value
/// lives at the cell center. Distances are between cell centers.
#[derive(Debug, Clone)]
pub struct GridWorld {
    resolution: f64,
    origin: Vec2,
    cols: usize,
    rows: usize,
    occupied: Vec<bool>,
    distance: Option<Vec<f64>>,
    spec: SceneSpec,
}

/// Rasterizes the scene and computes its exact distance transform.
pub fn build_distance_field(spec: &SceneSpec, resolution: f64) -> GridWorld {
    let mut world = GridWorld::rasterize(spec, resolution);
    world.compute_distance_field();
    world
}

impl GridWorld {
    /// Occupancy only; call [`GridWorld::compute_distance_field`] before
    /// querying clearances.
    pub fn rasterize(spec: &SceneSpec, resolution: f64) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        let [x0, y0, x1, y1] = spec.bounds;
        let cols = ((x1 - x0) / resolution).round().max(1.0) as usize;
        let rows = ((y1 - y0) / resolution).round().max(1.0) as usize;
        let mut world = Self {
            resolution,
            origin: Vec2::new(x0, y0),
            cols,
            rows,
            occupied: vec![false; cols * rows],
            distance: None,
            spec: spec.clone(),
        };
        for o in &spec.obstacles {
            let h = 0.5 * o.width;
            let (ix0, iy0) = world.cell_of(Vec2::new(o.cx - h, o.cy - h));
            let (ix1, iy1) = world.cell_of(Vec2::new(o.cx + h, o.cy + h));
            for iy in iy0.max(0)..=iy1.min(rows as i64 - 1) {
                for ix in ix0.max(0)..=ix1.min(cols as i64 - 1) {
                    let (ix, iy) = (ix as usize, iy as usize);
                    if o.contains(world.cell_center(ix, iy)) {
                        world.occupied[iy * cols + ix] = true;
                    }
                }
            }
        }
        world
    }

    /// Builds a world directly from an occupancy bitmap (row-major, `y` rows).
    pub fn from_occupancy(origin: Vec2, resolution: f64, cols: usize, rows: usize, occupied: Vec<bool>) -> Self {
        assert_eq!(occupied.len(), cols * rows);
        let mut spec = SceneSpec::empty(0);
        spec.bounds = [
            origin.x,
            origin.y,
            origin.x + cols as f64 * resolution,
            origin.y + rows as f64 * resolution,
        ];
        spec.start = [origin.x, origin.y];
        spec.goal = [origin.x, origin.y];
        Self {
            resolution,
            origin,
            cols,
            rows,
            occupied,
            distance: None,
            spec,
        }
    }

    pub fn compute_distance_field(&mut self) {
        self.distance = Some(euclidean_distance_transform(
            &self.occupied,
            self.cols,
            self.rows,
            self.resolution,
        ));
    }

    pub fn has_distance_field(&self) -> bool {
        self.distance.is_some()
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn upper_corner(&self) -> Vec2 {
        self.origin + Vec2::new(self.cols as f64, self.rows as f64) * self.resolution
    }

    pub fn in_bounds(&self, p: Vec2) -> bool {
        let hi = self.upper_corner();
        p.x >= self.origin.x && p.y >= self.origin.y && p.x <= hi.x && p.y <= hi.y
    }

    /// Cell containing `p`, possibly outside the grid.
    pub fn cell_of(&self, p: Vec2) -> (i64, i64) {
        let u = (p - self.origin) / self.resolution;
        (u.x.floor() as i64, u.y.floor() as i64)
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec2 {
        self.origin + Vec2::new(ix as f64 + 0.5, iy as f64 + 0.5) * self.resolution
    }

    pub fn contains_cell(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.cols && (iy as usize) < self.rows
    }

    pub fn is_occupied(&self, ix: usize, iy: usize) -> bool {
        self.occupied[iy * self.cols + ix]
    }

    pub fn set_occupied(&mut self, ix: usize, iy: usize, value: bool) {
        self.occupied[iy * self.cols + ix] = value;
        self.distance = None;
    }

    /// Distance-field value stored at a cell center.
    pub fn cell_distance(&self, ix: usize, iy: usize) -> Option<f64> {
        self.distance.as_ref().map(|d| d[iy * self.cols + ix])
    }

    /// Bilinear clearance and its exact gradient. Outside the bounds the
    /// clearance is zero with zero gradient.
    pub fn distance_with_gradient(&self, p: Vec2) -> Option<(f64, Vec2)> {
        let field = self.distance.as_ref()?;
        if !self.in_bounds(p) {
            return Some((0.0, Vec2::zeros()));
        }
        let u = (p - self.origin) / self.resolution - Vec2::new(0.5, 0.5);
        let fx = u.x.floor();
        let fy = u.y.floor();
        let tx = u.x - fx;
        let ty = u.y - fy;
        let clamp_x = |i: f64| (i.max(0.0) as usize).min(self.cols - 1);
        let clamp_y = |i: f64| (i.max(0.0) as usize).min(self.rows - 1);
        let (x0, x1) = (clamp_x(fx), clamp_x(fx + 1.0));
        let (y0, y1) = (clamp_y(fy), clamp_y(fy + 1.0));
        let at = |ix: usize, iy: usize| field[iy * self.cols + ix];
        let d00 = at(x0, y0);
        let d10 = at(x1, y0);
        let d01 = at(x0, y1);
        let d11 = at(x1, y1);
        let value = (1.0 - ty) * ((1.0 - tx) * d00 + tx * d10) + ty * ((1.0 - tx) * d01 + tx * d11);
        let gx = ((1.0 - ty) * (d10 - d00) + ty * (d11 - d01)) / self.resolution;
        let gy = ((1.0 - tx) * (d01 - d00) + tx * (d11 - d10)) / self.resolution;
        Some((value, Vec2::new(gx, gy)))
    }

    /// Interpolated clearance; zero outside the bounds.
    pub fn distance(&self, p: Vec2) -> f64 {
        self.distance_with_gradient(p).expect("distance field not computed").0
    }

    /// Strict test: a point exactly `radius` away does not collide.
    pub fn collides(&self, p: Vec2, radius: f64) -> bool {
        self.distance(p) < radius
    }

    /// Depth scan from `position` with `heading`: `n_rays` rays spread
    /// uniformly over `fov` (radians), each clipped to `max_range`.
    pub fn raycast_scan(&self, position: Vec2, heading: f64, n_rays: usize, fov: f64, max_range: f64) -> Vec<f64> {
        (0..n_rays)
            .map(|i| {
                let frac = if n_rays > 1 {
                    i as f64 / (n_rays - 1) as f64
                } else {
                    0.5
                };
                let angle = heading - 0.5 * fov + fov * frac;
                self.raycast(position, Vec2::new(angle.cos(), angle.sin()), max_range)
            })
            .collect()
    }

    /// Grid traversal along a unit direction; returns the distance to the
    /// first occupied cell or `max_range`. Cells outside the grid are free.
    pub fn raycast(&self, origin: Vec2, dir: Vec2, max_range: f64) -> f64 {
        let (mut ix, mut iy) = self.cell_of(origin);
        if self.contains_cell(ix, iy) && self.is_occupied(ix as usize, iy as usize) {
            return 0.0;
        }
        let res = self.resolution;
        let step_x: i64 = if dir.x > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dir.y > 0.0 { 1 } else { -1 };
        let boundary = |i: i64, step: i64, o: f64, org: f64| {
            let edge = org + (i + if step > 0 { 1 } else { 0 }) as f64 * res;
            edge - o
        };
        let mut t_max_x = if dir.x != 0.0 {
            boundary(ix, step_x, origin.x, self.origin.x) / dir.x
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dir.y != 0.0 {
            boundary(iy, step_y, origin.y, self.origin.y) / dir.y
        } else {
            f64::INFINITY
        };
        let t_delta_x = if dir.x != 0.0 { res / dir.x.abs() } else { f64::INFINITY };
        let t_delta_y = if dir.y != 0.0 { res / dir.y.abs() } else { f64::INFINITY };
        loop {
            let t = if t_max_x < t_max_y {
                ix += step_x;
                let t = t_max_x;
                t_max_x += t_delta_x;
                t
            } else {
                iy += step_y;
                let t = t_max_y;
                t_max_y += t_delta_y;
                t
            };
            if t >= max_range {
                return max_range;
            }
            if self.contains_cell(ix, iy) && self.is_occupied(ix as usize, iy as usize) {
                return t.max(0.0);
            }
        }
    }

    /// Occupied cells, for diagnostics and tests.
    pub fn occupied_cells(&self) -> HashSet<(usize, usize)> {
        let mut out = HashSet::new();
        for iy in 0..self.rows {
            for ix in 0..self.cols {
                if self.is_occupied(ix, iy) {
                    out.insert((ix, iy));
                }
            }
        }
        out
    }
}

/// Exact Euclidean distance transform (separable lower-envelope of
/// parabolas, one pass per axis). Output in meters, capped at [`MAX_CLEARANCE`].
fn euclidean_distance_transform(occupied: &[bool], cols: usize, rows: usize, res: f64) -> Vec<f64> {
    let mut sq = vec![f64::INFINITY; cols * rows];
    for (s, &o) in sq.iter_mut().zip(occupied) {
        if o {
            *s = 0.0;
        }
    }
    let mut line = Vec::new();
    let mut out = Vec::new();
    for ix in 0..cols {
        line.clear();
        line.extend((0..rows).map(|iy| sq[iy * cols + ix]));
        transform_1d(&line, &mut out);
        for iy in 0..rows {
            sq[iy * cols + ix] = out[iy];
        }
    }
    for iy in 0..rows {
        line.clear();
        line.extend_from_slice(&sq[iy * cols..(iy + 1) * cols]);
        transform_1d(&line, &mut out);
        sq[iy * cols..(iy + 1) * cols].copy_from_slice(&out);
    }
    sq.into_iter()
        .map(|d| {
            if d.is_finite() {
                (d.sqrt() * res).min(MAX_CLEARANCE)
            } else {
                MAX_CLEARANCE
            }
        })
        .collect()
}

fn transform_1d(f: &[f64], out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let sites: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if sites.is_empty() {
        return;
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let inter = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for &q in &sites {
        loop {
            match v.last() {
                Some(&p) => {
                    let s = inter(q, p);
                    if s <= z[v.len() - 1] {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
            }
        }
    }
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let x = i as f64;
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let p = v[k];
        let d = x - p as f64;
        *o = d * d + f[p];
    }
}
