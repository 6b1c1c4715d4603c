//! World geometry: a rectangle `[0,w]×[0,h]` with closed axis-aligned
//! obstacle blocks and point beacons.

mod generate;
mod io;

pub use generate::{generate_labyrinth, generate_symmetric_world, make_nonsymmetric, Preset, SymmetrySpec, Tile};
pub use io::{load_map, parse_map, save_map, to_map_string};

use nalgebra::{Point2, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelError, Pose};
use crate::scalar::{uniform, Scalar};

/// Rejection-sampling budget of [`Environment::sample_free_pose`].
pub const MAX_FREE_SPACE_ATTEMPTS: usize = 100_000;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("map parse error: {0}")]
    Parse(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid {entity}: {reason}")]
    Invalid { entity: String, reason: String },
    #[error("invalid symmetry spec: {0}")]
    InvalidSpec(String),
    #[error("tile index {index} out of range ({tiles} tiles)")]
    TileOutOfRange { index: usize, tiles: usize },
    #[error("environment is not tiled")]
    NotTiled,
    #[error("no free position found after {0} draws")]
    NoFreeSpace(usize),
}

fn invalid(entity: impl Into<String>, reason: impl Into<String>) -> EnvError {
    EnvError::Invalid { entity: entity.into(), reason: reason.into() }
}

/// Euclidean distance as used by every beacon query.
#[inline]
pub fn point_distance<T: Scalar>(a: &Point2<T>, b: &Point2<T>) -> T {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    (dx * dx + dy * dy).sqrt()
}

/// Closed axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<T> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Scalar> Rect<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn area(&self) -> T {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn center(&self) -> Point2<T> {
        let half = T::lit(0.5);
        Point2::new((self.x_min + self.x_max) * half, (self.y_min + self.y_max) * half)
    }

    pub fn contains(&self, p: &Point2<T>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn translated(&self, t: &Vector2<T>) -> Self {
        Self::new(self.x_min + t.x, self.y_min + t.y, self.x_max + t.x, self.y_max + t.y)
    }

    fn approx_eq(&self, other: &Self, tol: T) -> bool {
        (self.x_min - other.x_min).abs() <= tol
            && (self.y_min - other.y_min).abs() <= tol
            && (self.x_max - other.x_max).abs() <= tol
            && (self.y_max - other.y_max).abs() <= tol
    }

    /// Whether segment `ab` touches the closed rectangle (Liang-Barsky clip).
    pub fn intersects_segment(&self, a: &Point2<T>, b: &Point2<T>) -> bool {
        let d = b - a;
        let mut t0 = T::zero();
        let mut t1 = T::one();
        let checks = [
            (-d.x, a.x - self.x_min),
            (d.x, self.x_max - a.x),
            (-d.y, a.y - self.y_min),
            (d.y, self.y_max - a.y),
        ];
        for (p, q) in checks {
            if p == T::zero() {
                if q < T::zero() {
                    return false;
                }
            } else {
                let r = q / p;
                if p < T::zero() {
                    if r > t1 {
                        return false;
                    }
                    if r > t0 {
                        t0 = r;
                    }
                } else {
                    if r < t0 {
                        return false;
                    }
                    if r < t1 {
                        t1 = r;
                    }
                }
            }
        }
        t0 <= t1
    }
}

/// Regular tiling of the world by identical `tile_width × tile_height` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tiling<T> {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub tile_width: T,
    pub tile_height: T,
}

impl<T: Scalar> Tiling<T> {
    pub fn count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Row-major tile index of a point; boundary points go to the higher tile.
    pub fn tile_of(&self, p: &Point2<T>) -> usize {
        let clamp = |v: T, size: T, n: usize| -> usize {
            let i = (v / size).floor().as_f64();
            if i <= 0.0 {
                0
            } else {
                (i as usize).min(n - 1)
            }
        };
        clamp(p.y, self.tile_height, self.tiles_y) * self.tiles_x + clamp(p.x, self.tile_width, self.tiles_x)
    }

    /// Every translation by a whole number of tiles that can keep some point
    /// in the world, identity included.
    pub fn translations(&self) -> Vec<Vector2<T>> {
        let (nx, ny) = (self.tiles_x as i64, self.tiles_y as i64);
        let mut out = Vec::with_capacity(((2 * nx - 1) * (2 * ny - 1)) as usize);
        for j in -(ny - 1)..ny {
            for i in -(nx - 1)..nx {
                out.push(Vector2::new(T::lit(i as f64) * self.tile_width, T::lit(j as f64) * self.tile_height));
            }
        }
        out
    }
}

/// Exact free-space statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeSpace<T: Scalar> {
    pub area: T,
    pub fraction: T,
    pub centroid: Point2<T>,
}

/// Immutable world map.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment<T: Scalar> {
    name: String,
    width: T,
    height: T,
    obstacles: Vec<Rect<T>>,
    beacons: Vec<Point2<T>>,
    tiling: Option<Tiling<T>>,
}

impl<T: Scalar> Environment<T> {
    pub fn new(
        name: impl Into<String>,
        width: T,
        height: T,
        obstacles: Vec<Rect<T>>,
        beacons: Vec<Point2<T>>,
    ) -> Result<Self, EnvError> {
        Self::with_tiling(name, width, height, obstacles, beacons, None)
    }

    pub fn with_tiling(
        name: impl Into<String>,
        width: T,
        height: T,
        obstacles: Vec<Rect<T>>,
        beacons: Vec<Point2<T>>,
        tiling: Option<Tiling<T>>,
    ) -> Result<Self, EnvError> {
        let env = Self { name: name.into(), width, height, obstacles, beacons, tiling };
        env.validate()?;
        Ok(env)
    }

    fn validate(&self) -> Result<(), EnvError> {
        let finite = |v: T| v.as_f64().is_finite();
        if !(finite(self.width) && self.width > T::zero()) {
            return Err(invalid("width", format!("must be positive, got {}", self.width)));
        }
        if !(finite(self.height) && self.height > T::zero()) {
            return Err(invalid("height", format!("must be positive, got {}", self.height)));
        }
        for (i, r) in self.obstacles.iter().enumerate() {
            let coords = [r.x_min, r.y_min, r.x_max, r.y_max];
            if !coords.iter().all(|&v| finite(v)) || r.x_max <= r.x_min || r.y_max <= r.y_min {
                return Err(invalid(format!("obstacle {i}"), "must have positive area"));
            }
            if r.x_min < T::zero() || r.y_min < T::zero() || r.x_max > self.width || r.y_max > self.height {
                return Err(invalid(format!("obstacle {i}"), "lies outside the world"));
            }
        }
        if self.beacons.is_empty() {
            return Err(invalid("beacons", "at least one beacon is required"));
        }
        for (i, b) in self.beacons.iter().enumerate() {
            if !(finite(b.x) && finite(b.y)) || !self.in_bounds(b) {
                return Err(invalid(
                    format!("beacon {i}"),
                    format!("({}, {}) lies outside [0,{}]x[0,{}]", b.x, b.y, self.width, self.height),
                ));
            }
        }
        if let Some(t) = &self.tiling {
            if t.tiles_x == 0 || t.tiles_y == 0 {
                return Err(invalid("tiling", "tile counts must be positive"));
            }
            let tol = T::lit(1e-9) * (self.width + self.height);
            if (T::from_count(t.tiles_x) * t.tile_width - self.width).abs() > tol
                || (T::from_count(t.tiles_y) * t.tile_height - self.height).abs() > tol
            {
                return Err(invalid("tiling", "tiles do not cover the world exactly"));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> T {
        self.width
    }

    pub fn height(&self) -> T {
        self.height
    }

    pub fn obstacles(&self) -> &[Rect<T>] {
        &self.obstacles
    }

    pub fn beacons(&self) -> &[Point2<T>] {
        &self.beacons
    }

    pub fn tiling(&self) -> Option<&Tiling<T>> {
        self.tiling.as_ref()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn in_bounds(&self, p: &Point2<T>) -> bool {
        p.x >= T::zero() && p.x <= self.width && p.y >= T::zero() && p.y <= self.height
    }

    /// A point collides if it lies in any (closed) obstacle or outside the world.
    pub fn collides(&self, p: &Point2<T>) -> bool {
        !self.in_bounds(p) || self.obstacles.iter().any(|r| r.contains(p))
    }

    /// A segment collides if it leaves the world or touches any obstacle.
    pub fn segment_collides(&self, a: &Point2<T>, b: &Point2<T>) -> bool {
        // The world is convex, so checking the endpoints suffices for it.
        !self.in_bounds(a) || !self.in_bounds(b) || self.obstacles.iter().any(|r| r.intersects_segment(a, b))
    }

    /// The `k` nearest beacons as `(index, distance)`, ascending, ties by index.
    pub fn k_nearest_beacons(&self, p: &Point2<T>, k: usize) -> Result<Vec<(usize, T)>, ModelError> {
        if k > self.beacons.len() {
            return Err(ModelError::TooManyBeacons { requested: k, available: self.beacons.len() });
        }
        let mut out = Vec::with_capacity(k);
        self.k_nearest_into(p, k, &mut out);
        Ok(out)
    }

    /// Allocation-free variant of [`k_nearest_beacons`](Self::k_nearest_beacons);
    /// fills at most `k` entries into `out` (cleared first).
    pub fn k_nearest_into(&self, p: &Point2<T>, k: usize, out: &mut Vec<(usize, T)>) {
        out.clear();
        if k == 0 {
            return;
        }
        // Insertion selection on squared distance; strict comparison keeps
        // the lower index first on ties.
        for (i, b) in self.beacons.iter().enumerate() {
            let dx = p.x - b.x;
            let dy = p.y - b.y;
            let d2 = dx * dx + dy * dy;
            if out.len() == k && d2 >= out[k - 1].1 {
                continue;
            }
            let mut pos = out.len();
            while pos > 0 && d2 < out[pos - 1].1 {
                pos -= 1;
            }
            if out.len() == k {
                out.pop();
            }
            out.insert(pos, (i, d2));
        }
        for entry in out.iter_mut() {
            entry.1 = entry.1.sqrt();
        }
    }

    /// Uniform position over free space (rejection sampling) and uniform heading.
    pub fn sample_free_pose<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Pose<T>, EnvError> {
        for _ in 0..MAX_FREE_SPACE_ATTEMPTS {
            let p = Point2::new(uniform(rng, T::zero(), self.width), uniform(rng, T::zero(), self.height));
            if !self.collides(&p) {
                let phi = uniform(rng, T::zero(), T::two_pi());
                return Ok(Pose::new(p.x, p.y, phi));
            }
        }
        Err(EnvError::NoFreeSpace(MAX_FREE_SPACE_ATTEMPTS))
    }

    /// Exact free area, free fraction and free-space centroid, by
    /// decomposing the world along every obstacle edge.
    pub fn free_space(&self) -> FreeSpace<T> {
        let mut xs = vec![T::zero(), self.width];
        let mut ys = vec![T::zero(), self.height];
        for r in &self.obstacles {
            xs.extend([r.x_min, r.x_max]);
            ys.extend([r.y_min, r.y_max]);
        }
        let sort_dedup = |v: &mut Vec<T>| {
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
            v.dedup();
        };
        sort_dedup(&mut xs);
        sort_dedup(&mut ys);
        let half = T::lit(0.5);
        let (mut area, mut mx, mut my) = (T::zero(), T::zero(), T::zero());
        for wx in xs.windows(2) {
            for wy in ys.windows(2) {
                let c = Point2::new((wx[0] + wx[1]) * half, (wy[0] + wy[1]) * half);
                if self.obstacles.iter().any(|r| r.contains(&c)) {
                    continue;
                }
                let a = (wx[1] - wx[0]) * (wy[1] - wy[0]);
                area += a;
                mx += a * c.x;
                my += a * c.y;
            }
        }
        let centroid = if area > T::zero() {
            Point2::new(mx / area, my / area)
        } else {
            Point2::new(self.width * half, self.height * half)
        };
        FreeSpace { area, fraction: area / (self.width * self.height), centroid }
    }

    fn tolerance(&self) -> T {
        T::lit(1e-9) * (self.width + self.height)
    }

    /// Whether translating by `t` (and by `-t`) maps every beacon and every
    /// obstacle that stays inside the world onto another one.
    pub fn is_translation_symmetric(&self, t: &Vector2<T>) -> bool {
        let tol = self.tolerance();
        let maps = |t: &Vector2<T>| {
            let beacons_ok = self.beacons.iter().all(|b| {
                let q = b + t;
                !self.in_bounds(&q) || self.beacons.iter().any(|c| (c - q).norm() <= tol)
            });
            let obstacles_ok = self.obstacles.iter().all(|r| {
                let moved = r.translated(t);
                let inside = moved.x_min >= -tol
                    && moved.y_min >= -tol
                    && moved.x_max <= self.width + tol
                    && moved.y_max <= self.height + tol;
                !inside || self.obstacles.iter().any(|o| o.approx_eq(&moved, tol))
            });
            beacons_ok && obstacles_ok
        };
        maps(t) && maps(&-t)
    }

    /// Non-identity translations, drawn from pairwise beacon offsets, under
    /// which the map is self-similar in the sense of
    /// [`is_translation_symmetric`](Self::is_translation_symmetric).
    pub fn translation_symmetries(&self) -> Vec<Vector2<T>> {
        let tol = self.tolerance();
        let mut found: Vec<Vector2<T>> = Vec::new();
        for a in &self.beacons {
            for b in &self.beacons {
                let t = b - a;
                if t.norm() <= tol || found.iter().any(|f| (f - t).norm() <= tol) {
                    continue;
                }
                if self.is_translation_symmetric(&t) {
                    found.push(t);
                }
            }
        }
        found
    }
}
