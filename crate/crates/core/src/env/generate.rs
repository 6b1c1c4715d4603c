//! Procedural environment families: tiled symmetric worlds, their
//! one-tile-removed variants and a seeded labyrinth.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Environment, Rect, Tiling};
use crate::scalar::{uniform, Scalar};

/// Template replicated across the world, in tile-local coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile<T: Scalar> {
    pub width: T,
    pub height: T,
    pub obstacles: Vec<Rect<T>>,
    pub beacons: Vec<Point2<T>>,
}

impl<T: Scalar> Tile<T> {
    /// Beacons on the four corners and the center, and one off-center block.
    pub fn standard(size: T) -> Self {
        let l = |v: f64| T::lit(v) * size;
        Self {
            width: size,
            height: size,
            obstacles: vec![Rect::new(l(0.6), l(0.15), l(0.85), l(0.4))],
            beacons: vec![
                Point2::new(T::zero(), T::zero()),
                Point2::new(size, T::zero()),
                Point2::new(T::zero(), size),
                Point2::new(size, size),
                Point2::new(l(0.5), l(0.5)),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetrySpec<T: Scalar> {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub tile: Tile<T>,
}

impl<T: Scalar> SymmetrySpec<T> {
    pub fn tiling(&self) -> Tiling<T> {
        Tiling {
            tiles_x: self.tiles_x,
            tiles_y: self.tiles_y,
            tile_width: self.tile.width,
            tile_height: self.tile.height,
        }
    }

    fn validate(&self) -> Result<(), EnvError> {
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(EnvError::InvalidSpec("tile counts must be positive".into()));
        }
        let t = &self.tile;
        if !(t.width > T::zero() && t.height > T::zero()) {
            return Err(EnvError::InvalidSpec("tile size must be positive".into()));
        }
        let inside = |p: &Point2<T>| p.x >= T::zero() && p.x <= t.width && p.y >= T::zero() && p.y <= t.height;
        if !t.beacons.iter().all(inside) {
            return Err(EnvError::InvalidSpec("tile beacon outside the tile".into()));
        }
        for r in &t.obstacles {
            let corners = [Point2::new(r.x_min, r.y_min), Point2::new(r.x_max, r.y_max)];
            if !corners.iter().all(inside) || r.x_max <= r.x_min || r.y_max <= r.y_min {
                return Err(EnvError::InvalidSpec("tile obstacle must have positive area inside the tile".into()));
            }
        }
        Ok(())
    }
}

/// Replicates the tile `tiles_x × tiles_y` times. Beacons shared by
/// neighbouring tiles (e.g. on common corners) are kept once.
pub fn generate_symmetric_world<T: Scalar>(spec: &SymmetrySpec<T>) -> Result<Environment<T>, EnvError> {
    spec.validate()?;
    let tiling = spec.tiling();
    let width = T::from_count(spec.tiles_x) * spec.tile.width;
    let height = T::from_count(spec.tiles_y) * spec.tile.height;
    let tol = T::lit(1e-9) * (width + height);
    let mut obstacles = Vec::new();
    let mut beacons: Vec<Point2<T>> = Vec::new();
    for ty in 0..spec.tiles_y {
        for tx in 0..spec.tiles_x {
            let offset = Vector2::new(T::from_count(tx) * spec.tile.width, T::from_count(ty) * spec.tile.height);
            obstacles.extend(spec.tile.obstacles.iter().map(|r| r.translated(&offset)));
            for b in &spec.tile.beacons {
                let p = b + offset;
                if !beacons.iter().any(|q| (q - p).norm() <= tol) {
                    beacons.push(p);
                }
            }
        }
    }
    let name = format!("tiled-{}x{}", spec.tiles_x, spec.tiles_y);
    Environment::with_tiling(name, width, height, obstacles, beacons, Some(tiling))
}

/// Removes every obstacle and beacon owned by one tile. A beacon on a tile
/// border is owned by the tile [`Tiling::tile_of`] assigns it to.
pub fn make_nonsymmetric<T: Scalar>(env: &Environment<T>, tile_index: usize) -> Result<Environment<T>, EnvError> {
    let tiling = *env.tiling().ok_or(EnvError::NotTiled)?;
    if tile_index >= tiling.count() {
        return Err(EnvError::TileOutOfRange { index: tile_index, tiles: tiling.count() });
    }
    let obstacles = env.obstacles().iter().filter(|r| tiling.tile_of(&r.center()) != tile_index).copied().collect();
    let beacons = env.beacons().iter().filter(|b| tiling.tile_of(b) != tile_index).copied().collect();
    Environment::with_tiling(format!("n-{}", env.name()), env.width(), env.height(), obstacles, beacons, Some(tiling))
}

const LABYRINTH_SIZE: f64 = 10.0;
const LABYRINTH_CELLS: usize = 5;
const LABYRINTH_WALL: f64 = 0.5;
const LABYRINTH_EXTRA_OPENING: f64 = 0.2;
const LABYRINTH_BEACON_GRID: usize = 4;
const LABYRINTH_FREE_RANGE: (f64, f64) = (0.55, 0.88);

/// A 10×10 corridor maze with irregularly placed beacons.
///
/// Walls come from a randomized depth-first maze on a 5×5 cell grid, with a
/// fraction of the remaining walls knocked out to open loops. One beacon is
/// dropped at a random free spot in each cell of a 4×4 grid.
pub fn generate_labyrinth<T: Scalar>(seed: u64) -> Environment<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let env: Environment<T> = labyrinth_candidate(&mut rng);
        let f = env.free_space().fraction.as_f64();
        if (LABYRINTH_FREE_RANGE.0..=LABYRINTH_FREE_RANGE.1).contains(&f) && env.translation_symmetries().is_empty() {
            return env;
        }
    }
}

fn labyrinth_candidate<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Environment<T> {
    let n = LABYRINTH_CELLS;
    let cell = LABYRINTH_SIZE / n as f64;
    // vertical[i][j]: wall between (i, j) and (i + 1, j); horizontal[i][j]: between (i, j) and (i, j + 1).
    let mut vertical = vec![vec![true; n]; n - 1];
    let mut horizontal = vec![vec![true; n - 1]; n];
    let mut visited = vec![vec![false; n]; n];
    let mut stack = vec![(0usize, 0usize)];
    visited[0][0] = true;
    while let Some(&(i, j)) = stack.last() {
        let mut options = Vec::with_capacity(4);
        if i > 0 && !visited[i - 1][j] {
            options.push((i - 1, j));
        }
        if i + 1 < n && !visited[i + 1][j] {
            options.push((i + 1, j));
        }
        if j > 0 && !visited[i][j - 1] {
            options.push((i, j - 1));
        }
        if j + 1 < n && !visited[i][j + 1] {
            options.push((i, j + 1));
        }
        if options.is_empty() {
            stack.pop();
            continue;
        }
        let (a, b) = options[rng.random_range(0..options.len())];
        if a != i {
            vertical[i.min(a)][j] = false;
        } else {
            horizontal[i][j.min(b)] = false;
        }
        visited[a][b] = true;
        stack.push((a, b));
    }

    let half = LABYRINTH_WALL / 2.0;
    let mut walls = Vec::new();
    for (i, column) in vertical.iter().enumerate() {
        for (j, &present) in column.iter().enumerate() {
            if present && rng.random::<f64>() >= LABYRINTH_EXTRA_OPENING {
                let x = (i + 1) as f64 * cell;
                walls.push(rect(x - half, j as f64 * cell, x + half, (j + 1) as f64 * cell));
            }
        }
    }
    for (i, column) in horizontal.iter().enumerate() {
        for (j, &present) in column.iter().enumerate() {
            if present && rng.random::<f64>() >= LABYRINTH_EXTRA_OPENING {
                let y = (j + 1) as f64 * cell;
                walls.push(rect(i as f64 * cell, y - half, (i + 1) as f64 * cell, y + half));
            }
        }
    }

    let blocked = |p: &Point2<T>| walls.iter().any(|r: &Rect<T>| r.contains(p));
    let g = LABYRINTH_BEACON_GRID;
    let span = LABYRINTH_SIZE / g as f64;
    let margin = 0.1 * span;
    let mut beacons = Vec::with_capacity(g * g);
    for gy in 0..g {
        for gx in 0..g {
            let (x0, y0) = (gx as f64 * span + margin, gy as f64 * span + margin);
            let (x1, y1) = (x0 + span - 2.0 * margin, y0 + span - 2.0 * margin);
            let p = loop {
                let p = Point2::new(uniform(rng, T::lit(x0), T::lit(x1)), uniform(rng, T::lit(y0), T::lit(y1)));
                if !blocked(&p) {
                    break p;
                }
            };
            beacons.push(p);
        }
    }
    let size = T::lit(LABYRINTH_SIZE);
    Environment::new("labyrinth", size, size, walls, beacons).expect("labyrinth construction is valid")
}

fn rect<T: Scalar>(x0: f64, y0: f64, x1: f64, y1: f64) -> Rect<T> {
    Rect::new(T::lit(x0.max(0.0)), T::lit(y0.max(0.0)), T::lit(x1.min(LABYRINTH_SIZE)), T::lit(y1.min(LABYRINTH_SIZE)))
}

/// Named environment families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// 2×2 tiles of 5×5.
    World10,
    /// 3×3 tiles of 6×6.
    World18,
    /// 3×3 tiles of 9×9.
    World27,
    Labyrinth,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::World10, Preset::World18, Preset::World27, Preset::Labyrinth];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::World10 => "world10",
            Preset::World18 => "World18",
            Preset::World27 => "WORLD27",
            Preset::Labyrinth => "labyrinth",
        }
    }

    pub fn symmetry_spec<T: Scalar>(&self) -> Option<SymmetrySpec<T>> {
        let (tiles, size) = match self {
            Preset::World10 => (2, 5.0),
            Preset::World18 => (3, 6.0),
            Preset::World27 => (3, 9.0),
            Preset::Labyrinth => return None,
        };
        Some(SymmetrySpec { tiles_x: tiles, tiles_y: tiles, tile: Tile::standard(T::lit(size)) })
    }

    /// Builds the preset. The tiled layouts are fixed; `seed` only drives the
    /// labyrinth. The nonsymmetric variant drops tile 0 and is prefixed `n-`.
    pub fn build<T: Scalar>(&self, nonsymmetric: bool, seed: u64) -> Result<Environment<T>, EnvError> {
        match self.symmetry_spec::<T>() {
            Some(spec) => {
                let env = generate_symmetric_world(&spec)?.renamed(self.name());
                if nonsymmetric {
                    make_nonsymmetric(&env, 0)
                } else {
                    Ok(env)
                }
            }
            None if nonsymmetric => Err(EnvError::InvalidSpec("labyrinth has no nonsymmetric variant".into())),
            None => Ok(generate_labyrinth(seed)),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| EnvError::InvalidSpec(format!("unknown preset `{s}` (expected world10, World18, WORLD27 or labyrinth)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_beacon_tile(size: f64) -> Tile<f64> {
        Tile { width: size, height: size, obstacles: vec![], beacons: vec![Point2::new(size / 2.0, size / 4.0)] }
    }

    #[test]
    fn identity_tiling_reproduces_tile() {
        let tile = Tile::standard(5.0);
        let env = generate_symmetric_world(&SymmetrySpec { tiles_x: 1, tiles_y: 1, tile: tile.clone() }).unwrap();
        assert_eq!(env.beacons(), &tile.beacons[..]);
        assert_eq!(env.obstacles(), &tile.obstacles[..]);
        assert_eq!((env.width(), env.height()), (5.0, 5.0));
    }

    #[test]
    fn tiling_counts() {
        let env = generate_symmetric_world(&SymmetrySpec { tiles_x: 3, tiles_y: 3, tile: one_beacon_tile(2.0) }).unwrap();
        assert_eq!(env.beacons().len(), 9);
        // Shared corners are deduplicated: 3×3 lattice points plus 4 centers.
        let w10 = Preset::World10.build::<f64>(false, 0).unwrap();
        assert_eq!(w10.beacons().len(), 13);
        assert_eq!(w10.obstacles().len(), 4);
    }

    #[test]
    fn tile_translations_map_world_onto_itself() {
        for preset in [Preset::World10, Preset::World18, Preset::World27] {
            let env = preset.build::<f64>(false, 0).unwrap();
            let tiling = *env.tiling().unwrap();
            for t in tiling.translations() {
                assert!(env.is_translation_symmetric(&t), "{preset}: {t:?}");
            }
            // Explicit set comparison for a one-tile shift.
            let shift = Vector2::new(tiling.tile_width, 0.0);
            for b in env.beacons() {
                let q = b + shift;
                if env.in_bounds(&q) {
                    assert!(env.beacons().iter().any(|c| (c - q).norm() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn removing_a_tile_breaks_symmetry() {
        let env = generate_symmetric_world(&SymmetrySpec { tiles_x: 2, tiles_y: 1, tile: one_beacon_tile(4.0) }).unwrap();
        let shift = Vector2::new(4.0, 0.0);
        assert!(env.is_translation_symmetric(&shift));
        let n = make_nonsymmetric(&env, 0).unwrap();
        assert_eq!(n.beacons().len(), 1);
        assert!(!n.is_translation_symmetric(&shift));

        let w10 = Preset::World10.build::<f64>(true, 0).unwrap();
        assert_eq!(w10.name(), "n-world10");
        let tiling = *w10.tiling().unwrap();
        assert!(!tiling.translations().iter().all(|t| w10.is_translation_symmetric(t)));
        for t in [Vector2::new(5.0, 0.0), Vector2::new(0.0, 5.0), Vector2::new(5.0, 5.0)] {
            assert!(!w10.is_translation_symmetric(&t));
        }

        assert!(matches!(make_nonsymmetric(&env, 2), Err(EnvError::TileOutOfRange { .. })));
        let single = generate_symmetric_world(&SymmetrySpec { tiles_x: 1, tiles_y: 1, tile: one_beacon_tile(4.0) }).unwrap();
        assert!(matches!(make_nonsymmetric(&single, 0), Err(EnvError::Invalid { .. })));
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SymmetrySpec { tiles_x: 0, tiles_y: 1, tile: one_beacon_tile(1.0) };
        assert!(generate_symmetric_world(&spec).is_err());
        let mut tile = one_beacon_tile(1.0);
        tile.beacons.push(Point2::new(2.0, 0.0));
        assert!(generate_symmetric_world(&SymmetrySpec { tiles_x: 1, tiles_y: 1, tile }).is_err());
    }

    #[test]
    fn labyrinth_deterministic_and_asymmetric() {
        let a = generate_labyrinth::<f64>(7);
        let b = generate_labyrinth::<f64>(7);
        assert_eq!(a, b);
        assert_ne!(a, generate_labyrinth::<f64>(8));
        // Exhaustive candidate translations: every pairwise beacon offset.
        for s in a.beacons() {
            for q in a.beacons() {
                let t = q - s;
                if t.norm() > 0.0 {
                    assert!(!a.is_translation_symmetric(&t));
                }
            }
        }
        assert!(a.beacons().len() >= 5);
        assert!(a.tiling().is_none());
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("world11".parse::<Preset>().is_err());
        assert!(Preset::Labyrinth.build::<f64>(true, 0).is_err());
    }
}
