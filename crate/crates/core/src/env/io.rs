//! Map files: a UTF-8 JSON object
//!
//! ```json
//! { "name": "world10", "width": 10.0, "height": 10.0,
//!   "obstacles": [[x_min, y_min, x_max, y_max], ...],
//!   "beacons": [[x, y], ...],
//!   "tiling": { "tiles_x": 2, "tiles_y": 2, "tile_width": 5.0, "tile_height": 5.0 } }
//! ```
//!
//! `tiling` is optional and only present for tiled worlds.

use std::fs;
use std::path::Path;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use super::{EnvError, Environment, Rect, Tiling};
use crate::scalar::Scalar;

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct MapFile<T: Scalar> {
    name: String,
    width: T,
    height: T,
    obstacles: Vec<[T; 4]>,
    beacons: Vec<[T; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tiling: Option<Tiling<T>>,
}

pub fn to_map_string<T: Scalar>(env: &Environment<T>) -> String {
    let file = MapFile {
        name: env.name().to_string(),
        width: env.width(),
        height: env.height(),
        obstacles: env.obstacles().iter().map(|r| [r.x_min, r.y_min, r.x_max, r.y_max]).collect(),
        beacons: env.beacons().iter().map(|b| [b.x, b.y]).collect(),
        tiling: env.tiling().copied(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("map serialization cannot fail");
    s.push('\n');
    s
}

pub fn parse_map<T: Scalar>(text: &str) -> Result<Environment<T>, EnvError> {
    let file: MapFile<T> = serde_json::from_str(text).map_err(|e| EnvError::Parse(e.to_string()))?;
    Environment::with_tiling(
        file.name,
        file.width,
        file.height,
        file.obstacles.into_iter().map(|[a, b, c, d]| Rect::new(a, b, c, d)).collect(),
        file.beacons.into_iter().map(|[x, y]| Point2::new(x, y)).collect(),
        file.tiling,
    )
}

pub fn load_map<T: Scalar>(path: impl AsRef<Path>) -> Result<Environment<T>, EnvError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EnvError::Io { path: path.display().to_string(), source })?;
    parse_map(&text)
}

pub fn save_map<T: Scalar>(env: &Environment<T>, path: impl AsRef<Path>) -> Result<(), EnvError> {
    let path = path.as_ref();
    fs::write(path, to_map_string(env)).map_err(|source| EnvError::Io { path: path.display().to_string(), source })
}
