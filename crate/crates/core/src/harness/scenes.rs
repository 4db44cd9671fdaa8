//! Synthetic scenes built from primitive shapes.
//!
//! Objects are axis-aligned boxes, ellipsoids and z-aligned elliptic
//! cylinders, placed without bounding-box overlap inside a cube centred on
//! the origin. Points are sampled on object surfaces; the remainder of the
//! budget is uniform clutter labeled background. Every scene carries a
//! single constant feature channel.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scene::{load_scene_file, save_scene_file, ObjectRecord, PointCloud};
use crate::tensor::Tensor;

/// Point label of clutter; object points carry `class_id + 1`.
pub const BACKGROUND_LABEL: usize = 0;
pub const MAX_PLACEMENT_TRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Shape {
    Box,
    Sphere,
    Cylinder,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Box, Shape::Sphere, Shape::Cylinder];

    pub fn class_id(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Box => "box",
            Shape::Sphere => "sphere",
            Shape::Cylinder => "cylinder",
        })
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "box" => Ok(Shape::Box),
            "sphere" => Ok(Shape::Sphere),
            "cylinder" => Ok(Shape::Cylinder),
            other => Err(Error::Config(format!("unknown shape `{other}`"))),
        }
    }
}

/// Number of point-label classes: background plus one per shape.
pub const SCENE_CLASSES: usize = Shape::ALL.len() + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub num_points: usize,
    pub num_objects: usize,
    pub shapes: Vec<Shape>,
    /// Full side lengths are drawn per axis from `[extent_min, extent_max]`.
    pub extent_min: f64,
    pub extent_max: f64,
    /// Share of points spent on background clutter when objects exist.
    pub clutter_fraction: f64,
    pub noise_sigma: f64,
    /// Side of the placement cube.
    pub scene_size: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            num_points: 512,
            num_objects: 1,
            shapes: Shape::ALL.to_vec(),
            extent_min: 3.0,
            extent_max: 7.0,
            clutter_fraction: 0.0,
            noise_sigma: 0.0,
            scene_size: 20.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_points == 0 {
            return fail("num_points must be >= 1");
        }
        if self.num_objects > 0 && self.shapes.is_empty() {
            return fail("shape vocabulary is empty");
        }
        if !(self.extent_min > 0.0 && self.extent_min <= self.extent_max && self.extent_max.is_finite()) {
            return fail("extents must satisfy 0 < extent_min <= extent_max");
        }
        if !(0.0..=1.0).contains(&self.clutter_fraction) {
            return fail("clutter_fraction must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be finite and >= 0");
        }
        if !(self.scene_size >= self.extent_max) {
            return fail("scene_size must be >= extent_max");
        }
        if self.num_objects > 0 && self.clutter_fraction == 1.0 {
            return fail("clutter_fraction = 1 leaves no points for objects");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("clutter_fraction".into(), self.clutter_fraction.to_string());
        m.insert("extent_max".into(), self.extent_max.to_string());
        m.insert("extent_min".into(), self.extent_min.to_string());
        m.insert("noise_sigma".into(), self.noise_sigma.to_string());
        m.insert("num_objects".into(), self.num_objects.to_string());
        m.insert("num_points".into(), self.num_points.to_string());
        m.insert("scene_size".into(), self.scene_size.to_string());
        m.insert("seed".into(), self.seed.to_string());
        let shapes: Vec<String> = self.shapes.iter().map(Shape::to_string).collect();
        m.insert("shapes".into(), shapes.join(","));
        m
    }

    /// Reads known keys, keeping defaults for the rest.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut s = Self::default();
        let num = |k: &str, v: &str| -> Result<f64> {
            v.parse().map_err(|_| Error::Config(format!("`{k}`: cannot parse `{v}`")))
        };
        let int = |k: &str, v: &str| -> Result<u64> {
            v.parse().map_err(|_| Error::Config(format!("`{k}`: cannot parse `{v}`")))
        };
        for (k, v) in kv {
            match k.as_str() {
                "clutter_fraction" => s.clutter_fraction = num(k, v)?,
                "extent_max" => s.extent_max = num(k, v)?,
                "extent_min" => s.extent_min = num(k, v)?,
                "noise_sigma" => s.noise_sigma = num(k, v)?,
                "num_objects" => s.num_objects = int(k, v)? as usize,
                "num_points" => s.num_points = int(k, v)? as usize,
                "scene_size" => s.scene_size = num(k, v)?,
                "seed" => s.seed = int(k, v)?,
                "shapes" => s.shapes = v.split(',').map(str::parse).collect::<Result<_>>()?,
                _ => {}
            }
        }
        s.validate()?;
        Ok(s)
    }
}

fn overlaps(a_center: &Point, a_ext: &Point, b_center: &Point, b_ext: &Point) -> bool {
    (0..3).all(|i| (a_center[i] - b_center[i]).abs() < 0.5 * (a_ext[i] + b_ext[i]))
}

/// Uniformly distributed point on the surface of a shape centred at the
/// origin with half-widths `h`. Ellipsoid and cylinder samples are uniform
/// in their parameterisation, which is exact for spheres and circular
/// cylinders.
pub fn sample_surface(shape: Shape, h: &Point, rng: &mut impl Rng) -> Point {
    match shape {
        Shape::Box => {
            let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
            let total: f64 = areas.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut axis = 2;
            for (i, a) in areas.iter().enumerate() {
                if u < *a {
                    axis = i;
                    break;
                }
                u -= a;
            }
            let mut p = [0.0; 3];
            for (i, v) in p.iter_mut().enumerate() {
                *v = if i == axis {
                    if rng.random::<bool>() {
                        h[i]
                    } else {
                        -h[i]
                    }
                } else {
                    rng.random_range(-h[i]..=h[i])
                };
            }
            p
        }
        Shape::Sphere => loop {
            let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-12 {
                break [h[0] * v[0] / n, h[1] * v[1] / n, h[2] * v[2] / n];
            }
        },
        Shape::Cylinder => {
            let side = std::f64::consts::PI * (h[0] + h[1]) * 2.0 * h[2];
            let caps = 2.0 * std::f64::consts::PI * h[0] * h[1];
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            if rng.random::<f64>() * (side + caps) < side {
                [h[0] * theta.cos(), h[1] * theta.sin(), rng.random_range(-h[2]..=h[2])]
            } else {
                let r = rng.random::<f64>().sqrt();
                let z = if rng.random::<bool>() { h[2] } else { -h[2] };
                [h[0] * r * theta.cos(), h[1] * r * theta.sin(), z]
            }
        }
    }
}

/// Generates one scene, drawing each object's shape from the vocabulary.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    generate_scene_with(spec, None)
}

/// Like [`generate_scene`], with the object shapes optionally fixed.
pub fn generate_scene_with(spec: &SceneSpec, shapes: Option<&[Shape]>) -> Result<PointCloud> {
    spec.validate()?;
    if let Some(s) = shapes {
        if s.len() != spec.num_objects {
            return Err(Error::Config(format!("{} shapes for {} objects", s.len(), spec.num_objects)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = 0.5 * spec.scene_size;

    let mut objects: Vec<(Shape, ObjectRecord)> = Vec::with_capacity(spec.num_objects);
    for i in 0..spec.num_objects {
        let shape = match shapes {
            Some(s) => s[i],
            None => spec.shapes[rng.random_range(0..spec.shapes.len())],
        };
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let extent: Point = std::array::from_fn(|_| rng.random_range(spec.extent_min..=spec.extent_max));
            let center: Point = std::array::from_fn(|a| {
                let lim = half - 0.5 * extent[a];
                rng.random_range(-lim..=lim)
            });
            if objects.iter().all(|(_, o)| !overlaps(&center, &extent, &o.center, &o.extent)) {
                placed = Some(ObjectRecord::new(shape.class_id(), center, extent));
                break;
            }
        }
        let record = placed.ok_or_else(|| {
            Error::Data(format!(
                "could not place object {i} without overlap after {MAX_PLACEMENT_TRIES} tries"
            ))
        })?;
        objects.push((shape, record));
    }

    let n = spec.num_points;
    let clutter = if objects.is_empty() {
        n
    } else {
        (spec.clutter_fraction * n as f64).round() as usize
    }
    .min(n);
    let on_objects = n - clutter;
    let mut points: Vec<(Point, usize)> = Vec::with_capacity(n);
    for (i, (shape, o)) in objects.iter().enumerate() {
        let count = on_objects / objects.len() + usize::from(i < on_objects % objects.len());
        let h = o.extent.map(|e| 0.5 * e);
        for _ in 0..count {
            let s = sample_surface(*shape, &h, &mut rng);
            let mut p = [o.center[0] + s[0], o.center[1] + s[1], o.center[2] + s[2]];
            if spec.noise_sigma > 0.0 {
                for v in &mut p {
                    *v += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
            points.push((p, o.class_id + 1));
        }
    }
    for _ in 0..clutter {
        let p: Point = std::array::from_fn(|_| rng.random_range(-half..=half));
        points.push((p, BACKGROUND_LABEL));
    }
    points.shuffle(&mut rng);

    let cloud = PointCloud {
        positions: points.iter().map(|p| p.0).collect(),
        features: Tensor::full([n, 1], 1.0),
        point_labels: Some(points.iter().map(|p| p.1).collect()),
        num_classes: SCENE_CLASSES,
        objects: objects.into_iter().map(|(_, o)| o).collect(),
    };
    cloud.validate()?;
    Ok(cloud)
}

/// Seed of the `index`-th scene of a dataset (splitmix64 of the pair).
pub fn scene_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `count` scenes seeded from `spec.seed`. Single-object datasets cycle
/// through the shape vocabulary so classes stay balanced.
pub fn generate_dataset(spec: &SceneSpec, count: usize) -> Result<Vec<PointCloud>> {
    (0..count)
        .map(|i| {
            let s = SceneSpec {
                seed: scene_seed(spec.seed, i as u64),
                ..spec.clone()
            };
            if spec.num_objects == 1 {
                let shape = [spec.shapes[i % spec.shapes.len()]];
                generate_scene_with(&s, Some(&shape))
            } else {
                generate_scene(&s)
            }
        })
        .collect()
}

pub const SCENE_EXTENSION: &str = "scene";

/// Writes `scene_00000.scene`, `scene_00001.scene`, ... into `dir`,
/// creating it if needed.
pub fn save_dataset(dataset: &[PointCloud], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (i, cloud) in dataset.iter().enumerate() {
        save_scene_file(cloud, dir.join(format!("scene_{i:05}.{SCENE_EXTENSION}")))?;
    }
    Ok(())
}

/// Loads every `*.scene` file of `dir` in file-name order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<PointCloud>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == SCENE_EXTENSION));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no .{SCENE_EXTENSION} files in {}", dir.as_ref().display())));
    }
    paths.iter().map(|p| Ok(load_scene_file(p)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_objects_means_all_background() {
        let spec = SceneSpec {
            num_objects: 0,
            num_points: 64,
            ..SceneSpec::default()
        };
        let pc = generate_scene(&spec).unwrap();
        assert!(pc.objects.is_empty());
        assert!(pc.point_labels.unwrap().iter().all(|&l| l == BACKGROUND_LABEL));
    }

    #[test]
    fn unit_box_points_lie_on_faces() {
        let spec = SceneSpec {
            num_points: 500,
            shapes: vec![Shape::Box],
            extent_min: 1.0,
            extent_max: 1.0,
            scene_size: 1.0,
            ..SceneSpec::default()
        };
        let pc = generate_scene(&spec).unwrap();
        assert_eq!(pc.objects[0].center, [0.0; 3]);
        for p in &pc.positions {
            let m = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!((m - 0.5).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec {
            num_objects: 3,
            clutter_fraction: 0.25,
            noise_sigma: 0.01,
            scene_size: 30.0,
            seed: 17,
            ..SceneSpec::default()
        };
        assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
    }

    #[test]
    fn objects_do_not_overlap_and_labels_match() {
        let spec = SceneSpec {
            num_points: 300,
            num_objects: 4,
            clutter_fraction: 0.2,
            scene_size: 30.0,
            seed: 3,
            ..SceneSpec::default()
        };
        let pc = generate_scene(&spec).unwrap();
        for (i, a) in pc.objects.iter().enumerate() {
            for b in &pc.objects[i + 1..] {
                assert!(!overlaps(&a.center, &a.extent, &b.center, &b.extent));
            }
        }
        let labels = pc.point_labels.as_ref().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == BACKGROUND_LABEL).count(), 60);
        for (p, &l) in pc.positions.iter().zip(labels) {
            if l != BACKGROUND_LABEL {
                assert!(pc.objects.iter().any(|o| o.class_id + 1 == l && o.contains(p, 1e-9)));
            }
        }
    }

    #[test]
    fn impossible_placement_is_an_error() {
        let spec = SceneSpec {
            num_objects: 2,
            extent_min: 1.0,
            extent_max: 1.0,
            scene_size: 1.0,
            ..SceneSpec::default()
        };
        assert!(matches!(generate_scene(&spec), Err(Error::Data(_))));
    }

    #[test]
    fn dataset_is_balanced() {
        let spec = SceneSpec {
            num_points: 16,
            ..SceneSpec::default()
        };
        let ds = generate_dataset(&spec, 9).unwrap();
        let mut counts = [0; 3];
        for pc in &ds {
            counts[pc.objects[0].class_id] += 1;
        }
        assert_eq!(counts, [3, 3, 3]);
    }

    #[test]
    fn spec_kv_roundtrip() {
        let spec = SceneSpec {
            shapes: vec![Shape::Cylinder, Shape::Box],
            noise_sigma: 0.02,
            ..SceneSpec::default()
        };
        assert_eq!(SceneSpec::from_kv(&spec.to_kv()).unwrap(), spec);
    }
}
