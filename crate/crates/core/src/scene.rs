//! Point cloud scenes and the line-oriented `MMASCENE` text format.
//!
//! ```text
//! MMASCENE 1
//! points N C num_classes
//! x y z f1 .. fC label            (N lines, label -1 when unlabeled)
//! objects K
//! class cx cy cz ex ey ez wx wy wz (K lines)
//! ```
//!
//! Reals are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::Point;
use crate::tensor::Tensor;

pub const SCENE_MAGIC: &str = "MMASCENE";
pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}, field `{field}`: {message}")]
    Field {
        line: usize,
        field: String,
        message: String,
    },
    #[error("unsupported scene format version `{0}`")]
    Version(String),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub class_id: usize,
    pub center: Point,
    /// Full side lengths along each axis.
    pub extent: Point,
    /// Possibly jittered center used as the training target.
    pub weak_label: Point,
}

impl ObjectRecord {
    pub fn new(class_id: usize, center: Point, extent: Point) -> Self {
        Self {
            class_id,
            center,
            extent,
            weak_label: center,
        }
    }

    pub fn max_extent(&self) -> f64 {
        self.extent.iter().copied().fold(0.0, f64::max)
    }

    /// Whether `p` lies inside the object's axis-aligned bounding box.
    pub fn contains(&self, p: &Point, margin: f64) -> bool {
        (0..3).all(|a| (p[a] - self.center[a]).abs() <= 0.5 * self.extent[a] + margin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Point>,
    /// `(N, C)` per-point features.
    pub features: Tensor,
    pub point_labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub objects: Vec<ObjectRecord>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[1]
    }

    /// Checks every structural invariant of a scene.
    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.positions.len();
        let bad = |m: String| Err(SceneError::Invalid(m));
        if n == 0 {
            return bad("scene has no points".into());
        }
        if self.features.rank() != 2 || self.features.shape()[0] != n {
            return bad(format!("features shape {:?} for {n} points", self.features.shape()));
        }
        if let Some(i) = self.positions.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return bad(format!("point {i} has a non-finite position"));
        }
        if !self.features.is_finite() {
            return bad("non-finite feature value".into());
        }
        if let Some(labels) = &self.point_labels {
            if labels.len() != n {
                return bad(format!("{} labels for {n} points", labels.len()));
            }
            if let Some(l) = labels.iter().find(|&&l| l >= self.num_classes) {
                return bad(format!("label {l} outside [0, {})", self.num_classes));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !o.extent.iter().all(|&e| e > 0.0 && e.is_finite()) {
                return bad(format!("object {i} has a non-positive extent"));
            }
            if !o.center.iter().chain(&o.weak_label).all(|v| v.is_finite()) {
                return bad(format!("object {i} has a non-finite center or weak label"));
            }
        }
        Ok(())
    }

    /// Canonical text serialization.
    pub fn to_scene_string(&self) -> String {
        let c = self.channels();
        let mut s = String::new();
        let _ = writeln!(s, "{SCENE_MAGIC} {SCENE_VERSION}");
        let _ = writeln!(s, "points {} {} {}", self.len(), c, self.num_classes);
        for (i, p) in self.positions.iter().enumerate() {
            let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
            for v in self.features.row(i) {
                let _ = write!(s, " {v}");
            }
            match &self.point_labels {
                Some(l) => {
                    let _ = writeln!(s, " {}", l[i]);
                }
                None => s.push_str(" -1\n"),
            }
        }
        let _ = writeln!(s, "objects {}", self.objects.len());
        for o in &self.objects {
            let _ = write!(s, "{}", o.class_id);
            for v in o.center.iter().chain(&o.extent).chain(&o.weak_label) {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, SceneError> {
        parse_scene(text)
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>), SceneError> {
        match self.inner.next() {
            Some((i, l)) => Ok((i + 1, l.split_whitespace().collect())),
            None => Err(SceneError::Line {
                line: 0,
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    }
}

fn field<T: std::str::FromStr>(line: usize, name: &str, raw: &str) -> Result<T, SceneError> {
    raw.parse().map_err(|_| SceneError::Field {
        line,
        field: name.to_string(),
        message: format!("cannot parse `{raw}`"),
    })
}

fn real(line: usize, name: &str, raw: &str) -> Result<f64, SceneError> {
    let v: f64 = field(line, name, raw)?;
    if !v.is_finite() {
        return Err(SceneError::Field {
            line,
            field: name.to_string(),
            message: format!("non-finite value `{raw}`"),
        });
    }
    Ok(v)
}

fn expect_len(line: usize, toks: &[&str], n: usize) -> Result<(), SceneError> {
    if toks.len() != n {
        return Err(SceneError::Line {
            line,
            message: format!("expected {n} fields, found {}", toks.len()),
        });
    }
    Ok(())
}

fn header<'a>(lines: &mut Lines<'a>, keyword: &str, count: usize) -> Result<(usize, Vec<&'a str>), SceneError> {
    let (line, toks) = lines.next(keyword)?;
    if toks.first() != Some(&keyword) {
        return Err(SceneError::Line {
            line,
            message: format!("expected `{keyword}` header"),
        });
    }
    expect_len(line, &toks, count + 1)?;
    Ok((line, toks))
}

pub fn parse_scene(text: &str) -> Result<PointCloud, SceneError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (line, toks) = lines.next("magic")?;
    if toks.first() != Some(&SCENE_MAGIC) || toks.len() != 2 {
        return Err(SceneError::Line {
            line,
            message: format!("expected `{SCENE_MAGIC} {SCENE_VERSION}`"),
        });
    }
    if toks[1] != SCENE_VERSION.to_string() {
        return Err(SceneError::Version(toks[1].to_string()));
    }

    let (line, toks) = header(&mut lines, "points", 3)?;
    let n: usize = field(line, "N", toks[1])?;
    let c: usize = field(line, "C", toks[2])?;
    let num_classes: usize = field(line, "num_classes", toks[3])?;
    if n == 0 || c == 0 {
        return Err(SceneError::Line {
            line,
            message: "point and channel counts must be positive".into(),
        });
    }

    let mut positions = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * c);
    let mut labels: Vec<i64> = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, toks) = lines.next("point row")?;
        expect_len(line, &toks, 4 + c)?;
        positions.push([real(line, "x", toks[0])?, real(line, "y", toks[1])?, real(line, "z", toks[2])?]);
        for (j, raw) in toks[3..3 + c].iter().enumerate() {
            features.push(real(line, &format!("f{}", j + 1), raw)?);
        }
        let label: i64 = field(line, "label", toks[3 + c])?;
        if label < -1 || (label >= 0 && label as usize >= num_classes) {
            return Err(SceneError::Field {
                line,
                field: "label".into(),
                message: format!("label {label} outside [0, {num_classes})"),
            });
        }
        labels.push(label);
    }
    let point_labels = if labels.iter().all(|&l| l == -1) {
        None
    } else if labels.contains(&-1) {
        return Err(SceneError::Invalid("mix of labeled and unlabeled points".into()));
    } else {
        Some(labels.into_iter().map(|l| l as usize).collect())
    };

    let (line, toks) = header(&mut lines, "objects", 1)?;
    let k: usize = field(line, "K", toks[1])?;
    const NAMES: [&str; 9] = ["cx", "cy", "cz", "ex", "ey", "ez", "wx", "wy", "wz"];
    let mut objects = Vec::with_capacity(k);
    for _ in 0..k {
        let (line, toks) = lines.next("object row")?;
        expect_len(line, &toks, 10)?;
        let class_id: usize = field(line, "class", toks[0])?;
        let mut v = [0.0; 9];
        for (i, name) in NAMES.iter().enumerate() {
            v[i] = real(line, name, toks[i + 1])?;
        }
        for (a, name) in NAMES[3..6].iter().enumerate() {
            if v[3 + a] <= 0.0 {
                return Err(SceneError::Field {
                    line,
                    field: name.to_string(),
                    message: "extent must be positive".into(),
                });
            }
        }
        objects.push(ObjectRecord {
            class_id,
            center: [v[0], v[1], v[2]],
            extent: [v[3], v[4], v[5]],
            weak_label: [v[6], v[7], v[8]],
        });
    }
    if let Some((i, l)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(SceneError::Line {
            line: i + 1,
            message: format!("trailing content `{l}`"),
        });
    }

    let cloud = PointCloud {
        positions,
        features: Tensor::new([n, c], features).expect("n*c values"),
        point_labels,
        num_classes,
        objects,
    };
    cloud.validate()?;
    Ok(cloud)
}

pub fn save_scene_file(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), SceneError> {
    cloud.validate()?;
    std::fs::write(path, cloud.to_scene_string())?;
    Ok(())
}

pub fn load_scene_file(path: impl AsRef<Path>) -> Result<PointCloud, SceneError> {
    parse_scene(&std::fs::read_to_string(path)?)
}
