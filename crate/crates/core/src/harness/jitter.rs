//! Weak-label jitter: random displacement of object centers.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scene::ObjectRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JitterDistribution {
    /// Uniform in the ball of radius `j * max_extent`.
    UniformBall,
    /// Isotropic Gaussian with sigma `j * max_extent / 2`, truncated at
    /// `j * max_extent`.
    Gaussian,
}

impl fmt::Display for JitterDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::UniformBall => "uniform-ball",
            Self::Gaussian => "gaussian",
        })
    }
}

impl FromStr for JitterDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform-ball" => Ok(Self::UniformBall),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::Config(format!("unknown jitter distribution `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterSpec {
    pub fraction: f64,
    pub distribution: JitterDistribution,
    pub seed: u64,
}

impl JitterSpec {
    pub fn new(fraction: f64, distribution: JitterDistribution, seed: u64) -> Result<Self> {
        let s = Self {
            fraction,
            distribution,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::Config(format!("jitter fraction {} is outside [0, 1]", self.fraction)));
        }
        Ok(())
    }
}

/// Displacement with `|u| <= 1` drawn from the unit-scale distribution.
/// Scaling it by `j * max_extent` gives the jitter at level `j`, so one
/// draw serves every level.
pub fn unit_displacement(distribution: JitterDistribution, rng: &mut impl Rng) -> Point {
    match distribution {
        JitterDistribution::UniformBall => loop {
            let u: Point = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            if u[0] * u[0] + u[1] * u[1] + u[2] * u[2] <= 1.0 {
                break u;
            }
        },
        JitterDistribution::Gaussian => loop {
            let u: Point = std::array::from_fn(|_| 0.5 * rng.sample::<f64, _>(StandardNormal));
            if u[0] * u[0] + u[1] * u[1] + u[2] * u[2] <= 1.0 {
                break u;
            }
        },
    }
}

/// Returns copies of `objects` with `weak_label = center + u`.
pub fn inject_jitter(objects: &[ObjectRecord], spec: &JitterSpec) -> Result<Vec<ObjectRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(objects
        .iter()
        .map(|o| {
            let u = unit_displacement(spec.distribution, &mut rng);
            let r = spec.fraction * o.max_extent();
            let mut out = o.clone();
            if spec.fraction == 0.0 {
                out.weak_label = o.center;
            } else {
                out.weak_label = std::array::from_fn(|i| o.center[i] + r * u[i]);
            }
            out
        })
        .collect())
}
