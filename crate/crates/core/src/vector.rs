//! Dense vectors and the distance functions defined over them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-dimension, finite, dense vector.
///
/// Components are kept as `f64`. Vectors that pass through a store are
/// rounded to `f32` on the way in; see [`Vector::to_stored`].
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting empty input and non-finite components.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidVector("vector must have at least one component".into()));
        }
        if let Some(pos) = components.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidVector(format!(
                "component {pos} is not finite ({})",
                components[pos]
            )));
        }
        Ok(Self(components))
    }

    pub fn from_f32(components: &[f32]) -> Result<Self> {
        Self::new(components.iter().map(|&c| f64::from(c)).collect())
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    /// Components narrowed to the 32-bit storage representation.
    ///
    /// Fails if a component overflows `f32`.
    pub fn to_f32(&self) -> Result<Vec<f32>> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let narrowed = c as f32;
                if narrowed.is_finite() {
                    Ok(narrowed)
                } else {
                    Err(Error::InvalidVector(format!("component {i} ({c}) overflows f32 storage")))
                }
            })
            .collect()
    }

    /// The exact value a store will hand back for this vector.
    pub fn to_stored(&self) -> Result<Vector> {
        Ok(Vector(self.to_f32()?.into_iter().map(f64::from).collect()))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Vector::new(value)
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Distance function used to order neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    /// `1 - cos(a, b)`.
    Cosine,
    /// `1 - dot(a, b)`; only meaningful when every vector is unit-norm.
    CosineNormalized,
    /// `sum((a_i - b_i)^2)`.
    EuclideanSquared,
}

impl DistanceMetric {
    pub const ALL: [DistanceMetric; 3] = [
        DistanceMetric::Cosine,
        DistanceMetric::CosineNormalized,
        DistanceMetric::EuclideanSquared,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::CosineNormalized => "cosine-normalized",
            DistanceMetric::EuclideanSquared => "euclidean-squared",
        }
    }

    /// Rejects vectors the metric cannot measure (zero vectors under cosine).
    pub fn validate(self, v: &Vector) -> Result<()> {
        if self == DistanceMetric::Cosine && v.is_zero() {
            return Err(Error::DegenerateVector(
                "zero vector has no direction under the cosine metric".into(),
            ));
        }
        Ok(())
    }

    /// Distance over raw slices of equal length.
    ///
    /// Hot-path variant of [`distance`]: the caller guarantees matching
    /// dimensions and, for cosine, non-zero inputs.
    #[inline]
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            DistanceMetric::Cosine => {
                let [ab, aa, bb] = lanes(a, b, |x, y| [x * y, x * x, y * y]);
                (1.0 - ab / (aa.sqrt() * bb.sqrt())).max(0.0)
            }
            DistanceMetric::CosineNormalized => (1.0 - dot(a, b)).max(0.0),
            DistanceMetric::EuclideanSquared => {
                let [d] = lanes(a, b, |x, y| {
                    let d = x - y;
                    [d * d]
                });
                d
            }
        }
    }
}

/// Sums `f` over paired components in four interleaved accumulators, so
/// the loop vectorizes. The summation order is fixed, which keeps results
/// reproducible.
#[inline(always)]
fn lanes<const N: usize>(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> [f64; N]) -> [f64; N] {
    let mut acc = [[0.0; N]; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for lane in 0..4 {
            let terms = f(x[lane], y[lane]);
            for (s, t) in acc[lane].iter_mut().zip(terms) {
                *s += t;
            }
        }
    }
    for (lane, (&x, &y)) in ra.iter().zip(rb).enumerate() {
        let terms = f(x, y);
        for (s, t) in acc[lane].iter_mut().zip(terms) {
            *s += t;
        }
    }
    let mut out = [0.0; N];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (acc[0][i] + acc[1][i]) + (acc[2][i] + acc[3][i]);
    }
    out
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(DistanceMetric::Cosine),
            "cosine-normalized" => Ok(DistanceMetric::CosineNormalized),
            "euclidean-squared" | "l2sq" => Ok(DistanceMetric::EuclideanSquared),
            other => Err(Error::InvalidConfig(format!(
                "unknown metric {other:?} (expected cosine, cosine-normalized or euclidean-squared)"
            ))),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let [d] = lanes(a, b, |x, y| [x * y]);
    d
}

/// Checked distance between two vectors.
pub fn distance(metric: DistanceMetric, a: &Vector, b: &Vector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::Dimension {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    metric.validate(a)?;
    metric.validate(b)?;
    Ok(metric.eval(a.as_slice(), b.as_slice()))
}
