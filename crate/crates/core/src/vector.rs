//! Flat parameter-delta vectors and the deterministic reductions built on them.
//!
//! Every reduction walks its inputs in the order given, so callers that pass
//! updates sorted by client id get bit-reproducible results.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GEOMEDIAN_TOL: f64 = 1e-9;
pub const GEOMEDIAN_MAX_ITER: usize = 1000;

/// A dense update (or weight) vector of fixed, non-zero dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UpdateVector(Vec<f64>);

impl TryFrom<Vec<f64>> for UpdateVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        UpdateVector::new(values)
    }
}

impl From<UpdateVector> for Vec<f64> {
    fn from(v: UpdateVector) -> Self {
        v.0
    }
}

impl UpdateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("UpdateVector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("UpdateVector::new"));
        }
        Ok(UpdateVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "UpdateVector dimension must be positive");
        UpdateVector(vec![0.0; dim])
    }

    /// Wraps values without the finiteness scan. Callers guarantee `dim > 0`.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        UpdateVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_dim(&self, other: &UpdateVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &UpdateVector) -> Result<UpdateVector> {
        self.check_dim(other)?;
        Ok(UpdateVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn try_sub(&self, other: &UpdateVector) -> Result<UpdateVector> {
        self.check_dim(other)?;
        Ok(UpdateVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    pub fn scale(&self, c: f64) -> UpdateVector {
        UpdateVector(self.0.iter().map(|a| a * c).collect())
    }

    /// `self += c * other`, in place.
    pub fn axpy(&mut self, c: f64, other: &UpdateVector) -> Result<()> {
        self.check_dim(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &UpdateVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &UpdateVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Angle between two non-zero vectors, in degrees within `[0, 180]`.
pub fn angle_degrees(a: &UpdateVector, b: &UpdateVector) -> Result<f64> {
    a.check_dim(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("angle_degrees"));
    }
    // 2 atan2(|a|b| - b|a||, |a|b| + b|a||) stays accurate near 0 and 180
    // degrees, where acos of the cosine loses half the digits.
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        let (p, q) = (x * nb, y * na);
        diff += (p - q) * (p - q);
        sum += (p + q) * (p + q);
    }
    Ok((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

fn check_same_dims(vs: &[UpdateVector], what: &'static str) -> Result<usize> {
    let first = vs.first().ok_or(Error::Empty(what))?;
    for v in &vs[1..] {
        first.check_dim(v)?;
    }
    Ok(first.dim())
}

/// Sum in list order.
pub fn sum(vs: &[UpdateVector]) -> Result<UpdateVector> {
    let dim = check_same_dims(vs, "sum")?;
    let mut acc = vec![0.0; dim];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(&v.0) {
            *a += x;
        }
    }
    Ok(UpdateVector(acc))
}

/// Coordinate mean: list-order sum divided by the count.
pub fn mean(vs: &[UpdateVector]) -> Result<UpdateVector> {
    let total = sum(vs)?;
    let n = vs.len() as f64;
    Ok(UpdateVector(total.0.into_iter().map(|x| x / n).collect()))
}

/// Median of a scalar sample; even counts take the mean of the two middle values.
pub fn median_of(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

/// Coordinate-wise median.
pub fn marginal_median(vs: &[UpdateVector]) -> Result<UpdateVector> {
    let dim = check_same_dims(vs, "marginal_median")?;
    let mut column = Vec::with_capacity(vs.len());
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        column.clear();
        column.extend(vs.iter().map(|v| v.0[j]));
        out.push(median_of(&column)?);
    }
    Ok(UpdateVector(out))
}

/// Median of the L2 norms of the inputs.
pub fn median_norm(vs: &[UpdateVector]) -> Result<f64> {
    if vs.is_empty() {
        return Err(Error::Empty("median_norm"));
    }
    let norms: Vec<f64> = vs.iter().map(UpdateVector::norm).collect();
    median_of(&norms)
}

/// Sum of Euclidean distances from `x` to every point.
pub fn sum_of_distances(x: &UpdateVector, points: &[UpdateVector]) -> Result<f64> {
    points.iter().map(|p| x.distance(p)).sum()
}

/// Geometric median by smoothed Weiszfeld iteration.
///
/// Starts from the coordinate mean. Distances are floored at
/// `1e-12 * (1 + mean pairwise distance)` so an iterate landing on a data
/// point stays well defined. Stops once the step norm drops below `tol` or
/// after `max_iter` updates.
pub fn geometric_median(points: &[UpdateVector], tol: f64, max_iter: usize) -> Result<UpdateVector> {
    let dim = check_same_dims(points, "geometric_median")?;
    if !(tol > 0.0) {
        return Err(Error::invalid(format!(
            "geometric_median tolerance must be positive, got {tol}"
        )));
    }
    let n = points.len();
    let mut x = mean(points)?;
    if n == 1 {
        return Ok(x);
    }

    let mut pair_total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            pair_total += points[i].distance(&points[j])?;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let eps = 1e-12 * (1.0 + pair_total / pairs);

    let mut num = vec![0.0; dim];
    for _ in 0..max_iter {
        num.iter_mut().for_each(|v| *v = 0.0);
        let mut den = 0.0;
        for p in points {
            let w = 1.0 / x.distance(p)?.max(eps);
            den += w;
            for (acc, v) in num.iter_mut().zip(&p.0) {
                *acc += w * v;
            }
        }
        let next = UpdateVector(num.iter().map(|v| v / den).collect());
        let step = next.distance(&x)?;
        x = next;
        if step < tol {
            break;
        }
    }
    Ok(x)
}
