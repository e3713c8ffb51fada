use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// Bounded region `B`, always intersected with the cone. `B` is open: a
/// state leaves it once its boundary distance drops to zero or below.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Domain {
    /// `{ |x| < radius }`.
    Ball { radius: f64 },
    /// `{ <a_j, x> < c_j for every j }`.
    HalfSpaces { normals: Vec<Vec<f64>>, offsets: Vec<f64> },
}

impl Domain {
    pub fn ball(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidInput("ball radius must be positive".into()));
        }
        Ok(Domain::Ball { radius })
    }

    pub fn half_spaces(normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if normals.is_empty() || normals.len() != offsets.len() {
            return Err(Error::InvalidInput("half-space list needs one offset per normal".into()));
        }
        if normals.iter().any(|a| !(norm(a) > 0.0)) || offsets.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("half-space normals must be nonzero, offsets finite".into()));
        }
        Ok(Domain::HalfSpaces { normals, offsets })
    }

    /// Signed distance to the part of the boundary that is not on a cone face:
    /// positive inside, nonpositive once the state has left.
    #[inline]
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Ball { radius } => radius - norm(x),
            Domain::HalfSpaces { normals, offsets } => normals
                .iter()
                .zip(offsets)
                .map(|(a, c)| (c - dot(a, x)) / norm(a))
                .fold(f64::INFINITY, f64::min),
        }
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        self.distance_to_boundary(x) > 0.0
    }

    /// Fraction `lambda` in `(0, 1]` of the grid step from `inside` to
    /// `outside` at which the straight segment crosses the boundary, and the
    /// crossing point (placed exactly on the sphere for balls).
    pub fn crossing(&self, inside: &[f64], outside: &[f64]) -> (f64, Vec<f64>) {
        let dir: Vec<f64> = outside.iter().zip(inside).map(|(o, i)| o - i).collect();
        let lambda = match self {
            Domain::Ball { radius } => {
                // |inside + lambda dir|^2 = radius^2.
                let a = dot(&dir, &dir);
                let b = 2.0 * dot(inside, &dir);
                let c = dot(inside, inside) - radius * radius;
                if a == 0.0 {
                    1.0
                } else {
                    let disc = (b * b - 4.0 * a * c).max(0.0);
                    (-b + disc.sqrt()) / (2.0 * a)
                }
            }
            Domain::HalfSpaces { normals, offsets } => normals
                .iter()
                .zip(offsets)
                .filter_map(|(n, c)| {
                    let rate = dot(n, &dir);
                    (rate > 0.0).then(|| (c - dot(n, inside)) / rate)
                })
                .fold(1.0, f64::min),
        };
        let lambda = lambda.clamp(0.0, 1.0);
        let mut point: Vec<f64> = inside.iter().zip(&dir).map(|(i, d)| i + lambda * d).collect();
        if let Domain::Ball { radius } = self {
            let n = norm(&point);
            if n > 0.0 {
                point.iter_mut().for_each(|p| *p *= radius / n);
            }
        }
        (lambda, point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_distance_and_crossing() {
        let b = Domain::ball(1.0).unwrap();
        assert!((b.distance_to_boundary(&[0.5, 0.5]) - (1.0 - 0.5f64.sqrt())).abs() < 1e-15);
        assert!(!b.contains(&[1.0, 0.0]));
        let (lambda, p) = b.crossing(&[0.5, 0.0], &[1.5, 0.0]);
        assert!((lambda - 0.5).abs() < 1e-15);
        assert_eq!(p, vec![1.0, 0.0]);
        let (_, p) = b.crossing(&[0.6, 0.6], &[0.8, 0.7]);
        assert!((norm(&p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn half_space_distance_and_crossing() {
        let d = Domain::half_spaces(vec![vec![1.0, 0.0], vec![0.0, 2.0]], vec![1.0, 1.0]).unwrap();
        assert!((d.distance_to_boundary(&[0.2, 0.1]) - 0.4).abs() < 1e-15);
        let (lambda, p) = d.crossing(&[0.5, 0.0], &[1.5, 0.0]);
        assert!((lambda - 0.5).abs() < 1e-15);
        assert_eq!(p, vec![1.0, 0.0]);
        assert!(Domain::half_spaces(vec![vec![0.0, 0.0]], vec![1.0]).is_err());
    }
}
