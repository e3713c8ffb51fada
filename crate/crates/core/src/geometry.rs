//! Polyhedral cones with oblique reflection data.
//!
//! A cone `G = { x : <x, n_i> >= 0, i = 0..N }` carries, for each face, a
//! unit inward normal `n_i` and a unit reflection direction `d_i` with
//! `<d_i, n_i> > 0`. The constraint cone `C = { -sum a_i d_i : a_i >= 0 }`
//! governs stability of constant-sign drifts.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, dot, norm};
use crate::simulate::DiffusionModel;

/// Relative face-activity band: `<x, n_i>` counts as zero within
/// `FACE_TOLERANCE_REL * (1 + |x|)`.
pub const FACE_TOLERANCE_REL: f64 = 1e-9;

/// Largest dimension accepted by the brute-force facet enumeration.
pub const STABILITY_DIM_LIMIT: usize = 6;

const UNIT_NORM_TOL: f64 = 1e-12;

pub fn default_face_tolerance(x: &[f64]) -> f64 {
    FACE_TOLERANCE_REL * (1.0 + norm(x))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolyhedralCone {
    dim: usize,
    /// Row-major `N x k`.
    normals: Vec<f64>,
    /// Row-major `N x k`.
    directions: Vec<f64>,
}

impl PolyhedralCone {
    /// Builds a cone from per-face normals and directions. Only shape and
    /// finiteness are checked here; see [`validate_cone`] for the standing
    /// assumptions.
    pub fn new(normals: Vec<Vec<f64>>, directions: Vec<Vec<f64>>) -> Result<Self> {
        if normals.is_empty() {
            return Err(Error::InvalidInput("cone needs at least one face".into()));
        }
        if normals.len() != directions.len() {
            return Err(Error::InvalidInput(format!(
                "{} normals but {} directions",
                normals.len(),
                directions.len()
            )));
        }
        let dim = normals[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("cone dimension must be positive".into()));
        }
        for (i, (n, d)) in normals.iter().zip(&directions).enumerate() {
            if n.len() != dim || d.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "face {i}: expected vectors of length {dim}"
                )));
            }
            if n.iter().chain(d).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("face {i}: non-finite entry")));
            }
        }
        Ok(Self {
            dim,
            normals: normals.concat(),
            directions: directions.concat(),
        })
    }

    /// Nonnegative orthant with normal reflection.
    pub fn orthant(dim: usize) -> Self {
        let eye: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(eye.clone(), eye).expect("orthant is well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn faces(&self) -> usize {
        self.normals.len() / self.dim
    }

    pub fn normal(&self, i: usize) -> &[f64] {
        &self.normals[i * self.dim..(i + 1) * self.dim]
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.directions[i * self.dim..(i + 1) * self.dim]
    }

    /// `min_i <x, n_i>`; nonnegative exactly on `G`.
    #[inline]
    pub fn min_inner(&self, x: &[f64]) -> f64 {
        self.normals
            .chunks_exact(self.dim)
            .map(|n| dot(n, x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64], tolerance: f64) -> bool {
        self.min_inner(x) >= -tolerance
    }

    /// Row-major `N x N` matrix `M_ij = <n_i, d_j>`.
    pub fn reflection_entries(&self) -> Vec<f64> {
        let n = self.faces();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = dot(self.normal(i), self.direction(j));
            }
        }
        m
    }

    pub fn normals_rows(&self) -> Vec<Vec<f64>> {
        self.normals.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn directions_rows(&self) -> Vec<Vec<f64>> {
        self.directions.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub face: Option<usize>,
    pub passed: bool,
    /// Signed slack of the check (positive is good), or the deviation for
    /// unit-norm checks.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSummary {
    pub min_diagonal: f64,
    /// Perron root of `|I - diag(M)^{-1} M|`.
    pub normalized_offdiag_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Maximizer of `min_i <x, n_i>` over the unit ball, when it certifies a
    /// nonempty interior.
    pub interior_point: Option<Vec<f64>>,
    pub interior_value: f64,
    pub spectral: SpectralSummary,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }
}

/// Runs the standing checks on a cone. Any failing check rejects the cone;
/// the error carries the full report and names the failing face.
pub fn validate_cone(cone: &PolyhedralCone) -> Result<ValidationReport> {
    let report = inspect_cone(cone);
    match report.first_failure() {
        None => Ok(report),
        Some(check) => {
            let message = match check.face {
                Some(i) => format!("check '{}' failed on face {i} (margin {:e})", check.name, check.margin),
                None => format!("check '{}' failed (margin {:e})", check.name, check.margin),
            };
            Err(Error::ConeRejected {
                face: check.face,
                message,
                report: Box::new(report),
            })
        }
    }
}

/// Same checks as [`validate_cone`] without turning failures into errors.
pub fn inspect_cone(cone: &PolyhedralCone) -> ValidationReport {
    let mut checks = Vec::new();
    for i in 0..cone.faces() {
        let dev = (norm(cone.normal(i)) - 1.0).abs();
        checks.push(Check {
            name: "unit_normal".into(),
            face: Some(i),
            passed: dev <= UNIT_NORM_TOL,
            margin: dev,
        });
    }
    for i in 0..cone.faces() {
        let dev = (norm(cone.direction(i)) - 1.0).abs();
        checks.push(Check {
            name: "unit_direction".into(),
            face: Some(i),
            passed: dev <= UNIT_NORM_TOL,
            margin: dev,
        });
    }
    for i in 0..cone.faces() {
        let m = dot(cone.direction(i), cone.normal(i));
        checks.push(Check {
            name: "direction_enters_face".into(),
            face: Some(i),
            passed: m > 0.0,
            margin: m,
        });
    }
    let (interior_point, interior_value) = match interior_certificate(cone) {
        Some(x) => {
            let v = cone.min_inner(&x);
            (Some(x), v)
        }
        None => (None, 0.0),
    };
    checks.push(Check {
        name: "nonempty_interior".into(),
        face: None,
        passed: interior_value > UNIT_NORM_TOL,
        margin: interior_value,
    });
    ValidationReport {
        checks,
        interior_point,
        interior_value,
        spectral: spectral_summary(cone),
    }
}

/// Maximizer of `min_i <x, n_i>` over the unit ball.
///
/// By minimax duality the optimal value is the distance from the origin to
/// the convex hull of the normals and the maximizer is `u / |u|` for the
/// hull's minimum-norm point `u`. That point is an affine combination of at
/// most `k` normals, so the candidates are the affine hulls of all subsets
/// of size `<= k`, each checked for feasibility and optimality.
pub fn interior_certificate(cone: &PolyhedralCone) -> Option<Vec<f64>> {
    let k = cone.dim();
    let n = cone.faces();
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = f64::INFINITY;
    linalg::for_each_subset(n, k.min(n), |subset| {
        let m = subset.len();
        // KKT system [G 1; 1' 0] [lambda; mu] = [0; 1]
        let size = m + 1;
        let mut a = vec![0.0; size * size];
        let mut rhs = vec![0.0; size];
        for (r, &i) in subset.iter().enumerate() {
            for (c, &j) in subset.iter().enumerate() {
                a[r * size + c] = dot(cone.normal(i), cone.normal(j));
            }
            a[r * size + m] = 1.0;
            a[m * size + r] = 1.0;
        }
        rhs[m] = 1.0;
        if linalg::solve(&mut a, &mut rhs, size, 1e-12).is_none() {
            return;
        }
        if rhs[..m].iter().any(|&l| l < -1e-12) {
            return;
        }
        let mut u = vec![0.0; k];
        for (r, &i) in subset.iter().enumerate() {
            u.iter_mut()
                .zip(cone.normal(i))
                .for_each(|(x, ni)| *x += rhs[r] * ni);
        }
        let uu = dot(&u, &u);
        let optimal = (0..n).all(|j| dot(&u, cone.normal(j)) >= uu - 1e-12);
        if optimal && uu.sqrt() < best_norm {
            best_norm = uu.sqrt();
            best = Some(u);
        }
    });
    let u = best?;
    if best_norm <= 1e-14 {
        return None;
    }
    Some(u.iter().map(|x| x / best_norm).collect())
}

fn spectral_summary(cone: &PolyhedralCone) -> SpectralSummary {
    let n = cone.faces();
    let m = cone.reflection_entries();
    let min_diagonal = (0..n).map(|i| m[i * n + i]).fold(f64::INFINITY, f64::min);
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        let d = m[i * n + i];
        for j in 0..n {
            if i != j {
                q[i * n + j] = if d > 0.0 { (m[i * n + j] / d).abs() } else { f64::INFINITY };
            }
        }
    }
    SpectralSummary {
        min_diagonal,
        normalized_offdiag_radius: perron_root(&q, n),
    }
}

/// Perron root of a nonnegative matrix by power iteration on `Q + I`.
fn perron_root(q: &[f64], n: usize) -> f64 {
    if q.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 1.0;
    for _ in 0..2000 {
        let mut y: Vec<f64> = (0..n)
            .map(|i| x[i] + (0..n).map(|j| q[i * n + j] * x[j]).sum::<f64>())
            .collect();
        let ny = norm(&y);
        if ny == 0.0 {
            return 0.0;
        }
        y.iter_mut().for_each(|v| *v /= ny);
        let converged = (ny - lambda).abs() < 1e-14 * ny.max(1.0);
        lambda = ny;
        x = y;
        if converged {
            break;
        }
    }
    (lambda - 1.0).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaceActivity {
    pub point: Vec<f64>,
    /// Zero-based face indices with `|<x, n_i>| <= tolerance`.
    pub active: Vec<usize>,
    pub tolerance: f64,
}

impl FaceActivity {
    pub fn is_interior(&self) -> bool {
        self.active.is_empty()
    }
}

/// Faces on which `x` lies, up to the band `tolerance`. Redundant faces are
/// reported like any other.
pub fn active_faces(cone: &PolyhedralCone, x: &[f64], tolerance: f64) -> Result<FaceActivity> {
    if x.len() != cone.dim() {
        return Err(Error::InvalidInput(format!(
            "point has length {}, cone dimension is {}",
            x.len(),
            cone.dim()
        )));
    }
    let min_inner = cone.min_inner(x);
    if min_inner < -tolerance {
        return Err(Error::OutsideCone { min_inner, tolerance });
    }
    let active = (0..cone.faces())
        .filter(|&i| dot(x, cone.normal(i)).abs() <= tolerance)
        .collect();
    Ok(FaceActivity {
        point: x.to_vec(),
        active,
        tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub v: Vec<f64>,
    /// Distance to the boundary of the constraint cone when `v` is a member,
    /// minus the distance to the cone otherwise.
    pub margin: f64,
    pub member: bool,
    /// The constraint cone has empty interior; the margin is then 0 for
    /// members.
    pub degenerate: bool,
}

/// Facial description of the constraint cone `C = cone{-d_1, ..., -d_N}`.
#[derive(Debug, Clone)]
pub struct ConstraintCone {
    dim: usize,
    generators: Vec<Vec<f64>>,
    /// Unit inward facet normals `a` with `<a, g> >= 0` for every generator.
    facets: Vec<Vec<f64>>,
    full_dimensional: bool,
}

impl ConstraintCone {
    /// Enumerates facets by scanning `(k-1)`-subsets of generators whose
    /// span is a supporting hyperplane.
    pub fn from_cone(cone: &PolyhedralCone) -> Result<Self> {
        let k = cone.dim();
        if k > STABILITY_DIM_LIMIT {
            return Err(Error::DimensionLimit {
                dim: k,
                limit: STABILITY_DIM_LIMIT,
            });
        }
        let generators: Vec<Vec<f64>> = (0..cone.faces())
            .map(|i| cone.direction(i).iter().map(|v| -v).collect())
            .collect();
        let refs: Vec<&[f64]> = generators.iter().map(Vec::as_slice).collect();
        let full_dimensional = linalg::rank(&refs, 1e-10) == k;
        let mut facets: Vec<Vec<f64>> = Vec::new();
        if full_dimensional {
            let mut consider = |normal: Vec<f64>| {
                let tol = 1e-10;
                let signs: Vec<f64> = generators.iter().map(|g| dot(&normal, g)).collect();
                let oriented = if signs.iter().all(|&s| s >= -tol) {
                    normal
                } else if signs.iter().all(|&s| s <= tol) {
                    normal.iter().map(|v| -v).collect()
                } else {
                    return;
                };
                if !facets.iter().any(|f| linalg::dist(f, &oriented) < 1e-9) {
                    facets.push(oriented);
                }
            };
            if k == 1 {
                consider(vec![1.0]);
            } else {
                linalg::for_each_subset(generators.len(), k - 1, |subset| {
                    if subset.len() != k - 1 {
                        return;
                    }
                    let vs: Vec<&[f64]> = subset.iter().map(|&i| refs[i]).collect();
                    let basis = linalg::orthonormal_basis(&vs, 1e-10);
                    if basis.len() != k - 1 {
                        return;
                    }
                    consider(linalg::complement_direction(&basis, k));
                });
            }
        }
        Ok(Self {
            dim: k,
            generators,
            facets,
            full_dimensional,
        })
    }

    pub fn is_full_dimensional(&self) -> bool {
        self.full_dimensional
    }

    pub fn facets(&self) -> &[Vec<f64>] {
        &self.facets
    }

    pub fn margin(&self, v: &[f64]) -> StabilityReport {
        let tol = 1e-12 * (1.0 + norm(v));
        let report = |margin: f64, member: bool| StabilityReport {
            v: v.to_vec(),
            margin,
            member,
            degenerate: !self.full_dimensional,
        };
        if self.full_dimensional {
            if self.facets.is_empty() {
                // C is all of R^k: no boundary.
                return report(f64::INFINITY, true);
            }
            let inside = self
                .facets
                .iter()
                .map(|a| dot(a, v))
                .fold(f64::INFINITY, f64::min);
            if inside >= -tol {
                return report(inside.max(0.0), true);
            }
            report(-self.distance(v), false)
        } else {
            let d = self.distance(v);
            if d <= tol {
                report(0.0, true)
            } else {
                report(-d, false)
            }
        }
    }

    /// Euclidean distance from `v` to the cone (nonnegative least squares by
    /// enumeration of independent generator subsets).
    pub fn distance(&self, v: &[f64]) -> f64 {
        let tol = 1e-10 * (1.0 + norm(v));
        let gens: Vec<&[f64]> = self.generators.iter().map(Vec::as_slice).collect();
        let mut best = if gens.iter().all(|g| dot(v, g) <= tol) {
            norm(v)
        } else {
            f64::INFINITY
        };
        linalg::for_each_subset(gens.len(), self.dim.min(gens.len()), |subset| {
            let sub: Vec<&[f64]> = subset.iter().map(|&i| gens[i]).collect();
            let Some(coef) = linalg::project_onto_span(&sub, v) else {
                return;
            };
            if coef.iter().any(|&c| c < -tol) {
                return;
            }
            let mut r = v.to_vec();
            for (c, g) in coef.iter().zip(&sub) {
                r.iter_mut().zip(*g).for_each(|(x, gi)| *x -= c * gi);
            }
            if gens.iter().all(|g| dot(&r, g) <= tol) {
                best = best.min(norm(&r));
            }
        });
        best
    }
}

pub fn stability_margin(cone: &PolyhedralCone, v: &[f64]) -> Result<StabilityReport> {
    Ok(ConstraintCone::from_cone(cone)?.margin(v))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftStability {
    pub stable: bool,
    pub worst_point: Vec<f64>,
    pub worst_margin: f64,
}

/// Checks `b(x)` lies `delta`-deep inside the constraint cone at every
/// sample point; reports the worst point.
pub fn check_drift_stability(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    sample_points: &[Vec<f64>],
    delta: f64,
) -> Result<DriftStability> {
    if sample_points.is_empty() {
        return Err(Error::Precondition("no sample points".into()));
    }
    let constraint = ConstraintCone::from_cone(cone)?;
    if !constraint.is_full_dimensional() {
        return Err(Error::DegenerateCone);
    }
    let mut b = vec![0.0; cone.dim()];
    let mut worst: Option<(usize, f64)> = None;
    for (i, x) in sample_points.iter().enumerate() {
        if !cone.contains(x, default_face_tolerance(x)) {
            return Err(Error::OutsideCone {
                min_inner: cone.min_inner(x),
                tolerance: default_face_tolerance(x),
            });
        }
        model.drift(x, &mut b);
        let m = constraint.margin(&b).margin;
        if worst.is_none_or(|(_, w)| m < w) {
            worst = Some((i, m));
        }
    }
    let (idx, worst_margin) = worst.expect("nonempty");
    Ok(DriftStability {
        stable: worst_margin >= delta,
        worst_point: sample_points[idx].clone(),
        worst_margin,
    })
}
