//! Skorokhod problem on a polyhedral cone for piecewise-linear inputs.
//!
//! Each grid step solves the linear complementarity problem
//!
//! ```text
//! w = q + M a >= 0,   a >= 0,   a_i w_i = 0,
//! q_i = <n_i, p>,     M_ij = <n_i, d_j>,
//! ```
//!
//! and moves the unconstrained point `p` to `z = p + sum_i a_i d_i`, for
//! which `w_i = <z, n_i>`. Composing these steps along a refined grid gives
//! the constrained path `phi = psi + eta`.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{default_face_tolerance, PolyhedralCone};
use crate::linalg::{dot, norm};
use crate::lp;
use crate::rng::{fill_normal, StreamKey, StreamRng};

/// Largest face count for which the completely-S certificate is computed.
pub const CERT_FACE_LIMIT: usize = 12;

/// Relative complementarity band: `a_i <z, n_i> <= COMP_TOLERANCE_REL (1 + |p|)`.
pub const COMP_TOLERANCE_REL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CompletelyS {
    Holds,
    /// A principal submatrix (zero-based face indices) maps no nonnegative
    /// vector to a strictly positive one.
    Fails { subset: Vec<usize> },
    /// More than [`CERT_FACE_LIMIT`] faces; the certificate was not computed.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReflectionMatrix {
    n: usize,
    entries: Vec<f64>,
    pub completely_s: CompletelyS,
}

impl ReflectionMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_completely_s(&self) -> Option<bool> {
        match self.completely_s {
            CompletelyS::Holds => Some(true),
            CompletelyS::Fails { .. } => Some(false),
            CompletelyS::Skipped => None,
        }
    }
}

/// `M_ij = <n_i, d_j>` plus a brute-force completely-S certificate over all
/// principal submatrices.
pub fn reflection_matrix(cone: &PolyhedralCone) -> ReflectionMatrix {
    let n = cone.faces();
    let entries = cone.reflection_entries();
    let completely_s = if n > CERT_FACE_LIMIT {
        log::warn!("{n} faces exceed the completely-S certificate limit {CERT_FACE_LIMIT}; skipped");
        CompletelyS::Skipped
    } else {
        certify_completely_s(&entries, n)
    };
    ReflectionMatrix {
        n,
        entries,
        completely_s,
    }
}

fn certify_completely_s(m: &[f64], n: usize) -> CompletelyS {
    let mut failure = None;
    crate::linalg::for_each_subset(n, n, |subset| {
        if failure.is_none() && !is_s_matrix(m, n, subset) {
            failure = Some(subset.to_vec());
        }
    });
    match failure {
        None => CompletelyS::Holds,
        Some(subset) => CompletelyS::Fails { subset },
    }
}

/// Does some `x >= 0` satisfy `A x > 0` for the principal submatrix `A`?
/// Decided by `max t s.t. t <= (A x)_i, sum x <= 1, x, t >= 0` being positive.
fn is_s_matrix(m: &[f64], n: usize, subset: &[usize]) -> bool {
    let s = subset.len();
    let cols = s + 1;
    let rows = s + 1;
    let mut a = vec![0.0; rows * cols];
    for (r, &i) in subset.iter().enumerate() {
        for (c, &j) in subset.iter().enumerate() {
            a[r * cols + c] = -m[i * n + j];
        }
        a[r * cols + s] = 1.0;
    }
    for c in 0..s {
        a[s * cols + c] = 1.0;
    }
    let mut b = vec![0.0; rows];
    b[s] = 1.0;
    let mut obj = vec![0.0; cols];
    obj[s] = 1.0;
    lp::maximize(&a, &b, &obj, rows, cols).is_some_and(|t| t > 1e-12)
}

/// Allocation-free projected Gauss-Seidel solver for one complementarity
/// step. Sweeps faces in index order; ties resolve toward the lowest index.
#[derive(Debug, Clone)]
pub struct Projector<'a> {
    cone: &'a PolyhedralCone,
    matrix: &'a [f64],
    q: Vec<f64>,
    max_sweeps: usize,
}

impl<'a> Projector<'a> {
    pub fn new(cone: &'a PolyhedralCone, matrix: &'a ReflectionMatrix) -> Self {
        let n = cone.faces();
        Self {
            cone,
            matrix: matrix.entries(),
            q: vec![0.0; n],
            max_sweeps: 10 * n * cone.dim(),
        }
    }

    pub fn cone(&self) -> &PolyhedralCone {
        self.cone
    }

    /// On entry `z` holds the unconstrained point `p`; on exit it holds the
    /// projected point and `alpha` the per-face pushes. Returns whether any
    /// face pushed.
    pub fn project(&mut self, z: &mut [f64], alpha: &mut [f64]) -> Result<bool> {
        let n = self.q.len();
        let k = z.len();
        let mut inside = true;
        for i in 0..n {
            self.q[i] = dot(self.cone.normal(i), z);
            inside &= self.q[i] >= 0.0;
        }
        alpha.fill(0.0);
        if inside {
            return Ok(false);
        }
        let p_norm = norm(z);
        let face_tol = default_face_tolerance(z);
        let comp_tol = COMP_TOLERANCE_REL * (1.0 + p_norm);
        let m = self.matrix;

        let mut residual = f64::INFINITY;
        let mut converged = false;
        for _ in 0..self.max_sweeps.max(1) {
            for i in 0..n {
                let row = &m[i * n..(i + 1) * n];
                let w = self.q[i] + dot(row, alpha);
                alpha[i] = (alpha[i] - w / row[i]).max(0.0);
            }
            residual = 0.0;
            converged = true;
            for i in 0..n {
                let w = self.q[i] + dot(&m[i * n..(i + 1) * n], alpha);
                let bad = (-w - face_tol).max(0.0)
                    + if alpha[i] > 0.0 {
                        (w.abs() - face_tol).max(0.0) + (alpha[i] * w.abs() - comp_tol).max(0.0)
                    } else {
                        0.0
                    };
                if bad > 0.0 {
                    converged = false;
                    residual = residual.max(bad);
                }
            }
            if converged {
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                sweeps: self.max_sweeps,
                residual,
            });
        }
        for (i, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                let d = self.cone.direction(i);
                for j in 0..k {
                    z[j] += a * d[j];
                }
            }
        }
        // Final verification on the assembled point.
        for (i, &a) in alpha.iter().enumerate() {
            let w = dot(self.cone.normal(i), z);
            if w < -face_tol || a * w.abs() > comp_tol {
                return Err(Error::NoConvergence {
                    sweeps: self.max_sweeps,
                    residual: (-w).max(a * w.abs()),
                });
            }
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub z: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// One complementarity step: the point of `G` reached from `p` by pushing
/// along the reflection directions of the faces it ends on.
pub fn project_step(cone: &PolyhedralCone, matrix: &ReflectionMatrix, p: &[f64]) -> Result<Projection> {
    if p.len() != cone.dim() || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("point must be finite with the cone's dimension".into()));
    }
    let mut z = p.to_vec();
    let mut alpha = vec![0.0; cone.faces()];
    Projector::new(cone, matrix).project(&mut z, &mut alpha)?;
    Ok(Projection { z, alpha })
}

/// Continuous piecewise-linear path given by its breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewisePath {
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewisePath {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidInput("path needs matching nonempty times and values".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidInput("path must start at time 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("path times must be finite and strictly increasing".into()));
        }
        let dim = values[0].len();
        if dim == 0 || values.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidInput("path values must share a positive dimension".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("path values must be finite".into()));
        }
        Ok(Self {
            dim,
            times,
            values: values.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    /// Linear interpolation; constant extension past the last breakpoint.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let j = self.times.partition_point(|&s| s <= t);
        if j == 0 {
            return self.value(0).to_vec();
        }
        if j == self.times.len() {
            return self.value(j - 1).to_vec();
        }
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let s = (t - t0) / (t1 - t0);
        self.value(j - 1)
            .iter()
            .zip(self.value(j))
            .map(|(a, b)| a + s * (b - a))
            .collect()
    }

    /// Same path reparameterized as `t -> psi(c t)`.
    pub fn time_scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            times: self.times.iter().map(|t| t / c).collect(),
            values: self.values.clone(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            times: self.times.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Breakpoints of both paths merged, with both evaluated on the union.
    pub fn on_common_grid(&self, other: &Self) -> (Self, Self) {
        let mut times: Vec<f64> = self.times.iter().chain(&other.times).copied().collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let a = times.iter().map(|&t| self.eval(t)).collect();
        let b = times.iter().map(|&t| other.eval(t)).collect();
        (
            Self::new(times.clone(), a).expect("merged grid is valid"),
            Self::new(times, b).expect("merged grid is valid"),
        )
    }

    /// Each segment split into `ceil(len / refine)` equal pieces.
    fn refined(&self, refine: f64) -> (Vec<f64>, Vec<f64>) {
        let mut times = vec![self.times[0]];
        let mut values = self.value(0).to_vec();
        for s in 1..self.times.len() {
            let (t0, t1) = (self.times[s - 1], self.times[s]);
            let pieces = ((t1 - t0) / refine).ceil().max(1.0) as usize;
            let (a, b) = (self.value(s - 1), self.value(s));
            for j in 1..=pieces {
                if j == pieces {
                    times.push(t1);
                    values.extend_from_slice(b);
                } else {
                    let f = j as f64 / pieces as f64;
                    times.push(t0 + f * (t1 - t0));
                    values.extend(a.iter().zip(b).map(|(x, y)| x + f * (y - x)));
                }
            }
        }
        (times, values)
    }
}

/// Discrete solution `(phi, eta)` of the Skorokhod problem on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReflectedPath {
    dim: usize,
    faces: usize,
    pub times: Vec<f64>,
    /// Input values on the refined grid, row-major.
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub eta: Vec<f64>,
    /// Per-grid-time face pushes (zero at the first time), row-major `N`.
    pub pushes: Vec<f64>,
    /// Running total variation of `eta`.
    pub total_variation: Vec<f64>,
}

impl ReflectedPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phi_at(&self, j: usize) -> &[f64] {
        &self.phi[j * self.dim..(j + 1) * self.dim]
    }

    pub fn eta_at(&self, j: usize) -> &[f64] {
        &self.eta[j * self.dim..(j + 1) * self.dim]
    }

    pub fn psi_at(&self, j: usize) -> &[f64] {
        &self.psi[j * self.dim..(j + 1) * self.dim]
    }

    pub fn pushes_at(&self, j: usize) -> &[f64] {
        &self.pushes[j * self.faces..(j + 1) * self.faces]
    }

    /// Linear interpolation of `phi`.
    pub fn phi_eval(&self, t: f64) -> Vec<f64> {
        let j = self.times.partition_point(|&s| s <= t);
        if j == 0 {
            return self.phi_at(0).to_vec();
        }
        if j == self.times.len() {
            return self.phi_at(j - 1).to_vec();
        }
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let s = (t - t0) / (t1 - t0);
        self.phi_at(j - 1)
            .iter()
            .zip(self.phi_at(j))
            .map(|(a, b)| a + s * (b - a))
            .collect()
    }

    /// `max_{j,i} a_i(j) |<phi(t_j), n_i>| / (1 + |phi(t_j)|)`.
    pub fn complementarity_ratio(&self, cone: &PolyhedralCone) -> f64 {
        (0..self.len())
            .flat_map(|j| {
                let phi = self.phi_at(j);
                let scale = 1.0 + norm(phi);
                self.pushes_at(j)
                    .iter()
                    .enumerate()
                    .map(move |(i, &a)| a * dot(phi, cone.normal(i)).abs() / scale)
            })
            .fold(0.0, f64::max)
    }

    /// Most negative `<phi, n_i>` relative to the face band (positive means
    /// a violation).
    pub fn containment_violation(&self, cone: &PolyhedralCone) -> f64 {
        (0..self.len())
            .map(|j| {
                let phi = self.phi_at(j);
                -cone.min_inner(phi) - default_face_tolerance(phi)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_j |phi - psi - eta| / (1 + |phi|)`.
    pub fn decomposition_residual(&self) -> f64 {
        (0..self.len())
            .map(|j| {
                let (phi, psi, eta) = (self.phi_at(j), self.psi_at(j), self.eta_at(j));
                let r: f64 = (0..self.dim)
                    .map(|c| (phi[c] - psi[c] - eta[c]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                r / (1.0 + norm(phi))
            })
            .fold(0.0, f64::max)
    }
}

/// Solves the Skorokhod problem for `psi`, refining every segment to mesh at
/// most `refine`.
pub fn solve_sp(cone: &PolyhedralCone, psi: &PiecewisePath, refine: f64) -> Result<ReflectedPath> {
    solve_sp_with(cone, &reflection_matrix(cone), psi, refine)
}

/// [`solve_sp`] with a precomputed reflection matrix.
pub fn solve_sp_with(
    cone: &PolyhedralCone,
    matrix: &ReflectionMatrix,
    psi: &PiecewisePath,
    refine: f64,
) -> Result<ReflectedPath> {
    if psi.dim() != cone.dim() {
        return Err(Error::InvalidInput("path and cone dimensions differ".into()));
    }
    if !(refine > 0.0) {
        return Err(Error::InvalidInput("refine must be positive".into()));
    }
    let start = psi.value(0);
    let min_inner = cone.min_inner(start);
    if min_inner < -default_face_tolerance(start) {
        return Err(Error::StartOutside { min_inner });
    }
    let k = cone.dim();
    let nf = cone.faces();
    let (times, values) = psi.refined(refine);
    let steps = times.len();
    let mut phi = Vec::with_capacity(steps * k);
    let mut eta = Vec::with_capacity(steps * k);
    let mut pushes = vec![0.0; steps * nf];
    let mut total_variation = Vec::with_capacity(steps);

    let mut projector = Projector::new(cone, matrix);
    let mut z = start.to_vec();
    let mut alpha = vec![0.0; nf];
    let mut push = vec![0.0; k];
    let mut tv = 0.0;
    phi.extend_from_slice(&z);
    eta.extend(std::iter::repeat_n(0.0, k));
    total_variation.push(0.0);
    for j in 1..steps {
        for c in 0..k {
            z[c] += values[j * k + c] - values[(j - 1) * k + c];
        }
        projector.project(&mut z, &mut alpha)?;
        pushes[j * nf..(j + 1) * nf].copy_from_slice(&alpha);
        push.fill(0.0);
        for (i, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                push.iter_mut()
                    .zip(cone.direction(i))
                    .for_each(|(p, d)| *p += a * d);
            }
        }
        tv += norm(&push);
        total_variation.push(tv);
        phi.extend_from_slice(&z);
        // eta = phi - psi keeps the decomposition exact on the grid.
        eta.extend((0..k).map(|c| z[c] - values[j * k + c]));
    }
    Ok(ReflectedPath {
        dim: k,
        faces: nf,
        times,
        psi: values,
        phi,
        eta,
        pushes,
        total_variation,
    })
}

/// Explicit one-dimensional reflection at zero,
/// `phi(t) = psi(t) + max(0, max_{s <= t} -psi(s))`, evaluated at the
/// breakpoints (exact for piecewise-linear input). Returns `(phi, eta)`.
pub fn reflect_half_line(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut running = 0.0f64;
    let mut phi = Vec::with_capacity(values.len());
    let mut eta = Vec::with_capacity(values.len());
    for &v in values {
        running = running.max(-v);
        phi.push(v + running);
        eta.push(running);
    }
    (phi, eta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzProbe {
    /// Largest observed ratio `sup|G(a) - G(b)| / sup|a - b|`.
    pub k_hat: f64,
    pub pairs_used: usize,
    /// Pairs whose input distance was below `1e-12`.
    pub skipped: usize,
    /// Ascending.
    pub ratios: Vec<f64>,
    /// `(lower, upper, count)` over ten equal-width bins of `[0, k_hat]`.
    pub histogram: Vec<(f64, f64, usize)>,
}

impl LipschitzProbe {
    pub fn quantile(&self, q: f64) -> f64 {
        if self.ratios.is_empty() {
            return f64::NAN;
        }
        let idx = ((self.ratios.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
        self.ratios[idx]
    }
}

/// Empirical Lipschitz constant of the Skorokhod map over random path pairs.
/// Pair `i` draws from stream `(seed, i)`, so the probe is deterministic.
pub fn lipschitz_probe<F>(
    cone: &PolyhedralCone,
    mut pairs: F,
    n_pairs: usize,
    seed: u64,
    refine: f64,
) -> Result<LipschitzProbe>
where
    F: FnMut(&mut StreamRng) -> Result<(PiecewisePath, PiecewisePath)>,
{
    if n_pairs == 0 {
        return Err(Error::InvalidInput("n_pairs must be at least 1".into()));
    }
    let matrix = reflection_matrix(cone);
    let key = StreamKey::new(seed);
    let mut ratios = Vec::with_capacity(n_pairs);
    let mut skipped = 0;
    for i in 0..n_pairs {
        let mut rng = key.child(i as u64).rng();
        let (a, b) = pairs(&mut rng)?;
        let (a, b) = a.on_common_grid(&b);
        let input = (0..a.len())
            .map(|j| crate::linalg::dist(a.value(j), b.value(j)))
            .fold(0.0, f64::max);
        if input < 1e-12 {
            skipped += 1;
            continue;
        }
        let ra = solve_sp_with(cone, &matrix, &a, refine)?;
        let rb = solve_sp_with(cone, &matrix, &b, refine)?;
        let output = (0..ra.len())
            .map(|j| crate::linalg::dist(ra.phi_at(j), rb.phi_at(j)))
            .fold(0.0, f64::max);
        ratios.push(output / input);
    }
    ratios.sort_by(f64::total_cmp);
    let k_hat = ratios.last().copied().unwrap_or(0.0);
    let width = if k_hat > 0.0 { k_hat / 10.0 } else { 1.0 };
    let mut histogram: Vec<(f64, f64, usize)> =
        (0..10).map(|b| (b as f64 * width, (b + 1) as f64 * width, 0)).collect();
    for &r in &ratios {
        let b = ((r / width) as usize).min(9);
        histogram[b].2 += 1;
    }
    Ok(LipschitzProbe {
        k_hat,
        pairs_used: ratios.len(),
        skipped,
        ratios,
        histogram,
    })
}

/// Random piecewise-linear path on `[0, horizon]` with `segments` equal
/// segments: a projected Gaussian start followed by Gaussian increments of
/// scale `step_scale * sqrt(dt)`.
pub fn random_path<R: Rng + ?Sized>(
    rng: &mut R,
    cone: &PolyhedralCone,
    matrix: &ReflectionMatrix,
    segments: usize,
    horizon: f64,
    step_scale: f64,
) -> Result<PiecewisePath> {
    let k = cone.dim();
    let dt = horizon / segments as f64;
    let mut start = vec![0.0; k];
    fill_normal(rng, 1.0, &mut start);
    let start = project_step(cone, matrix, &start)?.z;
    let mut times = Vec::with_capacity(segments + 1);
    let mut values = Vec::with_capacity(segments + 1);
    times.push(0.0);
    values.push(start);
    let mut inc = vec![0.0; k];
    for s in 1..=segments {
        fill_normal(rng, step_scale * dt.sqrt(), &mut inc);
        let next: Vec<f64> = values[s - 1].iter().zip(&inc).map(|(v, d)| v + d).collect();
        times.push(if s == segments { horizon } else { s as f64 * dt });
        values.push(next);
    }
    PiecewisePath::new(times, values)
}

/// Pair generator for [`lipschitz_probe`]: a random path and a perturbed
/// copy whose breakpoints move by Gaussian noise of scale `perturbation`
/// (the perturbed start is projected back into the cone).
pub fn perturbed_pairs<'a>(
    cone: &'a PolyhedralCone,
    segments: usize,
    horizon: f64,
    perturbation: f64,
) -> impl FnMut(&mut StreamRng) -> Result<(PiecewisePath, PiecewisePath)> + 'a {
    let matrix = reflection_matrix(cone);
    move |rng| {
        let a = random_path(rng, cone, &matrix, segments, horizon, 1.0)?;
        let k = cone.dim();
        let mut noise = vec![0.0; k];
        let mut values = Vec::with_capacity(a.len());
        for j in 0..a.len() {
            let scale = perturbation * rng.random::<f64>();
            fill_normal(rng, scale, &mut noise);
            let v: Vec<f64> = a.value(j).iter().zip(&noise).map(|(x, e)| x + e).collect();
            values.push(if j == 0 { project_step(cone, &matrix, &v)?.z } else { v });
        }
        let b = PiecewisePath::new(a.times().to_vec(), values)?;
        Ok((a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

    fn skew() -> PolyhedralCone {
        PolyhedralCone::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2]],
        )
        .unwrap()
    }

    fn half_line() -> PolyhedralCone {
        PolyhedralCone::new(vec![vec![1.0]], vec![vec![1.0]]).unwrap()
    }

    #[test]
    fn orthant_matrix_is_identity_and_completely_s() {
        let m = reflection_matrix(&PolyhedralCone::orthant(2));
        assert_eq!(m.entries(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.completely_s, CompletelyS::Holds);
    }

    #[test]
    fn skew_matrix_entries() {
        let m = reflection_matrix(&skew());
        assert_eq!(m.get(0, 0), 1.0);
        assert!((m.get(0, 1) - FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(m.get(1, 0), 0.0);
        assert!((m.get(1, 1) - FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(m.is_completely_s(), Some(true));
    }

    #[test]
    fn crossing_directions_are_not_completely_s() {
        let s5 = 5f64.sqrt();
        let cone = PolyhedralCone::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0 / s5, -2.0 / s5], vec![-2.0 / s5, 1.0 / s5]],
        )
        .unwrap();
        let m = reflection_matrix(&cone);
        assert_eq!(m.completely_s, CompletelyS::Fails { subset: vec![0, 1] });
    }

    #[test]
    fn certificate_is_skipped_past_the_face_limit() {
        let mut normals = Vec::new();
        for i in 0..13 {
            let a = i as f64 * 0.01;
            normals.push([a.cos(), a.sin(), 0.0].iter().map(|v| v * 0.6).chain([0.8]).collect::<Vec<_>>());
        }
        let cone = PolyhedralCone::new(normals.clone(), normals).unwrap();
        assert_eq!(reflection_matrix(&cone).completely_s, CompletelyS::Skipped);
    }

    #[test]
    fn project_step_examples() {
        let orthant = PolyhedralCone::orthant(2);
        let m = reflection_matrix(&orthant);
        let p = project_step(&orthant, &m, &[-1.0, 2.0]).unwrap();
        assert_eq!(p.z, vec![0.0, 2.0]);
        assert_eq!(p.alpha, vec![1.0, 0.0]);
        let p = project_step(&orthant, &m, &[1.0, 1.0]).unwrap();
        assert_eq!(p.z, vec![1.0, 1.0]);
        assert_eq!(p.alpha, vec![0.0, 0.0]);

        let cone = skew();
        let m = reflection_matrix(&cone);
        let p = project_step(&cone, &m, &[1.0, -1.0]).unwrap();
        assert!((p.z[0] - 2.0).abs() < 1e-12 && p.z[1].abs() < 1e-12);
        assert_eq!(p.alpha[0], 0.0);
        assert!((p.alpha[1] - SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn non_completely_s_data_fails_to_converge() {
        let s5 = 5f64.sqrt();
        let cone = PolyhedralCone::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0 / s5, -2.0 / s5], vec![-2.0 / s5, 1.0 / s5]],
        )
        .unwrap();
        let m = reflection_matrix(&cone);
        assert!(matches!(
            project_step(&cone, &m, &[-1.0, -1.0]),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn half_line_matches_running_max_formula() {
        let psi = PiecewisePath::new(vec![0.0, 1.0], vec![vec![1.0], vec![-1.0]]).unwrap();
        let r = solve_sp(&half_line(), &psi, 1e-3).unwrap();
        let last = r.len() - 1;
        assert!(r.phi_at(last)[0].abs() < 1e-12);
        assert!((r.eta_at(last)[0] - 1.0).abs() < 1e-12);
        for j in 0..r.len() {
            let t = r.times[j];
            let psi_t = 1.0 - 2.0 * t;
            let oracle = psi_t + (2.0 * t - 1.0).max(0.0);
            assert!((r.phi_at(j)[0] - oracle).abs() < 1e-6);
        }
        assert!(r.total_variation.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn interior_path_is_unconstrained() {
        let psi = PiecewisePath::new(
            vec![0.0, 0.5, 1.0],
            vec![vec![1.0, 1.0], vec![2.0, 1.5], vec![1.5, 3.0]],
        )
        .unwrap();
        let r = solve_sp(&PolyhedralCone::orthant(2), &psi, 0.1).unwrap();
        assert!(r.eta.iter().all(|&e| e == 0.0));
        assert_eq!(r.phi, r.psi);
    }

    #[test]
    fn orthant_diagonal_path_reaches_vertex() {
        let psi = PiecewisePath::new(vec![0.0, 1.0], vec![vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        let r = solve_sp(&PolyhedralCone::orthant(2), &psi, 1e-3).unwrap();
        let last = r.len() - 1;
        assert!(r.phi_at(last).iter().all(|v| v.abs() < 1e-12));
        assert!(r.decomposition_residual() < 1e-15);
        assert!(r.containment_violation(&PolyhedralCone::orthant(2)) <= 0.0);
    }

    #[test]
    fn start_outside_is_rejected() {
        let psi = PiecewisePath::new(vec![0.0, 1.0], vec![vec![-1.0], vec![1.0]]).unwrap();
        assert!(matches!(solve_sp(&half_line(), &psi, 0.1), Err(Error::StartOutside { .. })));
    }

    #[test]
    fn path_validation() {
        assert!(PiecewisePath::new(vec![0.0, 0.0], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(PiecewisePath::new(vec![0.5, 1.0], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(PiecewisePath::new(vec![0.0, 1.0], vec![vec![1.0], vec![f64::NAN]]).is_err());
    }

    #[test]
    fn reflect_half_line_formula() {
        let (phi, eta) = reflect_half_line(&[1.0, -0.5, 0.5, -2.0]);
        assert_eq!(phi, vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(eta, vec![0.0, 0.5, 0.5, 2.0]);
    }

    #[test]
    fn probe_skips_identical_pairs() {
        let cone = half_line();
        let probe = lipschitz_probe(
            &cone,
            |_rng| {
                let p = PiecewisePath::new(vec![0.0, 1.0], vec![vec![1.0], vec![-1.0]])?;
                Ok((p.clone(), p))
            },
            3,
            1,
            0.01,
        )
        .unwrap();
        assert_eq!(probe.skipped, 3);
        assert_eq!(probe.k_hat, 0.0);
    }

    #[test]
    fn half_line_lipschitz_constant_is_at_most_two() {
        let cone = half_line();
        let probe = lipschitz_probe(&cone, perturbed_pairs(&cone, 20, 1.0, 0.3), 300, 9, 0.01).unwrap();
        assert!(probe.k_hat <= 2.0 + 1e-6, "k_hat {}", probe.k_hat);
        assert!(probe.k_hat > 0.5);
        assert_eq!(probe.histogram.iter().map(|h| h.2).sum::<usize>(), probe.pairs_used);
    }
}
