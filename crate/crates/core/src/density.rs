//! Monte Carlo transition-density floors.
//!
//! All densities here live in the rescaled coordinates `x / eps^2`, where
//! the process is [`crate::simulate::simulate_scaled`]'s `Z^eps` and its
//! density at time `t` from `x_bar` equals `eps^{2k} p_eps(eps^2 t,
//! eps^2 x_bar, eps^2 y)`. Floors are minima of bin-averaged histogram
//! densities over target bins lying fully inside the target ball, with
//! one-sided 99% Wilson lower bounds per bin.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::PolyhedralCone;
use crate::linalg::{dist, norm};
use crate::rng::{fill_normal, par_batches, StreamKey};
use crate::simulate::{step_count, step_length, DiffusionModel, FreeStepper, Scaling, Stepper};
use crate::skorokhod::reflection_matrix;
use crate::stats::{proportion_stderr, wilson_lower, Moments, Verdict, Z_99_ONE_SIDED};

/// Smallest bin count for which a bin's lower bound is trusted.
pub const MIN_BIN_COUNT: u64 = 5;

/// Counts on a uniform grid over an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramGrid {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    bins: usize,
    counts: Vec<u64>,
    replicas: u64,
    /// Replicas not counted in any bin (outside the box or killed).
    outside: u64,
    killed: u64,
}

impl HistogramGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, bins: usize) -> Result<Self> {
        let dim = lower.len();
        if dim == 0 || upper.len() != dim || bins == 0 {
            return Err(Error::InvalidInput("histogram needs a nonempty box and at least one bin".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidInput("histogram box must have lower < upper on every axis".into()));
        }
        let cells = bins
            .checked_pow(dim as u32)
            .filter(|&c| c <= 1 << 26)
            .ok_or_else(|| Error::InvalidInput("histogram has too many bins".into()))?;
        Ok(Self {
            dim,
            lower,
            upper,
            bins,
            counts: vec![0; cells],
            replicas: 0,
            outside: 0,
            killed: 0,
        })
    }

    /// Grid over the bounding box of a ball.
    pub fn around_ball(center: &[f64], radius: f64, bins: usize) -> Result<Self> {
        Self::new(
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
            bins,
        )
    }

    /// Same box and bins, no counts.
    pub fn empty_like(&self) -> Self {
        Self {
            counts: vec![0; self.counts.len()],
            replicas: 0,
            outside: 0,
            killed: 0,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bins_per_axis(&self) -> usize {
        self.bins
    }

    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn replicas(&self) -> u64 {
        self.replicas
    }

    pub fn outside(&self) -> u64 {
        self.outside
    }

    pub fn killed(&self) -> u64 {
        self.killed
    }

    pub fn count(&self, bin: usize) -> u64 {
        self.counts[bin]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    fn width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.bins as f64
    }

    pub fn bin_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.width(a)).product()
    }

    pub fn index(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for a in 0..self.dim {
            let u = (x[a] - self.lower[a]) / (self.upper[a] - self.lower[a]);
            if !(0.0..1.0).contains(&u) {
                return None;
            }
            let c = ((u * self.bins as f64) as usize).min(self.bins - 1);
            idx += c * stride;
            stride *= self.bins;
        }
        Some(idx)
    }

    pub fn record(&mut self, x: &[f64]) {
        self.replicas += 1;
        match self.index(x) {
            Some(i) => self.counts[i] += 1,
            None => self.outside += 1,
        }
    }

    pub fn record_killed(&mut self) {
        self.replicas += 1;
        self.outside += 1;
        self.killed += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.replicas += other.replicas;
        self.outside += other.outside;
        self.killed += other.killed;
    }

    /// Per-axis cell coordinates of a bin.
    pub fn cell(&self, bin: usize) -> Vec<usize> {
        let mut rest = bin;
        (0..self.dim)
            .map(|_| {
                let c = rest % self.bins;
                rest /= self.bins;
                c
            })
            .collect()
    }

    pub fn bin_bounds(&self, bin: usize) -> (Vec<f64>, Vec<f64>) {
        let cell = self.cell(bin);
        let lo: Vec<f64> = (0..self.dim)
            .map(|a| self.lower[a] + cell[a] as f64 * self.width(a))
            .collect();
        let hi: Vec<f64> = (0..self.dim).map(|a| lo[a] + self.width(a)).collect();
        (lo, hi)
    }

    pub fn bin_center(&self, bin: usize) -> Vec<f64> {
        let (lo, hi) = self.bin_bounds(bin);
        lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Bins whose every point lies in the closed ball.
    pub fn bins_inside_ball(&self, center: &[f64], radius: f64) -> Vec<usize> {
        (0..self.num_bins())
            .filter(|&b| {
                let (lo, hi) = self.bin_bounds(b);
                // Farthest corner from the center.
                let far: f64 = (0..self.dim)
                    .map(|a| (lo[a] - center[a]).abs().max((hi[a] - center[a]).abs()).powi(2))
                    .sum::<f64>()
                    .sqrt();
                far <= radius * (1.0 + 1e-12)
            })
            .collect()
    }

    pub fn density(&self, bin: usize) -> f64 {
        if self.replicas == 0 {
            return 0.0;
        }
        self.counts[bin] as f64 / (self.replicas as f64 * self.bin_volume())
    }

    pub fn density_stderr(&self, bin: usize) -> f64 {
        proportion_stderr(self.counts[bin], self.replicas) / self.bin_volume()
    }

    /// One-sided lower confidence bound on the bin-averaged density.
    pub fn density_lower_bound(&self, bin: usize, z: f64) -> f64 {
        wilson_lower(self.counts[bin], self.replicas, z) / self.bin_volume()
    }

    /// Fraction of replicas that landed in some bin.
    pub fn captured_mass(&self) -> f64 {
        if self.replicas == 0 {
            return 0.0;
        }
        self.counts.iter().sum::<u64>() as f64 / self.replicas as f64
    }

    /// Floor statistics over `bins`.
    pub fn floor_over(&self, bins: &[usize]) -> BinFloor {
        let mut out = BinFloor {
            floor: f64::INFINITY,
            lcb99: f64::INFINITY,
            stderr: 0.0,
            min_count: u64::MAX,
            bin: usize::MAX,
            inconclusive: bins.is_empty(),
        };
        for &b in bins {
            let d = self.density(b);
            let lcb = self.density_lower_bound(b, Z_99_ONE_SIDED);
            out.floor = out.floor.min(d);
            out.min_count = out.min_count.min(self.counts[b]);
            if lcb < out.lcb99 {
                out.lcb99 = lcb;
                out.stderr = self.density_stderr(b);
                out.bin = b;
            }
        }
        if bins.is_empty() {
            out.floor = 0.0;
            out.lcb99 = 0.0;
            out.min_count = 0;
        }
        out.inconclusive |= out.min_count < MIN_BIN_COUNT;
        out
    }
}

/// Minimum over a set of bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinFloor {
    pub floor: f64,
    pub lcb99: f64,
    /// Standard error of the bin attaining the lowest bound.
    pub stderr: f64,
    pub min_count: u64,
    pub bin: usize,
    pub inconclusive: bool,
}

/// Radial bump: 1 on `B(center, inner)`, 0 off `B(center, outer)`, linear
/// in between.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
}

impl Bump {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = dist(x, &self.center);
        if d <= self.inner {
            1.0
        } else if d >= self.outer {
            0.0
        } else {
            (self.outer - d) / (self.outer - self.inner)
        }
    }
}

/// Lattice with `per_axis` points per coordinate over the bounding box of
/// `B(center, radius)`, keeping the points of the closed ball.
pub fn ball_lattice(center: &[f64], radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let k = center.len();
    if per_axis <= 1 {
        return vec![center.to_vec()];
    }
    let step = 2.0 * radius / (per_axis - 1) as f64;
    let total = per_axis.pow(k as u32);
    (0..total)
        .map(|mut i| {
            (0..k)
                .map(|a| {
                    let c = i % per_axis;
                    i /= per_axis;
                    center[a] - radius + c as f64 * step
                })
                .collect::<Vec<f64>>()
        })
        .filter(|p| dist(p, center) <= radius * (1.0 + 1e-12))
        .collect()
}

/// Default start grid: the ball lattice about the origin restricted to `G`.
pub fn cone_start_grid(cone: &PolyhedralCone, radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
    ball_lattice(&vec![0.0; cone.dim()], radius, per_axis)
        .into_iter()
        .filter(|p| cone.min_inner(p) >= -1e-12)
        .collect()
}

/// Terminal law of `Z^eps(t)` from `x_bar`, binned on `grid`'s layout.
#[allow(clippy::too_many_arguments)]
pub fn terminal_histogram(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    x_bar: &[f64],
    t: f64,
    dt: f64,
    replicas: u64,
    grid: &HistogramGrid,
    key: StreamKey,
) -> Result<HistogramGrid> {
    Ok(constrained_run(cone, model, x_bar, t, dt, replicas, grid, key, None)?.0)
}

#[allow(clippy::too_many_arguments)]
fn constrained_run(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    x_bar: &[f64],
    t: f64,
    dt: f64,
    replicas: u64,
    grid: &HistogramGrid,
    key: StreamKey,
    probe: Option<(usize, &Bump)>,
) -> Result<(HistogramGrid, Moments)> {
    if replicas == 0 {
        return Err(Error::InvalidInput("replicas must be at least 1".into()));
    }
    if !(model.epsilon() > 0.0) {
        return Err(Error::InvalidInput("the rescaled process needs epsilon > 0".into()));
    }
    if !(dt > 0.0 && t >= dt) {
        return Err(Error::InvalidInput("need 0 < dt <= t".into()));
    }
    if x_bar.len() != cone.dim() || grid.dim() != cone.dim() || cone.min_inner(x_bar) < -1e-12 {
        return Err(Error::InvalidInput("start must be a point of the cone matching the grid".into()));
    }
    let k = cone.dim();
    let matrix = reflection_matrix(cone);
    let steps = step_count(t, dt);
    let batches = par_batches(replicas, key, |count, rng| -> Result<(HistogramGrid, Moments)> {
        let mut stepper = Stepper::new(cone, &matrix, model, Scaling::rescaled(model))?;
        let mut hist = grid.empty_like();
        let mut moments = Moments::default();
        let (mut z, mut dw, mut alpha) = (vec![0.0; k], vec![0.0; k], vec![0.0; cone.faces()]);
        for _ in 0..count {
            z.copy_from_slice(x_bar);
            for j in 0..steps {
                let h = step_length(j, steps, t, dt);
                fill_normal(rng, h.sqrt(), &mut dw);
                stepper.step(&mut z, &dw, h, &mut alpha)?;
                if let Some((at, bump)) = probe {
                    if j + 1 == at {
                        moments.push(bump.eval(&z));
                    }
                }
            }
            hist.record(&z);
        }
        Ok((hist, moments))
    })?;
    let mut hist = grid.empty_like();
    let mut moments = Moments::default();
    for (h, m) in &batches {
        hist.merge(h);
        moments.merge(m);
    }
    Ok((hist, moments))
}

/// Inputs of the constrained minorization check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinorizationSetup {
    pub t1: f64,
    /// Stage-one time; stage two runs for `t1 - t2`.
    pub t2: f64,
    /// Start radius `M` (rescaled coordinates).
    pub m: f64,
    /// Target containment radius `M1`.
    pub m1: f64,
    pub x0: Vec<f64>,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    /// Radius of the target ball `E` about `x0`; defaults to `r0`.
    pub target_radius: Option<f64>,
    pub epsilons: Vec<f64>,
    /// Explicit starts; empty means the default lattice.
    pub starts: Vec<Vec<f64>>,
    pub start_points_per_axis: usize,
    pub target_bins_per_axis: usize,
    pub replicas: u64,
    pub dt: f64,
}

impl MinorizationSetup {
    /// Reference geometry with default grids.
    pub fn new(x0: Vec<f64>, radii: (f64, f64, f64), m: f64, m1: f64, t1: f64) -> Self {
        Self {
            t1,
            t2: 0.5 * t1,
            m,
            m1,
            x0,
            r0: radii.0,
            r1: radii.1,
            r2: radii.2,
            target_radius: None,
            epsilons: vec![0.4, 0.2, 0.1],
            starts: Vec::new(),
            start_points_per_axis: 9,
            target_bins_per_axis: 4,
            replicas: 10_000,
            dt: 1e-3,
        }
    }

    pub fn target_radius(&self) -> f64 {
        self.target_radius.unwrap_or(self.r0)
    }

    pub fn starts(&self, cone: &PolyhedralCone) -> Vec<Vec<f64>> {
        if self.starts.is_empty() {
            cone_start_grid(cone, self.m, self.start_points_per_axis)
        } else {
            self.starts.clone()
        }
    }

    /// Radius, containment and time-split preconditions.
    pub fn check_geometry(&self, cone: &PolyhedralCone) -> Result<()> {
        let fail = |msg: String| Err(Error::Geometry(msg));
        if self.x0.len() != cone.dim() {
            return fail("x0 must have the cone's dimension".into());
        }
        if !(0.0 < self.r0 && self.r0 < self.r1 && self.r1 < self.r2) {
            return fail(format!(
                "radius rule 0 < r0 < r1 < r2 violated (r0 = {}, r1 = {}, r2 = {})",
                self.r0, self.r1, self.r2
            ));
        }
        if !(0.0 < self.m1 && self.m1 < self.m) {
            return fail(format!("need 0 < M1 < M (M1 = {}, M = {})", self.m1, self.m));
        }
        let x0_norm = norm(&self.x0);
        if !(x0_norm < self.m1) {
            return fail(format!("need |x0| < M1 (|x0| = {x0_norm}, M1 = {})", self.m1));
        }
        let depth = cone.min_inner(&self.x0);
        if !(depth > self.r2) {
            return fail(format!(
                "ball B(x0, r2) must lie in the interior of G (distance to the faces {depth}, r2 = {})",
                self.r2
            ));
        }
        let re = self.target_radius();
        if !(re > 0.0 && re <= self.r1) {
            return fail(format!("target radius must lie in (0, r1], got {re}"));
        }
        if !(x0_norm + re <= self.m1) {
            return fail(format!("target ball B(x0, {re}) must lie in B(0, M1)"));
        }
        if !(self.t2 > 0.0 && self.t2 < self.t1) {
            return fail(format!("time split needs 0 < t2 < t1 (t1 = {}, t2 = {})", self.t1, self.t2));
        }
        if !(self.dt > 0.0 && self.dt <= self.t2 && self.dt <= self.t1 - self.t2) {
            return fail(format!("dt must be positive and at most both stage times, got {}", self.dt));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return fail("epsilon grid must be nonempty and positive".into());
        }
        if self.replicas == 0 {
            return fail("replicas must be at least 1".into());
        }
        if self.target_bins_per_axis == 0 {
            return fail("target_bins_per_axis must be positive".into());
        }
        for s in &self.starts {
            if s.len() != cone.dim() || norm(s) > self.m * (1.0 + 1e-12) || cone.min_inner(s) < -1e-12 {
                return fail(format!("start {s:?} must lie in G within B(0, M)"));
            }
        }
        Ok(())
    }
}

/// Inputs of the killed-kernel floor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KilledSetup {
    pub center: Vec<f64>,
    pub radius: f64,
    pub gamma: f64,
    pub t: f64,
    pub epsilons: Vec<f64>,
    pub starts: Vec<Vec<f64>>,
    pub start_points_per_axis: usize,
    pub target_bins_per_axis: usize,
    pub replicas: u64,
    pub dt: f64,
}

impl KilledSetup {
    pub fn new(center: Vec<f64>, radius: f64, gamma: f64, t: f64) -> Self {
        Self {
            center,
            radius,
            gamma,
            t,
            epsilons: vec![0.4, 0.2, 0.1],
            starts: Vec::new(),
            start_points_per_axis: 5,
            target_bins_per_axis: 4,
            replicas: 10_000,
            dt: 1e-3,
        }
    }

    pub fn inner_radius(&self) -> f64 {
        self.gamma * self.radius
    }

    pub fn starts(&self) -> Vec<Vec<f64>> {
        if self.starts.is_empty() {
            ball_lattice(&self.center, self.inner_radius(), self.start_points_per_axis)
        } else {
            self.starts.clone()
        }
    }

    pub fn check_geometry(&self, dim: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Geometry(msg));
        if self.center.len() != dim {
            return fail("ball center must have the model's dimension".into());
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return fail("ball radius must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.dt > 0.0 && self.dt <= self.t) {
            return fail("need 0 < dt <= t".into());
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return fail("epsilon grid must be nonempty and positive".into());
        }
        if self.replicas == 0 || self.target_bins_per_axis == 0 {
            return fail("replicas and target_bins_per_axis must be positive".into());
        }
        for s in &self.starts {
            if s.len() != dim || dist(s, &self.center) > self.inner_radius() * (1.0 + 1e-12) {
                return fail(format!("start {s:?} must lie in B(center, gamma R)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorKind {
    Minorization,
    KilledKernel,
}

/// Stage-one mass `E phi(Z^eps(t2))` under the bump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOneMass {
    pub estimate: f64,
    pub lcb99: f64,
    pub stderr: f64,
}

impl StageOneMass {
    fn from_moments(m: &Moments) -> Self {
        let stderr = m.stderr();
        Self {
            estimate: m.mean,
            lcb99: (m.mean - Z_99_ONE_SIDED * stderr).max(0.0),
            stderr,
        }
    }
}

/// One `(epsilon, start)` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloorRow {
    pub epsilon: f64,
    pub start: Vec<f64>,
    pub floor: f64,
    pub lcb99: f64,
    pub stderr: f64,
    pub min_count: u64,
    pub inconclusive: bool,
    pub killed_fraction: f64,
    pub kappa0: Option<StageOneMass>,
}

/// Summary for one epsilon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonFloor {
    pub epsilon: f64,
    pub floor: f64,
    pub lcb99: f64,
    pub stderr: f64,
    pub inconclusive: bool,
    pub worst_start: Vec<f64>,
    pub kappa0: Option<StageOneMass>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetSet {
    pub center: Vec<f64>,
    pub radius: f64,
    pub bins_per_axis: usize,
    pub bin_volume: f64,
    /// Centers of the bins lying fully inside the target ball.
    pub bin_centers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloorReport {
    pub kind: FloorKind,
    pub verdict: Verdict,
    /// Common floor: smallest lower bound across the epsilon grid.
    pub kappa_min: f64,
    pub epsilon: Vec<EpsilonFloor>,
    pub target: TargetSet,
    pub starts: Vec<Vec<f64>>,
    pub horizon: f64,
    pub dt: f64,
    pub replicas: u64,
    pub geometry: serde_json::Value,
    pub rows: Vec<FloorRow>,
}

impl FloorReport {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        kind: FloorKind,
        rows: Vec<FloorRow>,
        epsilons: &[f64],
        target: TargetSet,
        starts: Vec<Vec<f64>>,
        horizon: f64,
        dt: f64,
        replicas: u64,
        geometry: serde_json::Value,
    ) -> Self {
        let per_eps: Vec<EpsilonFloor> = epsilons
            .iter()
            .map(|&eps| {
                let mine: Vec<&FloorRow> = rows.iter().filter(|r| r.epsilon == eps).collect();
                let worst = mine
                    .iter()
                    .min_by(|a, b| a.lcb99.total_cmp(&b.lcb99))
                    .expect("one row per start");
                let kappa0 = mine
                    .iter()
                    .filter_map(|r| r.kappa0.clone())
                    .min_by(|a, b| a.lcb99.total_cmp(&b.lcb99));
                EpsilonFloor {
                    epsilon: eps,
                    floor: mine.iter().map(|r| r.floor).fold(f64::INFINITY, f64::min),
                    lcb99: worst.lcb99,
                    stderr: worst.stderr,
                    inconclusive: mine.iter().any(|r| r.inconclusive),
                    worst_start: worst.start.clone(),
                    kappa0,
                }
            })
            .collect();
        let kappa_min = per_eps.iter().map(|e| e.lcb99).fold(f64::INFINITY, f64::min);
        let verdict = if per_eps.iter().any(|e| e.inconclusive) {
            Verdict::Inconclusive
        } else if kappa_min > 0.0 {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Self {
            kind,
            verdict,
            kappa_min,
            epsilon: per_eps,
            target,
            starts,
            horizon,
            dt,
            replicas,
            geometry,
            rows,
        }
    }

    /// One row per `epsilon x start`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let k = self.target.center.len();
        let mut header = vec!["epsilon".to_string()];
        header.extend((1..=k).map(|i| format!("start{i}")));
        header.extend(
            [
                "floor",
                "lcb99",
                "stderr",
                "min_count",
                "inconclusive",
                "killed_fraction",
                "kappa0",
                "kappa0_lcb99",
            ]
            .map(String::from),
        );
        writeln!(out, "{}", header.join(","))?;
        let f = crate::simulate::fmt_f64;
        for r in &self.rows {
            let mut cells = vec![f(r.epsilon)];
            cells.extend(r.start.iter().map(|&v| f(v)));
            cells.push(f(r.floor));
            cells.push(f(r.lcb99));
            cells.push(f(r.stderr));
            cells.push(r.min_count.to_string());
            cells.push(r.inconclusive.to_string());
            cells.push(f(r.killed_fraction));
            match &r.kappa0 {
                Some(s) => {
                    cells.push(f(s.estimate));
                    cells.push(f(s.lcb99));
                }
                None => cells.extend(["".to_string(), "".to_string()]),
            }
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// The report as one stage of the two-stage bound: the stage-one mass
    /// for a minorization run, the killed floor for a killed run.
    pub fn stage(&self) -> Option<StageFloor> {
        let center = self.geometry.get("x0").or_else(|| self.geometry.get("center"))?;
        let center: Vec<f64> = serde_json::from_value(center.clone()).ok()?;
        match self.kind {
            FloorKind::Minorization => {
                let r1 = self.geometry.get("r1")?.as_f64()?;
                let stage: Vec<&StageOneMass> = self.epsilon.iter().filter_map(|e| e.kappa0.as_ref()).collect();
                let lcb = stage.iter().map(|s| s.lcb99).fold(f64::INFINITY, f64::min);
                Some(StageFloor {
                    center,
                    radius: r1,
                    estimate: stage.iter().map(|s| s.estimate).fold(f64::INFINITY, f64::min),
                    lcb99: lcb,
                    inconclusive: !(lcb > 0.0),
                })
            }
            FloorKind::KilledKernel => Some(StageFloor {
                center,
                radius: self.target.radius,
                estimate: self.epsilon.iter().map(|e| e.floor).fold(f64::INFINITY, f64::min),
                lcb99: self.kappa_min,
                inconclusive: self.verdict == Verdict::Inconclusive,
            }),
        }
    }
}

/// Constrained minorization floor over the start grid and target ball,
/// with the stage-one bump mass recorded at `t2` in the same runs.
pub fn minorization_check(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    setup: &MinorizationSetup,
    key: StreamKey,
) -> Result<FloorReport> {
    setup.check_geometry(cone)?;
    let starts = setup.starts(cone);
    if starts.is_empty() {
        return Err(Error::Geometry("start grid is empty".into()));
    }
    let re = setup.target_radius();
    let grid = HistogramGrid::around_ball(&setup.x0, re, setup.target_bins_per_axis)?;
    let target_bins = grid.bins_inside_ball(&setup.x0, re);
    if target_bins.is_empty() {
        return Err(Error::Geometry("no histogram bin lies fully inside the target ball".into()));
    }
    let bump = Bump {
        center: setup.x0.clone(),
        inner: setup.r0,
        outer: setup.r1,
    };
    let probe_step = ((setup.t2 / setup.dt).round() as usize).max(1);
    let mut rows = Vec::new();
    for (ei, &eps) in setup.epsilons.iter().enumerate() {
        let m = model.with_epsilon(eps)?;
        for (si, start) in starts.iter().enumerate() {
            let run_key = key.child(ei as u64).child(si as u64);
            let (hist, moments) = constrained_run(
                cone,
                &m,
                start,
                setup.t1,
                setup.dt,
                setup.replicas,
                &grid,
                run_key,
                Some((probe_step, &bump)),
            )?;
            let fl = hist.floor_over(&target_bins);
            rows.push(FloorRow {
                epsilon: eps,
                start: start.clone(),
                floor: fl.floor,
                lcb99: fl.lcb99,
                stderr: fl.stderr,
                min_count: fl.min_count,
                inconclusive: fl.inconclusive,
                killed_fraction: 0.0,
                kappa0: Some(StageOneMass::from_moments(&moments)),
            });
        }
    }
    let target = TargetSet {
        center: setup.x0.clone(),
        radius: re,
        bins_per_axis: setup.target_bins_per_axis,
        bin_volume: grid.bin_volume(),
        bin_centers: target_bins.iter().map(|&b| grid.bin_center(b)).collect(),
    };
    let geometry = serde_json::json!({
        "x0": setup.x0,
        "r0": setup.r0,
        "r1": setup.r1,
        "r2": setup.r2,
        "M": setup.m,
        "M1": setup.m1,
        "t1": setup.t1,
        "t2": setup.t2,
        "t3": setup.t1 - setup.t2,
        "target_radius": re,
        "stage_one_step": probe_step,
    });
    Ok(FloorReport::assemble(
        FloorKind::Minorization,
        rows,
        &setup.epsilons,
        target,
        starts,
        setup.t1,
        setup.dt,
        setup.replicas,
        geometry,
    ))
}

/// Survivor density of the unconstrained rescaled diffusion killed on its
/// first grid exit from `B(center, R)`, over bins inside `B(center, gamma R)`.
pub fn killed_kernel_floor(model: &DiffusionModel, setup: &KilledSetup, key: StreamKey) -> Result<FloorReport> {
    setup.check_geometry(model.dim())?;
    let starts = setup.starts();
    if starts.is_empty() {
        return Err(Error::Geometry("start grid is empty".into()));
    }
    let inner = setup.inner_radius();
    let grid = HistogramGrid::around_ball(&setup.center, inner, setup.target_bins_per_axis)?;
    let target_bins = grid.bins_inside_ball(&setup.center, inner);
    if target_bins.is_empty() {
        return Err(Error::Geometry("no histogram bin lies fully inside B(center, gamma R)".into()));
    }
    let mut rows = Vec::new();
    for (ei, &eps) in setup.epsilons.iter().enumerate() {
        let m = model.with_epsilon(eps)?;
        for (si, start) in starts.iter().enumerate() {
            let hist = killed_run(&m, setup, start, &grid, key.child(ei as u64).child(si as u64))?;
            let fl = hist.floor_over(&target_bins);
            rows.push(FloorRow {
                epsilon: eps,
                start: start.clone(),
                floor: fl.floor,
                lcb99: fl.lcb99,
                stderr: fl.stderr,
                min_count: fl.min_count,
                inconclusive: fl.inconclusive,
                killed_fraction: hist.killed() as f64 / hist.replicas() as f64,
                kappa0: None,
            });
        }
    }
    let target = TargetSet {
        center: setup.center.clone(),
        radius: inner,
        bins_per_axis: setup.target_bins_per_axis,
        bin_volume: grid.bin_volume(),
        bin_centers: target_bins.iter().map(|&b| grid.bin_center(b)).collect(),
    };
    let geometry = serde_json::json!({
        "center": setup.center,
        "R": setup.radius,
        "gamma": setup.gamma,
        "t": setup.t,
    });
    Ok(FloorReport::assemble(
        FloorKind::KilledKernel,
        rows,
        &setup.epsilons,
        target,
        starts,
        setup.t,
        setup.dt,
        setup.replicas,
        geometry,
    ))
}

/// Terminal histogram of the killed unconstrained rescaled diffusion.
pub fn killed_histogram(
    model: &DiffusionModel,
    setup: &KilledSetup,
    start: &[f64],
    grid: &HistogramGrid,
    key: StreamKey,
) -> Result<HistogramGrid> {
    setup.check_geometry(model.dim())?;
    killed_run(model, setup, start, grid, key)
}

fn killed_run(
    model: &DiffusionModel,
    setup: &KilledSetup,
    start: &[f64],
    grid: &HistogramGrid,
    key: StreamKey,
) -> Result<HistogramGrid> {
    let k = model.dim();
    let steps = step_count(setup.t, setup.dt);
    let (t, dt, r) = (setup.t, setup.dt, setup.radius);
    let batches = par_batches(setup.replicas, key, |count, rng| -> Result<HistogramGrid> {
        let mut stepper = FreeStepper::new(model, Scaling::rescaled(model));
        let mut hist = grid.empty_like();
        let (mut z, mut dw) = (vec![0.0; k], vec![0.0; k]);
        'replica: for _ in 0..count {
            z.copy_from_slice(start);
            for j in 0..steps {
                let h = step_length(j, steps, t, dt);
                fill_normal(rng, h.sqrt(), &mut dw);
                stepper.step(&mut z, &dw, h);
                if dist(&z, &setup.center) >= r {
                    // Keep the stream aligned with unkilled replicas.
                    for _ in j + 1..steps {
                        fill_normal(rng, 1.0, &mut dw);
                    }
                    hist.record_killed();
                    continue 'replica;
                }
            }
            hist.record(&z);
        }
        Ok(hist)
    })?;
    let mut hist = grid.empty_like();
    for h in &batches {
        hist.merge(h);
    }
    Ok(hist)
}

/// One stage of the two-stage lower bound, on the ball `B(center, radius)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageFloor {
    pub center: Vec<f64>,
    pub radius: f64,
    pub estimate: f64,
    pub lcb99: f64,
    pub inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComposedFloor {
    pub kappa: f64,
    pub lcb99: f64,
    pub verdict: Verdict,
}

/// `kappa = kappa1 * kappa0`, with the lower bounds multiplied.
pub fn chapman_floor_compose(stage1: &StageFloor, stage2: &StageFloor) -> Result<ComposedFloor> {
    let same_center = stage1.center.len() == stage2.center.len()
        && stage1
            .center
            .iter()
            .zip(&stage2.center)
            .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    if !same_center || (stage1.radius - stage2.radius).abs() > 1e-12 * (1.0 + stage1.radius) {
        return Err(Error::Incompatible(format!(
            "stage one uses B({:?}, {}), stage two B({:?}, {})",
            stage1.center, stage1.radius, stage2.center, stage2.radius
        )));
    }
    let kappa = stage1.estimate * stage2.estimate;
    let lcb99 = stage1.lcb99.max(0.0) * stage2.lcb99.max(0.0);
    let verdict = if stage1.inconclusive || stage2.inconclusive {
        Verdict::Inconclusive
    } else if lcb99 > 0.0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(ComposedFloor { kappa, lcb99, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{Dispersion, Drift};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn half_line_bm() -> (PolyhedralCone, DiffusionModel) {
        (
            PolyhedralCone::orthant(1),
            DiffusionModel::with_default_bounds(1, Drift::Zero, Dispersion::Identity, 1.0).unwrap(),
        )
    }

    #[test]
    fn grid_indexing_and_bounds() {
        let g = HistogramGrid::new(vec![0.0, 0.0], vec![1.0, 2.0], 4).unwrap();
        assert_eq!(g.num_bins(), 16);
        assert!((g.bin_volume() - 0.125).abs() < 1e-15);
        let b = g.index(&[0.3, 1.9]).unwrap();
        assert_eq!(g.cell(b), vec![1, 3]);
        let (lo, hi) = g.bin_bounds(b);
        assert_eq!(lo, vec![0.25, 1.5]);
        assert_eq!(hi, vec![0.5, 2.0]);
        assert!(g.index(&[1.0, 0.5]).is_none());
        assert!(HistogramGrid::new(vec![0.0], vec![0.0], 3).is_err());
    }

    #[test]
    fn bins_inside_ball_exclude_the_rim() {
        let g = HistogramGrid::around_ball(&[0.5, 0.5], 0.1, 4).unwrap();
        let inside = g.bins_inside_ball(&[0.5, 0.5], 0.1);
        assert_eq!(inside.len(), 4);
        for b in inside {
            let c = g.cell(b);
            assert!(c.iter().all(|&v| v == 1 || v == 2));
        }
    }

    #[test]
    fn reference_start_grid_has_seventeen_points() {
        let starts = cone_start_grid(&PolyhedralCone::orthant(2), 2.0, 9);
        assert_eq!(starts.len(), 17);
        assert!(starts.contains(&vec![2.0, 0.0]));
        assert!(starts.contains(&vec![0.0, 0.0]));
        assert_eq!(ball_lattice(&[0.0, 0.0], 0.5, 5).len(), 13);
    }

    #[test]
    fn half_line_density_matches_reflected_gaussian() {
        let (cone, model) = half_line_bm();
        let grid = HistogramGrid::new(vec![0.9], vec![1.1], 1).unwrap();
        let hist = terminal_histogram(&cone, &model, &[1.0], 1.0, 1e-3, 100_000, &grid, StreamKey::new(17)).unwrap();
        // Reflected N(1, 1) averaged over [0.9, 1.1]: numerically integrated.
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let n = 2000;
        let exact: f64 = (0..n)
            .map(|i| {
                let y = 0.9 + 0.2 * (i as f64 + 0.5) / n as f64;
                phi(y - 1.0) + phi(y + 1.0)
            })
            .sum::<f64>()
            / n as f64;
        // Point value phi(0) + phi(2) = 0.3989 + 0.0540.
        assert!((exact - 0.4529).abs() < 0.002, "{exact}");
        let d = hist.density(0);
        let radius = Z_99_ONE_SIDED * hist.density_stderr(0);
        // Euler projection bias at dt = 1e-3 is a few tenths of a percent.
        assert!((d - exact).abs() < 3.0 * radius + 0.01, "density {d}, exact {exact}");
        assert_eq!(hist.replicas(), 100_000);
        let total = hist.counts().iter().sum::<u64>() + hist.outside();
        assert_eq!(total, hist.replicas());
    }

    #[test]
    fn zero_replicas_rejected() {
        let (cone, model) = half_line_bm();
        let grid = HistogramGrid::new(vec![0.0], vec![1.0], 2).unwrap();
        assert!(terminal_histogram(&cone, &model, &[1.0], 1.0, 1e-2, 0, &grid, StreamKey::new(1)).is_err());
    }

    #[test]
    fn geometry_rules() {
        let cone = PolyhedralCone::orthant(2);
        let mut s = MinorizationSetup::new(vec![0.5, 0.5], (0.1, 0.2, 0.3), 2.0, 1.0, 1.0);
        s.check_geometry(&cone).unwrap();
        s.r0 = 0.25;
        let err = s.check_geometry(&cone).unwrap_err().to_string();
        assert!(err.contains("r0 < r1 < r2"), "{err}");
        s.r0 = 0.1;
        s.r2 = 0.6;
        assert!(s.check_geometry(&cone).is_err());
        s.r2 = 0.3;
        s.t2 = 1.0;
        assert!(s.check_geometry(&cone).is_err());
    }

    #[test]
    fn composition_arithmetic_and_compatibility() {
        let stage = |c: f64, r: f64, v: f64| StageFloor {
            center: vec![c, c],
            radius: r,
            estimate: v,
            lcb99: v,
            inconclusive: false,
        };
        let k = chapman_floor_compose(&stage(0.5, 0.2, 0.3), &stage(0.5, 0.2, 0.2)).unwrap();
        assert!((k.kappa - 0.06).abs() < 1e-15);
        assert_eq!(k.verdict, Verdict::Pass);
        let mut unsure = stage(0.5, 0.2, 0.2);
        unsure.inconclusive = true;
        let k = chapman_floor_compose(&stage(0.5, 0.2, 0.3), &unsure).unwrap();
        assert_eq!(k.verdict, Verdict::Inconclusive);
        assert!(matches!(
            chapman_floor_compose(&stage(0.5, 0.2, 0.3), &stage(0.5, 0.25, 0.3)),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn empty_target_bins_are_inconclusive() {
        let cone = PolyhedralCone::orthant(2);
        // Strong drift toward the vertex starves the target.
        let model = DiffusionModel::with_default_bounds(
            2,
            Drift::Constant(vec![-30.0 * FRAC_1_SQRT_2, -30.0 * FRAC_1_SQRT_2]),
            Dispersion::Identity,
            0.4,
        )
        .unwrap();
        let mut s = MinorizationSetup::new(vec![0.5, 0.5], (0.1, 0.2, 0.3), 2.0, 1.0, 1.0);
        s.epsilons = vec![0.4];
        s.starts = vec![vec![0.0, 0.0]];
        s.replicas = 2000;
        s.dt = 1e-2;
        let report = minorization_check(&cone, &model, &s, StreamKey::new(3)).unwrap();
        assert_eq!(report.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn killed_run_conserves_mass() {
        let model = DiffusionModel::with_default_bounds(2, Drift::Zero, Dispersion::Identity, 0.4).unwrap();
        let mut s = KilledSetup::new(vec![0.0, 0.0], 1.0, 0.5, 0.25);
        s.replicas = 5000;
        s.dt = 1e-2;
        let grid = HistogramGrid::around_ball(&s.center, 0.5, 4).unwrap();
        let h = killed_histogram(&model, &s, &[0.0, 0.0], &grid, StreamKey::new(2)).unwrap();
        assert_eq!(h.counts().iter().sum::<u64>() + h.outside(), 5000);
        assert!(h.killed() > 0);
        assert!(h.captured_mass() <= 1.0);
    }
}
