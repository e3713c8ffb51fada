//! Exit times from bounded domains and exit-functional gaps between starts.
//!
//! Gaps are estimated with common random numbers: the two members of a pair
//! are driven by the same increments. A pair whose states become equal has
//! identical futures, so its difference is exactly zero and simulation of
//! that pair stops there. Pairs resolve when they coalesce or when both
//! members have exited; pairs still unresolved at the horizon are censored
//! and excluded from the gap.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::PolyhedralCone;
use crate::rng::{fill_normal, StreamKey, StreamRng};
use crate::simulate::{classify_start, fmt_f64, step_count, DiffusionModel, Domain, FlowOutcome, Scaling, Stepper};
use crate::skorokhod::{reflection_matrix, ReflectionMatrix};
use crate::stats::{linear_fit, Moments, Verdict};

/// Censoring rate at or above which slopes and verdicts are withheld.
pub const CENSOR_THRESHOLD: f64 = 0.05;

/// Horizon doublings attempted before reporting censoring.
pub const MAX_DOUBLINGS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitSample {
    pub tau: f64,
    pub exit_point: Vec<f64>,
    pub censored: bool,
}

fn check_inside(cone: &PolyhedralCone, domain: &Domain, x: &[f64]) -> Result<()> {
    if x.len() != cone.dim() || cone.min_inner(x) < -crate::geometry::default_face_tolerance(x) {
        return Err(Error::Precondition(format!("{x:?} is not a point of the cone")));
    }
    if !domain.contains(x) {
        return Err(Error::Precondition(format!("{x:?} is not inside the domain")));
    }
    Ok(())
}

/// One member of a pair: its state, previous state and exit record.
#[derive(Debug, Clone)]
struct Member {
    z: Vec<f64>,
    prev: Vec<f64>,
    exit: Option<ExitSample>,
}

impl Member {
    fn new(x: &[f64]) -> Self {
        Self {
            z: x.to_vec(),
            prev: x.to_vec(),
            exit: None,
        }
    }

    /// Steps once from time `t`; records the exit if the state leaves.
    #[inline]
    fn advance(
        &mut self,
        stepper: &mut Stepper<'_>,
        domain: &Domain,
        dw: &[f64],
        dt: f64,
        t: f64,
        alpha: &mut [f64],
    ) -> Result<()> {
        self.prev.copy_from_slice(&self.z);
        stepper.step(&mut self.z, dw, dt, alpha)?;
        if domain.distance_to_boundary(&self.z) <= 0.0 {
            let (lambda, point) = domain.crossing(&self.prev, &self.z);
            self.exit = Some(ExitSample {
                tau: t + lambda * dt,
                exit_point: point,
                censored: false,
            });
        }
        Ok(())
    }
}

/// First grid exit from `B` with the crossing refined by linear
/// interpolation; censored at the first grid time at or past `horizon`.
pub fn sample_exit(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    domain: &Domain,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    rng: &mut StreamRng,
) -> Result<ExitSample> {
    check_inside(cone, domain, x0)?;
    if !(dt > 0.0 && horizon >= dt) {
        return Err(Error::InvalidInput("need 0 < dt <= horizon".into()));
    }
    let matrix = reflection_matrix(cone);
    let mut stepper = Stepper::new(cone, &matrix, model, Scaling::original(model))?;
    let k = cone.dim();
    let mut member = Member::new(x0);
    let (mut dw, mut alpha) = (vec![0.0; k], vec![0.0; cone.faces()]);
    let sd = dt.sqrt();
    for j in 0..step_count(horizon, dt) {
        fill_normal(rng, sd, &mut dw);
        member.advance(&mut stepper, domain, &dw, dt, j as f64 * dt, &mut alpha)?;
        if let Some(exit) = member.exit {
            return Ok(exit);
        }
    }
    Ok(ExitSample {
        tau: step_count(horizon, dt) as f64 * dt,
        exit_point: member.z,
        censored: true,
    })
}

/// State of a common-random-number pair, resumable at a longer horizon.
#[derive(Debug, Clone)]
struct PairRun {
    x: Member,
    y: Member,
    steps: u64,
    coalesced: bool,
    rng: StreamRng,
}

impl PairRun {
    fn new(x: &[f64], y: &[f64], rng: StreamRng) -> Self {
        Self {
            x: Member::new(x),
            y: Member::new(y),
            steps: 0,
            coalesced: x == y,
            rng,
        }
    }

    fn resolved(&self) -> bool {
        self.coalesced || (self.x.exit.is_some() && self.y.exit.is_some())
    }

    fn run_until(&mut self, stepper: &mut Stepper<'_>, domain: &Domain, dt: f64, max_steps: u64) -> Result<()> {
        let k = self.x.z.len();
        let mut dw = vec![0.0; k];
        let mut alpha = vec![0.0; stepper.cone().faces()];
        let sd = dt.sqrt();
        while !self.resolved() && self.steps < max_steps {
            fill_normal(&mut self.rng, sd, &mut dw);
            let t = self.steps as f64 * dt;
            if self.x.exit.is_none() {
                self.x.advance(stepper, domain, &dw, dt, t, &mut alpha)?;
            }
            if self.y.exit.is_none() {
                self.y.advance(stepper, domain, &dw, dt, t, &mut alpha)?;
            }
            self.steps += 1;
            if self.x.exit.is_none() && self.y.exit.is_none() && self.x.z == self.y.z {
                self.coalesced = true;
            }
        }
        Ok(())
    }

    /// `g(x member) - g(y member)` for a resolved pair.
    fn difference(&self, g: &(dyn Fn(&ExitSample) -> f64 + Sync)) -> f64 {
        if self.coalesced {
            0.0
        } else {
            let (ex, ey) = (self.x.exit.as_ref().expect("resolved"), self.y.exit.as_ref().expect("resolved"));
            g(ex) - g(ey)
        }
    }
}

/// Inputs shared by the gap estimators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapSetup {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Number of pairs per epsilon.
    pub replicas: u64,
    pub dt: f64,
    /// Initial censoring horizon; doubled up to [`MAX_DOUBLINGS`] times.
    pub horizon: f64,
    /// Flow horizon used to certify that `x` and `y` lie in `B_0`.
    pub certify_horizon: f64,
}

impl GapSetup {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            x,
            y,
            epsilons: vec![0.4, 0.2, 0.1],
            replicas: 10_000,
            dt: 1e-3,
            horizon: 50.0,
            certify_horizon: 100.0,
        }
    }

    fn check(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Precondition("epsilon grid must be nonempty and positive".into()));
        }
        if self.replicas == 0 {
            return Err(Error::Precondition("replicas must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.horizon >= self.dt && self.certify_horizon >= self.dt) {
            return Err(Error::Precondition("need 0 < dt <= horizon".into()));
        }
        Ok(())
    }
}

/// Per-epsilon gap estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapPoint {
    pub epsilon: f64,
    pub gap: f64,
    pub stderr: f64,
    /// Signed mean of `g(x) - g(y)`.
    pub mean_difference: f64,
    pub censor_rate: f64,
    pub pairs: u64,
    pub censored: u64,
    pub coalesced: u64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GapStatus {
    Ok,
    Censoring,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapCurve {
    pub points: Vec<GapPoint>,
    pub status: GapStatus,
    /// Least-squares slope of `log gap` against `1 / eps`.
    pub slope: Option<f64>,
    pub delta1_hat: Option<f64>,
    /// Epsilons whose gap exceeded three standard errors.
    pub fit_epsilons: Vec<f64>,
    /// Largest `|g|` observed over resolved exits.
    pub max_abs_functional: f64,
}

impl GapCurve {
    /// Columns `epsilon, gap, stderr, censor_rate` plus bookkeeping.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "epsilon,gap,stderr,censor_rate,mean_difference,pairs,censored,coalesced,horizon")?;
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                fmt_f64(p.epsilon),
                fmt_f64(p.gap),
                fmt_f64(p.stderr),
                fmt_f64(p.censor_rate),
                fmt_f64(p.mean_difference),
                p.pairs,
                p.censored,
                p.coalesced,
                fmt_f64(p.horizon)
            )?;
        }
        Ok(())
    }

    /// Strictly increasing in epsilon with every step clearing `z` combined
    /// standard errors.
    pub fn strictly_ordered(&self, z: f64) -> bool {
        let mut pts: Vec<&GapPoint> = self.points.iter().collect();
        pts.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
        pts.windows(2).all(|w| {
            let combined = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            w[1].gap - w[0].gap > z * combined
        })
    }
}

/// Certifies that the flow from `x` settles inside `B` without touching its
/// boundary.
pub fn certify_b0(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    domain: &Domain,
    x: &[f64],
    t_max: f64,
    dt: f64,
) -> Result<f64> {
    let c = classify_start(cone, model, domain, x, 0.0, t_max, dt)?;
    if c.outcome != FlowOutcome::Settled || !(c.distance > 0.0) {
        return Err(Error::Precondition(format!(
            "{x:?} is not certified in B_0: flow outcome {:?}, boundary distance {:.6e}",
            c.outcome, c.distance
        )));
    }
    Ok(c.distance)
}

/// Paired-difference estimate of `E_x g - E_y g` at one epsilon.
fn paired_gap(
    cone: &PolyhedralCone,
    matrix: &ReflectionMatrix,
    model: &DiffusionModel,
    domain: &Domain,
    setup: &GapSetup,
    key: StreamKey,
    g: &(dyn Fn(&ExitSample) -> f64 + Sync),
) -> Result<(GapPoint, f64)> {
    let n = setup.replicas;
    let dt = setup.dt;
    let mut horizon = setup.horizon;
    let mut pairs: Vec<PairRun> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut pair = PairRun::new(&setup.x, &setup.y, key.child(i).rng());
            let mut stepper = Stepper::new(cone, matrix, model, Scaling::original(model))?;
            pair.run_until(&mut stepper, domain, dt, step_count(horizon, dt) as u64)?;
            Ok(pair)
        })
        .collect::<Result<_>>()?;
    let censored = |pairs: &[PairRun]| pairs.iter().filter(|p| !p.resolved()).count() as u64;
    for _ in 0..MAX_DOUBLINGS {
        if (censored(&pairs) as f64) < CENSOR_THRESHOLD * n as f64 {
            break;
        }
        // Continuing a pair on its own stream is the same as rerunning it
        // with the longer horizon.
        horizon *= 2.0;
        let limit = step_count(horizon, dt) as u64;
        pairs
            .par_iter_mut()
            .filter(|p| !p.resolved())
            .try_for_each(|p| -> Result<()> {
                let mut stepper = Stepper::new(cone, matrix, model, Scaling::original(model))?;
                p.run_until(&mut stepper, domain, dt, limit)
            })?;
    }
    let mut moments = Moments::default();
    let mut max_abs = 0.0f64;
    let mut coalesced = 0;
    for p in pairs.iter().filter(|p| p.resolved()) {
        if p.coalesced {
            coalesced += 1;
        } else {
            for e in [&p.x.exit, &p.y.exit].into_iter().flatten() {
                max_abs = max_abs.max(g(e).abs());
            }
        }
        moments.push(p.difference(g));
    }
    let censored = censored(&pairs);
    let point = GapPoint {
        epsilon: model.epsilon(),
        gap: moments.mean.abs(),
        stderr: if moments.count > 0 { moments.stderr() } else { f64::INFINITY },
        mean_difference: moments.mean,
        censor_rate: censored as f64 / n as f64,
        pairs: n,
        censored,
        coalesced,
        horizon,
    };
    Ok((point, max_abs))
}

fn gap_curve(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    domain: &Domain,
    setup: &GapSetup,
    key: StreamKey,
    g: &(dyn Fn(&ExitSample) -> f64 + Sync),
) -> Result<GapCurve> {
    setup.check()?;
    check_inside(cone, domain, &setup.x)?;
    check_inside(cone, domain, &setup.y)?;
    let flow = model.with_epsilon(0.0)?;
    certify_b0(cone, &flow, domain, &setup.x, setup.certify_horizon, setup.dt)?;
    certify_b0(cone, &flow, domain, &setup.y, setup.certify_horizon, setup.dt)?;
    let matrix = reflection_matrix(cone);
    let mut points = Vec::with_capacity(setup.epsilons.len());
    let mut max_abs = 0.0f64;
    for (ei, &eps) in setup.epsilons.iter().enumerate() {
        let m = model.with_epsilon(eps)?;
        let (point, observed) = paired_gap(cone, &matrix, &m, domain, setup, key.child(ei as u64), g)?;
        max_abs = max_abs.max(observed);
        points.push(point);
    }
    let status = if points.iter().any(|p| p.censor_rate >= CENSOR_THRESHOLD) {
        GapStatus::Censoring
    } else {
        GapStatus::Ok
    };
    let fit: Vec<&GapPoint> = points.iter().filter(|p| p.gap > 3.0 * p.stderr).collect();
    let slope = if status == GapStatus::Ok {
        let xs: Vec<f64> = fit.iter().map(|p| 1.0 / p.epsilon).collect();
        let ys: Vec<f64> = fit.iter().map(|p| p.gap.ln()).collect();
        linear_fit(&xs, &ys).map(|(_, b)| b)
    } else {
        None
    };
    Ok(GapCurve {
        fit_epsilons: fit.iter().map(|p| p.epsilon).collect(),
        points,
        status,
        slope,
        delta1_hat: slope.map(|s| -s),
        max_abs_functional: max_abs,
    })
}

/// `|E_x f(Z(tau)) - E_y f(Z(tau))|` across the epsilon grid. `f` must be
/// bounded by `bound`; every evaluated exit is checked against it.
pub fn leveling_gap(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    domain: &Domain,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    bound: f64,
    setup: &GapSetup,
    key: StreamKey,
) -> Result<GapCurve> {
    if !(bound >= 0.0 && bound.is_finite()) {
        return Err(Error::Precondition("functional bound must be finite and nonnegative".into()));
    }
    let g = |e: &ExitSample| f(&e.exit_point);
    let curve = gap_curve(cone, model, domain, setup, key, &g)?;
    if curve.max_abs_functional > bound {
        return Err(Error::Precondition(format!(
            "functional reached {:.6e}, above its declared bound {bound:.6e}",
            curve.max_abs_functional
        )));
    }
    Ok(curve)
}

/// Outcome of probing membership in the class of admissible time functionals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiClassCheck {
    pub member: bool,
    /// First probe time at which a supremum exceeded the declared bound.
    pub witness: Option<f64>,
    /// `sup |psi(t)| / (1 + log+ t)^q` over the probe grid.
    pub growth_sup: f64,
    /// `sup |psi(t) - psi(s)| / (|t - s|^m + 1)` over probe-grid pairs.
    pub increment_sup: f64,
}

/// Probe grid: `t = 0` plus 400 log-spaced points in `[1e-3, horizon]`.
fn probe_grid(horizon: f64) -> Vec<f64> {
    let n = 400;
    let (a, b) = ((1e-3f64).ln(), horizon.max(1e-3).ln());
    std::iter::once(0.0)
        .chain((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()))
        .collect()
}

/// Checks both defining suprema stay below `bound` on a log-spaced grid up
/// to `horizon`.
pub fn psi_class_check(psi: &dyn Fn(f64) -> f64, q: f64, m: f64, horizon: f64, bound: f64) -> Result<PsiClassCheck> {
    if !(q > 0.0 && q < 1.0) || !(m >= 1.0) {
        return Err(Error::Precondition(format!("need 0 < q < 1 and m >= 1, got q = {q}, m = {m}")));
    }
    let grid = probe_grid(horizon);
    let values: Vec<f64> = grid.iter().map(|&t| psi(t)).collect();
    let mut growth_sup = 0.0f64;
    let mut increment_sup = 0.0f64;
    let mut witness = None;
    for (j, (&t, &v)) in grid.iter().zip(&values).enumerate() {
        let growth = v.abs() / (1.0 + t.ln().max(0.0)).powf(q);
        growth_sup = growth_sup.max(growth);
        let inc = (0..j)
            .map(|i| (v - values[i]).abs() / ((t - grid[i]).powf(m) + 1.0))
            .fold(0.0, f64::max);
        increment_sup = increment_sup.max(inc);
        if witness.is_none() && (!(growth <= bound) || !(inc <= bound)) {
            witness = Some(t);
        }
    }
    Ok(PsiClassCheck {
        member: witness.is_none(),
        witness,
        growth_sup,
        increment_sup,
    })
}

/// Exit-time functional gaps with the boundedness verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiGap {
    pub curve: GapCurve,
    pub class_check: PsiClassCheck,
    /// Gaps may not exceed this: twice the largest gap at the two largest
    /// epsilons.
    pub limit: f64,
    pub verdict: Verdict,
}

/// `|E_x psi(tau) - E_y psi(tau)|` across the epsilon grid. The class check
/// must pass (run beforehand with [`psi_class_check`]).
pub fn psi_gap(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    domain: &Domain,
    psi: &(dyn Fn(f64) -> f64 + Sync),
    class_check: PsiClassCheck,
    setup: &GapSetup,
    key: StreamKey,
) -> Result<PsiGap> {
    if !class_check.member {
        return Err(Error::Precondition(format!(
            "psi failed the class check at t = {:?}",
            class_check.witness
        )));
    }
    let g = |e: &ExitSample| psi(e.tau);
    let curve = gap_curve(cone, model, domain, setup, key, &g)?;
    let mut by_eps: Vec<&GapPoint> = curve.points.iter().collect();
    by_eps.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    let limit = 2.0 * by_eps.iter().take(2).map(|p| p.gap).fold(0.0, f64::max);
    let verdict = if curve.status == GapStatus::Censoring {
        Verdict::Inconclusive
    } else if curve.points.iter().all(|p| p.gap <= limit) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(PsiGap {
        curve,
        class_check,
        limit,
        verdict,
    })
}

/// `psi(t) = (1 + log+ t)^power`.
pub fn log_envelope(power: f64) -> impl Fn(f64) -> f64 + Sync + Send + Clone {
    move |t: f64| (1.0 + t.ln().max(0.0)).powf(power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_stream;
    use crate::simulate::{Dispersion, Drift};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn half_line(drift: f64, eps: f64) -> (PolyhedralCone, DiffusionModel, Domain) {
        (
            PolyhedralCone::orthant(1),
            DiffusionModel::with_default_bounds(1, Drift::Constant(vec![drift]), Dispersion::Identity, eps).unwrap(),
            Domain::ball(1.0).unwrap(),
        )
    }

    #[test]
    fn exit_examples() {
        let (cone, model, domain) = half_line(-1.0, 0.0);
        let e = sample_exit(&cone, &model, &domain, &[0.5], 1e-3, 20.0, &mut seed_stream(1, 0)).unwrap();
        assert!(e.censored);
        assert!((e.tau - 20.0).abs() < 1e-9);

        let (cone, model, domain) = half_line(1.0, 0.0);
        let e = sample_exit(&cone, &model, &domain, &[0.5], 1e-3, 20.0, &mut seed_stream(1, 0)).unwrap();
        assert!(!e.censored);
        assert!((e.tau - 0.5).abs() < 1e-9, "tau {}", e.tau);
        assert_eq!(e.exit_point, vec![1.0]);

        assert!(matches!(
            sample_exit(&cone, &model, &domain, &[1.5], 1e-3, 1.0, &mut seed_stream(1, 0)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn single_exit_point_gives_exact_zero() {
        let (cone, model, domain) = half_line(-1.0, 0.4);
        let mut setup = GapSetup::new(vec![0.2], vec![0.6]);
        setup.replicas = 2000;
        setup.epsilons = vec![0.8, 0.4];
        let f = |z: &[f64]| z[0] * z[0];
        let curve = leveling_gap(&cone, &model, &domain, &f, 1.0, &setup, StreamKey::new(4)).unwrap();
        for p in &curve.points {
            assert_eq!(p.gap, 0.0);
        }
        assert!(curve.max_abs_functional > 0.0);
    }

    #[test]
    fn identical_starts_have_zero_gap_and_swap_is_symmetric() {
        let cone = PolyhedralCone::orthant(2);
        let model = DiffusionModel::with_default_bounds(
            2,
            Drift::Constant(vec![-FRAC_1_SQRT_2, -FRAC_1_SQRT_2]),
            Dispersion::Identity,
            0.8,
        )
        .unwrap();
        let domain = Domain::ball(1.0).unwrap();
        let f = |z: &[f64]| if z[0] > z[1] { 1.0 } else { 0.0 };
        let mut setup = GapSetup::new(vec![0.4, 0.1], vec![0.4, 0.1]);
        setup.epsilons = vec![0.8];
        setup.replicas = 500;
        setup.dt = 1e-2;
        let same = leveling_gap(&cone, &model, &domain, &f, 1.0, &setup, StreamKey::new(2)).unwrap();
        assert_eq!(same.points[0].gap, 0.0);
        assert_eq!(same.points[0].coalesced, 500);

        setup.y = vec![0.1, 0.4];
        let a = leveling_gap(&cone, &model, &domain, &f, 1.0, &setup, StreamKey::new(2)).unwrap();
        std::mem::swap(&mut setup.x, &mut setup.y);
        let b = leveling_gap(&cone, &model, &domain, &f, 1.0, &setup, StreamKey::new(2)).unwrap();
        assert_eq!(a.points[0].gap, b.points[0].gap);
        assert_eq!(a.points[0].mean_difference, -b.points[0].mean_difference);
        assert!(a.points[0].gap > 0.0);
    }

    #[test]
    fn undeclared_functional_bound_is_caught() {
        let (cone, model, domain) = half_line(1.0, 0.4);
        let mut setup = GapSetup::new(vec![0.2], vec![0.6]);
        setup.epsilons = vec![0.4];
        setup.replicas = 100;
        // A positive drift makes B_0 empty.
        let f = |_: &[f64]| 5.0;
        assert!(leveling_gap(&cone, &model, &domain, &f, 1.0, &setup, StreamKey::new(1)).is_err());
        let (cone, model, domain) = half_line(-1.0, 0.8);
        let mut setup = GapSetup::new(vec![0.5], vec![0.6]);
        setup.epsilons = vec![0.8];
        setup.replicas = 200;
        let err = leveling_gap(&cone, &model, &domain, &f, 1.0, &setup, StreamKey::new(1)).unwrap_err();
        assert!(err.to_string().contains("declared bound"), "{err}");
    }

    #[test]
    fn psi_class_examples() {
        let env = log_envelope(0.5);
        let c = psi_class_check(&env, 0.5, 1.0, 1e6, 10.0).unwrap();
        assert!(c.member);
        assert!((c.growth_sup - 1.0).abs() < 1e-12);
        let c = psi_class_check(&|t| t, 0.5, 1.0, 1e6, 10.0).unwrap();
        assert!(!c.member);
        let w = c.witness.unwrap();
        assert!(w > 10.0 && w < 100.0, "witness {w}");
        assert!(psi_class_check(&|_| 1.0, 0.5, 1.0, 1e6, 10.0).unwrap().member);
        assert!(psi_class_check(&|_| 1.0, 1.5, 1.0, 1e6, 10.0).is_err());
    }

    #[test]
    fn constant_psi_has_zero_gap() {
        let (cone, model, domain) = half_line(-1.0, 0.8);
        let mut setup = GapSetup::new(vec![0.2], vec![0.5]);
        setup.epsilons = vec![0.8];
        setup.replicas = 300;
        let one = |_: f64| 1.0;
        let check = psi_class_check(&one, 0.5, 1.0, 1e6, 10.0).unwrap();
        let r = psi_gap(&cone, &model, &domain, &one, check, &setup, StreamKey::new(9)).unwrap();
        assert_eq!(r.curve.points[0].gap, 0.0);
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn censoring_is_monotone_in_horizon() {
        let (cone, model, domain) = half_line(-1.0, 0.8);
        let matrix = reflection_matrix(&cone);
        let mut setup = GapSetup::new(vec![0.1], vec![0.9]);
        setup.replicas = 400;
        setup.dt = 1e-2;
        let mut last = u64::MAX;
        for h in [0.05, 0.2, 1.0] {
            setup.horizon = h;
            let m = model.with_epsilon(0.8).unwrap();
            let g = |e: &ExitSample| e.tau;
            let (p, _) = paired_gap(&cone, &matrix, &m, &domain, &setup, StreamKey::new(6), &g).unwrap();
            assert!(p.censored <= last);
            last = p.censored;
        }
    }
}
