//! Constrained Euler-Maruyama integration.
//!
//! One step maps `z` to `Gamma(z + b(s z) dt + c sigma(s z) dW)` where the
//! coordinate scale `s` and noise scale `c` select the process:
//!
//! | process                  | `s`      | `c`   |
//! |--------------------------|----------|-------|
//! | original, noise `eps`    | 1        | `eps` |
//! | rescaled `Z(eps^2 t)/eps^2` | `eps^2` | 1   |
//! | deterministic flow       | 1        | 0     |
//!
//! With `c = 0` the noise term is skipped entirely, so the flow is
//! bitwise independent of the increments fed to it.

mod domain;
mod io;
mod model;

pub use domain::Domain;
pub use io::fmt_f64;
pub use io::{read_increments, read_path_csv, write_increments, write_reflected_csv, write_sim_path_csv};
pub use model::{analytic_bounds, CoefficientFn, DiffusionModel, Dispersion, Drift, ModelBounds, ModelCheck};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{default_face_tolerance, PolyhedralCone};
use crate::linalg::{dist, norm};
use crate::rng::{fill_normal, StreamRng};
use crate::skorokhod::{reflection_matrix, Projection, Projector, ReflectionMatrix};

/// Rest-point threshold for the flow: speed `|dz| / dt` at or below this.
pub const REST_SPEED: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scaling {
    pub coord: f64,
    pub noise: f64,
}

impl Scaling {
    pub fn original(model: &DiffusionModel) -> Self {
        Self {
            coord: 1.0,
            noise: model.epsilon(),
        }
    }

    pub fn rescaled(model: &DiffusionModel) -> Self {
        Self {
            coord: model.epsilon() * model.epsilon(),
            noise: 1.0,
        }
    }

    pub fn flow() -> Self {
        Self { coord: 1.0, noise: 0.0 }
    }
}

/// Number of grid steps covering `[0, horizon]` with mesh `dt`; the last
/// step is shortened when `dt` does not divide the horizon.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    ((horizon / dt) - 1e-9).ceil().max(1.0) as usize
}

#[inline]
pub fn step_length(j: usize, steps: usize, horizon: f64, dt: f64) -> f64 {
    if j + 1 == steps {
        horizon - (steps - 1) as f64 * dt
    } else {
        dt
    }
}

fn check_horizon(horizon: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) || !(horizon >= dt && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "need 0 < dt <= horizon, got dt = {dt}, horizon = {horizon}"
        )));
    }
    Ok(())
}

fn check_start(cone: &PolyhedralCone, x0: &[f64]) -> Result<()> {
    if x0.len() != cone.dim() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("start point must be finite with the cone's dimension".into()));
    }
    let tol = default_face_tolerance(x0);
    if !cone.contains(x0, tol) {
        return Err(Error::OutsideCone {
            min_inner: cone.min_inner(x0),
            tolerance: tol,
        });
    }
    Ok(())
}

/// Unconstrained Euler increment `z + b(s z) dt + c sigma(s z) dW`.
pub struct FreeStepper<'a> {
    model: &'a DiffusionModel,
    scaling: Scaling,
    identity_noise: bool,
    x: Vec<f64>,
    b: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'a> FreeStepper<'a> {
    pub fn new(model: &'a DiffusionModel, scaling: Scaling) -> Self {
        let k = model.dim();
        Self {
            model,
            scaling,
            identity_noise: model.is_identity_dispersion(),
            x: vec![0.0; k],
            b: vec![0.0; k],
            sigma: vec![0.0; k * k],
        }
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn model(&self) -> &DiffusionModel {
        self.model
    }

    #[inline]
    pub fn step(&mut self, z: &mut [f64], dw: &[f64], dt: f64) {
        let k = z.len();
        let s = self.scaling.coord;
        let point: &[f64] = if s == 1.0 {
            z
        } else {
            for (x, v) in self.x.iter_mut().zip(z.iter()) {
                *x = s * v;
            }
            &self.x
        };
        self.model.drift(point, &mut self.b);
        let c = self.scaling.noise;
        if c != 0.0 && !self.identity_noise {
            self.model.dispersion(point, &mut self.sigma);
        }
        for i in 0..k {
            z[i] += self.b[i] * dt;
        }
        if c != 0.0 {
            if self.identity_noise {
                for i in 0..k {
                    z[i] += c * dw[i];
                }
            } else {
                for i in 0..k {
                    let row = &self.sigma[i * k..(i + 1) * k];
                    z[i] += c * crate::linalg::dot(row, dw);
                }
            }
        }
    }
}

/// Allocation-free constrained Euler stepper: a free step followed by the
/// complementarity projection.
pub struct Stepper<'a> {
    free: FreeStepper<'a>,
    projector: Projector<'a>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        cone: &'a PolyhedralCone,
        matrix: &'a ReflectionMatrix,
        model: &'a DiffusionModel,
        scaling: Scaling,
    ) -> Result<Self> {
        if model.dim() != cone.dim() {
            return Err(Error::InvalidInput("model and cone dimensions differ".into()));
        }
        Ok(Self {
            free: FreeStepper::new(model, scaling),
            projector: Projector::new(cone, matrix),
        })
    }

    pub fn scaling(&self) -> Scaling {
        self.free.scaling
    }

    pub fn model(&self) -> &DiffusionModel {
        self.free.model
    }

    pub fn cone(&self) -> &PolyhedralCone {
        self.projector.cone()
    }

    /// Advances `z` in place; `alpha` receives the face pushes. Returns
    /// whether any face pushed.
    #[inline]
    pub fn step(&mut self, z: &mut [f64], dw: &[f64], dt: f64, alpha: &mut [f64]) -> Result<bool> {
        self.free.step(z, dw, dt);
        self.projector.project(z, alpha)
    }
}

/// One constrained Euler step of the original process.
pub fn step_euler(
    cone: &PolyhedralCone,
    matrix: &ReflectionMatrix,
    model: &DiffusionModel,
    z: &[f64],
    dw: &[f64],
    dt: f64,
) -> Result<Projection> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    check_start(cone, z)?;
    if dw.len() != cone.dim() {
        return Err(Error::InvalidInput("increment has the wrong dimension".into()));
    }
    let mut stepper = Stepper::new(cone, matrix, model, Scaling::original(model))?;
    let mut next = z.to_vec();
    let mut alpha = vec![0.0; cone.faces()];
    stepper.step(&mut next, dw, dt, &mut alpha)?;
    Ok(Projection { z: next, alpha })
}

/// Simulated path on the grid `0, dt, 2 dt, ..., horizon`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimPath {
    pub dim: usize,
    pub faces: usize,
    pub dt: f64,
    pub scaling: Scaling,
    pub times: Vec<f64>,
    /// Row-major states, one row per grid time.
    pub states: Vec<f64>,
    /// Cumulative face pushes `Y`, one row of `N` per grid time.
    pub pushes: Vec<f64>,
    /// Driving increments, one row of `k` per step.
    pub increments: Vec<f64>,
}

impl SimPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn cumulative_push(&self, j: usize) -> &[f64] {
        &self.pushes[j * self.faces..(j + 1) * self.faces]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Largest `-min <Z, n_i>` beyond the face band (positive means a
    /// violation).
    pub fn containment_violation(&self, cone: &PolyhedralCone) -> f64 {
        (0..self.len())
            .map(|j| {
                let z = self.state(j);
                -cone.min_inner(z) - default_face_tolerance(z)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `|Z(T) - Z(0) - sum b dt - c sum sigma dW - D Y(T)|`, with the
    /// coefficients re-evaluated along the recorded states.
    pub fn decomposition_residual(&self, cone: &PolyhedralCone, model: &DiffusionModel) -> f64 {
        let k = self.dim;
        let steps = self.len() - 1;
        let horizon = *self.times.last().expect("nonempty");
        let mut acc = self.state(0).to_vec();
        let (mut x, mut b, mut sigma) = (vec![0.0; k], vec![0.0; k], vec![0.0; k * k]);
        for j in 0..steps {
            let z = self.state(j);
            x.iter_mut().zip(z).for_each(|(a, v)| *a = self.scaling.coord * v);
            model.drift(&x, &mut b);
            model.dispersion(&x, &mut sigma);
            let h = step_length(j, steps, horizon, self.dt);
            let dw = &self.increments[j * k..(j + 1) * k];
            for i in 0..k {
                acc[i] += b[i] * h;
                if self.scaling.noise != 0.0 {
                    acc[i] += self.scaling.noise * crate::linalg::dot(&sigma[i * k..(i + 1) * k], dw);
                }
            }
        }
        let y = self.cumulative_push(steps);
        for (i, &yi) in y.iter().enumerate() {
            acc.iter_mut().zip(cone.direction(i)).for_each(|(a, d)| *a += yi * d);
        }
        dist(self.terminal(), &acc)
    }
}

/// Runs the stepper over prescribed increments (`steps * k` values).
pub fn simulate_with_increments(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    scaling: Scaling,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    increments: Vec<f64>,
) -> Result<SimPath> {
    check_horizon(horizon, dt)?;
    check_start(cone, x0)?;
    let k = cone.dim();
    let nf = cone.faces();
    let steps = step_count(horizon, dt);
    if increments.len() != steps * k {
        return Err(Error::InvalidInput(format!(
            "expected {} increments, got {}",
            steps * k,
            increments.len()
        )));
    }
    let matrix = reflection_matrix(cone);
    let mut stepper = Stepper::new(cone, &matrix, model, scaling)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity((steps + 1) * k);
    let mut pushes = Vec::with_capacity((steps + 1) * nf);
    let mut z = x0.to_vec();
    let mut alpha = vec![0.0; nf];
    let mut y = vec![0.0; nf];
    times.push(0.0);
    states.extend_from_slice(&z);
    pushes.extend_from_slice(&y);
    for j in 0..steps {
        let h = step_length(j, steps, horizon, dt);
        stepper.step(&mut z, &increments[j * k..(j + 1) * k], h, &mut alpha)?;
        y.iter_mut().zip(&alpha).for_each(|(a, b)| *a += b);
        times.push(if j + 1 == steps { horizon } else { (j + 1) as f64 * dt });
        states.extend_from_slice(&z);
        pushes.extend_from_slice(&y);
    }
    Ok(SimPath {
        dim: k,
        faces: nf,
        dt,
        scaling,
        times,
        states,
        pushes,
        increments,
    })
}

/// Gaussian increments `N(0, h_j I)` for every step of the grid.
pub fn draw_increments(rng: &mut StreamRng, k: usize, horizon: f64, dt: f64) -> Vec<f64> {
    let steps = step_count(horizon, dt);
    let mut out = vec![0.0; steps * k];
    for j in 0..steps {
        let h = step_length(j, steps, horizon, dt);
        fill_normal(rng, h.sqrt(), &mut out[j * k..(j + 1) * k]);
    }
    out
}

/// Original process with noise scale `eps` from `x0`.
pub fn simulate_path(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut StreamRng,
) -> Result<SimPath> {
    check_horizon(horizon, dt)?;
    let increments = draw_increments(rng, cone.dim(), horizon, dt);
    simulate_with_increments(cone, model, Scaling::original(model), x0, horizon, dt, increments)
}

/// Terminal state of [`simulate_path`] without storing the path; consumes
/// the stream identically, so the result is bitwise the same.
pub fn simulate_terminal(
    cone: &PolyhedralCone,
    matrix: &ReflectionMatrix,
    model: &DiffusionModel,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    check_horizon(horizon, dt)?;
    check_start(cone, x0)?;
    let mut stepper = Stepper::new(cone, matrix, model, Scaling::original(model))?;
    let steps = step_count(horizon, dt);
    let mut z = x0.to_vec();
    let mut dw = vec![0.0; cone.dim()];
    let mut alpha = vec![0.0; cone.faces()];
    for j in 0..steps {
        let h = step_length(j, steps, horizon, dt);
        fill_normal(rng, h.sqrt(), &mut dw);
        stepper.step(&mut z, &dw, h, &mut alpha)?;
    }
    Ok(z)
}

/// Deterministic flow `xi_x(t) = Gamma(x + int b(xi))(t)`.
pub fn flow_ode(cone: &PolyhedralCone, model: &DiffusionModel, x0: &[f64], horizon: f64, dt: f64) -> Result<SimPath> {
    check_horizon(horizon, dt)?;
    let increments = vec![0.0; step_count(horizon, dt) * cone.dim()];
    simulate_with_increments(cone, model, Scaling::flow(), x0, horizon, dt, increments)
}

/// Rescaled process `Z^eps(t) = Z(eps^2 t) / eps^2` started at `x_bar`:
/// coefficients evaluated at `eps^2 z`, unit noise.
pub fn simulate_scaled(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    x_bar: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut StreamRng,
) -> Result<SimPath> {
    if !(model.epsilon() > 0.0) {
        return Err(Error::InvalidInput("the rescaled process needs epsilon > 0".into()));
    }
    check_horizon(horizon, dt)?;
    let increments = draw_increments(rng, cone.dim(), horizon, dt);
    simulate_with_increments(cone, model, Scaling::rescaled(model), x_bar, horizon, dt, increments)
}

/// Shared-noise comparison of the original and rescaled processes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingGap {
    pub epsilon: f64,
    pub dt: f64,
    /// `max_j |Z(eps^2 t_j) / eps^2 - Z^eps(t_j)|`.
    pub sup_gap: f64,
    pub steps: usize,
}

/// Draws the original increments on the grid of mesh `eps^2 dt`
/// (variance `eps^2 dt` per step), drives the original process from
/// `eps^2 x_bar` with them and the rescaled process from `x_bar` with
/// `dW / eps`, and reports the sup-distance after undoing the scaling.
pub fn coupled_scaling_gap(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    x_bar: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut StreamRng,
) -> Result<ScalingGap> {
    let eps = model.epsilon();
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("the scaling check needs epsilon > 0".into()));
    }
    check_horizon(horizon, dt)?;
    let e2 = eps * eps;
    let original_increments = draw_increments(rng, cone.dim(), e2 * horizon, e2 * dt);
    let scaled_increments: Vec<f64> = original_increments.iter().map(|w| w / eps).collect();
    let x0: Vec<f64> = x_bar.iter().map(|v| e2 * v).collect();
    let original = simulate_with_increments(
        cone,
        model,
        Scaling::original(model),
        &x0,
        e2 * horizon,
        e2 * dt,
        original_increments,
    )?;
    let scaled =
        simulate_with_increments(cone, model, Scaling::rescaled(model), x_bar, horizon, dt, scaled_increments)?;
    if original.len() != scaled.len() {
        return Err(Error::InvalidInput("scaled grids do not match".into()));
    }
    let k = cone.dim();
    let mut back = vec![0.0; k];
    let sup_gap = (0..scaled.len())
        .map(|j| {
            back.iter_mut().zip(original.state(j)).for_each(|(b, v)| *b = v / e2);
            dist(&back, scaled.state(j))
        })
        .fold(0.0, f64::max);
    Ok(ScalingGap {
        epsilon: eps,
        dt,
        sup_gap,
        steps: scaled.len() - 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowOutcome {
    /// Reached a rest point inside `B`.
    Settled,
    /// Left `B`.
    Exited,
    /// Came closer to the boundary than `gamma`; the flow was stopped there.
    BelowGamma,
    /// Neither settled nor exited by the horizon.
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartClass {
    pub in_b_gamma: bool,
    /// Minimum over the computed flow of the distance to the boundary of `B`.
    pub distance: f64,
    pub outcome: FlowOutcome,
    /// Time at which the outcome was decided.
    pub time: f64,
    pub rest_point: Option<Vec<f64>>,
}

impl StartClass {
    pub fn is_inconclusive(&self) -> bool {
        self.outcome == FlowOutcome::Horizon
    }
}

/// Follows the flow from `x0` to decide whether its orbit keeps distance
/// `gamma` from the boundary of `B`.
pub fn classify_start(
    cone: &PolyhedralCone,
    model: &DiffusionModel,
    domain: &Domain,
    x0: &[f64],
    gamma: f64,
    t_max: f64,
    dt: f64,
) -> Result<StartClass> {
    check_horizon(t_max, dt)?;
    check_start(cone, x0)?;
    if !domain.contains(x0) {
        return Err(Error::Precondition(format!("start {x0:?} is not inside the domain")));
    }
    let matrix = reflection_matrix(cone);
    let mut stepper = Stepper::new(cone, &matrix, model, Scaling::flow())?;
    let k = cone.dim();
    let zero = vec![0.0; k];
    let mut alpha = vec![0.0; cone.faces()];
    let mut z = x0.to_vec();
    let mut prev = z.clone();
    let mut min_dist = domain.distance_to_boundary(&z);
    let steps = step_count(t_max, dt);
    let decide = |outcome, distance: f64, time, rest_point| StartClass {
        in_b_gamma: outcome == FlowOutcome::Settled && distance >= gamma,
        distance,
        outcome,
        time,
        rest_point,
    };
    if min_dist < gamma {
        return Ok(decide(FlowOutcome::BelowGamma, min_dist, 0.0, None));
    }
    let mut t = 0.0;
    for j in 0..steps {
        let h = step_length(j, steps, t_max, dt);
        prev.copy_from_slice(&z);
        stepper.step(&mut z, &zero, h, &mut alpha)?;
        t = if j + 1 == steps { t_max } else { (j + 1) as f64 * dt };
        let d = domain.distance_to_boundary(&z);
        min_dist = min_dist.min(d);
        if d <= 0.0 {
            return Ok(decide(FlowOutcome::Exited, min_dist, t, None));
        }
        if min_dist < gamma {
            return Ok(decide(FlowOutcome::BelowGamma, min_dist, t, None));
        }
        if dist(&z, &prev) <= REST_SPEED * h {
            return Ok(decide(FlowOutcome::Settled, min_dist, t, Some(z)));
        }
    }
    Ok(decide(FlowOutcome::Horizon, min_dist, t, None))
}

/// Largest state norm along the path (diagnostics for output files).
pub fn max_state_norm(path: &SimPath) -> f64 {
    (0..path.len()).map(|j| norm(path.state(j))).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_stream;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn constant(b: Vec<f64>, eps: f64) -> DiffusionModel {
        let k = b.len();
        DiffusionModel::with_default_bounds(k, Drift::Constant(b), Dispersion::Identity, eps).unwrap()
    }

    fn variable(eps: f64) -> DiffusionModel {
        DiffusionModel::with_default_bounds(
            2,
            Drift::Saturating {
                base: vec![-FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
                gain: 0.5,
            },
            Dispersion::Modulated {
                matrix: vec![1.0, 0.0, 0.3, 1.0],
                amplitude: 0.25,
            },
            eps,
        )
        .unwrap()
    }

    #[test]
    fn euler_step_examples() {
        let cone = PolyhedralCone::orthant(2);
        let m = reflection_matrix(&cone);
        let flow = constant(vec![-1.0, -1.0], 0.0);
        let p = step_euler(&cone, &m, &flow, &[1.0, 1.0], &[0.3, -0.2], 0.1).unwrap();
        assert_eq!(p.z, vec![0.9, 0.9]);
        assert_eq!(p.alpha, vec![0.0, 0.0]);
        let p = step_euler(&cone, &m, &flow, &[0.05, 0.05], &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p.z, vec![0.0, 0.0]);
        assert!((p.alpha[0] - 0.05).abs() < 1e-15 && (p.alpha[1] - 0.05).abs() < 1e-15);

        let bm = DiffusionModel::with_default_bounds(2, Drift::Zero, Dispersion::Identity, 1.0).unwrap();
        let p = step_euler(&cone, &m, &bm, &[1.0, 1.0], &[-2.0, 0.0], 0.37).unwrap();
        assert_eq!(p.z, vec![0.0, 1.0]);
        assert_eq!(p.alpha, vec![1.0, 0.0]);
    }

    #[test]
    fn flow_reaches_vertex_and_stays() {
        let cone = PolyhedralCone::orthant(2);
        let model = constant(vec![-1.0, -1.0], 0.0);
        let path = flow_ode(&cone, &model, &[1.0, 1.0], 2.0, 1e-3).unwrap();
        for j in 0..path.len() {
            let t = path.times[j];
            let expected = (1.0 - t).max(0.0);
            assert!((path.state(j)[0] - expected).abs() < 1e-9, "t = {t}");
            assert_eq!(path.state(j)[0], path.state(j)[1]);
        }
        assert_eq!(path.terminal(), &[0.0, 0.0]);

        let stable = constant(vec![-FRAC_1_SQRT_2, -FRAC_1_SQRT_2], 0.0);
        let at_origin = flow_ode(&cone, &stable, &[0.0, 0.0], 1.0, 0.01).unwrap();
        assert!(at_origin.states.iter().all(|&v| v == 0.0));

        let still = DiffusionModel::with_default_bounds(2, Drift::Zero, Dispersion::Identity, 0.0).unwrap();
        let path = flow_ode(&cone, &still, &[0.3, 0.7], 1.0, 0.1).unwrap();
        assert!((0..path.len()).all(|j| path.state(j) == [0.3, 0.7]));
    }

    #[test]
    fn zero_noise_path_is_the_flow_for_any_seed() {
        let cone = PolyhedralCone::orthant(2);
        let model = variable(0.0);
        let flow = flow_ode(&cone, &model, &[0.8, 0.2], 1.0, 1e-3).unwrap();
        let a = simulate_path(&cone, &model, &[0.8, 0.2], 1.0, 1e-3, &mut seed_stream(1, 0)).unwrap();
        let b = simulate_path(&cone, &model, &[0.8, 0.2], 1.0, 1e-3, &mut seed_stream(99, 5)).unwrap();
        assert_eq!(a.states, flow.states);
        assert_eq!(b.states, flow.states);
        assert_eq!(a.pushes, flow.pushes);
    }

    #[test]
    fn path_invariants_hold() {
        let cone = PolyhedralCone::orthant(2);
        let model = variable(0.5);
        let path = simulate_path(&cone, &model, &[0.2, 0.1], 2.0, 1e-3, &mut seed_stream(3, 1)).unwrap();
        assert!(path.containment_violation(&cone) <= 0.0);
        for j in 1..path.len() {
            assert!(path
                .cumulative_push(j)
                .iter()
                .zip(path.cumulative_push(j - 1))
                .all(|(a, b)| a >= b));
        }
        let residual = path.decomposition_residual(&cone, &model);
        assert!(residual <= 1e-8 * (1.0 + norm(path.terminal())), "residual {residual}");
        assert!(path.pushes.iter().any(|&y| y > 0.0));
    }

    #[test]
    fn simulation_is_reproducible() {
        let cone = PolyhedralCone::orthant(2);
        let model = variable(0.3);
        let a = simulate_path(&cone, &model, &[0.5, 0.5], 1.0, 1e-2, &mut seed_stream(8, 2)).unwrap();
        let b = simulate_path(&cone, &model, &[0.5, 0.5], 1.0, 1e-2, &mut seed_stream(8, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_epsilon_scaled_equals_original() {
        let cone = PolyhedralCone::orthant(2);
        let model = variable(1.0);
        let a = simulate_path(&cone, &model, &[0.5, 0.5], 1.0, 1e-2, &mut seed_stream(4, 0)).unwrap();
        let b = simulate_scaled(&cone, &model, &[0.5, 0.5], 1.0, 1e-2, &mut seed_stream(4, 0)).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn coupled_scaling_gap_is_tiny() {
        let cone = PolyhedralCone::orthant(2);
        for eps in [0.5, 0.1] {
            let model = variable(eps);
            let gap =
                coupled_scaling_gap(&cone, &model, &[1.0, 0.5], 1.0, 1e-3, &mut seed_stream(12, 0)).unwrap();
            assert!(gap.sup_gap <= 5.0 * 1e-3f64.sqrt(), "gap {}", gap.sup_gap);
            assert_eq!(gap.steps, 1000);
        }
    }

    #[test]
    fn shortened_last_step() {
        assert_eq!(step_count(1.0, 0.3), 4);
        assert!((step_length(3, 4, 1.0, 0.3) - 0.1).abs() < 1e-15);
        assert_eq!(step_count(1.0, 1e-3), 1000);
        assert!(simulate_path(
            &PolyhedralCone::orthant(1),
            &constant(vec![0.0], 1.0),
            &[1.0],
            0.1,
            1.0,
            &mut seed_stream(0, 0)
        )
        .is_err());
    }

    #[test]
    fn classify_start_examples() {
        let cone = PolyhedralCone::orthant(2);
        let model = constant(vec![-FRAC_1_SQRT_2, -FRAC_1_SQRT_2], 0.0);
        let ball = Domain::ball(1.0).unwrap();
        let c = classify_start(&cone, &model, &ball, &[0.5, 0.5], 0.2, 10.0, 1e-3).unwrap();
        assert!(c.in_b_gamma);
        assert_eq!(c.outcome, FlowOutcome::Settled);
        assert!((c.distance - (1.0 - 0.5f64.sqrt())).abs() < 1e-12);

        assert!(matches!(
            classify_start(&cone, &model, &ball, &[1.0, 0.5], 0.2, 10.0, 1e-3),
            Err(Error::Precondition(_))
        ));
        let c = classify_start(&cone, &model, &ball, &[0.5, 0.5], 0.5, 10.0, 1e-3).unwrap();
        assert!(!c.in_b_gamma);
        assert_eq!(c.time, 0.0);

        let outward = constant(vec![1.0, 0.0], 0.0);
        let c = classify_start(&cone, &outward, &ball, &[0.5, 0.0], 0.0, 10.0, 1e-3).unwrap();
        assert_eq!(c.outcome, FlowOutcome::Exited);
        let slow = constant(vec![1e-3, 0.0], 0.0);
        let c = classify_start(&cone, &slow, &ball, &[0.1, 0.0], 0.0, 1.0, 1e-2).unwrap();
        assert!(c.is_inconclusive());
    }

    #[test]
    fn terminal_matches_stored_path() {
        let cone = PolyhedralCone::orthant(2);
        let matrix = reflection_matrix(&cone);
        let model = DiffusionModel::with_default_bounds(2, Drift::Constant(vec![-0.3, 0.1]), Dispersion::Identity, 0.7).unwrap();
        let path = simulate_path(&cone, &model, &[0.2, 0.0], 1.05, 0.1, &mut crate::rng::seed_stream(4, 2)).unwrap();
        let z = simulate_terminal(&cone, &matrix, &model, &[0.2, 0.0], 1.05, 0.1, &mut crate::rng::seed_stream(4, 2)).unwrap();
        assert_eq!(path.terminal(), z.as_slice());
    }
}
