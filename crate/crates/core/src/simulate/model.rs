use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::PolyhedralCone;
use crate::linalg::{dist, frobenius, norm, symmetric_min_eigenvalue};
use crate::rng::{fill_normal, StreamKey};

/// User-supplied coefficient: evaluates at a point into an output buffer.
pub type CoefficientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum Drift {
    Zero,
    Constant(Vec<f64>),
    /// `b(x) = base - gain * x / (1 + |x|)`.
    Saturating { base: Vec<f64>, gain: f64 },
    Custom(CoefficientFn),
}

/// Dispersion matrices are `k x k`, row-major.
#[derive(Clone)]
pub enum Dispersion {
    Identity,
    Constant(Vec<f64>),
    /// `sigma(x) = (1 + amplitude * sin(sum(x) / sqrt(k))) * matrix`.
    Modulated { matrix: Vec<f64>, amplitude: f64 },
    Custom(CoefficientFn),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Zero => write!(f, "Zero"),
            Drift::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Drift::Saturating { base, gain } => f
                .debug_struct("Saturating")
                .field("base", base)
                .field("gain", gain)
                .finish(),
            Drift::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl fmt::Debug for Dispersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dispersion::Identity => write!(f, "Identity"),
            Dispersion::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Dispersion::Modulated { matrix, amplitude } => f
                .debug_struct("Modulated")
                .field("matrix", matrix)
                .field("amplitude", amplitude)
                .finish(),
            Dispersion::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Declared coefficient constants: `gamma1` bounds the drift and its
/// Lipschitz constant, `gamma2` the dispersion (Frobenius norm), and
/// `sigma_lower` the ellipticity `v' sigma sigma' v >= sigma_lower |v|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelBounds {
    pub gamma1: f64,
    pub gamma2: f64,
    pub sigma_lower: f64,
}

impl ModelBounds {
    pub fn new(gamma1: f64, gamma2: f64, sigma_lower: f64) -> Self {
        Self {
            gamma1,
            gamma2,
            sigma_lower,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiffusionModel {
    dim: usize,
    drift: Drift,
    dispersion: Dispersion,
    epsilon: f64,
    bounds: ModelBounds,
}

impl DiffusionModel {
    /// `epsilon = 0` is allowed and describes the deterministic flow.
    pub fn new(
        dim: usize,
        drift: Drift,
        dispersion: Dispersion,
        epsilon: f64,
        bounds: ModelBounds,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ModelRejected("dimension must be positive".into()));
        }
        match &drift {
            Drift::Constant(v) | Drift::Saturating { base: v, .. } if v.len() != dim => {
                return Err(Error::ModelRejected(format!("drift vector must have length {dim}")));
            }
            Drift::Saturating { gain, .. } if !(gain.is_finite() && *gain >= 0.0) => {
                return Err(Error::ModelRejected("saturating gain must be finite and nonnegative".into()));
            }
            _ => {}
        }
        match &dispersion {
            Dispersion::Constant(m) | Dispersion::Modulated { matrix: m, .. } if m.len() != dim * dim => {
                return Err(Error::ModelRejected(format!("dispersion matrix must have {} entries", dim * dim)));
            }
            Dispersion::Modulated { amplitude, .. } if !(0.0..1.0).contains(amplitude) => {
                return Err(Error::ModelRejected("modulation amplitude must lie in [0, 1)".into()));
            }
            _ => {}
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::ModelRejected("epsilon must be finite and nonnegative".into()));
        }
        let b = bounds;
        if !(b.gamma1.is_finite() && b.gamma1 > 0.0 && b.gamma2.is_finite() && b.gamma2 > 0.0)
            || !(b.sigma_lower.is_finite() && b.sigma_lower > 0.0)
        {
            return Err(Error::ModelRejected("gamma1, gamma2 and sigma_lower must be positive".into()));
        }
        Ok(Self {
            dim,
            drift,
            dispersion,
            epsilon,
            bounds,
        })
    }

    /// Model with the constants implied by the built-in coefficients.
    pub fn with_default_bounds(dim: usize, drift: Drift, dispersion: Dispersion, epsilon: f64) -> Result<Self> {
        let bounds = analytic_bounds(dim, &drift, &dispersion)?;
        Self::new(dim, drift, dispersion, epsilon, bounds)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn bounds(&self) -> ModelBounds {
        self.bounds
    }

    pub fn drift_kind(&self) -> &Drift {
        &self.drift
    }

    pub fn dispersion_kind(&self) -> &Dispersion {
        &self.dispersion
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.dim, self.drift.clone(), self.dispersion.clone(), epsilon, self.bounds)
    }

    /// Both coefficients are independent of the state.
    pub fn is_constant(&self) -> bool {
        matches!(self.drift, Drift::Zero | Drift::Constant(_))
            && matches!(
                self.dispersion,
                Dispersion::Identity | Dispersion::Constant(_) | Dispersion::Modulated { amplitude: 0.0, .. }
            )
    }

    pub fn is_identity_dispersion(&self) -> bool {
        matches!(self.dispersion, Dispersion::Identity)
    }

    #[inline]
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        match &self.drift {
            Drift::Zero => out.fill(0.0),
            Drift::Constant(v) => out.copy_from_slice(v),
            Drift::Saturating { base, gain } => {
                let s = gain / (1.0 + norm(x));
                for ((o, b), xi) in out.iter_mut().zip(base).zip(x) {
                    *o = b - s * xi;
                }
            }
            Drift::Custom(f) => f(x, out),
        }
    }

    #[inline]
    pub fn dispersion(&self, x: &[f64], out: &mut [f64]) {
        match &self.dispersion {
            Dispersion::Identity => {
                out.fill(0.0);
                for i in 0..self.dim {
                    out[i * self.dim + i] = 1.0;
                }
            }
            Dispersion::Constant(m) => out.copy_from_slice(m),
            Dispersion::Modulated { matrix, amplitude } => {
                let s: f64 = x.iter().sum::<f64>() / (self.dim as f64).sqrt();
                let c = 1.0 + amplitude * s.sin();
                for (o, m) in out.iter_mut().zip(matrix) {
                    *o = c * m;
                }
            }
            Dispersion::Custom(f) => f(x, out),
        }
    }

    /// Random spot checks of the declared constants on `pairs` point pairs
    /// drawn in `G` (Gaussian points of scale `radius`, projected into the
    /// cone) and as many random unit directions.
    pub fn spot_check(&self, cone: &PolyhedralCone, pairs: usize, radius: f64, seed: u64) -> Result<ModelCheck> {
        if cone.dim() != self.dim {
            return Err(Error::ModelRejected("model and cone dimensions differ".into()));
        }
        let k = self.dim;
        let matrix = crate::skorokhod::reflection_matrix(cone);
        let mut rng = StreamKey::new(seed).child(0x006d_6f64_656c).rng();
        let mut check = ModelCheck {
            pairs,
            max_drift: 0.0,
            max_drift_lipschitz: 0.0,
            max_dispersion: 0.0,
            max_dispersion_lipschitz: 0.0,
            min_ellipticity: f64::INFINITY,
            violations: Vec::new(),
        };
        let (mut x, mut y, mut v) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        let (mut bx, mut by) = (vec![0.0; k], vec![0.0; k]);
        let (mut sx, mut sy) = (vec![0.0; k * k], vec![0.0; k * k]);
        for _ in 0..pairs {
            fill_normal(&mut rng, radius, &mut x);
            x = crate::skorokhod::project_step(cone, &matrix, &x)?.z;
            if rng.random::<f64>() < 0.5 {
                fill_normal(&mut rng, radius, &mut y);
            } else {
                // Nearby pairs probe the local Lipschitz constant.
                fill_normal(&mut rng, 1e-3 * radius, &mut y);
                y.iter_mut().zip(&x).for_each(|(a, b)| *a += b);
            }
            y = crate::skorokhod::project_step(cone, &matrix, &y)?.z;
            fill_normal(&mut rng, 1.0, &mut v);
            let vn = norm(&v);
            v.iter_mut().for_each(|a| *a /= vn);

            self.drift(&x, &mut bx);
            self.drift(&y, &mut by);
            self.dispersion(&x, &mut sx);
            self.dispersion(&y, &mut sy);
            if bx.iter().chain(&sx).any(|a| !a.is_finite()) {
                return Err(Error::ModelRejected(format!("non-finite coefficient at {x:?}")));
            }
            let dxy = dist(&x, &y);
            check.max_drift = check.max_drift.max(norm(&bx));
            check.max_dispersion = check.max_dispersion.max(frobenius(&sx));
            if dxy > 0.0 {
                check.max_drift_lipschitz = check.max_drift_lipschitz.max(dist(&bx, &by) / dxy);
                let ds: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| a - b).collect();
                check.max_dispersion_lipschitz = check.max_dispersion_lipschitz.max(frobenius(&ds) / dxy);
            }
            let sv: f64 = (0..k)
                .map(|c| (0..k).map(|r| v[r] * sx[r * k + c]).sum::<f64>().powi(2))
                .sum();
            check.min_ellipticity = check.min_ellipticity.min(sv);
        }
        let slack = 1.0 + 1e-9;
        let b = self.bounds;
        let mut flag = |name: &str, observed: f64, declared: f64, ok: bool| {
            if !ok {
                check
                    .violations
                    .push(format!("{name}: observed {observed:.6e} against declared {declared:.6e}"));
            }
        };
        flag("drift bound", check.max_drift, b.gamma1, check.max_drift <= b.gamma1 * slack);
        flag(
            "drift Lipschitz",
            check.max_drift_lipschitz,
            b.gamma1,
            check.max_drift_lipschitz <= b.gamma1 * slack,
        );
        flag("dispersion bound", check.max_dispersion, b.gamma2, check.max_dispersion <= b.gamma2 * slack);
        flag(
            "dispersion Lipschitz",
            check.max_dispersion_lipschitz,
            b.gamma2,
            check.max_dispersion_lipschitz <= b.gamma2 * slack,
        );
        flag(
            "ellipticity",
            check.min_ellipticity,
            b.sigma_lower,
            pairs == 0 || check.min_ellipticity >= b.sigma_lower / slack,
        );
        Ok(check)
    }

    /// [`Self::spot_check`] that fails on any violated constant.
    pub fn validate(&self, cone: &PolyhedralCone, pairs: usize, seed: u64) -> Result<ModelCheck> {
        let check = self.spot_check(cone, pairs, 2.0, seed)?;
        if check.violations.is_empty() {
            Ok(check)
        } else {
            Err(Error::ModelRejected(check.violations.join("; ")))
        }
    }
}

/// Observed extremes from [`DiffusionModel::spot_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelCheck {
    pub pairs: usize,
    pub max_drift: f64,
    pub max_drift_lipschitz: f64,
    pub max_dispersion: f64,
    pub max_dispersion_lipschitz: f64,
    pub min_ellipticity: f64,
    pub violations: Vec<String>,
}

/// Constants that provably hold for the built-in coefficient families.
pub fn analytic_bounds(dim: usize, drift: &Drift, dispersion: &Dispersion) -> Result<ModelBounds> {
    // The map x -> x / (1 + |x|) has norm below 1 and is 1-Lipschitz.
    let gamma1 = match drift {
        Drift::Zero => 0.0,
        Drift::Constant(v) => norm(v),
        Drift::Saturating { base, gain } => norm(base) + gain,
        Drift::Custom(_) => {
            return Err(Error::ModelRejected("custom drift needs declared bounds".into()));
        }
    };
    let identity: Vec<f64>;
    let (matrix, amplitude) = match dispersion {
        Dispersion::Identity => {
            identity = (0..dim * dim).map(|i| if i % (dim + 1) == 0 { 1.0 } else { 0.0 }).collect();
            (&identity, 0.0)
        }
        Dispersion::Constant(m) => (m, 0.0),
        Dispersion::Modulated { matrix, amplitude } => (matrix, *amplitude),
        Dispersion::Custom(_) => {
            return Err(Error::ModelRejected("custom dispersion needs declared bounds".into()));
        }
    };
    if matrix.len() != dim * dim {
        return Err(Error::ModelRejected(format!("dispersion matrix must have {} entries", dim * dim)));
    }
    let f = frobenius(matrix);
    // sin(sum(x)/sqrt(k)) is 1-Lipschitz in x, so sigma moves by at most amplitude * |A|.
    let gamma2 = (1.0 + amplitude) * f;
    let mut gram = vec![0.0; dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            gram[r * dim + c] = (0..dim).map(|j| matrix[r * dim + j] * matrix[c * dim + j]).sum();
        }
    }
    let sigma_lower = (1.0 - amplitude).powi(2) * symmetric_min_eigenvalue(&gram, dim);
    if !(sigma_lower > 0.0) {
        return Err(Error::ModelRejected("dispersion is not uniformly elliptic".into()));
    }
    Ok(ModelBounds::new(gamma1.max(f64::MIN_POSITIVE), gamma2, sigma_lower))
}
