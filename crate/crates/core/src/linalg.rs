//! Dense helpers for the small vectors and matrices used throughout
//! (dimension and face counts are single digits).

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Frobenius norm of a row-major matrix.
pub fn frobenius(m: &[f64]) -> f64 {
    norm(m)
}

/// Solves the `n x n` row-major system in place by Gaussian elimination with
/// partial pivoting. Returns `None` when a pivot falls below `tol`.
pub fn solve(a: &mut [f64], b: &mut [f64], n: usize, tol: f64) -> Option<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let (piv, piv_val) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if piv_val <= tol {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
        }
        let p = a[col * n + col];
        for r in col + 1..n {
            let factor = a[r * n + col] / p;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= factor * a[col * n + j];
            }
            b[r] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for j in col + 1..n {
            acc -= a[col * n + j] * b[j];
        }
        b[col] = acc / a[col * n + col];
    }
    Some(())
}

/// Orthonormal basis of the span of `vectors` (modified Gram-Schmidt with
/// reorthogonalization). Vectors whose residual norm is below `tol` are
/// dropped, so the basis length is the numerical rank.
pub fn orthonormal_basis(vectors: &[&[f64]], tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let scale = norm(v).max(1.0);
        let mut r = v.to_vec();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&r, q);
                r.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
            }
        }
        let n = norm(&r);
        if n > tol * scale {
            r.iter_mut().for_each(|x| *x /= n);
            basis.push(r);
        }
    }
    basis
}

pub fn rank(vectors: &[&[f64]], tol: f64) -> usize {
    orthonormal_basis(vectors, tol).len()
}

/// Unit vector orthogonal to an orthonormal `basis` of a hyperplane in
/// `dim` dimensions (basis length `dim - 1`).
pub fn complement_direction(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut best = vec![0.0; dim];
    let mut best_norm = -1.0;
    for axis in 0..dim {
        let mut r = vec![0.0; dim];
        r[axis] = 1.0;
        for _ in 0..2 {
            for q in basis {
                let c = dot(&r, q);
                r.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
            }
        }
        let n = norm(&r);
        if n > best_norm {
            best_norm = n;
            best = r;
        }
    }
    best.iter_mut().for_each(|x| *x /= best_norm);
    best
}

/// Least-squares projection of `v` onto the span of the linearly independent
/// `generators`; returns the coefficients. `None` when the Gram matrix is
/// singular.
pub fn project_onto_span(generators: &[&[f64]], v: &[f64]) -> Option<Vec<f64>> {
    let m = generators.len();
    let mut gram = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        rhs[i] = dot(generators[i], v);
        for j in 0..m {
            gram[i * m + j] = dot(generators[i], generators[j]);
        }
    }
    solve(&mut gram, &mut rhs, m, 1e-13)?;
    Some(rhs)
}

/// Visits every subset of `0..n` with size in `1..=max_size` in
/// lexicographic order.
pub fn for_each_subset(n: usize, max_size: usize, mut visit: impl FnMut(&[usize])) {
    let mut stack = Vec::with_capacity(max_size);
    fn recurse(
        start: usize,
        n: usize,
        max_size: usize,
        stack: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        for i in start..n {
            stack.push(i);
            visit(stack);
            if stack.len() < max_size {
                recurse(i + 1, n, max_size, stack, visit);
            }
            stack.pop();
        }
    }
    recurse(0, n, max_size, &mut stack, &mut visit);
}

/// Smallest eigenvalue of a symmetric `n x n` row-major matrix (cyclic
/// Jacobi rotations).
pub fn symmetric_min_eigenvalue(m: &[f64], n: usize) -> f64 {
    let mut a = m.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= 1e-30 * (1.0 + frobenius(&a).powi(2)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).fold(f64::INFINITY, f64::min)
}
