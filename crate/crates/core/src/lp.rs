//! Dense tableau simplex for tiny feasibility programs.
//!
//! Solves `max c'x` subject to `A x <= b`, `x >= 0` with `b >= 0`, so the
//! slack basis is feasible and no phase one is needed. Bland's rule keeps
//! degenerate pivots from cycling.

/// Returns the optimal value, or `None` when the program is unbounded.
pub fn maximize(a: &[f64], b: &[f64], c: &[f64], rows: usize, cols: usize) -> Option<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert!(b.iter().all(|&v| v >= 0.0));
    let width = cols + rows + 1;
    let mut t = vec![0.0; (rows + 1) * width];
    for r in 0..rows {
        t[r * width..r * width + cols].copy_from_slice(&a[r * cols..(r + 1) * cols]);
        t[r * width + cols + r] = 1.0;
        t[r * width + width - 1] = b[r];
    }
    let obj = rows * width;
    for j in 0..cols {
        t[obj + j] = -c[j];
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();
    const EPS: f64 = 1e-12;

    for _ in 0..10_000 {
        let Some(enter) = (0..cols + rows).find(|&j| t[obj + j] < -EPS) else {
            return Some(t[obj + width - 1]);
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..rows {
            let coef = t[r * width + enter];
            if coef > EPS {
                let ratio = t[r * width + width - 1] / coef;
                let better = match leave {
                    None => true,
                    Some((lr, best)) => {
                        ratio < best - EPS || (ratio <= best + EPS && basis[r] < basis[lr])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let (pr, _) = leave?;
        let pivot = t[pr * width + enter];
        for j in 0..width {
            t[pr * width + j] /= pivot;
        }
        for r in 0..=rows {
            if r == pr {
                continue;
            }
            let f = t[r * width + enter];
            if f != 0.0 {
                for j in 0..width {
                    t[r * width + j] -= f * t[pr * width + j];
                }
            }
        }
        basis[pr] = enter;
    }
    // Bland's rule terminates; this is only reached on numerical trouble.
    Some(t[obj + width - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_program() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> 36
        let a = [1.0, 0.0, 0.0, 2.0, 3.0, 2.0];
        let v = maximize(&a, &[4.0, 12.0, 18.0], &[3.0, 5.0], 3, 2).unwrap();
        assert!((v - 36.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_program() {
        let a = [1.0, -1.0];
        assert!(maximize(&a, &[1.0], &[0.0, 1.0], 1, 2).is_none());
    }
}
