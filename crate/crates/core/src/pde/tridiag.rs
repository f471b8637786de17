//! Tridiagonal and cyclic tridiagonal solvers.

use super::PdeError;

/// Solves `a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i` (`a_0`, `c_{n-1}` unused)
/// by the Thomas algorithm.
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Vec<f64>, PdeError> {
    let n = b.len();
    debug_assert!(a.len() == n && c.len() == n && d.len() == n);
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut pivot = b[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(PdeError::Singular { row: 0 });
    }
    cp[0] = c[0] / pivot;
    dp[0] = d[0] / pivot;
    for i in 1..n {
        pivot = b[i] - a[i] * cp[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(PdeError::Singular { row: i });
        }
        cp[i] = c[i] / pivot;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / pivot;
    }
    let mut x = dp;
    for i in (0..n - 1).rev() {
        x[i] -= cp[i] * x[i + 1];
    }
    Ok(x)
}

/// Cyclic system: row 0 couples to `x_{n-1}` through `a_0` and row `n-1`
/// couples to `x_0` through `c_{n-1}`. Sherman–Morrison correction on top
/// of two Thomas solves.
pub fn solve_cyclic(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Vec<f64>, PdeError> {
    let n = b.len();
    if n < 3 {
        return Err(PdeError::Singular { row: 0 });
    }
    let alpha = c[n - 1];
    let beta = a[0];
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] = b[0] - gamma;
    bb[n - 1] = b[n - 1] - alpha * beta / gamma;
    let x = solve_tridiagonal(a, &bb, c, d)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(a, &bb, c, &u)?;
    let denom = 1.0 + z[0] + beta * z[n - 1] / gamma;
    if denom == 0.0 || !denom.is_finite() {
        return Err(PdeError::Singular { row: n - 1 });
    }
    let fact = (x[0] + beta * x[n - 1] / gamma) / denom;
    Ok(x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn apply(a: &[f64], b: &[f64], c: &[f64], x: &[f64], cyclic: bool) -> Vec<f64> {
        let n = b.len();
        (0..n)
            .map(|i| {
                let l = if i > 0 { a[i] * x[i - 1] } else if cyclic { a[0] * x[n - 1] } else { 0.0 };
                let r = if i + 1 < n { c[i] * x[i + 1] } else if cyclic { c[n - 1] * x[0] } else { 0.0 };
                l + b[i] * x[i] + r
            })
            .collect()
    }

    #[test]
    fn thomas_small_system() {
        let a = [0.0, -1.0, -1.0];
        let b = [2.0, 2.0, 2.0];
        let c = [-1.0, -1.0, 0.0];
        let x = solve_tridiagonal(&a, &b, &c, &[1.0, 0.0, 1.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        assert_eq!(solve_tridiagonal(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]), Err(PdeError::Singular { row: 0 }));
    }

    proptest! {
        #[test]
        fn diagonally_dominant_systems_are_solved(
            (a, c, extra, d) in (3usize..40).prop_flat_map(|n| (
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(0.1f64..2.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            )),
            cyclic in any::<bool>(),
        ) {
            let b: Vec<f64> = (0..a.len()).map(|i| a[i].abs() + c[i].abs() + extra[i]).collect();
            let x = if cyclic { solve_cyclic(&a, &b, &c, &d) } else { solve_tridiagonal(&a, &b, &c, &d) }.unwrap();
            let r = apply(&a, &b, &c, &x, cyclic);
            for (ri, di) in r.iter().zip(&d) {
                prop_assert!((ri - di).abs() < 1e-11);
            }
        }
    }
}
