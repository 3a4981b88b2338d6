//! Small dense linear algebra for symmetric positive-definite systems
//! (K×K ADMM updates, d×d Wishart draws).

use crate::math::sqrt;
use crate::matrix::Matrix;
use alloc::vec::Vec;

/// Lower Cholesky factor `L` with `A = L Lᵀ`; `None` if `A` is not
/// numerically positive definite.
pub fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if !(d > 0.0) {
            return None;
        }
        let djj = sqrt(d);
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Solve `L Lᵀ x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y: Vec<f64> = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for p in 0..i {
            s -= l[(i, p)] * y[p];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in i + 1..n {
            s -= l[(p, i)] * y[p];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Inverse of an SPD matrix.
pub fn spd_inverse(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let l = cholesky(a)?;
    let mut inv = Matrix::zeros(n, n);
    let mut e = alloc::vec![0.0; n];
    for c in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[c] = 1.0;
        let x = cholesky_solve(&l, &e);
        for r in 0..n {
            inv[(r, c)] = x[r];
        }
    }
    // symmetrise away round-off
    for r in 0..n {
        for c in r + 1..n {
            let m = 0.5 * (inv[(r, c)] + inv[(c, r)]);
            inv[(r, c)] = m;
            inv[(c, r)] = m;
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_and_inverse_roundtrip() {
        let a = Matrix::from_vec(3, 3, alloc::vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let x = cholesky_solve(&cholesky(&a).unwrap(), &[1.0, 2.0, 3.0]);
        for r in 0..3 {
            let ax: f64 = (0..3).map(|c| a[(r, c)] * x[c]).sum();
            assert!((ax - [1.0, 2.0, 3.0][r]).abs() < 1e-12);
        }
        let prod = a.matmul(&spd_inverse(&a).unwrap());
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((prod[(r, c)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn indefinite_rejected() {
        let a = Matrix::from_vec(2, 2, alloc::vec![1.0, 2.0, 2.0, 1.0]);
        assert!(cholesky(&a).is_none());
    }
}
