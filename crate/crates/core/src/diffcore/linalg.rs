//! Dense kernels backing the tape primitives: Cholesky factorization and
//! triangular solves. Matrix products go through `ndarray::dot`.

use ndarray::{Array2, ArrayView2, Axis};

/// Jitter schedule for Cholesky: start value, doubled on failure up to the cap.
pub const JITTER_START: f64 = 1e-6;
pub const JITTER_MAX: f64 = 1e-2;

/// Plain Cholesky factorization of a symmetric matrix. Only the lower
/// triangle of `a` is read. Returns `None` if a pivot is not positive.
pub fn cholesky(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        {
            let row_j = l.row(j);
            for k in 0..j {
                d -= row_j[k] * row_j[k];
            }
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Cholesky of `a + jitter * I`, starting from `JITTER_START` and doubling
/// until the factorization succeeds or the jitter would exceed `JITTER_MAX`.
/// Returns the factor together with the jitter that was used.
pub fn cholesky_jittered(a: ArrayView2<f64>) -> Option<(Array2<f64>, f64)> {
    let n = a.nrows();
    let mut jitter = JITTER_START;
    loop {
        let mut aj = a.to_owned();
        for i in 0..n {
            aj[[i, i]] += jitter;
        }
        if let Some(l) = cholesky(aj.view()) {
            return Some((l, jitter));
        }
        jitter *= 2.0;
        if jitter > JITTER_MAX {
            return None;
        }
    }
}

/// Solves `L X = B` for lower-triangular `L` by forward substitution over rows.
pub fn solve_lower(l: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        let (done, mut rest) = x.view_mut().split_at(Axis(0), i);
        let mut row = rest.row_mut(0);
        for k in 0..i {
            let c = l[[i, k]];
            if c != 0.0 {
                row.scaled_add(-c, &done.row(k));
            }
        }
        row /= l[[i, i]];
    }
    x
}

/// Solves `Lᵀ X = B` for lower-triangular `L` by back substitution.
pub fn solve_lower_transpose(l: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in (0..n).rev() {
        let (mut head, tail) = x.view_mut().split_at(Axis(0), i + 1);
        let mut row = head.row_mut(i);
        for k in 0..(n - i - 1) {
            let c = l[[i + 1 + k, i]];
            if c != 0.0 {
                row.scaled_add(-c, &tail.row(k));
            }
        }
        row /= l[[i, i]];
    }
    x
}

/// Inverse of a lower-triangular matrix.
pub fn lower_inverse(l: ArrayView2<f64>) -> Array2<f64> {
    solve_lower(l, Array2::<f64>::eye(l.nrows()).view())
}

/// Log-determinant of `L Lᵀ` given its Cholesky factor.
pub fn logdet_from_cholesky(l: ArrayView2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>()
}

/// Keeps the lower triangle (inclusive) and halves the diagonal.
pub(crate) fn phi(mut a: Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            a[[i, j]] = 0.0;
        }
        a[[i, i]] *= 0.5;
    }
    a
}

pub(crate) fn tril(mut a: Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..a.ncols() {
            a[[i, j]] = 0.0;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spd() -> Array2<f64> {
        array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]]
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = spd();
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view()).is_none());
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        // rank one
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let (l, jitter) = cholesky_jittered(a.view()).unwrap();
        assert!((JITTER_START..=JITTER_MAX).contains(&jitter));
        assert!(l[[1, 1]] > 0.0);
    }

    #[test]
    fn jitter_gives_up() {
        let a = array![[1.0, 0.0], [0.0, -1.0]];
        assert!(cholesky_jittered(a.view()).is_none());
    }

    #[test]
    fn triangular_solves() {
        let l = cholesky(spd().view()).unwrap();
        let b = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.25]];
        let x = solve_lower(l.view(), b.view());
        let r = l.dot(&x);
        let y = solve_lower_transpose(l.view(), b.view());
        let r2 = l.t().dot(&y);
        for i in 0..3 {
            for j in 0..2 {
                assert!((r[[i, j]] - b[[i, j]]).abs() < 1e-12);
                assert!((r2[[i, j]] - b[[i, j]]).abs() < 1e-12);
            }
        }
        let inv = lower_inverse(l.view());
        let eye = inv.dot(&l);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((eye[[i, j]] - e).abs() < 1e-12);
            }
        }
    }
}
