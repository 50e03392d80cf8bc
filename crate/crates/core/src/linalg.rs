//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn max_eigenvalue(m: &Matrix) -> f64 {
    *sym_eigenvalues(m).last().unwrap_or(&f64::NEG_INFINITY)
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    *sym_eigenvalues(m).first().unwrap_or(&f64::INFINITY)
}

/// Largest absolute entry of `m - m'`.
pub fn asymmetry(m: &Matrix) -> f64 {
    (m - m.transpose()).amax()
}

/// Returns `(m + m') / 2`, or an error if `m` is asymmetric beyond `tol`
/// relative to its largest entry (absolute when the matrix is small).
pub fn symmetrize_checked(m: &Matrix, tol: f64) -> Result<Matrix> {
    let asym = asymmetry(m);
    if !asym.is_finite() || asym > tol * m.amax().max(1.0) {
        return Err(Error::Asymmetry(asym));
    }
    Ok((m + m.transpose()) * 0.5)
}

pub fn is_finite_matrix(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_finite_vector(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Quadrature weights on a time grid that is uniform except possibly for a
/// shorter final interval.
///
/// The uniform part uses composite Simpson; an odd number of uniform intervals
/// closes with Simpson's 3/8 rule on the last three; a trailing partial
/// interval is added with the trapezoid rule.
pub fn quadrature_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    let h = times[1] - times[0];
    // count uniform intervals
    let mut uniform = n - 1;
    if n >= 3 {
        let last = times[n - 1] - times[n - 2];
        if (last - h).abs() > 1e-9 * h.abs() {
            uniform = n - 2;
        }
    }
    let add_trapezoid = |w: &mut [f64], i: usize| {
        let dh = times[i + 1] - times[i];
        w[i] += 0.5 * dh;
        w[i + 1] += 0.5 * dh;
    };
    match uniform {
        0 => {}
        1 => add_trapezoid(&mut w, 0),
        _ => {
            let (simpson_intervals, tail38) = if uniform % 2 == 0 {
                (uniform, false)
            } else if uniform >= 3 {
                (uniform - 3, true)
            } else {
                (uniform, false)
            };
            let mut i = 0;
            while i + 2 <= simpson_intervals {
                w[i] += h / 3.0;
                w[i + 1] += 4.0 * h / 3.0;
                w[i + 2] += h / 3.0;
                i += 2;
            }
            if tail38 {
                let s = simpson_intervals;
                w[s] += 3.0 * h / 8.0;
                w[s + 1] += 9.0 * h / 8.0;
                w[s + 2] += 9.0 * h / 8.0;
                w[s + 3] += 3.0 * h / 8.0;
            }
        }
    }
    if uniform < n - 1 {
        add_trapezoid(&mut w, n - 2);
    }
    w
}

/// Orthonormal basis of the kernel of `rows` (a p x n matrix), returned as the
/// columns of an n x k matrix.
///
/// The row space is orthogonalized with column pivoting (largest remaining
/// norm first); directions with residual norm below `tol` count as zero. The
/// kernel is then the deterministic completion by the canonical unit vectors.
pub fn kernel_basis(rows: &Matrix, tol: f64) -> Matrix {
    let n = rows.ncols();
    if rows.nrows() == 0 || rows.amax() <= tol {
        return Matrix::identity(n, n);
    }
    // Gram-Schmidt on the rows with pivoting by largest remaining norm gives
    // an orthonormal basis of the row space; complete it with the unit vectors.
    let mut remaining: Vec<Vector> = (0..rows.nrows()).map(|i| rows.row(i).transpose()).collect();
    let mut basis: Vec<Vector> = Vec::new();
    loop {
        let (idx, norm) = remaining
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.norm()))
            .fold((usize::MAX, 0.0), |acc, (i, nrm)| if nrm > acc.1 { (i, nrm) } else { acc });
        if idx == usize::MAX || norm <= tol {
            break;
        }
        let q = remaining.swap_remove(idx) / norm;
        for r in remaining.iter_mut() {
            let c = q.dot(r);
            *r -= &q * c;
        }
        basis.push(q);
    }
    let rank = basis.len();
    let mut kernel: Vec<Vector> = Vec::with_capacity(n - rank);
    for j in 0..n {
        if kernel.len() == n - rank {
            break;
        }
        let mut v = Vector::zeros(n);
        v[j] = 1.0;
        for q in basis.iter().chain(kernel.iter()) {
            let c = q.dot(&v);
            v -= q * c;
        }
        let nrm = v.norm();
        if nrm > 1e-8 {
            kernel.push(v / nrm);
        }
    }
    if kernel.is_empty() {
        return Matrix::zeros(n, 0);
    }
    Matrix::from_columns(&kernel)
}
