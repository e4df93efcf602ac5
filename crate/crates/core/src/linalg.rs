//! Small dense complex matrices (channel-count sized) for beamforming and GSS.

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex;

use crate::scalar::Real;

pub type CMatrix<T> = Array2<Complex<T>>;

pub fn trace<T: Real>(a: &CMatrix<T>) -> Complex<T> {
    a.diag().iter().fold(Complex::new(T::zero(), T::zero()), |acc, &x| acc + x)
}

/// `(A + A^H) / 2`, in place.
pub fn hermitize<T: Real>(a: &mut CMatrix<T>) {
    let n = a.nrows();
    let half = T::of(0.5);
    for i in 0..n {
        a[[i, i]].im = T::zero();
        for j in i + 1..n {
            let v = (a[[i, j]] + a[[j, i]].conj()) * half;
            a[[i, j]] = v;
            a[[j, i]] = v.conj();
        }
    }
}

pub fn add_to_diagonal<T: Real>(a: &mut CMatrix<T>, amount: T) {
    for i in 0..a.nrows() {
        a[[i, i]].re += amount;
    }
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_defect<T: Real>(a: &CMatrix<T>) -> T {
    let n = a.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    worst
}

/// `v v^H` scaled by `w`, accumulated into `acc`.
pub fn accumulate_outer<T: Real>(acc: &mut CMatrix<T>, v: ArrayView1<'_, Complex<T>>, w: T) {
    let n = v.len();
    for i in 0..n {
        let vi = v[i] * w;
        for j in 0..n {
            acc[[i, j]] += vi * v[j].conj();
        }
    }
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky<T: Real>(a: &CMatrix<T>) -> Option<CMatrix<T>> {
    let n = a.nrows();
    let mut l = CMatrix::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]].re;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = Complex::new(djj, T::zero());
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Solve `L L^H x = b` for one right-hand side.
pub fn cholesky_solve_vec<T: Real>(l: &CMatrix<T>, b: ArrayView1<'_, Complex<T>>) -> Array1<Complex<T>> {
    let n = l.nrows();
    let mut y = b.to_owned();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]].re;
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]].conj() * y[k];
        }
        y[i] = s / l[[i, i]].re;
    }
    y
}

pub fn cholesky_solve<T: Real>(l: &CMatrix<T>, b: &CMatrix<T>) -> CMatrix<T> {
    let mut x = CMatrix::zeros(b.raw_dim());
    for (j, col) in b.columns().into_iter().enumerate() {
        x.column_mut(j).assign(&cholesky_solve_vec(l, col));
    }
    x
}

/// `log det A` from its Cholesky factor.
pub fn log_det<T: Real>(l: &CMatrix<T>) -> T {
    let two = T::of(2.0);
    l.diag().iter().map(|d| two * d.re.ln()).sum()
}

/// General solve `A X = B` by Gaussian elimination with partial pivoting.
pub fn lu_solve<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Option<CMatrix<T>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut x = b.clone();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[[i, c]].norm().partial_cmp(&m[[j, c]].norm()).expect("finite"))?;
        if !(m[[p, c]].norm() > T::zero()) {
            return None;
        }
        if p != c {
            for j in 0..n {
                m.swap([p, j], [c, j]);
            }
            for j in 0..x.ncols() {
                x.swap([p, j], [c, j]);
            }
        }
        let piv = m[[c, c]];
        for r in c + 1..n {
            let f = m[[r, c]] / piv;
            if f.norm() == T::zero() {
                continue;
            }
            for j in c..n {
                let v = m[[c, j]];
                m[[r, j]] -= f * v;
            }
            for j in 0..x.ncols() {
                let v = x[[c, j]];
                x[[r, j]] -= f * v;
            }
        }
    }
    for c in (0..n).rev() {
        for j in 0..x.ncols() {
            let mut s = x[[c, j]];
            for k in c + 1..n {
                s -= m[[c, k]] * x[[k, j]];
            }
            x[[c, j]] = s / m[[c, c]];
        }
    }
    Some(x)
}

/// Hermitian solve with a Cholesky fast path and pivoted elimination as fallback.
pub fn hermitian_solve<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Option<CMatrix<T>> {
    match cholesky(a) {
        Some(l) => Some(cholesky_solve(&l, b)),
        None => lu_solve(a, b),
    }
}
