//! Small dense kernels: norms, tiny SPD solves and the rank-1 power iteration.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};

use crate::Scalar;

/// Diagonal jitter added when a support Gram matrix is numerically singular.
pub const CHOLESKY_JITTER: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 100;
pub const POWER_TOL: f64 = 1e-10;

pub fn norm2<T: Scalar>(v: ArrayView1<'_, T>) -> T {
    v.dot(&v).sqrt()
}

pub fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Scales `v` to unit norm and returns the original norm, or `None` if `v` is
/// zero (left untouched).
pub fn normalize<T: Scalar>(mut v: ArrayViewMut1<'_, T>) -> Option<T> {
    let n = norm2(v.view());
    if n > T::zero() && n.is_finite() {
        v.mapv_inplace(|x| x / n);
        Some(n)
    } else {
        None
    }
}

pub fn frobenius_sq<T: Scalar>(m: ArrayView2<'_, T>) -> T {
    m.iter().map(|&x| x * x).sum()
}

fn cholesky_in_place<T: Scalar>(a: &mut Array2<T>) -> bool {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[[i, i]].abs()).fold(T::zero(), T::max);
    let floor = T::epsilon() * scale.max(T::one()) * T::lit(16.0);
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if !(d > floor) {
            return false;
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = s / d;
        }
    }
    true
}

/// Solves `gram · x = rhs` for a small symmetric positive (semi)definite matrix.
/// Retries once with `CHOLESKY_JITTER` on the diagonal when the plain factorisation
/// breaks down.
pub fn solve_spd<T: Scalar>(gram: &Array2<T>, rhs: &Array1<T>) -> Option<Array1<T>> {
    let n = gram.nrows();
    let mut l = gram.clone();
    if !cholesky_in_place(&mut l) {
        l = gram.clone();
        for i in 0..n {
            l[[i, i]] += T::lit(CHOLESKY_JITTER);
        }
        if !cholesky_in_place(&mut l) {
            return None;
        }
    }
    let mut y = rhs.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y.iter().all(|v| v.is_finite()).then_some(y)
}

/// Leading left singular vector of `e` by power iteration on `e·eᵀ`.
///
/// Iteration starts from `start` (the current atom during a K-SVD sweep). For a
/// PSD matrix the Rayleigh quotient is non-decreasing along power iterates, so the
/// result never captures less energy than the starting vector. Returns the unit
/// vector and its Rayleigh quotient `‖eᵀu‖²`; `None` when `e` is zero.
pub fn leading_left_singular<T: Scalar>(
    e: ArrayView2<'_, T>,
    start: ArrayView1<'_, T>,
) -> Option<(Array1<T>, T)> {
    let gram = e.dot(&e.t());
    let rayleigh = |v: &Array1<T>| v.dot(&gram.dot(v));

    let mut v = start.to_owned();
    if normalize(v.view_mut()).is_none() || !(rayleigh(&v) > T::zero()) {
        // Start from the column carrying the most energy.
        let best = e
            .axis_iter(Axis(1))
            .enumerate()
            .map(|(j, c)| (j, c.dot(&c)))
            .fold((0, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(best.1 > T::zero()) {
            return None;
        }
        v = e.column(best.0).to_owned();
        normalize(v.view_mut())?;
    }
    let start_rq = rayleigh(&v);
    let initial = v.clone();

    let tol = T::lit(POWER_TOL);
    for _ in 0..POWER_MAX_ITER {
        let mut w = gram.dot(&v);
        if normalize(w.view_mut()).is_none() {
            break;
        }
        let delta = sq_dist(w.view(), v.view()).sqrt();
        v = w;
        if delta < tol {
            break;
        }
    }
    let rq = rayleigh(&v);
    if rq < start_rq {
        Some((initial, start_rq))
    } else {
        Some((v, rq))
    }
}

/// Spectral norm by power iteration on `aᵀa`.
pub fn spectral_norm<T: Scalar>(a: ArrayView2<'_, T>) -> T {
    let ata = a.t().dot(&a);
    let n = ata.nrows();
    let mut v = Array1::from_elem(n, T::one() / T::lit(n as f64).sqrt());
    let mut lambda = T::zero();
    for _ in 0..1000 {
        let mut w = ata.dot(&v);
        let Some(norm) = normalize(w.view_mut()) else {
            return T::zero();
        };
        let converged = (norm - lambda).abs() <= T::lit(1e-14) * norm;
        lambda = norm;
        v = w;
        if converged {
            break;
        }
    }
    lambda.sqrt()
}
