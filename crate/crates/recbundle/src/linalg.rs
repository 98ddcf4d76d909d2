//! Small dense helpers: LU determinant / inverse and a few vector utilities.
//!
//! Everything here is plain Doolittle LU with partial pivoting; matrices in
//! this crate stay at fiber dimension (d <= 256), so no blocking is needed.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Determinant via LU with partial pivoting.
pub fn det(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut lu = a.clone();
    let mut sign = 1.0;
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if lu[[i, k]].abs() > lu[[p, k]].abs() {
                p = i;
            }
        }
        if lu[[p, k]] == 0.0 {
            return 0.0;
        }
        if p != k {
            for j in 0..n {
                lu.swap([k, j], [p, j]);
            }
            sign = -sign;
        }
        let piv = lu[[k, k]];
        for i in k + 1..n {
            let f = lu[[i, k]] / piv;
            lu[[i, k]] = f;
            for j in k + 1..n {
                lu[[i, j]] -= f * lu[[k, j]];
            }
        }
    }
    let mut d = sign;
    for k in 0..n {
        d *= lu[[k, k]];
    }
    d
}

/// Inverse via LU; `Err` on a singular matrix.
pub fn inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if lu[[i, k]].abs() > lu[[p, k]].abs() {
                p = i;
            }
        }
        if lu[[p, k]] == 0.0 {
            return Err(Error::Numeric("singular matrix in inverse".into()));
        }
        if p != k {
            for j in 0..n {
                lu.swap([k, j], [p, j]);
            }
            perm.swap(k, p);
        }
        let piv = lu[[k, k]];
        for i in k + 1..n {
            let f = lu[[i, k]] / piv;
            lu[[i, k]] = f;
            for j in k + 1..n {
                lu[[i, j]] -= f * lu[[k, j]];
            }
        }
    }
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut col = vec![0.0; n];
    for e in 0..n {
        for (i, c) in col.iter_mut().enumerate() {
            *c = if perm[i] == e { 1.0 } else { 0.0 };
        }
        // forward substitution (unit lower)
        for i in 0..n {
            for j in 0..i {
                col[i] -= lu[[i, j]] * col[j];
            }
        }
        // back substitution
        for i in (0..n).rev() {
            for j in i + 1..n {
                col[i] -= lu[[i, j]] * col[j];
            }
            col[i] /= lu[[i, i]];
        }
        for i in 0..n {
            inv[[i, e]] = col[i];
        }
    }
    Ok(inv)
}

pub fn l2_norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

/// Largest singular value and its unit singular vectors (sigma, u, v),
/// by power iteration on A^T A.
pub fn top_singular_triplet(a: &Array2<f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let n = a.ncols();
    let ata = a.t().dot(a);
    let mut v = Array1::<f64>::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut prev = f64::INFINITY;
    for _ in 0..10_000 {
        let w = ata.dot(&v);
        let norm = l2_norm(&w);
        if norm == 0.0 {
            return (0.0, Array1::zeros(a.nrows()), v);
        }
        v = w / norm;
        if (norm - prev).abs() <= 1e-14 * norm.max(1.0) {
            prev = norm;
            break;
        }
        prev = norm;
    }
    let sigma = prev.sqrt();
    let av = a.dot(&v);
    let u = if sigma > 0.0 { av / sigma } else { Array1::zeros(a.nrows()) };
    (sigma, u, v)
}
