//! Dense nonsymmetric eigenvalue moduli.
//!
//! Classic EISPACK pipeline: Parlett-Reinsch balancing, elimination to upper
//! Hessenberg form with partial pivoting, then Francis double-shift QR
//! iteration (eigenvalues only, no Schur vectors). Sized for fiber
//! dimensions up to 256.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Iteration budget per deflated eigenvalue; total work is bounded by
/// `MAX_ITERS_PER_EIGENVALUE * d`.
pub const MAX_ITERS_PER_EIGENVALUE: usize = 30;

const RADIX: f64 = 2.0;

/// Parlett-Reinsch balancing: diagonal similarity scaling so row and column
/// norms roughly match. Leaves the spectrum unchanged.
fn balance(a: &mut Array2<f64>) {
    let n = a.nrows();
    loop {
        let mut done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[[j, i]].abs();
                    r += a[[i, j]].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                let mut c2 = c;
                while c2 < g {
                    f *= RADIX;
                    c2 *= RADIX * RADIX;
                }
                g = r * RADIX;
                while c2 > g {
                    f /= RADIX;
                    c2 /= RADIX * RADIX;
                }
                if (c2 + r) / f < 0.95 * s {
                    done = false;
                    let ginv = 1.0 / f;
                    for j in 0..n {
                        a[[i, j]] *= ginv;
                    }
                    for j in 0..n {
                        a[[j, i]] *= f;
                    }
                }
            }
        }
        if done {
            break;
        }
    }
}

/// Reduction to upper Hessenberg form by stabilized elementary similarity
/// transformations (elmhes).
fn hessenberg(a: &mut Array2<f64>) {
    let n = a.nrows();
    if n < 3 {
        return;
    }
    for m in 1..n - 1 {
        let mut x = 0.0f64;
        let mut i = m;
        for j in m..n {
            if a[[j, m - 1]].abs() > x.abs() {
                x = a[[j, m - 1]];
                i = j;
            }
        }
        if i != m {
            for j in m - 1..n {
                a.swap([i, j], [m, j]);
            }
            for j in 0..n {
                a.swap([j, i], [j, m]);
            }
        }
        if x != 0.0 {
            for i2 in m + 1..n {
                let mut y = a[[i2, m - 1]];
                if y != 0.0 {
                    y /= x;
                    a[[i2, m - 1]] = y;
                    for j in m..n {
                        let t = y * a[[m, j]];
                        a[[i2, j]] -= t;
                    }
                    for j in 0..n {
                        let t = y * a[[j, i2]];
                        a[[j, m]] += t;
                    }
                }
            }
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix; returns
/// (real parts, imaginary parts) of all eigenvalues.
fn hqr(a: &mut Array2<f64>, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut wr = Vec::with_capacity(n);
    let mut wi = Vec::with_capacity(n);

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[[i, j]].abs();
        }
    }
    if anorm == 0.0 {
        return Ok((vec![0.0; n], vec![0.0; n]));
    }

    let eps = f64::EPSILON;
    let mut nn = n as isize - 1;
    let mut t = 0.0;

    while nn >= 0 {
        let mut its = 0usize;
        loop {
            let nnu = nn as usize;
            // look for a single small subdiagonal element
            let mut l = nnu;
            while l >= 1 {
                let mut s = a[[l - 1, l - 1]].abs() + a[[l, l]].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[[l, l - 1]].abs() <= eps * s {
                    a[[l, l - 1]] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[[nnu, nnu]];
            if l == nnu {
                // one real root found
                wr.push(x + t);
                wi.push(0.0);
                nn -= 1;
                break;
            }
            let mut y = a[[nnu - 1, nnu - 1]];
            let mut w = a[[nnu, nnu - 1]] * a[[nnu - 1, nnu]];
            if l == nnu - 1 {
                // a 2x2 trailing block: two roots found
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    let z = p + z.abs().copysign(p);
                    wr.push(x + z);
                    wr.push(if z != 0.0 { x - w / z } else { x + z });
                    wi.push(0.0);
                    wi.push(0.0);
                } else {
                    wr.push(x + p);
                    wr.push(x + p);
                    wi.push(z);
                    wi.push(-z);
                }
                nn -= 2;
                break;
            }
            if its == MAX_ITERS_PER_EIGENVALUE {
                return Err(Error::Numeric(format!(
                    "QR eigenvalue iteration failed to converge within {} iterations per eigenvalue",
                    MAX_ITERS_PER_EIGENVALUE
                )));
            }
            if its == 10 || its == 20 {
                // exceptional shift
                t += x;
                for i in 0..=nnu {
                    a[[i, i]] -= x;
                }
                let s = a[[nnu, nnu - 1]].abs() + a[[nnu - 1, nnu - 2]].abs();
                y = 0.75 * s;
                x = y;
                w = -0.4375 * s * s;
            }
            its += 1;
            // form shift and look for two consecutive small subdiagonals
            let mut m = nnu - 2;
            let mut p;
            let mut q;
            let mut r;
            loop {
                let z = a[[m, m]];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[[m + 1, m]] + a[[m, m + 1]];
                q = a[[m + 1, m + 1]] - z - rr - ss;
                r = a[[m + 2, m + 1]];
                let s2 = p.abs() + q.abs() + r.abs();
                p /= s2;
                q /= s2;
                r /= s2;
                if m == l {
                    break;
                }
                let u = a[[m, m - 1]].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[[m - 1, m - 1]].abs() + z.abs() + a[[m + 1, m + 1]].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nnu {
                a[[i, i - 2]] = 0.0;
                if i != m + 2 {
                    a[[i, i - 3]] = 0.0;
                }
            }
            // double QR step on rows l..nn and columns m..nn
            for k in m..nnu {
                if k != m {
                    p = a[[k, k - 1]];
                    q = a[[k + 1, k - 1]];
                    r = if k != nnu - 1 { a[[k + 2, k - 1]] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[[k, k - 1]] = -a[[k, k - 1]];
                        }
                    } else {
                        a[[k, k - 1]] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nnu {
                        let mut pj = a[[k, j]] + q * a[[k + 1, j]];
                        if k != nnu - 1 {
                            pj += r * a[[k + 2, j]];
                            a[[k + 2, j]] -= pj * z;
                        }
                        a[[k + 1, j]] -= pj * y;
                        a[[k, j]] -= pj * x;
                    }
                    let mmin = nnu.min(k + 3);
                    for i in l..=mmin {
                        let mut pi = x * a[[i, k]] + y * a[[i, k + 1]];
                        if k != nnu - 1 {
                            pi += z * a[[i, k + 2]];
                            a[[i, k + 2]] -= pi * r;
                        }
                        a[[i, k + 1]] -= pi * q;
                        a[[i, k]] -= pi;
                    }
                }
            }
        }
    }
    Ok((wr, wi))
}

/// Moduli of all eigenvalues of a real square matrix, sorted descending.
/// Complex pairs contribute two equal moduli.
pub fn eigen_moduli_impl(h: &Array2<f64>) -> Result<Vec<f64>> {
    let n = h.nrows();
    if n != h.ncols() {
        return Err(Error::Data(format!(
            "eigen_moduli: matrix is {}x{}, not square",
            h.nrows(),
            h.ncols()
        )));
    }
    if n == 0 || n > 256 {
        return Err(Error::Data(format!(
            "eigen_moduli: dimension {} outside supported range [1, 256]",
            n
        )));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("eigen_moduli: non-finite entries".into()));
    }
    if n == 1 {
        return Ok(vec![h[[0, 0]].abs()]);
    }
    let mut a = h.clone();
    balance(&mut a);
    hessenberg(&mut a);
    let (wr, wi) = hqr(&mut a, n)?;
    let mut moduli: Vec<f64> = wr
        .iter()
        .zip(wi.iter())
        .map(|(re, im)| re.hypot(*im))
        .collect();
    moduli.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(moduli)
}
