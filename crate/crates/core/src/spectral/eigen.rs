//! Dense symmetric eigensolver: Householder reduction to tridiagonal form
//! followed by implicit QL iterations with Wilkinson-type shifts.
//!
//! The reduction walks rows from the bottom up so every Householder vector
//! and every updated row is contiguous in the row-major lower triangle.

use crate::ensembles::SymmetricMatrix;
use crate::error::{Error, Result};

/// QL sweeps allowed per eigenvalue before giving up.
const MAX_SWEEPS: usize = 60;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for k in 0..chunks {
        let o = 4 * k;
        acc[0] += a[o] * b[o];
        acc[1] += a[o + 1] * b[o + 1];
        acc[2] += a[o + 2] * b[o + 2];
        acc[3] += a[o + 3] * b[o + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..n {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) struct Reduction {
    pub diag: Vec<f64>,
    /// `off[i]` couples rows `i - 1` and `i`; `off[0] = 0`.
    pub off: Vec<f64>,
    /// Householder vectors `v_i` (length `i`) and their `h_i = v·v / 2`; `h_i = 0` means identity.
    reflectors: Vec<(Vec<f64>, f64)>,
}

/// Reduce the lower triangle of the row-major `n x n` array `a` to tridiagonal form.
pub(crate) fn tridiagonalize(a: &mut [f64], n: usize, keep_reflectors: bool) -> Reduction {
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    let mut reflectors = Vec::new();
    if keep_reflectors {
        reflectors.resize_with(n, || (Vec::new(), 0.0));
    }
    let mut p = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut v = vec![0.0; n];
    for i in (1..n).rev() {
        v[..i].copy_from_slice(&a[i * n..i * n + i]);
        let last = v[i - 1];
        let head = dot(&v[..i - 1], &v[..i - 1]);
        diag[i] = a[i * n + i];
        if head == 0.0 {
            off[i] = last;
            continue;
        }
        let sigma = head + last * last;
        let alpha = if last >= 0.0 { -sigma.sqrt() } else { sigma.sqrt() };
        v[i - 1] = last - alpha;
        let h = sigma - last * alpha;
        off[i] = alpha;

        // p = A v / h over the leading i x i block, lower triangle only
        let (v, p) = (&v[..i], &mut p[..i]);
        p.fill(0.0);
        for r in 0..i {
            let row = &a[r * n..r * n + r + 1];
            let vr = v[r];
            let acc = dot(&row[..r], &v[..r]);
            axpy(vr, &row[..r], &mut p[..r]);
            p[r] += acc + row[r] * vr;
        }
        let inv_h = 1.0 / h;
        for x in p.iter_mut() {
            *x *= inv_h;
        }
        let k = dot(v, p) * 0.5 * inv_h;
        let w = &mut w[..i];
        for ((wi, pi), vi) in w.iter_mut().zip(p.iter()).zip(v) {
            *wi = pi - k * vi;
        }
        for r in 0..i {
            let row = &mut a[r * n..r * n + r + 1];
            let (vr, wr) = (v[r], w[r]);
            for ((x, wc), vc) in row.iter_mut().zip(&w[..=r]).zip(&v[..=r]) {
                *x -= vr * wc + wr * vc;
            }
        }
        if keep_reflectors {
            reflectors[i] = (v.to_vec(), h);
        }
    }
    if n > 0 {
        diag[0] = a[0];
    }
    Reduction {
        diag,
        off,
        reflectors,
    }
}

/// Implicit QL on the tridiagonal `(diag, off)`. When `rows` is given it holds
/// an `n x n` row-major array whose rows are rotated alongside, so starting from
/// the identity it ends with the tridiagonal eigenvectors as rows.
pub(crate) fn tridiagonal_ql(diag: &mut [f64], off: &mut [f64], mut rows: Option<&mut [f64]>) -> Result<()> {
    let n = diag.len();
    if n <= 1 {
        return Ok(());
    }
    let e = off;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let d = diag;
    let eps = f64::EPSILON;
    let mut shift_total = 0.0;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_SWEEPS {
                    return Err(Error::NumericalFailure { residual: e[l].abs() });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for x in d.iter_mut().skip(l + 2) {
                    *x -= h;
                }
                shift_total += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(z) = rows.as_deref_mut() {
                        let (lo, hi) = z.split_at_mut((i + 1) * n);
                        let zi = &mut lo[i * n..];
                        let zi1 = &mut hi[..n];
                        for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                            let t = *b;
                            *b = s * *a + c * t;
                            *a = c * *a - s * t;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += shift_total;
        e[l] = 0.0;
    }
    Ok(())
}

/// Eigenvalues in ascending order.
pub fn eigenvalues(matrix: &SymmetricMatrix) -> Result<Vec<f64>> {
    let n = matrix.n();
    let mut a = matrix.to_dense();
    let mut red = tridiagonalize(&mut a, n, false);
    drop(a);
    tridiagonal_ql(&mut red.diag, &mut red.off, None)?;
    let mut d = red.diag;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Eigenvalues (ascending) and eigenvectors stored as rows of an `n x n` array.
pub(crate) fn eigen_system(matrix: &SymmetricMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = matrix.n();
    let mut a = matrix.to_dense();
    let mut red = tridiagonalize(&mut a, n, true);
    drop(a);
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }
    tridiagonal_ql(&mut red.diag, &mut red.off, Some(&mut z))?;
    // U^T = Z^T H_1 H_2 ... H_{n-1}
    for (i, (v, h)) in red.reflectors.iter().enumerate().skip(1) {
        if *h == 0.0 {
            continue;
        }
        let inv_h = 1.0 / h;
        for r in 0..n {
            let row = &mut z[r * n..r * n + i];
            let s = dot(row, v) * inv_h;
            axpy(-s, v, row);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| red.diag[x].total_cmp(&red.diag[y]).then(x.cmp(&y)));
    let values = order.iter().map(|&k| red.diag[k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        vectors[dst * n..(dst + 1) * n].copy_from_slice(&z[src * n..(src + 1) * n]);
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let m = SymmetricMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let ev = eigenvalues(&m).unwrap();
        assert!((ev[0] + 1.0).abs() < 1e-15 && (ev[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn already_tridiagonal_input() {
        let m = SymmetricMatrix::from_rows(&[
            vec![2.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ])
        .unwrap();
        let ev = eigenvalues(&m).unwrap();
        let s = 2f64.sqrt();
        for (got, want) in ev.iter().zip([2.0 - s, 2.0, 2.0 + s]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn one_by_one_and_empty() {
        let m = SymmetricMatrix::diagonal(&[5.0]);
        assert_eq!(eigenvalues(&m).unwrap(), vec![5.0]);
        let e = SymmetricMatrix::zeros(0);
        assert!(eigenvalues(&e).unwrap().is_empty());
    }
}
