//! Singular value decompositions.
//!
//! Small problems (short side up to [`EXACT_LIMIT`]) use Householder QR
//! followed by one-sided Jacobi, which resolves every singular value to
//! working precision. Larger ones go through the eigendecomposition of the
//! Gram matrix; that resolves the leading singular values, which is what the
//! callers with big inputs (mode compression) need.

use ndarray::{Array1, Array2};

use super::eigen::symmetric_eigen;
use super::{from_columns, to_columns};
use crate::error::{CpdError, Result};
use crate::scalar::{axpy, dot, from_usize, norm2, Scalar};

pub(crate) const EXACT_LIMIT: usize = 160;
const MAX_SWEEPS: usize = 80;

/// Rank-`r` singular triplets, descending.
#[derive(Debug, Clone)]
pub struct SvdResult<T> {
    pub u: Array2<T>,
    pub s: Array1<T>,
    pub v: Array2<T>,
}

impl<T: Scalar> SvdResult<T> {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U diag(s) Vᵀ`.
    pub fn reconstruct(&self) -> Array2<T> {
        let mut us = self.u.clone();
        for (mut col, &s) in us.columns_mut().into_iter().zip(self.s.iter()) {
            col.mapv_inplace(|x| x * s);
        }
        us.dot(&self.v.t())
    }
}

/// Best rank-`r` approximation of `m` in the Frobenius norm.
pub fn truncated_svd<T: Scalar>(m: &Array2<T>, r: usize) -> Result<SvdResult<T>> {
    let (rows, cols) = m.dim();
    if r == 0 || r > rows.min(cols) {
        return Err(CpdError::InvalidArgument(format!(
            "rank {r} is out of range for a {rows}x{cols} matrix"
        )));
    }
    if rows >= cols {
        svd_tall(m, r)
    } else {
        let t = m.t().to_owned();
        let SvdResult { u, s, v } = svd_tall(&t, r)?;
        Ok(SvdResult { u: v, s, v: u })
    }
}

/// All `min(rows, cols)` singular values, descending.
pub fn singular_values<T: Scalar>(m: &Array2<T>) -> Result<Array1<T>> {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Ok(Array1::zeros(0));
    }
    let tall = if rows >= cols { m.clone() } else { m.t().to_owned() };
    let n = tall.ncols();
    if n > EXACT_LIMIT {
        let eig = symmetric_eigen(&super::gram(&tall))?;
        let mut s: Vec<T> = eig.values.iter().map(|&l| l.max(T::zero()).sqrt()).collect();
        s.reverse();
        return Ok(Array1::from(s));
    }
    let square = if tall.nrows() > 2 * n {
        householder_qr(&tall).r_columns()
    } else {
        to_columns(&tall)
    };
    let (w, _) = jacobi(square, false)?;
    let mut s: Vec<T> = w.iter().map(|c| norm2(c)).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(Array1::from(s))
}

fn svd_tall<T: Scalar>(a: &Array2<T>, r: usize) -> Result<SvdResult<T>> {
    let (m, n) = a.dim();
    if n > EXACT_LIMIT {
        return svd_tall_gram(a, r);
    }
    let (w, v_cols, q) = if m > 2 * n {
        let qr = householder_qr(a);
        let (w, v) = jacobi(qr.r_columns(), true)?;
        (w, v, Some(qr))
    } else {
        let (w, v) = jacobi(to_columns(a), true)?;
        (w, v, None)
    };
    let v_cols = v_cols.expect("vectors requested");
    let mut order: Vec<(T, usize)> = w.iter().enumerate().map(|(j, c)| (norm2(c), j)).collect();
    order.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal));
    order.truncate(r);

    let sigma_max = order[0].0;
    let tiny = sigma_max * T::epsilon() * from_usize(m.max(n));
    let mut u_cols = Vec::with_capacity(r);
    let mut s = Vec::with_capacity(r);
    let mut v_out = Vec::with_capacity(r);
    for &(sig, j) in &order {
        let mut u = w[j].clone();
        if sig > tiny && sig > T::zero() {
            let inv = sig.recip();
            u.iter_mut().for_each(|x| *x *= inv);
        } else {
            u.iter_mut().for_each(|x| *x = T::zero());
        }
        u_cols.push(u);
        s.push(sig);
        v_out.push(v_cols[j].clone());
    }
    let u_len = u_cols[0].len();
    complete_orthonormal(&mut u_cols, u_len);
    let u_small = from_columns(u_len, &u_cols);
    let u = match q {
        Some(qr) => qr.apply_q(&u_small),
        None => u_small,
    };
    Ok(SvdResult {
        u,
        s: Array1::from(s),
        v: from_columns(n, &v_out),
    })
}

fn svd_tall_gram<T: Scalar>(a: &Array2<T>, r: usize) -> Result<SvdResult<T>> {
    let (m, n) = a.dim();
    let eig = symmetric_eigen(&super::gram(a))?;
    // eigenvalues ascending
    let idx: Vec<usize> = (0..n).rev().take(r).collect();
    let s: Vec<T> = idx.iter().map(|&i| eig.values[i].max(T::zero()).sqrt()).collect();
    let v = Array2::from_shape_fn((n, r), |(i, k)| eig.vectors[[i, idx[k]]]);
    let av = a.dot(&v);
    let tiny = s[0] * T::epsilon() * from_usize(m.max(n));
    let mut u_cols: Vec<Vec<T>> = (0..r)
        .map(|k| {
            let col = av.column(k);
            if s[k] > tiny && s[k] > T::zero() {
                col.iter().map(|&x| x / s[k]).collect()
            } else {
                vec![T::zero(); m]
            }
        })
        .collect();
    // re-orthogonalize: the Gram route loses orthogonality for small values
    complete_orthonormal(&mut u_cols, m);
    Ok(SvdResult {
        u: from_columns(m, &u_cols),
        s: Array1::from(s),
        v,
    })
}

/// Replaces zero columns with unit vectors orthogonal to all other columns
/// (modified Gram-Schmidt against the standard basis).
fn complete_orthonormal<T: Scalar>(cols: &mut [Vec<T>], len: usize) {
    let missing: Vec<usize> = (0..cols.len())
        .filter(|&j| cols[j].iter().all(|&x| x == T::zero()))
        .collect();
    if missing.is_empty() {
        return;
    }
    let mut basis = 0;
    for j in missing {
        while basis < len {
            let mut e = vec![T::zero(); len];
            e[basis] = T::one();
            basis += 1;
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == j {
                        continue;
                    }
                    let proj = dot(c, &e);
                    axpy(-proj, c, &mut e);
                }
            }
            let nrm = norm2(&e);
            if nrm > T::lit(0.5) {
                e.iter_mut().for_each(|x| *x /= nrm);
                cols[j] = e;
                break;
            }
        }
    }
}

struct HouseholderQr<T> {
    m: usize,
    n: usize,
    /// Column-major working matrix; the upper triangle holds R.
    cols: Vec<Vec<T>>,
    /// Unit reflector vectors `v_k`, acting on rows `k..m` (`H_k = I - 2 v vᵀ`).
    reflectors: Vec<Vec<T>>,
}

fn householder_qr<T: Scalar>(a: &Array2<T>) -> HouseholderQr<T> {
    let (m, n) = a.dim();
    let mut cols = to_columns(a);
    let mut reflectors = Vec::with_capacity(n);
    let two = T::lit(2.0);
    for k in 0..n {
        let (head, tail) = cols.split_at_mut(k + 1);
        let x = &mut head[k][k..];
        let normx = norm2(x);
        if normx == T::zero() {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if x[0] >= T::zero() { -normx } else { normx };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vn = norm2(&v);
        if vn == T::zero() {
            reflectors.push(Vec::new());
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vn);
        x[0] = alpha;
        x[1..].iter_mut().for_each(|e| *e = T::zero());
        for c in tail.iter_mut() {
            let seg = &mut c[k..];
            let s = two * dot(&v, seg);
            axpy(-s, &v, seg);
        }
        reflectors.push(v);
    }
    HouseholderQr {
        m,
        n,
        cols,
        reflectors,
    }
}

impl<T: Scalar> HouseholderQr<T> {
    fn r_columns(&self) -> Vec<Vec<T>> {
        self.cols
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let mut col = c[..self.n].to_vec();
                col[j + 1..].iter_mut().for_each(|x| *x = T::zero());
                col
            })
            .collect()
    }

    /// `Q · [x; 0]` for an `n × k` matrix `x`.
    fn apply_q(&self, x: &Array2<T>) -> Array2<T> {
        let two = T::lit(2.0);
        let mut cols: Vec<Vec<T>> = x
            .columns()
            .into_iter()
            .map(|c| {
                let mut v = vec![T::zero(); self.m];
                for (dst, &src) in v.iter_mut().zip(c.iter()) {
                    *dst = src;
                }
                v
            })
            .collect();
        for k in (0..self.n).rev() {
            let v = &self.reflectors[k];
            if v.is_empty() {
                continue;
            }
            for c in cols.iter_mut() {
                let seg = &mut c[k..];
                let s = two * dot(v, seg);
                axpy(-s, v, seg);
            }
        }
        from_columns(self.m, &cols)
    }
}

/// One-sided (Hestenes) Jacobi on column-major columns. Returns the rotated
/// columns, whose norms are the singular values, and optionally `V`.
#[allow(clippy::type_complexity)]
fn jacobi<T: Scalar>(mut w: Vec<Vec<T>>, want_v: bool) -> Result<(Vec<Vec<T>>, Option<Vec<Vec<T>>>)> {
    let n = w.len();
    let m = w.first().map_or(0, |c| c.len());
    let mut v: Option<Vec<Vec<T>>> = want_v.then(|| {
        (0..n)
            .map(|j| {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                e
            })
            .collect()
    });
    let tol = T::epsilon() * from_usize(m.max(1));
    let mut norms: Vec<T> = w.iter().map(|c| dot(c, c)).collect();
    // columns this small relative to the whole matrix are rounding noise
    let scale = tol * tol * norms.iter().copied().fold(T::zero(), |a, b| a + b);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= scale || beta <= scale {
                    continue;
                }
                let (lo, hi) = w.split_at_mut(q);
                let (wp, wq) = (&mut lo[p], &mut hi[0]);
                let gamma = dot(wp, wq);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = (T::one() + t * t).sqrt().recip();
                let s = c * t;
                rotate(wp, wq, c, s);
                norms[p] = dot(wp, wp);
                norms[q] = dot(wq, wq);
                if let Some(v) = v.as_mut() {
                    let (lo, hi) = v.split_at_mut(q);
                    rotate(&mut lo[p], &mut hi[0], c, s);
                }
            }
        }
        if !rotated {
            return Ok((w, v));
        }
    }
    Err(CpdError::NoConvergence {
        what: "Jacobi SVD",
        iterations: MAX_SWEEPS,
    })
}

#[inline]
fn rotate<T: Scalar>(x: &mut [T], y: &mut [T], c: T, s: T) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (p, q) = (*a, *b);
        *a = c * p - s * q;
        *b = s * p + c * q;
    }
}

/// Dominant singular triplet from the alternating power iteration.
#[derive(Debug, Clone)]
pub struct LeadingTriplet<T> {
    pub u: Array1<T>,
    pub sigma: T,
    pub v: Array1<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration `u ← M v / ‖v‖²`, `v ← Mᵀ u / ‖u‖²`, run on unit vectors.
///
/// Starts from the largest row of `M`, stops once `σ` changes by less than
/// `tol · σ`. `u` and `v` are unit vectors; the first nonzero entry of `u`
/// is made nonnegative. Hitting `max_iters` is reported through `converged`.
pub fn leading_triplet<T: Scalar>(m: &Array2<T>, max_iters: usize, tol: T) -> Result<LeadingTriplet<T>> {
    let (best_row, best_norm) = m
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| (i, r.dot(&r)))
        .fold((0, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
    if best_norm == T::zero() {
        return Err(CpdError::ZeroInput("matrix"));
    }
    let mut v = m.row(best_row).to_owned();
    v /= best_norm.sqrt();
    let mut u = m.dot(&v);
    let mut sigma = T::zero();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        u = m.dot(&v);
        let un = u.dot(&u).sqrt();
        if un == T::zero() {
            return Err(CpdError::ZeroInput("matrix"));
        }
        u /= un;
        v = m.t().dot(&u);
        let next = v.dot(&v).sqrt();
        v /= next;
        let done = (next - sigma).abs() <= tol * next;
        sigma = next;
        if done {
            converged = true;
            break;
        }
    }
    if let Some(&first) = u.iter().find(|&&x| x != T::zero()) {
        if first < T::zero() {
            u.mapv_inplace(|x| -x);
            v.mapv_inplace(|x| -x);
        }
    }
    Ok(LeadingTriplet {
        u,
        sigma,
        v,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    fn check_orthonormal(q: &Array2<f64>, tol: f64) {
        let g = q.t().dot(q);
        let eye = Array2::<f64>::eye(q.ncols());
        assert!(max_abs(&(&g - &eye)) < tol, "not orthonormal: {g:?}");
    }

    #[test]
    fn diagonal_case() {
        let m = array![[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let svd: SvdResult<f64> = truncated_svd(&m, 2).unwrap();
        assert!((svd.s[0] - 3.0).abs() < 1e-14);
        assert!((svd.s[1] - 2.0).abs() < 1e-14);
        check_orthonormal(&svd.u, 1e-12);
        check_orthonormal(&svd.v, 1e-12);
    }

    #[test]
    fn rank_one_reconstruction() {
        let u = array![[1.0], [2.0], [-1.0], [0.5]];
        let v = array![[3.0], [-1.0], [2.0]];
        let m = u.dot(&v.t());
        let svd = truncated_svd(&m, 1).unwrap();
        assert!(max_abs(&(&svd.reconstruct() - &m)) < 1e-10);
    }

    #[test]
    fn rank_out_of_range() {
        let m = randn(3, 4, 1);
        assert!(truncated_svd(&m, 0).is_err());
        assert!(truncated_svd(&m, 4).is_err());
    }

    #[test]
    fn full_rank_reconstructs_tall_wide_and_qr_paths() {
        for &(r, c) in &[(20, 15), (15, 20), (50, 6), (6, 50), (7, 7)] {
            let m = randn(r, c, (r * 100 + c) as u64);
            let k = r.min(c);
            let svd = truncated_svd(&m, k).unwrap();
            let rel = max_abs(&(&svd.reconstruct() - &m)) / max_abs(&m);
            assert!(rel < 1e-12, "{r}x{c}: {rel}");
            check_orthonormal(&svd.u, 1e-10);
            check_orthonormal(&svd.v, 1e-10);
            assert!(svd.s.windows(2).into_iter().all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn gram_route_matches_exact_route_on_leading_values() {
        let m = randn(EXACT_LIMIT + 20, 400, 3);
        let svd = truncated_svd(&m, 10).unwrap();
        check_orthonormal(&svd.u, 1e-10);
        check_orthonormal(&svd.v, 1e-10);
        // leading singular values must satisfy M v = s u
        let mv = m.dot(&svd.v);
        for k in 0..10 {
            for i in 0..m.nrows() {
                assert!((mv[[i, k]] - svd.s[k] * svd.u[[i, k]]).abs() < 1e-9);
            }
        }
        let all = singular_values(&m).unwrap();
        for k in 0..10 {
            assert!((all[k] - svd.s[k]).abs() < 1e-9 * all[0]);
        }
    }

    #[test]
    fn rank_deficient_input_still_orthonormal() {
        let a = randn(12, 2, 5);
        let b = randn(2, 8, 6);
        let m = a.dot(&b);
        let svd = truncated_svd(&m, 5).unwrap();
        check_orthonormal(&svd.u, 1e-10);
        assert!(svd.s[2] < 1e-12 * svd.s[0]);
        let s = singular_values(&m).unwrap();
        assert_eq!(s.len(), 8);
        assert!(s[1] > 1e-3 && s[2] < 1e-12 * s[0]);
    }

    #[test]
    fn leading_triplet_rank_one_and_diag() {
        let u = array![[1.0], [-2.0], [2.0]];
        let v = array![[4.0], [3.0]];
        let m = u.dot(&v.t());
        let lt: LeadingTriplet<f64> = leading_triplet(&m, 500, 1e-15).unwrap();
        assert!((lt.sigma - 15.0).abs() < 1e-12);
        assert!(lt.converged);
        let rec = lt.u.view().insert_axis(ndarray::Axis(1)).dot(&lt.v.view().insert_axis(ndarray::Axis(0))) * lt.sigma;
        assert!(max_abs(&(&rec - &m)) < 1e-12);
        assert!(lt.u[0] >= 0.0);

        let d = array![[5.0, 0.0], [0.0, 1.0]];
        let lt: LeadingTriplet<f64> = leading_triplet(&d, 500, 1e-15).unwrap();
        assert!((lt.sigma - 5.0).abs() < 1e-14);
        assert!((lt.u[0] - 1.0).abs() < 1e-14 && lt.u[1].abs() < 1e-14);
    }

    #[test]
    fn leading_triplet_matches_svd() {
        let m = randn(8, 6, 11);
        let lt = leading_triplet(&m, 10_000, 1e-15).unwrap();
        let svd = truncated_svd(&m, 1).unwrap();
        assert!((lt.sigma - svd.s[0]).abs() < 1e-8 * svd.s[0]);
        let sign = if svd.u[[0, 0]] * lt.u[0] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..8 {
            assert!((lt.u[i] - sign * svd.u[[i, 0]]).abs() < 1e-6);
        }
    }

    #[test]
    fn leading_triplet_rejects_zero() {
        assert!(leading_triplet(&Array2::<f64>::zeros((3, 2)), 10, 1e-10).is_err());
    }
}
