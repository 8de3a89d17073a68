use ndarray::{Array1, Array2};

use super::svd::truncated_svd;
use crate::error::{CpdError, Result};
use crate::scalar::{from_usize, Scalar};

/// Minimum-norm least-squares solution together with the numerical rank of
/// the system matrix.
#[derive(Debug, Clone)]
pub struct Lstsq<T> {
    pub x: Array2<T>,
    pub rank: usize,
    pub singular_values: Array1<T>,
}

impl<T: Scalar> Lstsq<T> {
    /// `σ_max / σ_min` over all singular values (infinite when singular).
    pub fn condition(&self) -> f64 {
        let s = &self.singular_values;
        match (s.first(), s.last()) {
            (Some(&hi), Some(&lo)) if lo > T::zero() => (hi / lo).as_f64(),
            _ => f64::INFINITY,
        }
    }
}

/// Solves `min ‖A X − B‖_F`, truncating singular values below
/// `max(m, n) · eps · σ_max`.
pub fn lstsq<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Result<Lstsq<T>> {
    let (m, n) = a.dim();
    if b.nrows() != m {
        return Err(CpdError::ShapeMismatch(format!(
            "system matrix has {m} rows, right-hand side {}",
            b.nrows()
        )));
    }
    if m == 0 || n == 0 {
        return Err(CpdError::ShapeMismatch(format!("empty system matrix {:?}", a.dim())));
    }
    let svd = truncated_svd(a, m.min(n))?;
    let cutoff = svd.s[0] * from_usize::<T>(m.max(n)) * T::epsilon();
    let rank = svd.s.iter().take_while(|&&s| s > cutoff && s > T::zero()).count();
    let mut utb = svd.u.t().dot(b);
    for (k, mut row) in utb.rows_mut().into_iter().enumerate() {
        let scale = if k < rank { svd.s[k].recip() } else { T::zero() };
        row.mapv_inplace(|x| x * scale);
    }
    let x = svd.v.dot(&utb);
    Ok(Lstsq {
        x,
        rank,
        singular_values: svd.s,
    })
}

/// Minimum-norm least-squares solution `A⁺ B`.
pub fn ls_solve<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Result<Array2<T>> {
    Ok(lstsq(a, b)?.x)
}

/// Moore-Penrose pseudoinverse.
pub fn pinv<T: Scalar>(a: &Array2<T>) -> Result<Array2<T>> {
    ls_solve(a, &Array2::eye(a.nrows()))
}

/// `M V⁻¹` for a symmetric positive semidefinite `V` (a Hadamard product of
/// Gram matrices). Uses Cholesky and falls back to the pseudoinverse when
/// `V` is numerically singular.
pub fn solve_gram_right<T: Scalar>(m: &Array2<T>, v: &Array2<T>) -> Result<Array2<T>> {
    let j = v.nrows();
    if v.ncols() != j || m.ncols() != j {
        return Err(CpdError::ShapeMismatch(format!(
            "cannot right-divide {:?} by {:?}",
            m.dim(),
            v.dim()
        )));
    }
    match cholesky(v) {
        Some(l) => {
            let mut x = m.clone();
            for mut row in x.rows_mut() {
                // solve L y = row, then Lᵀ z = y
                for i in 0..j {
                    let mut s = row[i];
                    for k in 0..i {
                        s -= l[[i, k]] * row[k];
                    }
                    row[i] = s / l[[i, i]];
                }
                for i in (0..j).rev() {
                    let mut s = row[i];
                    for k in i + 1..j {
                        s -= l[[k, i]] * row[k];
                    }
                    row[i] = s / l[[i, i]];
                }
            }
            Ok(x)
        }
        None => Ok(m.dot(&pinv(v)?)),
    }
}

/// Lower Cholesky factor, or `None` if a pivot is not safely positive.
fn cholesky<T: Scalar>(a: &Array2<T>) -> Option<Array2<T>> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[[i, i]]).fold(T::zero(), T::max);
    if !(max_diag > T::zero()) {
        return None;
    }
    let floor = max_diag * from_usize::<T>(n) * T::epsilon() * T::lit(16.0);
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for k in 0..=i {
            let mut s = a[[i, k]];
            for p in 0..k {
                s -= l[[i, p]] * l[[k, p]];
            }
            if i == k {
                if !(s > floor) {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, k]] = s / l[[k, k]];
            }
        }
    }
    Some(l)
}
