//! Dense matrix kernels: Khatri-Rao and Hadamard products, singular value
//! decompositions, least squares.

mod eigen;
mod lstsq;
mod svd;

use std::borrow::Borrow;

use ndarray::Array2;

use crate::error::{CpdError, Result};
use crate::scalar::Scalar;

pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use lstsq::{ls_solve, lstsq, pinv, solve_gram_right, Lstsq};
pub use svd::{leading_triplet, singular_values, truncated_svd, LeadingTriplet, SvdResult};

/// Column-wise Kronecker product.
///
/// The first listed matrix varies fastest: `khatri_rao(&[a, b])` is `B ⊙ A`,
/// whose row `i_a + I_a * i_b` holds `a[i_a, j] * b[i_b, j]`. This matches the
/// canonical tensor layout, so `khatri_rao(&[a_1, .., a_N])` column `j` is the
/// vectorized rank-1 term `a_1j ∘ .. ∘ a_Nj`.
pub fn khatri_rao<T: Scalar, M: Borrow<Array2<T>>>(mats: &[M]) -> Result<Array2<T>> {
    let first = mats
        .first()
        .ok_or_else(|| CpdError::InvalidArgument("khatri_rao needs at least one matrix".into()))?;
    khatri_rao_with_rank(mats, first.borrow().ncols())
}

/// Like [`khatri_rao`], but an empty list yields a `1 × rank` matrix of ones
/// (the neutral element), which keeps callers that peel off modes simple.
pub(crate) fn khatri_rao_with_rank<T: Scalar, M: Borrow<Array2<T>>>(
    mats: &[M],
    rank: usize,
) -> Result<Array2<T>> {
    for m in mats {
        if m.borrow().ncols() != rank {
            return Err(CpdError::ShapeMismatch(format!(
                "khatri_rao operands must share the column count {rank}, got {}",
                m.borrow().ncols()
            )));
        }
    }
    let rows: usize = mats.iter().map(|m| m.borrow().nrows()).product();
    let mut out = Array2::from_elem((1, rank), T::one());
    let mut cur_rows = 1;
    for m in mats {
        let m = m.borrow();
        let mut next = Array2::zeros((cur_rows * m.nrows(), rank));
        for i in 0..m.nrows() {
            let mrow = m.row(i);
            for r in 0..cur_rows {
                let orow = out.row(r);
                let mut nrow = next.row_mut(r + cur_rows * i);
                for j in 0..rank {
                    nrow[j] = orow[j] * mrow[j];
                }
            }
        }
        out = next;
        cur_rows *= m.nrows();
    }
    debug_assert_eq!(out.nrows(), rows);
    Ok(out)
}

/// Entrywise product of equally shaped matrices.
pub fn hadamard<T: Scalar, M: Borrow<Array2<T>>>(mats: &[M]) -> Result<Array2<T>> {
    let first = mats
        .first()
        .ok_or_else(|| CpdError::InvalidArgument("hadamard needs at least one matrix".into()))?
        .borrow();
    let mut out = first.clone();
    for m in &mats[1..] {
        let m = m.borrow();
        if m.dim() != out.dim() {
            return Err(CpdError::ShapeMismatch(format!(
                "hadamard operands {:?} and {:?}",
                out.dim(),
                m.dim()
            )));
        }
        out.zip_mut_with(m, |a, &b| *a *= b);
    }
    Ok(out)
}

/// `AᵀA`.
pub fn gram<T: Scalar>(a: &Array2<T>) -> Array2<T> {
    a.t().dot(a)
}

/// Column-major copy of a matrix as one contiguous buffer per column.
pub(crate) fn to_columns<T: Scalar>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.columns().into_iter().map(|c| c.to_vec()).collect()
}

pub(crate) fn from_columns<T: Scalar>(rows: usize, cols: &[Vec<T>]) -> Array2<T> {
    Array2::from_shape_fn((rows, cols.len()), |(i, j)| cols[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn kron(a: &[f64], b: &[f64]) -> Vec<f64> {
        // b ⊗ a with a varying fastest
        let mut out = Vec::new();
        for &y in b {
            for &x in a {
                out.push(x * y);
            }
        }
        out
    }

    #[test]
    fn khatri_rao_small() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let b = array![[1.0, 2.0], [3.0, 4.0]];
        let kr = khatri_rao(&[a, b]).unwrap();
        assert_eq!(kr, array![[1.0, 0.0], [0.0, 2.0], [3.0, 0.0], [0.0, 4.0]]);
    }

    #[test]
    fn khatri_rao_with_single_row_of_ones() {
        let a = array![[1.0, -2.0, 3.0], [4.0, 5.0, 6.0]];
        let ones = Array2::from_elem((1, 3), 1.0);
        assert_eq!(khatri_rao(&[a.clone(), ones.clone()]).unwrap(), a);
        assert_eq!(khatri_rao(&[ones, a.clone()]).unwrap(), a);
    }

    #[test]
    fn khatri_rao_columns_are_kroneckers() {
        let a = array![[1.0, 2.0], [3.0, -1.0], [0.5, 2.0]];
        let b = array![[2.0, 1.0], [-1.0, 4.0]];
        let c = array![[1.5, -2.0], [3.0, 0.0], [1.0, 1.0], [2.0, 5.0]];
        let kr = khatri_rao(&[&a, &b, &c]).unwrap();
        for j in 0..2 {
            let expect = kron(&kron(&a.column(j).to_vec(), &b.column(j).to_vec()), &c.column(j).to_vec());
            assert_eq!(kr.column(j).to_vec(), expect);
        }
        // associativity
        let ab = khatri_rao(&[&a, &b]).unwrap();
        let bc = khatri_rao(&[&b, &c]).unwrap();
        let left = khatri_rao(&[&ab, &c]).unwrap();
        let right = khatri_rao(&[&a, &bc]).unwrap();
        assert!((&left - &right).iter().all(|d| d.abs() < 1e-14));
        assert_eq!(left, kr);
    }

    #[test]
    fn khatri_rao_column_mismatch() {
        let a = Array2::<f64>::zeros((2, 2));
        let b = Array2::<f64>::zeros((2, 3));
        assert!(khatri_rao(&[a, b]).is_err());
        assert!(khatri_rao::<f64, Array2<f64>>(&[]).is_err());
    }

    #[test]
    fn hadamard_basics() {
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        let ones = Array2::from_elem((2, 2), 1.0);
        let zeros = Array2::<f64>::zeros((2, 2));
        assert_eq!(hadamard(&[&m, &ones]).unwrap(), m);
        assert_eq!(hadamard(&[&m, &zeros]).unwrap(), zeros);
        assert!(hadamard(&[m, Array2::zeros((1, 2))]).is_err());
    }

    #[test]
    fn gram_of_khatri_rao_is_hadamard_of_grams() {
        let a = array![[1.0, 2.0, 0.0], [3.0, -1.0, 1.0], [0.5, 2.0, 2.0]];
        let b = array![[2.0, 1.0, -3.0], [-1.0, 4.0, 1.0]];
        let lhs = gram(&khatri_rao(&[&a, &b]).unwrap());
        let rhs = hadamard(&[gram(&a), gram(&b)]).unwrap();
        assert!((&lhs - &rhs).iter().all(|d: &f64| d.abs() < 1e-12));
    }
}
