//! Kruskal ranks and the KSB sufficient condition for essential uniqueness,
//! for the original tensor and for its mode-reduced versions.

use ndarray::{Array2, ArrayView1};

use crate::error::{CpdError, Result};
use crate::linalg::singular_values;
use crate::scalar::Scalar;
use crate::tensor::{matricize, DenseTensor, ModeSplit};

/// Largest column count for the exact combinatorial Kruskal rank.
pub const MAX_EXACT_KRANK_COLUMNS: usize = 12;

/// Relative singular-value cutoff used by the rank tests.
pub const RANK_TOL: f64 = 1e-8;

/// Kruskal rank: the largest `r` such that every `r` columns are linearly
/// independent. Every column subset is rank-tested with a relative
/// singular-value cutoff `tol`, so the cost grows as `2^J`.
pub fn kruskal_rank<T: Scalar>(m: &Array2<T>, tol: T) -> Result<usize> {
    let (rows, cols) = m.dim();
    if cols == 0 {
        return Err(CpdError::InvalidArgument("matrix has no columns".into()));
    }
    if cols > MAX_EXACT_KRANK_COLUMNS {
        return Err(CpdError::TooManyColumns(cols));
    }
    let mut unit = m.clone();
    for mut col in unit.columns_mut() {
        let nrm = col.dot(&col).sqrt();
        if nrm == T::zero() {
            return Ok(0);
        }
        col.mapv_inplace(|x| x / nrm);
    }
    let mut subset = Vec::with_capacity(cols);
    for r in 1..=cols.min(rows) {
        if !all_subsets_independent(&unit, r, 0, &mut subset, tol)? {
            return Ok(r - 1);
        }
    }
    Ok(cols.min(rows))
}

fn all_subsets_independent<T: Scalar>(
    m: &Array2<T>,
    r: usize,
    start: usize,
    subset: &mut Vec<usize>,
    tol: T,
) -> Result<bool> {
    if subset.len() == r {
        let sub = m.select(ndarray::Axis(1), subset);
        return Ok(numerical_rank(&sub, tol)? == r);
    }
    let remaining = r - subset.len();
    for j in start..=m.ncols() - remaining {
        subset.push(j);
        let ok = all_subsets_independent(m, r, j + 1, subset, tol)?;
        subset.pop();
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Number of singular values above `tol · σ_1`.
pub fn numerical_rank<T: Scalar>(m: &Array2<T>, tol: T) -> Result<usize> {
    let s = singular_values(m)?;
    match s.first() {
        Some(&s1) if s1 > T::zero() => Ok(s.iter().filter(|&&x| x > tol * s1).count()),
        _ => Ok(0),
    }
}

/// Lower bound `min(J, Σ kr − (P − 1))` on the Kruskal rank of a
/// Khatri-Rao product of `P` matrices with the given Kruskal ranks.
pub fn krank_product_bound(kranks: &[usize], rank: usize) -> Result<usize> {
    if kranks.is_empty() {
        return Err(CpdError::InvalidArgument("no Kruskal ranks given".into()));
    }
    if kranks.contains(&0) {
        return Err(CpdError::InvalidArgument(
            "a Kruskal rank of 0 (zero column) leaves the product bound undefined".into(),
        ));
    }
    let sum: usize = kranks.iter().sum();
    Ok(rank.min(sum - (kranks.len() - 1)))
}

/// Monotonicity of the product bound: if every entry of `larger` is at least
/// the matching entry of `smaller`, its bound is at least as large.
pub fn krank_bound_dominates(larger: &[usize], smaller: &[usize], rank: usize) -> Result<bool> {
    if larger.len() != smaller.len() {
        return Err(CpdError::InvalidArgument("Kruskal rank lists differ in length".into()));
    }
    Ok(krank_product_bound(larger, rank)? >= krank_product_bound(smaller, rank)?)
}

/// Result of the KSB test `Σ kr ≥ 2J + (N − 1)`. The condition is
/// sufficient, not necessary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniquenessReport {
    /// Kruskal ranks, or Khatri-Rao product lower bounds when `bound_based`.
    pub kranks: Vec<usize>,
    pub bound_based: bool,
    pub lhs: usize,
    pub rhs: usize,
    pub satisfied: bool,
    pub margin: i64,
}

pub fn ksb_check(kranks: &[usize], rank: usize, order: usize) -> Result<UniquenessReport> {
    if kranks.len() != order {
        return Err(CpdError::InvalidArgument(format!(
            "{} Kruskal ranks for order {order}",
            kranks.len()
        )));
    }
    if order < 2 {
        return Err(CpdError::InvalidArgument("order must be at least 2".into()));
    }
    Ok(report(kranks.to_vec(), rank, false))
}

fn report(kranks: Vec<usize>, rank: usize, bound_based: bool) -> UniquenessReport {
    let lhs: usize = kranks.iter().sum();
    let rhs = 2 * rank + kranks.len() - 1;
    let margin = lhs as i64 - rhs as i64;
    UniquenessReport {
        kranks,
        bound_based,
        lhs,
        rhs,
        satisfied: margin >= 0,
        margin,
    }
}

/// KSB test of the mode-reduced tensor, using the product bound of each
/// group in place of its unknown Kruskal rank.
pub fn check_unfolded_uniqueness(kranks: &[usize], rank: usize, split: &ModeSplit) -> Result<UniquenessReport> {
    split.check_order(kranks.len())?;
    let bounds = (0..split.num_groups())
        .map(|k| {
            let group: Vec<usize> = split.group(k).iter().map(|&p| kranks[p]).collect();
            krank_product_bound(&group, rank)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report(bounds, rank, true))
}

/// `|uᵀv| / (‖u‖ ‖v‖)`.
pub fn collinearity<T: Scalar>(u: ArrayView1<T>, v: ArrayView1<T>) -> Result<T> {
    if u.len() != v.len() {
        return Err(CpdError::ShapeMismatch(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == T::zero() || nv == T::zero() {
        return Err(CpdError::ZeroInput("vector"));
    }
    Ok((u.dot(&v).abs() / (nu * nv)).min(T::one()))
}

/// Largest collinearity over all column pairs (0 for a single column).
pub fn max_collinearity<T: Scalar>(m: &Array2<T>) -> Result<T> {
    let mut best = T::zero();
    for a in 0..m.ncols() {
        for b in a + 1..m.ncols() {
            best = best.max(collinearity(m.column(a), m.column(b))?);
        }
    }
    Ok(best)
}

/// Numerical rank of the mode-`n` unfolding, a cheap stand-in for the
/// Kruskal rank of factor `n`.
pub fn mode_rank<T: Scalar>(t: &DenseTensor<T>, n: usize, tol: T) -> Result<usize> {
    numerical_rank(&matricize(t, n)?, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn krank_examples() {
        assert_eq!(kruskal_rank(&Array2::<f64>::eye(4), 1e-8).unwrap(), 4);
        let m = array![[1.0, 1.0, 0.0], [2.0, 2.0, 1.0], [0.0, 0.0, 3.0]];
        assert_eq!(kruskal_rank(&m, 1e-8).unwrap(), 1);
        let z = array![[1.0, 0.0], [2.0, 0.0]];
        assert_eq!(kruskal_rank(&z, 1e-8).unwrap(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Array2::from_shape_fn((20, 6), |_| StandardNormal.sample(&mut rng));
        assert_eq!(kruskal_rank(&g, 1e-8).unwrap(), 6);
        // three columns in a plane, every pair independent
        let p = array![[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 0.0, 0.0]];
        assert_eq!(kruskal_rank(&p, 1e-8).unwrap(), 2);
        assert!(matches!(
            kruskal_rank(&Array2::<f64>::zeros((3, 13)), 1e-8),
            Err(CpdError::TooManyColumns(13))
        ));
    }

    #[test]
    fn product_bound_examples() {
        assert_eq!(krank_product_bound(&[9, 8], 18).unwrap(), 16);
        assert_eq!(krank_product_bound(&[7, 6], 18).unwrap(), 12);
        assert_eq!(krank_product_bound(&[5], 18).unwrap(), 5);
        assert_eq!(krank_product_bound(&[2, 2, 2, 2], 5).unwrap(), 5);
        assert!(krank_product_bound(&[0, 3], 4).is_err());
        assert!(krank_bound_dominates(&[3, 4], &[2, 4], 10).unwrap());
    }

    #[test]
    fn ksb_examples() {
        let r = ksb_check(&[10, 9, 8, 7, 6], 18, 5).unwrap();
        assert_eq!((r.lhs, r.rhs, r.margin, r.satisfied), (40, 40, 0, true));
        let r = ksb_check(&[4, 4, 4], 4, 3).unwrap();
        assert!(r.satisfied);
        let r = ksb_check(&[2, 2, 2], 4, 3).unwrap();
        assert_eq!((r.lhs, r.rhs, r.satisfied), (6, 10, false));
        assert!(ksb_check(&[2, 2], 4, 3).is_err());
    }

    #[test]
    fn unfolded_examples() {
        let kr = [10, 9, 8, 7, 6];
        let r = check_unfolded_uniqueness(&kr, 18, &ModeSplit::parse("1|2,3|4,5").unwrap()).unwrap();
        assert_eq!(r.kranks, vec![10, 16, 12]);
        assert_eq!((r.lhs, r.rhs, r.margin), (38, 38, 0));
        assert!(r.bound_based);
        let r = check_unfolded_uniqueness(&kr, 18, &ModeSplit::parse("1,2|3|4,5").unwrap()).unwrap();
        assert_eq!(r.kranks, vec![18, 8, 12]);
        assert!(r.satisfied);
        let r = check_unfolded_uniqueness(&[2, 2, 2, 2], 3, &ModeSplit::parse("1|2|3,4").unwrap()).unwrap();
        assert_eq!((r.kranks.clone(), r.lhs, r.rhs, r.satisfied), (vec![2, 2, 3], 7, 8, false));
    }

    #[test]
    fn collinearity_examples() {
        let u = array![1.0, 0.0];
        let v = array![0.0, 2.0];
        assert_eq!(collinearity(u.view(), v.view()).unwrap(), 0.0);
        let w = array![1.0f64, -2.0, 0.5];
        let w3 = w.mapv(|x| -3.0 * x);
        assert!((collinearity(w.view(), w3.view()).unwrap() - 1.0).abs() < 1e-15);
        assert!(collinearity(u.view(), array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn mode_rank_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let factors: Vec<Array2<f64>> = [5, 6, 2]
            .iter()
            .map(|&i| Array2::from_shape_fn((i, 3), |_| StandardNormal.sample(&mut rng)))
            .collect();
        let t = crate::ktensor::KTensor::from_factors(factors).unwrap().reconstruct();
        assert_eq!(mode_rank(&t, 0, 1e-8).unwrap(), 3);
        assert_eq!(mode_rank(&t, 2, 1e-8).unwrap(), 2);
        let z = DenseTensor::<f64>::zeros(vec![3, 3]).unwrap();
        assert_eq!(mode_rank(&z, 0, 1e-8).unwrap(), 0);
        let m = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert_eq!(mode_rank(&m, 1, 1e-8).unwrap(), 1);
    }
}
