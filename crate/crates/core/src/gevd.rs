//! Algebraic CP start for 3rd-order tensors with two modes of size at least
//! the rank (the DTLD/GRAM construction): after compressing those modes to
//! `J`, two combinations of the slices of the third mode satisfy
//! `S_k = B D_k Cᵀ`, so `S_1 S_2⁻¹ = B (D_1 D_2⁻¹) B⁻¹` and `B` follows from an
//! eigendecomposition.

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};

use crate::error::Result;
use crate::linalg::{hadamard, lstsq, solve_gram_right, truncated_svd};
use crate::scalar::Scalar;
use crate::tensor::{matricize, mttkrp, tensorize, transpose_modes, DenseTensor};

/// Factors of a 3rd-order tensor from generalized eigenvectors, or `None`
/// when the tensor is not 3rd-order, fewer than two modes reach `rank`, the
/// remaining mode has a single slice, or the construction degenerates.
pub fn gevd_factors<T: Scalar>(t: &DenseTensor<T>, rank: usize) -> Result<Option<Vec<Array2<T>>>> {
    if t.order() != 3 || rank == 0 {
        return Ok(None);
    }
    let shape = t.shape();
    let mut modes = [0usize, 1, 2];
    modes.sort_by(|&x, &y| shape[y].cmp(&shape[x]).then(x.cmp(&y)));
    let [b, c, a] = modes;
    if shape[c] < rank || shape[a] < 2 {
        return Ok(None);
    }
    let j = rank;
    let ub = truncated_svd(&matricize(t, b)?, j)?.u;
    let uc = truncated_svd(&matricize(t, c)?, j)?.u;

    // core W of shape (I_a, J, J)
    let yp = transpose_modes(t, &[a, b, c])?;
    let (ia, ib) = (shape[a], shape[b]);
    let z = uc.t().dot(&matricize(&yp, 2)?);
    let z = tensorize(&z, &[ia, ib, j], 2)?;
    let w = ub.t().dot(&matricize(&z, 1)?);
    let w = tensorize(&w, &[ia, j, j], 1)?;
    let w1 = matricize(&w, 0)?;
    let p = truncated_svd(&w1, 2.min(w1.ncols()))?.u;
    if p.ncols() < 2 {
        return Ok(None);
    }
    let combos = p.t().dot(&w1);
    let slice = |k: usize| Array2::from_shape_fn((j, j), |(r, s)| combos[[k, r + j * s]]);
    let (s1, s2) = (slice(0), slice(1));

    // M = S1 S2⁻¹ from S2ᵀ Mᵀ = S1ᵀ
    let mt = lstsq(&s2.t().to_owned(), &s1.t().to_owned())?;
    if mt.rank < j {
        return Ok(None);
    }
    let m = mt.x.t().to_owned();
    let nm = DMatrix::from_fn(j, j, |r, s| m[[r, s]].as_f64());
    let eigvals = nm.complex_eigenvalues();

    // real eigenvalue: null vector of M − λI. Complex pair α ± iβ: the real
    // invariant plane, the null space of (M − αI)² + β²I.
    let scale = eigvals.iter().map(|l| l.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut bt = Array2::zeros((j, j));
    let mut k = 0;
    for lam in eigvals.iter() {
        let complex = lam.im.abs() > 1e-10 * scale;
        if complex && lam.im < 0.0 {
            continue;
        }
        let mut shifted = m.clone();
        for d in 0..j {
            shifted[[d, d]] -= T::lit(lam.re);
        }
        if complex {
            let mut q = shifted.dot(&shifted);
            for d in 0..j {
                q[[d, d]] += T::lit(lam.im * lam.im);
            }
            let svd = truncated_svd(&q, j)?;
            for col in [j - 1, j - 2] {
                if k < j {
                    bt.column_mut(k).assign(&svd.v.column(col));
                    k += 1;
                }
            }
        } else if k < j {
            let svd = truncated_svd(&shifted, j)?;
            bt.column_mut(k).assign(&svd.v.column(j - 1));
            k += 1;
        }
    }
    if k < j {
        return Ok(None);
    }
    let ct = lstsq(&bt, &s1)?;
    if ct.rank < j {
        return Ok(None);
    }
    let fb = ub.dot(&bt);
    let fc = uc.dot(&ct.x.t());

    let mut factors = vec![Array2::zeros((0, j)); 3];
    factors[b] = fb;
    factors[c] = fc;
    factors[a] = Array2::zeros((ia, j));
    let mt = mttkrp(t, &factors, a)?;
    let v = hadamard(&[factors[b].t().dot(&factors[b]), factors[c].t().dot(&factors[c])])?;
    factors[a] = solve_gram_right(&mt, &v)?;
    if factors.iter().any(|f| f.iter().any(|x| !x.is_finite())) {
        return Ok(None);
    }
    for f in factors.iter_mut() {
        for mut col in f.axis_iter_mut(Axis(1)) {
            let nrm = col.dot(&col).sqrt();
            if nrm > T::zero() {
                col.mapv_inplace(|x| x / nrm);
            }
        }
    }
    Ok(Some(factors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ktensor::{match_factors, KTensor};
    use crate::solvers::random_init;

    #[test]
    fn exact_on_noiseless_data() {
        for (shape, rank, seed) in [([6, 9, 5], 5, 1u64), ([3, 12, 10], 8, 2), ([10, 2, 7], 2, 3)] {
            let kt = KTensor::from_factors(random_init::<f64>(&shape, rank, seed)).unwrap();
            let t = kt.reconstruct();
            let fs = gevd_factors(&t, rank).unwrap().expect("applicable");
            for n in 0..3 {
                let m = match_factors(kt.factor(n), &fs[n]).unwrap();
                assert!(m.msir() > 100.0, "{shape:?} mode {n}: {}", m.msir());
            }
        }
    }

    #[test]
    fn not_applicable_cases() {
        let t = KTensor::from_factors(random_init::<f64>(&[3, 3, 8], 4, 1)).unwrap().reconstruct();
        assert!(gevd_factors(&t, 4).unwrap().is_none());
        let t4 = DenseTensor::<f64>::zeros(vec![2, 2, 2, 2]).unwrap();
        assert!(gevd_factors(&t4, 1).unwrap().is_none());
        let flat = KTensor::from_factors(random_init::<f64>(&[1, 5, 5], 2, 1)).unwrap().reconstruct();
        assert!(gevd_factors(&flat, 2).unwrap().is_none());
    }
}
