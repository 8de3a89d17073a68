//! Khatri-Rao product projection: recover `A⁽¹⁾, …, A⁽ᴾ⁾` from a matrix
//! `H ≈ khatri_rao([A⁽¹⁾, …, A⁽ᴾ⁾])` one column at a time. Column `h_j`
//! reshaped to shape `(I_1, …, I_P)` is a rank-1 tensor in the exact case,
//! so every column reduces to a best rank-1 approximation.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{CpdError, Result};
use crate::linalg::truncated_svd;
use crate::scalar::{norm2, Scalar};
use crate::tensor::{kron_vectors, matricize, mode_contract, DenseTensor};

/// Constraint applied to each factor vector during the power iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ProjectionKind<T> {
    #[default]
    None,
    /// `max(x, 0)`.
    Nonnegative,
    /// `sign(x) · max(|x| − λ, 0)`.
    SoftThreshold(T),
}

/// How each column's rank-1 problem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KrMethod {
    /// Dominant singular vectors of every unfolding, computed independently.
    #[default]
    Svd,
    /// Alternating (higher-order) power iteration, optionally projected.
    Power,
}

#[derive(Debug, Clone, Copy)]
pub struct KrProjOptions<T> {
    pub method: KrMethod,
    pub projection: ProjectionKind<T>,
    pub max_iters: usize,
    pub tol: T,
}

impl<T: Scalar> Default for KrProjOptions<T> {
    fn default() -> Self {
        Self {
            method: KrMethod::Svd,
            projection: ProjectionKind::None,
            max_iters: 200,
            tol: T::lit(1e-10),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KrProjResult<T> {
    /// `A⁽¹⁾ … A⁽ᴾ⁾`; all but the last have unit-norm columns.
    pub factors: Vec<Array2<T>>,
    /// `‖H − khatri_rao(factors)‖_F`.
    pub eps_k: T,
    pub column_residuals: Vec<T>,
    /// Columns of `H` that were identically zero.
    pub zero_columns: Vec<usize>,
    /// Columns whose power iteration hit the cap or collapsed to zero.
    pub flagged_columns: Vec<usize>,
}

/// Rank-1 factors of one column with diagnostics.
#[derive(Debug, Clone)]
pub struct Rank1Fit<T> {
    pub vectors: Vec<Array1<T>>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn apply_projection<T: Scalar>(x: &mut [T], proj: ProjectionKind<T>) {
    match proj {
        ProjectionKind::None => {}
        ProjectionKind::Nonnegative => x.iter_mut().for_each(|v| *v = v.max(T::zero())),
        ProjectionKind::SoftThreshold(lambda) => x.iter_mut().for_each(|v| {
            let mag = (v.abs() - lambda).max(T::zero());
            *v = if mag == T::zero() { T::zero() } else { v.signum() * mag };
        }),
    }
}

/// Projected copy.
pub fn projected<T: Scalar>(x: &[T], proj: ProjectionKind<T>) -> Vec<T> {
    let mut out = x.to_vec();
    apply_projection(&mut out, proj);
    out
}

fn validate_projection<T: Scalar>(proj: ProjectionKind<T>) -> Result<()> {
    if let ProjectionKind::SoftThreshold(l) = proj {
        if !(l >= T::zero()) {
            return Err(CpdError::InvalidArgument(format!("soft threshold must be nonnegative, got {l}")));
        }
    }
    Ok(())
}

/// Unit vectors in all modes but the last, positive first nonzero entry;
/// scale and sign go to the last vector.
fn canonical_scaling<T: Scalar>(vectors: &mut [Array1<T>]) {
    let last = vectors.len() - 1;
    let mut carry = T::one();
    for v in vectors.iter_mut().take(last) {
        let nrm = v.dot(v).sqrt();
        if nrm == T::zero() {
            carry = T::zero();
            continue;
        }
        let first = v.iter().copied().find(|&x| x != T::zero()).unwrap_or(T::one());
        let s = if first < T::zero() { -nrm } else { nrm };
        v.mapv_inplace(|x| x / s);
        carry *= s;
    }
    vectors[last].mapv_inplace(|x| x * carry);
    if carry == T::zero() {
        for v in vectors.iter_mut() {
            v.fill(T::zero());
        }
    }
}

fn contract_others<T: Scalar>(hj: &DenseTensor<T>, vectors: &[Array1<T>], k: usize) -> Result<Vec<T>> {
    let others: Vec<&[T]> = vectors
        .iter()
        .enumerate()
        .filter(|&(p, _)| p != k)
        .map(|(_, v)| v.as_slice().expect("contiguous"))
        .collect();
    mode_contract(hj, k, &others)
}

/// Leading left singular vector of every unfolding but the last; the last
/// vector is the least-squares amplitude given the others.
pub fn rank1_parallel_extract<T: Scalar>(hj: &DenseTensor<T>) -> Result<Vec<Array1<T>>> {
    let order = hj.order();
    if order < 2 {
        return Err(CpdError::InvalidArgument("rank-1 extraction needs order at least 2".into()));
    }
    if hj.frobenius_norm() == T::zero() {
        return Err(CpdError::ZeroInput("column tensor"));
    }
    let mut vectors = Vec::with_capacity(order);
    for k in 0..order - 1 {
        let m = matricize(hj, k)?;
        let svd = truncated_svd(&m, 1)?;
        vectors.push(svd.u.column(0).to_owned());
    }
    vectors.push(Array1::zeros(hj.shape()[order - 1]));
    let last = contract_others(hj, &vectors, order - 1)?;
    vectors[order - 1] = Array1::from(last);
    canonical_scaling(&mut vectors);
    Ok(vectors)
}

/// Alternating updates `a⁽ᵏ⁾ ← P(H ×_{p≠k} a⁽ᵖ⁾ / Π_{p≠k} ‖a⁽ᵖ⁾‖²)`, started
/// from the parallel extraction. Stops when the rank-1 residual changes by
/// less than `tol · ‖H‖` between sweeps.
pub fn rank1_power_iteration<T: Scalar>(
    hj: &DenseTensor<T>,
    proj: ProjectionKind<T>,
    max_iters: usize,
    tol: T,
) -> Result<Rank1Fit<T>> {
    validate_projection(proj)?;
    let norm_h = hj.frobenius_norm();
    let mut vectors = rank1_parallel_extract(hj)?;
    for v in vectors.iter_mut() {
        let p = projected(v.as_slice().expect("contiguous"), proj);
        *v = Array1::from(p);
    }
    let order = vectors.len();
    let norm_h2 = norm_h * norm_h;
    let mut prev = T::infinity();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let mut inner = T::zero();
        let mut collapsed = false;
        for k in 0..order {
            let denom: T = vectors
                .iter()
                .enumerate()
                .filter(|&(p, _)| p != k)
                .map(|(_, v)| v.dot(v))
                .fold(T::one(), |a, b| a * b);
            if denom == T::zero() {
                collapsed = true;
                break;
            }
            let c = contract_others(hj, &vectors, k)?;
            let mut next: Vec<T> = c.iter().map(|&x| x / denom).collect();
            apply_projection(&mut next, proj);
            if k == order - 1 {
                inner = next.iter().zip(&c).map(|(&a, &b)| a * b).sum();
            }
            vectors[k] = Array1::from(next);
        }
        if collapsed {
            break;
        }
        let model2: T = vectors.iter().map(|v| v.dot(v)).fold(T::one(), |a, b| a * b);
        let resid = (norm_h2 - T::lit(2.0) * inner + model2).max(T::zero()).sqrt();
        if (prev - resid).abs() <= tol * norm_h {
            converged = true;
            break;
        }
        prev = resid;
    }
    if vectors.iter().any(|v| v.iter().all(|&x| x == T::zero())) {
        converged = false;
    }
    canonical_scaling(&mut vectors);
    Ok(Rank1Fit {
        vectors,
        iterations,
        converged,
    })
}

/// Per-column best Khatri-Rao fit of `h` with factor row counts `row_sizes`.
pub fn kr_project<T: Scalar>(
    h: &Array2<T>,
    row_sizes: &[usize],
    method: KrMethod,
    proj: ProjectionKind<T>,
) -> Result<KrProjResult<T>> {
    let opts = KrProjOptions {
        method,
        projection: proj,
        ..KrProjOptions::default()
    };
    kr_project_with(h, row_sizes, &opts)
}

pub fn kr_project_with<T: Scalar>(h: &Array2<T>, row_sizes: &[usize], opts: &KrProjOptions<T>) -> Result<KrProjResult<T>> {
    validate_projection(opts.projection)?;
    if row_sizes.len() < 2 {
        return Err(CpdError::InvalidArgument("Khatri-Rao projection needs at least two factors".into()));
    }
    if row_sizes.contains(&0) {
        return Err(CpdError::InvalidArgument(format!("zero row size in {row_sizes:?}")));
    }
    let rows: usize = row_sizes.iter().product();
    if rows != h.nrows() {
        return Err(CpdError::ShapeMismatch(format!(
            "matrix has {} rows but the sizes {row_sizes:?} multiply to {rows}",
            h.nrows()
        )));
    }
    let rank = h.ncols();
    let columns: Vec<Vec<T>> = h.columns().into_iter().map(|c| c.to_vec()).collect();

    struct ColumnFit<T> {
        vectors: Option<Vec<Array1<T>>>,
        residual: T,
        flagged: bool,
    }

    let fits: Vec<Result<ColumnFit<T>>> = columns
        .par_iter()
        .map(|col| {
            if col.iter().all(|&x| x == T::zero()) {
                return Ok(ColumnFit {
                    vectors: None,
                    residual: T::zero(),
                    flagged: false,
                });
            }
            let hj = DenseTensor::new(row_sizes.to_vec(), col.clone())?;
            let (vectors, flagged) = match opts.method {
                KrMethod::Svd => {
                    let mut v = rank1_parallel_extract(&hj)?;
                    let flagged = if opts.projection != ProjectionKind::None {
                        // one projection pass keeps the constraint satisfied
                        for a in v.iter_mut() {
                            let p = projected(a.as_slice().expect("contiguous"), opts.projection);
                            *a = Array1::from(p);
                        }
                        canonical_scaling(&mut v);
                        v.iter().any(|a| a.iter().all(|&x| x == T::zero()))
                    } else {
                        false
                    };
                    (v, flagged)
                }
                KrMethod::Power => {
                    let fit = rank1_power_iteration(&hj, opts.projection, opts.max_iters, opts.tol)?;
                    (fit.vectors, !fit.converged)
                }
            };
            let slices: Vec<&[T]> = vectors.iter().map(|v| v.as_slice().expect("contiguous")).collect();
            let approx = kron_vectors(&slices);
            let diff: Vec<T> = col.iter().zip(&approx).map(|(&a, &b)| a - b).collect();
            Ok(ColumnFit {
                vectors: Some(vectors),
                residual: norm2(&diff),
                flagged,
            })
        })
        .collect();

    let mut factors: Vec<Array2<T>> = row_sizes.iter().map(|&i| Array2::zeros((i, rank))).collect();
    let mut column_residuals = Vec::with_capacity(rank);
    let mut zero_columns = Vec::new();
    let mut flagged_columns = Vec::new();
    for (j, fit) in fits.into_iter().enumerate() {
        let fit = fit?;
        match fit.vectors {
            Some(vectors) => {
                for (f, v) in factors.iter_mut().zip(vectors) {
                    f.column_mut(j).assign(&v);
                }
            }
            None => zero_columns.push(j),
        }
        if fit.flagged {
            flagged_columns.push(j);
        }
        column_residuals.push(fit.residual);
    }
    let eps_k = column_residuals.iter().map(|&r| r * r).sum::<T>().sqrt();
    Ok(KrProjResult {
        factors,
        eps_k,
        column_residuals,
        zero_columns,
        flagged_columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::khatri_rao;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    #[test]
    fn projections() {
        let mut x = [-1.0, 2.0];
        apply_projection(&mut x, ProjectionKind::Nonnegative);
        assert_eq!(x, [0.0, 2.0]);
        let y = [3.0, -0.5, -4.0];
        assert_eq!(projected(&y, ProjectionKind::SoftThreshold(0.0)), y.to_vec());
        assert_eq!(projected(&[3.0, -0.5], ProjectionKind::SoftThreshold(1.0)), vec![2.0, 0.0]);
        assert_eq!(projected(&y, ProjectionKind::None), y.to_vec());
    }

    #[test]
    fn two_by_two_example() {
        let h: Array2<f64> = array![[3.0], [6.0], [4.0], [8.0]];
        for method in [KrMethod::Svd, KrMethod::Power] {
            let r = kr_project(&h, &[2, 2], method, ProjectionKind::None).unwrap();
            assert!(r.eps_k < 1e-12);
            let a = r.factors[0].column(0);
            // a ∝ [1, 2], b ∝ [3, 4]
            assert!((a[1] / a[0] - 2.0).abs() < 1e-12);
            let b = r.factors[1].column(0);
            assert!((b[1] / b[0] - 4.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_khatri_rao_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = randn(4, 3, &mut rng);
        let b = randn(5, 3, &mut rng);
        let h = khatri_rao(&[&a, &b]).unwrap();
        let r = kr_project(&h, &[4, 5], KrMethod::Svd, ProjectionKind::None).unwrap();
        assert!(r.eps_k < 1e-10);
        for (est, truth) in r.factors.iter().zip([&a, &b]) {
            for j in 0..3 {
                let e = est.column(j);
                let t = truth.column(j);
                let s = e.dot(&t) / e.dot(&e);
                let err = (&e * s - &t).mapv(|x| x * x).sum().sqrt() / t.dot(&t).sqrt();
                assert!(err < 1e-8);
            }
        }
        assert!(r.factors[0].columns().into_iter().all(|c| (c.dot(&c) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn perturbation_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = randn(3, 2, &mut rng);
        let b = randn(4, 2, &mut rng);
        let c = randn(2, 2, &mut rng);
        let exact = khatri_rao(&[&a, &b, &c]).unwrap();
        let noise = randn(24, 2, &mut rng) * 1e-3;
        let delta = noise.mapv(|x| x * x).sum().sqrt();
        let h = &exact + &noise;
        for method in [KrMethod::Svd, KrMethod::Power] {
            let r = kr_project(&h, &[3, 4, 2], method, ProjectionKind::None).unwrap();
            assert!(r.eps_k <= delta * (1.0 + 1e-9), "{method:?}: {} > {delta}", r.eps_k);
        }
    }

    #[test]
    fn rank1_methods_agree_on_exact_input() {
        let a = [1.0, -2.0, 0.5];
        let b = [2.0, 1.0];
        let c = [0.3, -1.0, 4.0, 1.0];
        let t = DenseTensor::from_fn(vec![3, 2, 4], |i| a[i[0]] * b[i[1]] * c[i[2]]).unwrap();
        let par = rank1_parallel_extract(&t).unwrap();
        let pow = rank1_power_iteration(&t, ProjectionKind::None, 200, 1e-10).unwrap();
        assert!(pow.converged);
        for (x, y) in par.iter().zip(&pow.vectors) {
            assert!((x - y).iter().all(|d: &f64| d.abs() < 1e-10));
        }
        let slices: Vec<&[f64]> = par.iter().map(|v| v.as_slice().unwrap()).collect();
        let rec = kron_vectors(&slices);
        assert!(rec.iter().zip(t.data()).all(|(x, y)| (x - y).abs() < 1e-12));
        let soft = rank1_power_iteration(&t, ProjectionKind::SoftThreshold(0.0), 200, 1e-10).unwrap();
        assert_eq!(soft.vectors, pow.vectors);
    }

    #[test]
    fn order_two_is_leading_triplet() {
        let m: Array2<f64> = array![[2.0, 1.0], [1.0, 3.0], [0.0, 1.0]];
        let t = crate::tensor::tensorize(&m, &[3, 2], 0).unwrap();
        let v = rank1_parallel_extract(&t).unwrap();
        let lt = crate::linalg::leading_triplet(&m, 10_000, 1e-15).unwrap();
        assert!((&v[0] - &lt.u).iter().all(|d: &f64| d.abs() < 1e-8));
        assert!((&v[1] - &(&lt.v * lt.sigma)).iter().all(|d: &f64| d.abs() < 1e-8));
    }

    #[test]
    fn nonnegative_fixed_point() {
        let a = [1.0, 2.0, 0.5];
        let b = [0.2, 1.0];
        let t = DenseTensor::from_fn(vec![3, 2], |i| a[i[0]] * b[i[1]]).unwrap();
        let fit = rank1_power_iteration(&t, ProjectionKind::Nonnegative, 200, 1e-10).unwrap();
        assert!(fit.vectors.iter().all(|v| v.iter().all(|&x| x >= 0.0)));
    }

    #[test]
    fn power_residual_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = DenseTensor::from_fn(vec![4, 3, 5], |_| StandardNormal.sample(&mut rng)).unwrap();
        let mut last = f64::INFINITY;
        for iters in 1..15 {
            let fit = rank1_power_iteration(&t, ProjectionKind::None, iters, 1e-300).unwrap();
            let slices: Vec<&[f64]> = fit.vectors.iter().map(|v| v.as_slice().unwrap()).collect();
            let rec = kron_vectors(&slices);
            let r = rec.iter().zip(t.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            assert!(r <= last + 1e-12);
            last = r;
        }
    }

    #[test]
    fn zero_column_flagged_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut h = khatri_rao(&[randn(2, 2, &mut rng), randn(3, 2, &mut rng)]).unwrap();
        h.column_mut(1).fill(0.0);
        let r = kr_project(&h, &[2, 3], KrMethod::Svd, ProjectionKind::None).unwrap();
        assert_eq!(r.zero_columns, vec![1]);
        assert!(r.factors[0].column(1).iter().all(|&x| x == 0.0));
        assert!(kr_project(&h, &[2, 2], KrMethod::Svd, ProjectionKind::None).is_err());
        assert!(kr_project(&h, &[6], KrMethod::Svd, ProjectionKind::None).is_err());
        assert!(kr_project(&h, &[2, 3], KrMethod::Power, ProjectionKind::SoftThreshold(-1.0)).is_err());
        assert!(rank1_parallel_extract(&DenseTensor::<f64>::zeros(vec![2, 2]).unwrap()).is_err());
    }
}
