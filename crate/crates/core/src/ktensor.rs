//! CP (Kruskal) tensors and the metrics used to judge a decomposition.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::assignment::max_weight_assignment;
use crate::error::{CpdError, Result};
use crate::linalg::{khatri_rao, khatri_rao_with_rank};
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

/// SIR reported for a component whose residual underflows to zero.
pub const SIR_CAP_DB: f64 = 300.0;

/// `Σ_j λ_j a⁽¹⁾_j ∘ … ∘ a⁽ᴺ⁾_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct KTensor<T> {
    factors: Vec<Array2<T>>,
    weights: Array1<T>,
}

impl<T: Scalar> KTensor<T> {
    pub fn new(factors: Vec<Array2<T>>, weights: Array1<T>) -> Result<Self> {
        if factors.is_empty() {
            return Err(CpdError::InvalidArgument("a KTensor needs at least one factor".into()));
        }
        let rank = weights.len();
        if rank == 0 {
            return Err(CpdError::InvalidArgument("rank must be at least 1".into()));
        }
        for (n, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(CpdError::ShapeMismatch(format!(
                    "factor {n} has {} columns, expected {rank}",
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(CpdError::ShapeMismatch(format!("factor {n} has no rows")));
            }
        }
        Ok(Self { factors, weights })
    }

    /// Unit weights.
    pub fn from_factors(factors: Vec<Array2<T>>) -> Result<Self> {
        let rank = factors.first().map_or(0, |f| f.ncols());
        Self::new(factors, Array1::from_elem(rank, T::one()))
    }

    pub fn factors(&self) -> &[Array2<T>] {
        &self.factors
    }

    pub fn factor(&self, n: usize) -> &Array2<T> {
        &self.factors[n]
    }

    pub fn weights(&self) -> &Array1<T> {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn into_parts(self) -> (Vec<Array2<T>>, Array1<T>) {
        (self.factors, self.weights)
    }

    /// Factors with the weights multiplied into the last one.
    pub fn absorbed_factors(&self) -> Vec<Array2<T>> {
        let mut out = self.factors.clone();
        let last = out.last_mut().expect("nonempty");
        *last = &*last * &self.weights.view().insert_axis(Axis(0));
        out
    }

    /// Dense tensor in canonical order.
    pub fn reconstruct(&self) -> DenseTensor<T> {
        let shape = self.shape();
        let first = &self.factors[0] * &self.weights.view().insert_axis(Axis(0));
        let rest = khatri_rao_with_rank(&self.factors[1..], self.rank()).expect("validated ranks");
        // (rest × J)(J × I_1) laid out row-major is exactly mode-1-fastest order
        let m = rest.dot(&first.t());
        let data = if m.is_standard_layout() {
            m.into_raw_vec_and_offset().0
        } else {
            m.iter().copied().collect()
        };
        DenseTensor::new(shape, data).expect("sizes agree")
    }

    /// `A⁽ⁿ⁾ Λ (⊙_{p≠n} A⁽ᵖ⁾)ᵀ`.
    pub fn reconstruct_matricized(&self, n: usize) -> Result<Array2<T>> {
        if n >= self.order() {
            return Err(CpdError::ModeOutOfRange {
                mode: n,
                order: self.order(),
            });
        }
        let others: Vec<&Array2<T>> = self
            .factors
            .iter()
            .enumerate()
            .filter(|&(p, _)| p != n)
            .map(|(_, f)| f)
            .collect();
        let kr = khatri_rao_with_rank(&others, self.rank())?;
        let scaled = &self.factors[n] * &self.weights.view().insert_axis(Axis(0));
        Ok(scaled.dot(&kr.t()))
    }

    /// Unit-norm columns in every mode but the last; the magnitudes move into
    /// the weights. A zero column zeroes its component (weight 0).
    pub fn normalize(&self) -> Self {
        let mut factors = self.factors.clone();
        let mut weights = self.weights.clone();
        let last = factors.len() - 1;
        for f in factors.iter_mut().take(last) {
            for (j, mut col) in f.columns_mut().into_iter().enumerate() {
                let nrm = col.dot(&col).sqrt();
                if nrm > T::zero() {
                    col.mapv_inplace(|x| x / nrm);
                    weights[j] *= nrm;
                } else {
                    weights[j] = T::zero();
                }
            }
        }
        for j in 0..weights.len() {
            if weights[j] == T::zero() {
                for f in factors.iter_mut() {
                    f.column_mut(j).fill(T::zero());
                }
            }
        }
        Self { factors, weights }
    }

    /// Same model with modes reordered: output mode `k` is input mode `perm[k]`.
    pub fn permute_modes(&self, perm: &[usize]) -> Result<Self> {
        crate::tensor::validate_perm(perm, self.order())?;
        let factors = perm.iter().map(|&p| self.factors[p].clone()).collect();
        Self::new(factors, self.weights.clone())
    }

    /// Frobenius norm from the factor Gram matrices, without forming the tensor.
    pub fn norm(&self) -> T {
        let rank = self.rank();
        let mut v = Array2::from_elem((rank, rank), T::one());
        for f in &self.factors {
            v = v * f.t().dot(f);
        }
        let w = &self.weights;
        w.dot(&v.dot(w)).max(T::zero()).sqrt()
    }
}

/// `1 − ‖Y − Ŷ‖_F / ‖Y‖_F`.
pub fn fit<T: Scalar>(y: &DenseTensor<T>, yhat: &DenseTensor<T>) -> Result<T> {
    if y.shape() != yhat.shape() {
        return Err(CpdError::ShapeMismatch(format!(
            "fit between {:?} and {:?}",
            y.shape(),
            yhat.shape()
        )));
    }
    let ny = y.frobenius_norm();
    if ny == T::zero() {
        return Err(CpdError::ZeroInput("reference tensor"));
    }
    let diff: T = y
        .data()
        .iter()
        .zip(yhat.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(T::one() - diff.sqrt() / ny)
}

/// Outcome of matching estimated columns to reference columns.
#[derive(Debug, Clone)]
pub struct MatchResult<T> {
    /// `perm[j]` is the estimated column matched to reference column `j`.
    pub perm: Vec<usize>,
    /// Signed least-squares scale applied to the z-scored estimate column.
    pub scales: Vec<T>,
    pub msir_per_component: Vec<f64>,
}

impl<T: Scalar> MatchResult<T> {
    pub fn msir(&self) -> f64 {
        self.msir_per_component.iter().sum::<f64>() / self.msir_per_component.len() as f64
    }
}

/// Zero-mean, unit-variance copy of every column.
fn zscore<T: Scalar>(a: &Array2<T>, what: &str) -> Result<Array2<T>> {
    let mut out = a.clone();
    let n = T::lit(a.nrows() as f64);
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        let mean = col.sum() / n;
        col.mapv_inplace(|x| x - mean);
        let var = col.dot(&col) / n;
        if !(var > T::zero()) || !var.is_finite() {
            return Err(CpdError::InvalidArgument(format!(
                "column {j} of the {what} matrix has zero variance"
            )));
        }
        let sd = var.sqrt();
        col.mapv_inplace(|x| x / sd);
    }
    Ok(out)
}

fn pearson<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    let n = T::lit(a.len() as f64);
    a.dot(&b) / n
}

/// Matches columns of `est` to `reference` by an optimal assignment on
/// `|ρ|`, then aligns sign and scale of each z-scored estimate column.
pub fn match_factors<T: Scalar>(reference: &Array2<T>, est: &Array2<T>) -> Result<MatchResult<T>> {
    if reference.dim() != est.dim() {
        return Err(CpdError::ShapeMismatch(format!(
            "reference {:?} vs estimate {:?}",
            reference.dim(),
            est.dim()
        )));
    }
    let zr = zscore(reference, "reference")?;
    let ze = zscore(est, "estimated")?;
    let j = reference.ncols();
    let corr = Array2::from_shape_fn((j, j), |(r, e)| pearson(zr.column(r), ze.column(e)));
    let affinity = corr.mapv(|c| c.abs().as_f64());
    let perm = max_weight_assignment(&affinity);
    let mut scales = Vec::with_capacity(j);
    let mut sirs = Vec::with_capacity(j);
    for (r, &e) in perm.iter().enumerate() {
        let s = corr[[r, e]];
        let aligned = ze.column(e).mapv(|x| x * s);
        scales.push(s);
        sirs.push(sir_db(zr.column(r), aligned.view()));
    }
    Ok(MatchResult {
        perm,
        scales,
        msir_per_component: sirs,
    })
}

/// `10 log₁₀(‖a‖² / ‖a − â‖²)`, capped at [`SIR_CAP_DB`].
pub fn sir_db<T: Scalar>(a: ArrayView1<T>, ahat: ArrayView1<T>) -> f64 {
    let signal = a.dot(&a).as_f64();
    let resid: f64 = a
        .iter()
        .zip(ahat.iter())
        .map(|(&x, &y)| {
            let d = (x - y).as_f64();
            d * d
        })
        .sum();
    if resid <= signal * 10f64.powf(-SIR_CAP_DB / 10.0) {
        return SIR_CAP_DB;
    }
    (10.0 * (signal / resid).log10()).min(SIR_CAP_DB)
}

/// Mean SIR in dB after matching.
pub fn msir<T: Scalar>(reference: &Array2<T>, est: &Array2<T>) -> Result<f64> {
    Ok(match_factors(reference, est)?.msir())
}

/// Builds the dense tensor of a list of factors directly from the
/// Khatri-Rao product (convenient for small problems and tests).
pub fn reconstruct_from_factors<T: Scalar>(factors: &[Array2<T>]) -> Result<DenseTensor<T>> {
    let kr = khatri_rao(factors)?;
    let shape = factors.iter().map(|f| f.nrows()).collect();
    DenseTensor::new(shape, kr.sum_axis(Axis(1)).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    fn random_kt(shape: &[usize], rank: usize, seed: u64) -> KTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = shape.iter().map(|&i| randn(i, rank, &mut rng)).collect();
        let weights = Array1::from_shape_fn(rank, |j| 1.0 + j as f64);
        KTensor::new(factors, weights).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = a.iter().map(|x| x * x).sum();
        (num / den).sqrt()
    }

    #[test]
    fn all_ones_rank_one() {
        let kt = KTensor::from_factors(vec![Array2::ones((2, 1)), Array2::ones((3, 1)), Array2::ones((2, 1))]).unwrap();
        assert!(kt.reconstruct().data().iter().all(|&x| x == 1.0));
        let zero = KTensor::new(kt.factors().to_vec(), array![0.0]).unwrap();
        assert!(zero.reconstruct().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reconstruct_matches_triple_loop() {
        let kt = random_kt(&[3, 4, 2], 3, 1);
        let t = kt.reconstruct();
        let (a, b, c) = (kt.factor(0), kt.factor(1), kt.factor(2));
        for i in 0..3 {
            for k in 0..4 {
                for q in 0..2 {
                    let expect: f64 = (0..3).map(|j| kt.weights()[j] * a[[i, j]] * b[[k, j]] * c[[q, j]]).sum();
                    assert!((t.get(&[i, k, q]) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn reconstruct_matricized_agrees() {
        let kt = random_kt(&[3, 2, 4, 2], 2, 2);
        let t = kt.reconstruct();
        for n in 0..4 {
            let direct = crate::tensor::matricize(&t, n).unwrap();
            let via = kt.reconstruct_matricized(n).unwrap();
            assert!(rel_err(direct.as_slice().unwrap(), via.as_standard_layout().as_slice().unwrap()) < 1e-12);
        }
        assert!(kt.reconstruct_matricized(4).is_err());
    }

    #[test]
    fn normalize_preserves_tensor() {
        let kt = random_kt(&[4, 3, 5], 3, 3);
        let nk = kt.normalize();
        for f in &nk.factors()[..2] {
            for col in f.columns() {
                assert!((col.dot(&col) - 1.0).abs() < 1e-12);
            }
        }
        assert!(rel_err(kt.reconstruct().data(), nk.reconstruct().data()) < 1e-12);
        let again = nk.normalize();
        assert!(rel_err(again.weights().as_slice().unwrap(), nk.weights().as_slice().unwrap()) < 1e-15);

        let mut factors = nk.factors().to_vec();
        factors[0].column_mut(1).mapv_inplace(|x| 7.0 * x);
        let scaled = KTensor::new(factors, nk.weights().clone()).unwrap().normalize();
        assert!((scaled.weights()[1] - 7.0 * nk.weights()[1]).abs() < 1e-12);
    }

    #[test]
    fn normalize_zero_column() {
        let mut factors = random_kt(&[3, 3, 3], 2, 4).into_parts().0;
        factors[1].column_mut(0).fill(0.0);
        let kt = KTensor::from_factors(factors).unwrap().normalize();
        assert_eq!(kt.weights()[0], 0.0);
        assert!(kt.weights()[1] > 0.0);
    }

    #[test]
    fn norm_without_materializing() {
        let kt = random_kt(&[3, 4, 5], 4, 5);
        assert!((kt.norm() - kt.reconstruct().frobenius_norm()).abs() < 1e-10 * kt.norm());
    }

    #[test]
    fn fit_examples() {
        let y = random_kt(&[3, 3, 3], 2, 6).reconstruct();
        assert_eq!(fit(&y, &y).unwrap(), 1.0);
        let zero = DenseTensor::zeros(vec![3, 3, 3]).unwrap();
        assert_eq!(fit(&y, &zero).unwrap(), 0.0);
        assert!(fit(&y, &y.scale(2.0)).unwrap().abs() < 1e-15);
        assert!(fit(&zero, &y).is_err());
    }

    #[test]
    fn matching_recovers_swap_and_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = randn(10, 3, &mut rng);
        let mut swapped = a.clone();
        swapped.column_mut(0).assign(&a.column(2));
        swapped.column_mut(2).assign(&a.column(0));
        let m = match_factors(&a, &swapped).unwrap();
        assert_eq!(m.perm, vec![2, 1, 0]);
        assert_eq!(m.msir(), SIR_CAP_DB);

        let neg = a.mapv(|x| -x);
        let m = match_factors(&a, &neg).unwrap();
        assert!(m.scales.iter().all(|&s| s < 0.0));
        assert_eq!(m.msir(), SIR_CAP_DB);
    }

    #[test]
    fn sir_definition_arithmetic() {
        let a = array![3.0, 4.0];
        // ‖e‖² / ‖a‖² = 0.01
        let ahat = array![3.0, 4.5];
        assert!((sir_db(a.view(), ahat.view()) - 20.0).abs() < 1e-12);
        assert_eq!(sir_db(a.view(), a.view()), SIR_CAP_DB);
    }

    #[test]
    fn constant_column_rejected() {
        let a = array![[1.0, 2.0], [1.0, 3.0], [1.0, 5.0]];
        assert!(msir(&a, &a).is_err());
    }

    #[test]
    fn from_factors_oracle() {
        let kt = random_kt(&[2, 3, 2], 2, 8);
        let t = reconstruct_from_factors(&kt.absorbed_factors()).unwrap();
        assert!(rel_err(t.data(), kt.reconstruct().data()) < 1e-14);
    }
}
