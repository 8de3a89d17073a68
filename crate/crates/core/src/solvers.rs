//! CP solvers. CP-ALS is shipped; other 3-way solvers plug in through
//! [`ThreeWaySolver`] and a [`SolverRegistry`].

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CpdError, Result};
use crate::gevd::gevd_factors;
use crate::ktensor::{fit, KTensor};
use crate::linalg::{hadamard, solve_gram_right};
use crate::scalar::Scalar;
use crate::tensor::{mttkrp, DenseTensor};

/// Starting point of an iterative solver.
#[derive(Debug, Clone, Default)]
pub enum Init<T> {
    /// I.i.d. standard normal entries, column-normalized.
    #[default]
    RandomNormal,
    Given(KTensor<T>),
    /// Algebraic start for 3rd-order tensors with two modes of size at least
    /// the rank; random otherwise.
    Gevd,
}

#[derive(Debug, Clone)]
pub struct SolverOptions<T> {
    pub max_iters: usize,
    /// Stop once the fit changes by less than this between sweeps.
    pub tol: T,
    pub seed: u64,
    pub init: Init<T>,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: T::lit(1e-8),
            seed: 0,
            init: Init::RandomNormal,
        }
    }
}

impl<T: Scalar> SolverOptions<T> {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(CpdError::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.tol > T::zero()) {
            return Err(CpdError::InvalidArgument("tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    pub iterations: usize,
    /// Fit against the input after every sweep.
    pub fit_trace: Vec<f64>,
    /// Fit of the returned model, computed from the full reconstruction.
    pub final_fit: f64,
    pub runtime_s: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Random factors for `shape`, columns scaled to unit norm.
pub fn random_init<T: Scalar>(shape: &[usize], rank: usize, seed: u64) -> Vec<Array2<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shape
        .iter()
        .map(|&rows| {
            let mut a = Array2::from_shape_fn((rows, rank), |_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                T::lit(x)
            });
            for mut col in a.columns_mut() {
                let nrm = col.dot(&col).sqrt();
                if nrm > T::zero() {
                    col.mapv_inplace(|x| x / nrm);
                }
            }
            a
        })
        .collect()
}

fn initial_factors<T: Scalar>(
    t: &DenseTensor<T>,
    rank: usize,
    init: &Init<T>,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<Vec<Array2<T>>> {
    match init {
        Init::RandomNormal => Ok(random_init(t.shape(), rank, seed)),
        Init::Gevd => match gevd_factors(t, rank)? {
            Some(f) => Ok(f),
            None => {
                warnings.push("algebraic start not applicable, using a random start".into());
                Ok(random_init(t.shape(), rank, seed))
            }
        },
        Init::Given(kt) => {
            if kt.shape() != t.shape() || kt.rank() != rank {
                return Err(CpdError::ShapeMismatch(format!(
                    "initial model {:?} rank {} does not match tensor {:?} rank {rank}",
                    kt.shape(),
                    kt.rank(),
                    t.shape()
                )));
            }
            Ok(kt.absorbed_factors())
        }
    }
}

/// Moves column norms of `a` into a weight vector.
fn split_norms<T: Scalar>(a: &mut Array2<T>) -> Array1<T> {
    let mut lambda = Array1::zeros(a.ncols());
    for (j, mut col) in a.columns_mut().into_iter().enumerate() {
        let nrm = col.dot(&col).sqrt();
        if nrm > T::zero() {
            col.mapv_inplace(|x| x / nrm);
        }
        lambda[j] = nrm;
    }
    lambda
}

/// CP-ALS with the Gram/Hadamard normal equations: mode `n` is updated as
/// `mttkrp(Y, n) · (⊛_{p≠n} A⁽ᵖ⁾ᵀA⁽ᵖ⁾)⁻¹`.
pub fn cp_als<T: Scalar>(t: &DenseTensor<T>, rank: usize, opts: &SolverOptions<T>) -> Result<(KTensor<T>, SolveReport)> {
    let start = Instant::now();
    opts.validate()?;
    let order = t.order();
    if order < 2 {
        return Err(CpdError::InvalidArgument("CP-ALS needs a tensor of order at least 2".into()));
    }
    if rank == 0 {
        return Err(CpdError::InvalidArgument("rank must be at least 1".into()));
    }
    let norm_y = t.frobenius_norm();
    if norm_y == T::zero() {
        return Err(CpdError::ZeroInput("tensor"));
    }
    let mut warnings = Vec::new();
    let max_mode = t.shape().iter().copied().max().unwrap_or(1);
    let generic_bound = t.len() / max_mode;
    if rank > generic_bound {
        warnings.push(format!(
            "rank {rank} exceeds the largest generic rank bound {generic_bound} for shape {:?}",
            t.shape()
        ));
    }

    let mut factors = initial_factors(t, rank, &opts.init, opts.seed, &mut warnings)?;
    let mut lambda = Array1::from_elem(rank, T::one());
    let mut grams: Vec<Array2<T>> = factors.iter().map(|a| a.t().dot(a)).collect();
    let norm_y2 = norm_y * norm_y;
    let mut fit_trace = Vec::new();
    let mut converged = false;
    let mut prev_fit = f64::NEG_INFINITY;

    for _ in 0..opts.max_iters {
        let mut inner = T::zero();
        let mut model_norm2 = T::zero();
        for n in 0..order {
            let m = mttkrp(t, &factors, n)?;
            let others: Vec<&Array2<T>> = (0..order).filter(|&p| p != n).map(|p| &grams[p]).collect();
            let v = if others.is_empty() {
                Array2::from_elem((rank, rank), T::one())
            } else {
                hadamard(&others)?
            };
            let mut a = solve_gram_right(&m, &v)?;
            if a.iter().any(|x| !x.is_finite()) {
                return Err(CpdError::NonFinite(format!("CP-ALS update of mode {n}")));
            }
            if n == order - 1 {
                // ⟨Y, Ŷ⟩ and ‖Ŷ‖² from quantities already at hand
                inner = (&m * &a).sum();
                let ata = a.t().dot(&a);
                model_norm2 = (&v * &ata).sum();
            }
            lambda = split_norms(&mut a);
            grams[n] = a.t().dot(&a);
            factors[n] = a;
        }
        let resid2 = (norm_y2 - T::lit(2.0) * inner + model_norm2).max(T::zero());
        let cur = (T::one() - resid2.sqrt() / norm_y).as_f64();
        if !cur.is_finite() {
            return Err(CpdError::NonFinite("CP-ALS fit".into()));
        }
        fit_trace.push(cur);
        // below this the fit formula is dominated by cancellation error
        let at_floor = resid2 <= T::lit(64.0) * T::epsilon() * norm_y2;
        if (cur - prev_fit).abs() < opts.tol.as_f64() || at_floor {
            converged = true;
            break;
        }
        prev_fit = cur;
    }

    let kt = KTensor::new(factors, lambda)?.normalize();
    let final_fit = fit(t, &kt.reconstruct())?.as_f64();
    let report = SolveReport {
        iterations: fit_trace.len(),
        fit_trace,
        final_fit,
        runtime_s: start.elapsed().as_secs_f64(),
        converged,
        warnings,
    };
    Ok((kt, report))
}

/// A CP solver for 3rd-order tensors.
pub trait ThreeWaySolver<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    fn solve(&self, t: &DenseTensor<T>, rank: usize, opts: &SolverOptions<T>) -> Result<(KTensor<T>, SolveReport)>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CpAls;

impl<T: Scalar> ThreeWaySolver<T> for CpAls {
    fn name(&self) -> &str {
        "cp_als"
    }

    fn solve(&self, t: &DenseTensor<T>, rank: usize, opts: &SolverOptions<T>) -> Result<(KTensor<T>, SolveReport)> {
        cp_als(t, rank, opts)
    }
}

/// Named 3-way solvers; `cp_als` is registered by default.
pub struct SolverRegistry<T: Scalar> {
    solvers: BTreeMap<String, Box<dyn ThreeWaySolver<T>>>,
}

impl<T: Scalar> Default for SolverRegistry<T> {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(CpAls));
        reg
    }
}

impl<T: Scalar> SolverRegistry<T> {
    pub fn empty() -> Self {
        Self {
            solvers: BTreeMap::new(),
        }
    }

    /// Adds a solver under its own name, replacing any previous one.
    pub fn register(&mut self, solver: Box<dyn ThreeWaySolver<T>>) {
        self.solvers.insert(solver.name().to_string(), solver);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ThreeWaySolver<T>> {
        self.solvers
            .get(name)
            .map(|s| s.as_ref())
            .ok_or_else(|| CpdError::SolverNotRegistered(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.solvers.keys().map(String::as_str).collect()
    }

    /// Runs the named solver on a 3rd-order tensor.
    pub fn solve(
        &self,
        name: &str,
        t: &DenseTensor<T>,
        rank: usize,
        opts: &SolverOptions<T>,
    ) -> Result<(KTensor<T>, SolveReport)> {
        if t.order() != 3 {
            return Err(CpdError::InvalidArgument(format!(
                "3-way solver called on a tensor of order {}",
                t.order()
            )));
        }
        self.get(name)?.solve(t, rank, opts)
    }
}
