//! Synthetic ground truth and noise.

use cpd_core::uniqueness::collinearity;
use cpd_core::{KTensor64, Tensor64};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{BenchError, Result};

/// Sine modes oscillate at this frequency (Hz) over one second.
pub const SINE_FREQ_HZ: f64 = 2.0;

/// Neighboring columns of the collinear modes must exceed this correlation.
pub const MIN_NEIGHBOR_CORRELATION: f64 = 0.9;

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    // column by column, so a prefix of columns does not depend on `cols`
    let mut m = Array2::zeros((rows, cols));
    for mut col in m.columns_mut() {
        col.mapv_inplace(|_| StandardNormal.sample(rng));
    }
    m
}

/// Factors with i.i.d. standard normal entries and unit weights.
pub fn gen_random_ktensor(shape: &[usize], rank: usize, seed: u64) -> Result<KTensor64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = shape.iter().map(|&i| normal_matrix(&mut rng, i, rank)).collect();
    Ok(KTensor64::from_factors(factors)?)
}

/// Order-5 model with highly collinear components: modes 1 and 2 are random
/// walks `a_j = a_{j-1} + 0.5 v_j`, modes 3 and 4 phase-shifted 2 Hz sines
/// sampled at `I` points over one second, mode 5 standard normal.
pub fn gen_bottleneck_ktensor(size: usize, rank: usize, seed: u64) -> Result<KTensor64> {
    if rank < 2 {
        return Err(BenchError::Invalid("bottleneck data needs rank at least 2".into()));
    }
    if size < 2 {
        return Err(BenchError::Invalid("bottleneck data needs at least 2 samples per mode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = Vec::with_capacity(5);
    for mode in 0..2 {
        let v = normal_matrix(&mut rng, size, rank);
        let mut a = v.clone();
        for j in 1..rank {
            let prev = a.column(j - 1).to_owned();
            a.column_mut(j).assign(&(&prev + &(&v.column(j) * 0.5)));
        }
        let best = (1..rank)
            .map(|j| collinearity(a.column(j - 1), a.column(j)))
            .try_fold(0.0f64, |m, r| r.map(|r| m.max(r)))?;
        if best <= MIN_NEIGHBOR_CORRELATION {
            return Err(BenchError::Invalid(format!(
                "mode {} neighbors reach correlation {best:.3} only (seed {seed})",
                mode + 1
            )));
        }
        factors.push(a);
    }
    let dt = 1.0 / (size - 1) as f64;
    for shift in [0usize, 5] {
        factors.push(Array2::from_shape_fn((size, rank), |(i, j)| {
            let t = i as f64 * dt;
            let phase = (j + 1 + shift) as f64 * std::f64::consts::PI / 50.0;
            (2.0 * std::f64::consts::PI * SINE_FREQ_HZ * t + phase).sin()
        }));
    }
    factors.push(normal_matrix(&mut rng, size, rank));
    Ok(KTensor64::from_factors(factors)?)
}

/// Adds Gaussian noise rescaled so that `10 log10(‖T‖² / ‖E‖²)` equals
/// `snr_db`. An infinite SNR returns `t` unchanged.
pub fn add_noise(t: &Tensor64, snr_db: f64, seed: u64) -> Result<Tensor64> {
    if snr_db == f64::INFINITY {
        return Ok(t.clone());
    }
    if !snr_db.is_finite() {
        return Err(BenchError::Invalid(format!("SNR must be finite or +inf, got {snr_db}")));
    }
    let nt = t.frobenius_norm();
    if nt == 0.0 {
        return Err(BenchError::Invalid("cannot set an SNR against a zero tensor".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..t.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let ne = noise.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = nt * 10f64.powf(-snr_db / 20.0) / ne;
    let data = t.data().iter().zip(&noise).map(|(&x, &e)| x + scale * e).collect();
    Ok(Tensor64::new(t.shape().to_vec(), data)?)
}

/// `10 log10(‖T‖² / ‖Y − T‖²)`.
pub fn measured_snr_db(clean: &Tensor64, noisy: &Tensor64) -> Result<f64> {
    let e = noisy.sub(clean)?.frobenius_norm();
    Ok(20.0 * (clean.frobenius_norm() / e).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpd_core::uniqueness::max_collinearity;

    #[test]
    fn random_ktensor_is_repeatable() {
        let a = gen_random_ktensor(&[4, 5, 3], 2, 7).unwrap();
        let b = gen_random_ktensor(&[4, 5, 3], 2, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.weights().iter().all(|&w| w == 1.0));
        assert_ne!(a, gen_random_ktensor(&[4, 5, 3], 2, 8).unwrap());
    }

    #[test]
    fn random_entries_are_standard_normal() {
        let kt = gen_random_ktensor(&[4000], 3, 1).unwrap();
        let n = 4000.0;
        for col in kt.factor(0).columns() {
            let mean = col.sum() / n;
            let var = col.mapv(|x| (x - mean).powi(2)).sum() / (n - 1.0);
            // five standard errors
            assert!(mean.abs() < 5.0 / n.sqrt(), "{mean}");
            assert!((var - 1.0).abs() < 5.0 * (2.0 / n).sqrt(), "{var}");
        }
    }

    #[test]
    fn sim1_sized_factors_reach_ksb_boundary() {
        let kt = gen_random_ktensor(&[20; 5], 48, 3).unwrap();
        let total: usize = kt
            .factors()
            .iter()
            .map(|f| cpd_core::uniqueness::numerical_rank(f, 1e-8).unwrap())
            .sum();
        assert_eq!(total, 100);
    }

    #[test]
    fn bottleneck_structure() {
        let kt = gen_bottleneck_ktensor(51, 5, 4).unwrap();
        assert_eq!(kt.shape(), vec![51; 5]);
        assert!((kt.factor(2)[[0, 0]] - (std::f64::consts::PI / 50.0).sin()).abs() < 1e-15);
        assert!((kt.factor(3)[[0, 0]] - (6.0 * std::f64::consts::PI / 50.0).sin()).abs() < 1e-15);
        for n in 0..4 {
            assert!(max_collinearity(kt.factor(n)).unwrap() > 0.9);
        }
        assert_eq!(kt, gen_bottleneck_ktensor(51, 5, 4).unwrap());
        assert!(gen_bottleneck_ktensor(51, 1, 4).is_err());
        // scaled grid still spans one second
        let small = gen_bottleneck_ktensor(20, 5, 4).unwrap();
        let last = (2.0 * std::f64::consts::PI * 2.0 + std::f64::consts::PI / 50.0).sin();
        assert!((small.factor(2)[[19, 0]] - last).abs() < 1e-12);
    }

    #[test]
    fn noise_hits_requested_snr() {
        let t = gen_random_ktensor(&[6, 5, 4], 3, 2).unwrap().reconstruct();
        let y = add_noise(&t, 20.0, 9).unwrap();
        let ratio = y.sub(&t).unwrap().frobenius_norm() / t.frobenius_norm();
        assert!((ratio - 0.1).abs() < 1e-12);
        assert!((measured_snr_db(&t, &y).unwrap() - 20.0).abs() < 1e-10);
        let same = add_noise(&t, f64::INFINITY, 9).unwrap();
        assert_eq!(same.data(), t.data());
        let zero = Tensor64::zeros(vec![2, 2]).unwrap();
        assert!(add_noise(&zero, 20.0, 1).is_err());
        assert!(add_noise(&t, f64::NAN, 1).is_err());
    }
}
