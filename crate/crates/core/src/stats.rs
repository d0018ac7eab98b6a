//! Summary statistics and distribution helpers used by the samplers,
//! predictors and their tests.

use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Standard normal CDF.
pub fn norm_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5 * libm::erfc(-x.as_f64() / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn norm_pdf<T: Scalar>(x: T) -> T {
    (-(x * x) * T::lit(0.5)).exp() / T::lit((2.0 * std::f64::consts::PI).sqrt())
}

/// `log N(x; 0, 1)` summed over the entries of `x`.
pub fn std_normal_log_density<T: Scalar>(x: &[T]) -> T {
    let half_log_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    x.iter().map(|&v| -T::lit(0.5) * v * v - half_log_2pi).sum()
}

pub fn mean<T: Scalar>(x: &[T]) -> T {
    if x.is_empty() {
        return T::nan();
    }
    x.iter().copied().sum::<T>() / T::from_usize_lossy(x.len())
}

/// Sample variance with the `n - 1` divisor; zero for fewer than two values.
pub fn variance<T: Scalar>(x: &[T]) -> T {
    if x.len() < 2 {
        return T::zero();
    }
    let m = mean(x);
    x.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / T::from_usize_lossy(x.len() - 1)
}

pub fn std_dev<T: Scalar>(x: &[T]) -> T {
    variance(x).sqrt()
}

/// Sample covariance (divisor `n - 1`) of row vectors.
pub fn covariance_matrix<T: Scalar>(rows: &[Vec<T>]) -> Matrix<T> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let mut mu = vec![T::zero(); d];
    for r in rows {
        for (m, &v) in mu.iter_mut().zip(r) {
            *m += v;
        }
    }
    let nn = T::from_usize_lossy(n.max(1));
    mu.iter_mut().for_each(|m| *m /= nn);
    let mut cov = Matrix::zeros(d, d);
    if n < 2 {
        return cov;
    }
    for r in rows {
        for i in 0..d {
            let di = r[i] - mu[i];
            for j in i..d {
                cov[(i, j)] += di * (r[j] - mu[j]);
            }
        }
    }
    let denom = T::from_usize_lossy(n - 1);
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Empirical quantile with linear interpolation between order statistics.
/// Non-finite values are ignored; returns NaN when nothing is left.
pub fn quantile<T: Scalar>(x: &[T], p: f64) -> T {
    let mut v: Vec<T> = x.iter().copied().filter(|a| a.is_finite()).collect();
    if v.is_empty() {
        return T::nan();
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let w = T::lit(h - lo as f64);
    v[lo] + (v[hi] - v[lo]) * w
}

/// Effective sample size from Geyer's initial positive sequence of
/// autocorrelations.
pub fn effective_sample_size<T: Scalar>(x: &[T]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let xs: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    let m = xs.iter().sum::<f64>() / n as f64;
    let c0 = xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        (0..n - lag).map(|i| (xs[i] - m) * (xs[i + lag] - m)).sum::<f64>() / (n as f64 * c0)
    };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64)
}

/// Monte Carlo standard error of the mean, corrected for autocorrelation.
pub fn mc_standard_error<T: Scalar>(x: &[T]) -> f64 {
    std_dev(x).as_f64() / effective_sample_size(x).sqrt()
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic(x: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v: Vec<f64> = x.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0_f64, |d, (i, &xi)| {
        let f = cdf(xi);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

/// Asymptotic p-value of the KS statistic `d` for sample size `n`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-1.0_f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}
