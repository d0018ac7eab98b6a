//! Elliptical slice sampling.

use rand::Rng;

use crate::scalar::Scalar;

/// Shrink iterations after which a slice step gives up and keeps the
/// current point.
pub const MAX_SHRINKS: usize = 64;

/// Result of one elliptical slice step.
#[derive(Clone, Debug)]
pub struct EssOutcome<T> {
    pub state: Vec<T>,
    pub log_lik: T,
    /// Likelihood evaluations spent, including the accepted one.
    pub evaluations: usize,
    /// True if the shrink cap was hit and the current point was kept.
    pub capped: bool,
}

/// Point at angle `theta` on the ellipse through `current` and
/// `prior_draw`, centred on `mean`.
pub fn ellipse_point<T: Scalar>(current: &[T], prior_draw: &[T], mean: Option<&[T]>, theta: f64) -> Vec<T> {
    let (c, s) = (T::lit(theta.cos()), T::lit(theta.sin()));
    match mean {
        None => current.iter().zip(prior_draw).map(|(&x, &v)| x * c + v * s).collect(),
        Some(mu) => current
            .iter()
            .zip(prior_draw)
            .zip(mu)
            .map(|((&x, &v), &m)| m + (x - m) * c + (v - m) * s)
            .collect(),
    }
}

/// One elliptical slice step for a Gaussian prior `N(mean, Σ)` (zero mean
/// when `mean` is `None`) times the likelihood `log_lik`.
///
/// `prior_draw` must be a fresh draw from the same Gaussian and
/// `current_log_lik` the likelihood of `current`.
pub fn ess_step<T: Scalar, R: Rng + ?Sized>(
    current: &[T],
    current_log_lik: T,
    prior_draw: &[T],
    mean: Option<&[T]>,
    mut log_lik: impl FnMut(&[T]) -> T,
    rng: &mut R,
) -> EssOutcome<T> {
    let threshold = current_log_lik.as_f64() + rng.random::<f64>().ln();
    let two_pi = std::f64::consts::TAU;
    let mut theta = rng.random::<f64>() * two_pi;
    let (mut lo, mut hi) = (theta - two_pi, theta);
    for evaluations in 1..=MAX_SHRINKS {
        let proposal = ellipse_point(current, prior_draw, mean, theta);
        let ll = log_lik(&proposal);
        if ll.as_f64() > threshold {
            return EssOutcome { state: proposal, log_lik: ll, evaluations, capped: false };
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        theta = lo + rng.random::<f64>() * (hi - lo);
    }
    log::warn!("elliptical slice step hit {MAX_SHRINKS} shrinks; keeping the current point");
    EssOutcome { state: current.to_vec(), log_lik: current_log_lik, evaluations: MAX_SHRINKS, capped: true }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_angle_is_identity() {
        let x = [0.3_f64, -1.2, 2.5];
        let v = [1.0, 1.0, -4.0];
        assert_eq!(ellipse_point(&x, &v, None, 0.0), x.to_vec());
        let mu = [0.1, 0.2, 0.3];
        let p = ellipse_point(&x, &v, Some(&mu), 0.0);
        for (a, b) in p.iter().zip(&x) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn impossible_likelihood_keeps_current() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = ess_step(&[1.0], 0.0, &[0.5], None, |_| f64::NEG_INFINITY, &mut rng);
        assert!(out.capped);
        assert_eq!(out.state, vec![1.0]);
    }
}
