//! Hyperparameters under scaled-sigmoid Gaussian priors.
//!
//! Every hyperparameter `θ` lives in an open interval and is represented by
//! an unconstrained `ξ ~ N(0, 1)` with `θ = θ_min + (θ_max - θ_min) / (1 + e^{-ξ})`.
//! The `ξ` vector is ordered `[l_T, l_K, σ_f, (l_t), m, σ_ε]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{KernelFamily, KernelSpec};
use crate::scalar::Scalar;

/// Open interval `(min, max)` of a hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds<T> {
    pub min: T,
    pub max: T,
}

impl<T: Scalar> Bounds<T> {
    pub fn new(min: T, max: T) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.is_finite() && self.max.is_finite() && self.min < self.max {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bounds must be finite and ordered, got ({}, {})", self.min, self.max)))
        }
    }

    pub fn midpoint(&self) -> T {
        (self.min + self.max) / T::lit(2.0)
    }
}

/// Scaled sigmoid: maps `ξ ∈ ℝ` into `(min, max)`.
pub fn ssg<T: Scalar>(xi: T, bounds: &Bounds<T>) -> T {
    let width = bounds.max - bounds.min;
    if xi >= T::zero() {
        bounds.min + width / (T::one() + (-xi).exp())
    } else {
        let e = xi.exp();
        bounds.min + width * e / (T::one() + e)
    }
}

/// Inverse of [`ssg`]; errors unless `min < θ < max`.
pub fn ssg_inverse<T: Scalar>(theta: T, bounds: &Bounds<T>) -> Result<T> {
    if !(theta > bounds.min && theta < bounds.max) {
        return Err(Error::InvalidArgument(format!(
            "{theta} is outside the open interval ({}, {})",
            bounds.min, bounds.max
        )));
    }
    Ok((theta - bounds.min).ln() - (bounds.max - theta).ln())
}

/// Bounds for every hyperparameter; the time length scale is present only
/// for time-augmented models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperprior<T> {
    pub length_scale_maturity: Bounds<T>,
    pub length_scale_strike: Bounds<T>,
    pub signal_sd: Bounds<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_scale_time: Option<Bounds<T>>,
    pub mean_level: Bounds<T>,
    pub noise_sd: Bounds<T>,
}

impl<T: Scalar> Default for Hyperprior<T> {
    /// Kernel parameters in (0, 1), mean level in (-6, log 0.5), noise SD in (0, 0.75).
    fn default() -> Self {
        let unit = Bounds { min: T::zero(), max: T::one() };
        Self {
            length_scale_maturity: unit,
            length_scale_strike: unit,
            signal_sd: unit,
            length_scale_time: None,
            mean_level: Bounds { min: T::lit(-6.0), max: T::lit(0.5f64.ln()) },
            noise_sd: Bounds { min: T::zero(), max: T::lit(0.75) },
        }
    }
}

impl<T: Scalar> Hyperprior<T> {
    /// Adds a calendar-time length scale with bounds (0, 1) unless present.
    pub fn time_augmented(mut self) -> Self {
        self.length_scale_time.get_or_insert(Bounds { min: T::zero(), max: T::one() });
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds().iter().try_for_each(Bounds::validate)
    }

    pub fn has_time_scale(&self) -> bool {
        self.length_scale_time.is_some()
    }

    /// Number of hyperparameters.
    pub fn dim(&self) -> usize {
        if self.has_time_scale() { 6 } else { 5 }
    }

    /// Positions of the kernel parameters in `ξ`.
    pub fn kernel_indices(&self) -> std::ops::Range<usize> {
        0..self.dim() - 2
    }

    /// Positions of `(m, σ_ε)` in `ξ`.
    pub fn likelihood_indices(&self) -> [usize; 2] {
        [self.dim() - 2, self.dim() - 1]
    }

    /// Bounds in `ξ` order.
    pub fn bounds(&self) -> Vec<Bounds<T>> {
        let mut b = vec![self.length_scale_maturity, self.length_scale_strike, self.signal_sd];
        b.extend(self.length_scale_time);
        b.push(self.mean_level);
        b.push(self.noise_sd);
        b
    }

    /// Column names in `ξ` order.
    pub fn names(&self) -> Vec<&'static str> {
        let mut n = vec!["l_T", "l_K", "sigma_f"];
        if self.has_time_scale() {
            n.push("l_t");
        }
        n.extend(["m", "sigma_eps"]);
        n
    }

    /// Hyperparameters at `ξ`; errors when a value underflows to a bound.
    pub fn state(&self, family: KernelFamily, xi: &[T]) -> Result<HyperState<T>> {
        if xi.len() != self.dim() {
            return Err(Error::InvalidArgument(format!("expected {} hyperparameters, got {}", self.dim(), xi.len())));
        }
        let theta: Vec<T> = xi.iter().zip(self.bounds()).map(|(&x, b)| ssg(x, &b)).collect();
        let mut kernel = KernelSpec::new(family, theta[0], theta[1], theta[2])?;
        if self.has_time_scale() {
            kernel = kernel.with_time_scale(theta[3])?;
        }
        let [im, ie] = self.likelihood_indices();
        if !(theta[ie] > T::zero()) {
            return Err(Error::InvalidArgument("noise SD collapsed to zero".into()));
        }
        Ok(HyperState { kernel, mean_level: theta[im], noise_sd: theta[ie], xi: xi.to_vec() })
    }

    /// The prior mode `ξ = 0`, every parameter at its interval midpoint.
    pub fn initial_state(&self, family: KernelFamily) -> Result<HyperState<T>> {
        self.state(family, &vec![T::zero(); self.dim()])
    }

    /// `ξ` for explicit parameter values given in `ξ` order.
    pub fn xi_of(&self, theta: &[T]) -> Result<Vec<T>> {
        theta.iter().zip(self.bounds()).map(|(&t, b)| ssg_inverse(t, &b)).collect()
    }
}

/// Kernel parameters, mean level and noise SD together with their `ξ`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperState<T> {
    pub kernel: KernelSpec<T>,
    pub mean_level: T,
    pub noise_sd: T,
    pub xi: Vec<T>,
}

impl<T: Scalar> HyperState<T> {
    /// Parameter values in `ξ` order.
    pub fn values(&self) -> Vec<T> {
        let k = &self.kernel;
        let mut v = vec![k.length_scale_maturity, k.length_scale_strike, k.signal_sd];
        v.extend(k.length_scale_time);
        v.push(self.mean_level);
        v.push(self.noise_sd);
        v
    }
}
