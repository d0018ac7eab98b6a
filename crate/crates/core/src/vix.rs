//! Variance-swap strip and the 30-day volatility index built from it.
//!
//! The strip `VS(T) = 2 Σ ΔK_i/K_i² e^{rT} O(K_i) − (F/K_0 − 1)²` is a total
//! variance over `[0, T]`. The index interpolates the annualised variances
//! `VS(T)/T` of two maturities linearly in total variance to 30 days:
//!
//! `σ²_30 = (w_1 T_1 σ²_1 + w_2 T_2 σ²_2) / τ`, `w_1 = (T_2 − τ)/(T_2 − T_1)`,
//! `w_2 = 1 − w_1`, `τ = 30/365`, and `VIX = 100 σ_30`.

use crate::error::{Error, Result};
use crate::market_data::DAYS_PER_YEAR;
use crate::scalar::Scalar;

/// Target horizon of the index in days.
pub const TARGET_DAYS: f64 = 30.0;
/// Maturities at or below this many days are excluded.
pub const MIN_DAYS: f64 = 8.0;

/// Out-of-the-money option strip at one maturity.
#[derive(Clone, Debug, PartialEq)]
pub struct VixInputs<T> {
    pub maturity: T,
    pub rate: T,
    pub forward: T,
    /// Largest strike at or below the forward.
    pub pivot: T,
    /// Ascending strikes.
    pub strikes: Vec<T>,
    /// Put price below the pivot, call price above, their average at it.
    pub otm_prices: Vec<T>,
}

impl<T: Scalar> VixInputs<T> {
    /// Builds the strip from call prices, synthesising puts by parity
    /// `P = C − S e^{−qT} + K e^{−rT}`.
    pub fn from_calls(maturity: T, strikes: &[T], calls: &[T], spot: T, rate: T, dividend: T) -> Result<Self> {
        if strikes.len() != calls.len() {
            return Err(Error::InvalidArgument("one call price per strike required".into()));
        }
        let forward = spot * ((rate - dividend) * maturity).exp();
        let pivot_idx = strikes
            .iter()
            .rposition(|&k| k <= forward)
            .ok_or_else(|| Error::Data(format!("no strike at or below the forward {forward}")))?;
        let pivot = strikes[pivot_idx];
        let otm_prices = strikes
            .iter()
            .zip(calls)
            .enumerate()
            .map(|(i, (&k, &c))| {
                let put = c - spot * (-dividend * maturity).exp() + k * (-rate * maturity).exp();
                match i.cmp(&pivot_idx) {
                    std::cmp::Ordering::Less => put,
                    std::cmp::Ordering::Greater => c,
                    std::cmp::Ordering::Equal => (put + c) / T::lit(2.0),
                }
            })
            .collect();
        let inputs = Self { maturity, rate, forward, pivot, strikes: strikes.to_vec(), otm_prices };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strikes.len() < 2 {
            return Err(Error::InvalidArgument("variance strip needs at least two strikes".into()));
        }
        if self.strikes.len() != self.otm_prices.len() {
            return Err(Error::InvalidArgument("one option price per strike required".into()));
        }
        if !(self.maturity > T::zero()) {
            return Err(Error::InvalidArgument("maturity must be positive".into()));
        }
        if self.strikes[0] <= T::zero() || self.strikes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("strikes must be positive and strictly ascending".into()));
        }
        if let Some(p) = self.otm_prices.iter().find(|p| !(**p >= T::zero())) {
            return Err(Error::Data(format!("negative or non-finite option price {p} in strip")));
        }
        if !(self.pivot <= self.forward) {
            return Err(Error::InvalidArgument("pivot strike must not exceed the forward".into()));
        }
        Ok(())
    }
}

/// Strike gap: central inside, one-sided at the ends.
fn strike_gap<T: Scalar>(k: &[T], i: usize) -> T {
    let n = k.len();
    if i == 0 {
        k[1] - k[0]
    } else if i == n - 1 {
        k[n - 1] - k[n - 2]
    } else {
        (k[i + 1] - k[i - 1]) / T::lit(2.0)
    }
}

/// Total variance `VS(T)` of the strip.
pub fn variance_strip<T: Scalar>(inputs: &VixInputs<T>) -> Result<T> {
    inputs.validate()?;
    let growth = (inputs.rate * inputs.maturity).exp();
    let k = &inputs.strikes;
    let sum: T = (0..k.len()).map(|i| strike_gap(k, i) / (k[i] * k[i]) * growth * inputs.otm_prices[i]).sum();
    let skew = inputs.forward / inputs.pivot - T::one();
    let vs = T::lit(2.0) * sum - skew * skew;
    if vs < T::zero() {
        log::warn!("negative variance strip {vs} at maturity {}", inputs.maturity);
    }
    Ok(vs)
}

/// Annualised variance `VS(T)/T`.
pub fn annualised<T: Scalar>(strip: T, maturity: T) -> T {
    strip / maturity
}

/// The index in percentage points from annualised variances at two
/// maturities; the pair may be given in either order.
pub fn vix_index<T: Scalar>(var_a: T, maturity_a: T, var_b: T, maturity_b: T) -> Result<T> {
    let ((v1, t1), (v2, t2)) =
        if maturity_a <= maturity_b { ((var_a, maturity_a), (var_b, maturity_b)) } else { ((var_b, maturity_b), (var_a, maturity_a)) };
    let floor = T::lit(MIN_DAYS / DAYS_PER_YEAR);
    if !(t1 > floor) {
        return Err(Error::InvalidArgument(format!("maturities must exceed {MIN_DAYS} days")));
    }
    if !(t2 > t1) {
        return Err(Error::InvalidArgument("the two maturities must differ".into()));
    }
    let tau = T::lit(TARGET_DAYS / DAYS_PER_YEAR);
    if t1 >= tau || t2 < tau {
        log::warn!("maturities do not bracket {TARGET_DAYS} days; extrapolating");
    }
    // weight of the far maturity on the annualised scale: w_2 T_2 / τ
    let lambda = (tau - t1) * t2 / ((t2 - t1) * tau);
    let var30 = v1 + lambda * (v2 - v1);
    if var30 < T::zero() {
        return Err(Error::Numerical(format!("interpolated 30-day variance {var30} is negative")));
    }
    Ok(T::lit(100.0) * var30.sqrt())
}

/// The two shortest maturities beyond [`MIN_DAYS`], in ascending order.
pub fn select_maturities<T: Scalar>(maturities: &[T]) -> Result<(usize, usize)> {
    let floor = T::lit(MIN_DAYS / DAYS_PER_YEAR);
    let mut idx: Vec<usize> = (0..maturities.len()).filter(|&i| maturities[i] > floor).collect();
    idx.sort_by(|&a, &b| maturities[a].partial_cmp(&maturities[b]).unwrap());
    idx.dedup_by(|a, b| maturities[*a] == maturities[*b]);
    match idx[..] {
        [a, b, ..] => Ok((a, b)),
        _ => Err(Error::Data(format!("need two maturities beyond {MIN_DAYS} days"))),
    }
}

/// Index from two strips: `(VS(T_1), VS(T_2), VIX)`.
pub fn vix_from_strips<T: Scalar>(near: &VixInputs<T>, far: &VixInputs<T>) -> Result<(T, T, T)> {
    let vs1 = variance_strip(near)?;
    let vs2 = variance_strip(far)?;
    let vix = vix_index(annualised(vs1, near.maturity), near.maturity, annualised(vs2, far.maturity), far.maturity)?;
    Ok((vs1, vs2, vix))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivot_at_forward_has_no_correction() {
        let inputs = VixInputs {
            maturity: 0.1_f64,
            rate: 0.0,
            forward: 100.0,
            pivot: 100.0,
            strikes: vec![90.0, 100.0, 110.0],
            otm_prices: vec![0.0; 3],
        };
        assert_eq!(variance_strip(&inputs).unwrap(), 0.0);
        let shifted = VixInputs { forward: 104.0, ..inputs };
        assert!((variance_strip(&shifted).unwrap() + 0.04f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn far_endpoint_takes_all_weight() {
        let t2 = 30.0 / 365.0;
        let v = vix_index(0.09_f64, 10.0 / 365.0, 0.04, t2).unwrap();
        assert!((v - 20.0).abs() < 1e-12);
    }

    #[test]
    fn short_maturities_rejected() {
        assert!(vix_index(0.04_f64, 5.0 / 365.0, 0.04, 7.0 / 365.0).is_err());
        assert!(vix_index(0.04_f64, 0.1, 0.04, 0.1).is_err());
        let single = VixInputs {
            maturity: 0.1_f64,
            rate: 0.0,
            forward: 100.0,
            pivot: 100.0,
            strikes: vec![100.0],
            otm_prices: vec![1.0],
        };
        assert!(variance_strip(&single).is_err());
    }

    #[test]
    fn maturity_selection_skips_short_expiries() {
        let m = [0.01_f64, 0.5, 0.05, 0.1];
        assert_eq!(select_maturities(&m).unwrap(), (2, 3));
        assert!(select_maturities(&[0.01_f64, 0.5]).is_err());
    }
}
