//! Gaussian-process machinery: product kernels, dense and Kronecker-factored
//! covariances, conditioning and prior draws.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::market_data::InputGrid;
use crate::scalar::Scalar;

/// Relative diagonal jitter tried first when factorising a covariance.
pub const JITTER_START: f64 = 1e-8;
/// Largest relative jitter before factorisation is declared failed.
pub const JITTER_MAX: f64 = 1e-4;

/// A point in scaled (maturity, strike) coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputPoint<T> {
    pub maturity: T,
    pub strike: T,
}

/// A point in scaled (calendar time, maturity, strike) coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimePoint<T> {
    pub time: T,
    pub maturity: T,
    pub strike: T,
}

impl<T> TimePoint<T> {
    pub fn new(time: T, point: InputPoint<T>) -> Self {
        Self { time, maturity: point.maturity, strike: point.strike }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    #[serde(rename = "se")]
    SquaredExponential,
    #[serde(rename = "matern32")]
    Matern32,
}

impl KernelFamily {
    pub fn tag(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Matern32 => "matern32",
        }
    }

    /// Unit-variance correlation at distance `d` for length scale `l`.
    #[inline]
    pub fn factor<T: Scalar>(self, d: T, l: T) -> T {
        match self {
            KernelFamily::SquaredExponential => (-(d * d) / (T::lit(2.0) * l * l)).exp(),
            KernelFamily::Matern32 => {
                let r = T::lit(3.0).sqrt() * d.abs() / l;
                (T::one() + r) * (-r).exp()
            }
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "se" | "squared_exponential" | "squared-exponential" => Ok(KernelFamily::SquaredExponential),
            "matern32" | "matern-3/2" | "matern" => Ok(KernelFamily::Matern32),
            other => Err(Error::InvalidArgument(format!("unknown kernel family {other:?}"))),
        }
    }
}

/// Product kernel `σ_f² · k(ΔT) · k(ΔK) [· k(Δt)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<T> {
    pub family: KernelFamily,
    pub length_scale_maturity: T,
    pub length_scale_strike: T,
    pub signal_sd: T,
    /// Calendar-time length scale; present only for time-augmented inputs.
    pub length_scale_time: Option<T>,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn new(family: KernelFamily, length_scale_maturity: T, length_scale_strike: T, signal_sd: T) -> Result<Self> {
        let spec = Self { family, length_scale_maturity, length_scale_strike, signal_sd, length_scale_time: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_time_scale(mut self, length_scale_time: T) -> Result<Self> {
        self.length_scale_time = Some(length_scale_time);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: T| v > T::zero() && v.is_finite();
        let time_ok = self.length_scale_time.map_or(true, ok);
        if ok(self.length_scale_maturity) && ok(self.length_scale_strike) && ok(self.signal_sd) && time_ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("kernel parameters must be positive and finite: {self:?}")))
        }
    }

    pub fn signal_var(&self) -> T {
        self.signal_sd * self.signal_sd
    }

    pub fn eval(&self, a: &InputPoint<T>, b: &InputPoint<T>) -> T {
        self.signal_var()
            * self.family.factor(a.maturity - b.maturity, self.length_scale_maturity)
            * self.family.factor(a.strike - b.strike, self.length_scale_strike)
    }

    /// Time-augmented kernel; without a time length scale the time factor is 1.
    pub fn eval_time(&self, a: &TimePoint<T>, b: &TimePoint<T>) -> T {
        let time = self.length_scale_time.map_or(T::one(), |l| self.family.factor(a.time - b.time, l));
        self.signal_var()
            * self.family.factor(a.maturity - b.maturity, self.length_scale_maturity)
            * self.family.factor(a.strike - b.strike, self.length_scale_strike)
            * time
    }

    /// Unit-variance Gram matrix along one axis.
    pub fn axis_gram(&self, x: &[T], length_scale: T) -> Matrix<T> {
        Matrix::from_fn(x.len(), x.len(), |i, j| self.family.factor(x[i] - x[j], length_scale))
    }

    pub fn cross(&self, a: &[InputPoint<T>], b: &[InputPoint<T>]) -> Matrix<T> {
        Matrix::from_fn(a.len(), b.len(), |i, j| self.eval(&a[i], &b[j]))
    }

    pub fn cross_time(&self, a: &[TimePoint<T>], b: &[TimePoint<T>]) -> Matrix<T> {
        Matrix::from_fn(a.len(), b.len(), |i, j| self.eval_time(&a[i], &b[j]))
    }
}

/// Zero-mean Gaussian covariance with a lower-triangular root `L` (`K = L Lᵀ`).
pub trait Covariance<T: Scalar> {
    fn dim(&self) -> usize;
    /// `L x`.
    fn lower_matvec(&self, x: &[T]) -> Vec<T>;
    /// `L⁻¹ x`.
    fn whiten(&self, x: &[T]) -> Vec<T>;
    /// `K⁻¹ x`.
    fn solve(&self, x: &[T]) -> Vec<T>;
    /// `K x`.
    fn matvec(&self, x: &[T]) -> Vec<T>;
    fn log_det(&self) -> T;
    fn to_dense(&self) -> Matrix<T>;

    /// `log N(x; 0, K)`.
    fn log_density(&self, x: &[T]) -> T {
        let z = self.whiten(x);
        let quad: T = z.iter().map(|&v| v * v).sum();
        let n = T::from_usize_lossy(self.dim());
        -T::lit(0.5) * (quad + self.log_det() + n * T::lit((2.0 * std::f64::consts::PI).ln()))
    }

    /// A draw `L ν` with `ν` standard normal.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T>
    where
        Self: Sized,
    {
        let nu = standard_normal_vec(self.dim(), rng);
        self.lower_matvec(&nu)
    }
}

pub fn standard_normal_vec<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// Counts arithmetic in the Kronecker routines, for cost assertions.
#[derive(Debug, Default)]
pub struct OpCounter(AtomicU64);

impl OpCounter {
    fn add(&self, n: usize) {
        self.0.fetch_add(n as u64, Ordering::Relaxed);
    }
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

impl Clone for OpCounter {
    fn clone(&self) -> Self {
        Self(AtomicU64::new(self.get()))
    }
}

/// `K = σ_f² (K_T + δI) ⊗ (K_K + δI)` over a Cartesian grid, nodes
/// maturity-major. The jitter `δ` is applied to each unit-variance factor
/// so the Kronecker structure survives regularisation.
#[derive(Clone, Debug)]
pub struct KroneckerCovariance<T> {
    signal_sd: T,
    maturity_gram: Matrix<T>,
    strike_gram: Matrix<T>,
    maturity_chol: Matrix<T>,
    strike_chol: Matrix<T>,
    jitter: T,
    ops: OpCounter,
}

impl<T: Scalar> KroneckerCovariance<T> {
    /// Factorises both Gram matrices, escalating the relative jitter ×10
    /// from 1e-8 up to 1e-4 on failure.
    pub fn new(spec: &KernelSpec<T>, maturities: &[T], strikes: &[T]) -> Result<Self> {
        spec.validate()?;
        let ops = OpCounter::default();
        let kt = spec.axis_gram(maturities, spec.length_scale_maturity);
        let kk = spec.axis_gram(strikes, spec.length_scale_strike);
        let mut jitter = JITTER_START;
        loop {
            let mut a = kt.clone();
            let mut b = kk.clone();
            a.add_diagonal(T::lit(jitter));
            b.add_diagonal(T::lit(jitter));
            ops.add(maturities.len().pow(3) / 3 + strikes.len().pow(3) / 3);
            if let (Some(la), Some(lb)) = (linalg::cholesky(&a), linalg::cholesky(&b)) {
                return Ok(Self {
                    signal_sd: spec.signal_sd,
                    maturity_gram: a,
                    strike_gram: b,
                    maturity_chol: la,
                    strike_chol: lb,
                    jitter: T::lit(jitter),
                    ops,
                });
            }
            jitter *= 10.0;
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(Error::Factorization { jitter: jitter / 10.0 });
            }
        }
    }

    pub fn for_grid(spec: &KernelSpec<T>, grid: &InputGrid<T>) -> Result<Self> {
        Self::new(spec, &grid.scaled_maturities(), &grid.scaled_strikes())
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }
    pub fn op_count(&self) -> u64 {
        self.ops.get()
    }
    pub fn reset_op_count(&self) {
        self.ops.reset()
    }
    pub fn maturity_factor(&self) -> &Matrix<T> {
        &self.maturity_gram
    }
    pub fn strike_factor(&self) -> &Matrix<T> {
        &self.strike_gram
    }
    pub fn signal_sd(&self) -> T {
        self.signal_sd
    }

    fn dims(&self) -> (usize, usize) {
        (self.maturity_gram.rows(), self.strike_gram.rows())
    }

    /// `vec(A X Bᵀ)` for `X` the I×J reshape of `x`, with `A` acting on
    /// maturity columns and `B` on strike rows.
    fn apply(&self, x: &[T], left: impl Fn(&[T]) -> Vec<T>, right: impl Fn(&[T]) -> Vec<T>) -> Vec<T> {
        let (ni, nj) = self.dims();
        assert_eq!(x.len(), ni * nj, "vector length does not match the grid");
        let mut y = Vec::with_capacity(ni * nj);
        for row in x.chunks(nj) {
            y.extend(right(row));
        }
        let mut col = vec![T::zero(); ni];
        for j in 0..nj {
            for i in 0..ni {
                col[i] = y[i * nj + j];
            }
            let c = left(&col);
            for i in 0..ni {
                y[i * nj + j] = c[i];
            }
        }
        self.ops.add(ni * nj * (ni + nj));
        y
    }
}

impl<T: Scalar> Covariance<T> for KroneckerCovariance<T> {
    fn dim(&self) -> usize {
        let (ni, nj) = self.dims();
        ni * nj
    }

    fn lower_matvec(&self, x: &[T]) -> Vec<T> {
        let s = self.signal_sd;
        let mut y = self.apply(
            x,
            |c| linalg::lower_matvec(&self.maturity_chol, c),
            |r| linalg::lower_matvec(&self.strike_chol, r),
        );
        y.iter_mut().for_each(|v| *v *= s);
        y
    }

    fn whiten(&self, x: &[T]) -> Vec<T> {
        let s = self.signal_sd;
        let mut y = self.apply(
            x,
            |c| linalg::solve_lower(&self.maturity_chol, c),
            |r| linalg::solve_lower(&self.strike_chol, r),
        );
        y.iter_mut().for_each(|v| *v /= s);
        y
    }

    fn solve(&self, x: &[T]) -> Vec<T> {
        let s2 = self.signal_sd * self.signal_sd;
        let mut y = self.apply(
            x,
            |c| linalg::cholesky_solve(&self.maturity_chol, c),
            |r| linalg::cholesky_solve(&self.strike_chol, r),
        );
        y.iter_mut().for_each(|v| *v /= s2);
        y
    }

    fn matvec(&self, x: &[T]) -> Vec<T> {
        let s2 = self.signal_sd * self.signal_sd;
        let mut y = self.apply(x, |c| self.maturity_gram.matvec(c), |r| self.strike_gram.matvec(r));
        y.iter_mut().for_each(|v| *v *= s2);
        y
    }

    fn log_det(&self) -> T {
        let (ni, nj) = self.dims();
        T::from_usize_lossy(ni * nj) * (self.signal_sd * self.signal_sd).ln()
            + T::from_usize_lossy(nj) * linalg::cholesky_log_det(&self.maturity_chol)
            + T::from_usize_lossy(ni) * linalg::cholesky_log_det(&self.strike_chol)
    }

    fn to_dense(&self) -> Matrix<T> {
        let mut k = linalg::kron(&self.maturity_gram, &self.strike_gram);
        k.scale(self.signal_sd * self.signal_sd);
        k
    }
}

/// `(A ⊗ B) x` without forming the product, for node order maturity-major.
pub fn kron_apply<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, x: &[T]) -> Vec<T> {
    let (ni, nj) = (a.cols(), b.cols());
    assert_eq!(x.len(), ni * nj, "vector length does not match the factors");
    let mut tmp = Vec::with_capacity(ni * b.rows());
    for row in x.chunks(nj) {
        tmp.extend(b.matvec(row));
    }
    let mj = b.rows();
    let mut out = vec![T::zero(); a.rows() * mj];
    for r in 0..a.rows() {
        for (i, &w) in a.row(r).iter().enumerate() {
            if w != T::zero() {
                for j in 0..mj {
                    out[r * mj + j] += w * tmp[i * mj + j];
                }
            }
        }
    }
    out
}

/// Eigendecomposition `K = Q diag(λ) Qᵀ` of a Kronecker covariance, with
/// `Q = Q_T ⊗ Q_K` kept factored.
#[derive(Clone, Debug)]
pub struct KroneckerEigen<T> {
    maturity_vectors: Matrix<T>,
    strike_vectors: Matrix<T>,
    /// Eigenvalues in node order, including `σ_f²`.
    pub values: Vec<T>,
}

impl<T: Scalar> KroneckerEigen<T> {
    /// `Q x`.
    pub fn rotate(&self, x: &[T]) -> Vec<T> {
        kron_apply(&self.maturity_vectors, &self.strike_vectors, x)
    }

    /// `Qᵀ x`.
    pub fn rotate_back(&self, x: &[T]) -> Vec<T> {
        kron_apply(&self.maturity_vectors.transpose(), &self.strike_vectors.transpose(), x)
    }
}

impl<T: Scalar> KroneckerCovariance<T> {
    pub fn eigen(&self) -> KroneckerEigen<T> {
        let (la, qa) = linalg::symmetric_eigen(&self.maturity_gram);
        let (lb, qb) = linalg::symmetric_eigen(&self.strike_gram);
        let s2 = self.signal_sd * self.signal_sd;
        let values =
            la.iter().flat_map(|&a| lb.iter().map(move |&b| s2 * a.max(T::zero()) * b.max(T::zero()))).collect();
        KroneckerEigen { maturity_vectors: qa, strike_vectors: qb, values }
    }
}

/// Dense covariance with diagonal jitter `δ·scale`, `δ` escalated ×10 from
/// 1e-8 up to 1e-4 on factorisation failure.
#[derive(Clone, Debug)]
pub struct DenseCovariance<T> {
    matrix: Matrix<T>,
    chol: Matrix<T>,
    jitter: T,
}

impl<T: Scalar> DenseCovariance<T> {
    /// `scale` sets the jitter unit, normally `σ_f²`.
    pub fn new(mut matrix: Matrix<T>, scale: T) -> Result<Self> {
        matrix.symmetrize();
        let (chol, jitter) = linalg::cholesky_with_jitter(
            &matrix,
            T::lit(JITTER_START) * scale,
            T::lit(JITTER_MAX) * scale,
        )?;
        matrix.add_diagonal(jitter);
        Ok(Self { matrix, chol, jitter })
    }

    pub fn from_points(spec: &KernelSpec<T>, points: &[InputPoint<T>]) -> Result<Self> {
        Self::new(spec.cross(points, points), spec.signal_var())
    }

    pub fn from_time_points(spec: &KernelSpec<T>, points: &[TimePoint<T>]) -> Result<Self> {
        Self::new(spec.cross_time(points, points), spec.signal_var())
    }

    /// Jitter actually added to the diagonal.
    pub fn jitter(&self) -> T {
        self.jitter
    }
    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }
    pub fn cholesky(&self) -> &Matrix<T> {
        &self.chol
    }
}

impl<T: Scalar> Covariance<T> for DenseCovariance<T> {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }
    fn lower_matvec(&self, x: &[T]) -> Vec<T> {
        linalg::lower_matvec(&self.chol, x)
    }
    fn whiten(&self, x: &[T]) -> Vec<T> {
        linalg::solve_lower(&self.chol, x)
    }
    fn solve(&self, x: &[T]) -> Vec<T> {
        linalg::cholesky_solve(&self.chol, x)
    }
    fn matvec(&self, x: &[T]) -> Vec<T> {
        self.matrix.matvec(x)
    }
    fn log_det(&self) -> T {
        linalg::cholesky_log_det(&self.chol)
    }
    fn to_dense(&self) -> Matrix<T> {
        self.matrix.clone()
    }
}

/// Mean and covariance of a Gaussian conditional.
#[derive(Clone, Debug)]
pub struct GaussianMoments<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

impl<T: Scalar> GaussianMoments<T> {
    pub fn variances(&self) -> Vec<T> {
        self.cov.diagonal()
    }

    /// One draw; the covariance is re-factorised with a small jitter
    /// relative to its largest diagonal entry.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<T>> {
        let root = self.root()?;
        let z = standard_normal_vec(self.mean.len(), rng);
        Ok(self.mean.iter().zip(linalg::lower_matvec(&root, &z)).map(|(&m, d)| m + d).collect())
    }

    /// Lower-triangular root of the covariance.
    pub fn root(&self) -> Result<Matrix<T>> {
        let scale = self.cov.diagonal().into_iter().fold(T::zero(), T::max).max(T::min_positive_value());
        linalg::cholesky_with_jitter(&self.cov, T::lit(1e-12) * scale, T::lit(JITTER_MAX) * scale).map(|(l, _)| l)
    }
}

/// Conditions a zero-mean Gaussian on `values` observed without noise:
/// `mean = K_*f K⁻¹ f`, `cov = K_** - K_*f K⁻¹ K_f*`, symmetrised.
pub fn condition<T: Scalar, C: Covariance<T>>(
    train: &C,
    cross: &Matrix<T>,
    target_cov: &Matrix<T>,
    values: &[T],
) -> GaussianMoments<T> {
    let alpha = train.solve(values);
    let mean = cross.matvec(&alpha);
    let m = cross.rows();
    let n = cross.cols();
    // columns of K⁻¹ K_f*
    let solved: Vec<Vec<T>> = (0..m).map(|r| train.solve(cross.row(r))).collect();
    let mut cov = target_cov.clone();
    for a in 0..m {
        for b in a..m {
            let dot: T = (0..n).map(|k| cross[(a, k)] * solved[b][k]).sum();
            cov[(a, b)] -= dot;
            if a != b {
                cov[(b, a)] -= dot;
            }
        }
    }
    cov.symmetrize();
    GaussianMoments { mean, cov }
}

/// Predictive moments of the latent surface at `targets` given its values
/// `f` on the grid, using the Kronecker-factored training covariance.
/// The mean level only enters through the link, so the latent prior is
/// zero-mean.
pub fn gp_predict<T: Scalar>(
    f: &[T],
    grid: &InputGrid<T>,
    targets: &[InputPoint<T>],
    spec: &KernelSpec<T>,
) -> Result<GaussianMoments<T>> {
    if f.len() != grid.len() {
        return Err(Error::InvalidArgument(format!("expected {} latent values, got {}", grid.len(), f.len())));
    }
    let train = KroneckerCovariance::for_grid(spec, grid)?;
    Ok(gp_predict_with(&train, f, &grid.scaled_points(), targets, spec))
}

/// [`gp_predict`] with an already factorised training covariance.
pub fn gp_predict_with<T: Scalar, C: Covariance<T>>(
    train: &C,
    f: &[T],
    train_points: &[InputPoint<T>],
    targets: &[InputPoint<T>],
    spec: &KernelSpec<T>,
) -> GaussianMoments<T> {
    let cross = spec.cross(targets, train_points);
    let target_cov = spec.cross(targets, targets);
    condition(train, &cross, &target_cov, f)
}

/// Latent values on a grid; the local volatility is `exp(f + m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSurface<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> LatentSurface<T> {
    pub fn local_vol(&self, mean_level: T) -> Vec<T> {
        link(&self.values, mean_level)
    }
}

/// The positive link `σ = exp(f + m)`.
pub fn link<T: Scalar>(f: &[T], mean_level: T) -> Vec<T> {
    f.iter().map(|&v| (v + mean_level).exp()).collect()
}

/// Prior draw `f = L ν` on the grid.
pub fn sample_prior<T: Scalar, R: Rng + ?Sized>(
    spec: &KernelSpec<T>,
    grid: &InputGrid<T>,
    rng: &mut R,
) -> Result<LatentSurface<T>> {
    let cov = KroneckerCovariance::for_grid(spec, grid)?;
    Ok(LatentSurface { values: cov.sample(rng) })
}
