//! Bayesian calibration of local volatility surfaces.
//!
//! A Gaussian-process prior over the log local volatility, a Crank-Nicolson
//! solver for Dupire's forward equation as the likelihood map, and blocked
//! Gibbs sampling with elliptical slice moves. Everything numeric is generic
//! over [`Scalar`] (`f32` or `f64`); the `f64` aliases below are what the
//! command-line tool uses.

pub mod error;
pub mod evidence;
pub mod gp;
pub mod hyper;
pub mod linalg;
pub mod market_data;
pub mod predictor;
pub mod pricer;
pub mod sampler;
pub mod scalar;
pub mod sequential;
pub mod stats;
pub mod synthetic;
pub mod vix;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases.
pub type Snapshot = market_data::MarketSnapshot<f64>;
pub type Quote = market_data::MarketQuote<f64>;
pub type Context = market_data::SnapshotContext<f64>;
pub type Grid = market_data::InputGrid<f64>;
pub type Kernel = gp::KernelSpec<f64>;
pub type Prior = hyper::Hyperprior<f64>;
pub type Sample = sampler::PosteriorSample<f64>;
pub type State = sampler::ChainState<f64>;
pub type Prices = pricer::PriceSurface<f64>;
pub type Solver = pricer::DupireSolver<f64>;
pub type Prediction = predictor::PredictiveSample<f64>;
pub type SeqState = sequential::SequentialState<f64>;
