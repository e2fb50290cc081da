//! Joint Bayesian regression of a multivariate trait vector and a functional
//! reflectance spectrum on scalar environmental covariates.
//!
//! The crate is organised by stage:
//!
//! * [`basis`]: Gaussian-kernel and linear-spline design matrices over wavelength;
//! * [`model`]: parameters, priors, the induced covariance, density and forward simulation;
//! * [`sampler`]: the blocked Gibbs / Metropolis-within-Gibbs sampler;
//! * [`predict`]: conditional cross-prediction and posterior summaries;
//! * [`evaluate`]: energy score, MAE/RMSE and k-fold model comparison;
//! * [`geo`]: semivariograms and ordinary kriging for the abundance covariate;
//! * [`store`]: on-disk posterior and parameter formats.

pub mod basis;
pub mod error;
pub mod evaluate;
pub mod geo;
pub mod linalg;
pub mod model;
pub mod predict;
pub mod sampler;
pub mod store;
pub mod synthetic;

pub use basis::{default_bases, BasisSet, BasisSpecs, KernelBasisSpec, SplineSpec, WavelengthGrid};
pub use error::{Error, Result};
pub use model::{Dataset, Dims, ModelVariant, Parameters, Priors};
pub use sampler::{run_chain, FixedEffectsUpdate, PosteriorStore, SamplerConfig};
