//! Bayesian variable selection for the Gaussian linear model: evidences under
//! several coefficient and model-space priors, L0 criteria, posterior
//! computation, and finite-sample bounds on posterior model probabilities.

pub mod coef_priors;
pub mod error;
pub mod l0;
pub mod linear;
pub mod model_priors;
pub mod numerics;
pub mod posterior;
pub mod tail_bounds;
pub mod global_bounds;
pub mod sim;

pub use coef_priors::{CoefPrior, InvGammaHyper, LogEvidence, TauPreset};
pub use error::{BvsError, Result};
pub use l0::L0Criterion;
pub use linear::{Dataset, ModelIndex, NoiseCovariance, PriorCovariance, Truth};
pub use model_priors::{ModelPrior, ModelPriorKind};
pub use posterior::{
    enumerate_posterior, gibbs_posterior, orthogonal_dp_posterior, select, subset_masses,
    GibbsConfig, PosteriorSpec, PosteriorSummary, SelectionRule,
};
