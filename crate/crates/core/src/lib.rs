//! Multinomial logit models with latent, subject-specific consideration sets.
//!
//! Consideration vectors are modelled by a Dirichlet-process mixture of
//! independent Bernoulli attention models and estimated jointly with a
//! random-effects logit by MCMC.

pub mod checks;
pub mod cli;
pub mod config;
pub mod cs_sampler;
pub mod dp;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod oracle;
pub mod params;
pub mod random;
pub mod sampler;
pub mod simulate;
pub mod summaries;

pub use error::{Error, Result};
pub use model::{
    validate_dataset, ConsiderationState, Hyperparams, MixtureState, PanelDataset, ResponseParams, SubjectRecord,
    Violation,
};
