//! Joint node-and-network thresholded selection (JNNTs).
//!
//! A Bayesian regression model for a scalar outcome on a node-level vector
//! predictor and a symmetric network (matrix) predictor, with a shared
//! threshold that couples node selection and clique sub-network selection.
//! The crate provides the deterministic model core, the joint prior over the
//! latent selection fields, the full Gibbs/Metropolis-Hastings posterior
//! sampler, posterior selection summaries with convergence diagnostics, a
//! simulation benchmark, and the file formats used by the `jnnts` CLI.

pub mod error;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod math;
pub mod model;
pub mod sampler;
pub mod sim;

pub use error::{Error, Result};
pub use inference::{ConvergenceReport, MonitoredScalar, SelectionSummary};
pub use kernel::{KernelSpec, PriorStructure};
pub use model::{CliqueVerdict, CoefficientSet, Dataset, LatentState};
pub use sampler::{
    Ablation, HyperPriors, MhTuning, ModelConfig, ParameterState, PosteriorChain,
};
pub use sim::{FitMetrics, Scenario, ScenarioSpec};
