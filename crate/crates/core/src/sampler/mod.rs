//! The posterior sampler: a fixed sweep of conjugate Gibbs draws, per-element
//! mixed truncated-normal draws for the latent selection fields, and two
//! random-walk Metropolis-Hastings moves (cross-field correlation rho and the
//! shared threshold lambda).
//!
//! One chain is strictly sequential; independent chains share the immutable
//! dataset and prior structure and own their parameter state and RNG stream.

mod engine;

pub use engine::{draw_state_from_prior, model_mean, random_init_state, GibbsSampler};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, PriorStructure};
use crate::math::splitmix64;
use crate::model::{Dataset, LatentState};

/// Fixed hyper-prior constants. Variance components carry Inverse-Gamma
/// (shape, rate) pairs; eta has a fixed large prior variance; the threshold
/// is uniform on [0, lambda_max]; rho is uniform on (-1, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperPriors {
    pub sigma_eta: f64,
    pub lambda_max: f64,
    pub a_beta: f64,
    pub b_beta: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub a_theta: f64,
    pub b_theta: f64,
    pub a_eps: f64,
    pub b_eps: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
}

impl Default for HyperPriors {
    fn default() -> Self {
        HyperPriors {
            sigma_eta: 10.0,
            lambda_max: 1.5,
            a_beta: 0.1,
            b_beta: 0.1,
            a_alpha: 0.1,
            b_alpha: 0.1,
            a_theta: 0.1,
            b_theta: 0.1,
            a_eps: 0.1,
            b_eps: 0.1,
            a_sigma: 0.1,
            b_sigma: 0.1,
        }
    }
}

impl HyperPriors {
    /// Same Inverse-Gamma (shape, rate) for every variance component.
    pub fn with_ig(shape: f64, rate: f64) -> Self {
        HyperPriors {
            a_beta: shape,
            b_beta: rate,
            a_alpha: shape,
            b_alpha: rate,
            a_theta: shape,
            b_theta: rate,
            a_eps: shape,
            b_eps: rate,
            a_sigma: shape,
            b_sigma: rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("sigma_eta", self.sigma_eta),
            ("lambda_max", self.lambda_max),
            ("a_beta", self.a_beta),
            ("b_beta", self.b_beta),
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
            ("a_theta", self.a_theta),
            ("b_theta", self.b_theta),
            ("a_eps", self.a_eps),
            ("b_eps", self.b_eps),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
        ];
        for (name, v) in pairs {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Random-walk proposal settings for the two MH moves. When `adapt` is set
/// the step sizes are rescaled every `adapt_window` burn-in sweeps by
/// exp(acceptance - target) and frozen after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhTuning {
    pub step_rho: f64,
    pub step_lambda: f64,
    pub adapt: bool,
    pub adapt_window: usize,
    pub target_accept: f64,
}

impl Default for MhTuning {
    fn default() -> Self {
        MhTuning {
            step_rho: 0.3,
            step_lambda: 0.3,
            adapt: true,
            adapt_window: 50,
            target_accept: 0.234,
        }
    }
}

impl MhTuning {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_rho > 0.0 && self.step_lambda > 0.0) {
            return Err(Error::Config("MH step sizes must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target acceptance must lie in (0,1)".into()));
        }
        if self.adapt && self.adapt_window == 0 {
            return Err(Error::Config("adapt_window must be positive".into()));
        }
        Ok(())
    }
}

/// Which predictor components enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Node and network components with the coupled joint prior.
    Full,
    /// Node component only; the network term and its parameters are removed.
    NodeOnly,
    /// Network component only; the node term and its parameters are removed.
    NetworkOnly,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::Full
    }
}

impl Ablation {
    pub fn has_node(self) -> bool {
        !matches!(self, Ablation::NetworkOnly)
    }
    pub fn has_network(self) -> bool {
        !matches!(self, Ablation::NodeOnly)
    }
    /// Both latent fields present: the cross-field correlation is sampled.
    pub fn coupled(self) -> bool {
        matches!(self, Ablation::Full)
    }
}

/// Model structure choices for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of sub-network factors R.
    pub rank: usize,
    pub kernel: KernelSpec,
    pub ablation: Ablation,
    /// Cross-field scale divisor; default max(10, ceil(1/d_min)).
    pub delta: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            rank: 2,
            kernel: KernelSpec::default(),
            ablation: Ablation::Full,
            delta: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ablation.has_network() && self.rank < 1 {
            return Err(Error::Config(
                "rank must be at least 1 unless the network component is ablated".into(),
            ));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return Err(Error::Config(format!("delta must be positive, got {d}")));
            }
        }
        Ok(())
    }

    /// Effective number of sub-network factors after ablation.
    pub fn effective_rank(&self) -> usize {
        if self.ablation.has_network() {
            self.rank
        } else {
            0
        }
    }
}

/// The full unknown-parameter set at one MCMC iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub eta: Vec<f64>,
    pub latent: LatentState,
    pub sigma_beta: f64,
    pub sigma_alpha: f64,
    pub sigma_theta: f64,
    pub sigma_eps: f64,
    /// Shared scale of the latent field prior.
    pub sigma: f64,
    pub rho: f64,
}

impl ParameterState {
    pub fn rank(&self) -> usize {
        self.latent.rank()
    }

    pub fn p(&self) -> usize {
        self.latent.gamma.len()
    }

    /// All variance components strictly positive, lambda within its support,
    /// rho inside the PD-feasible region.
    pub fn check_invariants(&self, lambda_max: f64, delta: f64, d_min: f64) -> Result<()> {
        for (name, v) in [
            ("sigma_beta", self.sigma_beta),
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_theta", self.sigma_theta),
            ("sigma_eps", self.sigma_eps),
            ("sigma", self.sigma),
        ] {
            if !(v > 0.0) {
                return Err(Error::Numerical(format!("{name} not positive: {v}")));
            }
        }
        if !(0.0..=lambda_max).contains(&self.latent.lambda) {
            return Err(Error::Numerical(format!(
                "lambda {} outside [0, {lambda_max}]",
                self.latent.lambda
            )));
        }
        if self.rho.abs() >= 1.0 || !crate::kernel::check_pd_constraint(self.rho, delta, d_min) {
            return Err(Error::Numerical(format!(
                "rho {} violates the PD constraint",
                self.rho
            )));
        }
        Ok(())
    }
}

/// Post-burn-in draws plus the per-iteration selection indicators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub p: usize,
    pub q: usize,
    pub rank: usize,
    pub n_iter: usize,
    pub n_burn: usize,
    pub seed: u64,
    pub chain_index: usize,
    pub ablation: Ablation,
    pub lambda_max: f64,
    pub states: Vec<ParameterState>,
    /// Per retained iteration: node indicator I(|gamma_p| > lambda), length P.
    pub node_ind: Vec<Vec<u8>>,
    /// Per retained iteration: joint sub-network membership indicator
    /// I(|theta_p| > lambda) I(|theta_r_p| > lambda), r-major, length R * P.
    pub net_ind: Vec<Vec<u8>>,
    pub accept_rho: f64,
    pub accept_lambda: f64,
}

impl PosteriorChain {
    pub fn retained(&self) -> usize {
        self.states.len()
    }
}

/// Run one chain. Fully deterministic given the seed: identical inputs
/// reproduce the chain bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn run_chain(
    data: &Dataset,
    prior: &PriorStructure,
    model: &ModelConfig,
    hyper: &HyperPriors,
    tuning: &MhTuning,
    n_iter: usize,
    n_burn: usize,
    seed: u64,
) -> Result<PosteriorChain> {
    run_chain_indexed(data, prior, model, hyper, tuning, n_iter, n_burn, seed, 0, seed)
}

#[allow(clippy::too_many_arguments)]
fn run_chain_indexed(
    data: &Dataset,
    prior: &PriorStructure,
    model: &ModelConfig,
    hyper: &HyperPriors,
    tuning: &MhTuning,
    n_iter: usize,
    n_burn: usize,
    stream_seed: u64,
    chain_index: usize,
    base_seed: u64,
) -> Result<PosteriorChain> {
    if n_burn > n_iter {
        return Err(Error::Config(format!(
            "n_burn ({n_burn}) exceeds n_iter ({n_iter})"
        )));
    }
    let mut sampler = GibbsSampler::new(data, prior, model, hyper, tuning, stream_seed, n_burn)?;
    let retained = n_iter - n_burn;
    let mut chain = PosteriorChain {
        p: data.p(),
        q: data.q(),
        rank: model.effective_rank(),
        n_iter,
        n_burn,
        seed: base_seed,
        chain_index,
        ablation: model.ablation,
        lambda_max: hyper.lambda_max,
        states: Vec::with_capacity(retained),
        node_ind: Vec::with_capacity(retained),
        net_ind: Vec::with_capacity(retained),
        accept_rho: 0.0,
        accept_lambda: 0.0,
    };
    for it in 0..n_iter {
        sampler.sweep()?;
        if it >= n_burn {
            chain.states.push(sampler.state().clone());
            chain.node_ind.push(sampler.node_indicators());
            chain.net_ind.push(sampler.net_indicators());
        }
    }
    let (acc_rho, acc_lambda) = sampler.post_burn_acceptance();
    chain.accept_rho = acc_rho;
    chain.accept_lambda = acc_lambda;
    Ok(chain)
}

/// Derive the RNG stream seed for chain `index` from the base seed.
pub fn chain_seed(base_seed: u64, index: usize) -> u64 {
    if index == 0 {
        base_seed
    } else {
        splitmix64(base_seed ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
    }
}

/// Run several independent chains over the shared data and prior. With the
/// `parallel` feature the chains fan out across the rayon pool; chain content
/// is identical either way because every chain owns its seeded RNG stream.
#[allow(clippy::too_many_arguments)]
pub fn run_chains(
    data: &Dataset,
    prior: &PriorStructure,
    model: &ModelConfig,
    hyper: &HyperPriors,
    tuning: &MhTuning,
    n_iter: usize,
    n_burn: usize,
    seed: u64,
    n_chains: usize,
) -> Result<Vec<PosteriorChain>> {
    if n_chains == 0 {
        return Err(Error::Config("at least one chain is required".into()));
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n_chains)
            .into_par_iter()
            .map(|k| {
                run_chain_indexed(
                    data,
                    prior,
                    model,
                    hyper,
                    tuning,
                    n_iter,
                    n_burn,
                    chain_seed(seed, k),
                    k,
                    seed,
                )
            })
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_chains_sequential(
            data, prior, model, hyper, tuning, n_iter, n_burn, seed, n_chains,
        )
    }
}

/// Sequential fallback with identical output; kept callable unconditionally
/// so benchmarks can compare the two paths.
#[allow(clippy::too_many_arguments)]
pub fn run_chains_sequential(
    data: &Dataset,
    prior: &PriorStructure,
    model: &ModelConfig,
    hyper: &HyperPriors,
    tuning: &MhTuning,
    n_iter: usize,
    n_burn: usize,
    seed: u64,
    n_chains: usize,
) -> Result<Vec<PosteriorChain>> {
    if n_chains == 0 {
        return Err(Error::Config("at least one chain is required".into()));
    }
    (0..n_chains)
        .map(|k| {
            run_chain_indexed(
                data,
                prior,
                model,
                hyper,
                tuning,
                n_iter,
                n_burn,
                chain_seed(seed, k),
                k,
                seed,
            )
        })
        .collect()
}
