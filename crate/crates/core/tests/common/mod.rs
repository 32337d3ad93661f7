//! Shared helpers for the behavioral and acceptance suites: random fixtures,
//! an independent grid-integration oracle for the scalar full conditionals,
//! and the joint-distribution (successive-conditional) validation harness.
//!
//! The oracle evaluates likelihood x prior from scratch on a grid - the
//! likelihood through `model_mean` on a modified state and the latent-field
//! prior through an explicitly assembled 2P x 2P covariance - so it shares
//! none of the sampler's cached-residual or eigen-space machinery.

#![allow(dead_code)]

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use jnnts_core::kernel::PriorStructure;
use jnnts_core::model::Dataset;
use jnnts_core::sampler::{
    draw_state_from_prior, model_mean, GibbsSampler, HyperPriors, MhTuning, ModelConfig,
    ParameterState,
};

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Random dataset with standard-normal features and connectivity and a
/// random outcome (used when the outcome is immediately replaced or when
/// only conditional shapes matter).
pub fn random_dataset(seed: u64, n: usize, p: usize, q: usize) -> Dataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let y: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
    let w_rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut row = vec![1.0];
            row.extend((1..q).map(|_| std_normal(&mut rng)));
            row
        })
        .collect();
    let x_rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| std_normal(&mut rng)).collect())
        .collect();
    let z_mats: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut m = vec![0.0; p * p];
            for a in 0..p {
                for b in (a + 1)..p {
                    let v = std_normal(&mut rng);
                    m[a * p + b] = v;
                    m[b * p + a] = v;
                }
            }
            m
        })
        .collect();
    let coords: Vec<[f64; 3]> = (0..p)
        .map(|_| {
            [
                rng.random_range(0.0..3.0),
                rng.random_range(0.0..3.0),
                rng.random_range(0.0..3.0),
            ]
        })
        .collect();
    Dataset::new(y, w_rows, x_rows, z_mats, Some(coords)).unwrap()
}

/// A dataset whose outcome is actually generated by a given state (plus
/// noise), so conditionals sit in a realistic regime.
pub fn dataset_from_state(
    seed: u64,
    n: usize,
    p: usize,
    q: usize,
    state: &ParameterState,
) -> Dataset {
    let base = random_dataset(seed, n, p, q);
    let mean = model_mean(&base, state).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xDEAD_BEEF);
    let y: Vec<f64> = mean
        .iter()
        .map(|m| m + state.sigma_eps.sqrt() * std_normal(&mut rng))
        .collect();
    let w_rows: Vec<Vec<f64>> = (0..n).map(|i| base.w_row(i)).collect();
    let x_rows: Vec<Vec<f64>> = (0..n).map(|i| base.x_row(i)).collect();
    let z_mats: Vec<Vec<f64>> = (0..n).map(|i| base.z_subject(i).to_vec()).collect();
    Dataset::new(y, w_rows, x_rows, z_mats, base.coords().map(|c| c.to_vec())).unwrap()
}

/// Which scalar conditional the oracle targets.
#[derive(Debug, Clone, Copy)]
pub enum Target {
    Gamma(usize),
    Theta(usize),
    ThetaR(usize, usize),
    AlphaTilde(usize, usize),
}

impl Target {
    pub fn get(&self, state: &ParameterState) -> f64 {
        match *self {
            Target::Gamma(j) => state.latent.gamma[j],
            Target::Theta(j) => state.latent.theta[j],
            Target::ThetaR(r, j) => state.latent.theta_r[r][j],
            Target::AlphaTilde(r, j) => state.latent.alpha_tilde[r][j],
        }
    }

    pub fn set(&self, state: &mut ParameterState, v: f64) {
        match *self {
            Target::Gamma(j) => state.latent.gamma[j] = v,
            Target::Theta(j) => state.latent.theta[j] = v,
            Target::ThetaR(r, j) => state.latent.theta_r[r][j] = v,
            Target::AlphaTilde(r, j) => state.latent.alpha_tilde[r][j] = v,
        }
    }
}

/// Numerically normalized CDF of a scalar full conditional on a grid.
pub struct GridOracle {
    pub xs: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl GridOracle {
    pub fn cdf_at(&self, x: f64) -> f64 {
        match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => self.cdf[i],
            Err(0) => 0.0,
            Err(i) if i >= self.xs.len() => 1.0,
            Err(i) => {
                let (x0, x1) = (self.xs[i - 1], self.xs[i]);
                let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
                c0 + (c1 - c0) * (x - x0) / (x1 - x0)
            }
        }
    }
}

// Log joint prior density of the latent fields (gamma, theta) under the
// explicitly assembled covariance [[s O, rc I], [rc I, s O]], rc = rho s/delta,
// dropping x-independent constants (the determinant).
fn joint_field_quadform(
    kernel: &[f64],
    p: usize,
    sigma: f64,
    rho: f64,
    delta: f64,
    gamma: &[f64],
    theta: &[f64],
) -> f64 {
    let dim = 2 * p;
    let rc = rho * sigma / delta;
    let cov = DMatrix::from_fn(dim, dim, |a, b| {
        let (fa, ia) = (a / p, a % p);
        let (fb, ib) = (b / p, b % p);
        if fa == fb {
            sigma * kernel[ia * p + ib]
        } else if ia == ib {
            rc
        } else {
            0.0
        }
    });
    let chol = Cholesky::new(cov).expect("joint prior covariance must be SPD");
    let mut z = DVector::zeros(dim);
    for j in 0..p {
        z[j] = gamma[j];
        z[p + j] = theta[j];
    }
    let solved = chol.solve(&z);
    -0.5 * z.dot(&solved)
}

/// Unnormalized log conditional density of `target` at value `x`, evaluated
/// from scratch.
pub fn log_conditional_density(
    data: &Dataset,
    kernel: &[f64],
    delta: f64,
    state: &ParameterState,
    target: Target,
    x: f64,
) -> f64 {
    let mut s = state.clone();
    target.set(&mut s, x);
    let mean = model_mean(data, &s).unwrap();
    let mut ll = 0.0;
    for (yi, mi) in data.y().iter().zip(&mean) {
        let r = yi - mi;
        ll -= r * r / (2.0 * s.sigma_eps);
    }
    let p = data.p();
    let prior = match target {
        Target::Gamma(j) => {
            let b = s.latent.beta_tilde[j];
            let coupling = -(b - x) * (b - x) / (2.0 * s.sigma_beta);
            coupling
                + joint_field_quadform(
                    kernel,
                    p,
                    s.sigma,
                    s.rho,
                    delta,
                    &s.latent.gamma,
                    &s.latent.theta,
                )
        }
        Target::Theta(j) => {
            let mut acc = 0.0;
            for al in &s.latent.alpha_tilde {
                acc -= (al[j] - x) * (al[j] - x) / (2.0 * s.sigma_alpha);
            }
            for tr in &s.latent.theta_r {
                acc -= (tr[j] - x) * (tr[j] - x) / (2.0 * s.sigma_theta);
            }
            acc + joint_field_quadform(
                kernel,
                p,
                s.sigma,
                s.rho,
                delta,
                &s.latent.gamma,
                &s.latent.theta,
            )
        }
        Target::ThetaR(_, j) => {
            let t = s.latent.theta[j];
            -(x - t) * (x - t) / (2.0 * s.sigma_theta)
        }
        Target::AlphaTilde(_, j) => {
            let t = s.latent.theta[j];
            -(x - t) * (x - t) / (2.0 * s.sigma_alpha)
        }
    };
    ll + prior
}

/// Build the oracle CDF: coarse scan to locate the mass, then a fine
/// composite-trapezoid integration on segments split exactly at the
/// threshold discontinuities.
pub fn grid_oracle(
    data: &Dataset,
    kernel: &[f64],
    delta: f64,
    state: &ParameterState,
    target: Target,
) -> GridOracle {
    let lambda = state.latent.lambda;
    let scale = (state.sigma_beta + state.sigma_alpha + state.sigma_theta + state.sigma)
        .sqrt()
        .max(1.0);
    let center = target.get(state);
    let wide = 25.0 * scale + lambda + 5.0 + center.abs();
    let coarse_n = 1024;
    let mut coarse = Vec::with_capacity(coarse_n + 1);
    let lo_w = center - wide;
    let hi_w = center + wide;
    for k in 0..=coarse_n {
        let x = lo_w + (hi_w - lo_w) * k as f64 / coarse_n as f64;
        coarse.push((x, log_conditional_density(data, kernel, delta, state, target, x)));
    }
    let ld_max = coarse
        .iter()
        .map(|(_, ld)| *ld)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (x, ld) in &coarse {
        if *ld > ld_max - 46.0 {
            lo = lo.min(*x);
            hi = hi.max(*x);
        }
    }
    let pad = (hi_w - lo_w) / coarse_n as f64 * 2.0;
    lo -= pad;
    hi += pad;

    // Segment boundaries at the indicator discontinuities.
    let mut bounds = vec![lo];
    for b in [-lambda, lambda] {
        if b > lo && b < hi {
            bounds.push(b);
        }
    }
    bounds.push(hi);
    bounds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bounds.dedup();

    let mut xs = Vec::new();
    let mut lds = Vec::new();
    let per_segment = 3000usize;
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        for k in 0..=per_segment {
            let x = a + (b - a) * k as f64 / per_segment as f64;
            xs.push(x);
            lds.push(log_conditional_density(data, kernel, delta, state, target, x));
        }
    }
    let m = lds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = lds.iter().map(|ld| (ld - m).exp()).collect();
    let mut cdf = vec![0.0; xs.len()];
    let mut acc = 0.0;
    for i in 1..xs.len() {
        let dx = xs[i] - xs[i - 1];
        if dx > 0.0 {
            acc += 0.5 * (dens[i] + dens[i - 1]) * dx;
        }
        cdf[i] = acc;
    }
    let total = acc;
    for c in cdf.iter_mut() {
        *c /= total;
    }
    GridOracle { xs, cdf }
}

/// Kolmogorov-Smirnov distance between draws and the oracle CDF.
pub fn ks_distance(draws: &mut [f64], oracle: &GridOracle) -> f64 {
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = draws.len() as f64;
    let mut d: f64 = 0.0;
    for (k, x) in draws.iter().enumerate() {
        let f = oracle.cdf_at(*x);
        d = d.max((f - k as f64 / n).abs());
        d = d.max((f - (k as f64 + 1.0) / n).abs());
    }
    d
}

/// Draw `n` values of `target` through the sampler's own update at a frozen
/// conditioning state.
pub fn sample_conditional(
    sampler: &mut GibbsSampler,
    target: Target,
    n: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        match target {
            Target::Gamma(j) => sampler.update_gamma_element(j),
            Target::Theta(j) => sampler.update_theta_element(j),
            Target::ThetaR(r, j) => sampler.update_theta_r_element(r, j),
            Target::AlphaTilde(r, j) => sampler.update_alpha_tilde_element(r, j),
        }
        out.push(target.get(sampler.state()));
    }
    out
}

/// Settings for the joint-distribution (successive-conditional) check.
/// The total successive-conditional cycle budget is spread over independent
/// chains, each initialized from an exact prior draw (hence already
/// stationary): per-chain averages are i.i.d., which keeps the z-scores
/// honestly calibrated even though the threshold gates make any single
/// chain mix very slowly.
pub struct JointCheck {
    pub p: usize,
    pub n: usize,
    pub rank: usize,
    pub n_chains: usize,
    pub cycles_per_chain: usize,
    pub prior_draws: usize,
    pub seed: u64,
}

/// Scalar statistics monitored by the joint-distribution check.
fn joint_stats(state: &ParameterState) -> Vec<(&'static str, f64)> {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    let cross = state
        .latent
        .gamma
        .iter()
        .zip(&state.latent.theta)
        .map(|(g, t)| g * t)
        .sum::<f64>()
        / state.latent.gamma.len() as f64;
    vec![
        ("mean_gamma", mean(&state.latent.gamma)),
        ("mean_gamma_sq", mean_sq(&state.latent.gamma)),
        ("mean_theta", mean(&state.latent.theta)),
        ("mean_theta_sq", mean_sq(&state.latent.theta)),
        ("mean_gamma_theta", cross),
        ("rho_times_cross", state.rho * cross),
        ("mean_beta_tilde", mean(&state.latent.beta_tilde)),
        ("mean_alpha_tilde", mean(&state.latent.alpha_tilde[0])),
        ("mean_theta_r", mean(&state.latent.theta_r[0])),
        ("lambda", state.latent.lambda),
        ("lambda_sq", state.latent.lambda * state.latent.lambda),
        ("rho", state.rho),
        ("rho_sq", state.rho * state.rho),
        ("sigma_beta", state.sigma_beta),
        ("sigma_alpha", state.sigma_alpha),
        ("sigma_theta", state.sigma_theta),
        ("sigma_eps", state.sigma_eps),
        ("sigma", state.sigma),
    ]
}

/// Run the marginal-conditional vs successive-conditional comparison and
/// return per-statistic z-scores. IG(3,3) hyper-priors keep every monitored
/// statistic square-integrable.
pub fn run_joint_distribution_check(cfg: &JointCheck) -> Vec<(String, f64)> {
    let hyper = HyperPriors::with_ig(3.0, 3.0);
    let model = ModelConfig {
        rank: cfg.rank,
        kernel: jnnts_core::kernel::KernelSpec::MarginalIdentity,
        ablation: jnnts_core::sampler::Ablation::Full,
        delta: None,
    };
    let tuning = MhTuning {
        step_rho: 0.3,
        step_lambda: 0.3,
        adapt: false,
        adapt_window: 50,
        target_accept: 0.234,
    };
    let data = random_dataset(cfg.seed, cfg.n, cfg.p, 1);
    let prior = PriorStructure::build(data.coords(), cfg.p, &model.kernel, model.delta).unwrap();

    // Marginal-conditional side: i.i.d. prior draws.
    let mut rng_mc = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x1111);
    let first = draw_state_from_prior(cfg.p, 1, &prior, &model, &hyper, &mut rng_mc);
    let st0 = joint_stats(&first);
    let names: Vec<String> = st0.iter().map(|(n, _)| n.to_string()).collect();
    let mut mc: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.prior_draws); st0.len()];
    for (k, (_, v)) in st0.iter().enumerate() {
        mc[k].push(*v);
    }
    for _ in 1..cfg.prior_draws {
        let s = draw_state_from_prior(cfg.p, 1, &prior, &model, &hyper, &mut rng_mc);
        for (k, (_, v)) in joint_stats(&s).iter().enumerate() {
            mc[k].push(*v);
        }
    }

    // Successive-conditional side: independent chains of (sweep, resimulate
    // the outcome) cycles, each started at a fresh prior draw.
    let resim = |sampler: &mut GibbsSampler, rng: &mut ChaCha12Rng| {
        let mean = model_mean(&data, sampler.state()).unwrap();
        let sd = sampler.state().sigma_eps.sqrt();
        let y: Vec<f64> = mean.iter().map(|m| m + sd * std_normal(rng)).collect();
        sampler.set_outcome(&y).unwrap();
    };
    let mut chain_means: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n_chains); names.len()];
    for c in 0..cfg.n_chains {
        let cseed = jnnts_core::math::splitmix64(cfg.seed ^ ((c as u64 + 1) << 20));
        let mut sampler =
            GibbsSampler::new(&data, &prior, &model, &hyper, &tuning, cseed, 0).unwrap();
        let mut rng_sc = ChaCha12Rng::seed_from_u64(cseed ^ 0x2222);
        let init = draw_state_from_prior(cfg.p, 1, &prior, &model, &hyper, &mut rng_sc);
        sampler.set_state(init).unwrap();
        resim(&mut sampler, &mut rng_sc);
        let mut acc = vec![0.0; names.len()];
        for _ in 0..cfg.cycles_per_chain {
            sampler.sweep().unwrap();
            resim(&mut sampler, &mut rng_sc);
            for (k, (_, v)) in joint_stats(sampler.state()).iter().enumerate() {
                acc[k] += v;
            }
        }
        for k in 0..names.len() {
            chain_means[k].push(acc[k] / cfg.cycles_per_chain as f64);
        }
    }

    // z-scores: i.i.d. prior draws vs i.i.d. per-chain averages.
    let mut out = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let m_mc = jnnts_core::math::mean(&mc[k]);
        let se2_mc = jnnts_core::math::sample_variance(&mc[k]) / mc[k].len() as f64;
        let m_sc = jnnts_core::math::mean(&chain_means[k]);
        let se2_sc =
            jnnts_core::math::sample_variance(&chain_means[k]) / chain_means[k].len() as f64;
        let z = (m_sc - m_mc) / (se2_mc + se2_sc).sqrt();
        out.push((name.clone(), z));
    }
    out
}
