//! The Gibbs/MH engine for one chain.
//!
//! The full residual vector xi = y - W eta - X Delta(gamma) beta_tilde -
//! sum_r quad_r is cached and rank-one updated after every element draw, with
//! a full recomputation every 100 sweeps to cap drift. The eigen-space
//! transforms U gamma and U theta are maintained the same way, so each
//! element conditional costs O(N + P).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel::{check_pd_constraint, PriorStructure};
use crate::math::{ln_norm_cdf, ln_norm_mass, sample_categorical_log, sample_trunc_normal};
use crate::model::{effective_coefficients, predict, CoefficientSet, Dataset, LatentState};

use super::{Ablation, HyperPriors, MhTuning, ModelConfig, ParameterState};

/// Mean of the outcome model at a parameter state (thresholds applied).
pub fn model_mean(data: &Dataset, state: &ParameterState) -> Result<Vec<f64>> {
    let (beta, alphas) = effective_coefficients(&state.latent);
    let coeffs = CoefficientSet {
        eta: state.eta.clone(),
        beta,
        alphas,
    };
    predict(data, &coeffs)
}

fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn sample_inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate)
        .expect("inverse-gamma parameters must be positive")
        .sample(rng);
    (1.0 / g).clamp(1e-100, 1e100)
}

/// Deterministic initial state: standard normal element draws, unit
/// variances, rho = 0, lambda = lambda_max / 2.
pub fn random_init_state<R: Rng + ?Sized>(
    p: usize,
    q: usize,
    model: &ModelConfig,
    hyper: &HyperPriors,
    rng: &mut R,
) -> ParameterState {
    let rank = model.effective_rank();
    let has_node = model.ablation.has_node();
    let mut vecn = |len: usize| -> Vec<f64> { (0..len).map(|_| sample_std_normal(rng)).collect() };
    let eta = vecn(q);
    let (beta_tilde, gamma) = if has_node {
        (vecn(p), vecn(p))
    } else {
        (vec![0.0; p], vec![0.0; p])
    };
    let theta = if rank > 0 { vecn(p) } else { vec![0.0; p] };
    let theta_r: Vec<Vec<f64>> = (0..rank).map(|_| vecn(p)).collect();
    let alpha_tilde: Vec<Vec<f64>> = (0..rank).map(|_| vecn(p)).collect();
    ParameterState {
        eta,
        latent: LatentState {
            beta_tilde,
            alpha_tilde,
            gamma,
            theta,
            theta_r,
            lambda: hyper.lambda_max / 2.0,
        },
        sigma_beta: 1.0,
        sigma_alpha: 1.0,
        sigma_theta: 1.0,
        sigma_eps: 1.0,
        sigma: 1.0,
        rho: 0.0,
    }
}

/// Draw a full parameter state from the prior (used by joint-distribution
/// validation). The latent fields are drawn in eigen coordinates where the
/// joint covariance decouples into independent 2x2 blocks.
pub fn draw_state_from_prior<R: Rng + ?Sized>(
    p: usize,
    q: usize,
    prior: &PriorStructure,
    model: &ModelConfig,
    hyper: &HyperPriors,
    rng: &mut R,
) -> ParameterState {
    let rank = model.effective_rank();
    let has_node = model.ablation.has_node();
    let sigma_beta = sample_inv_gamma(rng, hyper.a_beta, hyper.b_beta);
    let sigma_alpha = sample_inv_gamma(rng, hyper.a_alpha, hyper.b_alpha);
    let sigma_theta = sample_inv_gamma(rng, hyper.a_theta, hyper.b_theta);
    let sigma_eps = sample_inv_gamma(rng, hyper.a_eps, hyper.b_eps);
    let sigma = sample_inv_gamma(rng, hyper.a_sigma, hyper.b_sigma);
    let delta = prior.delta();
    let rho = if model.ablation.coupled() {
        loop {
            let r: f64 = rng.random_range(-1.0..1.0);
            if check_pd_constraint(r, delta, prior.d_min()) {
                break r;
            }
        }
    } else {
        0.0
    };
    let lambda = rng.random_range(0.0..hyper.lambda_max);

    let d = prior.eigenvalues();
    let mut t_gamma = vec![0.0; p];
    let mut t_theta = vec![0.0; p];
    for k in 0..p {
        let var = sigma * d[k];
        let cov = rho * sigma / delta;
        let z1 = sample_std_normal(rng);
        let z2 = sample_std_normal(rng);
        t_gamma[k] = var.sqrt() * z1;
        let cond_var = (var - cov * cov / var).max(0.0);
        t_theta[k] = (cov / var) * t_gamma[k] + cond_var.sqrt() * z2;
    }
    let gamma = if has_node {
        prior.from_eigen(&t_gamma)
    } else {
        vec![0.0; p]
    };
    let theta = if rank > 0 {
        prior.from_eigen(&t_theta)
    } else {
        vec![0.0; p]
    };

    let beta_tilde: Vec<f64> = if has_node {
        gamma
            .iter()
            .map(|g| g + sigma_beta.sqrt() * sample_std_normal(rng))
            .collect()
    } else {
        vec![0.0; p]
    };
    let theta_r: Vec<Vec<f64>> = (0..rank)
        .map(|_| {
            theta
                .iter()
                .map(|t| t + sigma_theta.sqrt() * sample_std_normal(rng))
                .collect()
        })
        .collect();
    let alpha_tilde: Vec<Vec<f64>> = (0..rank)
        .map(|_| {
            theta
                .iter()
                .map(|t| t + sigma_alpha.sqrt() * sample_std_normal(rng))
                .collect()
        })
        .collect();
    let eta: Vec<f64> = (0..q)
        .map(|_| hyper.sigma_eta.sqrt() * sample_std_normal(rng))
        .collect();
    ParameterState {
        eta,
        latent: LatentState {
            beta_tilde,
            alpha_tilde,
            gamma,
            theta,
            theta_r,
            lambda,
        },
        sigma_beta,
        sigma_alpha,
        sigma_theta,
        sigma_eps,
        sigma,
        rho,
    }
}

#[derive(Default)]
struct AcceptCounters {
    rho_acc: usize,
    rho_prop: usize,
    lam_acc: usize,
    lam_prop: usize,
}

pub struct GibbsSampler<'d> {
    data: &'d Dataset,
    prior: &'d PriorStructure,
    hyper: HyperPriors,
    tuning: MhTuning,
    ablation: Ablation,
    rank: usize,
    n_burn: usize,
    rng: ChaCha12Rng,
    state: ParameterState,
    /// Local copy of the outcome; replaceable for joint-distribution tests.
    y: Vec<f64>,
    /// Cached full residual xi.
    resid: Vec<f64>,
    node_mask: Vec<bool>,
    theta_ind: Vec<bool>,
    theta_r_ind: Vec<Vec<bool>>,
    /// masked_alpha[r][j] = mask_rj * alpha_tilde_rj.
    masked_alpha: Vec<Vec<f64>>,
    /// Eigen-space field transforms U gamma, U theta.
    t_gamma: Vec<f64>,
    t_theta: Vec<f64>,
    /// 1 / (d_k^2 - rho^2/delta^2).
    delta_rho: Vec<f64>,
    /// q_p = u_p' DeltaRho diag(d) u_p.
    q_diag: Vec<f64>,
    xtx: Vec<f64>,
    wtw: Vec<f64>,
    x_colsq: Vec<f64>,
    sweeps: usize,
    step_rho: f64,
    step_lambda: f64,
    win: AcceptCounters,
    post: AcceptCounters,
    buf_a: Vec<f64>,
    buf_b: Vec<f64>,
}

impl<'d> GibbsSampler<'d> {
    pub fn new(
        data: &'d Dataset,
        prior: &'d PriorStructure,
        model: &ModelConfig,
        hyper: &HyperPriors,
        tuning: &MhTuning,
        seed: u64,
        n_burn: usize,
    ) -> Result<Self> {
        model.validate()?;
        hyper.validate()?;
        tuning.validate()?;
        if prior.p() != data.p() {
            return Err(Error::Config(format!(
                "prior structure built for {} nodes, data has {}",
                prior.p(),
                data.p()
            )));
        }
        let (n, p, q) = (data.n(), data.p(), data.q());
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let state = random_init_state(p, q, model, hyper, &mut rng);

        let mut xtx = vec![0.0; p * p];
        for a in 0..p {
            let ca = data.x_col(a);
            for b in a..p {
                let cb = data.x_col(b);
                let v: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
                xtx[a * p + b] = v;
                xtx[b * p + a] = v;
            }
        }
        let mut wtw = vec![0.0; q * q];
        for a in 0..q {
            let ca = data.w_col(a);
            for b in a..q {
                let cb = data.w_col(b);
                let v: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
                wtw[a * q + b] = v;
                wtw[b * q + a] = v;
            }
        }
        let x_colsq: Vec<f64> = (0..p).map(|j| xtx[j * p + j]).collect();

        let rank = model.effective_rank();
        let mut s = GibbsSampler {
            data,
            prior,
            hyper: hyper.clone(),
            tuning: tuning.clone(),
            ablation: model.ablation,
            rank,
            n_burn,
            rng,
            state,
            y: data.y().to_vec(),
            resid: vec![0.0; n],
            node_mask: vec![false; p],
            theta_ind: vec![false; p],
            theta_r_ind: vec![vec![false; p]; rank],
            masked_alpha: vec![vec![0.0; p]; rank],
            t_gamma: vec![0.0; p],
            t_theta: vec![0.0; p],
            delta_rho: vec![0.0; p],
            q_diag: vec![0.0; p],
            xtx,
            wtw,
            x_colsq,
            sweeps: 0,
            step_rho: tuning.step_rho,
            step_lambda: tuning.step_lambda,
            win: AcceptCounters::default(),
            post: AcceptCounters::default(),
            buf_a: vec![0.0; n],
            buf_b: vec![0.0; n],
        };
        s.rebuild_caches();
        Ok(s)
    }

    pub fn state(&self) -> &ParameterState {
        &self.state
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Replace the parameter state (caches are rebuilt).
    pub fn set_state(&mut self, state: ParameterState) -> Result<()> {
        if state.p() != self.data.p()
            || state.eta.len() != self.data.q()
            || state.rank() != self.rank
        {
            return Err(Error::Config("state dimensions do not match sampler".into()));
        }
        self.state = state;
        self.rebuild_caches();
        Ok(())
    }

    /// Replace the outcome vector (dimensions must match).
    pub fn set_outcome(&mut self, y: &[f64]) -> Result<()> {
        if y.len() != self.data.n() {
            return Err(Error::Config("outcome length mismatch".into()));
        }
        self.y.copy_from_slice(y);
        self.recompute_resid();
        Ok(())
    }

    /// Node selection indicators at the current state.
    pub fn node_indicators(&self) -> Vec<u8> {
        self.node_mask.iter().map(|&m| u8::from(m)).collect()
    }

    /// Joint sub-network membership indicators, r-major (length R * P).
    pub fn net_indicators(&self) -> Vec<u8> {
        let p = self.data.p();
        let mut out = Vec::with_capacity(self.rank * p);
        for r in 0..self.rank {
            for j in 0..p {
                out.push(u8::from(self.theta_ind[j] && self.theta_r_ind[r][j]));
            }
        }
        out
    }

    /// Post-burn-in MH acceptance fractions (rho, lambda).
    pub fn post_burn_acceptance(&self) -> (f64, f64) {
        let frac = |acc: usize, prop: usize| {
            if prop == 0 {
                0.0
            } else {
                acc as f64 / prop as f64
            }
        };
        (
            frac(self.post.rho_acc, self.post.rho_prop),
            frac(self.post.lam_acc, self.post.lam_prop),
        )
    }

    fn net_mask(&self, r: usize, j: usize) -> bool {
        self.theta_ind[j] && self.theta_r_ind[r][j]
    }

    /// Rebuild every cache from the current state.
    pub fn rebuild_caches(&mut self) {
        let p = self.data.p();
        let lambda = self.state.latent.lambda;
        for j in 0..p {
            self.node_mask[j] =
                self.ablation.has_node() && self.state.latent.gamma[j].abs() > lambda;
            self.theta_ind[j] = self.rank > 0 && self.state.latent.theta[j].abs() > lambda;
        }
        for r in 0..self.rank {
            for j in 0..p {
                self.theta_r_ind[r][j] = self.state.latent.theta_r[r][j].abs() > lambda;
                self.masked_alpha[r][j] = if self.theta_ind[j] && self.theta_r_ind[r][j] {
                    self.state.latent.alpha_tilde[r][j]
                } else {
                    0.0
                };
            }
        }
        self.t_gamma = self.prior.to_eigen(&self.state.latent.gamma);
        self.t_theta = self.prior.to_eigen(&self.state.latent.theta);
        self.refresh_rho_caches();
        self.recompute_resid();
    }

    fn refresh_rho_caches(&mut self) {
        let p = self.data.p();
        let d = self.prior.eigenvalues();
        let rr = self.state.rho * self.state.rho / (self.prior.delta() * self.prior.delta());
        for k in 0..p {
            self.delta_rho[k] = 1.0 / (d[k] * d[k] - rr);
        }
        for j in 0..p {
            let mut acc = 0.0;
            for k in 0..p {
                let u = self.prior.eigen_row(k)[j];
                acc += u * u * self.delta_rho[k] * d[k];
            }
            self.q_diag[j] = acc;
        }
    }

    fn recompute_resid(&mut self) {
        let n = self.data.n();
        self.resid.copy_from_slice(&self.y);
        for k in 0..self.data.q() {
            let col = self.data.w_col(k);
            let e = self.state.eta[k];
            for i in 0..n {
                self.resid[i] -= e * col[i];
            }
        }
        for j in 0..self.data.p() {
            if self.node_mask[j] {
                let b = self.state.latent.beta_tilde[j];
                let col = self.data.x_col(j);
                for i in 0..n {
                    self.resid[i] -= b * col[i];
                }
            }
        }
        for r in 0..self.rank {
            for i in 0..n {
                self.resid[i] -= quad_form(self.data, i, &self.masked_alpha[r]);
            }
        }
    }

    /// One full sweep in the fixed order: eta, beta_tilde, alpha_tilde
    /// elements, theta_r elements, gamma elements, theta elements, variance
    /// components, sigma, rho, lambda.
    pub fn sweep(&mut self) -> Result<()> {
        self.sweeps += 1;
        if self.sweeps % 100 == 0 {
            self.rebuild_caches();
        }
        self.update_eta()?;
        if self.ablation.has_node() {
            self.update_beta_tilde()?;
        }
        for r in 0..self.rank {
            for j in 0..self.data.p() {
                self.update_alpha_tilde_element(r, j);
            }
        }
        for r in 0..self.rank {
            for j in 0..self.data.p() {
                self.update_theta_r_element(r, j);
            }
        }
        if self.ablation.has_node() {
            for j in 0..self.data.p() {
                self.update_gamma_element(j);
            }
        }
        if self.rank > 0 {
            for j in 0..self.data.p() {
                self.update_theta_element(j);
            }
        }
        self.update_variances();
        if self.ablation.coupled() {
            self.mh_update_rho();
        }
        self.mh_update_lambda();
        self.maybe_adapt();
        Ok(())
    }

    fn maybe_adapt(&mut self) {
        if !self.tuning.adapt || self.sweeps > self.n_burn {
            return;
        }
        if self.sweeps % self.tuning.adapt_window != 0 {
            return;
        }
        let target = self.tuning.target_accept;
        if self.win.rho_prop > 0 {
            let rate = self.win.rho_acc as f64 / self.win.rho_prop as f64;
            self.step_rho = (self.step_rho * (rate - target).exp()).clamp(1e-4, 10.0);
        }
        if self.win.lam_prop > 0 {
            let rate = self.win.lam_acc as f64 / self.win.lam_prop as f64;
            self.step_lambda = (self.step_lambda * (rate - target).exp()).clamp(1e-4, 10.0);
        }
        self.win = AcceptCounters::default();
    }

    /// Conjugate draw of eta from N(mu_eta, Sigma_eta).
    pub fn update_eta(&mut self) -> Result<()> {
        let n = self.data.n();
        let q = self.data.q();
        let mut r_full = std::mem::take(&mut self.buf_a);
        r_full.copy_from_slice(&self.resid);
        for k in 0..q {
            let col = self.data.w_col(k);
            let e = self.state.eta[k];
            for i in 0..n {
                r_full[i] += e * col[i];
            }
        }
        let se = self.state.sigma_eps;
        let prec = DMatrix::from_fn(q, q, |a, b| {
            self.wtw[a * q + b] / se + if a == b { 1.0 / self.hyper.sigma_eta } else { 0.0 }
        });
        let lin = DVector::from_fn(q, |k, _| {
            let col = self.data.w_col(k);
            col.iter().zip(&r_full).map(|(w, r)| w * r).sum::<f64>() / se
        });
        let eta_new = self.sample_mvn_from_precision(prec, lin)?;
        for k in 0..q {
            let col = self.data.w_col(k);
            let e = eta_new[k];
            for i in 0..n {
                r_full[i] -= e * col[i];
            }
        }
        self.resid.copy_from_slice(&r_full);
        self.buf_a = r_full;
        self.state.eta = eta_new;
        Ok(())
    }

    /// Joint conjugate draw of beta_tilde (prior mean gamma; masked
    /// coordinates fall back to the prior automatically).
    pub fn update_beta_tilde(&mut self) -> Result<()> {
        let n = self.data.n();
        let p = self.data.p();
        let mut r_node = std::mem::take(&mut self.buf_a);
        r_node.copy_from_slice(&self.resid);
        for j in 0..p {
            if self.node_mask[j] {
                let b = self.state.latent.beta_tilde[j];
                let col = self.data.x_col(j);
                for i in 0..n {
                    r_node[i] += b * col[i];
                }
            }
        }
        let se = self.state.sigma_eps;
        let sb = self.state.sigma_beta;
        let prec = DMatrix::from_fn(p, p, |a, b| {
            let m = if self.node_mask[a] && self.node_mask[b] {
                self.xtx[a * p + b] / se
            } else {
                0.0
            };
            m + if a == b { 1.0 / sb } else { 0.0 }
        });
        let lin = DVector::from_fn(p, |j, _| {
            let data_part = if self.node_mask[j] {
                let col = self.data.x_col(j);
                col.iter().zip(&r_node).map(|(x, r)| x * r).sum::<f64>() / se
            } else {
                0.0
            };
            data_part + self.state.latent.gamma[j] / sb
        });
        let beta_new = self.sample_mvn_from_precision(prec, lin)?;
        for j in 0..p {
            if self.node_mask[j] {
                let b = beta_new[j];
                let col = self.data.x_col(j);
                for i in 0..n {
                    r_node[i] -= b * col[i];
                }
            }
        }
        self.resid.copy_from_slice(&r_node);
        self.buf_a = r_node;
        self.state.latent.beta_tilde = beta_new;
        Ok(())
    }

    fn sample_mvn_from_precision(
        &mut self,
        prec: DMatrix<f64>,
        lin: DVector<f64>,
    ) -> Result<Vec<f64>> {
        let dim = lin.len();
        let chol = Cholesky::new(prec).ok_or_else(|| {
            Error::Numerical("conjugate precision matrix is not positive definite".into())
        })?;
        let mu = chol.solve(&lin);
        let z = DVector::from_fn(dim, |_, _| sample_std_normal(&mut self.rng));
        let x = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        Ok((mu + x).iter().copied().collect())
    }

    /// Per-element draw of alpha_tilde[r][j]: conjugate normal when the
    /// element is active, prior N(theta_j, sigma_alpha) otherwise.
    pub fn update_alpha_tilde_element(&mut self, r: usize, j: usize) {
        let theta_j = self.state.latent.theta[j];
        let sa = self.state.sigma_alpha;
        if !self.net_mask(r, j) {
            self.state.latent.alpha_tilde[r][j] =
                theta_j + sa.sqrt() * sample_std_normal(&mut self.rng);
            return;
        }
        let n = self.data.n();
        let mut h = std::mem::take(&mut self.buf_a);
        fill_net_h(self.data, &self.masked_alpha[r], j, &mut h);
        let alpha_old = self.state.latent.alpha_tilde[r][j];
        let se = self.state.sigma_eps;
        let mut s_hh = 0.0;
        let mut s_xh = 0.0;
        for i in 0..n {
            let hi = h[i];
            s_hh += hi * hi;
            // xi_{i,r,j} = resid_i + 2 alpha_old h_i (the element is active).
            s_xh += (self.resid[i] + 2.0 * alpha_old * hi) * hi;
        }
        let var = 1.0 / (1.0 / sa + 4.0 / se * s_hh);
        let mean = var * (theta_j / sa + 2.0 / se * s_xh);
        let alpha_new = mean + var.sqrt() * sample_std_normal(&mut self.rng);
        for i in 0..n {
            self.resid[i] += 2.0 * (alpha_old - alpha_new) * h[i];
        }
        self.buf_a = h;
        self.state.latent.alpha_tilde[r][j] = alpha_new;
        self.masked_alpha[r][j] = alpha_new;
    }

    /// Per-element draw of theta_r[r][j]: three-component truncated-normal
    /// mixture when the global gate is open, prior draw otherwise.
    pub fn update_theta_r_element(&mut self, r: usize, j: usize) {
        let theta_j = self.state.latent.theta[j];
        let st = self.state.sigma_theta;
        let lambda = self.state.latent.lambda;
        if !self.theta_ind[j] {
            let v = theta_j + st.sqrt() * sample_std_normal(&mut self.rng);
            self.state.latent.theta_r[r][j] = v;
            self.theta_r_ind[r][j] = v.abs() > lambda;
            // Joint mask stays closed, masked_alpha[r][j] stays 0.
            return;
        }
        let n = self.data.n();
        let mut h = std::mem::take(&mut self.buf_a);
        fill_net_h(self.data, &self.masked_alpha[r], j, &mut h);
        let alpha_j = self.state.latent.alpha_tilde[r][j];
        let active_old = self.theta_r_ind[r][j];
        let se = self.state.sigma_eps;
        let mut s_hh = 0.0;
        let mut s_xh = 0.0;
        for i in 0..n {
            let hi = h[i];
            s_hh += hi * hi;
            let xi = self.resid[i] + if active_old { 2.0 * alpha_j * hi } else { 0.0 };
            s_xh += xi * hi;
        }
        // Log-likelihood(active) - log-likelihood(inactive).
        let llr_active = (4.0 * alpha_j * s_xh - 4.0 * alpha_j * alpha_j * s_hh) / (2.0 * se);
        let sd = st.sqrt();
        let (value, active_new) =
            self.draw_threshold_mixture(theta_j, sd, lambda, llr_active);
        for i in 0..n {
            let xi = self.resid[i] + if active_old { 2.0 * alpha_j * h[i] } else { 0.0 };
            self.resid[i] = xi - if active_new { 2.0 * alpha_j * h[i] } else { 0.0 };
        }
        self.buf_a = h;
        self.state.latent.theta_r[r][j] = value;
        self.theta_r_ind[r][j] = active_new;
        self.masked_alpha[r][j] = if active_new { alpha_j } else { 0.0 };
    }

    // Prior-conditional (variance, mean) of gamma_j given the other latent
    // field values, before the likelihood enters through the mixture weights.
    fn gamma_conditional(&self, j: usize) -> (f64, f64) {
        let sb = self.state.sigma_beta;
        let sg = self.state.sigma;
        let rho_over_delta = self.state.rho / self.prior.delta();
        let d = self.prior.eigenvalues();
        let gamma_j = self.state.latent.gamma[j];
        let mut cross = 0.0;
        for k in 0..self.data.p() {
            let u = self.prior.eigen_row(k)[j];
            cross += u
                * self.delta_rho[k]
                * (rho_over_delta * self.t_theta[k] - d[k] * (self.t_gamma[k] - gamma_j * u));
        }
        let prec = 1.0 / sb + self.q_diag[j] / sg;
        let var = 1.0 / prec;
        let mean = var * (self.state.latent.beta_tilde[j] / sb + cross / sg);
        (var, mean)
    }

    /// Per-element mixed truncated-normal draw of gamma_j.
    pub fn update_gamma_element(&mut self, j: usize) {
        let n = self.data.n();
        let lambda = self.state.latent.lambda;
        let (var, mean) = self.gamma_conditional(j);
        let beta_j = self.state.latent.beta_tilde[j];
        let col = self.data.x_col(j);
        let active_old = self.node_mask[j];
        let se = self.state.sigma_eps;
        let s_xx = self.x_colsq[j];
        let mut s_rx = 0.0;
        for i in 0..n {
            let xi = self.resid[i] + if active_old { beta_j * col[i] } else { 0.0 };
            s_rx += xi * col[i];
        }
        let llr_active = (2.0 * beta_j * s_rx - beta_j * beta_j * s_xx) / (2.0 * se);
        let (value, active_new) =
            self.draw_threshold_mixture(mean, var.sqrt(), lambda, llr_active);
        for i in 0..n {
            let xi = self.resid[i] + if active_old { beta_j * col[i] } else { 0.0 };
            self.resid[i] = xi - if active_new { beta_j * col[i] } else { 0.0 };
        }
        let gamma_old = self.state.latent.gamma[j];
        for k in 0..self.data.p() {
            self.t_gamma[k] += (value - gamma_old) * self.prior.eigen_row(k)[j];
        }
        self.state.latent.gamma[j] = value;
        self.node_mask[j] = active_new;
    }

    // Prior-conditional (variance, mean) of theta_j.
    fn theta_conditional(&self, j: usize) -> (f64, f64) {
        let sa = self.state.sigma_alpha;
        let st = self.state.sigma_theta;
        let sg = self.state.sigma;
        let r = self.rank as f64;
        let rho_over_delta = self.state.rho / self.prior.delta();
        let d = self.prior.eigenvalues();
        let theta_j = self.state.latent.theta[j];
        let mut cross = 0.0;
        for k in 0..self.data.p() {
            let u = self.prior.eigen_row(k)[j];
            cross += u
                * self.delta_rho[k]
                * (rho_over_delta * self.t_gamma[k] - d[k] * (self.t_theta[k] - theta_j * u));
        }
        let sum_alpha: f64 = self
            .state
            .latent
            .alpha_tilde
            .iter()
            .map(|a| a[j])
            .sum();
        let sum_theta_r: f64 = self.state.latent.theta_r.iter().map(|t| t[j]).sum();
        let prec = r / sa + r / st + self.q_diag[j] / sg;
        let var = 1.0 / prec;
        let mean = var * (sum_alpha / sa + sum_theta_r / st + cross / sg);
        (var, mean)
    }

    /// Per-element mixed truncated-normal draw of theta_j. Toggling the
    /// global gate switches node j in every sub-network whose individual
    /// gate is open, so the likelihood weights aggregate all R factors.
    pub fn update_theta_element(&mut self, j: usize) {
        let n = self.data.n();
        let lambda = self.state.latent.lambda;
        let (var, mean) = self.theta_conditional(j);
        let active_old = self.theta_ind[j];
        let se = self.state.sigma_eps;

        let mut g = std::mem::take(&mut self.buf_a);
        let mut h = std::mem::take(&mut self.buf_b);
        g.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.rank {
            if !self.theta_r_ind[r][j] {
                continue;
            }
            let alpha_j = self.state.latent.alpha_tilde[r][j];
            if alpha_j == 0.0 {
                continue;
            }
            fill_net_h(self.data, &self.masked_alpha[r], j, &mut h);
            for i in 0..n {
                g[i] += 2.0 * alpha_j * h[i];
            }
        }
        let mut s_gg = 0.0;
        let mut s_xg = 0.0;
        for i in 0..n {
            let gi = g[i];
            s_gg += gi * gi;
            let xi = self.resid[i] + if active_old { gi } else { 0.0 };
            s_xg += xi * gi;
        }
        let llr_active = (2.0 * s_xg - s_gg) / (2.0 * se);
        let (value, active_new) =
            self.draw_threshold_mixture(mean, var.sqrt(), lambda, llr_active);
        for i in 0..n {
            let xi = self.resid[i] + if active_old { g[i] } else { 0.0 };
            self.resid[i] = xi - if active_new { g[i] } else { 0.0 };
        }
        self.buf_a = g;
        self.buf_b = h;
        let theta_old = self.state.latent.theta[j];
        for k in 0..self.data.p() {
            self.t_theta[k] += (value - theta_old) * self.prior.eigen_row(k)[j];
        }
        self.state.latent.theta[j] = value;
        self.theta_ind[j] = active_new;
        for r in 0..self.rank {
            self.masked_alpha[r][j] = if active_new && self.theta_r_ind[r][j] {
                self.state.latent.alpha_tilde[r][j]
            } else {
                0.0
            };
        }
    }

    // Draw from psi_{-1} TN(-inf,-lambda) + psi_0 TN(-lambda,lambda) +
    // psi_1 TN(lambda,inf) with common location/scale. `llr_active` is the
    // log-likelihood advantage of the outer (selected) components over the
    // middle one; weights are formed in log space. Returns the drawn value
    // and its strict indicator |value| > lambda, nudged off the boundary so
    // the indicator always agrees with the sampled component.
    fn draw_threshold_mixture(
        &mut self,
        mean: f64,
        sd: f64,
        lambda: f64,
        llr_active: f64,
    ) -> (f64, bool) {
        let lo = (-lambda - mean) / sd;
        let hi = (lambda - mean) / sd;
        let lw = [
            llr_active + ln_norm_cdf(lo),
            ln_norm_mass(lo, hi),
            llr_active + ln_norm_cdf(-hi),
        ];
        let component = sample_categorical_log(&mut self.rng, &lw)
            .expect("mixture weights cannot all vanish");
        match component {
            0 => {
                let mut v =
                    sample_trunc_normal(&mut self.rng, mean, sd, f64::NEG_INFINITY, -lambda);
                if v >= -lambda {
                    v = (-lambda).next_down();
                }
                (v, true)
            }
            1 => {
                let v = sample_trunc_normal(&mut self.rng, mean, sd, -lambda, lambda);
                // |v| > lambda is false everywhere on the closed interval.
                (v, false)
            }
            _ => {
                let mut v = sample_trunc_normal(&mut self.rng, mean, sd, lambda, f64::INFINITY);
                if v <= lambda {
                    v = lambda.next_up();
                }
                (v, true)
            }
        }
    }

    /// xi_rho: the joint-field quadratic form at correlation `rho`.
    fn xi_rho_at(&self, rho: f64) -> f64 {
        let d = self.prior.eigenvalues();
        let delta = self.prior.delta();
        let rr = rho * rho / (delta * delta);
        let mut acc = 0.0;
        for k in 0..self.data.p() {
            let dr = 1.0 / (d[k] * d[k] - rr);
            let tg = self.t_gamma[k];
            let tt = self.t_theta[k];
            acc += dr * (d[k] * (tg * tg + tt * tt) - 2.0 * (rho / delta) * tg * tt);
        }
        acc
    }

    // Single-field quadratic form t' diag(1/d) t for the ablated models.
    fn xi_field_single(&self, t: &[f64]) -> f64 {
        t.iter()
            .zip(self.prior.eigenvalues())
            .map(|(tk, dk)| tk * tk / dk)
            .sum()
    }

    /// Inverse-Gamma draws of every variance component present in the model.
    pub fn update_variances(&mut self) {
        let p = self.data.p() as f64;
        let n = self.data.n() as f64;
        let r = self.rank as f64;
        let h = self.hyper.clone();
        if self.ablation.has_node() {
            let ss: f64 = self
                .state
                .latent
                .beta_tilde
                .iter()
                .zip(&self.state.latent.gamma)
                .map(|(b, g)| (b - g) * (b - g))
                .sum();
            self.state.sigma_beta =
                sample_inv_gamma(&mut self.rng, h.a_beta + p / 2.0, h.b_beta + 0.5 * ss);
        }
        if self.rank > 0 {
            let ss_alpha: f64 = self
                .state
                .latent
                .alpha_tilde
                .iter()
                .map(|a| {
                    a.iter()
                        .zip(&self.state.latent.theta)
                        .map(|(x, t)| (x - t) * (x - t))
                        .sum::<f64>()
                })
                .sum();
            self.state.sigma_alpha = sample_inv_gamma(
                &mut self.rng,
                h.a_alpha + p * r / 2.0,
                h.b_alpha + 0.5 * ss_alpha,
            );
            let ss_theta: f64 = self
                .state
                .latent
                .theta_r
                .iter()
                .map(|tr| {
                    tr.iter()
                        .zip(&self.state.latent.theta)
                        .map(|(x, t)| (x - t) * (x - t))
                        .sum::<f64>()
                })
                .sum();
            self.state.sigma_theta = sample_inv_gamma(
                &mut self.rng,
                h.a_theta + p * r / 2.0,
                h.b_theta + 0.5 * ss_theta,
            );
        }
        let ss_eps: f64 = self.resid.iter().map(|x| x * x).sum();
        self.state.sigma_eps =
            sample_inv_gamma(&mut self.rng, h.a_eps + n / 2.0, h.b_eps + 0.5 * ss_eps);
        let (shape, quad) = match self.ablation {
            Ablation::Full => (h.a_sigma + p, self.xi_rho_at(self.state.rho)),
            Ablation::NodeOnly => (h.a_sigma + p / 2.0, self.xi_field_single(&self.t_gamma)),
            Ablation::NetworkOnly => (h.a_sigma + p / 2.0, self.xi_field_single(&self.t_theta)),
        };
        self.state.sigma = sample_inv_gamma(&mut self.rng, shape, h.b_sigma + 0.5 * quad);
    }

    /// Random-walk MH step for rho. Proposals outside (-1, 1) or outside the
    /// PD-feasible region keep the current value.
    pub fn mh_update_rho(&mut self) -> bool {
        self.win.rho_prop += 1;
        if self.sweeps > self.n_burn {
            self.post.rho_prop += 1;
        }
        let proposal = self.state.rho + self.step_rho * sample_std_normal(&mut self.rng);
        if proposal.abs() >= 1.0
            || !check_pd_constraint(proposal, self.prior.delta(), self.prior.d_min())
        {
            return false;
        }
        let log_f = |s: &Self, rho: f64| -> f64 {
            let d = s.prior.eigenvalues();
            let rr = rho * rho / (s.prior.delta() * s.prior.delta());
            let logdet: f64 = d.iter().map(|dk| (dk * dk - rr).ln()).sum();
            -s.xi_rho_at(rho) / (2.0 * s.state.sigma) - 0.5 * logdet
        };
        let log_ratio = log_f(self, proposal) - log_f(self, self.state.rho);
        let u: f64 = 1.0 - self.rng.random::<f64>();
        if u.ln() <= log_ratio {
            self.state.rho = proposal;
            self.refresh_rho_caches();
            self.win.rho_acc += 1;
            if self.sweeps > self.n_burn {
                self.post.rho_acc += 1;
            }
            true
        } else {
            false
        }
    }

    /// Random-walk MH step for lambda. Proposals outside [0, lambda_max]
    /// keep the current value; accepted moves re-threshold every mask and
    /// the cached residual.
    pub fn mh_update_lambda(&mut self) -> bool {
        self.win.lam_prop += 1;
        if self.sweeps > self.n_burn {
            self.post.lam_prop += 1;
        }
        let proposal =
            self.state.latent.lambda + self.step_lambda * sample_std_normal(&mut self.rng);
        if !(0.0..=self.hyper.lambda_max).contains(&proposal) {
            return false;
        }
        let (node_mask, theta_ind, theta_r_ind, masked_alpha, resid) =
            self.thresholded_residual(proposal);
        let ss_old: f64 = self.resid.iter().map(|x| x * x).sum();
        let ss_new: f64 = resid.iter().map(|x| x * x).sum();
        let log_ratio = (ss_old - ss_new) / (2.0 * self.state.sigma_eps);
        let u: f64 = 1.0 - self.rng.random::<f64>();
        if u.ln() <= log_ratio {
            self.state.latent.lambda = proposal;
            self.node_mask = node_mask;
            self.theta_ind = theta_ind;
            self.theta_r_ind = theta_r_ind;
            self.masked_alpha = masked_alpha;
            self.resid = resid;
            self.win.lam_acc += 1;
            if self.sweeps > self.n_burn {
                self.post.lam_acc += 1;
            }
            true
        } else {
            false
        }
    }

    // Masks and residual vector under an alternative threshold.
    #[allow(clippy::type_complexity)]
    fn thresholded_residual(
        &self,
        lambda: f64,
    ) -> (Vec<bool>, Vec<bool>, Vec<Vec<bool>>, Vec<Vec<f64>>, Vec<f64>) {
        let n = self.data.n();
        let p = self.data.p();
        let node_mask: Vec<bool> = (0..p)
            .map(|j| self.ablation.has_node() && self.state.latent.gamma[j].abs() > lambda)
            .collect();
        let theta_ind: Vec<bool> = (0..p)
            .map(|j| self.rank > 0 && self.state.latent.theta[j].abs() > lambda)
            .collect();
        let theta_r_ind: Vec<Vec<bool>> = (0..self.rank)
            .map(|r| {
                (0..p)
                    .map(|j| self.state.latent.theta_r[r][j].abs() > lambda)
                    .collect()
            })
            .collect();
        let masked_alpha: Vec<Vec<f64>> = (0..self.rank)
            .map(|r| {
                (0..p)
                    .map(|j| {
                        if theta_ind[j] && theta_r_ind[r][j] {
                            self.state.latent.alpha_tilde[r][j]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let mut resid = self.y.clone();
        for k in 0..self.data.q() {
            let col = self.data.w_col(k);
            let e = self.state.eta[k];
            for i in 0..n {
                resid[i] -= e * col[i];
            }
        }
        for j in 0..p {
            if node_mask[j] {
                let b = self.state.latent.beta_tilde[j];
                let col = self.data.x_col(j);
                for i in 0..n {
                    resid[i] -= b * col[i];
                }
            }
        }
        for ma in &masked_alpha {
            for i in 0..n {
                resid[i] -= quad_form(self.data, i, ma);
            }
        }
        (node_mask, theta_ind, theta_r_ind, masked_alpha, resid)
    }

    /// Current cached residual (exposed for tests).
    pub fn residual(&self) -> &[f64] {
        &self.resid
    }

    /// Maximum absolute discrepancy between the incrementally maintained
    /// caches and a from-scratch recomputation (test/debug aid).
    pub fn cache_consistency_error(&self) -> f64 {
        let p = self.data.p();
        let lambda = self.state.latent.lambda;
        let mut worst: f64 = 0.0;
        for j in 0..p {
            let node = self.ablation.has_node() && self.state.latent.gamma[j].abs() > lambda;
            if node != self.node_mask[j] {
                worst = worst.max(1.0);
            }
            let gate = self.rank > 0 && self.state.latent.theta[j].abs() > lambda;
            if gate != self.theta_ind[j] {
                worst = worst.max(1.0);
            }
        }
        for r in 0..self.rank {
            for j in 0..p {
                let ind = self.state.latent.theta_r[r][j].abs() > lambda;
                if ind != self.theta_r_ind[r][j] {
                    worst = worst.max(1.0);
                }
                let want = if self.theta_ind[j] && ind {
                    self.state.latent.alpha_tilde[r][j]
                } else {
                    0.0
                };
                worst = worst.max((want - self.masked_alpha[r][j]).abs());
            }
        }
        let tg = self.prior.to_eigen(&self.state.latent.gamma);
        let tt = self.prior.to_eigen(&self.state.latent.theta);
        for k in 0..p {
            worst = worst.max((tg[k] - self.t_gamma[k]).abs());
            worst = worst.max((tt[k] - self.t_theta[k]).abs());
        }
        let d = self.prior.eigenvalues();
        let rr = self.state.rho * self.state.rho / (self.prior.delta() * self.prior.delta());
        for j in 0..p {
            let mut q = 0.0;
            for k in 0..p {
                let u = self.prior.eigen_row(k)[j];
                q += u * u * d[k] / (d[k] * d[k] - rr);
            }
            worst = worst.max((q - self.q_diag[j]).abs());
        }
        let (.., resid) = self.thresholded_residual(lambda);
        for i in 0..self.data.n() {
            worst = worst.max((resid[i] - self.resid[i]).abs());
        }
        worst
    }
}

// h_i = sum_{l != j} masked_alpha_l z_{i j l}; the diagonal is zero so the
// j-th term never contributes.
fn fill_net_h(data: &Dataset, masked_alpha: &[f64], j: usize, buf: &mut [f64]) {
    let n = data.n();
    for (i, out) in buf.iter_mut().enumerate().take(n) {
        let row = data.z_row(i, j);
        let mut acc = 0.0;
        for (l, v) in masked_alpha.iter().enumerate() {
            if *v != 0.0 {
                acc += row[l] * v;
            }
        }
        *out = acc;
    }
}

// v' Z_i v over the active entries of v.
fn quad_form(data: &Dataset, i: usize, v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (j, vj) in v.iter().enumerate() {
        if *vj == 0.0 {
            continue;
        }
        let row = data.z_row(i, j);
        let mut dot = 0.0;
        for (l, vl) in v.iter().enumerate() {
            if *vl != 0.0 {
                dot += row[l] * vl;
            }
        }
        acc += vj * dot;
    }
    acc
}
