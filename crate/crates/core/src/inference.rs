//! Posterior summaries over retained chains: marginal posterior probabilities
//! for nodes and sub-network edges, median-probability-model selection,
//! masked posterior-mean effects, clique uniqueness verification, and the
//! Gelman-Rubin potential scale reduction diagnostic.
//!
//! Sub-network factor labels are aligned across iterations by maximum Jaccard
//! overlap of the support sets against a reference iteration before any
//! per-factor quantity is averaged; the label-free union-edge MPP is reported
//! alongside.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{mean, sample_variance};
use crate::model::{verify_clique_uniqueness, CliqueVerdict, Dataset};
use crate::sampler::{ParameterState, PosteriorChain};

/// Per-sub-network selection result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubnetworkSummary {
    pub nodes: BTreeSet<usize>,
    /// Unordered selected edges (p < j).
    pub edges: Vec<(usize, usize)>,
}

/// Edge lists at high quantiles of the union-edge MPP distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileEdges {
    pub q99: Vec<(usize, usize)>,
    pub q98: Vec<(usize, usize)>,
    pub q97: Vec<(usize, usize)>,
}

/// Selection decisions, effect estimates and their posterior probabilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub cutoff: f64,
    pub node_mpp: Vec<f64>,
    /// Aligned per-factor edge MPP matrices, row-major P x P.
    pub edge_mpp: Vec<Vec<f64>>,
    /// Fraction of iterations an edge belongs to at least one sub-network.
    pub union_edge_mpp: Vec<f64>,
    /// Aligned per-factor node-membership MPPs.
    pub subnetwork_node_mpp: Vec<Vec<f64>>,
    pub selected_nodes: BTreeSet<usize>,
    pub selected_subnetworks: Vec<SubnetworkSummary>,
    /// Union of selected edges over all sub-networks (p < j).
    pub selected_edges: Vec<(usize, usize)>,
    pub eta_hat: Vec<f64>,
    /// Posterior mean of the masked node effect (zero for never-selected nodes).
    pub beta_hat: Vec<f64>,
    /// Posterior mean of the network effect matrix sum_r alpha_r (x) alpha_r.
    pub a_hat: Vec<f64>,
    /// Aligned per-factor posterior-mean outer-product matrices.
    pub subnetwork_effects: Vec<Vec<f64>>,
    pub uniqueness_verdict: CliqueVerdict,
    pub quantile_edges: QuantileEdges,
}

/// Convergence diagnostics across chains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub gr_statistics: Vec<GrEntry>,
    pub trace_summaries: Vec<TraceSummary>,
    pub accept_rho: f64,
    pub accept_lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrEntry {
    pub name: String,
    pub psrf: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
}

/// Scalar selectors for traces and Gelman-Rubin monitoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonitoredScalar {
    LogSigmaEps,
    SigmaEps,
    SigmaBeta,
    SigmaAlpha,
    SigmaTheta,
    Sigma,
    Lambda,
    Rho,
    Eta(usize),
    Gamma(usize),
    Theta(usize),
    BetaTilde(usize),
}

impl MonitoredScalar {
    pub fn extract(&self, state: &ParameterState) -> f64 {
        match self {
            MonitoredScalar::LogSigmaEps => state.sigma_eps.ln(),
            MonitoredScalar::SigmaEps => state.sigma_eps,
            MonitoredScalar::SigmaBeta => state.sigma_beta,
            MonitoredScalar::SigmaAlpha => state.sigma_alpha,
            MonitoredScalar::SigmaTheta => state.sigma_theta,
            MonitoredScalar::Sigma => state.sigma,
            MonitoredScalar::Lambda => state.latent.lambda,
            MonitoredScalar::Rho => state.rho,
            MonitoredScalar::Eta(k) => state.eta[*k],
            MonitoredScalar::Gamma(p) => state.latent.gamma[*p],
            MonitoredScalar::Theta(p) => state.latent.theta[*p],
            MonitoredScalar::BetaTilde(p) => state.latent.beta_tilde[*p],
        }
    }

    pub fn name(&self) -> String {
        match self {
            MonitoredScalar::LogSigmaEps => "log_sigma_eps".into(),
            MonitoredScalar::SigmaEps => "sigma_eps".into(),
            MonitoredScalar::SigmaBeta => "sigma_beta".into(),
            MonitoredScalar::SigmaAlpha => "sigma_alpha".into(),
            MonitoredScalar::SigmaTheta => "sigma_theta".into(),
            MonitoredScalar::Sigma => "sigma".into(),
            MonitoredScalar::Lambda => "lambda".into(),
            MonitoredScalar::Rho => "rho".into(),
            MonitoredScalar::Eta(k) => format!("eta.{k}"),
            MonitoredScalar::Gamma(p) => format!("gamma.{p}"),
            MonitoredScalar::Theta(p) => format!("theta.{p}"),
            MonitoredScalar::BetaTilde(p) => format!("beta_tilde.{p}"),
        }
    }
}

impl std::str::FromStr for MonitoredScalar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_idx = |rest: &str, what: &str| -> Result<usize> {
            rest.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad {what} index in monitored scalar: {rest}")))
        };
        Ok(match s {
            "log_sigma_eps" => MonitoredScalar::LogSigmaEps,
            "sigma_eps" => MonitoredScalar::SigmaEps,
            "sigma_beta" => MonitoredScalar::SigmaBeta,
            "sigma_alpha" => MonitoredScalar::SigmaAlpha,
            "sigma_theta" => MonitoredScalar::SigmaTheta,
            "sigma" => MonitoredScalar::Sigma,
            "lambda" => MonitoredScalar::Lambda,
            "rho" => MonitoredScalar::Rho,
            other => {
                if let Some(rest) = other.strip_prefix("eta.") {
                    MonitoredScalar::Eta(parse_idx(rest, "eta")?)
                } else if let Some(rest) = other.strip_prefix("gamma.") {
                    MonitoredScalar::Gamma(parse_idx(rest, "gamma")?)
                } else if let Some(rest) = other.strip_prefix("theta.") {
                    MonitoredScalar::Theta(parse_idx(rest, "theta")?)
                } else if let Some(rest) = other.strip_prefix("beta_tilde.") {
                    MonitoredScalar::BetaTilde(parse_idx(rest, "beta_tilde")?)
                } else {
                    return Err(Error::Config(format!("unknown monitored scalar: {other}")));
                }
            }
        })
    }
}

/// Retained-iteration trace of one scalar from one chain.
pub fn trace(chain: &PosteriorChain, scalar: MonitoredScalar) -> Vec<f64> {
    chain.states.iter().map(|s| scalar.extract(s)).collect()
}

fn check_nonempty(chains: &[PosteriorChain]) -> Result<()> {
    if chains.is_empty() || chains.iter().all(|c| c.retained() == 0) {
        return Err(Error::Diagnostic("no retained draws".into()));
    }
    let p = chains[0].p;
    let r = chains[0].rank;
    if chains.iter().any(|c| c.p != p || c.rank != r) {
        return Err(Error::Diagnostic("chains have inconsistent dimensions".into()));
    }
    Ok(())
}

/// Fraction of retained iterations in which each node is selected.
pub fn compute_node_mpp(chains: &[PosteriorChain]) -> Result<Vec<f64>> {
    check_nonempty(chains)?;
    let p = chains[0].p;
    let mut acc = vec![0.0; p];
    let mut total = 0usize;
    for c in chains {
        for row in &c.node_ind {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += f64::from(*v);
            }
            total += 1;
        }
    }
    Ok(acc.into_iter().map(|a| a / total as f64).collect())
}

// Support set of factor r in one stored indicator row.
fn support_of(row: &[u8], p: usize, r: usize) -> BTreeSet<usize> {
    (0..p).filter(|&j| row[r * p + j] == 1).collect()
}

fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    let uni = a.union(b).count();
    if uni == 0 {
        1.0 // two empty supports are identical
    } else {
        inter as f64 / uni as f64
    }
}

// Best assignment of current supports onto reference slots, maximizing total
// Jaccard overlap. Exhaustive for R <= 6, greedy beyond. perm[slot] = source.
fn best_permutation(reference: &[BTreeSet<usize>], current: &[BTreeSet<usize>]) -> Vec<usize> {
    let r = reference.len();
    if r <= 1 {
        return (0..r).collect();
    }
    let score = |slot: usize, src: usize| jaccard(&reference[slot], &current[src]);
    if r <= 6 {
        let mut best: (f64, Vec<usize>) = (f64::NEG_INFINITY, (0..r).collect());
        let mut perm: Vec<usize> = (0..r).collect();
        permute_rec(&mut perm, 0, &mut |p| {
            let s: f64 = p.iter().enumerate().map(|(slot, &src)| score(slot, src)).sum();
            if s > best.0 {
                best = (s, p.to_vec());
            }
        });
        best.1
    } else {
        let mut taken = vec![false; r];
        let mut perm = vec![0usize; r];
        for slot in 0..r {
            let mut best_src = usize::MAX;
            let mut best_score = f64::NEG_INFINITY;
            for src in 0..r {
                if !taken[src] && score(slot, src) > best_score {
                    best_score = score(slot, src);
                    best_src = src;
                }
            }
            taken[best_src] = true;
            perm[slot] = best_src;
        }
        perm
    }
}

fn permute_rec(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute_rec(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

// Reference supports: the first retained iteration of the first non-empty chain.
fn reference_supports(chains: &[PosteriorChain]) -> Vec<BTreeSet<usize>> {
    let p = chains[0].p;
    let r = chains[0].rank;
    for c in chains {
        if let Some(row) = c.net_ind.first() {
            return (0..r).map(|k| support_of(row, p, k)).collect();
        }
    }
    vec![BTreeSet::new(); r]
}

/// Aligned per-factor edge MPP matrices (symmetric, zero diagonal).
pub fn compute_edge_mpp(chains: &[PosteriorChain]) -> Result<Vec<Vec<f64>>> {
    check_nonempty(chains)?;
    let p = chains[0].p;
    let r = chains[0].rank;
    let reference = reference_supports(chains);
    let mut acc = vec![vec![0.0; p * p]; r];
    let mut total = 0usize;
    for c in chains {
        for row in &c.net_ind {
            let supports: Vec<BTreeSet<usize>> =
                (0..r).map(|k| support_of(row, p, k)).collect();
            let perm = best_permutation(&reference, &supports);
            for (slot, &src) in perm.iter().enumerate() {
                let mask = &row[src * p..(src + 1) * p];
                for a in 0..p {
                    if mask[a] == 0 {
                        continue;
                    }
                    for b in (a + 1)..p {
                        if mask[b] == 1 {
                            acc[slot][a * p + b] += 1.0;
                            acc[slot][b * p + a] += 1.0;
                        }
                    }
                }
            }
            total += 1;
        }
    }
    for m in &mut acc {
        for v in m.iter_mut() {
            *v /= total as f64;
        }
    }
    Ok(acc)
}

/// Fraction of iterations each unordered edge lies in at least one sub-network
/// (alignment-free).
pub fn compute_union_edge_mpp(chains: &[PosteriorChain]) -> Result<Vec<f64>> {
    check_nonempty(chains)?;
    let p = chains[0].p;
    let r = chains[0].rank;
    let mut acc = vec![0.0; p * p];
    let mut total = 0usize;
    for c in chains {
        for row in &c.net_ind {
            for a in 0..p {
                for b in (a + 1)..p {
                    let hit = (0..r).any(|k| row[k * p + a] == 1 && row[k * p + b] == 1);
                    if hit {
                        acc[a * p + b] += 1.0;
                        acc[b * p + a] += 1.0;
                    }
                }
            }
            total += 1;
        }
    }
    for v in acc.iter_mut() {
        *v /= total as f64;
    }
    Ok(acc)
}

fn quantile_cutoff(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 1.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn edges_at_least(mpp: &[f64], p: usize, cutoff: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..p {
        for b in (a + 1)..p {
            if mpp[a * p + b] >= cutoff {
                out.push((a, b));
            }
        }
    }
    out
}

/// Full posterior selection summary under the median-probability-model rule
/// (`cutoff` defaults to 0.5 at the call sites).
pub fn summarize(chains: &[PosteriorChain], cutoff: f64) -> Result<SelectionSummary> {
    if !(0.0..1.0).contains(&cutoff) || cutoff <= 0.0 {
        return Err(Error::Config(format!("cutoff {cutoff} outside (0, 1)")));
    }
    check_nonempty(chains)?;
    let p = chains[0].p;
    let q = chains[0].q;
    let r = chains[0].rank;

    let node_mpp = compute_node_mpp(chains)?;
    let edge_mpp = compute_edge_mpp(chains)?;
    let union_edge_mpp = compute_union_edge_mpp(chains)?;

    let reference = reference_supports(chains);
    let mut subnet_node_acc = vec![vec![0.0; p]; r];
    let mut subnet_effect_acc = vec![vec![0.0; p * p]; r];
    let mut a_acc = vec![0.0; p * p];
    let mut eta_acc = vec![0.0; q];
    let mut beta_acc = vec![0.0; p];
    let mut total = 0usize;

    for c in chains {
        for (t, state) in c.states.iter().enumerate() {
            let node_row = &c.node_ind[t];
            let net_row = &c.net_ind[t];
            for k in 0..q {
                eta_acc[k] += state.eta[k];
            }
            for j in 0..p {
                if node_row[j] == 1 {
                    beta_acc[j] += state.latent.beta_tilde[j];
                }
            }
            let supports: Vec<BTreeSet<usize>> =
                (0..r).map(|k| support_of(net_row, p, k)).collect();
            let perm = best_permutation(&reference, &supports);
            for (slot, &src) in perm.iter().enumerate() {
                let mask = &net_row[src * p..(src + 1) * p];
                let alpha = &state.latent.alpha_tilde[src];
                for a in 0..p {
                    if mask[a] == 0 {
                        continue;
                    }
                    subnet_node_acc[slot][a] += 1.0;
                    for b in a..p {
                        if mask[b] == 1 {
                            let v = alpha[a] * alpha[b];
                            subnet_effect_acc[slot][a * p + b] += v;
                            a_acc[a * p + b] += v;
                            if b != a {
                                subnet_effect_acc[slot][b * p + a] += v;
                                a_acc[b * p + a] += v;
                            }
                        }
                    }
                }
            }
            total += 1;
        }
    }
    let tf = total as f64;
    let eta_hat: Vec<f64> = eta_acc.into_iter().map(|v| v / tf).collect();
    let beta_hat: Vec<f64> = beta_acc.into_iter().map(|v| v / tf).collect();
    let a_hat: Vec<f64> = a_acc.into_iter().map(|v| v / tf).collect();
    let subnetwork_effects: Vec<Vec<f64>> = subnet_effect_acc
        .into_iter()
        .map(|m| m.into_iter().map(|v| v / tf).collect())
        .collect();
    let subnetwork_node_mpp: Vec<Vec<f64>> = subnet_node_acc
        .into_iter()
        .map(|m| m.into_iter().map(|v| v / tf).collect())
        .collect();

    let selected_nodes: BTreeSet<usize> = node_mpp
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > cutoff)
        .map(|(j, _)| j)
        .collect();
    let selected_subnetworks: Vec<SubnetworkSummary> = (0..r)
        .map(|slot| SubnetworkSummary {
            nodes: subnetwork_node_mpp[slot]
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > cutoff)
                .map(|(j, _)| j)
                .collect(),
            edges: {
                let mut e = Vec::new();
                for a in 0..p {
                    for b in (a + 1)..p {
                        if edge_mpp[slot][a * p + b] > cutoff {
                            e.push((a, b));
                        }
                    }
                }
                e
            },
        })
        .collect();
    let mut selected_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for a in 0..p {
        for b in (a + 1)..p {
            if union_edge_mpp[a * p + b] > cutoff {
                selected_edges.insert((a, b));
            }
        }
    }

    let supports: Vec<BTreeSet<usize>> = selected_subnetworks
        .iter()
        .map(|s| s.nodes.clone())
        .collect();
    let uniqueness_verdict = verify_clique_uniqueness(&supports);

    let mut sorted: Vec<f64> = (0..p)
        .flat_map(|a| ((a + 1)..p).map(move |b| (a, b)))
        .map(|(a, b)| union_edge_mpp[a * p + b])
        .collect();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let quantile_edges = QuantileEdges {
        q99: edges_at_least(&union_edge_mpp, p, quantile_cutoff(&sorted, 0.99)),
        q98: edges_at_least(&union_edge_mpp, p, quantile_cutoff(&sorted, 0.98)),
        q97: edges_at_least(&union_edge_mpp, p, quantile_cutoff(&sorted, 0.97)),
    };

    Ok(SelectionSummary {
        cutoff,
        node_mpp,
        edge_mpp,
        union_edge_mpp,
        subnetwork_node_mpp,
        selected_nodes,
        selected_subnetworks,
        selected_edges: selected_edges.into_iter().collect(),
        eta_hat,
        beta_hat,
        a_hat,
        subnetwork_effects,
        uniqueness_verdict,
        quantile_edges,
    })
}

/// Model mean at the posterior-mean coefficients (eta_hat, beta_hat, a_hat).
pub fn predict_posterior_mean(summary: &SelectionSummary, data: &Dataset) -> Result<Vec<f64>> {
    let p = data.p();
    if summary.beta_hat.len() != p || summary.eta_hat.len() != data.q() {
        return Err(Error::Config(
            "summary dimensions do not match the dataset".into(),
        ));
    }
    let n = data.n();
    let mut out = vec![0.0; n];
    for (k, e) in summary.eta_hat.iter().enumerate() {
        let col = data.w_col(k);
        for i in 0..n {
            out[i] += e * col[i];
        }
    }
    for (j, b) in summary.beta_hat.iter().enumerate() {
        if *b == 0.0 {
            continue;
        }
        let col = data.x_col(j);
        for i in 0..n {
            out[i] += b * col[i];
        }
    }
    for i in 0..n {
        let zi = data.z_subject(i);
        let mut acc = 0.0;
        for idx in 0..p * p {
            acc += summary.a_hat[idx] * zi[idx];
        }
        out[i] += acc;
    }
    Ok(out)
}

/// Basic potential scale reduction factor over one scalar: chains of equal
/// retained length n, B = n var(chain means), W = mean(chain variances),
/// psrf = sqrt(((n-1) + B/W) / n). Attains sqrt((n-1)/n) when the chains are
/// identical; anything below that flags an estimator bug.
pub fn psrf(per_chain: &[Vec<f64>]) -> Result<f64> {
    let m = per_chain.len();
    if m < 2 {
        return Err(Error::Diagnostic(
            "Gelman-Rubin needs at least two chains".into(),
        ));
    }
    let n = per_chain[0].len();
    if per_chain.iter().any(|c| c.len() != n) {
        return Err(Error::Diagnostic("chains have unequal retained length".into()));
    }
    if n < 10 {
        return Err(Error::Diagnostic(format!(
            "retained length {n} too short for Gelman-Rubin (need >= 10)"
        )));
    }
    let means: Vec<f64> = per_chain.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = per_chain.iter().map(|c| sample_variance(c)).collect();
    let b = n as f64 * sample_variance(&means);
    let w = mean(&vars);
    if w <= 0.0 {
        // Degenerate constant chains; identical constants are converged.
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let nf = n as f64;
    let value = (((nf - 1.0) + b / w) / nf).sqrt();
    let floor = ((nf - 1.0) / nf).sqrt();
    if value < floor - 1e-6 {
        return Err(Error::Diagnostic(format!(
            "PSRF {value} below its algebraic floor {floor}; estimator bug"
        )));
    }
    Ok(value)
}

/// Gelman-Rubin potential scale reduction for every monitored scalar, plus
/// pooled trace summaries and MH acceptance rates.
pub fn gelman_rubin(
    chains: &[PosteriorChain],
    monitored: &[MonitoredScalar],
) -> Result<ConvergenceReport> {
    if chains.len() < 2 {
        return Err(Error::Diagnostic(
            "Gelman-Rubin needs at least two chains".into(),
        ));
    }
    check_nonempty(chains)?;
    let mut gr_statistics = Vec::with_capacity(monitored.len());
    let mut trace_summaries = Vec::with_capacity(monitored.len());
    for scalar in monitored {
        let per_chain: Vec<Vec<f64>> = chains.iter().map(|c| trace(c, *scalar)).collect();
        let value = psrf(&per_chain)?;
        gr_statistics.push(GrEntry {
            name: scalar.name(),
            psrf: value,
        });
        let pooled: Vec<f64> = per_chain.into_iter().flatten().collect();
        trace_summaries.push(TraceSummary {
            name: scalar.name(),
            mean: mean(&pooled),
            variance: sample_variance(&pooled),
        });
    }
    let accept_rho = mean(&chains.iter().map(|c| c.accept_rho).collect::<Vec<_>>());
    let accept_lambda = mean(&chains.iter().map(|c| c.accept_lambda).collect::<Vec<_>>());
    Ok(ConvergenceReport {
        gr_statistics,
        trace_summaries,
        accept_rho,
        accept_lambda,
    })
}
