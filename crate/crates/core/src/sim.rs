//! Simulation scenarios, end-to-end fitting helpers, validation-based rank
//! tuning, and selection/prediction scoring against ground truth.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::inference::{predict_posterior_mean, summarize, SelectionSummary};
use crate::kernel::PriorStructure;
use crate::math::splitmix64;
use crate::model::Dataset;
use crate::sampler::{run_chains, HyperPriors, MhTuning, ModelConfig, PosteriorChain};

/// Scenario geometry presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Coupled: every sub-network node also carries a node-level signal.
    S1Coupled,
    /// Decoupled: node signals and sub-network nodes are disjoint.
    S2Decoupled,
    /// S1 with two edges removed from one signaling clique after assembly.
    S3EdgeRemoved,
    /// High-dimensional mixture with partial overlap.
    S4MixedHighdim,
    Custom,
}

/// Everything needed to generate one synthetic study deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario: ScenarioKind,
    pub p: usize,
    /// Subjects generated for fitting; a validation fraction is carved out.
    pub n: usize,
    /// Noise standard deviation.
    pub sigma_eps: f64,
    pub seed: u64,
    pub true_nodes: Vec<usize>,
    pub subnetworks: Vec<Vec<usize>>,
    /// Edges (unordered) zeroed out of the effect matrix after assembly.
    pub removed_edges: Vec<(usize, usize)>,
    /// Equicorrelation of the node-feature columns (correlated-design
    /// variant); independent N(0,1) columns when absent.
    pub x_equicorrelation: Option<f64>,
    /// Signal-magnitude floor for the nonzero node coefficients: entries are
    /// redrawn until |beta_p| clears it, so every declared signal node
    /// carries a detectable effect. Unset reproduces the plain N(gamma, I)
    /// recipe, under which a node's draw can land arbitrarily close to zero.
    pub min_abs_beta: Option<f64>,
    /// Same floor for the nonzero sub-network factor entries.
    pub min_abs_alpha: Option<f64>,
    pub n_test: usize,
    pub validation_fraction: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec::preset(ScenarioKind::S1Coupled, 2.0, 1)
    }
}

impl ScenarioSpec {
    /// Default geometry for each scenario: two disjoint 5-cliques and ten
    /// true signal nodes, coupled or decoupled with the cliques.
    pub fn preset(kind: ScenarioKind, sigma_eps: f64, seed: u64) -> Self {
        let clique_a: Vec<usize> = (0..5).collect();
        let clique_b: Vec<usize> = (5..10).collect();
        let (p, n, true_nodes, removed): (usize, usize, Vec<usize>, Vec<(usize, usize)>) =
            match kind {
                ScenarioKind::S1Coupled => (20, 200, (0..10).collect(), vec![]),
                ScenarioKind::S2Decoupled => (20, 200, (10..20).collect(), vec![]),
                ScenarioKind::S3EdgeRemoved => {
                    (20, 200, (0..10).collect(), vec![(0, 1), (1, 2)])
                }
                ScenarioKind::S4MixedHighdim => (
                    100,
                    1000,
                    vec![0, 1, 2, 5, 6, 10, 11, 12, 13, 14],
                    vec![],
                ),
                ScenarioKind::Custom => (20, 200, (0..10).collect(), vec![]),
            };
        // Presets declare detectable signals (the signal-pattern figures the
        // defaults stand in for are drawn with visibly nonzero effects); the
        // custom kind keeps the raw unconditioned recipe.
        let floor = if kind == ScenarioKind::Custom {
            None
        } else {
            Some(0.8)
        };
        ScenarioSpec {
            scenario: kind,
            p,
            n,
            sigma_eps,
            seed,
            true_nodes,
            subnetworks: vec![clique_a, clique_b],
            removed_edges: removed,
            x_equicorrelation: None,
            min_abs_beta: floor,
            min_abs_alpha: floor,
            n_test: 100,
            validation_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Config("scenario needs at least two nodes".into()));
        }
        if self.n < 2 {
            return Err(Error::Config("scenario needs at least two subjects".into()));
        }
        if !(self.sigma_eps >= 0.0) {
            return Err(Error::Config("noise std must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction outside [0, 1)".into()));
        }
        if self.scenario != ScenarioKind::Custom && self.subnetworks.len() != 2 {
            return Err(Error::Config(
                "preset scenarios use exactly two sub-networks".into(),
            ));
        }
        if self.subnetworks.is_empty() {
            return Err(Error::Config("at least one sub-network is required".into()));
        }
        for g in &self.subnetworks {
            if g.iter().any(|&j| j >= self.p) {
                return Err(Error::Config(format!(
                    "sub-network node out of range (P = {})",
                    self.p
                )));
            }
            if g.len() < 2 {
                return Err(Error::Config(
                    "sub-networks need at least two nodes".into(),
                ));
            }
        }
        if self.true_nodes.iter().any(|&j| j >= self.p) {
            return Err(Error::Config(format!(
                "true node out of range (P = {})",
                self.p
            )));
        }
        for &(a, b) in &self.removed_edges {
            if a >= self.p || b >= self.p || a == b {
                return Err(Error::Config(format!("invalid removed edge ({a},{b})")));
            }
        }
        if let Some(c) = self.x_equicorrelation {
            if !(0.0..1.0).contains(&c) {
                return Err(Error::Config("x equicorrelation outside [0, 1)".into()));
            }
        }
        for (name, floor) in [
            ("min_abs_beta", self.min_abs_beta),
            ("min_abs_alpha", self.min_abs_alpha),
        ] {
            if let Some(f) = floor {
                if !(f >= 0.0) {
                    return Err(Error::Config(format!("{name} must be nonnegative")));
                }
            }
        }
        Ok(())
    }
}

/// The generating coefficients and signal layout behind one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: ScenarioSpec,
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub alphas: Vec<Vec<f64>>,
    /// Effect matrix after any edge removal, row-major P x P.
    pub a_matrix: Vec<f64>,
    /// Positive edge class (unordered, p < j) for scoring.
    pub true_edges: Vec<(usize, usize)>,
    pub noise_train: Vec<f64>,
    pub noise_validation: Vec<f64>,
    pub noise_test: Vec<f64>,
}

/// Generated datasets plus the truth that produced them.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub truth: GroundTruth,
}

/// Deterministic node coordinates: a unit-spaced 3-D grid.
pub fn grid_coords(p: usize) -> Vec<[f64; 3]> {
    let g = (p as f64).cbrt().ceil() as usize;
    let g = g.max(1);
    (0..p)
        .map(|j| {
            [
                (j % g) as f64,
                ((j / g) % g) as f64,
                (j / (g * g)) as f64,
            ]
        })
        .collect()
}

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn draw_split<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    p: usize,
    truth_a: &[f64],
    beta: &[f64],
    eta: f64,
    sigma_eps: f64,
    equicorr: Option<f64>,
    coords: &[[f64; 3]],
) -> Result<(Dataset, Vec<f64>)> {
    let mut x_rows = Vec::with_capacity(n);
    let mut z_mats = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = match equicorr {
            None => (0..p).map(|_| std_normal(rng)).collect(),
            Some(c) => {
                let shared = std_normal(rng);
                (0..p)
                    .map(|_| c.sqrt() * shared + (1.0 - c).sqrt() * std_normal(rng))
                    .collect()
            }
        };
        let mut z = vec![0.0; p * p];
        for a in 0..p {
            for b in (a + 1)..p {
                let v = std_normal(rng);
                z[a * p + b] = v;
                z[b * p + a] = v;
            }
        }
        let mut mean = eta;
        for (j, b) in beta.iter().enumerate() {
            mean += b * x[j];
        }
        let mut net = 0.0;
        for idx in 0..p * p {
            net += truth_a[idx] * z[idx];
        }
        mean += net;
        let e = sigma_eps * std_normal(rng);
        y.push(mean + e);
        noise.push(e);
        x_rows.push(x);
        z_mats.push(z);
    }
    let w_rows = vec![vec![1.0]; n];
    let data = Dataset::new(y, w_rows, x_rows, z_mats, Some(coords.to_vec()))?;
    Ok((data, noise))
}

/// Generate train/validation/test datasets and ground truth for a scenario.
/// Bit-identical for identical (spec, seed).
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let p = spec.p;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);

    let gamma: Vec<f64> = (0..p).map(|_| (2.0f64).sqrt() * std_normal(&mut rng)).collect();
    let theta: Vec<f64> = (0..p).map(|_| (2.0f64).sqrt() * std_normal(&mut rng)).collect();
    // Nonzero coefficient entries, optionally redrawn until they clear the
    // signal floor (exact rejection sampling of the conditional).
    let draw_signal = |rng: &mut ChaCha12Rng, mean: f64, sd: f64, floor: Option<f64>| -> f64 {
        loop {
            let v = mean + sd * std_normal(rng);
            match floor {
                Some(f) if v.abs() < f => continue,
                _ => return v,
            }
        }
    };
    let true_set: BTreeSet<usize> = spec.true_nodes.iter().copied().collect();
    let beta: Vec<f64> = (0..p)
        .map(|j| {
            if true_set.contains(&j) {
                draw_signal(&mut rng, gamma[j], 1.0, spec.min_abs_beta)
            } else {
                0.0
            }
        })
        .collect();
    let alphas: Vec<Vec<f64>> = spec
        .subnetworks
        .iter()
        .map(|g| {
            let members: BTreeSet<usize> = g.iter().copied().collect();
            (0..p)
                .map(|j| {
                    if members.contains(&j) {
                        draw_signal(&mut rng, theta[j], (2.0f64).sqrt(), spec.min_abs_alpha)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let mut a_matrix = vec![0.0; p * p];
    for k in 0..p {
        for l in (k + 1)..p {
            let mut v = 0.0;
            for alpha in &alphas {
                v += alpha[k] * alpha[l];
            }
            a_matrix[k * p + l] = v;
            a_matrix[l * p + k] = v;
        }
    }
    for &(a, b) in &spec.removed_edges {
        a_matrix[a * p + b] = 0.0;
        a_matrix[b * p + a] = 0.0;
    }

    // The positive edge class: all within-clique pairs, minus removed ones.
    let mut true_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for g in &spec.subnetworks {
        for (i, &a) in g.iter().enumerate() {
            for &b in g.iter().skip(i + 1) {
                let e = (a.min(b), a.max(b));
                true_edges.insert(e);
            }
        }
    }
    for &(a, b) in &spec.removed_edges {
        true_edges.remove(&(a.min(b), a.max(b)));
    }

    let eta = 1.0;
    let coords = grid_coords(p);
    let n_val = ((spec.n as f64) * spec.validation_fraction).round() as usize;
    if n_val == 0 {
        return Err(Error::Config(format!(
            "validation fraction {} of {} subjects leaves an empty validation set",
            spec.validation_fraction, spec.n
        )));
    }
    let n_train = spec.n - n_val;
    let (train, noise_train) = draw_split(
        &mut rng,
        n_train,
        p,
        &a_matrix,
        &beta,
        eta,
        spec.sigma_eps,
        spec.x_equicorrelation,
        &coords,
    )?;
    let (validation, noise_validation) = draw_split(
        &mut rng,
        n_val,
        p,
        &a_matrix,
        &beta,
        eta,
        spec.sigma_eps,
        spec.x_equicorrelation,
        &coords,
    )?;
    let (test, noise_test) = draw_split(
        &mut rng,
        spec.n_test,
        p,
        &a_matrix,
        &beta,
        eta,
        spec.sigma_eps,
        spec.x_equicorrelation,
        &coords,
    )?;

    Ok(Scenario {
        train,
        validation,
        test,
        truth: GroundTruth {
            spec: spec.clone(),
            eta: vec![eta],
            gamma,
            theta,
            beta,
            alphas,
            a_matrix,
            true_edges: true_edges.into_iter().collect(),
            noise_train,
            noise_validation,
            noise_test,
        },
    })
}

/// Chains plus their merged selection summary.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub chains: Vec<PosteriorChain>,
    pub summary: SelectionSummary,
}

/// Build the prior from the dataset and run `n_chains` chains, then merge
/// into one selection summary at the 0.5 cutoff.
#[allow(clippy::too_many_arguments)]
pub fn fit_dataset(
    data: &Dataset,
    model: &ModelConfig,
    hyper: &HyperPriors,
    tuning: &MhTuning,
    n_iter: usize,
    n_burn: usize,
    seed: u64,
    n_chains: usize,
) -> Result<FitOutcome> {
    let prior = PriorStructure::build(data.coords(), data.p(), &model.kernel, model.delta)?;
    let chains = run_chains(
        data, &prior, model, hyper, tuning, n_iter, n_burn, seed, n_chains,
    )?;
    let summary = summarize(&chains, 0.5)?;
    Ok(FitOutcome { chains, summary })
}

/// Coefficient of determination of `pred` against `y`, with SST about the
/// mean of `y`. Errors when SST is degenerate (fewer than two observations
/// or zero variance).
pub fn r_squared(y: &[f64], pred: &[f64]) -> Result<f64> {
    if y.len() != pred.len() {
        return Err(Error::Config("prediction length mismatch".into()));
    }
    if y.len() < 2 {
        return Err(Error::Diagnostic(
            "R^2 undefined on fewer than two observations".into(),
        ));
    }
    let m = crate::math::mean(y);
    let sst: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    if sst <= 0.0 {
        return Err(Error::Diagnostic("R^2 undefined: zero outcome variance".into()));
    }
    let sse: f64 = y.iter().zip(pred).map(|(v, p)| (v - p) * (v - p)).sum();
    Ok(1.0 - sse / sst)
}

/// Selection and prediction metrics for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    /// None when the positive class is empty (undefined, never 0/0).
    pub node_sens: Option<f64>,
    pub node_spec: Option<f64>,
    pub edge_sens: Option<f64>,
    pub edge_spec: Option<f64>,
    pub r2_test: f64,
    pub chosen_r: usize,
}

fn rate(hits: usize, total: usize) -> Option<f64> {
    if total == 0 {
        None
    } else {
        Some(hits as f64 / total as f64)
    }
}

/// Score a selection summary against ground truth on an independent test set.
pub fn score(
    summary: &SelectionSummary,
    test: &Dataset,
    truth: &GroundTruth,
    chosen_r: usize,
) -> Result<FitMetrics> {
    let p = test.p();
    let true_nodes: BTreeSet<usize> = truth.spec.true_nodes.iter().copied().collect();
    let selected = &summary.selected_nodes;
    let node_tp = true_nodes.iter().filter(|j| selected.contains(j)).count();
    let node_tn = (0..p)
        .filter(|j| !true_nodes.contains(j) && !selected.contains(j))
        .count();
    let node_sens = rate(node_tp, true_nodes.len());
    let node_spec = rate(node_tn, p - true_nodes.len());

    let true_edges: BTreeSet<(usize, usize)> = truth.true_edges.iter().copied().collect();
    let selected_edges: BTreeSet<(usize, usize)> = summary.selected_edges.iter().copied().collect();
    let all_pairs = p * (p - 1) / 2;
    let edge_tp = true_edges
        .iter()
        .filter(|e| selected_edges.contains(e))
        .count();
    let edge_fp = selected_edges
        .iter()
        .filter(|e| !true_edges.contains(e))
        .count();
    let negatives = all_pairs - true_edges.len();
    let edge_sens = rate(edge_tp, true_edges.len());
    let edge_spec = rate(negatives - edge_fp, negatives);

    let pred = predict_posterior_mean(summary, test)?;
    let r2_test = r_squared(test.y(), &pred)?;
    Ok(FitMetrics {
        node_sens,
        node_spec,
        edge_sens,
        edge_spec,
        r2_test,
        chosen_r,
    })
}

/// Rank-tuning outcome: validation R^2 per candidate plus the argmax
/// (ties broken toward the smaller rank).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneResult {
    pub chosen_r: usize,
    pub validation_r2: Vec<(usize, f64)>,
}

/// Validation R^2 values within this distance of the maximum count as tied.
/// Surplus factors collapse to empty supports, so candidate ranks above the
/// truth score identically up to Monte-Carlo noise; without a tolerance the
/// "smaller rank wins ties" rule would never fire.
pub const RANK_TIE_TOLERANCE: f64 = 1e-3;

/// Fit one chain per candidate rank on the training set and pick the rank
/// with the best validation R^2; candidates within [`RANK_TIE_TOLERANCE`]
/// of the maximum are tied and the smallest wins.
#[allow(clippy::too_many_arguments)]
pub fn tune_rank(
    train: &Dataset,
    validation: &Dataset,
    candidates: &[usize],
    model: &ModelConfig,
    hyper: &HyperPriors,
    tuning: &MhTuning,
    n_iter: usize,
    n_burn: usize,
    seed: u64,
) -> Result<TuneResult> {
    if candidates.is_empty() {
        return Err(Error::Config("empty candidate rank set".into()));
    }
    if validation.n() < 2 {
        return Err(Error::Diagnostic(
            "validation set too small to compute R^2".into(),
        ));
    }
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();

    let eval = |&r: &usize| -> Result<(usize, f64)> {
        let cfg = ModelConfig {
            rank: r,
            ..model.clone()
        };
        cfg.validate()
            .map_err(|e| Error::Config(format!("candidate R={r}: {e}")))?;
        let fit = fit_dataset(
            train,
            &cfg,
            hyper,
            tuning,
            n_iter,
            n_burn,
            splitmix64(seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            1,
        )
        .map_err(|e| Error::Config(format!("candidate R={r}: {e}")))?;
        let pred = predict_posterior_mean(&fit.summary, validation)?;
        let r2 = r_squared(validation.y(), &pred)
            .map_err(|e| Error::Diagnostic(format!("candidate R={r}: {e}")))?;
        Ok((r, r2))
    };

    #[cfg(feature = "parallel")]
    let results: Result<Vec<(usize, f64)>> = {
        use rayon::prelude::*;
        cands.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Result<Vec<(usize, f64)>> = cands.iter().map(eval).collect();
    let validation_r2 = results?;

    let best = validation_r2
        .iter()
        .map(|&(_, r2)| r2)
        .fold(f64::NEG_INFINITY, f64::max);
    let chosen_r = validation_r2
        .iter()
        .filter(|&&(_, r2)| r2 >= best - RANK_TIE_TOLERANCE)
        .map(|&(r, _)| r)
        .min()
        .expect("candidate set is non-empty");
    Ok(TuneResult {
        chosen_r,
        validation_r2,
    })
}

/// One benchmark result row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub sigma_eps: f64,
    pub metrics: FitMetrics,
}

/// Generate, fit and score one scenario seed.
#[allow(clippy::too_many_arguments)]
pub fn benchmark_scenario(
    spec: &ScenarioSpec,
    model: &ModelConfig,
    hyper: &HyperPriors,
    tuning: &MhTuning,
    n_iter: usize,
    n_burn: usize,
    n_chains: usize,
) -> Result<BenchmarkRow> {
    let scenario = generate_scenario(spec)?;
    let fit = fit_dataset(
        &scenario.train,
        model,
        hyper,
        tuning,
        n_iter,
        n_burn,
        splitmix64(spec.seed),
        n_chains,
    )?;
    let metrics = score(&fit.summary, &scenario.test, &scenario.truth, model.rank)?;
    Ok(BenchmarkRow {
        scenario: spec.scenario,
        seed: spec.seed,
        sigma_eps: spec.sigma_eps,
        metrics,
    })
}

/// Fan a benchmark out over seeds (parallel when the feature is enabled).
#[allow(clippy::too_many_arguments)]
pub fn benchmark_seeds(
    base: &ScenarioSpec,
    seeds: &[u64],
    model: &ModelConfig,
    hyper: &HyperPriors,
    tuning: &MhTuning,
    n_iter: usize,
    n_burn: usize,
    n_chains: usize,
) -> Result<Vec<BenchmarkRow>> {
    let run = |&seed: &u64| -> Result<BenchmarkRow> {
        let spec = ScenarioSpec {
            seed,
            ..base.clone()
        };
        benchmark_scenario(&spec, model, hyper, tuning, n_iter, n_burn, n_chains)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(run).collect()
    }
}

/// Benchmark table in the Sens/Spec/R^2 column layout.
pub fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from(
        "scenario,seed,sigma_eps,node_sens,node_spec,edge_sens,edge_spec,r2_test,chosen_r\n",
    );
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
    for row in rows {
        out.push_str(&format!(
            "{:?},{},{},{},{},{},{},{},{}\n",
            row.scenario,
            row.seed,
            row.sigma_eps,
            fmt(row.metrics.node_sens),
            fmt(row.metrics.node_spec),
            fmt(row.metrics.edge_sens),
            fmt(row.metrics.edge_spec),
            row.metrics.r2_test,
            row.metrics.chosen_r
        ));
    }
    out
}
