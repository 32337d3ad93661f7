//! Deterministic model mathematics: the regression predictor, threshold
//! functions that carve effective coefficients out of latent fields, and the
//! uniqueness verification for recovered clique sub-networks.
//!
//! The outcome model is
//!
//! ```text
//! y_i = eta' w_i + beta' x_i + sum_r (alpha_r)' Z_i alpha_r + eps_i
//! ```
//!
//! with a symmetric rank-R decomposition of the network coefficient matrix
//! A = sum_r alpha_r (x) alpha_r, and
//!
//! ```text
//! beta_p    = beta_tilde_p    * I(|gamma_p| > lambda)
//! alpha_r_p = alpha_tilde_r_p * I(|theta_p| > lambda) * I(|theta_r_p| > lambda)
//! ```

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Observed data for one fit: outcome, covariates (leading ones column),
/// node features, per-subject symmetric connectivity matrices with zero
/// diagonal, and optional node coordinates for spatial kernels.
#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    p: usize,
    q: usize,
    y: Vec<f64>,
    w_cols: Vec<Vec<f64>>,
    x_cols: Vec<Vec<f64>>,
    /// N stacked P x P blocks, row-major within a subject.
    z: Vec<f64>,
    coords: Option<Vec<[f64; 3]>>,
    /// Notes recorded while ingesting (nonzero diagonals zeroed, ...).
    pub ingest_warnings: Vec<String>,
}

impl Dataset {
    /// Build a dataset from row-major tables. `z_mats` holds one flattened
    /// P x P matrix per subject. Fails on dimension mismatches, non-finite
    /// values, asymmetry beyond 1e-8, or a covariate table whose first
    /// column is not identically one.
    pub fn new(
        y: Vec<f64>,
        w_rows: Vec<Vec<f64>>,
        x_rows: Vec<Vec<f64>>,
        z_mats: Vec<Vec<f64>>,
        coords: Option<Vec<[f64; 3]>>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Input("empty outcome vector".into()));
        }
        if w_rows.len() != n || x_rows.len() != n || z_mats.len() != n {
            return Err(Error::Input(format!(
                "row-count mismatch: y has {n}, W has {}, X has {}, Z has {} subjects",
                w_rows.len(),
                x_rows.len(),
                z_mats.len()
            )));
        }
        let q = w_rows[0].len();
        let p = x_rows[0].len();
        if q < 1 {
            return Err(Error::Input("W must have at least one column".into()));
        }
        if p < 2 {
            return Err(Error::Input("X must have at least two columns".into()));
        }
        for (i, v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Input(format!("non-finite outcome at row {i}")));
            }
        }

        let mut w_cols = vec![vec![0.0; n]; q];
        for (i, row) in w_rows.iter().enumerate() {
            if row.len() != q {
                return Err(Error::Input(format!("ragged W row {i}")));
            }
            for (k, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Input(format!(
                        "non-finite covariate at row {i}, column {k}"
                    )));
                }
                w_cols[k][i] = *v;
            }
        }
        if w_cols[0].iter().any(|&v| v != 1.0) {
            return Err(Error::Input(
                "W column 0 must be identically 1 (intercept)".into(),
            ));
        }

        let mut x_cols = vec![vec![0.0; n]; p];
        for (i, row) in x_rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Input(format!("ragged X row {i}")));
            }
            for (k, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Input(format!(
                        "non-finite node feature at row {i}, column {k}"
                    )));
                }
                x_cols[k][i] = *v;
            }
        }

        let mut warnings = Vec::new();
        let mut z = vec![0.0; n * p * p];
        let mut zeroed_diag = false;
        for (i, m) in z_mats.iter().enumerate() {
            if m.len() != p * p {
                return Err(Error::Input(format!(
                    "connectivity matrix {i} has {} entries, expected {}",
                    m.len(),
                    p * p
                )));
            }
            let base = i * p * p;
            for k in 0..p {
                for l in 0..p {
                    let v = m[k * p + l];
                    if !v.is_finite() {
                        return Err(Error::Input(format!(
                            "non-finite connectivity value for subject {i} at ({k},{l})"
                        )));
                    }
                    if k == l {
                        if v != 0.0 {
                            zeroed_diag = true;
                        }
                        continue;
                    }
                    if k < l {
                        let mirrored = m[l * p + k];
                        if (v - mirrored).abs() > 1e-8 * v.abs().max(mirrored.abs()).max(1.0) {
                            return Err(Error::Input(format!(
                                "connectivity matrix {i} asymmetric at ({k},{l}): {v} vs {mirrored}"
                            )));
                        }
                        // Mirror the upper triangle so symmetry is exact.
                        z[base + k * p + l] = v;
                        z[base + l * p + k] = v;
                    }
                }
            }
        }
        if zeroed_diag {
            warnings.push("nonzero connectivity diagonal entries were zeroed".into());
        }

        if let Some(c) = &coords {
            if c.len() != p {
                return Err(Error::Input(format!(
                    "coordinate table has {} rows, expected {p}",
                    c.len()
                )));
            }
            for (idx, pt) in c.iter().enumerate() {
                if pt.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Input(format!("non-finite coordinate at node {idx}")));
                }
            }
        }

        Ok(Dataset {
            n,
            p,
            q,
            y,
            w_cols,
            x_cols,
            z,
            coords,
            ingest_warnings: warnings,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn w_col(&self, k: usize) -> &[f64] {
        &self.w_cols[k]
    }
    pub fn x_col(&self, p: usize) -> &[f64] {
        &self.x_cols[p]
    }
    pub fn coords(&self) -> Option<&[[f64; 3]]> {
        self.coords.as_deref()
    }

    /// Row `node` of subject `i`'s connectivity matrix (length P, contiguous).
    #[inline]
    pub fn z_row(&self, i: usize, node: usize) -> &[f64] {
        let base = (i * self.p + node) * self.p;
        &self.z[base..base + self.p]
    }

    /// Subject `i`'s full P x P connectivity matrix, row-major.
    #[inline]
    pub fn z_subject(&self, i: usize) -> &[f64] {
        let base = i * self.p * self.p;
        &self.z[base..base + self.p * self.p]
    }

    /// Row `i` of W as an owned vector (W is stored by column).
    pub fn w_row(&self, i: usize) -> Vec<f64> {
        self.w_cols.iter().map(|c| c[i]).collect()
    }

    /// Row `i` of X as an owned vector.
    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x_cols.iter().map(|c| c[i]).collect()
    }

    /// Permute node indices (columns of X, rows/columns of every Z, coords).
    /// `perm[new_index] = old_index`. Used by relabeling-invariance tests.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Dataset> {
        if perm.len() != self.p {
            return Err(Error::Config("permutation length != P".into()));
        }
        let x_rows: Vec<Vec<f64>> = (0..self.n)
            .map(|i| perm.iter().map(|&old| self.x_cols[old][i]).collect())
            .collect();
        let z_mats: Vec<Vec<f64>> = (0..self.n)
            .map(|i| {
                let zi = self.z_subject(i);
                let mut m = vec![0.0; self.p * self.p];
                for (knew, &kold) in perm.iter().enumerate() {
                    for (lnew, &lold) in perm.iter().enumerate() {
                        m[knew * self.p + lnew] = zi[kold * self.p + lold];
                    }
                }
                m
            })
            .collect();
        let w_rows: Vec<Vec<f64>> = (0..self.n).map(|i| self.w_row(i)).collect();
        let coords = self
            .coords
            .as_ref()
            .map(|c| perm.iter().map(|&old| c[old]).collect());
        Dataset::new(self.y.clone(), w_rows, x_rows, z_mats, coords)
    }
}

/// Latent parameters that determine the effective coefficients.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatentState {
    pub beta_tilde: Vec<f64>,
    pub alpha_tilde: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_r: Vec<Vec<f64>>,
    pub lambda: f64,
}

impl LatentState {
    pub fn rank(&self) -> usize {
        self.alpha_tilde.len()
    }
}

/// Effective regression coefficients; `alphas[r]` is the factor of the r-th
/// sub-network component.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoefficientSet {
    pub eta: Vec<f64>,
    pub beta: Vec<f64>,
    pub alphas: Vec<Vec<f64>>,
}

impl CoefficientSet {
    /// Materialize A = sum_r alpha_r (x) alpha_r, row-major P x P. Entries
    /// (k,l) and (l,k) are assigned from the same accumulation so the result
    /// is symmetric bit-for-bit.
    pub fn a_matrix(&self) -> Vec<f64> {
        let p = self.beta.len();
        let mut a = vec![0.0; p * p];
        for k in 0..p {
            for l in k..p {
                let mut v = 0.0;
                for alpha in &self.alphas {
                    v += alpha[k] * alpha[l];
                }
                a[k * p + l] = v;
                a[l * p + k] = v;
            }
        }
        a
    }
}

/// Node indicator vector: element p is 1 iff |gamma_p| > lambda (strict).
pub fn threshold_node(gamma: &[f64], lambda: f64) -> Vec<u8> {
    debug_assert!(lambda >= 0.0);
    gamma.iter().map(|g| u8::from(g.abs() > lambda)).collect()
}

/// Sub-network indicator vector: element p is 1 iff both |theta_p| > lambda
/// and |theta_r_p| > lambda.
pub fn threshold_network(theta: &[f64], theta_r: &[f64], lambda: f64) -> Vec<u8> {
    debug_assert!(lambda >= 0.0);
    debug_assert_eq!(theta.len(), theta_r.len());
    theta
        .iter()
        .zip(theta_r)
        .map(|(t, tr)| u8::from(t.abs() > lambda && tr.abs() > lambda))
        .collect()
}

/// Apply the threshold masks: beta = beta_tilde o T(gamma; lambda) and
/// alpha_r = alpha_tilde_r o T(theta, theta_r; lambda).
pub fn effective_coefficients(state: &LatentState) -> (Vec<f64>, Vec<Vec<f64>>) {
    let node_mask = threshold_node(&state.gamma, state.lambda);
    let beta: Vec<f64> = state
        .beta_tilde
        .iter()
        .zip(&node_mask)
        .map(|(b, &m)| b * f64::from(m))
        .collect();
    let alphas: Vec<Vec<f64>> = state
        .alpha_tilde
        .iter()
        .zip(&state.theta_r)
        .map(|(at, tr)| {
            let mask = threshold_network(&state.theta, tr, state.lambda);
            at.iter()
                .zip(&mask)
                .map(|(a, &m)| a * f64::from(m))
                .collect()
        })
        .collect();
    (beta, alphas)
}

/// Evaluate the model mean for every subject using factor-wise quadratic
/// forms (A is never materialized).
pub fn predict(data: &Dataset, coeffs: &CoefficientSet) -> Result<Vec<f64>> {
    if coeffs.eta.len() != data.q() {
        return Err(Error::Config(format!(
            "eta has {} entries, W has {} columns",
            coeffs.eta.len(),
            data.q()
        )));
    }
    if coeffs.beta.len() != data.p() || coeffs.alphas.iter().any(|a| a.len() != data.p()) {
        return Err(Error::Config(
            "coefficient length does not match the number of nodes".into(),
        ));
    }
    let n = data.n();
    let p = data.p();
    let mut out = vec![0.0; n];
    for (k, e) in coeffs.eta.iter().enumerate() {
        let col = data.w_col(k);
        for i in 0..n {
            out[i] += e * col[i];
        }
    }
    for (j, b) in coeffs.beta.iter().enumerate() {
        if *b == 0.0 {
            continue;
        }
        let col = data.x_col(j);
        for i in 0..n {
            out[i] += b * col[i];
        }
    }
    for alpha in &coeffs.alphas {
        for i in 0..n {
            let mut quad = 0.0;
            for (node, ak) in alpha.iter().enumerate() {
                if *ak == 0.0 {
                    continue;
                }
                let row = data.z_row(i, node);
                let mut dot = 0.0;
                for l in 0..p {
                    dot += row[l] * alpha[l];
                }
                quad += ak * dot;
            }
            out[i] += quad;
        }
    }
    Ok(out)
}

/// Outcome of checking uniqueness of a recovered clique set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CliqueVerdict {
    /// Every support contains a node absent from all the others.
    Unique,
    /// At least one support has no private node; uniqueness cannot be certified.
    NotVerifiable,
    /// Some support is empty.
    Degenerate,
}

impl std::fmt::Display for CliqueVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliqueVerdict::Unique => write!(f, "unique"),
            CliqueVerdict::NotVerifiable => write!(f, "not-verifiable"),
            CliqueVerdict::Degenerate => write!(f, "degenerate"),
        }
    }
}

/// Check whether each support set contributes at least one node that appears
/// in no other set; that condition certifies the clique set as the unique and
/// minimal one consistent with the coefficient matrix.
pub fn verify_clique_uniqueness(supports: &[BTreeSet<usize>]) -> CliqueVerdict {
    if supports.iter().any(|g| g.is_empty()) {
        return CliqueVerdict::Degenerate;
    }
    for (r, g) in supports.iter().enumerate() {
        let mut has_private = false;
        'nodes: for node in g {
            for (k, other) in supports.iter().enumerate() {
                if k != r && other.contains(node) {
                    continue 'nodes;
                }
            }
            has_private = true;
            break;
        }
        if !has_private {
            return CliqueVerdict::NotVerifiable;
        }
    }
    CliqueVerdict::Unique
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn set(items: &[usize]) -> BTreeSet<usize> {
        items.iter().copied().collect()
    }

    #[test]
    fn threshold_node_examples() {
        assert_eq!(threshold_node(&[0.5, -2.0], 1.0), vec![0, 1]);
        assert_eq!(threshold_node(&[1.0], 1.0), vec![0]);
        assert_eq!(threshold_node(&[-0.3, 0.0, 2.5], 0.0), vec![1, 0, 1]);
    }

    #[test]
    fn threshold_network_examples() {
        assert_eq!(threshold_network(&[2.0, 2.0], &[0.0, 2.0], 1.0), vec![0, 1]);
        assert_eq!(threshold_network(&[0.0, 0.0], &[5.0, 5.0], 1.0), vec![0, 0]);
        assert_eq!(
            threshold_network(&[1.5, -1.5], &[-1.5, 1.5], 1.0),
            vec![1, 1]
        );
    }

    #[test]
    fn effective_coefficients_examples() {
        let state = LatentState {
            beta_tilde: vec![3.0, 4.0],
            alpha_tilde: vec![],
            gamma: vec![0.1, 9.0],
            theta: vec![],
            theta_r: vec![],
            lambda: 1.0,
        };
        let (beta, _) = effective_coefficients(&state);
        assert_eq!(beta, vec![0.0, 4.0]);

        let state = LatentState {
            beta_tilde: vec![1.0, 2.0, 3.0],
            alpha_tilde: vec![vec![1.0, 1.0, 1.0]],
            gamma: vec![5.0, 5.0, 5.0],
            theta: vec![2.0, 2.0, 0.0],
            theta_r: vec![vec![2.0, 0.0, 2.0]],
            lambda: 1.0,
        };
        let (beta, alphas) = effective_coefficients(&state);
        assert_eq!(beta, vec![1.0, 2.0, 3.0]); // identity mask
        assert_eq!(alphas[0], vec![1.0, 0.0, 0.0]); // conjunction mask
    }

    fn tiny_dataset(p: usize, z_entries: &[(usize, usize, f64)]) -> Dataset {
        let mut z = vec![0.0; p * p];
        for &(k, l, v) in z_entries {
            z[k * p + l] = v;
            z[l * p + k] = v;
        }
        Dataset::new(
            vec![0.0],
            vec![vec![1.0]],
            vec![vec![0.0; p]],
            vec![z],
            None,
        )
        .unwrap()
    }

    #[test]
    fn predict_rank_one_single_edge() {
        let p = 4;
        let data = tiny_dataset(p, &[(0, 1, 0.5)]);
        let mut alpha = vec![0.0; p];
        alpha[0] = 1.0;
        alpha[1] = 1.0;
        let coeffs = CoefficientSet {
            eta: vec![0.0],
            beta: vec![0.0; p],
            alphas: vec![alpha],
        };
        let pred = predict(&data, &coeffs).unwrap();
        assert!((pred[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn predict_null_model_is_zero() {
        let data = tiny_dataset(3, &[(0, 2, 1.25)]);
        let coeffs = CoefficientSet {
            eta: vec![0.0],
            beta: vec![0.0; 3],
            alphas: vec![vec![0.0; 3], vec![0.0; 3]],
        };
        assert_eq!(predict(&data, &coeffs).unwrap(), vec![0.0]);
    }

    #[test]
    fn predict_dimension_mismatch_is_config_error() {
        let data = tiny_dataset(3, &[]);
        let coeffs = CoefficientSet {
            eta: vec![0.0],
            beta: vec![0.0; 5],
            alphas: vec![],
        };
        assert!(matches!(
            predict(&data, &coeffs),
            Err(crate::Error::Config(_))
        ));
    }

    /// Quadratic-form route and <A, Z> inner-product route must agree.
    #[test]
    fn predict_matches_inner_product_route() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let (p, r, n) = (5usize, 2usize, 8usize);
        for _ in 0..50 {
            let z_mats: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let mut m = vec![0.0; p * p];
                    for k in 0..p {
                        for l in (k + 1)..p {
                            let v: f64 = rng.random_range(-2.0..2.0);
                            m[k * p + l] = v;
                            m[l * p + k] = v;
                        }
                    }
                    m
                })
                .collect();
            let x_rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let data = Dataset::new(
                vec![0.0; n],
                vec![vec![1.0]; n],
                x_rows,
                z_mats,
                None,
            )
            .unwrap();
            let coeffs = CoefficientSet {
                eta: vec![rng.random_range(-1.0..1.0)],
                beta: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
                alphas: (0..r)
                    .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
            };
            let quad = predict(&data, &coeffs).unwrap();
            let a = coeffs.a_matrix();
            for i in 0..n {
                let zi = data.z_subject(i);
                let mut inner = 0.0;
                for idx in 0..p * p {
                    inner += a[idx] * zi[idx];
                }
                let mut lin = coeffs.eta[0];
                for (j, b) in coeffs.beta.iter().enumerate() {
                    lin += b * data.x_col(j)[i];
                }
                let expected = lin + inner;
                assert!(
                    (quad[i] - expected).abs() <= 1e-10 * (1.0 + expected.abs()),
                    "routes diverge: {} vs {expected}",
                    quad[i]
                );
            }
        }
    }

    #[test]
    fn clique_verdicts() {
        assert_eq!(
            verify_clique_uniqueness(&[set(&[1, 2, 3]), set(&[3, 4, 5])]),
            CliqueVerdict::Unique
        );
        assert_eq!(
            verify_clique_uniqueness(&[set(&[1, 2]), set(&[1, 2])]),
            CliqueVerdict::NotVerifiable
        );
        assert_eq!(
            verify_clique_uniqueness(&[set(&[1, 2]), set(&[])]),
            CliqueVerdict::Degenerate
        );
    }

    #[test]
    fn dataset_rejects_bad_input() {
        // Asymmetric Z.
        let mut z = vec![0.0; 4];
        z[1] = 1.0;
        assert!(Dataset::new(
            vec![0.0],
            vec![vec![1.0]],
            vec![vec![0.0, 0.0]],
            vec![z],
            None
        )
        .is_err());
        // W without intercept column.
        assert!(Dataset::new(
            vec![0.0],
            vec![vec![2.0]],
            vec![vec![0.0, 0.0]],
            vec![vec![0.0; 4]],
            None
        )
        .is_err());
    }

    #[test]
    fn dataset_zeroes_diagonal_with_warning() {
        let mut z = vec![0.0; 4];
        z[0] = 3.0;
        let d = Dataset::new(
            vec![0.0],
            vec![vec![1.0]],
            vec![vec![0.0, 0.0]],
            vec![z],
            None,
        )
        .unwrap();
        assert_eq!(d.z_subject(0)[0], 0.0);
        assert_eq!(d.ingest_warnings.len(), 1);
    }

    proptest! {
        /// Strict threshold: |gamma_p| exactly equal to lambda never selects.
        #[test]
        fn threshold_strict_at_boundary(mag in 0.0f64..5.0, sign in proptest::bool::ANY) {
            let g = if sign { mag } else { -mag };
            prop_assert_eq!(threshold_node(&[g], mag), vec![0u8]);
        }

        /// Re-masking an already masked vector with the same state changes nothing.
        #[test]
        fn masking_is_idempotent(
            vals in proptest::collection::vec(-3.0f64..3.0, 6),
            gam in proptest::collection::vec(-3.0f64..3.0, 6),
            lam in 0.0f64..2.0
        ) {
            let state = LatentState {
                beta_tilde: vals.clone(),
                alpha_tilde: vec![vals.clone()],
                gamma: gam.clone(),
                theta: gam.clone(),
                theta_r: vec![gam.clone()],
                lambda: lam,
            };
            let (beta1, alphas1) = effective_coefficients(&state);
            let state2 = LatentState { beta_tilde: beta1.clone(), alpha_tilde: alphas1.clone(), ..state };
            let (beta2, alphas2) = effective_coefficients(&state2);
            prop_assert_eq!(beta1, beta2);
            prop_assert_eq!(alphas1, alphas2);
        }
    }

    /// Support consistency: a_ij != 0 implies {i,j} lies inside some factor's
    /// support, on random sparse instances, skipping near-cancellations.
    #[test]
    fn reconstructed_a_is_support_consistent() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let p = 8;
        let mut checked = 0;
        while checked < 100 {
            let alphas: Vec<Vec<f64>> = (0..2)
                .map(|_| {
                    (0..p)
                        .map(|_| {
                            if rng.random::<f64>() < 0.4 {
                                rng.random_range(0.5..2.0)
                                    * if rng.random::<bool>() { 1.0 } else { -1.0 }
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect();
            let supports: Vec<BTreeSet<usize>> = alphas
                .iter()
                .map(|a| {
                    a.iter()
                        .enumerate()
                        .filter(|(_, v)| **v != 0.0)
                        .map(|(i, _)| i)
                        .collect()
                })
                .collect();
            let coeffs = CoefficientSet {
                eta: vec![],
                beta: vec![0.0; p],
                alphas,
            };
            let a = coeffs.a_matrix();
            // Reject instances where covered entries cancel to ~0.
            let mut cancelled = false;
            for k in 0..p {
                for l in 0..p {
                    if k == l {
                        continue;
                    }
                    let covered = supports
                        .iter()
                        .any(|g| g.contains(&k) && g.contains(&l));
                    if covered && a[k * p + l].abs() < 1e-12 {
                        cancelled = true;
                    }
                    if !covered {
                        assert_eq!(a[k * p + l], 0.0, "support leak at ({k},{l})");
                    }
                }
            }
            if cancelled {
                continue;
            }
            for k in 0..p {
                for l in 0..p {
                    if k != l && a[k * p + l] != 0.0 {
                        assert!(
                            supports.iter().any(|g| g.contains(&k) && g.contains(&l)),
                            "nonzero a_kl outside every support"
                        );
                    }
                }
            }
            checked += 1;
        }
    }
}
