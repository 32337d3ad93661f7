//! Joint prior structure for the latent selection fields (gamma, theta):
//! kernel matrix construction, eigendecomposition, and the positive
//! definiteness constraint on the cross-field correlation.
//!
//! With identical field covariances sigma*O and cross block rho*(sigma/delta)*I,
//! the joint 2P x 2P covariance is positive definite iff |rho|/delta <= min
//! eigenvalue of O, independently of sigma.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Choice of the P x P kernel matrix shared by the two latent fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum KernelSpec {
    /// o_pj = exp(-||s_p - s_j||^2 / 2) on the node coordinates; lengthscale
    /// is fixed to one, pre-scale coordinates to change it.
    SquaredExponential,
    /// Identity kernel: independent field entries.
    MarginalIdentity,
    /// Identity plus a constant correlation on an explicit list of node
    /// pairs (e.g. mirrored locations across hemispheres). Each node may
    /// appear in at most one pair.
    HemisphereSymmetric {
        pairs: Vec<(usize, usize)>,
        #[serde(default = "default_pair_correlation")]
        correlation: f64,
    },
}

fn default_pair_correlation() -> f64 {
    0.2
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::SquaredExponential
    }
}

/// Build the kernel matrix (row-major, P x P).
pub fn build_kernel(coords: Option<&[[f64; 3]]>, p: usize, spec: &KernelSpec) -> Result<Vec<f64>> {
    match spec {
        KernelSpec::SquaredExponential => {
            let coords = coords.ok_or_else(|| {
                Error::Config("squared-exponential kernel needs node coordinates".into())
            })?;
            if coords.len() != p {
                return Err(Error::Input(format!(
                    "coordinate count {} != node count {p}",
                    coords.len()
                )));
            }
            if coords.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
                return Err(Error::Input("non-finite node coordinate".into()));
            }
            let mut o = vec![0.0; p * p];
            for a in 0..p {
                o[a * p + a] = 1.0;
                for b in (a + 1)..p {
                    let d2: f64 = coords[a]
                        .iter()
                        .zip(&coords[b])
                        .map(|(u, v)| (u - v) * (u - v))
                        .sum();
                    let v = (-0.5 * d2).exp();
                    o[a * p + b] = v;
                    o[b * p + a] = v;
                }
            }
            Ok(o)
        }
        KernelSpec::MarginalIdentity => {
            let mut o = vec![0.0; p * p];
            for a in 0..p {
                o[a * p + a] = 1.0;
            }
            Ok(o)
        }
        KernelSpec::HemisphereSymmetric { pairs, correlation } => {
            if !(0.0..1.0).contains(correlation) {
                return Err(Error::Config(format!(
                    "pair correlation {correlation} outside [0, 1)"
                )));
            }
            let mut seen = vec![false; p];
            let mut o = vec![0.0; p * p];
            for a in 0..p {
                o[a * p + a] = 1.0;
            }
            for &(a, b) in pairs {
                if a >= p || b >= p || a == b {
                    return Err(Error::Config(format!("invalid node pair ({a},{b})")));
                }
                if seen[a] || seen[b] {
                    return Err(Error::Config(format!(
                        "node appears in more than one pair: ({a},{b})"
                    )));
                }
                seen[a] = true;
                seen[b] = true;
                o[a * p + b] = *correlation;
                o[b * p + a] = *correlation;
            }
            Ok(o)
        }
    }
}

/// Eigendecompose a symmetric matrix; returns (U, d) with d descending and
/// the convention O = U^T diag(d) U, i.e. row k of the returned U holds the
/// coordinates of every node in the k-th eigendirection.
pub fn eigendecompose(o: &[f64], p: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let m = DMatrix::from_fn(p, p, |r, c| o[r * p + c]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .ok_or(())
            .map_err(|_| "NaN eigenvalue")
            .unwrap()
    });
    let d: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "eigendecomposition produced non-finite eigenvalues".into(),
        ));
    }
    // Rows of U are the eigenvectors (so U^T diag(d) U reconstructs O).
    let u: Vec<Vec<f64>> = order
        .iter()
        .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
        .collect();
    Ok((u, d))
}

/// Positive-definiteness constraint of the joint (gamma, theta) covariance
/// after the sigma_gamma = sigma_g = sigma, sigma_c = sigma/delta
/// substitution: |rho| / delta <= d_min.
pub fn check_pd_constraint(rho: f64, delta: f64, d_min: f64) -> bool {
    debug_assert!(delta > 0.0 && d_min > 0.0);
    rho.abs() / delta <= d_min
}

/// Immutable prior structure shared by every chain of a fit.
#[derive(Debug, Clone)]
pub struct PriorStructure {
    p: usize,
    /// Kernel matrix, row-major.
    o: Vec<f64>,
    /// Eigenvector rows: u[k] is the k-th eigendirection; the per-node
    /// loading vector u_p used by the conditionals is `u[k][p]` over k.
    u: Vec<Vec<f64>>,
    /// Eigenvalues, descending, floored away from zero.
    d: Vec<f64>,
    /// Pre-fixed divisor for the cross-field scale sigma_c = sigma / delta.
    delta: f64,
    /// Notes from construction (eigenvalue flooring).
    pub build_warnings: Vec<String>,
}

impl PriorStructure {
    /// Assemble the prior structure for `p` nodes. When `delta` is absent the
    /// default max(10, ceil(1/d_min)) is used, which keeps the PD constraint
    /// satisfied over the whole rho support (-1, 1).
    pub fn build(
        coords: Option<&[[f64; 3]]>,
        p: usize,
        spec: &KernelSpec,
        delta: Option<f64>,
    ) -> Result<Self> {
        let o = build_kernel(coords, p, spec)?;
        let (u, mut d) = eigendecompose(&o, p)?;
        let mut warnings = Vec::new();
        let d_max = d[0];
        if d_max <= 0.0 {
            return Err(Error::Numerical("kernel matrix is not positive".into()));
        }
        let floor = 1e-10 * d_max;
        let mut floored = 0usize;
        for v in d.iter_mut() {
            if *v < floor {
                *v = floor;
                floored += 1;
            }
        }
        if floored > 0 {
            warnings.push(format!(
                "{floored} kernel eigenvalue(s) below {floor:.3e} were clamped; \
                 node coordinates may be (nearly) coincident"
            ));
        }
        let d_min = *d.last().unwrap();
        let delta = match delta {
            Some(v) => {
                if v <= 0.0 {
                    return Err(Error::Config(format!("delta must be positive, got {v}")));
                }
                if 1.0 / v > d_min {
                    warnings.push(format!(
                        "delta = {v} truncates the feasible rho range to |rho| <= {:.4}",
                        (v * d_min).min(1.0)
                    ));
                }
                v
            }
            None => 10.0f64.max((1.0 / d_min).ceil()),
        };
        Ok(PriorStructure {
            p,
            o,
            u,
            d,
            delta,
            build_warnings: warnings,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }
    pub fn kernel(&self) -> &[f64] {
        &self.o
    }
    /// Eigendirection k as a row (length P).
    pub fn eigen_row(&self, k: usize) -> &[f64] {
        &self.u[k]
    }
    pub fn eigenvalues(&self) -> &[f64] {
        &self.d
    }
    pub fn d_min(&self) -> f64 {
        *self.d.last().unwrap()
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Transform a node-indexed field into eigen coordinates: (U v)_k = u_k . v.
    pub fn to_eigen(&self, v: &[f64]) -> Vec<f64> {
        self.u
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Inverse transform: v = U^T t.
    pub fn from_eigen(&self, t: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.p];
        for (k, row) in self.u.iter().enumerate() {
            let tk = t[k];
            for (vp, up) in v.iter_mut().zip(row) {
                *vp += tk * up;
            }
        }
        v
    }
}
