//! On-disk formats: delimited numeric datasets, columnar chain files with a
//! JSON sidecar, selection/diagnostic artifacts, and the run configuration.
//!
//! Numeric text is written with Rust's shortest-roundtrip float formatting,
//! so save-then-load reproduces every value bit for bit and identical runs
//! produce byte-identical files.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::MonitoredScalar;
use crate::model::{Dataset, LatentState};
use crate::sampler::{Ablation, HyperPriors, MhTuning, ModelConfig, ParameterState, PosteriorChain};
use crate::sim::ScenarioSpec;

/// A dataset together with ingestion warnings (ones-column prepended,
/// nonzero diagonals zeroed, ...).
#[derive(Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

fn parse_table(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line =
            line.map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        if lineno == 0 {
            // One-line header, content ignored.
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (colno, tok) in trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .enumerate()
        {
            let v: f64 = tok.parse().map_err(|_| {
                Error::Input(format!(
                    "{} row {} column {}: cannot parse '{tok}'",
                    path.display(),
                    lineno,
                    colno + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Input(format!(
                    "{} row {} column {}: non-finite value",
                    path.display(),
                    lineno,
                    colno + 1
                )));
            }
            row.push(v);
        }
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::Input(format!(
                    "{} row {}: expected {w} columns, found {}",
                    path.display(),
                    lineno,
                    row.len()
                )));
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    Ok(rows)
}

fn write_table(path: &Path, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out)
        .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

/// Load a dataset directory: `y.csv`, `w.csv`, `x.csv`, `z.csv` and an
/// optional `coords.csv`. `z.csv` holds either one row per subject with the
/// P(P-1)/2 upper-triangle values in row-major (k < l) order, or N stacked
/// P x P blocks.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let y_rows = parse_table(&dir.join("y.csv"))?;
    let n = y_rows.len();
    if n == 0 {
        return Err(Error::Input(format!(
            "{}: empty outcome table",
            dir.join("y.csv").display()
        )));
    }
    let y: Vec<f64> = y_rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != 1 {
                Err(Error::Input(format!(
                    "y.csv row {}: expected a single column",
                    i + 1
                )))
            } else {
                Ok(row[0])
            }
        })
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let mut w_rows = parse_table(&dir.join("w.csv"))?;
    if w_rows.len() != n {
        return Err(Error::Input(format!(
            "w.csv has {} rows, y.csv has {n}",
            w_rows.len()
        )));
    }
    if w_rows.iter().any(|r| r.first() != Some(&1.0)) {
        for r in &mut w_rows {
            r.insert(0, 1.0);
        }
        warnings.push("w.csv lacks a leading ones column; intercept prepended".into());
    }

    let x_rows = parse_table(&dir.join("x.csv"))?;
    if x_rows.len() != n {
        return Err(Error::Input(format!(
            "x.csv has {} rows, y.csv has {n}",
            x_rows.len()
        )));
    }
    let p = x_rows[0].len();
    if p < 2 {
        return Err(Error::Input("x.csv must have at least two columns".into()));
    }

    let z_rows = parse_table(&dir.join("z.csv"))?;
    let tri = p * (p - 1) / 2;
    let z_mats: Vec<Vec<f64>> = if z_rows.len() == n && z_rows[0].len() == tri {
        // Upper-triangle rows, row-major over (k < l).
        z_rows
            .iter()
            .map(|row| {
                let mut m = vec![0.0; p * p];
                let mut idx = 0;
                for k in 0..p {
                    for l in (k + 1)..p {
                        m[k * p + l] = row[idx];
                        m[l * p + k] = row[idx];
                        idx += 1;
                    }
                }
                m
            })
            .collect()
    } else if z_rows.len() == n * p && z_rows[0].len() == p {
        (0..n)
            .map(|i| {
                let mut m = Vec::with_capacity(p * p);
                for r in 0..p {
                    m.extend_from_slice(&z_rows[i * p + r]);
                }
                m
            })
            .collect()
    } else {
        return Err(Error::Input(format!(
            "z.csv shape {}x{} matches neither {n} upper-triangle rows of {tri} \
             nor {} stacked rows of {p}",
            z_rows.len(),
            z_rows[0].len(),
            n * p
        )));
    };

    let coords_path = dir.join("coords.csv");
    let coords = if coords_path.exists() {
        let rows = parse_table(&coords_path)?;
        if rows.len() != p {
            return Err(Error::Input(format!(
                "coords.csv has {} rows, expected {p}",
                rows.len()
            )));
        }
        Some(
            rows.iter()
                .enumerate()
                .map(|(i, r)| {
                    if r.len() != 3 {
                        Err(Error::Input(format!(
                            "coords.csv row {}: expected 3 columns",
                            i + 1
                        )))
                    } else {
                        Ok([r[0], r[1], r[2]])
                    }
                })
                .collect::<Result<Vec<[f64; 3]>>>()?,
        )
    } else {
        None
    };

    let dataset = Dataset::new(y, w_rows, x_rows, z_mats, coords)?;
    warnings.extend(dataset.ingest_warnings.iter().cloned());
    Ok(LoadedDataset { dataset, warnings })
}

/// Save a dataset directory (upper-triangle connectivity layout). Returns
/// the created file paths.
pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Input(format!("cannot create {}: {e}", dir.display())))?;
    let n = data.n();
    let p = data.p();
    let mut created = Vec::new();

    let path = dir.join("y.csv");
    write_table(&path, "y", (0..n).map(|i| vec![data.y()[i]]))?;
    created.push(path);

    let path = dir.join("w.csv");
    let h: Vec<String> = (0..data.q()).map(|k| format!("w{k}")).collect();
    write_table(&path, &h.join(","), (0..n).map(|i| data.w_row(i)))?;
    created.push(path);

    let path = dir.join("x.csv");
    let h: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    write_table(&path, &h.join(","), (0..n).map(|i| data.x_row(i)))?;
    created.push(path);

    let path = dir.join("z.csv");
    let mut h = Vec::new();
    for k in 0..p {
        for l in (k + 1)..p {
            h.push(format!("z{k}_{l}"));
        }
    }
    write_table(
        &path,
        &h.join(","),
        (0..n).map(|i| {
            let zi = data.z_subject(i);
            let mut row = Vec::with_capacity(p * (p - 1) / 2);
            for k in 0..p {
                for l in (k + 1)..p {
                    row.push(zi[k * p + l]);
                }
            }
            row
        }),
    )?;
    created.push(path);

    if let Some(coords) = data.coords() {
        let path = dir.join("coords.csv");
        write_table(
            &path,
            "sx,sy,sz",
            coords.iter().map(|c| vec![c[0], c[1], c[2]]),
        )?;
        created.push(path);
    }
    Ok(created)
}

/// JSON sidecar stored next to each chain file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainMeta {
    pub format_version: u32,
    pub seed: u64,
    pub chain_index: usize,
    pub n_iter: usize,
    pub n_burn: usize,
    pub retained: usize,
    pub p: usize,
    pub q: usize,
    pub rank: usize,
    pub ablation: Ablation,
    pub lambda_max: f64,
    pub accept_rho: f64,
    pub accept_lambda: f64,
    /// Exact resolved configuration used for the run.
    pub config: serde_json::Value,
    pub columns: Vec<String>,
}

/// Documented column order of the chain CSV.
pub fn chain_columns(p: usize, q: usize, rank: usize) -> Vec<String> {
    let mut cols = vec!["iter".to_string()];
    cols.extend((0..q).map(|k| format!("eta.{k}")));
    cols.extend((0..p).map(|j| format!("beta_tilde.{j}")));
    cols.extend((0..p).map(|j| format!("gamma.{j}")));
    cols.extend((0..p).map(|j| format!("theta.{j}")));
    for r in 0..rank {
        cols.extend((0..p).map(|j| format!("theta_r{r}.{j}")));
    }
    for r in 0..rank {
        cols.extend((0..p).map(|j| format!("alpha_r{r}.{j}")));
    }
    cols.extend(
        [
            "sigma_beta",
            "sigma_alpha",
            "sigma_theta",
            "sigma_eps",
            "sigma",
            "rho",
            "lambda",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    cols.extend((0..p).map(|j| format!("node_ind.{j}")));
    for r in 0..rank {
        cols.extend((0..p).map(|j| format!("net_ind_r{r}.{j}")));
    }
    cols
}

/// Write a chain as a columnar CSV plus its JSON sidecar.
pub fn save_chain(
    chain: &PosteriorChain,
    config_echo: &serde_json::Value,
    csv_path: &Path,
    meta_path: &Path,
) -> Result<()> {
    let columns = chain_columns(chain.p, chain.q, chain.rank);
    let mut out = String::new();
    out.push_str(&columns.join(","));
    out.push('\n');
    for (t, state) in chain.states.iter().enumerate() {
        let mut row: Vec<String> = Vec::with_capacity(columns.len());
        row.push((chain.n_burn + t + 1).to_string());
        for v in &state.eta {
            row.push(format!("{v}"));
        }
        for v in &state.latent.beta_tilde {
            row.push(format!("{v}"));
        }
        for v in &state.latent.gamma {
            row.push(format!("{v}"));
        }
        for v in &state.latent.theta {
            row.push(format!("{v}"));
        }
        for tr in &state.latent.theta_r {
            for v in tr {
                row.push(format!("{v}"));
            }
        }
        for al in &state.latent.alpha_tilde {
            for v in al {
                row.push(format!("{v}"));
            }
        }
        for v in [
            state.sigma_beta,
            state.sigma_alpha,
            state.sigma_theta,
            state.sigma_eps,
            state.sigma,
            state.rho,
            state.latent.lambda,
        ] {
            row.push(format!("{v}"));
        }
        for v in &chain.node_ind[t] {
            row.push(v.to_string());
        }
        for v in &chain.net_ind[t] {
            row.push(v.to_string());
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(csv_path, out)
        .map_err(|e| Error::Input(format!("cannot write {}: {e}", csv_path.display())))?;

    let meta = ChainMeta {
        format_version: 1,
        seed: chain.seed,
        chain_index: chain.chain_index,
        n_iter: chain.n_iter,
        n_burn: chain.n_burn,
        retained: chain.retained(),
        p: chain.p,
        q: chain.q,
        rank: chain.rank,
        ablation: chain.ablation,
        lambda_max: chain.lambda_max,
        accept_rho: chain.accept_rho,
        accept_lambda: chain.accept_lambda,
        config: config_echo.clone(),
        columns,
    };
    write_json(meta_path, &meta)
}

/// Read a chain back from its CSV + sidecar pair.
pub fn load_chain(csv_path: &Path, meta_path: &Path) -> Result<PosteriorChain> {
    let meta: ChainMeta = read_json(meta_path)?;
    let (p, q, rank) = (meta.p, meta.q, meta.rank);
    let rows = parse_table(csv_path)?;
    if rows.len() != meta.retained {
        return Err(Error::Input(format!(
            "{} holds {} rows, sidecar says {}",
            csv_path.display(),
            rows.len(),
            meta.retained
        )));
    }
    let expected_cols = chain_columns(p, q, rank).len();
    let mut states = Vec::with_capacity(rows.len());
    let mut node_ind = Vec::with_capacity(rows.len());
    let mut net_ind = Vec::with_capacity(rows.len());
    for (t, row) in rows.iter().enumerate() {
        if row.len() != expected_cols {
            return Err(Error::Input(format!(
                "{} row {}: expected {expected_cols} columns, found {}",
                csv_path.display(),
                t + 1,
                row.len()
            )));
        }
        let mut it = row.iter().copied();
        let _iter = it.next();
        let take = |it: &mut dyn Iterator<Item = f64>, k: usize| -> Vec<f64> {
            it.take(k).collect()
        };
        let eta = take(&mut it, q);
        let beta_tilde = take(&mut it, p);
        let gamma = take(&mut it, p);
        let theta = take(&mut it, p);
        let theta_r: Vec<Vec<f64>> = (0..rank).map(|_| take(&mut it, p)).collect();
        let alpha_tilde: Vec<Vec<f64>> = (0..rank).map(|_| take(&mut it, p)).collect();
        let sigma_beta = it.next().unwrap();
        let sigma_alpha = it.next().unwrap();
        let sigma_theta = it.next().unwrap();
        let sigma_eps = it.next().unwrap();
        let sigma = it.next().unwrap();
        let rho = it.next().unwrap();
        let lambda = it.next().unwrap();
        let nind: Vec<u8> = (0..p).map(|_| it.next().unwrap() as u8).collect();
        let mind: Vec<u8> = (0..rank * p).map(|_| it.next().unwrap() as u8).collect();
        states.push(ParameterState {
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
        });
        node_ind.push(nind);
        net_ind.push(mind);
    }
    Ok(PosteriorChain {
        p,
        q,
        rank,
        n_iter: meta.n_iter,
        n_burn: meta.n_burn,
        seed: meta.seed,
        chain_index: meta.chain_index,
        ablation: meta.ablation,
        lambda_max: meta.lambda_max,
        states,
        node_ind,
        net_ind,
        accept_rho: meta.accept_rho,
        accept_lambda: meta.accept_lambda,
    })
}

/// Serialize any value as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Input(format!("cannot serialize {}: {e}", path.display())))?;
    fs::write(path, text)
        .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// Run configuration shared by every CLI command. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory (fit/tune) or output target of `simulate`.
    pub data_dir: Option<PathBuf>,
    /// Validation dataset directory (tune).
    pub validation_dir: Option<PathBuf>,
    /// Independent test dataset directory (evaluate).
    pub test_dir: Option<PathBuf>,
    /// Ground-truth JSON produced by `simulate` (evaluate).
    pub truth_path: Option<PathBuf>,
    /// Fit output directory holding summary and chain files (evaluate/diagnose).
    pub fit_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub scenario: Option<ScenarioSpec>,
    pub model: ModelConfig,
    pub hyper: HyperPriors,
    pub tuning: MhTuning,
    pub candidate_ranks: Vec<usize>,
    pub chains: usize,
    pub n_iter: usize,
    pub n_burn: usize,
    pub seed: u64,
    /// Exit with the non-convergence status when a monitored PSRF exceeds
    /// `gr_threshold` (diagnose/fit with `--strict`).
    pub strict: bool,
    pub gr_threshold: f64,
    pub monitor: Vec<String>,
    pub cutoff: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: None,
            validation_dir: None,
            test_dir: None,
            truth_path: None,
            fit_dir: None,
            out_dir: None,
            scenario: None,
            model: ModelConfig::default(),
            hyper: HyperPriors::default(),
            tuning: MhTuning::default(),
            candidate_ranks: vec![2, 3, 4, 5],
            chains: 1,
            n_iter: 10_000,
            n_burn: 5_000,
            seed: 1,
            strict: false,
            gr_threshold: 1.1,
            monitor: vec![
                "log_sigma_eps".into(),
                "lambda".into(),
                "rho".into(),
            ],
            cutoff: 0.5,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 1 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        if self.n_burn >= self.n_iter {
            return Err(Error::Config(format!(
                "n_burn ({}) must be smaller than n_iter ({})",
                self.n_burn, self.n_iter
            )));
        }
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(Error::Config("cutoff must lie in (0, 1)".into()));
        }
        if !(self.gr_threshold > 1.0) {
            return Err(Error::Config("gr_threshold must exceed 1".into()));
        }
        self.model.validate()?;
        self.hyper.validate()?;
        self.tuning.validate()?;
        if let Some(spec) = &self.scenario {
            spec.validate()?;
        }
        for m in &self.monitor {
            m.parse::<MonitoredScalar>()?;
        }
        Ok(())
    }

    pub fn monitored(&self) -> Result<Vec<MonitoredScalar>> {
        self.monitor.iter().map(|m| m.parse()).collect()
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}
