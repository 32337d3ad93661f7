//! `jnnts` command line: simulate synthetic studies, fit the model, tune the
//! sub-network rank, evaluate against ground truth, and diagnose chains.
//!
//! Every command takes `--config <file>` (JSON, unknown keys rejected) with
//! optional `--seed` and `--out` overrides. Exit codes: 0 success, 2 input
//! error, 3 configuration error, 4 numerical failure, 5 non-convergence
//! (with `--strict`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use jnnts_core::error::{Error, Result};
use jnnts_core::inference::{gelman_rubin, summarize, trace, ConvergenceReport, SelectionSummary};
use jnnts_core::io::{
    load_dataset, load_run_config, save_chain, save_dataset, write_json, RunConfig,
};
use jnnts_core::kernel::PriorStructure;
use jnnts_core::model::Dataset;
use jnnts_core::sampler::{run_chains, PosteriorChain};
use jnnts_core::sim::{generate_scenario, score, tune_rank, FitMetrics, GroundTruth, TuneResult};

#[derive(Parser)]
#[command(name = "jnnts", version, about = "Joint node-and-network thresholded selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/validation/test datasets and ground truth for a scenario.
    Simulate(CommonArgs),
    /// Run the posterior sampler and write chains, selection summary and diagnostics.
    Fit(CommonArgs),
    /// Pick the sub-network rank by validation R^2 over the candidate set.
    Tune(CommonArgs),
    /// Score a fit against ground truth on an independent test set.
    Evaluate(CommonArgs),
    /// Convergence diagnostics and trace data for an existing fit.
    Diagnose(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration (unknown keys rejected).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 5 when a monitored PSRF exceeds the threshold.
    #[arg(long)]
    strict: bool,
}

// Wrapped artifacts: every JSON output embeds the exact resolved config.
#[derive(Serialize, Deserialize)]
struct SummaryArtifact {
    config: serde_json::Value,
    summary: SelectionSummary,
}

#[derive(Serialize, Deserialize)]
struct TruthArtifact {
    config: serde_json::Value,
    truth: GroundTruth,
}

#[derive(Serialize, Deserialize)]
struct ConvergenceArtifact {
    config: serde_json::Value,
    report: ConvergenceReport,
}

#[derive(Serialize, Deserialize)]
struct TuneArtifact {
    config: serde_json::Value,
    result: TuneResult,
}

#[derive(Serialize, Deserialize)]
struct MetricsArtifact {
    config: serde_json::Value,
    metrics: FitMetrics,
}

/// Records every created path so partial outputs can be removed on failure.
#[derive(Default)]
struct OutputTracker {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

impl OutputTracker {
    fn dir(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            fs::create_dir_all(path)
                .map_err(|e| Error::Input(format!("cannot create {}: {e}", path.display())))?;
            self.dirs.push(path.to_path_buf());
        }
        Ok(())
    }

    fn file(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    fn discard(&self) {
        for f in self.files.iter().rev() {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir_all(d);
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&CommonArgs, fn(&RunConfig, &Path, bool) -> Result<()>) =
        match &cli.command {
            Command::Simulate(a) => (a, cmd_simulate),
            Command::Fit(a) => (a, cmd_fit),
            Command::Tune(a) => (a, cmd_tune),
            Command::Evaluate(a) => (a, cmd_evaluate),
            Command::Diagnose(a) => (a, cmd_diagnose),
        };
    match execute(args, run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &CommonArgs, run: fn(&RunConfig, &Path, bool) -> Result<()>) -> Result<()> {
    let mut cfg = load_run_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    let strict = args.strict || cfg.strict;
    let out_dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory (set out_dir or pass --out)".into()))?;
    run(&cfg, &out_dir, strict)
}

fn config_echo(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("run configuration serializes")
}

fn load_data_with_warnings(dir: &Path) -> Result<Dataset> {
    let loaded = load_dataset(dir)?;
    for w in &loaded.warnings {
        eprintln!("warning: {}: {w}", dir.display());
    }
    Ok(loaded.dataset)
}

fn build_prior(data: &Dataset, cfg: &RunConfig) -> Result<PriorStructure> {
    let prior = PriorStructure::build(
        data.coords(),
        data.p(),
        &cfg.model.kernel,
        cfg.model.delta,
    )?;
    for w in &prior.build_warnings {
        eprintln!("warning: {w}");
    }
    Ok(prior)
}

fn cmd_simulate(cfg: &RunConfig, out_dir: &Path, _strict: bool) -> Result<()> {
    let mut spec = cfg
        .scenario
        .clone()
        .ok_or_else(|| Error::Config("simulate needs a `scenario` block".into()))?;
    spec.seed = cfg.seed;
    let mut tracker = OutputTracker::default();
    let result = (|| -> Result<()> {
        tracker.dir(out_dir)?;
        let scenario = generate_scenario(&spec)?;
        for (name, data) in [
            ("train", &scenario.train),
            ("validation", &scenario.validation),
            ("test", &scenario.test),
        ] {
            let dir = out_dir.join(name);
            tracker.dir(&dir)?;
            for f in save_dataset(data, &dir)? {
                tracker.file(f);
            }
        }
        let truth_path = out_dir.join("truth.json");
        write_json(
            &truth_path,
            &TruthArtifact {
                config: config_echo(cfg),
                truth: scenario.truth,
            },
        )?;
        tracker.file(truth_path);
        println!("simulate: wrote train/validation/test and truth.json to {}", out_dir.display());
        Ok(())
    })();
    if result.is_err() {
        tracker.discard();
    }
    result
}

fn write_fit_artifacts(
    cfg: &RunConfig,
    out_dir: &Path,
    tracker: &mut OutputTracker,
    chains: &[PosteriorChain],
    summary: &SelectionSummary,
    report: &ConvergenceReport,
) -> Result<()> {
    let echo = config_echo(cfg);
    for chain in chains {
        let csv = out_dir.join(format!("chain_{}.csv", chain.chain_index));
        let meta = out_dir.join(format!("chain_{}.meta.json", chain.chain_index));
        save_chain(chain, &echo, &csv, &meta)?;
        tracker.file(csv);
        tracker.file(meta);
    }
    let path = out_dir.join("summary.json");
    write_json(
        &path,
        &SummaryArtifact {
            config: echo.clone(),
            summary: summary.clone(),
        },
    )?;
    tracker.file(path);
    let path = out_dir.join("convergence.json");
    write_json(
        &path,
        &ConvergenceArtifact {
            config: echo,
            report: report.clone(),
        },
    )?;
    tracker.file(path);
    Ok(())
}

fn convergence_report(cfg: &RunConfig, chains: &[PosteriorChain]) -> Result<ConvergenceReport> {
    let monitored = cfg.monitored()?;
    if chains.len() >= 2 {
        gelman_rubin(chains, &monitored)
    } else {
        // Single chain: trace summaries and acceptance rates only.
        let mut trace_summaries = Vec::new();
        for scalar in &monitored {
            let t = trace(&chains[0], *scalar);
            if t.len() >= 2 {
                trace_summaries.push(jnnts_core::inference::TraceSummary {
                    name: scalar.name(),
                    mean: jnnts_core::math::mean(&t),
                    variance: jnnts_core::math::sample_variance(&t),
                });
            }
        }
        Ok(ConvergenceReport {
            gr_statistics: vec![],
            trace_summaries,
            accept_rho: chains[0].accept_rho,
            accept_lambda: chains[0].accept_lambda,
        })
    }
}

fn check_strict(report: &ConvergenceReport, cfg: &RunConfig, strict: bool) -> Result<()> {
    if !strict {
        return Ok(());
    }
    for entry in &report.gr_statistics {
        if entry.psrf > cfg.gr_threshold {
            return Err(Error::NonConvergence(format!(
                "PSRF of {} is {:.4} (> {})",
                entry.name, entry.psrf, cfg.gr_threshold
            )));
        }
    }
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, out_dir: &Path, strict: bool) -> Result<()> {
    let data_dir = cfg
        .data_dir
        .clone()
        .ok_or_else(|| Error::Config("fit needs `data_dir`".into()))?;
    let data = load_data_with_warnings(&data_dir)?;
    let prior = build_prior(&data, cfg)?;
    let chains = run_chains(
        &data,
        &prior,
        &cfg.model,
        &cfg.hyper,
        &cfg.tuning,
        cfg.n_iter,
        cfg.n_burn,
        cfg.seed,
        cfg.chains,
    )?;
    let summary = summarize(&chains, cfg.cutoff)?;
    let report = convergence_report(cfg, &chains)?;

    let mut tracker = OutputTracker::default();
    let result = (|| -> Result<()> {
        tracker.dir(out_dir)?;
        write_fit_artifacts(cfg, out_dir, &mut tracker, &chains, &summary, &report)
    })();
    if result.is_err() {
        tracker.discard();
        return result;
    }
    println!(
        "fit: {} chain(s), {} retained draws each, {} node(s) and {} edge(s) selected",
        chains.len(),
        chains[0].retained(),
        summary.selected_nodes.len(),
        summary.selected_edges.len()
    );
    for entry in &report.gr_statistics {
        println!("  psrf {} = {:.4}", entry.name, entry.psrf);
    }
    // Artifacts stay on disk even when strict mode reports non-convergence.
    check_strict(&report, cfg, strict)
}

fn cmd_tune(cfg: &RunConfig, out_dir: &Path, _strict: bool) -> Result<()> {
    let data_dir = cfg
        .data_dir
        .clone()
        .ok_or_else(|| Error::Config("tune needs `data_dir`".into()))?;
    let val_dir = cfg
        .validation_dir
        .clone()
        .ok_or_else(|| Error::Config("tune needs `validation_dir`".into()))?;
    let train = load_data_with_warnings(&data_dir)?;
    let validation = load_data_with_warnings(&val_dir)?;
    if cfg.candidate_ranks.is_empty() {
        return Err(Error::Config("tune needs a non-empty `candidate_ranks`".into()));
    }
    let result = tune_rank(
        &train,
        &validation,
        &cfg.candidate_ranks,
        &cfg.model,
        &cfg.hyper,
        &cfg.tuning,
        cfg.n_iter,
        cfg.n_burn,
        cfg.seed,
    )?;
    let mut tracker = OutputTracker::default();
    let write = (|| -> Result<()> {
        tracker.dir(out_dir)?;
        let path = out_dir.join("tune.json");
        write_json(
            &path,
            &TuneArtifact {
                config: config_echo(cfg),
                result: result.clone(),
            },
        )?;
        tracker.file(path);
        Ok(())
    })();
    if write.is_err() {
        tracker.discard();
        return write;
    }
    println!("tune: chosen R = {}", result.chosen_r);
    for (r, r2) in &result.validation_r2 {
        println!("  R = {r}: validation R^2 = {r2:.4}");
    }
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, out_dir: &Path, _strict: bool) -> Result<()> {
    let fit_dir = cfg
        .fit_dir
        .clone()
        .ok_or_else(|| Error::Config("evaluate needs `fit_dir`".into()))?;
    let test_dir = cfg
        .test_dir
        .clone()
        .ok_or_else(|| Error::Config("evaluate needs `test_dir`".into()))?;
    let truth_path = cfg
        .truth_path
        .clone()
        .ok_or_else(|| Error::Config("evaluate needs `truth_path`".into()))?;
    let artifact: SummaryArtifact = jnnts_core::io::read_json(&fit_dir.join("summary.json"))?;
    let truth: TruthArtifact = jnnts_core::io::read_json(&truth_path)?;
    let test = load_data_with_warnings(&test_dir)?;
    let chosen_r = artifact.summary.edge_mpp.len();
    let metrics = score(&artifact.summary, &test, &truth.truth, chosen_r)?;

    let mut tracker = OutputTracker::default();
    let write = (|| -> Result<()> {
        tracker.dir(out_dir)?;
        let path = out_dir.join("metrics.json");
        write_json(
            &path,
            &MetricsArtifact {
                config: config_echo(cfg),
                metrics: metrics.clone(),
            },
        )?;
        tracker.file(path);
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
        let csv = format!(
            "node_sens,node_spec,edge_sens,edge_spec,r2_test,chosen_r\n{},{},{},{},{},{}\n",
            fmt(metrics.node_sens),
            fmt(metrics.node_spec),
            fmt(metrics.edge_sens),
            fmt(metrics.edge_spec),
            metrics.r2_test,
            metrics.chosen_r
        );
        let path = out_dir.join("metrics.csv");
        fs::write(&path, csv)
            .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))?;
        tracker.file(path);
        Ok(())
    })();
    if write.is_err() {
        tracker.discard();
        return write;
    }
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into());
    println!(
        "evaluate: node sens {} spec {}, edge sens {} spec {}, test R^2 {:.4}",
        fmt(metrics.node_sens),
        fmt(metrics.node_spec),
        fmt(metrics.edge_sens),
        fmt(metrics.edge_spec),
        metrics.r2_test
    );
    Ok(())
}

fn load_fit_chains(fit_dir: &Path) -> Result<Vec<PosteriorChain>> {
    let mut chains = Vec::new();
    loop {
        let csv = fit_dir.join(format!("chain_{}.csv", chains.len()));
        let meta = fit_dir.join(format!("chain_{}.meta.json", chains.len()));
        if !csv.exists() {
            break;
        }
        chains.push(jnnts_core::io::load_chain(&csv, &meta)?);
    }
    if chains.is_empty() {
        return Err(Error::Input(format!(
            "no chain files found in {}",
            fit_dir.display()
        )));
    }
    Ok(chains)
}

fn cmd_diagnose(cfg: &RunConfig, out_dir: &Path, strict: bool) -> Result<()> {
    let fit_dir = cfg
        .fit_dir
        .clone()
        .ok_or_else(|| Error::Config("diagnose needs `fit_dir`".into()))?;
    let chains = load_fit_chains(&fit_dir)?;
    let report = convergence_report(cfg, &chains)?;
    let monitored = cfg.monitored()?;

    let mut tracker = OutputTracker::default();
    let write = (|| -> Result<()> {
        tracker.dir(out_dir)?;
        let path = out_dir.join("gr.json");
        write_json(
            &path,
            &ConvergenceArtifact {
                config: config_echo(cfg),
                report: report.clone(),
            },
        )?;
        tracker.file(path);
        for scalar in &monitored {
            for chain in &chains {
                let values = trace(chain, *scalar);
                let mut text = String::from("iter,value\n");
                for (t, v) in values.iter().enumerate() {
                    text.push_str(&format!("{},{v}\n", chain.n_burn + t + 1));
                }
                let path = out_dir.join(format!(
                    "trace_{}_chain{}.csv",
                    scalar.name().replace('.', "_"),
                    chain.chain_index
                ));
                fs::write(&path, text)
                    .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))?;
                tracker.file(path);
            }
        }
        Ok(())
    })();
    if write.is_err() {
        tracker.discard();
        return write;
    }
    for entry in &report.gr_statistics {
        println!("psrf {} = {:.4}", entry.name, entry.psrf);
    }
    println!(
        "acceptance: rho {:.3}, lambda {:.3}",
        report.accept_rho, report.accept_lambda
    );
    check_strict(&report, cfg, strict)
}
