//! Diagnostic probes (run explicitly with --ignored): long joint-distribution
//! check, plus a replicated partial-sweep variant that exercises one
//! conditional at a time to localize inconsistencies.

mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use jnnts_core::kernel::{KernelSpec, PriorStructure};
use jnnts_core::math::{mean, sample_variance};
use jnnts_core::sampler::{
    draw_state_from_prior, model_mean, Ablation, GibbsSampler, HyperPriors, MhTuning,
    ModelConfig, ParameterState,
};

#[test]
#[ignore]
fn probe_cache_drift() {
    let (p, n, rank) = (4usize, 15usize, 1usize);
    let seed = 31u64;
    let hyper = HyperPriors::with_ig(3.0, 3.0);
    let model = ModelConfig {
        rank,
        kernel: KernelSpec::MarginalIdentity,
        ablation: Ablation::Full,
        delta: None,
    };
    let tuning = MhTuning {
        adapt: false,
        ..MhTuning::default()
    };
    let data = random_dataset(seed, n, p, 1);
    let prior = PriorStructure::build(data.coords(), p, &model.kernel, model.delta).unwrap();
    let mut sampler = GibbsSampler::new(&data, &prior, &model, &hyper, &tuning, seed, 0).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x2222);
    let init = draw_state_from_prior(p, 1, &prior, &model, &hyper, &mut rng);
    sampler.set_state(init).unwrap();
    for sweep in 0..400 {
        sampler.sweep().unwrap();
        let mean1 = model_mean(&data, sampler.state()).unwrap();
        let sd1 = sampler.state().sigma_eps.sqrt();
        let y1: Vec<f64> = mean1.iter().map(|m| m + sd1 * std_normal(&mut rng)).collect();
        sampler.set_outcome(&y1).unwrap();
        let err = sampler.cache_consistency_error();
        if err > 1e-6 {
            println!("sweep {sweep}: cache error {err}");
        }
    }
    println!("final cache error: {}", sampler.cache_consistency_error());
}

#[test]
#[ignore]
fn probe_long_chain_subsets() {
    let (p, n, rank) = (4usize, 15usize, 1usize);
    let seed = 31u64;
    let hyper = HyperPriors::with_ig(3.0, 3.0);
    let model = ModelConfig {
        rank,
        kernel: KernelSpec::MarginalIdentity,
        ablation: Ablation::Full,
        delta: None,
    };
    let tuning = MhTuning {
        adapt: false,
        ..MhTuning::default()
    };
    let data = random_dataset(seed, n, p, 1);
    let prior = PriorStructure::build(data.coords(), p, &model.kernel, model.delta).unwrap();

    let all = [
        Up::Eta,
        Up::BetaTilde,
        Up::Alpha,
        Up::ThetaR,
        Up::GammaEl,
        Up::ThetaEl,
        Up::Vars,
        Up::Rho,
        Up::Lambda,
    ];
    let mut subsets: Vec<(String, Vec<Up>)> = vec![("FULL".into(), all.to_vec())];
    for skip in 0..all.len() {
        let ups: Vec<Up> = all
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, u)| *u)
            .collect();
        subsets.push((format!("minus {:?}", all[skip]), ups));
    }

    subsets.push(("core TR+TE+V".into(), vec![Up::ThetaR, Up::ThetaEl, Up::Vars]));
    subsets.push(("core TE+V".into(), vec![Up::ThetaEl, Up::Vars]));
    subsets.push(("core TR+TE".into(), vec![Up::ThetaR, Up::ThetaEl]));
    subsets.push(("core TR+V".into(), vec![Up::ThetaR, Up::Vars]));
    subsets.push((
        "core A+TR+TE+V".into(),
        vec![Up::Alpha, Up::ThetaR, Up::ThetaEl, Up::Vars],
    ));
    subsets.push(("core TE only".into(), vec![Up::ThetaEl]));

    let cycles = 30_000usize;
    let watch = [
        "gamma_sq",
        "theta_sq",
        "alpha_sq",
        "theta_r_sq",
        "lambda",
        "rho_sq",
        "sigma_beta",
        "sigma_alpha",
        "sigma_theta",
        "sigma_eps",
        "sigma",
    ];
    let reference = analytic_reference();
    for (label, ups) in &subsets {
        let mut sampler =
            GibbsSampler::new(&data, &prior, &model, &hyper, &tuning, seed, 0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x2222);
        let init = draw_state_from_prior(p, 1, &prior, &model, &hyper, &mut rng);
        sampler.set_state(init).unwrap();
        let mut acc: Vec<f64> = vec![0.0; reference.len()];
        for _ in 0..cycles {
            for u in ups {
                apply(&mut sampler, *u, p, rank);
            }
            let mean1 = model_mean(&data, sampler.state()).unwrap();
            let sd1 = sampler.state().sigma_eps.sqrt();
            let y1: Vec<f64> = mean1.iter().map(|m| m + sd1 * std_normal(&mut rng)).collect();
            sampler.set_outcome(&y1).unwrap();
            for (k, (_, v)) in stats(sampler.state()).iter().enumerate() {
                acc[k] += v;
            }
        }
        let mut line = format!("{label:>16}: ");
        for w in &watch {
            let k = reference.iter().position(|(nm, _)| nm == w).unwrap();
            let m = acc[k] / cycles as f64;
            let rel = (m - reference[k].1) / reference[k].1.abs().max(0.5);
            line.push_str(&format!("{w}={rel:+.2} "));
        }
        println!("{line}");
    }
}

#[test]
#[ignore]
fn probe_null_design_prior_block() {
    // X = Z = 0: the likelihood involves only eta and sigma_eps, so the
    // latent fields and their hyper-parameters must follow the exact prior.
    let (p, n, rank) = (4usize, 15usize, 1usize);
    let seed = 131u64;
    let hyper = HyperPriors::with_ig(3.0, 3.0);
    let model = ModelConfig {
        rank,
        kernel: KernelSpec::MarginalIdentity,
        ablation: Ablation::Full,
        delta: None,
    };
    let tuning = MhTuning {
        adapt: false,
        ..MhTuning::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let y: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
    let data = jnnts_core::model::Dataset::new(
        y,
        vec![vec![1.0]; n],
        vec![vec![0.0; p]; n],
        vec![vec![0.0; p * p]; n],
        None,
    )
    .unwrap();
    let prior = PriorStructure::build(None, p, &model.kernel, model.delta).unwrap();
    let mut sampler = GibbsSampler::new(&data, &prior, &model, &hyper, &tuning, seed, 0).unwrap();
    let init = draw_state_from_prior(p, 1, &prior, &model, &hyper, &mut rng);
    sampler.set_state(init).unwrap();

    let cycles = 60_000usize;
    let reference = analytic_reference();
    let mut acc = vec![0.0; reference.len()];
    let mut acc_sq = vec![0.0; reference.len()];
    for _ in 0..cycles {
        sampler.sweep().unwrap();
        for (k, (_, v)) in stats(sampler.state()).iter().enumerate() {
            acc[k] += v;
            acc_sq[k] += v * v;
        }
    }
    for (k, (nm, refv)) in reference.iter().enumerate() {
        if *nm == "sigma_eps" || *nm == "eta" {
            continue; // likelihood-coupled here, reference not applicable
        }
        let m = acc[k] / cycles as f64;
        let sd = (acc_sq[k] / cycles as f64 - m * m).sqrt();
        // Effective sample size unknown; report raw relative drift.
        println!(
            "{nm:>12}: mean {m:+.4} vs {refv:+.4}  (rel {:+.3}, sd {sd:.3})",
            (m - refv) / refv.abs().max(0.5)
        );
    }
}

#[test]
#[ignore]
fn probe_ensemble_full_sweep() {
    // Many independent successive-conditional chains, each initialized from
    // an exact prior draw (already stationary). Per-chain averages are
    // i.i.d., so the z-scores below carry honest standard errors regardless
    // of within-chain mixing.
    let (p, n, rank) = (4usize, 15usize, 1usize);
    let seed = 2024u64;
    let hyper = HyperPriors::with_ig(3.0, 3.0);
    let model = ModelConfig {
        rank,
        kernel: KernelSpec::MarginalIdentity,
        ablation: Ablation::Full,
        delta: None,
    };
    let tuning = MhTuning {
        adapt: false,
        ..MhTuning::default()
    };
    let data = random_dataset(seed, n, p, 1);
    let prior = PriorStructure::build(data.coords(), p, &model.kernel, model.delta).unwrap();

    let n_chains = 240usize;
    let len = 1200usize;
    let reference = analytic_reference();
    let mut chain_means: Vec<Vec<f64>> = vec![Vec::with_capacity(n_chains); reference.len()];
    for c in 0..n_chains {
        let cseed = seed ^ ((c as u64 + 1) * 0x9E37_79B9);
        let mut sampler =
            GibbsSampler::new(&data, &prior, &model, &hyper, &tuning, cseed, 0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(cseed ^ 0x5555);
        let init = draw_state_from_prior(p, 1, &prior, &model, &hyper, &mut rng);
        sampler.set_state(init).unwrap();
        let mean0 = model_mean(&data, sampler.state()).unwrap();
        let sd0 = sampler.state().sigma_eps.sqrt();
        let y0: Vec<f64> = mean0.iter().map(|m| m + sd0 * std_normal(&mut rng)).collect();
        sampler.set_outcome(&y0).unwrap();
        let mut acc = vec![0.0; reference.len()];
        for _ in 0..len {
            sampler.sweep().unwrap();
            let mean1 = model_mean(&data, sampler.state()).unwrap();
            let sd1 = sampler.state().sigma_eps.sqrt();
            let y1: Vec<f64> = mean1.iter().map(|m| m + sd1 * std_normal(&mut rng)).collect();
            sampler.set_outcome(&y1).unwrap();
            for (k, (_, v)) in stats(sampler.state()).iter().enumerate() {
                acc[k] += v;
            }
        }
        for k in 0..reference.len() {
            chain_means[k].push(acc[k] / len as f64);
        }
    }
    for (k, (nm, refv)) in reference.iter().enumerate() {
        if *nm == "sigma_eps" || *nm == "eta" {
            continue;
        }
        let m = mean(&chain_means[k]);
        let se = (sample_variance(&chain_means[k]) / n_chains as f64).sqrt();
        println!(
            "{nm:>12}: mean {m:+.4} vs {refv:+.4}  z = {:+.2}",
            (m - refv) / se
        );
    }
}

#[test]
#[ignore]
fn probe_joint_distribution() {
    let cfg = JointCheck {
        p: 4,
        n: 15,
        rank: 1,
        n_chains: 400,
        cycles_per_chain: 50,
        prior_draws: 400_000,
        seed: 31,
    };
    let zs = run_joint_distribution_check(&cfg);
    for (name, z) in &zs {
        println!("{name:>20}  z = {z:+.3}");
    }
}

#[derive(Clone, Copy, Debug)]
enum Up {
    Eta,
    BetaTilde,
    Alpha,
    ThetaR,
    GammaEl,
    ThetaEl,
    Vars,
    Rho,
    Lambda,
}

fn apply(s: &mut GibbsSampler, u: Up, p: usize, rank: usize) {
    match u {
        Up::Eta => s.update_eta().unwrap(),
        Up::BetaTilde => s.update_beta_tilde().unwrap(),
        Up::Alpha => {
            for r in 0..rank {
                for j in 0..p {
                    s.update_alpha_tilde_element(r, j);
                }
            }
        }
        Up::ThetaR => {
            for r in 0..rank {
                for j in 0..p {
                    s.update_theta_r_element(r, j);
                }
            }
        }
        Up::GammaEl => {
            for j in 0..p {
                s.update_gamma_element(j);
            }
        }
        Up::ThetaEl => {
            for j in 0..p {
                s.update_theta_element(j);
            }
        }
        Up::Vars => s.update_variances(),
        Up::Rho => {
            s.mh_update_rho();
        }
        Up::Lambda => {
            s.mh_update_lambda();
        }
    }
}

fn stats(state: &ParameterState) -> Vec<(&'static str, f64)> {
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let msq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    let cross = state
        .latent
        .gamma
        .iter()
        .zip(&state.latent.theta)
        .map(|(g, t)| g * t)
        .sum::<f64>()
        / state.latent.gamma.len() as f64;
    vec![
        ("gamma", m(&state.latent.gamma)),
        ("gamma_sq", msq(&state.latent.gamma)),
        ("theta", m(&state.latent.theta)),
        ("theta_sq", msq(&state.latent.theta)),
        ("cross", cross),
        ("rho_cross", state.rho * cross),
        ("beta_tilde", m(&state.latent.beta_tilde)),
        ("alpha", m(&state.latent.alpha_tilde[0])),
        ("alpha_sq", msq(&state.latent.alpha_tilde[0])),
        ("theta_r", m(&state.latent.theta_r[0])),
        ("theta_r_sq", msq(&state.latent.theta_r[0])),
        ("lambda", state.latent.lambda),
        ("rho", state.rho),
        ("rho_sq", state.rho * state.rho),
        ("sigma_beta", state.sigma_beta),
        ("sigma_alpha", state.sigma_alpha),
        ("sigma_theta", state.sigma_theta),
        ("sigma_eps", state.sigma_eps),
        ("sigma", state.sigma),
        ("eta", state.eta[0]),
    ]
}

// Analytic prior moments under the identity kernel, IG(3, 3) variances,
// lambda_max = 1.5, delta = 10.
fn analytic_reference() -> Vec<(&'static str, f64)> {
    let e_sig = 1.5; // b/(a-1)
    vec![
        ("gamma", 0.0),
        ("gamma_sq", e_sig),
        ("theta", 0.0),
        ("theta_sq", e_sig),
        ("cross", 0.0),
        ("rho_cross", (1.0 / 3.0) * e_sig / 10.0),
        ("beta_tilde", 0.0),
        ("alpha", 0.0),
        ("alpha_sq", 2.0 * e_sig),
        ("theta_r", 0.0),
        ("theta_r_sq", 2.0 * e_sig),
        ("lambda", 0.75),
        ("rho", 0.0),
        ("rho_sq", 1.0 / 3.0),
        ("sigma_beta", e_sig),
        ("sigma_alpha", e_sig),
        ("sigma_theta", e_sig),
        ("sigma_eps", e_sig),
        ("sigma", e_sig),
        ("eta", 0.0),
    ]
}

#[test]
#[ignore]
fn probe_partial_sweeps() {
    let (p, n, rank) = (4usize, 15usize, 1usize);
    let seed = 77u64;
    let hyper = HyperPriors::with_ig(3.0, 3.0);
    let model = ModelConfig {
        rank,
        kernel: KernelSpec::MarginalIdentity,
        ablation: Ablation::Full,
        delta: None,
    };
    let tuning = MhTuning {
        adapt: false,
        ..MhTuning::default()
    };
    let data = random_dataset(seed, n, p, 1);
    let prior = PriorStructure::build(data.coords(), p, &model.kernel, model.delta).unwrap();

    let reps = 40_000usize;
    let inner = 6usize;
    let reference = analytic_reference();

    let subsets: Vec<(&str, Vec<Up>)> = vec![
        ("GammaEl", vec![Up::GammaEl]),
        ("ThetaEl", vec![Up::ThetaEl]),
        ("Alpha", vec![Up::Alpha]),
        ("ThetaR", vec![Up::ThetaR]),
        ("Vars", vec![Up::Vars]),
        ("Rho", vec![Up::Rho]),
        ("Lambda", vec![Up::Lambda]),
        ("ThetaEl+Alpha", vec![Up::ThetaEl, Up::Alpha]),
        ("ThetaEl+ThetaR", vec![Up::ThetaEl, Up::ThetaR]),
        ("ThetaEl+Vars", vec![Up::ThetaEl, Up::Vars]),
        ("ThetaEl+Rho", vec![Up::ThetaEl, Up::Rho]),
        ("ThetaEl+Lambda", vec![Up::ThetaEl, Up::Lambda]),
        ("GammaEl+Vars", vec![Up::GammaEl, Up::Vars]),
        ("GammaEl+ThetaEl", vec![Up::GammaEl, Up::ThetaEl]),
        ("Alpha+ThetaR", vec![Up::Alpha, Up::ThetaR]),
        ("Lambda+Vars", vec![Up::Lambda, Up::Vars]),
        (
            "net-stack",
            vec![Up::Alpha, Up::ThetaR, Up::ThetaEl, Up::Vars, Up::Lambda],
        ),
    ];

    for (label, ups) in &subsets {
        let mut sampler =
            GibbsSampler::new(&data, &prior, &model, &hyper, &tuning, seed, 0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xBBBB);
        let mut sc: Vec<Vec<f64>> = vec![Vec::with_capacity(reps); reference.len()];
        for _ in 0..reps {
            let s0 = draw_state_from_prior(p, 1, &prior, &model, &hyper, &mut rng);
            sampler.set_state(s0).unwrap();
            let mean0 = model_mean(&data, sampler.state()).unwrap();
            let sd = sampler.state().sigma_eps.sqrt();
            let y: Vec<f64> = mean0.iter().map(|m| m + sd * std_normal(&mut rng)).collect();
            sampler.set_outcome(&y).unwrap();
            for _ in 0..inner {
                for u in ups {
                    apply(&mut sampler, *u, p, rank);
                }
                let mean1 = model_mean(&data, sampler.state()).unwrap();
                let sd1 = sampler.state().sigma_eps.sqrt();
                let y1: Vec<f64> = mean1
                    .iter()
                    .map(|m| m + sd1 * std_normal(&mut rng))
                    .collect();
                sampler.set_outcome(&y1).unwrap();
            }
            for (k, (_, v)) in stats(sampler.state()).iter().enumerate() {
                sc[k].push(*v);
            }
        }
        let mut report = String::new();
        let mut worst: (usize, f64) = (0, 0.0);
        for (k, (nm, refv)) in reference.iter().enumerate() {
            let m2 = mean(&sc[k]);
            let v2 = sample_variance(&sc[k]) / sc[k].len() as f64;
            let z = (m2 - refv) / v2.sqrt();
            if z.abs() > worst.1.abs() {
                worst = (k, z);
            }
            if z.abs() > 4.0 {
                report.push_str(&format!("  {nm}: z = {z:+.2}\n"));
            }
        }
        println!(
            "{label}: worst {} z = {:+.2}\n{report}",
            reference[worst.0].0, worst.1
        );
    }
}
