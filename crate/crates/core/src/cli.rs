//! `dpcs` command-line driver.

use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::checks::run_oracle_checks;
use crate::config::{Config, SimSpec};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{ensure_valid, PanelDataset};
use crate::sampler::{Sampler, Variant};
use crate::simulate::{prior_subset_quantiles, simulate_large_two_pop, simulate_prior_cs, simulate_with_design};
use crate::summaries::{
    cs_point_estimate, inclusion_probs, marginal_cs_distribution, mixture_inclusion_moments, predictive_loglik,
    similarity_matrix,
};

pub const CONFIG_ECHO: &str = "config.cfg";
pub const RESOLVED_ECHO: &str = "resolved.json";
/// Largest category count for which `summarize` writes the full subset pmf.
pub const PMF_MAX_J: usize = 12;

#[derive(Debug, Parser)]
#[command(name = "dpcs", version, about = "Logit models with latent consideration sets")]
pub struct Cli {
    /// Worker threads for per-subject updates (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset and its true consideration sets.
    Simulate(SimulateArgs),
    /// Run the MCMC sampler and persist the chain.
    Fit(FitArgs),
    /// Posterior summaries of a stored chain.
    Summarize(SummarizeArgs),
    /// Log predictive likelihood of held-out occasions.
    Predict(PredictArgs),
    /// Compare the samplers against brute-force enumeration.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Config file or preset name (sim_small, sim_large).
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset CSV; its JSON sidecar must sit next to it.
    #[arg(long)]
    pub data: PathBuf,
    /// Config file or preset name (fit_default, fit_application).
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub burnin: Option<u64>,
    #[arg(long)]
    pub thin: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Hold out each subject's last H occasions and write them to holdout.csv.
    #[arg(long, default_value_t = 0)]
    pub holdout_occasions: usize,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Write every consideration-set proposal to proposals.csv.
    #[arg(long)]
    pub log_proposals: bool,
    /// Finite-difference check of the first beta gradient and Hessian.
    #[arg(long)]
    pub check_derivatives: bool,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub chain: PathBuf,
    /// Defaults to the chain directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Inclusion probability above which a category enters the point estimate.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub chain: PathBuf,
    #[arg(long)]
    pub holdout: PathBuf,
    /// Defaults to the chain directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 200_000)]
    pub sweeps: u64,
}

/// 2 for invalid input, 3 for numerical failure, 1 for anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical { .. } | Error::NotSpd(_) | Error::NoAdmissibleComponent(_) => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Summarize(a) => cmd_summarize(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::OracleCheck(a) => cmd_oracle_check(&a),
    }
}

fn echo(out: &Path, cfg: &Config, resolved: &serde_json::Value) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_ECHO), cfg.to_string())?;
    io::write_json(&out.join(RESOLVED_ECHO), resolved)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = Config::load_or_preset(&a.config)?;
    if let Some(s) = a.seed {
        cfg.set("simulate", "seed", &s.to_string())?;
    }
    let spec = cfg.simulation()?;
    let resolved = match &spec {
        SimSpec::Small { n, t, pmf, response, seed } => {
            json!({"design": "small", "n": n, "t": t, "pmf": pmf, "response": response, "seed": seed})
        }
        SimSpec::TwoPop { design, seed } => json!({"design": "two_pop", "spec": design, "seed": seed}),
        SimSpec::Prior { j, k, draws, seed } => {
            json!({"design": "prior", "j": j, "k": k, "draws": draws, "seed": seed})
        }
    };
    echo(&a.out, &cfg, &resolved)?;
    let sim = match spec {
        SimSpec::Small { n, t, pmf, response, seed } => simulate_with_design(n, t, &pmf, &response, seed)?,
        SimSpec::TwoPop { design, seed } => simulate_large_two_pop(&design, seed)?,
        SimSpec::Prior { j, k, draws, seed } => {
            let hyper = cfg.hyperparams(j, 0)?;
            let prior = simulate_prior_cs(&hyper, j, k, draws, seed)?;
            let rows = prior_subset_quantiles(&prior);
            if !rows.is_empty() {
                io::write_prior_quantiles(&a.out.join("prior_cs_quantiles.csv"), j, &rows)?;
            }
            let mut w = csv::Writer::from_path(a.out.join("prior_residual.csv"))?;
            w.write_record(["draw", "residual"])?;
            for (d, r) in prior.residual.iter().enumerate() {
                w.write_record([(d + 1).to_string(), r.to_string()])?;
            }
            w.flush()?;
            log::info!("wrote {draws} prior draws to {}", a.out.display());
            return Ok(());
        }
    };
    io::write_dataset(&a.out.join("data.csv"), &sim.data)?;
    io::write_truth_cs(&a.out.join("truth_cs.csv"), &sim.data, &sim.truth)?;
    log::info!("simulated n = {}, J = {} into {}", sim.data.n(), sim.data.j(), a.out.display());
    Ok(())
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(c) => Config::load_or_preset(c)?,
        None => Config::default(),
    };
    let overrides = [
        ("mcmc", "seed", a.seed.map(|v| v.to_string())),
        ("mcmc", "iters", a.iters.map(|v| v.to_string())),
        ("mcmc", "burnin", a.burnin.map(|v| v.to_string())),
        ("mcmc", "thin", a.thin.map(|v| v.to_string())),
        ("mcmc", "checkpoint_every", a.checkpoint_every.map(|v| v.to_string())),
        ("model", "variant", a.variant.map(|v| v.to_string())),
        ("mcmc", "log_proposals", a.log_proposals.then(|| "true".into())),
        ("mcmc", "check_derivatives", a.check_derivatives.then(|| "true".into())),
    ];
    for (s, k, v) in overrides {
        if let Some(v) = v {
            cfg.set(s, k, &v)?;
        }
    }
    let full = io::read_dataset(&a.data)?;
    ensure_valid(&full)?;
    let data = if a.holdout_occasions > 0 {
        let (est, hold) = full.split_holdout(a.holdout_occasions);
        fs::create_dir_all(&a.out)?;
        io::write_dataset(&a.out.join("holdout.csv"), &hold)?;
        est
    } else {
        full
    };
    let fc = cfg.fit_config(&data)?;
    if fc.mcmc.thin == 0 {
        return Err(Error::Config("thin must be positive".into()));
    }
    echo(&a.out, &cfg, &serde_json::to_value(&fc)?)?;
    fit_into(&data, fc, &a.out, a.resume)
}

fn fit_into(data: &PanelDataset, fc: crate::sampler::FitConfig, out: &Path, resume: bool) -> Result<()> {
    let log_props = fc.mcmc.log_proposals;
    let (mut sampler, writer, resumed_at) = if resume {
        let ck = io::read_checkpoint(out)?;
        let at = ck.iter;
        let s = Sampler::from_checkpoint(data, fc, ck.clone())?;
        let w = io::ChainWriter::resume(out, &s.meta(), &ck)?;
        (s, w, Some(at))
    } else {
        let s = Sampler::new(data, fc)?;
        let w = io::ChainWriter::create(out, &s.meta())?;
        (s, w, None)
    };
    let writer = RefCell::new(writer);
    let start = Instant::now();
    sampler.run_with(|d| writer.borrow_mut().push(d), |ck| writer.borrow_mut().checkpoint(ck))?;
    let mut writer = writer.into_inner();
    writer.checkpoint(&sampler.checkpoint())?;
    writer.finish()?;
    let secs = start.elapsed().as_secs_f64();
    let report = out.join("acceptance.csv");
    let props = out.join("proposals.csv");
    match resumed_at {
        Some(at) => {
            let tmp = out.join("acceptance.new.csv");
            io::write_report(&tmp, &sampler.report)?;
            io::splice_csv(&report, &tmp, at)?;
            if log_props {
                let tmp = out.join("proposals.new.csv");
                io::write_proposals(&tmp, &sampler.proposals, data)?;
                io::splice_csv(&props, &tmp, at)?;
            }
        }
        None => {
            io::write_report(&report, &sampler.report)?;
            if log_props {
                io::write_proposals(&props, &sampler.proposals, data)?;
            }
        }
    }
    let c = sampler.counters();
    let mut summary = json!({
        "iterations": sampler.iter(),
        "acceptance": {
            "beta": c.beta.rate(),
            "delta": c.delta.rate(),
            "b": c.b.rate(),
            "cs": c.cs.rate(),
        },
    });
    if let Some((g, h)) = sampler.fd_check {
        summary["fd_check"] = json!({"gradient_rel_err": g, "hessian_rel_err": h});
    }
    io::write_json(&out.join("fit_summary.json"), &summary)?;
    log::info!(
        "fit {} iterations in {secs:.2} s ({:.2} s per 1000), beta acceptance {:.3}",
        sampler.iter(),
        secs * 1000.0 / sampler.iter().max(1) as f64,
        c.beta.rate()
    );
    Ok(())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

pub fn cmd_summarize(a: &SummarizeArgs) -> Result<()> {
    let chain = io::read_chain(&a.chain)?;
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Error::InvalidProbability { what: "threshold".into(), value: a.threshold });
    }
    let out = a.out.clone().unwrap_or_else(|| a.chain.clone());
    let resolved = json!({"command": "summarize", "chain": a.chain, "threshold": a.threshold});
    fs::create_dir_all(&out)?;
    io::write_json(&out.join("summarize_args.json"), &resolved)?;
    if out != a.chain {
        if let Ok(text) = fs::read_to_string(a.chain.join(CONFIG_ECHO)) {
            fs::write(out.join(CONFIG_ECHO), text)?;
        }
    }
    let ids = &chain.meta.subject_ids;
    let incl = inclusion_probs(&chain)?;
    io::write_inclusion(&out.join("inclusion_probs.csv"), ids, &incl)?;
    io::write_similarity(&out.join("similarity.csv"), ids, &similarity_matrix(&chain)?)?;
    let mut w = csv::Writer::from_path(out.join("cs_point.csv"))?;
    w.write_record(["subject", "set"])?;
    for (id, set) in ids.iter().zip(cs_point_estimate(&incl, a.threshold)) {
        let s: Vec<String> = set.iter().map(|j| (j + 1).to_string()).collect();
        w.write_record([id.to_string(), s.join(" ")])?;
    }
    w.flush()?;
    let (pop, _) = mixture_inclusion_moments(&chain)?;
    let mut w = csv::Writer::from_path(out.join("population_inclusion.csv"))?;
    w.write_record(["category", "inclusion"])?;
    for (j, p) in pop.iter().enumerate() {
        w.write_record([(j + 1).to_string(), p.to_string()])?;
    }
    w.flush()?;
    let mut summary = json!({"draws": chain.len()});
    if chain.meta.n_alt <= PMF_MAX_J {
        let dist = marginal_cs_distribution(&chain)?;
        io::write_cs_pmf(&out.join("cs_pmf.csv"), &dist)?;
        summary["empty_mass"] = json!(dist.empty_mass);
        summary["truncation_mass"] = json!(dist.truncation_mass);
    }
    let col = |f: &dyn Fn(&crate::sampler::Draw) -> f64| -> serde_json::Value {
        let v: Vec<f64> = chain.draws.iter().map(f).collect();
        let (m, s) = mean_sd(&v);
        json!({"mean": m, "sd": s})
    };
    summary["beta"] = (0..chain.meta.d_x).map(|k| col(&|d| d.beta[k])).collect();
    summary["delta"] = (0..chain.meta.n_alt).map(|k| col(&|d| d.delta[k])).collect();
    summary["alpha"] = col(&|d| d.alpha);
    summary["k_star"] = col(&|d| d.k_star as f64);
    summary["occupied"] = col(&|d| {
        let mut a = d.assign.clone();
        a.sort_unstable();
        a.dedup();
        a.len() as f64
    });
    io::write_json(&out.join("summary.json"), &summary)?;
    log::info!("summarised {} draws into {}", chain.len(), out.display());
    Ok(())
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let chain = io::read_chain(&a.chain)?;
    let hold = io::read_dataset(&a.holdout)?;
    let out = a.out.clone().unwrap_or_else(|| a.chain.clone());
    fs::create_dir_all(&out)?;
    io::write_json(
        &out.join("predict_args.json"),
        &json!({"command": "predict", "chain": a.chain, "holdout": a.holdout}),
    )?;
    let rows = predictive_loglik(&chain, &hold)?;
    io::write_pred_loglik(&out.join("pred_loglik.csv"), &rows)?;
    let total: f64 = rows.iter().map(|r| r.logpred).sum();
    log::info!("log predictive likelihood {total:.4} over {} subjects", rows.len());
    Ok(())
}

pub fn cmd_oracle_check(a: &OracleArgs) -> Result<()> {
    let checks = run_oracle_checks(a.sweeps, a.seed)?;
    fs::create_dir_all(&a.out)?;
    io::write_json(
        &a.out.join(RESOLVED_ECHO),
        &json!({"command": "oracle-check", "seed": a.seed, "sweeps": a.sweeps}),
    )?;
    let passed = checks.iter().all(|c| c.passed);
    io::write_json(&a.out.join("oracle_check.json"), &json!({"passed": passed, "checks": checks}))?;
    for c in &checks {
        log::info!("{}: {} ({:.3e} < {:.0e})", c.name, if c.passed { "pass" } else { "FAIL" }, c.value, c.tolerance);
    }
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(Error::Validation { count: failed.len(), first: failed.join(", ") })
    }
}
