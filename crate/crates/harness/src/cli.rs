//! `sblab <subcommand> --config <file> [--out <dir>] [--seed <int>] [--threads <int>]`
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 budget
//! refused, 4 numerical failure.

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::experiments::{build_prior, build_slab, enum_config, run_experiment};
use crate::generate::generate_instance;
use crate::report::{csv_err, ExperimentReport, Record};
use clap::{Args, Parser, Subcommand};
use sblab_core::bvm::{build_neighborhood, bvm_weights};
use sblab_core::exact::{enumerate_posterior, posterior_mean};
use sblab_core::mcmc::{chain_diagnostics, run_chains, ChainConfig, MoveKind};
use sblab_core::prediction::{enumerate_subspaces, subspace_posterior, subspace_predict_sample};
use sblab_core::{Error, Result, RngHandle};
use serde_json::json;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "sblab", version, about = "Spike-and-slab sparse regression experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design diagnostics: coherence, compatibility and sparse singular values.
    Diagnose(CommonArgs),
    /// Exact posterior by model enumeration on one data set.
    FitExact(CommonArgs),
    /// Trans-dimensional MCMC on one data set.
    FitMcmc(CommonArgs),
    /// Normal-mixture approximation and its TV bound.
    Bvm(CommonArgs),
    /// LASSO-posterior versus spike-and-slab ball masses.
    LassoCompare(CommonArgs),
    /// Subspace posterior for prediction.
    PredictSubspace(CommonArgs),
    /// Run the configured experiment.
    Simulate(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Dimension(_) => 2,
        Error::ComplexityRefused { .. } => 3,
        Error::Io(_) => 1,
        _ => 4,
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
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
            eprintln!("sblab: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let (cmd, args) = match &cli.command {
        Command::Diagnose(a) => ("diagnose", a),
        Command::FitExact(a) => ("fit-exact", a),
        Command::FitMcmc(a) => ("fit-mcmc", a),
        Command::Bvm(a) => ("bvm", a),
        Command::LassoCompare(a) => ("lasso-compare", a),
        Command::PredictSubspace(a) => ("predict-subspace", a),
        Command::Simulate(a) => ("simulate", a),
    };
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let threads = args.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cmd, cfg, &args.out))
}

fn dispatch(cmd: &str, mut cfg: ExperimentConfig, out: &Path) -> Result<()> {
    match cmd {
        "simulate" => run_experiment(&cfg)?.write_all(out),
        "diagnose" => {
            cfg.experiment = ExperimentKind::Diagnose;
            run_experiment(&cfg)?.write_all(out)
        }
        "lasso-compare" => {
            cfg.experiment = ExperimentKind::LassoContrast;
            run_experiment(&cfg)?.write_all(out)
        }
        "bvm" => {
            cfg.experiment = ExperimentKind::Bvm;
            let mut report = run_experiment(&cfg)?;
            report.details = Some(bvm_details(&cfg)?);
            report.write_all(out)
        }
        "predict-subspace" => {
            cfg.experiment = ExperimentKind::PredictSubspace;
            let mut report = run_experiment(&cfg)?;
            report.details = Some(subspace_details(&cfg, out)?);
            report.write_all(out)
        }
        "fit-exact" => fit_exact(&cfg)?.write_all(out),
        "fit-mcmc" => fit_mcmc(&cfg, out)?.write_all(out),
        other => Err(Error::Config(format!("unknown subcommand {other}"))),
    }
}

/// Replication 0 of the configured experiment, as used by single-fit
/// subcommands.
fn first_instance(cfg: &ExperimentConfig) -> Result<crate::generate::Instance> {
    generate_instance(cfg, RngHandle::new(cfg.seed).child(0).child(0))
}

fn single(cfg: &ExperimentConfig, name: &str, rec: Record, details: serde_json::Value) -> ExperimentReport {
    let mut r = ExperimentReport::new(cfg, vec![rec]);
    r.experiment = name.to_string();
    r.details = Some(details);
    r
}

fn fit_exact(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let inst = first_instance(cfg)?;
    let dp = build_prior(cfg, inst.x.p())?;
    let slab = build_slab(cfg, &inst.x)?;
    let handle = RngHandle::new(cfg.seed).child(0).child(1);
    let post = enumerate_posterior(&inst.x, &inst.y, &dp, &slab, &enum_config(cfg), handle.child(0))?;
    let draws = post.sample_posterior(&inst.x, &inst.y, handle.child(1), cfg.n_draws);
    let closed = post.is_factorized() && slab.is_laplace();
    let mean = post.exact_mean().unwrap_or_else(|| posterior_mean(&draws, inst.x.p()));
    let incl = post.inclusion_probabilities();
    let mut rec = Record::new(0);
    rec.selected = Some(post.map_model());
    rec.set("log_evidence", post.log_evidence());
    rec.set("expected_dim", post.expected_dimension());
    let mut limits = Vec::new();
    for j in 0..inst.x.p() {
        let cs = if closed { post.credible_limit_exact(j, cfg.level)? } else { post.credible_limit_from_draws(&draws, j, cfg.level) };
        rec.set(format!("incl_{j:04}"), incl[j]);
        rec.set(format!("mean_{j:04}"), mean[j]);
        rec.set(format!("r_hat_{j:04}"), cs.r_hat);
        limits.push(cs);
    }
    let details = json!({
        "models": post.table(20).into_iter().map(|(m, w)| json!({"support": m, "weight": w.exp()})).collect::<Vec<_>>(),
        "dimension_probs": post.dimension_probs(),
        "credible_limits": limits,
        "precision_warnings": post.precision_warnings(),
        "truth": inst.beta0,
    });
    Ok(single(cfg, "fit_exact", rec, details))
}

fn fit_mcmc(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    let inst = first_instance(cfg)?;
    let p = inst.x.p();
    let dp = build_prior(cfg, p)?;
    let slab = build_slab(cfg, &inst.x)?;
    let chain = ChainConfig::new(cfg.n_sweeps, cfg.burn_in, RngHandle::new(cfg.seed).child(0).child(1));
    let res = run_chains(&inst.x, &inst.y, &dp, &slab, &chain, cfg.chains)?;
    let diag = chain_diagnostics(&res, p);
    let mut rec = Record::new(0);
    rec.warnings = diag.warnings.clone();
    for (k, name) in [(MoveKind::Add, "add"), (MoveKind::Delete, "delete"), (MoveKind::Swap, "swap")] {
        rec.set(format!("accept_{name}"), res.acceptance_rate(k));
    }
    rec.set("ess_dimension", diag.ess_dimension);
    if let Some(r) = diag.rhat_dimension {
        rec.set("rhat_dimension", r);
    }
    let mut visits: Vec<_> = res.visit_frequencies();
    visits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rec.selected = visits.first().map(|v| v.0.clone());
    let mut incl = vec![0.0; p];
    for s in &res.states {
        for &j in s.model().indices() {
            incl[j] += 1.0 / res.states.len() as f64;
        }
    }
    for (j, v) in incl.iter().enumerate() {
        rec.set(format!("incl_{j:04}"), *v);
    }
    std::fs::create_dir_all(out)?;
    res.write_states(std::fs::File::create(out.join("states.csv"))?)?;
    let details = json!({
        "diagnostics": diag,
        "models": visits.iter().take(20).map(|(m, w)| json!({"support": m, "frequency": w})).collect::<Vec<_>>(),
        "truth": inst.beta0,
    });
    Ok(single(cfg, "fit_mcmc", rec, details))
}

fn bvm_details(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let inst = first_instance(cfg)?;
    let dp = build_prior(cfg, inst.x.p())?;
    let slab = build_slab(cfg, &inst.x)?;
    let a4 = dp.certify()?.a4;
    let nb = build_neighborhood(&inst.beta0, &inst.x, a4, cfg.neighborhood_m, cfg.enum_budget)?;
    let mix = bvm_weights(&inst.x, &inst.y, &dp, slab.lambda(), &nb)?;
    let mut rows = mix.table();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(json!({
        "a4": a4,
        "m": cfg.neighborhood_m,
        "dim_cap": nb.dim_cap,
        "members": nb.members.len(),
        "mixture": rows.into_iter().take(20).map(|(m, w, c)| json!({"support": m, "weight": w.exp(), "center": c})).collect::<Vec<_>>(),
    }))
}

fn subspace_details(cfg: &ExperimentConfig, out: &Path) -> Result<serde_json::Value> {
    let inst = first_instance(cfg)?;
    let fam = enumerate_subspaces(&inst.x, cfg.t_max, cfg.dedup_tol, cfg.subspace_budget)?;
    let sp = subspace_posterior(&fam, &inst.y.y, cfg.subspace_d, inst.x.p())?;
    let gammas = subspace_predict_sample(&fam, &sp, &inst.y.y, RngHandle::new(cfg.seed).child(0).child(2), cfg.n_draws);
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("gamma.csv")).map_err(csv_err)?;
    let header: Vec<String> = std::iter::once("draw".to_string()).chain((0..inst.x.n()).map(|i| format!("g{i}"))).collect();
    w.write_record(&header).map_err(csv_err)?;
    for (k, g) in gammas.iter().enumerate() {
        let row: Vec<String> = std::iter::once(k.to_string()).chain(g.iter().map(|v| v.to_string())).collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    let mut order: Vec<usize> = (0..fam.members.len()).collect();
    order.sort_by(|&a, &b| sp.log_weights[b].total_cmp(&sp.log_weights[a]).then(a.cmp(&b)));
    Ok(json!({
        "dedup_tol": fam.dedup_tol,
        "d": sp.d,
        "count_by_dim": fam.count_by_dim(),
        "members": order.iter().take(50).map(|&i| json!({
            "support": fam.members[i].support,
            "t": fam.members[i].t,
            "weight": sp.log_weights[i].exp(),
        })).collect::<Vec<_>>(),
    }))
}

