//! `tds`: batch front end for difficulty-scoring experiments.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use commands::{aggregate, run_seed, SeedOutput, Verb};
use config::{ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "tds", version, about = "Trajectory-based difficulty scores for boosted ensembles")]
struct Cli {
    #[command(subcommand)]
    verb: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the ensemble and difficulty model; write both plus test scores.
    Train(Common),
    /// Correlate difficulty with held-out loss.
    Correlate(Common),
    /// Run active-learning curves for each configured acquisition.
    Al(Common),
    /// Risk-coverage analysis of difficulty-based abstention.
    Select(Common),
    /// Split and difficulty-stratified conformal prediction.
    Conformal(Common),
    /// Rule-based segments of the hardest rows.
    Segment(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed to run; repeat for several. Replaces the configured list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds processed in parallel.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Command {
    fn split(self) -> (Verb, Common) {
        match self {
            Command::Train(c) => (Verb::Train, c),
            Command::Correlate(c) => (Verb::Correlate, c),
            Command::Al(c) => (Verb::Al, c),
            Command::Select(c) => (Verb::Select, c),
            Command::Conformal(c) => (Verb::Conformal, c),
            Command::Segment(c) => (Verb::Segment, c),
        }
    }
}

fn kind_of(verb: Verb) -> Option<ExperimentKind> {
    match verb {
        Verb::Train => None,
        Verb::Correlate => Some(ExperimentKind::Correlate),
        Verb::Al => Some(ExperimentKind::Al),
        Verb::Select => Some(ExperimentKind::Select),
        Verb::Conformal => Some(ExperimentKind::Conformal),
        Verb::Segment => Some(ExperimentKind::Segment),
    }
}

fn resolve(verb: Verb, args: Common) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if let Some(jobs) = args.jobs {
        cfg.jobs = jobs;
    }
    if let (Some(want), Some(have)) = (kind_of(verb), cfg.experiment) {
        if want != have {
            log::warn!("config declares experiment {have:?}; running {} instead", verb.name());
        }
    }
    cfg.seeds.sort_unstable();
    cfg.seeds.dedup();
    cfg.validate()?;
    Ok(cfg)
}

fn run(verb: Verb, cfg: &ExperimentConfig) -> Result<bool> {
    let root = &cfg.output_dir;
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let started = chrono::Utc::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build()?;
    let results: Vec<(u64, Result<SeedOutput>)> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                log::info!("{} seed {seed}", verb.name());
                (seed, run_seed(verb, cfg, root, seed))
            })
            .collect()
    });

    let mut outputs = Vec::new();
    let mut failed = BTreeMap::new();
    for (seed, r) in results {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) => {
                eprintln!("seed {seed} failed: {e:#}");
                failed.insert(seed.to_string(), format!("{e:#}"));
            }
        }
    }

    let mut files: Vec<serde_json::Value> = outputs
        .iter()
        .flat_map(|o| o.files.iter().map(move |f| json!({ "seed": o.seed, "path": f.path, "kind": f.kind })))
        .collect();
    if let Some(summary) = aggregate(verb, &outputs) {
        let name = format!("{}_summary.json", verb.name());
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        fs::write(root.join(&name), text).with_context(|| format!("writing {name}"))?;
        files.push(json!({ "seed": null, "path": name, "kind": "summary" }));
    }
    let fingerprints: BTreeMap<String, &str> = outputs
        .iter()
        .filter_map(|o| Some((o.seed.to_string(), o.fingerprint.as_deref()?)))
        .collect();
    let manifest = json!({
        "command": verb.name(),
        "started_at": started.to_rfc3339(),
        "finished_at": chrono::Utc::now().to_rfc3339(),
        "config": cfg,
        "seeds": cfg.seeds,
        "failed_seeds": failed,
        "ensemble_fingerprints": fingerprints,
        "files": files,
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(root.join("MANIFEST.json"), text).context("writing MANIFEST.json")?;
    Ok(failed.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TDS_LOG", "warn")).init();
    let (verb, args) = Cli::parse().verb.split();
    let outcome = resolve(verb, args).and_then(|cfg| run(verb, &cfg));
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
