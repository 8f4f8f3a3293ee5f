use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use caproute::harness::{
    generate_synthetic_corpus, load_testset, parse_grid, replay, sweep, testset_to_jsonl, write_sweep_csv, Policy,
    SweepParam, SynthSpec,
};
use caproute::service;
use caproute::store::{augment_logs, load_raw, load_store, save_store};
use caproute::ServiceConfig;
use caproute_core::Router;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "caproute", version, about = "Capability-aware LLM router")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deconstruct and embed raw logs into a store.
    Ingest {
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Skip the ranking-vector cache.
        #[arg(long)]
        no_vectors: bool,
    },
    /// Recompute a store's ranking-vector cache with the configured embedder.
    Augment {
        store: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Defaults to rewriting the store in place.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load and check a store (and optionally a testset).
    Validate {
        store: PathBuf,
        /// Re-embed and compare cached vectors with this config's embedder.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        testset: Option<PathBuf>,
    },
    /// Run the HTTP routing service.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's bind address.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Route one query and print the decision.
    Route {
        query: String,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Replay policies over a testset and write a report.
    Replay {
        /// decor, random[:seed], knn[:k], fixed:<model>, oracle; repeatable or comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        policy: Vec<Policy>,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        testset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay DecoR across a lambda or tau grid and write CSV.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        /// `start:stop:step` or `a,b,c`.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        testset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic store, testset, OOD queries and config.
    Synth {
        #[arg(long, default_value_t = 3)]
        families: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        entries_per_family: usize,
        #[arg(long, default_value_t = 20)]
        tests_per_family: usize,
        #[arg(long, default_value_t = 20)]
        ood_per_kind: usize,
        #[arg(long, value_delimiter = ',', default_value = "model-a,model-b,model-c,model-d")]
        models: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn router(store: &Path, config: &Path) -> Result<(Router, ServiceConfig)> {
    let cfg = ServiceConfig::load(config)?;
    let store = load_store(store).with_context(|| format!("loading {}", store.display()))?;
    let router = cfg.build_router(store.to_library()?)?;
    Ok((router, cfg))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { raw, out, config, no_vectors } => {
            let cfg = ServiceConfig::load(&config)?;
            let raw = load_raw(&raw)?;
            let deconstructor = cfg.build_deconstructor()?;
            let embedder = cfg.build_embedder()?;
            let embedder = (!no_vectors).then_some(embedder.as_ref());
            let result = augment_logs(&raw, deconstructor.as_ref(), embedder)?;
            for (id, why) in &result.skipped {
                eprintln!("skipped {id}: {why}");
            }
            save_store(&result.store, &out)?;
            eprintln!("wrote {} entries, skipped {}", result.store.len(), result.skipped.len());
        }
        Command::Augment { store, config, out } => {
            let cfg = ServiceConfig::load(&config)?;
            let mut s = load_store(&store)?;
            s.embed_all(cfg.build_embedder()?.as_ref())?;
            save_store(&s, out.as_deref().unwrap_or(&store))?;
            eprintln!("embedded {} entries", s.len());
        }
        Command::Validate { store, config, testset } => {
            let s = load_store(&store)?;
            s.to_library()?;
            println!("store: {} entries, vectors: {}", s.len(), s.embedder_tag().unwrap_or("none"));
            if let Some(config) = config {
                let cfg = ServiceConfig::load(&config)?;
                let stale = s.stale_vectors(cfg.build_embedder()?.as_ref())?;
                if !stale.is_empty() {
                    bail!("{} cached vectors differ from a fresh embedding (first: {})", stale.len(), stale[0]);
                }
                if let Some(t) = testset {
                    let cases = load_testset(&t)?;
                    caproute::harness::check_dense(&cases, &cfg.routing.candidate_models)?;
                    println!("testset: {} cases, dense", cases.len());
                }
            } else if let Some(t) = testset {
                println!("testset: {} cases", load_testset(&t)?.len());
            }
        }
        Command::Serve { store, config, bind } => {
            let (router, cfg) = router(&store, &config)?;
            let bind = bind.unwrap_or(cfg.bind.clone());
            let app = service::app(router, cfg.max_concurrency);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
                service::serve(listener, app).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Route { query, store, config } => {
            let (router, _) = router(&store, &config)?;
            let d = router.route(&query)?;
            println!("{}", serde_json::to_string_pretty(&d)?);
        }
        Command::Replay { policy, store, testset, config, out } => {
            let (router, cfg) = router(&store, &config)?;
            let cases = load_testset(&testset)?;
            let report = replay(&cases, &policy, &router, &cfg.routing)?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
        Command::Sweep { param, grid, store, testset, config, out } => {
            let (router, cfg) = router(&store, &config)?;
            let cases = load_testset(&testset)?;
            let rows = sweep(param, &parse_grid(&grid)?, &cases, &router, &cfg.routing)?;
            let mut buf = Vec::new();
            write_sweep_csv(&rows, &mut buf)?;
            emit(out.as_deref(), std::str::from_utf8(&buf)?)?;
        }
        Command::Synth { families, seed, entries_per_family, tests_per_family, ood_per_kind, models, out_dir } => {
            if families < 2 || models.len() < 2 {
                bail!("synth needs at least two families and two models");
            }
            let spec = SynthSpec { families, entries_per_family, tests_per_family, ood_per_kind, models, seed };
            let corpus = generate_synthetic_corpus(&spec);
            let cfg = ServiceConfig::deterministic(corpus.routing.clone(), corpus.rules.clone());
            let mut store = corpus.store;
            store.embed_all(cfg.build_embedder()?.as_ref())?;
            fs::create_dir_all(&out_dir)?;
            save_store(&store, &out_dir.join("store.jsonl"))?;
            fs::write(out_dir.join("testset.jsonl"), testset_to_jsonl(&corpus.testset))?;
            fs::write(out_dir.join("config.json"), cfg.to_json())?;
            let ood: String = corpus.ood.iter().map(|q| serde_json::to_string(q).unwrap() + "\n").collect();
            fs::write(out_dir.join("ood.jsonl"), ood)?;
            fs::write(out_dir.join("best.json"), serde_json::to_string_pretty(&corpus.best)? + "\n")?;
            eprintln!("wrote {} store entries and {} test cases to {}", store.len(), corpus.testset.len(), out_dir.display());
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::from_default_env()).with_writer(std::io::stderr).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
