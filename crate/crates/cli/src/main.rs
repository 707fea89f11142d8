//! `instinct`: command-line client of the optimizer service.
//!
//! Talks to `$INSTINCT_SERVER_URL` when set; otherwise starts an in-process
//! server on an ephemeral local port for the duration of the command.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use instinct_client::{Client, SERVER_URL_ENV};
use instinct_core::api::{
    decode_bytes, BaselineRequest, DistancesRequest, GridRequest, LabeledGroup, PrecomputeRequest, ProfileRequest,
    RankRequest, RunRequest,
};
use instinct_core::featuremap::FeatureMapSpec;
use instinct_core::harness::{analysis, tau_grid, BaselineMode, Cell, ExperimentConfig, ScoreMatrix, TieMethod};
use instinct_core::oracle::ObjectiveSpec;
use instinct_core::seed::{self, stream};
use instinct_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "instinct", version, about = "Neural-bandit instruction optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one grid cell.
    Run(RunArgs),
    /// Optimize every grid cell for every trial and pick the best cell.
    Grid(ExperimentArgs),
    /// Random-selection baseline on one cell.
    BaselineRandom {
        #[command(flatten)]
        run: RunArgs,
        /// init-only or random-full.
        #[arg(long, default_value = "random-full")]
        mode: BaselineMode,
    },
    /// Performance profile of a task-by-method score table.
    Profile {
        /// CSV with a task column followed by one column per method.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        tau_max: f64,
        #[arg(long, default_value_t = 101)]
        tau_points: usize,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average rank of each method across tasks.
    Rank {
        #[arg(long)]
        scores: PathBuf,
        /// min or mean.
        #[arg(long, default_value = "min")]
        ties: TieMethod,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise L2 distances within labeled groups of vectors.
    Distances {
        /// JSON array of `{"label": ..., "vectors": [[...], ...]}`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Embed a whole domain and save the feature cache.
    Precompute {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Also serve a deterministic stand-in LLM under /mock.
        #[arg(long)]
        mock_llm: bool,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (JSON); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to the config, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Oracle by name: quantized, ackley, levy, remote. Remote needs its
    /// dataset from the config file.
    #[arg(long)]
    oracle: Option<String>,
    /// Feature map by name: identity, frozen, quotient, remote.
    #[arg(long)]
    feature_map: Option<String>,
    /// Exploration weight.
    #[arg(long)]
    nu: Option<f64>,
    /// Embed candidates on demand instead of precomputing the domain.
    #[arg(long)]
    no_precompute: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Intrinsic dimension d′ of the cell; defaults to the first grid value.
    #[arg(long)]
    intrinsic_dim: Option<usize>,
    /// Soft-prompt token count N_z of the cell; defaults to the first grid value.
    #[arg(long)]
    n_tokens: Option<usize>,
    #[arg(long, default_value_t = 0)]
    trial: usize,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        // A name matching the configured kind keeps the configured parameters.
        if let Some(name) = self.oracle.as_deref().filter(|n| *n != cfg.objective.name()) {
            cfg.objective = ObjectiveSpec::from_name(name)?;
        }
        if let Some(name) = self.feature_map.as_deref().filter(|n| *n != cfg.feature_map.name()) {
            cfg.feature_map = FeatureMapSpec::from_name(name)?;
        }
        if let Some(nu) = self.nu {
            cfg.bandit.nu = nu;
        }
        if self.no_precompute {
            cfg.precompute = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"))
    }
}

impl RunArgs {
    fn cell(&self, cfg: &ExperimentConfig) -> Cell {
        let first = cfg.cells()[0];
        Cell {
            intrinsic_dim: self.intrinsic_dim.unwrap_or(first.intrinsic_dim),
            n_tokens: self.n_tokens.unwrap_or(first.n_tokens),
        }
    }
}

/// Connects to the configured server or starts one in a background thread.
fn connect() -> Result<Client> {
    if let Ok(url) = std::env::var(SERVER_URL_ENV) {
        return Ok(Client::new(&url)?);
    }
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = match tokio::runtime::Runtime::new() {
            Ok(rt) => rt,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        };
        rt.block_on(async move {
            match instinct_service::bind(([127, 0, 0, 1], 0).into()).await {
                Ok(bound) => {
                    let _ = tx.send(Ok(bound.addr));
                    if let Err(e) = bound.serve(ServiceConfig::default()).await {
                        eprintln!("embedded server stopped: {e}");
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                }
            }
        });
    });
    let addr = rx.recv().context("embedded server thread exited")?.context("starting embedded server")?;
    Ok(Client::new(&format!("http://{addr}"))?)
}

fn read_matrix(path: &Path) -> Result<ScoreMatrix> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(ScoreMatrix::read_csv(f)?)
}

fn write_or_print(
    out: Option<&Path>,
    write: impl FnOnce(&mut dyn std::io::Write) -> instinct_core::Result<()>,
) -> Result<()> {
    match out {
        Some(p) => {
            let mut f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write(&mut f)?;
        }
        None => write(&mut std::io::stdout().lock())?,
    }
    Ok(())
}

fn report_run(resp: &instinct_core::api::RunResponse, dir: &Path) {
    let s = &resp.summary;
    match (s.best_score, s.best_index) {
        (Some(score), Some(index)) => {
            println!("{}: best {score:.6} at domain index {index}", s.run_id)
        }
        _ => println!("{}: no evaluations", s.run_id),
    }
    if let Some(ins) = &s.best_instruction {
        println!("  instruction: {ins}");
    }
    if let Some(err) = &s.error {
        println!("  incomplete: {err}");
    }
    println!("  {} oracle calls; artifacts in {}", s.oracle_calls, dir.display());
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Serve { addr, mock_llm } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(instinct_service::serve(addr, ServiceConfig { mock_llm }))?;
        }
        Command::Run(args) => {
            let cfg = args.exp.load()?;
            let dir = args.exp.out_dir(&cfg);
            let req = RunRequest { cell: Some(args.cell(&cfg)), trial: args.trial, config: cfg };
            let resp = connect()?.run(&req)?;
            resp.write_artifacts(&dir)?;
            report_run(&resp, &dir);
        }
        Command::BaselineRandom { run, mode } => {
            let cfg = run.exp.load()?;
            let dir = run.exp.out_dir(&cfg);
            let req = BaselineRequest { cell: Some(run.cell(&cfg)), trial: run.trial, mode, config: cfg };
            let resp = connect()?.baseline_random(&req)?;
            resp.write_artifacts(&dir)?;
            report_run(&resp, &dir);
        }
        Command::Grid(args) => {
            let cfg = args.load()?;
            let dir = args.out_dir(&cfg);
            let resp = connect()?.grid(&GridRequest { config: cfg })?;
            resp.write_artifacts(&dir)?;
            for t in &resp.trials {
                println!(
                    "trial {}: best cell d'={} N_z={} score {:.6}",
                    t.trial, t.best_cell.intrinsic_dim, t.best_cell.n_tokens, t.best_score
                );
                for c in t.cells.iter().filter(|c| !c.complete) {
                    println!("  {} incomplete: {}", c.run_id, c.error.as_deref().unwrap_or("unknown error"));
                }
            }
            println!("artifacts in {}", dir.display());
        }
        Command::Profile { scores, tau_max, tau_points, out } => {
            let matrix = read_matrix(&scores)?;
            let resp = connect()?.profile(&ProfileRequest { matrix, taus: Some(tau_grid(tau_max, tau_points)) })?;
            write_or_print(out.as_deref(), |w| analysis::write_profile_csv(&resp.curves, w))?;
        }
        Command::Rank { scores, ties, out } => {
            let matrix = read_matrix(&scores)?;
            let resp = connect()?.rank(&RankRequest { matrix, ties })?;
            write_or_print(out.as_deref(), |w| analysis::write_rank_csv(&resp.ranks, w))?;
        }
        Command::Distances { input } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let groups: Vec<LabeledGroup> = serde_json::from_str(&text)?;
            let resp = connect()?.distances(&DistancesRequest { groups })?;
            println!("{}", serde_json::to_string_pretty(&resp.groups)?);
        }
        Command::Precompute { run, parallelism } => {
            let cfg = run.exp.load()?;
            if run.trial >= cfg.trials {
                bail!("trial {} out of range; config has {} trial(s)", run.trial, cfg.trials);
            }
            let cell = run.cell(&cfg);
            let trial_seed = cfg.trial_seeds()[run.trial];
            let req = PrecomputeRequest {
                domain: cfg.domain_config(cell, trial_seed),
                feature_map: cfg.feature_map.clone(),
                seed: seed::derive(trial_seed, stream::FEATURE_MAP),
                parallelism,
            };
            let resp = connect()?.precompute(&req)?;
            let dir = run.exp.out_dir(&cfg);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("{}.features", cell.run_id(run.trial)));
            std::fs::write(&path, decode_bytes(&resp.cache)?)?;
            println!(
                "{} points x {} features from {} in {:.0} ms -> {}",
                resp.points,
                resp.feature_dim,
                resp.map_id,
                resp.elapsed_ms,
                path.display()
            );
        }
    }
    Ok(())
}
