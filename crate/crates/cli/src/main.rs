//! `vistr`: scene import, synthetic generation, training, retrieval,
//! localisation, evaluation and benchmarking.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig};

/// Visible structure retrieval for camera relocalisation.
///
/// Settings come from `--config` (TOML) and can be overridden by flags.
/// Log verbosity is read from `VISTR_LOG` (error, warn, info, debug, trace).
#[derive(Debug, Parser)]
#[command(name = "vistr", version)]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Config key `threads`.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random choice. Config key `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert text scene and/or query files to the binary formats.
    Import(ImportArgs),
    /// Generate a synthetic scene bundle and query set.
    GenScene(GenSceneArgs),
    /// Train a scene model.
    Train(TrainArgs),
    /// Sample structure for one query and dump the retrieved submap.
    Retrieve(RetrieveArgs),
    /// Localise every query and write pose records.
    Localize(LocalizeArgs),
    /// Score pose records against ground truth.
    Eval(EvalArgs),
    /// Time the four pipeline stages over the query set.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Default)]
pub struct ImportArgs {
    /// Text scene file. `paths.scene_text`.
    #[arg(long)]
    pub scene_text: Option<PathBuf>,
    /// Text query file. `paths.query_text`.
    #[arg(long)]
    pub query_text: Option<PathBuf>,
    /// Output bundle. `paths.bundle`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Output query file. `paths.queries`.
    #[arg(long)]
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct GenSceneArgs {
    /// Output bundle. `paths.bundle`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Output query file. `paths.queries`.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// `scene.points`.
    #[arg(long)]
    pub points: Option<usize>,
    /// `scene.cameras`.
    #[arg(long)]
    pub cameras: Option<usize>,
    /// `scene.embedding_dim`.
    #[arg(long)]
    pub embedding_dim: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// `paths.bundle`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Output checkpoint. `paths.model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output CSV training log. `paths.train_log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// `train.iterations`.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct RetrievalFlags {
    /// `retrieval.samples`.
    #[arg(long)]
    pub samples: Option<usize>,
    /// `retrieval.radius`, metres.
    #[arg(long)]
    pub radius: Option<f64>,
    /// `retrieval.voxel`, metres; 0 disables downsampling.
    #[arg(long)]
    pub voxel: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct RetrieveArgs {
    /// `paths.model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `paths.bundle`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// `paths.queries`.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// `retrieval.query`.
    #[arg(long)]
    pub query_id: Option<u64>,
    /// Output submap dump. `paths.submap`.
    #[arg(long)]
    pub submap: Option<PathBuf>,
    #[command(flatten)]
    pub retrieval: RetrievalFlags,
}

#[derive(Debug, Args, Default)]
pub struct LocalizeArgs {
    /// `paths.model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `paths.bundle`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// `paths.queries`.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Output pose records. `paths.poses`.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Output per-query stage times (not reproducible). `paths.timings`.
    #[arg(long)]
    pub timings: Option<PathBuf>,
    #[command(flatten)]
    pub retrieval: RetrievalFlags,
    /// `ransac.threshold`, pixels.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct EvalArgs {
    /// `paths.poses`.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Queries with ground truth. `paths.queries`.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Optional model, for the storage table. `paths.model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Optional bundle, for the storage table. `paths.bundle`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Output report; per-query records go to `<report>.records`. `paths.report`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct BenchArgs {
    /// `paths.model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `paths.bundle`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// `paths.queries`.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// `bench.repeat`.
    #[arg(long)]
    pub repeat: Option<usize>,
    #[command(flatten)]
    pub retrieval: RetrievalFlags,
}

/// Failure surfaced to the user as one `error kind=... code=...` line.
#[derive(Debug)]
pub enum Failure {
    Lib(vistr::Error),
    Config(String),
    Training { error: vistr::Error, saved: Option<PathBuf> },
}

impl From<vistr::Error> for Failure {
    fn from(e: vistr::Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl Failure {
    fn kind_and_code(&self) -> (&'static str, u8) {
        use vistr::Error as E;
        match self {
            Failure::Config(_) => ("config", 8),
            Failure::Training { error, .. } | Failure::Lib(error) => match error {
                E::Io(_) => ("io", 3),
                E::Format(_) => ("format", 4),
                E::Integrity(_) => ("integrity", 5),
                E::Shape(_) => ("shape", 6),
                E::Data(_) => ("data", 7),
                E::InvalidArgument(_) => ("invalid", 8),
                E::Degenerate(_) => ("degenerate", 9),
                E::Divergence { .. } => ("convergence", 10),
                E::InsufficientMatches { .. } | E::EmptySubmap => ("localisation", 11),
                E::UndefinedMetric(_) => ("metric", 12),
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
            Failure::Training { error, saved: Some(p) } => format!("{error}; last good model saved to {}", p.display()),
            Failure::Training { error, saved: None } => error.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VISTR_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, code) = f.kind_and_code();
            let msg = f.message().replace('\n', " ");
            eprintln!("error kind={kind} code={code} message={msg:?}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let exec = commands::setup_threads(cfg.threads)?;
    match cli.command {
        Command::Import(a) => commands::import(cfg, a),
        Command::GenScene(a) => commands::gen_scene(cfg, a),
        Command::Train(a) => commands::train(cfg, a, exec),
        Command::Retrieve(a) => commands::retrieve(cfg, a, exec),
        Command::Localize(a) => commands::localize(cfg, a, exec),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::Bench(a) => commands::bench(cfg, a, exec),
    }
}
