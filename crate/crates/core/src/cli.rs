//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bundle::{load_bundle, DatasetBundle};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::TrainConfig;
use crate::error::Error;
use crate::eval::{ablation_grid, ablation_run, classify_and_evaluate, report_table};
use crate::export::export_latents;
use crate::gradsuite::run_suite;
use crate::loss::GraphMode;
use crate::synth::{gen_synth, SynthParams};
use crate::train::{train, write_epoch_log};

/// Exit code for bad invocations (unknown flags, missing inputs).
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures while running a valid invocation.
pub const EXIT_FAILURE: i32 = 1;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const EPOCH_LOG_FILE: &str = "epochs.tsv";

#[derive(Debug, Parser)]
#[command(name = "gpvae", version, about = "Graph-prior aligned VAEs for generalized zero-shot learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic hierarchical benchmark bundle.
    GenSynth(GenSynthArgs),
    /// Train on a bundle and write a checkpoint plus epoch log.
    Train(TrainArgs),
    /// Fit the latent classifier for a checkpoint and report U / S / H.
    Evaluate(EvaluateArgs),
    /// Run the loss-term ablation grid.
    Ablate(AblateArgs),
    /// Dump attribute-encoder means of every graph node.
    ExportLatents(ExportArgs),
    /// Check every objective term against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file of generator parameters; flags below override it.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub branching: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub unseen_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_graph_mode)]
    pub graph_mode: Option<GraphMode>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Export over the flat baseline graph instead of the stored one.
    #[arg(long)]
    pub flat: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accepted points per term.
    #[arg(long, default_value_t = 20)]
    pub points: usize,
}

fn parse_graph_mode(s: &str) -> Result<GraphMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

fn require_dir(p: &Path) -> Result<(), CliError> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such directory: {}", p.display())))
    }
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such file: {}", p.display())))
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, CliError> {
    match path {
        Some(p) => {
            require_file(p)?;
            Ok(TrainConfig::load(p)?)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Run(Error::io("<stdout>", e));
    match cli.command {
        Command::GenSynth(a) => {
            let mut params = match &a.params {
                Some(p) => {
                    require_file(p)?;
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => SynthParams::default(),
            };
            if let Some(s) = a.seed {
                params.seed = s;
            }
            if let Some(b) = a.branching {
                params.branching = b;
            }
            if let Some(d) = a.depth {
                params.depth = d;
            }
            if let Some(f) = a.unseen_fraction {
                params.unseen_fraction = f;
            }
            let bundle = gen_synth(&params)?;
            bundle.save(&a.out)?;
            writeln!(
                out,
                "wrote {} ({} seen, {} unseen, {} internal, {} instances)",
                a.out.display(),
                bundle.manifest.num_seen_classes,
                bundle.manifest.num_unseen_classes,
                bundle.manifest.num_graph_nodes_without_images,
                bundle.manifest.num_instances
            )
            .map_err(io)?;
        }
        Command::Train(a) => {
            require_dir(&a.dataset)?;
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(m) = a.graph_mode {
                cfg.graph_mode = m;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let (dataset, graph) = load_bundle(&a.dataset)?;
            let outcome = train(&dataset, &graph, &cfg)?;
            std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            save_checkpoint(&outcome.bundle, &cfg, &a.out.join(CHECKPOINT_FILE))?;
            write_epoch_log(&outcome.stats, &a.out.join(EPOCH_LOG_FILE))?;
            let last = outcome.stats.last().map_or(f64::NAN, |s| s.total);
            writeln!(
                out,
                "trained {} epochs ({}); final mean loss {last:.4}; wrote {}",
                cfg.epochs,
                cfg.fingerprint(),
                a.out.display()
            )
            .map_err(io)?;
        }
        Command::Evaluate(a) => {
            require_file(&a.checkpoint)?;
            require_dir(&a.dataset)?;
            let (bundle, cfg) = load_checkpoint(&a.checkpoint)?;
            let (dataset, _) = load_bundle(&a.dataset)?;
            if bundle.feature_dim() != dataset.feature_dim() || bundle.attribute_dim() != dataset.attribute_dim() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint expects feature/attribute dims {}/{}, dataset has {}/{}",
                    bundle.feature_dim(),
                    bundle.attribute_dim(),
                    dataset.feature_dim(),
                    dataset.attribute_dim()
                ))
                .into());
            }
            let report = classify_and_evaluate(&bundle, &dataset, &cfg)?;
            writeln!(out, "{}", report.record()).map_err(io)?;
            write!(out, "{}", report_table(std::slice::from_ref(&report))).map_err(io)?;
        }
        Command::Ablate(a) => {
            require_dir(&a.dataset)?;
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let (dataset, graph) = load_bundle(&a.dataset)?;
            let reports = ablation_run(&dataset, &graph, &cfg, &ablation_grid())?;
            for r in &reports {
                writeln!(out, "{}", r.record()).map_err(io)?;
            }
            write!(out, "{}", report_table(&reports)).map_err(io)?;
        }
        Command::ExportLatents(a) => {
            require_file(&a.checkpoint)?;
            require_dir(&a.dataset)?;
            let (bundle, _) = load_checkpoint(&a.checkpoint)?;
            let graph = DatasetBundle::load(&a.dataset)?.to_graph()?;
            let graph = if a.flat { crate::graph::flat_graph_of(&graph)? } else { graph };
            let n = export_latents(&bundle.attribute_encoder, &graph, &a.out)?;
            writeln!(out, "wrote {n} records to {}", a.out.display()).map_err(io)?;
        }
        Command::Gradcheck(a) => {
            let checks = run_suite(a.points, a.seed)?;
            let mut worst: f64 = 0.0;
            for c in &checks {
                writeln!(
                    out,
                    "{:<24} points={:<4} rejected={:<4} max_rel_err={:.3e}",
                    c.term, c.points, c.rejected, c.max_rel_error
                )
                .map_err(io)?;
                worst = worst.max(c.max_rel_error);
            }
            writeln!(out, "worst relative error {worst:.3e}").map_err(io)?;
            if worst >= 1e-4 {
                return Err(Error::InvalidArgument(format!("gradient check failed: {worst:.3e} >= 1e-4")).into());
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Output goes to `out`, diagnostics to stderr.
pub fn cli_main_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    cli_main_with(args, &mut std::io::stdout().lock())
}
