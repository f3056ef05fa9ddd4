//! Command-line front end: `train`, `score`, `eval`, `audit`, plus `synth`
//! for generating the synthetic corpus and `config` for printing the
//! effective configuration.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::CliConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<rawgat_core::Error> for CliError {
    fn from(e: rawgat_core::Error) -> Self {
        match e {
            rawgat_core::Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "rawgat", version, about = "RawGAT-ST anti-spoofing: train, score, evaluate, audit")]
#[command(after_long_help = config::keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on labelled manifests; writes the best checkpoint and an epoch log.
    Train(Common),
    /// Score a manifest with a checkpoint; writes `id score` lines.
    Score(Common),
    /// Pooled and per-attack EER of a score file against a protocol.
    Eval(EvalArgs),
    /// Shape trace of one forward pass and the trainable-parameter count.
    Audit(Common),
    /// Write the synthetic corpus (audio, manifests, protocols, config).
    Synth(Common),
    /// Print the effective configuration.
    Config(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds both weight initialisation and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (`output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint path (`output.checkpoint`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    /// Remove a component; repeatable.
    #[arg(long, value_enum)]
    ablate: Vec<Ablation>,
    /// Any configuration key, as `key=value`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Score file (`output.scores`).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Protocol file (`data.protocol`).
    #[arg(long)]
    protocol: Option<PathBuf>,
    /// Also write the report as tab-separated text (`output.report`).
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FusionArg {
    Add,
    Mul,
    Concat,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Ablation {
    Spectral,
    Temporal,
    Pooling,
}

fn absolute(p: &std::path::Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

impl Common {
    fn resolve(&self) -> Result<CliConfig, CliError> {
        let mut cfg = CliConfig::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        let cwd = absolute(std::path::Path::new("."));
        if let Some(seed) = self.seed {
            cfg.set("model.seed", &seed.to_string(), &cwd)?;
            cfg.set("train.seed", &seed.to_string(), &cwd)?;
        }
        if let Some(dir) = &self.out {
            cfg.output.dir = absolute(dir);
        }
        if let Some(ck) = &self.checkpoint {
            cfg.output.checkpoint = absolute(ck);
        }
        if let Some(f) = self.fusion {
            let v = match f {
                FusionArg::Add => "add",
                FusionArg::Mul => "mul",
                FusionArg::Concat => "concat",
            };
            cfg.set("model.fusion", v, &cwd)?;
        }
        for a in &self.ablate {
            let key = match a {
                Ablation::Spectral => "model.use_spectral",
                Ablation::Temporal => "model.use_temporal",
                Ablation::Pooling => "model.use_pooling",
            };
            cfg.set(key, "false", &cwd)?;
        }
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                return Err(CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")));
            };
            cfg.set(k.trim(), v.trim(), &cwd)?;
        }
        Ok(cfg)
    }
}

/// Runs the tool in-process with the given arguments (program name first)
/// and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().ansi().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Train(c) => commands::train(&c.resolve()?, out),
        Command::Score(c) => commands::score(&c.resolve()?, out),
        Command::Eval(e) => {
            let mut cfg = e.common.resolve()?;
            if let Some(s) = &e.scores {
                cfg.output.scores = absolute(s);
            }
            if let Some(p) = &e.protocol {
                cfg.data.protocol = Some(absolute(p));
            }
            if let Some(t) = &e.tsv {
                cfg.output.report = Some(absolute(t));
            }
            commands::eval(&cfg, out)
        }
        Command::Audit(c) => commands::audit(&c.resolve()?, out),
        Command::Synth(c) => commands::synth(&c.resolve()?, out),
        Command::Config(c) => {
            write!(out, "{}", c.resolve()?.to_text()).map_err(io_err)?;
            Ok(())
        }
    }
}

pub(crate) fn io_err(e: std::io::Error) -> CliError {
    CliError::Runtime(e.to_string())
}
