//! Flat `section.key = value` configuration with flag overrides.
//!
//! Blank lines and `#` comments are ignored. Every key is listed in [`KEYS`];
//! anything else is rejected by name. Relative paths in a file resolve
//! against that file's directory, relative output paths against
//! `output.dir`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rawgat_core::data::SynthConfig;
use rawgat_core::train::TrainConfig;
use rawgat_core::{FusionMode, ModelConfig};

use crate::CliError;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("model.preset", "starting point for the model keys: reference | desk"),
    ("model.segment_length", "samples per input segment"),
    ("model.sample_rate", "audio sample rate in Hz"),
    ("model.sinc_filters", "number of sinc band-pass filters"),
    ("model.sinc_kernel", "sinc kernel length (odd)"),
    ("model.encoder_channels", "comma-separated output channels per residual stack"),
    ("model.encoder_blocks", "comma-separated block counts per residual stack"),
    ("model.shared_encoder", "one encoder for both branches (true | false)"),
    ("model.gat_dim", "output width of the spectral and temporal GAT layers"),
    ("model.st_gat_dim", "output width of the spectro-temporal GAT layer"),
    ("model.fused_nodes", "node count of both branches before fusion"),
    ("model.fusion", "branch fusion: add | mul | concat"),
    ("model.k_spec", "pooling ratio of the spectral graph"),
    ("model.k_temp", "pooling ratio of the temporal graph"),
    ("model.k_st", "pooling ratio of the fused graph"),
    ("model.use_spectral", "keep the spectral branch"),
    ("model.use_temporal", "keep the temporal branch"),
    ("model.use_pooling", "keep the graph pooling layers"),
    ("model.mask_limit", "largest number of masked front-end rows"),
    ("model.seed", "weight initialisation seed"),
    ("train.lr", "Adam learning rate"),
    ("train.batch_size", "utterances per optimiser step"),
    ("train.epochs", "number of epochs"),
    ("train.weight_bona", "loss weight of bona fide utterances"),
    ("train.weight_spoof", "loss weight of spoofed utterances"),
    ("train.beta1", "Adam first-moment decay"),
    ("train.beta2", "Adam second-moment decay"),
    ("train.eps", "Adam denominator offset"),
    ("train.seed", "shuffling and masking seed"),
    ("data.train_manifest", "labelled manifest of training audio"),
    ("data.dev_manifest", "labelled manifest of development audio"),
    ("data.score_manifest", "manifest of audio to score"),
    ("data.protocol", "protocol file used by eval"),
    ("output.dir", "base directory for relative output paths"),
    ("output.checkpoint", "checkpoint written by train and read by score"),
    ("output.log", "per-epoch training log"),
    ("output.scores", "score file written by score and read by eval"),
    ("output.report", "tab-separated eval report (written only when set)"),
    ("synth.train_per_class", "synthetic training utterances per class"),
    ("synth.dev_per_class", "synthetic development utterances per class"),
    ("synth.train_seed", "seed of the synthetic training set"),
    ("synth.dev_seed", "seed of the synthetic development set"),
    ("synth.length", "samples per synthetic utterance"),
    ("synth.band_low", "lower edge of the artefact band in Hz"),
    ("synth.band_high", "upper edge of the artefact band in Hz"),
    ("synth.interval_start", "artefact start as a fraction of the utterance"),
    ("synth.interval_end", "artefact end as a fraction of the utterance"),
    ("synth.amplitude_min", "smallest artefact RMS level"),
    ("synth.amplitude_max", "largest artefact RMS level"),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataPaths {
    pub train_manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub score_manifest: Option<PathBuf>,
    pub protocol: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputPaths {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub scores: PathBuf,
    pub report: Option<PathBuf>,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("."),
            checkpoint: PathBuf::from("model.ckpt"),
            log: PathBuf::from("train_log.tsv"),
            scores: PathBuf::from("scores.txt"),
            report: None,
        }
    }
}

impl OutputPaths {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSettings {
    pub train_per_class: usize,
    pub dev_per_class: usize,
    pub train_seed: u64,
    pub dev_seed: u64,
    pub artefact: SynthConfig,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            train_per_class: 100,
            dev_per_class: 40,
            train_seed: 11,
            dev_seed: 12,
            artefact: SynthConfig {
                length: ModelConfig::desk().segment_length,
                ..SynthConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataPaths,
    pub output: OutputPaths,
    pub synth: SynthSettings,
    /// `model.*` keys set explicitly by a file or a flag.
    pub model_keys: BTreeSet<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Reference,
    Desk,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Reference,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataPaths::default(),
            output: OutputPaths::default(),
            synth: SynthSettings::default(),
            model_keys: BTreeSet::new(),
        }
    }
}

/// One `key = value` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_entries(text: &str) -> Result<Vec<Entry>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("config line {}: expected `key = value`, got `{line}`", i + 1)));
        };
        out.push(Entry {
            line: i + 1,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn path_in(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_relative() {
        base.join(p)
    } else {
        p
    }
}

impl CliConfig {
    /// Applies entries in order, except that `model.preset` always goes
    /// first so it never clobbers an explicit model key.
    pub fn apply_entries(&mut self, entries: &[Entry], base: &Path) -> Result<(), CliError> {
        let (preset, rest): (Vec<&Entry>, Vec<&Entry>) = entries.iter().partition(|e| e.key == "model.preset");
        for e in preset.into_iter().chain(rest) {
            self.set(&e.key, &e.value, base)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), CliError> {
        let m = &mut self.model;
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "model.preset" => {
                self.preset = match value {
                    "reference" => Preset::Reference,
                    "desk" => Preset::Desk,
                    other => return Err(CliError::Usage(format!("model.preset: unknown preset `{other}`"))),
                };
                *m = match self.preset {
                    Preset::Reference => ModelConfig::default(),
                    Preset::Desk => ModelConfig::desk(),
                };
                // earlier explicit keys are superseded
                self.model_keys.clear();
                return Ok(());
            }
            "model.segment_length" => m.segment_length = parse(key, value)?,
            "model.sample_rate" => m.sample_rate = parse(key, value)?,
            "model.sinc_filters" => m.sinc_filters = parse(key, value)?,
            "model.sinc_kernel" => m.sinc_kernel = parse(key, value)?,
            "model.encoder_channels" => m.encoder_channels = parse_list(key, value)?,
            "model.encoder_blocks" => m.encoder_blocks = parse_list(key, value)?,
            "model.shared_encoder" => m.shared_encoder = parse(key, value)?,
            "model.gat_dim" => m.gat_dim = parse(key, value)?,
            "model.st_gat_dim" => m.st_gat_dim = parse(key, value)?,
            "model.fused_nodes" => m.fused_nodes = parse(key, value)?,
            "model.fusion" => m.fusion = parse::<FusionMode>(key, value)?,
            "model.k_spec" => m.k_spec = parse(key, value)?,
            "model.k_temp" => m.k_temp = parse(key, value)?,
            "model.k_st" => m.k_st = parse(key, value)?,
            "model.use_spectral" => m.use_spectral = parse(key, value)?,
            "model.use_temporal" => m.use_temporal = parse(key, value)?,
            "model.use_pooling" => m.use_pooling = parse(key, value)?,
            "model.mask_limit" => m.mask_limit = parse(key, value)?,
            "model.seed" => m.seed = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.weight_bona" => t.weights.bona = parse(key, value)?,
            "train.weight_spoof" => t.weights.spoof = parse(key, value)?,
            "train.beta1" => t.adam.beta1 = parse(key, value)?,
            "train.beta2" => t.adam.beta2 = parse(key, value)?,
            "train.eps" => t.adam.eps = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "data.train_manifest" => self.data.train_manifest = Some(path_in(base, value)),
            "data.dev_manifest" => self.data.dev_manifest = Some(path_in(base, value)),
            "data.score_manifest" => self.data.score_manifest = Some(path_in(base, value)),
            "data.protocol" => self.data.protocol = Some(path_in(base, value)),
            "output.dir" => self.output.dir = path_in(base, value),
            "output.checkpoint" => self.output.checkpoint = PathBuf::from(value),
            "output.log" => self.output.log = PathBuf::from(value),
            "output.scores" => self.output.scores = PathBuf::from(value),
            "output.report" => self.output.report = (!value.is_empty()).then(|| PathBuf::from(value)),
            "synth.train_per_class" => s.train_per_class = parse(key, value)?,
            "synth.dev_per_class" => s.dev_per_class = parse(key, value)?,
            "synth.train_seed" => s.train_seed = parse(key, value)?,
            "synth.dev_seed" => s.dev_seed = parse(key, value)?,
            "synth.length" => s.artefact.length = parse(key, value)?,
            "synth.band_low" => s.artefact.band.0 = parse(key, value)?,
            "synth.band_high" => s.artefact.band.1 = parse(key, value)?,
            "synth.interval_start" => s.artefact.interval.0 = parse(key, value)?,
            "synth.interval_end" => s.artefact.interval.1 = parse(key, value)?,
            "synth.amplitude_min" => s.artefact.amplitude.0 = parse(key, value)?,
            "synth.amplitude_max" => s.artefact.amplitude.1 = parse(key, value)?,
            other => return Err(CliError::Usage(format!("unknown configuration key `{other}`"))),
        }
        if key.starts_with("model.") {
            self.model_keys.insert(key.to_string());
        }
        Ok(())
    }

    /// Current value of `key` in the syntax [`CliConfig::set`] accepts.
    pub fn render(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let t = &self.train;
        let s = &self.synth;
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "model.preset" => match self.preset {
                Preset::Reference => "reference".into(),
                Preset::Desk => "desk".into(),
            },
            "model.segment_length" => m.segment_length.to_string(),
            "model.sample_rate" => m.sample_rate.to_string(),
            "model.sinc_filters" => m.sinc_filters.to_string(),
            "model.sinc_kernel" => m.sinc_kernel.to_string(),
            "model.encoder_channels" => list(&m.encoder_channels),
            "model.encoder_blocks" => list(&m.encoder_blocks),
            "model.shared_encoder" => m.shared_encoder.to_string(),
            "model.gat_dim" => m.gat_dim.to_string(),
            "model.st_gat_dim" => m.st_gat_dim.to_string(),
            "model.fused_nodes" => m.fused_nodes.to_string(),
            "model.fusion" => m.fusion.to_string(),
            "model.k_spec" => m.k_spec.to_string(),
            "model.k_temp" => m.k_temp.to_string(),
            "model.k_st" => m.k_st.to_string(),
            "model.use_spectral" => m.use_spectral.to_string(),
            "model.use_temporal" => m.use_temporal.to_string(),
            "model.use_pooling" => m.use_pooling.to_string(),
            "model.mask_limit" => m.mask_limit.to_string(),
            "model.seed" => m.seed.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.weight_bona" => t.weights.bona.to_string(),
            "train.weight_spoof" => t.weights.spoof.to_string(),
            "train.beta1" => t.adam.beta1.to_string(),
            "train.beta2" => t.adam.beta2.to_string(),
            "train.eps" => t.adam.eps.to_string(),
            "train.seed" => t.seed.to_string(),
            "data.train_manifest" => path(&self.data.train_manifest),
            "data.dev_manifest" => path(&self.data.dev_manifest),
            "data.score_manifest" => path(&self.data.score_manifest),
            "data.protocol" => path(&self.data.protocol),
            "output.dir" => self.output.dir.display().to_string(),
            "output.checkpoint" => self.output.checkpoint.display().to_string(),
            "output.log" => self.output.log.display().to_string(),
            "output.scores" => self.output.scores.display().to_string(),
            "output.report" => path(&self.output.report),
            "synth.train_per_class" => s.train_per_class.to_string(),
            "synth.dev_per_class" => s.dev_per_class.to_string(),
            "synth.train_seed" => s.train_seed.to_string(),
            "synth.dev_seed" => s.dev_seed.to_string(),
            "synth.length" => s.artefact.length.to_string(),
            "synth.band_low" => s.artefact.band.0.to_string(),
            "synth.band_high" => s.artefact.band.1.to_string(),
            "synth.interval_start" => s.artefact.interval.0.to_string(),
            "synth.interval_end" => s.artefact.interval.1.to_string(),
            "synth.amplitude_min" => s.artefact.amplitude.0.to_string(),
            "synth.amplitude_max" => s.artefact.amplitude.1.to_string(),
            _ => return None,
        })
    }

    /// Every key with its current value, one `key = value` line each.
    /// Unset optional paths are left out.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            let v = self.render(key).expect("listed key");
            if !v.is_empty() {
                writeln!(out, "{key} = {v}").expect("string write");
            }
        }
        out
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let entries = parse_entries(&text)
            .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))?;
        self.apply_entries(&entries, path.parent().unwrap_or(Path::new(".")))
    }
}

/// Key table for the help text.
pub fn keys_help() -> String {
    let defaults = CliConfig::default();
    let mut out = String::from("Configuration keys (file lines `key = value`, defaults in brackets):\n");
    for (key, about) in KEYS {
        let d = defaults.render(key).expect("listed key");
        let d = if d.is_empty() { "unset".to_string() } else { d };
        writeln!(out, "  {key:<24} {about} [{d}]").expect("string write");
    }
    out
}
