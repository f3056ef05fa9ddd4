use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rawgat_core::data::{
    fix_length, load_wav, make_synthetic_dataset, parse_protocol, read_manifest, write_manifest, write_wav,
    ManifestEntry, ProtocolEntry, Utterance,
};
use rawgat_core::metrics::{per_attack_report, ScoreRecord};
use rawgat_core::model::checkpoint;
use rawgat_core::train::{train as run_training, PreparedSet, TrainOutputs};
use rawgat_core::RawGatModel;

use crate::config::CliConfig;
use crate::{io_err, CliError};

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(text).map_err(io_err)?;
    out.write_all(b"\n").map_err(io_err)
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("{key} is not set")))
}

fn manifest(path: &Path, key: &str) -> Result<Vec<ManifestEntry>, CliError> {
    read_manifest(path).map_err(|e| CliError::Runtime(format!("{key}: {e}")))
}

fn load_entries(entries: &[ManifestEntry], key: &str, need_labels: bool) -> Result<Vec<Utterance>, CliError> {
    entries
        .iter()
        .map(|entry| {
            let mut u = load_wav(&entry.path).map_err(|e| CliError::Runtime(format!("{key}: {e}")))?;
            u.label = entry.label;
            if need_labels && u.label.is_none() {
                return Err(CliError::Runtime(format!("{key}: {} has no label", entry.path.display())));
            }
            Ok(u)
        })
        .collect()
}

fn build_model(cfg: &CliConfig) -> Result<RawGatModel, CliError> {
    cfg.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(RawGatModel::new(cfg.model.clone())?)
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err),
        _ => Ok(()),
    }
}

pub fn train(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let train_path = required(&cfg.data.train_manifest, "data.train_manifest")?;
    let dev_path = required(&cfg.data.dev_manifest, "data.dev_manifest")?;
    cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut model = build_model(cfg)?;
    let train_utts = load_entries(&manifest(train_path, "data.train_manifest")?, "data.train_manifest", true)?;
    let dev_utts = load_entries(&manifest(dev_path, "data.dev_manifest")?, "data.dev_manifest", true)?;
    let train_set = PreparedSet::new(&model, &train_utts)?;
    let dev_set = PreparedSet::new(&model, &dev_utts)?;

    let outputs = TrainOutputs {
        checkpoint: Some(cfg.output.resolve(&cfg.output.checkpoint)),
        log: Some(cfg.output.resolve(&cfg.output.log)),
    };
    for p in [&outputs.checkpoint, &outputs.log].into_iter().flatten() {
        ensure_parent(p)?;
    }
    say(
        out,
        format_args!(
            "training {} trainable parameters on {} utterances ({} dev)",
            model.count_parameters(),
            train_set.len(),
            dev_set.len()
        ),
    )?;
    let epochs = cfg.train.epochs;
    let mut progress = |s: &rawgat_core::train::EpochStats| {
        let _ = writeln!(
            out,
            "epoch {:>3}/{epochs}  train {:.5}  dev {:.5}  {:.1}s",
            s.epoch, s.train_loss, s.dev_loss, s.seconds
        );
    };
    let report = run_training(&mut model, &train_set, &dev_set, &cfg.train, &outputs, &mut progress)?;
    say(
        out,
        format_args!(
            "best epoch {} (dev loss {}); checkpoint {}",
            report.best_epoch,
            report.best_dev_loss,
            outputs.checkpoint.as_ref().expect("set").display()
        ),
    )
}

/// Explicitly configured model keys must agree with the checkpoint.
fn check_against_checkpoint(cfg: &CliConfig, model: &RawGatModel) -> Result<(), CliError> {
    let stored = CliConfig {
        model: model.config().clone(),
        ..CliConfig::default()
    };
    for key in &cfg.model_keys {
        let (want, have) = (cfg.render(key), stored.render(key));
        if want != have {
            return Err(CliError::Usage(format!(
                "{key}: configuration asks for {} but the checkpoint was built with {}",
                want.unwrap_or_default(),
                have.unwrap_or_default()
            )));
        }
    }
    Ok(())
}

pub fn score(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let list = required(&cfg.data.score_manifest, "data.score_manifest")?;
    let ck = cfg.output.resolve(&cfg.output.checkpoint);
    let (mut model, _) = checkpoint::load(&ck).map_err(|e| CliError::Runtime(format!("{}: {e}", ck.display())))?;
    check_against_checkpoint(cfg, &model)?;
    let utts = load_entries(&manifest(list, "data.score_manifest")?, "data.score_manifest", false)?;
    let len = model.config().segment_length;
    let mut text = String::new();
    for chunk in utts.chunks(cfg.train.batch_size.max(1)) {
        let waves = chunk
            .iter()
            .map(|u| fix_length(&u.samples, len))
            .collect::<rawgat_core::Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = waves.iter().map(Vec::as_slice).collect();
        for (u, s) in chunk.iter().zip(model.score(&refs)?) {
            text.push_str(&format!("{} {}\n", u.id, s));
        }
    }
    let dest = cfg.output.resolve(&cfg.output.scores);
    ensure_parent(&dest)?;
    checkpoint::write_atomic(&dest, text.as_bytes())?;
    say(out, format_args!("scored {} utterances into {}", utts.len(), dest.display()))
}

/// `id score` lines; blank lines are skipped.
pub fn parse_scores(text: &str) -> Result<Vec<(String, f64)>, CliError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[..] {
            [] => continue,
            [id, s] => {
                let score: f64 = s
                    .parse()
                    .map_err(|_| CliError::Runtime(format!("score file line {}: bad score `{s}`", i + 1)))?;
                if !seen.insert(id.to_string()) {
                    return Err(CliError::Runtime(format!("score file line {}: duplicate id `{id}`", i + 1)));
                }
                out.push((id.to_string(), score));
            }
            _ => {
                return Err(CliError::Runtime(format!(
                    "score file line {}: expected `id score`, got `{line}`",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn eval(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let protocol_path = required(&cfg.data.protocol, "data.protocol")?;
    let scores_path = cfg.output.resolve(&cfg.output.scores);
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())));
    let scores = parse_scores(&read(&scores_path)?)?;
    let protocol = parse_protocol(&read(protocol_path)?)?;
    let by_id: HashMap<&str, &ProtocolEntry> = protocol.iter().map(|p| (p.utterance.as_str(), p)).collect();
    let mut records = Vec::with_capacity(scores.len());
    for (id, s) in scores {
        let entry = by_id.get(id.as_str()).ok_or_else(|| {
            CliError::Runtime(format!("utterance `{id}` from {} is not in the protocol", scores_path.display()))
        })?;
        records.push(ScoreRecord {
            attack: entry.attack().map(str::to_string),
            ..ScoreRecord::new(id, s, entry.label)
        });
    }
    let report = per_attack_report(&records)?;
    say(out, format_args!("{report}"))?;
    say(out, format_args!("pooled EER: {:.4}%", 100.0 * report.pooled.eer.eer))?;
    if let Some(p) = &cfg.output.report {
        let dest = cfg.output.resolve(p);
        ensure_parent(&dest)?;
        checkpoint::write_atomic(&dest, report.to_tsv().as_bytes())?;
    }
    Ok(())
}

/// Deterministic probe signal for the shape trace.
fn probe_wave(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            0.1 * (2.0 * std::f64::consts::PI * 220.0 * t).sin() + 0.05 * (2.0 * std::f64::consts::PI * 3_100.0 * t).sin()
        })
        .collect()
}

pub fn audit(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let mut model = build_model(cfg)?;
    let started = Instant::now();
    let audit = model.audit(&probe_wave(cfg.model.segment_length))?;
    say(out, format_args!("{audit}"))?;
    say(out, format_args!("trainable parameters: {}", model.count_parameters()))?;
    say(out, format_args!("forward pass: {:.2}s", started.elapsed().as_secs_f64()))?;
    match audit.first_divergence() {
        None => Ok(()),
        Some(stage) => Err(CliError::Runtime(format!("shape divergence at {stage}"))),
    }
}

fn write_wav_atomic(path: &Path, samples: &[f64]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write_wav(&tmp, samples)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn synth(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let s = &cfg.synth;
    if s.train_per_class == 0 || s.dev_per_class == 0 || s.artefact.length == 0 {
        return Err(CliError::Usage("synth sizes must be positive".into()));
    }
    let root = &cfg.output.dir;
    for (split, n, seed) in [("train", s.train_per_class, s.train_seed), ("dev", s.dev_per_class, s.dev_seed)] {
        let set = make_synthetic_dataset(n, seed, &s.artefact);
        let dir = root.join(split);
        fs::create_dir_all(&dir).map_err(io_err)?;
        let mut entries = Vec::with_capacity(set.utterances.len());
        for u in &set.utterances {
            let path = dir.join(format!("{}.wav", u.id));
            write_wav_atomic(&path, &u.samples)?;
            entries.push(ManifestEntry { path, label: u.label });
        }
        checkpoint::write_atomic(&root.join(format!("{split}.lst")), write_manifest(&entries, root).as_bytes())?;
        let protocol: String = set.protocol.iter().map(|p| format!("{p}\n")).collect();
        checkpoint::write_atomic(&root.join(format!("{split}_protocol.txt")), protocol.as_bytes())?;
        say(out, format_args!("{split}: {} utterances in {}", set.utterances.len(), dir.display()))?;
    }
    let quickstart = format!(
        "# synthetic quickstart\nmodel.preset = desk\nmodel.segment_length = {}\n\
         data.train_manifest = train.lst\ndata.dev_manifest = dev.lst\n\
         data.score_manifest = dev.lst\ndata.protocol = dev_protocol.txt\n",
        s.artefact.length
    );
    checkpoint::write_atomic(&root.join("quickstart.cfg"), quickstart.as_bytes())?;
    say(out, format_args!("config: {}", root.join("quickstart.cfg").display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_lines() {
        let s = parse_scores("a 1.5\n\nb -2\n").unwrap();
        assert_eq!(s, vec![("a".to_string(), 1.5), ("b".to_string(), -2.0)]);
        assert!(parse_scores("a 1 2\n").is_err());
        assert!(parse_scores("a x\n").is_err());
        assert!(parse_scores("a 1\na 2\n").is_err());
    }
}
