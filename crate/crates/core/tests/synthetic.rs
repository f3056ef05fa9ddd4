use std::f64::consts::PI;

use rawgat_core::data::{make_synthetic_dataset, Label, SynthConfig};
use rawgat_core::metrics::{compute_eer, eer_from_scores, per_attack_report, ScoreRecord};
use rawgat_core::sinc::SAMPLE_RATE;
use rawgat_core::train::{train_step, wce_loss, AdamState, PreparedSet, TrainConfig};
use rawgat_core::{ModelConfig, RawGatModel, Tape};

/// Energy inside the artefact band and interval, by a direct DFT.
fn band_energy(x: &[f64], cfg: &SynthConfig) -> f64 {
    let (a, b) = cfg.interval_samples();
    let seg = &x[a..b];
    let n = seg.len() as f64;
    let bin = SAMPLE_RATE as f64 / n;
    let (lo, hi) = ((cfg.band.0 / bin).ceil() as usize, (cfg.band.1 / bin).floor() as usize);
    (lo..=hi)
        .map(|k| {
            let w = 2.0 * PI * k as f64 / n;
            let re: f64 = seg.iter().enumerate().map(|(i, v)| v * (w * i as f64).cos()).sum();
            let im: f64 = seg.iter().enumerate().map(|(i, v)| v * (w * i as f64).sin()).sum();
            re * re + im * im
        })
        .sum()
}

#[test]
fn band_energy_detector_separates_the_classes() {
    let cfg = SynthConfig::default();
    let set = make_synthetic_dataset(40, 99, &cfg);
    let records: Vec<ScoreRecord> = set
        .utterances
        .iter()
        .map(|u| ScoreRecord::new(u.id.clone(), -band_energy(&u.samples, &cfg), u.label.unwrap()))
        .collect();
    assert!(compute_eer(&records).unwrap().eer < 0.05);
}

#[test]
fn synthetic_sets_are_balanced_and_reproducible() {
    let cfg = SynthConfig::default();
    let a = make_synthetic_dataset(5, 3, &cfg);
    assert_eq!(a, make_synthetic_dataset(5, 3, &cfg));
    assert_ne!(a.utterances[0].samples, make_synthetic_dataset(5, 4, &cfg).utterances[0].samples);
    let bona = a.utterances.iter().filter(|u| u.label == Some(Label::Bona)).count();
    assert_eq!((bona, a.utterances.len()), (5, 10));
    assert!(a.utterances.iter().all(|u| u.samples.len() == cfg.length));
    for (u, p) in a.utterances.iter().zip(&a.protocol) {
        assert_eq!(u.id, p.utterance);
        assert_eq!(u.label, Some(p.label));
    }
}

#[test]
fn one_small_step_lowers_the_batch_loss() {
    let model_cfg = ModelConfig::desk();
    let synth = SynthConfig { length: model_cfg.segment_length, ..SynthConfig::default() };
    let data = make_synthetic_dataset(4, 5, &synth);
    let mut model = RawGatModel::new(model_cfg).unwrap();
    let set = PreparedSet::new(&model, &data.utterances).unwrap();
    let all: Vec<usize> = (0..set.len()).collect();
    let cfg = TrainConfig { lr: 1e-5, ..TrainConfig::default() };

    let loss_now = |model: &mut RawGatModel| {
        let (x, labels) = set.batch(&all).unwrap();
        let tape = Tape::no_grad();
        let logits = model.forward(&tape, x, None, true).unwrap();
        wce_loss(&logits, &labels, cfg.weights).unwrap().data()[0]
    };
    let before = loss_now(&mut model);
    let mut adam = AdamState::new(model.store(), cfg.adam);
    let (x, labels) = set.batch(&all).unwrap();
    let reported = train_step(&mut model, &mut adam, x, &labels, None, &cfg).unwrap();
    assert!((reported - before).abs() < 1e-12);
    let after = loss_now(&mut model);
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn per_attack_rows_match_subset_eers() {
    let bona = [0.9, 0.7, 0.65, 0.2, 0.55];
    let spoof = [(0.1, "S01"), (0.6, "S02"), (0.3, "S01"), (0.8, "S02"), (0.5, "S01"), (0.05, "S03")];
    let mut records: Vec<ScoreRecord> = bona.iter().map(|&s| ScoreRecord::new("b", s, Label::Bona)).collect();
    for &(s, a) in &spoof {
        let mut r = ScoreRecord::new("s", s, Label::Spoof);
        r.attack = Some(a.into());
        records.push(r);
    }
    let report = per_attack_report(&records).unwrap();
    assert_eq!(report.bona_trials, 5);
    assert_eq!(report.rows.iter().map(|r| r.attack.as_str()).collect::<Vec<_>>(), ["S01", "S02", "S03"]);
    for row in &report.rows {
        let subset: Vec<f64> = spoof.iter().filter(|s| s.1 == row.attack).map(|s| s.0).collect();
        assert_eq!(row.spoof_trials, subset.len());
        assert_eq!(row.eer, eer_from_scores(&bona, &subset).unwrap());
    }
    let all: Vec<f64> = spoof.iter().map(|s| s.0).collect();
    assert_eq!(report.pooled.spoof_trials, 6);
    assert_eq!(report.pooled.eer, eer_from_scores(&bona, &all).unwrap());
    let tsv = report.to_tsv();
    assert!(tsv.lines().last().unwrap().starts_with("pooled\t6\t"));
}
