//! Synthetic two-class corpus for desk-scale experiments.
//!
//! Bona fide items are voiced harmonic tones with a slow amplitude envelope,
//! low-pass ("pink-ish") noise and a faint white floor. Spoofed items are
//! built the same way and then carry an artefact confined to a fixed
//! frequency band and a fixed time interval: a noise burst (attack `S01`) or
//! a tone sweep (attack `S02`), alternating.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, ProtocolEntry, Utterance};
use crate::sinc::SAMPLE_RATE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Samples per utterance.
    pub length: usize,
    /// Artefact band in Hz.
    pub band: (f64, f64),
    /// Artefact interval as fractions of the utterance.
    pub interval: (f64, f64),
    /// Range of the artefact's RMS level.
    pub amplitude: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            length: 8_000,
            band: (4_000.0, 5_000.0),
            interval: (0.35, 0.65),
            amplitude: (0.1, 0.2),
        }
    }
}

impl SynthConfig {
    pub fn interval_samples(&self) -> (usize, usize) {
        let a = (self.interval.0 * self.length as f64).round() as usize;
        let b = (self.interval.1 * self.length as f64).round() as usize;
        (a.min(self.length), b.min(self.length))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    pub utterances: Vec<Utterance>,
    /// One protocol line per utterance, same order.
    pub protocol: Vec<ProtocolEntry>,
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn base_signal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let f0 = rng.gen_range(100.0..300.0);
    let harmonics = ((3_500.0 / f0) as usize).max(1);
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let (rate, env_phase) = (rng.gen_range(2.0..6.0), rng.gen_range(0.0..2.0 * PI));
    let mut voiced: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let env = 0.6 + 0.4 * (2.0 * PI * rate * t + env_phase).sin();
            env * phases
                .iter()
                .enumerate()
                .map(|(h, p)| (2.0 * PI * f0 * (h + 1) as f64 * t + p).sin() / (h + 1) as f64)
                .sum::<f64>()
        })
        .collect();
    let scale = 0.1 / rms(&voiced).max(1e-12);
    voiced.iter_mut().for_each(|v| *v *= scale);

    let (pink_level, floor) = (rng.gen_range(0.01..0.03), rng.gen_range(0.002..0.01));
    let mut state = 0.0;
    let mut pink: Vec<f64> = (0..n)
        .map(|_| {
            state = 0.9 * state + rng.gen_range(-1.0..1.0);
            state
        })
        .collect();
    let scale = pink_level / rms(&pink).max(1e-12);
    pink.iter_mut().for_each(|v| *v *= scale);
    let white_scale = floor * 3f64.sqrt();
    voiced
        .iter()
        .zip(&pink)
        .map(|(v, p)| v + p + white_scale * rng.gen_range(-1.0..1.0))
        .collect()
}

fn artefact(rng: &mut ChaCha8Rng, cfg: &SynthConfig, tonal: bool) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let (a, b) = cfg.interval_samples();
    let len = b - a;
    let (lo, hi) = cfg.band;
    let mut burst: Vec<f64> = if tonal {
        let phase = rng.gen_range(0.0..2.0 * PI);
        let span = len.max(1) as f64 / fs;
        // linear sweep across the band
        (0..len)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * PI * (lo * t + (hi - lo) * t * t / (2.0 * span)) + phase).sin()
            })
            .collect()
    } else {
        let comps: Vec<(f64, f64)> = (0..24)
            .map(|_| (rng.gen_range(lo..hi), rng.gen_range(0.0..2.0 * PI)))
            .collect();
        (0..len)
            .map(|i| {
                let t = i as f64 / fs;
                comps.iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum::<f64>()
            })
            .collect()
    };
    let level = rng.gen_range(cfg.amplitude.0..=cfg.amplitude.1);
    let scale = level / rms(&burst).max(1e-12);
    for (i, v) in burst.iter_mut().enumerate() {
        // Hann taper keeps the burst's edges from leaking out of band
        let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (len.max(2) - 1) as f64).cos();
        *v *= scale * w;
    }
    burst
}

/// `n_per_class` bona fide and `n_per_class` spoofed utterances, bona fide
/// first. Identical for identical arguments.
pub fn make_synthetic_dataset(n_per_class: usize, seed: u64, cfg: &SynthConfig) -> SyntheticSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = SyntheticSet {
        utterances: Vec::with_capacity(2 * n_per_class),
        protocol: Vec::with_capacity(2 * n_per_class),
    };
    let (start, _) = cfg.interval_samples();
    for label in [Label::Bona, Label::Spoof] {
        for i in 0..n_per_class {
            let mut samples = base_signal(&mut rng, cfg.length);
            let (id, key) = match label {
                Label::Bona => (format!("bona_{seed}_{i:04}"), "-".to_string()),
                Label::Spoof => {
                    let tonal = i % 2 == 1;
                    let burst = artefact(&mut rng, cfg, tonal);
                    for (s, b) in samples[start..].iter_mut().zip(&burst) {
                        *s += b;
                    }
                    let key = if tonal { "S02" } else { "S01" };
                    (format!("spoof_{seed}_{i:04}"), key.to_string())
                }
            };
            set.protocol.push(ProtocolEntry {
                speaker: format!("SYN{:02}", i % 10),
                utterance: id.clone(),
                system: "-".into(),
                key,
                label,
            });
            set.utterances.push(Utterance {
                id,
                samples,
                label: Some(label),
            });
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let cfg = SynthConfig {
            length: 2_000,
            ..SynthConfig::default()
        };
        let a = make_synthetic_dataset(5, 7, &cfg);
        let b = make_synthetic_dataset(5, 7, &cfg);
        assert_eq!(a, b);
        let bona = a.utterances.iter().filter(|u| u.label == Some(Label::Bona)).count();
        assert_eq!((bona, a.utterances.len()), (5, 10));
        assert!(a.utterances.iter().all(|u| u.samples.len() == 2_000));
        assert_ne!(a, make_synthetic_dataset(5, 8, &cfg));
    }

    #[test]
    fn artefact_confined_to_interval() {
        let cfg = SynthConfig {
            length: 4_000,
            ..SynthConfig::default()
        };
        let (a, b) = cfg.interval_samples();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for tonal in [false, true] {
            let x = artefact(&mut rng, &cfg, tonal);
            assert_eq!(x.len(), b - a);
            assert!(x[0].abs() < 1e-12);
        }
    }
}
