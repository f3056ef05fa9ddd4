//! Equal error rate and per-attack breakdowns.
//!
//! A trial is accepted as bona fide when `score >= t`. Operating points are
//! taken at every distinct score plus `+inf`; the EER is read off the
//! straight segment joining the last point where FRR < FAR and the first
//! where FRR >= FAR.

use std::collections::BTreeMap;
use std::fmt;

use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
    pub label: Label,
    pub attack: Option<String>,
}

impl ScoreRecord {
    pub fn new(id: impl Into<String>, score: f64, label: Label) -> Self {
        Self {
            id: id.into(),
            score,
            label,
            attack: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    pub eer: f64,
    /// Interpolated threshold at the crossing.
    pub threshold: f64,
}

pub fn compute_eer(records: &[ScoreRecord]) -> Result<Eer> {
    let mut bona: Vec<f64> = Vec::new();
    let mut spoof: Vec<f64> = Vec::new();
    for r in records {
        if !r.score.is_finite() {
            return Err(Error::NonFinite(format!("score of `{}`", r.id)));
        }
        match r.label {
            Label::Bona => bona.push(r.score),
            Label::Spoof => spoof.push(r.score),
        }
    }
    eer_from_scores(&bona, &spoof)
}

/// EER from raw bona fide and spoof score lists.
pub fn eer_from_scores(bona: &[f64], spoof: &[f64]) -> Result<Eer> {
    if bona.is_empty() || spoof.is_empty() {
        return Err(Error::Contract(format!(
            "EER needs both classes ({} bona fide, {} spoof)",
            bona.len(),
            spoof.len()
        )));
    }
    let mut all: Vec<(f64, Label)> = bona
        .iter()
        .map(|&s| (s, Label::Bona))
        .chain(spoof.iter().map(|&s| (s, Label::Spoof)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nb, ns) = (bona.len() as f64, spoof.len() as f64);

    // walk thresholds upward; below the current score everything seen so
    // far is rejected
    let mut points: Vec<(f64, f64, f64)> = Vec::new(); // (threshold, far, frr)
    let (mut bona_below, mut spoof_below) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        points.push((t, 1.0 - spoof_below as f64 / ns, bona_below as f64 / nb));
        while i < all.len() && all[i].0 == t {
            match all[i].1 {
                Label::Bona => bona_below += 1,
                Label::Spoof => spoof_below += 1,
            }
            i += 1;
        }
    }
    points.push((f64::INFINITY, 0.0, 1.0));

    let k = points
        .iter()
        .position(|&(_, far, frr)| frr >= far)
        .expect("the +inf point has frr >= far");
    if k == 0 {
        // unreachable with both classes present: the lowest threshold has far 1, frr 0
        return Ok(Eer {
            eer: points[0].1,
            threshold: points[0].0,
        });
    }
    let (t0, far0, frr0) = points[k - 1];
    let (t1, far1, frr1) = points[k];
    let (d0, d1) = (frr0 - far0, frr1 - far1);
    let lambda = -d0 / (d1 - d0);
    let eer = far0 + lambda * (far1 - far0);
    let threshold = if t1.is_finite() { t0 + lambda * (t1 - t0) } else { t0 };
    Ok(Eer { eer, threshold })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackRow {
    pub attack: String,
    pub spoof_trials: usize,
    pub eer: Eer,
}

/// Per-attack EERs, each against every bona fide trial, plus the pooled row.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    pub rows: Vec<AttackRow>,
    pub pooled: AttackRow,
    pub bona_trials: usize,
}

pub const OTHER_ATTACK: &str = "other";

pub fn per_attack_report(records: &[ScoreRecord]) -> Result<AttackReport> {
    let bona: Vec<f64> = records.iter().filter(|r| r.label == Label::Bona).map(|r| r.score).collect();
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.label == Label::Spoof) {
        let key = r.attack.as_deref().unwrap_or(OTHER_ATTACK);
        groups.entry(key).or_default().push(r.score);
    }
    let pooled_eer = compute_eer(records)?;
    let rows = groups
        .into_iter()
        .map(|(attack, spoof)| {
            Ok(AttackRow {
                attack: attack.to_string(),
                spoof_trials: spoof.len(),
                eer: eer_from_scores(&bona, &spoof)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spoof_total = rows.iter().map(|r| r.spoof_trials).sum();
    Ok(AttackReport {
        rows,
        pooled: AttackRow {
            attack: "pooled".into(),
            spoof_trials: spoof_total,
            eer: pooled_eer,
        },
        bona_trials: bona.len(),
    })
}

impl AttackReport {
    /// Tab-separated copy for machines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("attack\tspoof_trials\teer\tthreshold\n");
        for r in self.rows.iter().chain(std::iter::once(&self.pooled)) {
            out.push_str(&format!("{}\t{}\t{:.10}\t{:.10}\n", r.attack, r.spoof_trials, r.eer.eer, r.eer.threshold));
        }
        out
    }
}

impl fmt::Display for AttackReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>9} {:>12}", "attack", "spoofs", "EER(%)", "threshold")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:>8} {:>9.3} {:>12.5}",
                r.attack,
                r.spoof_trials,
                100.0 * r.eer.eer,
                r.eer.threshold
            )?;
        }
        let p = &self.pooled;
        writeln!(
            f,
            "{:<10} {:>8} {:>9.3} {:>12.5}",
            p.attack,
            p.spoof_trials,
            100.0 * p.eer.eer,
            p.eer.threshold
        )?;
        write!(f, "bona fide trials: {}", self.bona_trials)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(bona: &[f64], spoof: &[f64]) -> Vec<ScoreRecord> {
        bona.iter()
            .enumerate()
            .map(|(i, &s)| ScoreRecord::new(format!("b{i}"), s, Label::Bona))
            .chain(spoof.iter().enumerate().map(|(i, &s)| ScoreRecord::new(format!("s{i}"), s, Label::Spoof)))
            .collect()
    }

    #[test]
    fn trivial_cases() {
        assert_eq!(compute_eer(&recs(&[0.9, 0.8], &[0.1, 0.2])).unwrap().eer, 0.0);
        assert_eq!(compute_eer(&recs(&[0.3; 4], &[0.3; 3])).unwrap().eer, 0.5);
        assert!(compute_eer(&recs(&[0.3], &[])).is_err());
    }

    #[test]
    fn interleaved_pair() {
        // the operating point at t = 0.6 has FAR = FRR = 0.5
        let e = compute_eer(&recs(&[0.9, 0.4], &[0.6, 0.1])).unwrap();
        assert_eq!(e.eer, 0.5);
        assert_eq!(e.threshold, 0.6);
    }

    #[test]
    fn interpolation_between_points() {
        // points (far, frr): t=0.1 (1, 0), t=0.5 (0.5, 0), t=0.6 (0.5, 1/3) ...
        let e = compute_eer(&recs(&[0.6, 0.7, 0.8], &[0.1, 0.5])).unwrap();
        assert_eq!(e.eer, 0.0);
        let e = compute_eer(&recs(&[0.2, 0.7, 0.8], &[0.1, 0.5])).unwrap();
        // t=0.2: far 0.5, frr 0; t=0.5: far 0.5, frr 1/3; t=0.7: far 0, frr 1/3
        assert!((e.eer - 1.0 / 3.0).abs() < 1e-12, "{e:?}");
    }

    #[test]
    fn report_rows() {
        let mut r = recs(&[0.9, 0.8, 0.7], &[0.1, 0.2, 0.85, 0.75]);
        r[3].attack = Some("A".into());
        r[4].attack = Some("A".into());
        r[5].attack = Some("B".into());
        let rep = per_attack_report(&r).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert_eq!(rep.rows[0].attack, "A");
        assert_eq!(rep.rows[0].eer.eer, 0.0);
        assert_eq!(rep.rows[2].attack, OTHER_ATTACK);
        assert_eq!(rep.pooled.spoof_trials, 4);
        assert!(rep.to_string().contains("pooled"));
        assert_eq!(rep.to_tsv().lines().count(), 5);
    }
}
