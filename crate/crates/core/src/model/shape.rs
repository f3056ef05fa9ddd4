//! Expected stage shapes and the shape audit.
//!
//! Feature maps are written `(channels, freq, time)` and graphs `(d, N)`,
//! i.e. feature width first, matching the usual layer-plan notation. The
//! model itself stores graphs as `[N, d]`.

use std::fmt;

use super::config::ModelConfig;
use crate::encoder::time_after_blocks;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::pooling::retained_count;
use crate::sinc::FRONTEND_POOL;

/// Rows of the layer plan and the stages that report into each one. Branch
/// rows carry a spectral and a temporal stage.
pub const PLAN_ROWS: [(&str, &[&str]); 14] = [
    ("sinc layer", &["sinc"]),
    ("add channel", &["add_channel"]),
    ("maxpool", &["maxpool"]),
    ("res stack 1", &["res_stack0"]),
    ("res stack 2", &["res_stack1"]),
    ("readout", &["spectral.readout", "temporal.readout"]),
    ("branch GAT", &["spectral.gat", "temporal.gat"]),
    ("branch pooling", &["spectral.pool", "temporal.pool"]),
    ("branch projection", &["spectral.project", "temporal.project"]),
    ("fusion", &["fusion"]),
    ("ST GAT", &["st.gat"]),
    ("ST pooling", &["st.pool"]),
    ("ST projection", &["st.project"]),
    ("output FC", &["output"]),
];

/// Output shapes of the published full-size network.
pub fn reference_table(fusion: FusionMode) -> Vec<(&'static str, Vec<usize>)> {
    let fused_d = fusion.fused_dim(32);
    vec![
        ("sinc", vec![70, 64472]),
        ("add_channel", vec![1, 70, 64472]),
        ("maxpool", vec![1, 23, 21490]),
        ("res_stack0", vec![32, 23, 2387]),
        ("res_stack1", vec![64, 23, 29]),
        ("spectral.readout", vec![64, 23]),
        ("temporal.readout", vec![64, 29]),
        ("spectral.gat", vec![32, 23]),
        ("temporal.gat", vec![32, 29]),
        ("spectral.pool", vec![32, 14]),
        ("temporal.pool", vec![32, 23]),
        ("spectral.project", vec![32, 12]),
        ("temporal.project", vec![32, 12]),
        ("fusion", vec![fused_d, 12]),
        ("st.gat", vec![16, 12]),
        ("st.pool", vec![16, 7]),
        ("st.project", vec![1, 7]),
        ("output", vec![2]),
    ]
}

/// Shapes every stage must produce for a given configuration. Stages that
/// the configuration removes (a disabled branch, skipped pooling, fusion of
/// a single branch) are absent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    stages: Vec<(String, Vec<usize>)>,
}

impl ShapePlan {
    pub fn derive(cfg: &ModelConfig) -> Result<Self> {
        let mut stages: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: &str, shape: Vec<usize>| -> Result<()> {
            if shape.contains(&0) {
                return Err(Error::Config(format!("stage `{name}` would have shape {shape:?}")));
            }
            stages.push((name.to_string(), shape));
            Ok(())
        };
        if cfg.segment_length < cfg.sinc_kernel {
            return Err(Error::Config(format!(
                "segment_length {} shorter than sinc_kernel {}",
                cfg.segment_length, cfg.sinc_kernel
            )));
        }
        let t0 = cfg.segment_length - cfg.sinc_kernel + 1;
        push("sinc", vec![cfg.sinc_filters, t0])?;
        push("add_channel", vec![1, cfg.sinc_filters, t0])?;
        let (f, mut t) = (cfg.sinc_filters / FRONTEND_POOL.0, t0 / FRONTEND_POOL.1);
        push("maxpool", vec![1, f, t])?;
        for (s, (&c, &n)) in cfg.encoder_channels.iter().zip(&cfg.encoder_blocks).enumerate() {
            t = time_after_blocks(t, n);
            push(&format!("res_stack{s}"), vec![c, f, t])?;
        }
        let c = *cfg.encoder_channels.last().ok_or_else(|| Error::Config("no encoder stacks".into()))?;
        let d = cfg.gat_dim;
        let branches = [
            ("spectral", cfg.use_spectral, f, cfg.k_spec),
            ("temporal", cfg.use_temporal, t, cfg.k_temp),
        ];
        for (branch, on, n, _) in branches {
            if on {
                push(&format!("{branch}.readout"), vec![c, n])?;
            }
        }
        for (branch, on, n, _) in branches {
            if on {
                push(&format!("{branch}.gat"), vec![d, n])?;
            }
        }
        if cfg.use_pooling {
            for (branch, on, n, k) in branches {
                if on {
                    push(&format!("{branch}.pool"), vec![d, retained_count(n, k)])?;
                }
            }
        }
        for (branch, on, ..) in branches {
            if on {
                push(&format!("{branch}.project"), vec![d, cfg.fused_nodes])?;
            }
        }
        if cfg.both_branches() {
            push("fusion", vec![cfg.fusion.fused_dim(d), cfg.fused_nodes])?;
        }
        push("st.gat", vec![cfg.st_gat_dim, cfg.fused_nodes])?;
        let n_final = if cfg.use_pooling {
            let n = retained_count(cfg.fused_nodes, cfg.k_st);
            push("st.pool", vec![cfg.st_gat_dim, n])?;
            n
        } else {
            cfg.fused_nodes
        };
        push("st.project", vec![1, n_final])?;
        push("output", vec![2])?;
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[(String, Vec<usize>)] {
        &self.stages
    }

    pub fn expected(&self, stage: &str) -> Option<&[usize]> {
        self.stages.iter().find(|(n, _)| n == stage).map(|(_, s)| s.as_slice())
    }

    /// Errors unless `stage` is planned with exactly `actual`.
    pub fn check(&self, stage: &str, actual: &[usize]) -> Result<()> {
        match self.expected(stage) {
            Some(e) if e == actual => Ok(()),
            e => Err(Error::Stage {
                stage: stage.to_string(),
                expected: e.map(<[usize]>::to_vec).unwrap_or_default(),
                actual: actual.to_vec(),
            }),
        }
    }

    /// Width of the vector fed to the output layer.
    pub fn output_inputs(&self) -> usize {
        self.expected("st.project").map(|s| s[1]).unwrap_or(0)
    }
}

/// One stage of a shape audit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditCell {
    pub stage: String,
    pub expected: Option<Vec<usize>>,
    pub actual: Option<Vec<usize>>,
}

impl AuditCell {
    pub fn ok(&self) -> bool {
        self.expected == self.actual
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditRow {
    pub label: &'static str,
    pub cells: Vec<AuditCell>,
}

impl AuditRow {
    pub fn ok(&self) -> bool {
        self.cells.iter().all(AuditCell::ok)
    }
}

/// Observed stage shapes lined up against expectations, one row per plan row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeAudit {
    pub rows: Vec<AuditRow>,
    /// Whether expectations came from the published layer plan rather than
    /// the configuration's derived plan.
    pub against_reference: bool,
}

impl ShapeAudit {
    pub fn new(expected: &[(String, Vec<usize>)], actual: &[(String, Vec<usize>)], against_reference: bool) -> Self {
        let lookup = |list: &[(String, Vec<usize>)], s: &str| list.iter().find(|(n, _)| n == s).map(|(_, v)| v.clone());
        let rows = PLAN_ROWS
            .iter()
            .map(|&(label, stages)| AuditRow {
                label,
                cells: stages
                    .iter()
                    .map(|&s| AuditCell {
                        stage: s.to_string(),
                        expected: lookup(expected, s),
                        actual: lookup(actual, s),
                    })
                    .collect(),
            })
            .collect();
        Self {
            rows,
            against_reference,
        }
    }

    pub fn ok(&self) -> bool {
        self.rows.iter().all(AuditRow::ok)
    }

    /// Label of the first row whose shapes diverge.
    pub fn first_divergence(&self) -> Option<&'static str> {
        self.rows.iter().find(|r| !r.ok()).map(|r| r.label)
    }
}

fn fmt_shape(s: &Option<Vec<usize>>) -> String {
    match s {
        None => "-".into(),
        Some(v) if v.len() == 1 => v[0].to_string(),
        Some(v) => format!("({})", v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
    }
}

impl fmt::Display for ShapeAudit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            let cells: Vec<String> = row
                .cells
                .iter()
                .map(|c| {
                    if c.ok() {
                        fmt_shape(&c.actual)
                    } else {
                        format!("{} (expected {})", fmt_shape(&c.actual), fmt_shape(&c.expected))
                    }
                })
                .collect();
            let status = if !row.ok() {
                "DIVERGED"
            } else if row.cells.iter().all(|c| c.actual.is_none()) {
                "SKIPPED"
            } else {
                "OK"
            };
            writeln!(f, "{:<18} {:<28} {}", row.label, cells.join("  "), status)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(plan: &ShapePlan) -> Vec<&str> {
        plan.stages().iter().map(|(n, _)| n.as_str()).collect()
    }

    #[test]
    fn default_plan_is_reference_table() {
        for mode in FusionMode::ALL {
            let cfg = ModelConfig {
                fusion: mode,
                ..ModelConfig::default()
            };
            let plan = ShapePlan::derive(&cfg).unwrap();
            let reference: Vec<(String, Vec<usize>)> =
                reference_table(mode).into_iter().map(|(n, s)| (n.to_string(), s)).collect();
            assert_eq!(plan.stages(), reference.as_slice());
        }
    }

    #[test]
    fn unpooled_plan() {
        let cfg = ModelConfig {
            use_pooling: false,
            ..ModelConfig::default()
        };
        let plan = ShapePlan::derive(&cfg).unwrap();
        assert!(plan.expected("spectral.pool").is_none() && plan.expected("st.pool").is_none());
        assert_eq!(plan.expected("spectral.project"), Some(&[32, 12][..]));
        assert_eq!(plan.expected("st.project"), Some(&[1, 12][..]));
        assert_eq!(plan.output_inputs(), 12);
    }

    #[test]
    fn single_branch_plan_has_no_fusion() {
        let cfg = ModelConfig {
            use_spectral: false,
            ..ModelConfig::default()
        };
        let plan = ShapePlan::derive(&cfg).unwrap();
        assert!(!names(&plan).iter().any(|n| n.starts_with("spectral") || *n == "fusion"));
        assert_eq!(plan.expected("st.gat"), Some(&[16, 12][..]));
    }

    #[test]
    fn check_names_stage() {
        let plan = ShapePlan::derive(&ModelConfig::default()).unwrap();
        assert!(plan.check("st.pool", &[16, 7]).is_ok());
        match plan.check("st.pool", &[16, 8]) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "st.pool"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn too_short_segment_rejected() {
        let cfg = ModelConfig {
            segment_length: 2000,
            ..ModelConfig::default()
        };
        assert!(ShapePlan::derive(&cfg).is_err());
    }
}
