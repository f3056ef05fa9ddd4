//! The spectro-temporal graph attention network.
//!
//! Pipeline: sinc front-end, residual encoder(s), max-abs readouts over time
//! (spectral graph) and frequency (temporal graph), one GAT + pool + node
//! projection per branch, fusion, a spectro-temporal GAT + pool, a per-node
//! feature projection to a scalar and a two-way output layer.

pub mod checkpoint;
pub mod config;
pub mod shape;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ModelConfig, SEGMENT_LENGTH};
pub use shape::{reference_table, AuditCell, AuditRow, ShapeAudit, ShapePlan, PLAN_ROWS};

use crate::encoder::ResidualEncoder;
use crate::error::{dim_err, Error, Result};
use crate::fusion::{fuse, NodeProjection};
use crate::gat::GatLayer;
use crate::params::{Dense, ParamStore};
use crate::pooling::GraphPool;
use crate::sinc::{Frontend, SincFilterbank};
use crate::tensor::{Tape, Tensor, Var};
use crate::train::mask::ChannelMask;

/// Max of absolute values over time: `[B, C, F, T] → [B, F, C]`, one node
/// per frequency row.
pub fn spectral_readout<'t>(s: &Var<'t>) -> Result<Var<'t>> {
    if s.shape().len() != 4 {
        return dim_err("spectral_readout", format!("expected [B, C, F, T], got {:?}", s.shape()));
    }
    s.abs()?.max_axis(3)?.transpose_last2()
}

/// Max of absolute values over frequency: `[B, C, F, T] → [B, T, C]`, one
/// node per time frame.
pub fn temporal_readout<'t>(s: &Var<'t>) -> Result<Var<'t>> {
    if s.shape().len() != 4 {
        return dim_err("temporal_readout", format!("expected [B, C, F, T], got {:?}", s.shape()));
    }
    s.abs()?.max_axis(2)?.transpose_last2()
}

#[derive(Clone, Debug)]
struct Branch {
    name: &'static str,
    /// Index into the model's encoders.
    encoder: usize,
    gat: GatLayer,
    pool: Option<GraphPool>,
    project: NodeProjection,
}

/// Network weights, buffers and wiring for one configuration.
#[derive(Clone, Debug)]
pub struct RawGatModel {
    config: ModelConfig,
    plan: ShapePlan,
    store: ParamStore,
    frontend: Frontend,
    encoders: Vec<ResidualEncoder>,
    branches: Vec<Branch>,
    st_gat: GatLayer,
    st_pool: Option<GraphPool>,
    st_project: Dense,
    output: Dense,
}

type Trace<'a> = &'a mut dyn FnMut(&str, Vec<usize>);

impl RawGatModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let plan = ShapePlan::derive(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let bank = SincFilterbank::build(config.sinc_filters, config.sinc_kernel, config.sample_rate)?;
        let frontend = Frontend::new(bank, config.segment_length, &mut store)?;

        let (ch, bl) = (&config.encoder_channels, &config.encoder_blocks);
        let mut encoders = Vec::new();
        let mut enc_index = |name: &str, store: &mut ParamStore, rng: &mut ChaCha8Rng| {
            if config.shared_encoder && !encoders.is_empty() {
                return 0;
            }
            let prefix = if config.shared_encoder { "encoder".to_string() } else { format!("{name}.encoder") };
            encoders.push(ResidualEncoder::new(store, &prefix, 1, ch, bl, rng));
            encoders.len() - 1
        };

        let c = *ch.last().expect("validated");
        let d = config.gat_dim;
        let mut branches = Vec::new();
        for (name, on, k) in [
            ("spectral", config.use_spectral, config.k_spec),
            ("temporal", config.use_temporal, config.k_temp),
        ] {
            if !on {
                continue;
            }
            let encoder = enc_index(name, &mut store, &mut rng);
            let gat = GatLayer::new(&mut store, &format!("{name}.gat"), c, d, &mut rng)?;
            let pool = if config.use_pooling {
                Some(GraphPool::new(&mut store, &format!("{name}.pool"), d, k, &mut rng)?)
            } else {
                None
            };
            let nodes = plan
                .expected(&format!("{name}.gat"))
                .map(|s| if config.use_pooling { plan.expected(&format!("{name}.pool")).unwrap()[1] } else { s[1] })
                .expect("planned");
            let project =
                NodeProjection::new(&mut store, &format!("{name}.project"), nodes, config.fused_nodes, &mut rng);
            branches.push(Branch {
                name,
                encoder,
                gat,
                pool,
                project,
            });
        }

        let st_in = if config.both_branches() { config.fusion.fused_dim(d) } else { d };
        let st_gat = GatLayer::new(&mut store, "st.gat", st_in, config.st_gat_dim, &mut rng)?;
        let st_pool = if config.use_pooling {
            Some(GraphPool::new(&mut store, "st.pool", config.st_gat_dim, config.k_st, &mut rng)?)
        } else {
            None
        };
        let st_project = Dense::new(&mut store, "st.project", config.st_gat_dim, 1, true, &mut rng);
        let output = Dense::new(&mut store, "output", plan.output_inputs(), 2, true, &mut rng);
        Ok(Self {
            config,
            plan,
            store,
            frontend,
            encoders,
            branches,
            st_gat,
            st_pool,
            st_project,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn plan(&self) -> &ShapePlan {
        &self.plan
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn frontend(&self) -> &Frontend {
        &self.frontend
    }

    /// Trainable scalars; the sinc kernels are fixed and not counted.
    pub fn count_parameters(&self) -> usize {
        self.store.trainable_count()
    }

    /// Frozen front-end stage for a batch of waveforms; cacheable per input.
    pub fn prepare(&self, waves: &[&[f64]]) -> Result<Tensor> {
        self.frontend.filter_and_pool(waves)
    }

    /// Logits `[B, 2]` from prepared front-end features `[B, 1, F, W]`. The
    /// channel mask is applied only in training mode.
    pub fn forward<'t>(
        &mut self,
        tape: &'t Tape,
        pooled: Tensor,
        mask: Option<&ChannelMask>,
        training: bool,
    ) -> Result<Var<'t>> {
        self.forward_traced(tape, pooled, mask, training, &mut |_, _| {})
    }

    fn forward_traced<'t>(
        &mut self,
        tape: &'t Tape,
        pooled: Tensor,
        mask: Option<&ChannelMask>,
        training: bool,
        trace: Trace<'_>,
    ) -> Result<Var<'t>> {
        let plan = &self.plan;
        let mut stage = |name: &str, shape: Vec<usize>| -> Result<()> {
            trace(name, shape.clone());
            plan.check(name, &shape)
        };
        let graph_shape = |v: &Var<'_>| vec![v.shape()[2], v.shape()[1]];

        let expected = plan.expected("maxpool").expect("planned");
        if pooled.rank() != 4 || pooled.shape()[1..] != *expected {
            return Err(Error::Stage {
                stage: "maxpool".into(),
                expected: expected.to_vec(),
                actual: pooled.shape().get(1..).unwrap_or_default().to_vec(),
            });
        }
        let b = pooled.shape()[0];
        let x = tape.constant(pooled);
        let mut x = self.frontend.normalize(&mut self.store, &x, training)?;
        if training {
            if let Some(m) = mask {
                x = m.apply(&x)?;
            }
        }

        let mut maps = Vec::with_capacity(self.encoders.len());
        for (i, enc) in self.encoders.iter().enumerate() {
            let report = i == 0;
            let h = enc.forward(&mut self.store, &x, training, |s, v| {
                if report {
                    stage(&format!("res_stack{s}"), v.shape()[1..].to_vec())?;
                }
                Ok(())
            })?;
            maps.push(h);
        }

        let mut projected = Vec::with_capacity(2);
        for br in &self.branches {
            let map = &maps[br.encoder];
            let g = if br.name == "spectral" { spectral_readout(map)? } else { temporal_readout(map)? };
            stage(&format!("{}.readout", br.name), graph_shape(&g))?;
            let mut g = br.gat.forward(&mut self.store, &g, training)?;
            stage(&format!("{}.gat", br.name), graph_shape(&g))?;
            if let Some(pool) = &br.pool {
                g = pool.forward(&self.store, &g)?.0;
                stage(&format!("{}.pool", br.name), graph_shape(&g))?;
            }
            let g = br.project.forward(&self.store, &g)?;
            stage(&format!("{}.project", br.name), graph_shape(&g))?;
            projected.push(g);
        }
        let g = match projected.as_slice() {
            [s, t] => {
                let f = fuse(s, t, self.config.fusion)?;
                stage("fusion", graph_shape(&f))?;
                f
            }
            [only] => only.clone(),
            _ => unreachable!("validated branch count"),
        };

        let mut g = self.st_gat.forward(&mut self.store, &g, training)?;
        stage("st.gat", graph_shape(&g))?;
        if let Some(pool) = &self.st_pool {
            g = pool.forward(&self.store, &g)?.0;
            stage("st.pool", graph_shape(&g))?;
        }
        let n = g.shape()[1];
        let p = self.st_project.forward(&self.store, &g)?;
        stage("st.project", graph_shape(&p))?;
        let logits = self.output.forward(&self.store, &p.reshape(&[b, n])?)?;
        stage("output", logits.shape()[1..].to_vec())?;
        Ok(logits)
    }

    /// Bona fide scores (`logit_bona − logit_spoof`) in eval mode.
    pub fn score(&mut self, waves: &[&[f64]]) -> Result<Vec<f64>> {
        let pooled = self.prepare(waves)?;
        self.score_prepared(pooled)
    }

    pub fn score_prepared(&mut self, pooled: Tensor) -> Result<Vec<f64>> {
        let tape = Tape::no_grad();
        let logits = self.forward(&tape, pooled, None, false)?;
        Ok(scores_from_logits(logits.data()))
    }

    /// One eval-mode forward pass recording every stage shape. Expectations
    /// come from the published layer plan when the configuration matches it
    /// and from the derived plan otherwise.
    pub fn audit(&mut self, wave: &[f64]) -> Result<ShapeAudit> {
        let mut seen: Vec<(String, Vec<usize>)> = Vec::new();
        let pooled = self.frontend.filter_and_pool_traced(&[wave], |s, shape| seen.push((s.to_string(), shape.to_vec())))?;
        let tape = Tape::no_grad();
        // a stage error still leaves the partial trace for the report
        let result = self.forward_traced(&tape, pooled, None, false, &mut |s, shape| seen.push((s.to_string(), shape)));
        if let Err(e) = result {
            if !matches!(e, Error::Stage { .. }) {
                return Err(e);
            }
        }
        let reference = self.config.is_reference_architecture() && self.config.both_branches() && self.config.use_pooling;
        let expected: Vec<(String, Vec<usize>)> = if reference {
            reference_table(self.config.fusion).into_iter().map(|(n, s)| (n.to_string(), s)).collect()
        } else {
            self.plan.stages().to_vec()
        };
        Ok(ShapeAudit::new(&expected, &seen, reference))
    }
}

/// `logit_bona − logit_spoof` for rows of `[spoof, bona]` logits.
pub fn scores_from_logits(logits: &[f64]) -> Vec<f64> {
    logits.chunks_exact(2).map(|l| l[1] - l[0]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            segment_length: 1200,
            sinc_filters: 12,
            sinc_kernel: 33,
            encoder_channels: vec![4, 6],
            encoder_blocks: vec![1, 1],
            gat_dim: 5,
            st_gat_dim: 3,
            fused_nodes: 3,
            mask_limit: 2,
            ..ModelConfig::default()
        }
    }

    fn waves(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect()
    }

    #[test]
    fn readouts_take_max_abs() {
        let tape = Tape::no_grad();
        let mut data = vec![0.0; 2 * 3 * 4];
        data[(1 * 3 + 2) * 4 + 1] = -5.0;
        let s = tape.constant(Tensor::new(&[1, 2, 3, 4], data).unwrap());
        let spec = spectral_readout(&s).unwrap();
        assert_eq!(spec.shape(), &[1, 3, 2]);
        assert_eq!(spec.data(), &[0.0, 0.0, 0.0, 0.0, 0.0, 5.0]);
        let temp = temporal_readout(&s).unwrap();
        assert_eq!(temp.shape(), &[1, 4, 2]);
        assert_eq!(temp.data()[1 * 2 + 1], 5.0);
    }

    #[test]
    fn logits_per_item_and_plan_respected() {
        let mut m = RawGatModel::new(tiny()).unwrap();
        let w = waves(3, 1200, 1);
        let refs: Vec<&[f64]> = w.iter().map(Vec::as_slice).collect();
        let tape = Tape::new();
        let pooled = m.prepare(&refs).unwrap();
        let y = m.forward(&tape, pooled, None, true).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        let audit = m.audit(&w[0]).unwrap();
        assert!(audit.ok(), "{audit}");
        assert!(!audit.against_reference);
    }

    #[test]
    fn ablations_build_and_run() {
        for (s, t, p) in [(false, true, true), (true, false, true), (true, true, false)] {
            let cfg = ModelConfig {
                use_spectral: s,
                use_temporal: t,
                use_pooling: p,
                ..tiny()
            };
            let mut m = RawGatModel::new(cfg).unwrap();
            let w = waves(2, 1200, 2);
            let refs: Vec<&[f64]> = w.iter().map(Vec::as_slice).collect();
            assert_eq!(m.score(&refs).unwrap().len(), 2);
        }
        let none = ModelConfig {
            use_spectral: false,
            use_temporal: false,
            ..tiny()
        };
        assert!(RawGatModel::new(none).is_err());
    }

    #[test]
    fn eval_ignores_mask() {
        let mut m = RawGatModel::new(tiny()).unwrap();
        let w = waves(2, 1200, 3);
        let refs: Vec<&[f64]> = w.iter().map(Vec::as_slice).collect();
        let pooled = m.prepare(&refs).unwrap();
        let tape = Tape::no_grad();
        let a = m.forward(&tape, pooled.clone(), None, false).unwrap().to_tensor();
        let mask = ChannelMask { start: 0, width: 2 };
        let b = m.forward(&tape, pooled, Some(&mask), false).unwrap().to_tensor();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_frontend_shape_names_stage() {
        let mut m = RawGatModel::new(tiny()).unwrap();
        let tape = Tape::no_grad();
        match m.forward(&tape, Tensor::zeros(&[1, 1, 4, 10]), None, false) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "maxpool"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shared_encoder_is_smaller() {
        let sep = RawGatModel::new(ModelConfig::default()).unwrap().count_parameters();
        let shared = RawGatModel::new(ModelConfig {
            shared_encoder: true,
            ..ModelConfig::default()
        })
        .unwrap()
        .count_parameters();
        assert!(shared < sep);
    }
}
