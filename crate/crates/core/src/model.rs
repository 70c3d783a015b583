//! Per-graph adapters, the two-layer GraphSAGE backbone, the text projection
//! head and the weighted two-stream node embedding.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{decode_checkpoint, encode_checkpoint, AdamState, Checkpoint, ParamStore, Tape, Var};
use crate::graph::Graph;
use crate::prompt::CONTEXT_DIM;
use crate::tensor::Tensor2;
use crate::{Error, Result};

pub const SAGE1_SELF: &str = "backbone.sage1.w_self";
pub const SAGE1_NEIGH: &str = "backbone.sage1.w_neigh";
pub const SAGE2_SELF: &str = "backbone.sage2.w_self";
pub const SAGE2_NEIGH: &str = "backbone.sage2.w_neigh";
pub const PROJ: &str = "proj.weight";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

pub const BACKBONE_PREFIX: &str = "backbone.";
pub const PROJ_PREFIX: &str = "proj.";
pub const ADAPTER_PREFIX: &str = "adapter.";
pub const HEAD_PREFIX: &str = "head.";

pub fn adapter_weight(graph_id: &str) -> String {
    format!("adapter.{graph_id}.weight")
}

pub fn adapter_bias(graph_id: &str) -> String {
    format!("adapter.{graph_id}.bias")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub context_dim: usize,
    pub adapter_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub adapter_bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            context_dim: CONTEXT_DIM,
            adapter_dim: 1024,
            hidden_dim: 512,
            out_dim: 256,
            alpha: 0.7,
            dropout: 0.6,
            adapter_bias: true,
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "adapter_dim",
    "hidden_dim",
    "out_dim",
    "alpha",
    "dropout",
    "adapter_bias",
];

impl ModelConfig {
    /// Applies one `key=value` setting from [`MODEL_KEYS`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        }
        match key.trim() {
            "adapter_dim" => self.adapter_dim = p(key, value)?,
            "hidden_dim" => self.hidden_dim = p(key, value)?,
            "out_dim" => self.out_dim = p(key, value)?,
            "alpha" => self.alpha = p(key, value)?,
            "dropout" => self.dropout = p(key, value)?,
            "adapter_bias" => self.adapter_bias = p(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown model key {other:?}; valid keys: {}",
                    MODEL_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if [self.context_dim, self.adapter_dim, self.hidden_dim, self.out_dim].contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.out_dim
    }
}

/// Everything written to a checkpoint's metadata block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    /// Raw feature dimension of each adapter's graph.
    pub adapters: BTreeMap<String, usize>,
    /// Training-loss value of the retained parameters, when known.
    pub loss: Option<f64>,
    /// Optimizer step at which the parameters were captured.
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    adapters: BTreeMap<String, usize>,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Streams {
    pub x_tilde: Var,
    /// Graph stream, unit rows.
    pub g: Var,
    /// Text stream, unit rows.
    pub z: Var,
}

/// Glorot-uniform matrix drawn from a stream keyed by `(seed, name)`.
pub fn glorot(rows: usize, cols: usize, seed: u64, name: &str) -> Tensor2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_key(name));
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized above")
}

/// Fan-in uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` rows.
pub fn fan_in_uniform(rows: usize, cols: usize, fan_in: usize, seed: u64, name: &str) -> Tensor2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_key(name));
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized above")
}

fn name_key(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// `[X ‖ Z^text]`, or the context alone for featureless graphs.
pub fn adapter_inputs(graph_id: &str, graph: &Graph, context: &Tensor2) -> Result<Tensor2> {
    if context.rows() != graph.node_count() {
        return Err(Error::Dimension(format!(
            "graph {graph_id}: {} context rows for {} nodes",
            context.rows(),
            graph.node_count()
        )));
    }
    match graph.features() {
        Some(x) => Tensor2::hconcat(&[x, context]),
        None => Ok(context.clone()),
    }
}

/// `e_i = [α g_i ‖ (1 − α) z_i]`
pub fn node_embedding(g: &Tensor2, z: &Tensor2, alpha: f64) -> Result<Tensor2> {
    if g.shape() != z.shape() {
        return Err(Error::Dimension(format!(
            "graph stream {:?} and text stream {:?} differ",
            g.shape(),
            z.shape()
        )));
    }
    Tensor2::hconcat(&[&g.map(|v| alpha * v), &z.map(|v| (1.0 - alpha) * v)])
}

impl Model {
    /// Fresh backbone and projection; no adapters yet.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let (a, h, o) = (config.adapter_dim, config.hidden_dim, config.out_dim);
        for (name, r, c) in [
            (SAGE1_SELF, a, h),
            (SAGE1_NEIGH, a, h),
            (SAGE2_SELF, h, o),
            (SAGE2_NEIGH, h, o),
            (PROJ, a, o),
        ] {
            params.insert(name, glorot(r, c, seed, name));
        }
        Ok(Model {
            config,
            params,
            adapters: BTreeMap::new(),
        })
    }

    pub fn adapters(&self) -> &BTreeMap<String, usize> {
        &self.adapters
    }

    /// Input width the adapter for `graph_id` expects.
    pub fn adapter_input_dim(&self, graph_id: &str) -> Option<usize> {
        self.adapters.get(graph_id).map(|d| d + self.config.context_dim)
    }

    pub fn add_adapter(&mut self, graph_id: &str, feature_dim: usize, seed: u64) {
        let w = adapter_weight(graph_id);
        let rows = feature_dim + self.config.context_dim;
        self.params
            .insert(w.clone(), glorot(rows, self.config.adapter_dim, seed, &w));
        if self.config.adapter_bias {
            self.params
                .insert(adapter_bias(graph_id), Tensor2::zeros(1, self.config.adapter_dim));
        }
        self.adapters.insert(graph_id.to_string(), feature_dim);
    }

    /// Installs explicit adapter tensors (weight `(d + context) x adapter_dim`).
    pub fn set_adapter(&mut self, graph_id: &str, weight: Tensor2, bias: Option<Tensor2>) -> Result<()> {
        let ctx = self.config.context_dim;
        if weight.rows() < ctx || weight.cols() != self.config.adapter_dim {
            return Err(Error::Dimension(format!(
                "adapter for {graph_id} is {:?}, needs (d + {ctx}) x {}",
                weight.shape(),
                self.config.adapter_dim
            )));
        }
        let feature_dim = weight.rows() - ctx;
        self.params.insert(adapter_weight(graph_id), weight);
        match (bias, self.config.adapter_bias) {
            (Some(b), true) => self.params.insert(adapter_bias(graph_id), b),
            (None, true) => self
                .params
                .insert(adapter_bias(graph_id), Tensor2::zeros(1, self.config.adapter_dim)),
            _ => {}
        }
        self.adapters.insert(graph_id.to_string(), feature_dim);
        Ok(())
    }

    pub fn remove_adapter(&mut self, graph_id: &str) {
        self.params.remove(&adapter_weight(graph_id));
        self.params.remove(&adapter_bias(graph_id));
        self.adapters.remove(graph_id);
    }

    fn check_inputs(&self, graph_id: &str, inputs: &Tensor2) -> Result<()> {
        let want = self
            .adapter_input_dim(graph_id)
            .ok_or_else(|| Error::Dimension(format!("model has no adapter for graph {graph_id}")))?;
        if inputs.cols() != want {
            return Err(Error::Dimension(format!(
                "graph {graph_id}: adapter expects {want} input columns, got {}",
                inputs.cols()
            )));
        }
        Ok(())
    }

    /// `X̃ = A([X ‖ Z^text])` on the tape.
    pub fn adapt_features(
        &self,
        tape: &mut Tape<'_>,
        graph_id: &str,
        inputs: &Tensor2,
        trainable: &dyn Fn(&str) -> bool,
    ) -> Result<Var> {
        self.check_inputs(graph_id, inputs)?;
        let x = tape.constant(inputs.clone());
        let wn = adapter_weight(graph_id);
        let w = tape.param(&self.params, &wn, trainable(&wn))?;
        let b = if self.config.adapter_bias {
            let bn = adapter_bias(graph_id);
            Some(tape.param(&self.params, &bn, trainable(&bn))?)
        } else {
            None
        };
        tape.affine(x, w, b)
    }

    /// `normalize(sage2(dropout(relu(sage1(dropout(X̃))))))`
    pub fn graph_stream<'g>(
        &self,
        tape: &mut Tape<'g>,
        x_tilde: Var,
        graph: &'g Graph,
        trainable: &dyn Fn(&str) -> bool,
        training: bool,
        dropout_seed: u64,
    ) -> Result<Var> {
        let rate = self.config.dropout;
        let p = |t: &mut Tape<'g>, n: &str| t.param(&self.params, n, trainable(n));
        let d0 = tape.dropout(x_tilde, rate, training, dropout_seed.wrapping_mul(2))?;
        let ws1 = p(tape, SAGE1_SELF)?;
        let wn1 = p(tape, SAGE1_NEIGH)?;
        let h1 = tape.sage_layer(d0, graph, ws1, wn1)?;
        let d1 = tape.dropout(h1, rate, training, dropout_seed.wrapping_mul(2).wrapping_add(1))?;
        let ws2 = p(tape, SAGE2_SELF)?;
        let wn2 = p(tape, SAGE2_NEIGH)?;
        let h2 = tape.sage_linear(d1, graph, ws2, wn2)?;
        Ok(tape.row_l2_normalize(h2))
    }

    /// `normalize(X̃ W_proj)`
    pub fn text_stream(
        &self,
        tape: &mut Tape<'_>,
        x_tilde: Var,
        trainable: &dyn Fn(&str) -> bool,
    ) -> Result<Var> {
        let w = tape.param(&self.params, PROJ, trainable(PROJ))?;
        let z = tape.matmul(x_tilde, w)?;
        Ok(tape.row_l2_normalize(z))
    }

    pub fn forward<'g>(
        &self,
        tape: &mut Tape<'g>,
        graph_id: &str,
        graph: &'g Graph,
        inputs: &Tensor2,
        trainable: &dyn Fn(&str) -> bool,
        training: bool,
        dropout_seed: u64,
    ) -> Result<Streams> {
        let x_tilde = self.adapt_features(tape, graph_id, inputs, trainable)?;
        let g = self.graph_stream(tape, x_tilde, graph, trainable, training, dropout_seed)?;
        let z = self.text_stream(tape, x_tilde, trainable)?;
        Ok(Streams { x_tilde, g, z })
    }

    /// `e_i = [α g_i ‖ (1 − α) z_i]` on the tape.
    pub fn embedding_on_tape(&self, tape: &mut Tape<'_>, s: Streams) -> Result<Var> {
        let a = self.config.alpha;
        let g = tape.scale(s.g, a);
        let z = tape.scale(s.z, 1.0 - a);
        tape.concat(&[g, z])
    }

    /// Evaluation-mode `N x 512` embeddings.
    pub fn embed(&self, graph_id: &str, graph: &Graph, inputs: &Tensor2) -> Result<Tensor2> {
        let mut tape = Tape::new();
        let s = self.forward(&mut tape, graph_id, graph, inputs, &|_| false, false, 0)?;
        node_embedding(tape.value(s.g), tape.value(s.z), self.config.alpha)
    }

    pub fn meta(&self, loss: Option<f64>, step: u64) -> ModelMeta {
        ModelMeta {
            config: self.config.clone(),
            adapters: self.adapters.clone(),
            loss,
            step,
        }
    }

    pub fn to_checkpoint(&self, optimizer: &AdamState, loss: Option<f64>) -> Checkpoint {
        let meta = serde_json::to_string(&self.meta(loss, optimizer.step)).expect("metadata serializes");
        Checkpoint {
            meta,
            params: self.params.clone(),
            optimizer: optimizer.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Model, ModelMeta)> {
        let meta: ModelMeta = serde_json::from_str(&ckpt.meta)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        meta.config.validate()?;
        let model = Model {
            config: meta.config.clone(),
            params: ckpt.params.clone(),
            adapters: meta.adapters.clone(),
        };
        for name in [SAGE1_SELF, SAGE1_NEIGH, SAGE2_SELF, SAGE2_NEIGH, PROJ] {
            if !model.params.contains(name) {
                return Err(Error::Format(format!("checkpoint lacks {name}")));
            }
        }
        for id in meta.adapters.keys() {
            if !model.params.contains(&adapter_weight(id)) {
                return Err(Error::Format(format!("checkpoint lacks adapter for {id}")));
            }
        }
        Ok((model, meta))
    }

    pub fn save(&self, path: &Path, optimizer: &AdamState, loss: Option<f64>) -> Result<()> {
        let bytes = encode_checkpoint(&self.to_checkpoint(optimizer, loss));
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Model, ModelMeta, AdamState)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt = decode_checkpoint(&bytes)?;
        let (model, meta) = Model::from_checkpoint(&ckpt)?;
        Ok((model, meta, ckpt.optimizer))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_gnp;
    use crate::tensor::l2_norm;

    fn small_config() -> ModelConfig {
        ModelConfig {
            context_dim: 6,
            adapter_dim: 8,
            hidden_dim: 5,
            out_dim: 4,
            ..ModelConfig::default()
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor2 {
        glorot(rows, cols, seed, "test")
    }

    #[test]
    fn default_dimensions() {
        let m = Model::new(ModelConfig::default(), 1).unwrap();
        assert_eq!(m.params.get(SAGE1_SELF).unwrap().value.shape(), (1024, 512));
        assert_eq!(m.params.get(SAGE2_NEIGH).unwrap().value.shape(), (512, 256));
        assert_eq!(m.params.get(PROJ).unwrap().value.shape(), (1024, 256));
        assert_eq!(m.config.embedding_dim(), 512);
    }

    #[test]
    fn adapter_output_shape_with_features() {
        let mut m = Model::new(ModelConfig::default(), 1).unwrap();
        m.add_adapter("ppi", 50, 2);
        let inputs = Tensor2::zeros(10, 50 + CONTEXT_DIM);
        let mut t = Tape::new();
        let x = m.adapt_features(&mut t, "ppi", &inputs, &|_| false).unwrap();
        assert_eq!(t.value(x).shape(), (10, 1024));
        // zero inputs give bias rows, which start at zero
        assert!(t.value(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_inputs_name_the_graph() {
        let mut m = Model::new(small_config(), 1).unwrap();
        m.add_adapter("cora", 3, 1);
        let mut t = Tape::new();
        let err = m
            .adapt_features(&mut t, "cora", &Tensor2::zeros(2, 7), &|_| true)
            .unwrap_err();
        assert!(err.to_string().contains("cora"));
    }

    #[test]
    fn streams_are_unit_norm() {
        let mut m = Model::new(small_config(), 3).unwrap();
        m.add_adapter("g", 0, 3);
        let g = generate_gnp(12, 0.3, 5).unwrap();
        let inputs = random(12, 6, 9);
        let mut t = Tape::new();
        let s = m.forward(&mut t, "g", &g, &inputs, &|_| true, true, 4).unwrap();
        for v in [s.g, s.z] {
            for i in 0..12 {
                let n = l2_norm(t.value(v).row(i));
                assert!((n - 1.0).abs() < 1e-9 || n == 0.0, "{n}");
            }
        }
        let e = m.embed("g", &g, &inputs).unwrap();
        assert_eq!(e.cols(), 8);
    }

    #[test]
    fn node_embedding_norm_and_limits() {
        let g = Tensor2::from_rows(&[vec![0.6, 0.8]]).unwrap();
        let z = Tensor2::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let e = node_embedding(&g, &z, 0.7).unwrap();
        assert!((l2_norm(e.row(0)) - 0.58f64.sqrt()).abs() < 1e-12);
        let e1 = node_embedding(&g, &z, 1.0).unwrap();
        assert_eq!(e1.row(0), &[0.6, 0.8, 0.0, 0.0]);
        let half = node_embedding(&g, &g, 0.5).unwrap();
        assert_eq!(half.row(0), &[0.3, 0.4, 0.3, 0.4]);
    }

    #[test]
    fn edgeless_graph_ignores_neighbor_weights() {
        let mut m = Model::new(small_config(), 3).unwrap();
        m.add_adapter("g", 0, 3);
        let (g, _) = Graph::from_edges(5, []).unwrap();
        let inputs = random(5, 6, 1);
        let a = m.embed("g", &g, &inputs).unwrap();
        m.params.get_mut(SAGE1_NEIGH).unwrap().value = random(8, 5, 77);
        m.params.get_mut(SAGE2_NEIGH).unwrap().value = random(5, 4, 78);
        assert_eq!(a, m.embed("g", &g, &inputs).unwrap());
    }

    #[test]
    fn permutation_equivariance() {
        let mut m = Model::new(small_config(), 3).unwrap();
        m.add_adapter("g", 0, 3);
        let g = generate_gnp(8, 0.4, 2).unwrap();
        let inputs = random(8, 6, 1);
        let perm = [3, 7, 0, 5, 1, 6, 2, 4];
        let pg = g.permuted(&perm).unwrap();
        let mut inverse = [0; 8];
        for (u, &p) in perm.iter().enumerate() {
            inverse[p] = u;
        }
        let pin = inputs.select_rows(&inverse);
        let e = m.embed("g", &g, &inputs).unwrap();
        let pe = m.embed("g", &pg, &pin).unwrap();
        for u in 0..8 {
            for (a, b) in e.row(u).iter().zip(pe.row(perm[u])) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_model() {
        let mut m = Model::new(small_config(), 3).unwrap();
        m.add_adapter("a", 2, 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        m.save(&p, &AdamState::default(), Some(1.5)).unwrap();
        let (back, meta, _) = Model::load(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta.loss, Some(1.5));
    }

    #[test]
    fn alpha_outside_unit_interval_is_rejected() {
        let cfg = ModelConfig {
            alpha: 1.0,
            ..ModelConfig::default()
        };
        assert!(Model::new(cfg, 1).is_err());
    }
}
