//! Multi-graph contrastive pretraining.
//!
//! Each step samples one graph uniformly, a batch of anchors without
//! replacement and one personalized-PageRank positive per anchor, then
//! minimises symmetric InfoNCE between the graph and text streams plus a
//! Laplacian smoothness penalty on the graph stream. The lowest-loss
//! parameters seen are retained.

mod loss;
mod ppr;

pub use loss::{infonce_symmetric, infonce_symmetric_with, laplacian_smoothing, LossGrad, NegativeBank};
pub use ppr::{ppr_scores, ppr_topk, PprIndex, PprParams};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{adam_step, AdamConfig, AdamState, ParamStore, Tape};
use crate::graph::Graph;
use crate::model::{Model, ADAPTER_PREFIX, BACKBONE_PREFIX, PROJ_PREFIX};
use crate::tensor::Tensor2;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub anchor_batch: usize,
    pub tau: f64,
    pub lambda: f64,
    pub restart: f64,
    pub ppr_iters: usize,
    pub topk: usize,
    pub neg_samples: usize,
    pub large_graph_threshold: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Treat the negative bank as constants (no gradient through it).
    pub cached_bank: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 250,
            steps_per_epoch: 128,
            anchor_batch: 1024,
            tau: 0.1,
            lambda: 5e-3,
            restart: 0.15,
            ppr_iters: 100,
            topk: 96,
            neg_samples: 1024,
            large_graph_threshold: 20_000,
            lr: 1e-5,
            weight_decay: 5e-4,
            seed: 42,
            cached_bank: false,
        }
    }
}

pub const PRETRAIN_KEYS: &[&str] = &[
    "epochs",
    "steps_per_epoch",
    "anchor_batch",
    "tau",
    "lambda",
    "restart",
    "ppr_iters",
    "topk",
    "neg_samples",
    "large_graph_threshold",
    "lr",
    "weight_decay",
    "seed",
    "cached_bank",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl PretrainConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "epochs" => self.epochs = parse_value(key, v)?,
            "steps_per_epoch" => self.steps_per_epoch = parse_value(key, v)?,
            "anchor_batch" => self.anchor_batch = parse_value(key, v)?,
            "tau" => self.tau = parse_value(key, v)?,
            "lambda" => self.lambda = parse_value(key, v)?,
            "restart" => self.restart = parse_value(key, v)?,
            "ppr_iters" => self.ppr_iters = parse_value(key, v)?,
            "topk" => self.topk = parse_value(key, v)?,
            "neg_samples" => self.neg_samples = parse_value(key, v)?,
            "large_graph_threshold" => self.large_graph_threshold = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "weight_decay" => self.weight_decay = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "cached_bank" => self.cached_bank = parse_value(key, v)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown pretraining key {other:?}; valid keys: {}",
                    PRETRAIN_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Flat `key = value` text; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PretrainConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = self;
        let _ = writeln!(s, "epochs = {}", c.epochs);
        let _ = writeln!(s, "steps_per_epoch = {}", c.steps_per_epoch);
        let _ = writeln!(s, "anchor_batch = {}", c.anchor_batch);
        let _ = writeln!(s, "tau = {}", c.tau);
        let _ = writeln!(s, "lambda = {}", c.lambda);
        let _ = writeln!(s, "restart = {}", c.restart);
        let _ = writeln!(s, "ppr_iters = {}", c.ppr_iters);
        let _ = writeln!(s, "topk = {}", c.topk);
        let _ = writeln!(s, "neg_samples = {}", c.neg_samples);
        let _ = writeln!(s, "large_graph_threshold = {}", c.large_graph_threshold);
        let _ = writeln!(s, "lr = {}", c.lr);
        let _ = writeln!(s, "weight_decay = {}", c.weight_decay);
        let _ = writeln!(s, "seed = {}", c.seed);
        let _ = writeln!(s, "cached_bank = {}", c.cached_bank);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive_ints = [
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("anchor_batch", self.anchor_batch),
            ("ppr_iters", self.ppr_iters),
            ("topk", self.topk),
            ("neg_samples", self.neg_samples),
            ("large_graph_threshold", self.large_graph_threshold),
        ];
        for (k, v) in positive_ints {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.restart > 0.0 && self.restart < 1.0) {
            return Err(Error::Config(format!(
                "restart must lie in (0, 1), got {}",
                self.restart
            )));
        }
        for (k, v) in [
            ("lambda", self.lambda),
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn ppr_params(&self) -> PprParams {
        PprParams {
            restart: self.restart,
            iterations: self.ppr_iters,
            k: self.topk,
        }
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }
}

/// One pretraining corpus member with its adapter inputs and positives.
#[derive(Debug, Clone)]
pub struct TrainGraph {
    pub id: String,
    pub graph: Graph,
    /// `[X ‖ Z^text]`
    pub inputs: Tensor2,
    pub ppr: PprIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub graph: usize,
    pub nce: f64,
    pub smooth: f64,
    pub total: f64,
}

/// `step,graph_id,nce,smooth,total` rows.
pub fn loss_history_csv(history: &[LossRecord], graphs: &[TrainGraph]) -> String {
    let mut s = String::from("step,graph_id,nce,smooth,total\n");
    for r in history {
        let id = graphs.get(r.graph).map(|g| g.id.as_str()).unwrap_or("?");
        let _ = writeln!(s, "{},{},{},{},{}", r.step, id, r.nce, r.smooth, r.total);
    }
    s
}

pub fn write_loss_history(path: &Path, history: &[LossRecord], graphs: &[TrainGraph]) -> Result<()> {
    std::fs::write(path, loss_history_csv(history, graphs)).map_err(|e| Error::io(path, e))
}

/// Everything a run produces. `model` holds the lowest-loss parameters;
/// `last` and `optimizer` are the state after the final step, for resuming.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: Model,
    pub best_loss: f64,
    pub best_step: u64,
    pub last: Model,
    pub optimizer: AdamState,
    pub history: Vec<LossRecord>,
}

/// Independent stream for step `step`.
pub(crate) fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Components of one step's loss.
#[derive(Debug, Clone, Copy)]
pub struct StepLoss {
    pub nce: f64,
    pub smooth: f64,
}

impl StepLoss {
    pub fn total(&self) -> f64 {
        self.nce + self.smooth
    }
}

/// Forward, loss and backward for one batch of `graph`; gradients land in
/// `model.params`. Parameters for which `trainable` is false get none.
#[allow(clippy::too_many_arguments)]
pub fn contrastive_step(
    model: &mut Model,
    tg: &TrainGraph,
    config: &PretrainConfig,
    rng: &mut ChaCha8Rng,
    dropout_seed: u64,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<StepLoss> {
    let n = tg.graph.node_count();
    if n < 2 {
        return Err(Error::Config(format!("graph {} has fewer than two nodes", tg.id)));
    }
    let anchors: Vec<usize> = if n <= config.anchor_batch {
        (0..n).collect()
    } else {
        sample(rng, n, config.anchor_batch).into_vec()
    };
    let pairs: Vec<(usize, usize)> = anchors
        .iter()
        .map(|&a| {
            let list = tg.ppr.positives(a);
            (a, list[rng.gen_range(0..list.len())].0)
        })
        .collect();
    let bank = if n <= config.large_graph_threshold {
        NegativeBank::Full
    } else {
        NegativeBank::Sampled(sample(rng, n, config.neg_samples.min(n)).into_vec())
    };

    model.params.zero_grad();
    let mut tape = Tape::new();
    let s = model.forward(
        &mut tape,
        &tg.id,
        &tg.graph,
        &tg.inputs,
        trainable,
        true,
        dropout_seed,
    )?;
    let g = tape.value(s.g);
    let z = tape.value(s.z);
    let nce = infonce_symmetric_with(g, z, &pairs, &bank, config.tau, config.cached_bank)?;
    let (smooth, grad_smooth) = laplacian_smoothing(g, &tg.graph, config.lambda)?;
    let loss = StepLoss {
        nce: nce.value,
        smooth,
    };
    if !loss.total().is_finite() {
        return Ok(loss);
    }
    let mut grad_g = nce.grad_g;
    grad_g.add_scaled(&grad_smooth, 1.0);
    tape.backward(&[(s.g, &grad_g), (s.z, &nce.grad_z)], &mut model.params)?;
    Ok(loss)
}

fn pretrain_trainable(graph_id: &str) -> impl Fn(&str) -> bool + '_ {
    move |name: &str| {
        name.starts_with(BACKBONE_PREFIX)
            || name.starts_with(PROJ_PREFIX)
            || name.strip_prefix(ADAPTER_PREFIX).and_then(|rest| {
                rest.strip_suffix(".weight")
                    .or_else(|| rest.strip_suffix(".bias"))
            }) == Some(graph_id)
    }
}

/// Adds any adapter the corpus needs and the model lacks.
pub fn ensure_adapters(model: &mut Model, graphs: &[TrainGraph], seed: u64) -> Result<()> {
    for tg in graphs {
        match model.adapter_input_dim(&tg.id) {
            None => {
                let d = tg
                    .inputs
                    .cols()
                    .checked_sub(model.config.context_dim)
                    .ok_or_else(|| {
                        Error::Dimension(format!(
                            "graph {}: {} input columns, fewer than the context width {}",
                            tg.id,
                            tg.inputs.cols(),
                            model.config.context_dim
                        ))
                    })?;
                model.add_adapter(&tg.id, d, seed);
            }
            Some(want) if want != tg.inputs.cols() => {
                return Err(Error::Dimension(format!(
                    "graph {}: adapter expects {want} input columns, got {}",
                    tg.id,
                    tg.inputs.cols()
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Runs steps `optimizer.step .. epochs × steps_per_epoch`. A fresh run
/// passes a default [`AdamState`]; a resumed run passes the saved one and
/// continues bit-for-bit where the interrupted run would have gone.
pub fn pretrain(
    mut model: Model,
    mut optimizer: AdamState,
    graphs: &[TrainGraph],
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    config.validate()?;
    if graphs.is_empty() {
        return Err(Error::Config("pretraining needs at least one graph".into()));
    }
    let mut ids = std::collections::BTreeSet::new();
    for tg in graphs {
        if !ids.insert(tg.id.as_str()) {
            return Err(Error::Config(format!("duplicate graph id {}", tg.id)));
        }
        if tg.ppr.node_count() != tg.graph.node_count() {
            return Err(Error::Dimension(format!(
                "graph {}: PPR index covers {} nodes, graph has {}",
                tg.id,
                tg.ppr.node_count(),
                tg.graph.node_count()
            )));
        }
    }
    ensure_adapters(&mut model, graphs, config.seed)?;
    let adam = AdamConfig {
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let total = config.total_steps();
    let mut history = Vec::with_capacity(total.saturating_sub(optimizer.step) as usize);
    let mut best: Option<(f64, u64, ParamStore)> = None;

    while optimizer.step < total {
        let step = optimizer.step;
        let mut rng = step_rng(config.seed, step);
        let gi = rng.gen_range(0..graphs.len());
        let tg = &graphs[gi];
        let trainable = pretrain_trainable(&tg.id);
        let dropout_seed = config.seed.wrapping_mul(0x9e37_79b9).wrapping_add(step);
        let loss = contrastive_step(&mut model, tg, config, &mut rng, dropout_seed, &trainable)?;
        let total_loss = loss.total();
        if !total_loss.is_finite() || !model.params.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {step} on graph {}: nce={}, smooth={}, total={}",
                tg.id, loss.nce, loss.smooth, total_loss
            )));
        }
        history.push(LossRecord {
            step,
            graph: gi,
            nce: loss.nce,
            smooth: loss.smooth,
            total: total_loss,
        });
        // the loss belongs to the parameters before this update
        if best.as_ref().is_none_or(|b| total_loss < b.0) {
            best = Some((total_loss, step, model.params.clone()));
        }
        let lr = config.lr;
        adam_step(&mut model.params, &mut optimizer, &adam, &|name| {
            trainable(name).then_some(lr)
        });
        if step.is_multiple_of(100) {
            log::debug!("step {step} graph {} loss {total_loss:.6}", tg.id);
        }
    }

    let last = model.clone();
    let (best_loss, best_step) = match best {
        Some((l, s, params)) => {
            model.params = params;
            (l, s)
        }
        None => (f64::NAN, optimizer.step),
    };
    Ok(PretrainOutcome {
        model,
        best_loss,
        best_step,
        last,
        optimizer,
        history,
    })
}
