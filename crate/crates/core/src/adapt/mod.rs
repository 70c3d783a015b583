//! Downstream adaptation to a new graph and the three evaluation regimes:
//! zero-shot linear probe, two-stage supervised fine-tuning and few-shot
//! probing.

mod probe;
mod report;

pub use probe::{
    few_shot_curve, few_shot_report, fit_logistic, zero_shot_probe, LabelProbe, ProbeConfig, ProbeModel,
    Standardizer,
};
pub use report::{evaluate_scores, EpochLog, EvalReport, FewShotRow, LabelResult, LabelStatus};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{adam_step, AdamConfig, AdamState, ParamStore, Tape};
use crate::graph::{Graph, Labels, SplitTag};
use crate::metrics::{mean_defined, roc_auc};
use crate::model::{
    adapter_bias, adapter_weight, fan_in_uniform, Model, ADAPTER_PREFIX, BACKBONE_PREFIX, HEAD_BIAS,
    HEAD_PREFIX, HEAD_WEIGHT, PROJ_PREFIX,
};
use crate::pretrain::{contrastive_step, step_rng, LossRecord, PretrainConfig, TrainGraph, PRETRAIN_KEYS};
use crate::tensor::Tensor2;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub patience: usize,
    pub lr_backbone: f64,
    pub lr_proj: f64,
    pub lr_adapter: f64,
    pub lr_head: f64,
    pub weight_decay: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            stage1_epochs: 100,
            stage2_epochs: 100,
            patience: 20,
            lr_backbone: 1e-5,
            lr_proj: 1e-5,
            lr_adapter: 1e-4,
            lr_head: 1e-3,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Unlabeled contrastive tuning steps on the target graph.
    pub tune_steps: usize,
    pub tune_lr: f64,
    pub probe: ProbeConfig,
    pub finetune: FinetuneConfig,
    pub k_grid: Vec<usize>,
    pub few_shot_seeds: usize,
    pub seed: u64,
    /// Objective settings of the unlabeled tuning (epochs and lr unused).
    pub objective: PretrainConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            tune_steps: 2000,
            tune_lr: 1e-4,
            probe: ProbeConfig::default(),
            finetune: FinetuneConfig::default(),
            k_grid: vec![1, 5, 10, 20],
            few_shot_seeds: 5,
            seed: 42,
            objective: PretrainConfig::default(),
        }
    }
}

pub const ADAPT_KEYS: &[&str] = &[
    "tune_steps",
    "tune_lr",
    "probe_l2",
    "probe_iterations",
    "stage1_epochs",
    "stage2_epochs",
    "patience",
    "lr_backbone",
    "lr_proj",
    "lr_adapter",
    "lr_head",
    "ft_weight_decay",
    "k_grid",
    "few_shot_seeds",
    "seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl AdaptConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let ft = &mut self.finetune;
        match key {
            "tune_steps" => self.tune_steps = parse(key, value)?,
            "tune_lr" => self.tune_lr = parse(key, value)?,
            "probe_l2" => self.probe.l2 = parse(key, value)?,
            "probe_iterations" => self.probe.iterations = parse(key, value)?,
            "stage1_epochs" => ft.stage1_epochs = parse(key, value)?,
            "stage2_epochs" => ft.stage2_epochs = parse(key, value)?,
            "patience" => ft.patience = parse(key, value)?,
            "lr_backbone" => ft.lr_backbone = parse(key, value)?,
            "lr_proj" => ft.lr_proj = parse(key, value)?,
            "lr_adapter" => ft.lr_adapter = parse(key, value)?,
            "lr_head" => ft.lr_head = parse(key, value)?,
            "ft_weight_decay" => ft.weight_decay = parse(key, value)?,
            "k_grid" => {
                self.k_grid = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "few_shot_seeds" => self.few_shot_seeds = parse(key, value)?,
            "seed" => {
                self.seed = parse(key, value)?;
                self.objective.seed = self.seed;
            }
            other if PRETRAIN_KEYS.contains(&other) => self.objective.set(other, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown adaptation key {other:?}; valid keys: {}, {}",
                    ADAPT_KEYS.join(", "),
                    PRETRAIN_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Flat `key = value` text; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = AdaptConfig::default();
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

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        let ft = &self.finetune;
        for (k, v) in [
            ("tune_lr", self.tune_lr),
            ("lr_backbone", ft.lr_backbone),
            ("lr_proj", ft.lr_proj),
            ("lr_adapter", ft.lr_adapter),
            ("lr_head", ft.lr_head),
            ("probe_l2", self.probe.l2),
            ("ft_weight_decay", ft.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be non-negative, got {v}")));
            }
        }
        if self.k_grid.contains(&0) {
            return Err(Error::Config("few-shot K must be positive".into()));
        }
        if self.few_shot_seeds == 0 || self.probe.iterations == 0 {
            return Err(Error::Config(
                "few_shot_seeds and probe_iterations must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Seeds of the few-shot draws: `seed, seed + 1, …`.
    pub fn few_shot_seed_list(&self) -> Vec<u64> {
        (0..self.few_shot_seeds as u64).map(|i| self.seed + i).collect()
    }
}

/// Installs an adapter for `graph_id` initialised from the pretrained ones:
/// context rows and bias are their elementwise mean; raw-feature rows are
/// averaged over adapters of the same feature width, or drawn fresh with
/// fan-in scaling when none matches.
pub fn init_adapter_from_mean(
    model: &mut Model,
    graph_id: &str,
    feature_dim: usize,
    seed: u64,
) -> Result<()> {
    let sources: Vec<(String, usize)> = model
        .adapters()
        .iter()
        .filter(|(id, _)| id.as_str() != graph_id)
        .map(|(id, &d)| (id.clone(), d))
        .collect();
    if sources.is_empty() {
        return Err(Error::Config(
            "the model has no pretrained adapter to average".into(),
        ));
    }
    let ctx = model.config.context_dim;
    let width = model.config.adapter_dim;
    let mut weight = Tensor2::zeros(feature_dim + ctx, width);
    let mut bias = Tensor2::zeros(1, width);
    let same_width: Vec<&String> = sources
        .iter()
        .filter(|s| s.1 == feature_dim)
        .map(|s| &s.0)
        .collect();
    for (id, d) in &sources {
        let w = &model
            .params
            .get(&adapter_weight(id))
            .expect("registered adapter")
            .value;
        for r in 0..ctx {
            for (o, v) in weight.row_mut(feature_dim + r).iter_mut().zip(w.row(d + r)) {
                *o += v / sources.len() as f64;
            }
        }
        if let Some(b) = model.params.get(&adapter_bias(id)) {
            bias.add_scaled(&b.value, 1.0 / sources.len() as f64);
        }
        if same_width.contains(&id) {
            for r in 0..feature_dim {
                for (o, v) in weight.row_mut(r).iter_mut().zip(w.row(r)) {
                    *o += v / same_width.len() as f64;
                }
            }
        }
    }
    if same_width.is_empty() && feature_dim > 0 {
        let fresh = fan_in_uniform(
            feature_dim,
            width,
            feature_dim + ctx,
            seed,
            &adapter_weight(graph_id),
        );
        for r in 0..feature_dim {
            weight.row_mut(r).copy_from_slice(fresh.row(r));
        }
    }
    let bias = model.config.adapter_bias.then_some(bias);
    model.set_adapter(graph_id, weight, bias)
}

fn is_adapter_of(name: &str, graph_id: &str) -> bool {
    name.strip_prefix(ADAPTER_PREFIX)
        .and_then(|r| r.strip_suffix(".weight").or_else(|| r.strip_suffix(".bias")))
        == Some(graph_id)
}

/// Checksum of every parameter outside the adapters and head.
fn shared_checksum(params: &ParamStore) -> String {
    format!(
        "{}{}",
        params.checksum(BACKBONE_PREFIX),
        params.checksum(PROJ_PREFIX)
    )
}

/// Contrastive tuning of the target graph's adapter alone; the backbone and
/// projection are frozen. Returns the per-step losses.
pub fn tune_adapter_unlabeled(
    model: &mut Model,
    tg: &TrainGraph,
    config: &AdaptConfig,
) -> Result<Vec<LossRecord>> {
    let frozen = shared_checksum(&model.params);
    let trainable = |n: &str| is_adapter_of(n, &tg.id);
    let adam = AdamConfig {
        weight_decay: config.objective.weight_decay,
        ..AdamConfig::default()
    };
    let mut state = AdamState::default();
    let mut history = Vec::with_capacity(config.tune_steps);
    for step in 0..config.tune_steps as u64 {
        let mut rng = step_rng(config.seed ^ 0x7475_6e65, step);
        let dropout_seed = config.seed.wrapping_mul(0x9e37_79b9).wrapping_add(step) ^ 0x7475_6e65;
        let loss = contrastive_step(model, tg, &config.objective, &mut rng, dropout_seed, &trainable)?;
        if !loss.total().is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at tuning step {step} on graph {}: nce={}, smooth={}",
                tg.id, loss.nce, loss.smooth
            )));
        }
        history.push(LossRecord {
            step,
            graph: 0,
            nce: loss.nce,
            smooth: loss.smooth,
            total: loss.total(),
        });
        let lr = config.tune_lr;
        adam_step(&mut model.params, &mut state, &adam, &|n| {
            trainable(n).then_some(lr)
        });
    }
    assert_eq!(
        frozen,
        shared_checksum(&model.params),
        "frozen parameters moved during tuning"
    );
    Ok(history)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Head logits for every node; `training` enables dropout.
fn head_forward<'g>(
    model: &Model,
    tape: &mut Tape<'g>,
    graph_id: &str,
    graph: &'g Graph,
    inputs: &Tensor2,
    trainable: &dyn Fn(&str) -> bool,
    training: bool,
    dropout_seed: u64,
) -> Result<crate::diffcore::Var> {
    let s = model.forward(tape, graph_id, graph, inputs, trainable, training, dropout_seed)?;
    let e = model.embedding_on_tape(tape, s)?;
    let w = tape.param(&model.params, HEAD_WEIGHT, trainable(HEAD_WEIGHT))?;
    let b = tape.param(&model.params, HEAD_BIAS, trainable(HEAD_BIAS))?;
    tape.affine(e, w, Some(b))
}

/// Sigmoid scores of the classification head in evaluation mode, one
/// vector per label.
pub fn head_scores(model: &Model, graph_id: &str, graph: &Graph, inputs: &Tensor2) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let out = head_forward(model, &mut tape, graph_id, graph, inputs, &|_| false, false, 0)?;
    let logits = tape.value(out);
    Ok((0..logits.cols())
        .map(|l| (0..logits.rows()).map(|i| sigmoid(logits.get(i, l))).collect())
        .collect())
}

fn valid_mean_auc(scores: &[Vec<f64>], columns: &[Vec<bool>], rows: &[usize]) -> Option<f64> {
    let aucs: Vec<Option<f64>> = scores
        .iter()
        .zip(columns)
        .map(|(s, c)| {
            let vs: Vec<f64> = rows.iter().map(|&i| s[i]).collect();
            let vl: Vec<bool> = rows.iter().map(|&i| c[i]).collect();
            roc_auc(&vs, &vl)
        })
        .collect();
    mean_defined(&aucs)
}

pub struct FinetuneOutcome {
    /// Parameters of the best-validation epoch, head included.
    pub model: Model,
    pub report: EvalReport,
}

/// Two-stage supervised fine-tuning with a fresh affine head under binary
/// cross-entropy. Stage 1 trains adapter and head; stage 2 unfreezes
/// everything with per-group learning rates. Each epoch is one full-graph
/// step followed by a validation pass; the best-validation parameters are
/// restored before the test evaluation.
pub fn finetune_two_stage(
    mut model: Model,
    graph_id: &str,
    graph: &Graph,
    inputs: &Tensor2,
    config: &AdaptConfig,
) -> Result<FinetuneOutcome> {
    let labels: &Labels = graph
        .labels()
        .ok_or_else(|| Error::Config(format!("graph {graph_id} has no labels")))?;
    let split: &[SplitTag] = graph
        .split()
        .ok_or_else(|| Error::Config(format!("graph {graph_id} has no split")))?;
    let nodes = |t: SplitTag| -> Vec<usize> { (0..split.len()).filter(|&i| split[i] == t).collect() };
    let (train, valid) = (nodes(SplitTag::Train), nodes(SplitTag::Valid));
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Config(
            "fine-tuning needs non-empty train and validation splits".into(),
        ));
    }
    let nl = labels.num_labels();
    let columns: Vec<Vec<bool>> = (0..nl).map(|l| labels.column(l)).collect();
    if valid_mean_auc(&vec![vec![0.0; graph.node_count()]; nl], &columns, &valid).is_none() {
        return Err(Error::Config(
            "no label has both classes among the validation nodes".into(),
        ));
    }
    let emb_dim = model.config.embedding_dim();
    // zero head: the first steps move it along the class-mean direction
    // instead of ranking by a random projection
    model.params.insert(HEAD_WEIGHT, Tensor2::zeros(emb_dim, nl));
    model.params.insert(HEAD_BIAS, Tensor2::zeros(1, nl));

    let ft = &config.finetune;
    let adam = AdamConfig {
        weight_decay: ft.weight_decay,
        ..AdamConfig::default()
    };
    let mut state = AdamState::default();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut epoch = 0usize;
    let mut seed_rng = step_rng(config.seed ^ 0x6674, 0);

    for stage in [1u8, 2] {
        let frozen = shared_checksum(&model.params);
        let lr_for = |n: &str| -> Option<f64> {
            if n.starts_with(HEAD_PREFIX) {
                Some(ft.lr_head)
            } else if is_adapter_of(n, graph_id) {
                Some(ft.lr_adapter)
            } else if stage == 1 {
                None
            } else if n.starts_with(BACKBONE_PREFIX) {
                Some(ft.lr_backbone)
            } else if n.starts_with(PROJ_PREFIX) {
                Some(ft.lr_proj)
            } else {
                None
            }
        };
        let trainable = |n: &str| lr_for(n).is_some();
        let budget = if stage == 1 {
            ft.stage1_epochs
        } else {
            ft.stage2_epochs
        };
        let mut since_best = 0;
        for _ in 0..budget {
            model.params.zero_grad();
            let mut tape = Tape::new();
            let dropout_seed: u64 = seed_rng.gen();
            let out = head_forward(
                &model,
                &mut tape,
                graph_id,
                graph,
                inputs,
                &trainable,
                true,
                dropout_seed,
            )?;
            let logits = tape.value(out);
            let mut grad = Tensor2::zeros(logits.rows(), nl);
            let denom = (train.len() * nl) as f64;
            let mut loss = 0.0;
            for &i in &train {
                for l in 0..nl {
                    let x = logits.get(i, l);
                    let y = if columns[l][i] { 1.0 } else { 0.0 };
                    // softplus(x) − y·x
                    loss += x.max(0.0) + (-x.abs()).exp().ln_1p() - y * x;
                    grad.set(i, l, (sigmoid(x) - y) / denom);
                }
            }
            loss /= denom;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite fine-tuning loss in stage {stage}, epoch {epoch}"
                )));
            }
            tape.backward(&[(out, &grad)], &mut model.params)?;
            adam_step(&mut model.params, &mut state, &adam, &lr_for);
            if !model.params.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite parameters after stage {stage}, epoch {epoch}"
                )));
            }
            let scores = head_scores(&model, graph_id, graph, inputs)?;
            let vauc = valid_mean_auc(&scores, &columns, &valid);
            log.push(EpochLog {
                stage,
                epoch,
                loss,
                valid_auc: vauc,
            });
            let v = vauc.unwrap_or(f64::NEG_INFINITY);
            if best.as_ref().is_none_or(|b| v > b.0) {
                best = Some((v, epoch, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            epoch += 1;
            if since_best >= ft.patience {
                break;
            }
        }
        if stage == 1 {
            assert_eq!(
                frozen,
                shared_checksum(&model.params),
                "frozen parameters moved in stage 1"
            );
        }
    }

    let (best_valid, best_epoch, params) =
        best.ok_or_else(|| Error::Config("fine-tuning ran zero epochs".into()))?;
    model.params = params;
    let scores = head_scores(&model, graph_id, graph, inputs)?;
    let scored: Vec<Option<Vec<f64>>> = scores.into_iter().map(Some).collect();
    let mut report = evaluate_scores("finetune", &scored, &columns, split)?;
    for (r, l) in report.labels.iter_mut().enumerate() {
        let tr: Vec<bool> = train.iter().map(|&i| columns[r][i]).collect();
        if !(tr.iter().any(|&b| b) && tr.iter().any(|&b| !b)) && l.auc.is_none() {
            l.status = LabelStatus::TrainSingleClass;
        }
    }
    report.epochs = log;
    report.best_epoch = Some(best_epoch);
    report.best_valid_auc = Some(best_valid);
    report.seed = Some(config.seed);
    report.config = serde_json::to_value(ft).expect("config serializes");
    Ok(FinetuneOutcome { model, report })
}
