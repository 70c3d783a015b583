//! Pretrains on three synthetic two-block graphs, adapts to a fourth and
//! probes block membership, printing the probe AUCs.

use std::time::Instant;

use gfm_core::adapt::{
    init_adapter_from_mean, tune_adapter_unlabeled, zero_shot_probe, AdaptConfig, ProbeConfig,
};
use gfm_core::descriptors::{structural_profiles, DescriptorConfig};
use gfm_core::diffcore::AdamState;
use gfm_core::graph::{generate_sbm, make_split, SplitSpec};
use gfm_core::model::{adapter_inputs, Model, ModelConfig};
use gfm_core::pretrain::{pretrain, PprIndex, PretrainConfig, TrainGraph};
use gfm_core::prompt::{encode_all, render_all};
use gfm_core::{Exec, Graph, Tensor2};

fn context(g: &Graph) -> Tensor2 {
    let (p, s) = structural_profiles(g, &DescriptorConfig::default()).unwrap();
    encode_all(&render_all(&p, &s), Exec::default())
}

fn train_graph(id: &str, g: Graph, cfg: &PretrainConfig) -> TrainGraph {
    let ctx = context(&g);
    let inputs = adapter_inputs(id, &g, &ctx).unwrap();
    let ppr = PprIndex::build(&g, cfg.ppr_params(), Exec::default()).unwrap();
    TrainGraph {
        id: id.into(),
        graph: g,
        inputs,
        ppr,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map_or(1e-5, |s| s.parse().unwrap());
    let tune_lr: f64 = args.get(2).map_or(1e-4, |s| s.parse().unwrap());
    let seed: u64 = args.get(3).map_or(42, |s| s.parse().unwrap());
    let t = Instant::now();
    let cfg = PretrainConfig {
        epochs: 30,
        steps_per_epoch: 16,
        anchor_batch: 64,
        lr,
        seed,
        ..PretrainConfig::default()
    };
    let graphs: Vec<TrainGraph> = (0..3)
        .map(|i| {
            train_graph(
                &format!("sbm{i}"),
                generate_sbm(&[100, 100], 0.3, 0.02, seed + i).unwrap(),
                &cfg,
            )
        })
        .collect();
    eprintln!("prep {:?}", t.elapsed());
    let model = Model::new(ModelConfig::default(), seed).unwrap();
    let out = pretrain(model, AdamState::default(), &graphs, &cfg).unwrap();
    let h = &out.history;
    let first: f64 = h[..16].iter().map(|r| r.total).sum::<f64>() / 16.0;
    let last: f64 = h[h.len() - 16..].iter().map(|r| r.total).sum::<f64>() / 16.0;
    eprintln!(
        "pretrain {:?} first {first:.4} last {last:.4} best {:.4}@{}",
        t.elapsed(),
        out.best_loss,
        out.best_step
    );

    let target = generate_sbm(&[100, 100], 0.3, 0.02, seed + 100).unwrap();
    let target = make_split(
        target,
        &SplitSpec::RandomFractions {
            fractions: [0.6, 0.2, 0.2],
            seed,
        },
    )
    .unwrap();
    let tg = train_graph("target", target, &cfg);
    let mut model = out.model;
    init_adapter_from_mean(&mut model, "target", 0, seed).unwrap();
    let acfg = AdaptConfig {
        tune_steps: 500,
        tune_lr,
        objective: PretrainConfig {
            anchor_batch: 64,
            ..cfg.clone()
        },
        ..AdaptConfig::default()
    };
    let before = model.embed("target", &tg.graph, &tg.inputs).unwrap();
    let labels = tg.graph.labels().unwrap();
    let split = tg.graph.split().unwrap();
    let (_, r0) = zero_shot_probe(&before, labels, split, &ProbeConfig::default(), Exec::default()).unwrap();
    let hist = tune_adapter_unlabeled(&mut model, &tg, &acfg).unwrap();
    eprintln!(
        "tune {:?} nce {:.4} -> {:.4}",
        t.elapsed(),
        hist[0].nce,
        hist.last().unwrap().nce
    );
    let emb = model.embed("target", &tg.graph, &tg.inputs).unwrap();
    let (_, r) = zero_shot_probe(&emb, labels, split, &ProbeConfig::default(), Exec::default()).unwrap();
    let (_, rb) = zero_shot_probe(
        &tg.inputs,
        labels,
        split,
        &ProbeConfig::default(),
        Exec::default(),
    )
    .unwrap();
    println!(
        "before-tune {:?} adapted {:?} raw-context {:?} total {:?}",
        r0.mean_auc,
        r.mean_auc,
        rb.mean_auc,
        t.elapsed()
    );
}
