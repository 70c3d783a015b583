//! Subcommand implementations. Each writes its outputs and a manifest into
//! its `--out` directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gfm_core::adapt::{
    few_shot_report, finetune_two_stage, init_adapter_from_mean, tune_adapter_unlabeled, zero_shot_probe,
    AdaptConfig, EvalReport,
};
use gfm_core::descriptors::{
    graph_stats_text, parse_graph_stats, read_descriptor_table, structural_profiles, write_descriptor_table,
    DescriptorConfig, SpectralOperator,
};
use gfm_core::diffcore::AdamState;
use gfm_core::graph::{generate_gnp, generate_sbm, make_split, write_split_file, SplitSpec};
use gfm_core::io::{read_matrix, read_string, write_matrix_binary, write_matrix_text, write_string};
use gfm_core::metrics::{
    co_enrichment, density_multifunctionality_spearman, same_label_enrichment, stratified_auc,
};
use gfm_core::model::{adapter_inputs, Model, ModelConfig};
use gfm_core::pretrain::{pretrain, write_loss_history, PprIndex, PretrainConfig, TrainGraph};
use gfm_core::prompt::{encode_all_seeded, read_prompts, render_all, write_prompts};
use gfm_core::{Error, Labels, Result, Tensor2};

use crate::bundle::{load_bundle, load_graph, SideFiles, EDGES_FILE};
use crate::manifest::RunManifest;
use crate::{Analysis, Cli, Command, ConfigArgs, EvalMode, GraphArgs, GraphKind, Spectral};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => generate(cli, a),
        Command::Descriptors(a) => descriptors(cli, a),
        Command::Prompt(a) => prompt(a),
        Command::Encode(a) => encode(cli, a),
        Command::Pretrain(a) => pretrain_cmd(cli, a),
        Command::Adapt(a) => adapt(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Analyze(a) => analyze(&a.analysis),
    }
}

fn out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn side(g: &GraphArgs) -> SideFiles {
    SideFiles {
        features: g.features.clone(),
        labels: g.labels.clone(),
        split: g.split.clone(),
        context: g.context.clone(),
    }
}

fn split_kv(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got {s:?}")))
}

fn generate(cli: &Cli, a: &crate::GenerateArgs) -> Result<()> {
    let seed = cli.seed_or_default();
    let graph = match a.kind {
        GraphKind::Sbm => generate_sbm(&a.blocks, a.p_in, a.p_out, seed)?,
        GraphKind::Gnp => generate_gnp(a.n, a.p, seed)?,
    };
    let fractions: [f64; 3] = a
        .split
        .as_slice()
        .try_into()
        .map_err(|_| Error::Config("--split needs three fractions".into()))?;
    let graph = make_split(graph, &SplitSpec::RandomFractions { fractions, seed })?;
    out_dir(&a.out)?;
    let config = match a.kind {
        GraphKind::Sbm => {
            serde_json::json!({"kind": "sbm", "blocks": a.blocks, "p_in": a.p_in, "p_out": a.p_out, "split": a.split})
        }
        GraphKind::Gnp => serde_json::json!({"kind": "gnp", "n": a.n, "p": a.p, "split": a.split}),
    };
    let manifest = RunManifest::start("generate", Some(seed), config);
    graph.save_edge_list(&a.out.join(EDGES_FILE))?;
    if let Some(l) = graph.labels() {
        write_matrix_text(&a.out.join("labels.txt"), &l.to_tensor())?;
    }
    if let Some(s) = graph.split() {
        write_split_file(&a.out.join("split.txt"), s)?;
    }
    log::info!(
        "wrote {} nodes, {} edges to {}",
        graph.node_count(),
        graph.edge_count(),
        a.out.display()
    );
    manifest.finish(&a.out)
}

fn descriptors(cli: &Cli, a: &crate::DescriptorsArgs) -> Result<()> {
    let seed = cli.seed_or_default();
    let cfg = DescriptorConfig {
        seed,
        ego_cap: a.ego_cap,
        spectral: match a.spectral {
            Spectral::Adjacency => SpectralOperator::Adjacency,
            Spectral::NormalizedLaplacian => SpectralOperator::NormalizedLaplacian,
        },
        scoda_threshold: a.scoda_threshold,
        exec: cli.exec(),
    };
    let mut manifest = RunManifest::start(
        "descriptors",
        Some(seed),
        serde_json::json!({"ego_cap": a.ego_cap, "spectral": format!("{:?}", a.spectral), "scoda_threshold": a.scoda_threshold}),
    );
    let (graph, _, _) = load_graph(&a.graph.graph, &side(&a.graph), &mut manifest)?;
    let (profiles, stats) = structural_profiles(&graph, &cfg)?;
    out_dir(&a.out)?;
    write_descriptor_table(&a.out.join("descriptors.tsv"), &profiles)?;
    write_string(&a.out.join("graph_stats.txt"), &graph_stats_text(&stats))?;
    manifest.finish(&a.out)
}

fn prompt(a: &crate::PromptArgs) -> Result<()> {
    let mut manifest = RunManifest::start("prompt", None, serde_json::Value::Null);
    let table = a.descriptors.join("descriptors.tsv");
    let stats_path = a.descriptors.join("graph_stats.txt");
    manifest.input(&table)?;
    manifest.input(&stats_path)?;
    let profiles = read_descriptor_table(&table)?;
    let stats = parse_graph_stats(&read_string(&stats_path)?, &stats_path)?;
    out_dir(&a.out)?;
    write_prompts(&a.out.join("prompts.txt"), &render_all(&profiles, &stats))?;
    manifest.finish(&a.out)
}

fn encode(cli: &Cli, a: &crate::EncodeArgs) -> Result<()> {
    let mut manifest = RunManifest::start("encode", None, serde_json::json!({"hash_seed": a.hash_seed}));
    manifest.input(&a.prompts)?;
    let prompts = read_prompts(&a.prompts)?;
    let m = encode_all_seeded(&prompts, a.hash_seed, cli.exec());
    out_dir(&a.out)?;
    write_matrix_binary(&a.out.join("context.bin"), &m)?;
    manifest.finish(&a.out)
}

fn read_config_text(args: &ConfigArgs, manifest: &mut RunManifest) -> Result<String> {
    match &args.config {
        Some(p) => {
            manifest.input(p)?;
            read_string(p)
        }
        None => Ok(String::new()),
    }
}

fn pretrain_config(cli: &Cli, args: &ConfigArgs, manifest: &mut RunManifest) -> Result<PretrainConfig> {
    let mut cfg = PretrainConfig::parse(&read_config_text(args, manifest)?)?;
    for kv in &args.set {
        let (k, v) = split_kv(kv)?;
        cfg.set(k, v)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn adapt_config(cli: &Cli, args: &ConfigArgs, manifest: &mut RunManifest) -> Result<AdaptConfig> {
    let mut cfg = AdaptConfig::parse(&read_config_text(args, manifest)?)?;
    for kv in &args.set {
        let (k, v) = split_kv(kv)?;
        cfg.set(k, v)?;
    }
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn graph_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(root, e))?.path();
        if p.join(EDGES_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "{} holds no graph bundle (a subdirectory with {EDGES_FILE})",
            root.display()
        )));
    }
    Ok(dirs)
}

fn pretrain_cmd(cli: &Cli, a: &crate::PretrainArgs) -> Result<()> {
    let mut manifest = RunManifest::start("pretrain", None, serde_json::Value::Null);
    let cfg = pretrain_config(cli, &a.config, &mut manifest)?;
    let exec = cli.exec();
    let (model, optimizer) = match &a.resume {
        Some(p) => {
            manifest.input(p)?;
            let (m, _, opt) = Model::load(p)?;
            (m, opt)
        }
        None => {
            let mut mc = ModelConfig::default();
            for kv in &a.model {
                let (k, v) = split_kv(kv)?;
                mc.set(k, v)?;
            }
            (Model::new(mc, cfg.seed)?, AdamState::default())
        }
    };
    let cache = a.ppr_cache.clone().unwrap_or_else(|| a.out.join("ppr_cache"));
    let mut graphs = Vec::new();
    for dir in graph_dirs(&a.graphs)? {
        let b = load_bundle(&dir, &SideFiles::default(), None, cfg.seed, exec, &mut manifest)?;
        let inputs = adapter_inputs(&b.id, &b.graph, &b.context)?;
        let ppr = PprIndex::load_or_build(&b.graph, cfg.ppr_params(), Some(&cache), exec)?;
        log::info!(
            "graph {}: {} nodes, {} edges",
            b.id,
            b.graph.node_count(),
            b.graph.edge_count()
        );
        graphs.push(TrainGraph {
            id: b.id,
            graph: b.graph,
            inputs,
            ppr,
        });
    }
    let resumed_loss = match &a.resume {
        Some(p) => Model::load(p)?.1.loss,
        None => None,
    };
    let out = pretrain(model, optimizer, &graphs, &cfg)?;
    out_dir(&a.out)?;
    let best_loss = if out.history.is_empty() {
        resumed_loss
    } else {
        Some(out.best_loss)
    };
    out.model
        .save(&a.out.join("model.ckpt"), &out.optimizer, best_loss)?;
    out.last.save(
        &a.out.join("last.ckpt"),
        &out.optimizer,
        out.history.last().map(|r| r.total),
    )?;
    write_loss_history(&a.out.join("loss_history.csv"), &out.history, &graphs)?;
    write_string(&a.out.join("pretrain_config.txt"), &cfg.to_text())?;
    log::info!(
        "{} steps; best loss {:?} at step {}",
        out.history.len(),
        best_loss,
        out.best_step
    );
    manifest.seed = Some(cfg.seed);
    manifest.config = serde_json::json!({"pretrain": cfg, "model": out.model.config});
    manifest.finish(&a.out)
}

fn adapt(cli: &Cli, a: &crate::AdaptArgs) -> Result<()> {
    let mut manifest = RunManifest::start("adapt", None, serde_json::Value::Null);
    let cfg = adapt_config(cli, &a.config, &mut manifest)?;
    let exec = cli.exec();
    manifest.input(&a.checkpoint)?;
    let (mut model, _, _) = Model::load(&a.checkpoint)?;
    let b = load_bundle(
        &a.graph.graph,
        &side(&a.graph),
        a.graph_id.as_deref(),
        cfg.seed,
        exec,
        &mut manifest,
    )?;
    let inputs = adapter_inputs(&b.id, &b.graph, &b.context)?;
    init_adapter_from_mean(&mut model, &b.id, b.graph.feature_dim(), cfg.seed)?;
    let ppr = PprIndex::build(&b.graph, cfg.objective.ppr_params(), exec)?;
    let tg = TrainGraph {
        id: b.id.clone(),
        graph: b.graph,
        inputs,
        ppr,
    };
    let history = tune_adapter_unlabeled(&mut model, &tg, &cfg)?;
    out_dir(&a.out)?;
    model.save(&a.out.join("adapted.ckpt"), &AdamState::default(), None)?;
    write_loss_history(
        &a.out.join("tune_history.csv"),
        &history,
        std::slice::from_ref(&tg),
    )?;
    let emb = model.embed(&tg.id, &tg.graph, &tg.inputs)?;
    write_matrix_binary(&a.out.join("embeddings.bin"), &emb)?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        log::info!("adapter {}: InfoNCE {:.4} -> {:.4}", tg.id, first.nce, last.nce);
    }
    manifest.seed = Some(cfg.seed);
    manifest.config = serde_json::json!({"adapt": cfg, "graph_id": tg.id});
    manifest.finish(&a.out)
}

fn check_adapter(model: &Model, id: &str, inputs: &Tensor2) -> Result<()> {
    match model.adapter_input_dim(id) {
        None => Err(Error::Dimension(format!(
            "checkpoint has no adapter for graph {id:?}; run `gfm adapt` on this graph first"
        ))),
        Some(d) if d != inputs.cols() => Err(Error::Dimension(format!(
            "checkpoint adapter for graph {id:?} expects {d} input columns but the graph provides {} \
             ({} features + {} context); re-run `gfm adapt` for this graph",
            inputs.cols(),
            inputs.cols() - model.config.context_dim.min(inputs.cols()),
            model.config.context_dim
        ))),
        Some(_) => Ok(()),
    }
}

fn evaluate(cli: &Cli, a: &crate::EvaluateArgs) -> Result<()> {
    let mut manifest = RunManifest::start("evaluate", None, serde_json::Value::Null);
    let mut cfg = adapt_config(cli, &a.config, &mut manifest)?;
    if let Some(k) = &a.k_grid {
        cfg.k_grid = k.clone();
        cfg.validate()?;
    }
    let exec = cli.exec();
    manifest.input(&a.checkpoint)?;
    let (model, _, _) = Model::load(&a.checkpoint)?;
    let b = load_bundle(
        &a.graph.graph,
        &side(&a.graph),
        a.graph_id.as_deref(),
        cfg.seed,
        exec,
        &mut manifest,
    )?;
    let labels = b
        .graph
        .labels()
        .ok_or_else(|| Error::Config(format!("graph {} has no labels", b.id)))?
        .clone();
    let split = b
        .graph
        .split()
        .ok_or_else(|| Error::Config(format!("graph {} has no split", b.id)))?
        .to_vec();
    let inputs = adapter_inputs(&b.id, &b.graph, &b.context)?;
    check_adapter(&model, &b.id, &inputs)?;
    out_dir(&a.out)?;
    let mut report: EvalReport = match a.mode {
        EvalMode::ZeroShot => {
            let emb = model.embed(&b.id, &b.graph, &inputs)?;
            zero_shot_probe(&emb, &labels, &split, &cfg.probe, exec)?.1
        }
        EvalMode::FewShot => {
            let emb = model.embed(&b.id, &b.graph, &inputs)?;
            few_shot_report(
                &emb,
                &labels,
                &split,
                &cfg.k_grid,
                &cfg.few_shot_seed_list(),
                &cfg.probe,
                exec,
            )?
        }
        EvalMode::Finetune => {
            let out = finetune_two_stage(model, &b.id, &b.graph, &inputs, &cfg)?;
            out.model
                .save(&a.out.join("finetuned.ckpt"), &AdamState::default(), None)?;
            out.report
        }
    };
    report.seed = Some(cfg.seed);
    report.write_dir(&a.out)?;
    if let Some(m) = report.mean_auc {
        log::info!("mean test ROC-AUC {m:.4} over {} labels", report.n_valid);
    }
    for r in &report.few_shot {
        log::info!(
            "K={}: mean AUC {:?} over {} labels",
            r.k,
            r.mean,
            r.n_valid_labels
        );
    }
    manifest.seed = Some(cfg.seed);
    manifest.config = serde_json::json!({"mode": format!("{:?}", a.mode), "adapt": cfg, "graph_id": b.id});
    manifest.finish(&a.out)
}

fn load_labels(path: &Path, manifest: &mut RunManifest) -> Result<Labels> {
    manifest.input(path)?;
    Labels::from_tensor(&read_matrix(path)?)
}

fn load_embeddings(path: &Path, manifest: &mut RunManifest) -> Result<Tensor2> {
    manifest.input(path)?;
    read_matrix(path)
}

fn analyze(a: &Analysis) -> Result<()> {
    let exec = gfm_core::Exec::default();
    match a {
        Analysis::Density {
            embeddings,
            labels,
            k,
            out,
        } => {
            let mut m = RunManifest::start("analyze density", None, serde_json::json!({"k": k}));
            let emb = load_embeddings(embeddings, &mut m)?;
            let l = load_labels(labels, &mut m)?;
            let counts: Vec<usize> = (0..l.rows()).map(|i| l.count(i)).collect();
            let c = density_multifunctionality_spearman(&emb, &counts, *k, exec)?;
            out_dir(out)?;
            write_string(
                &out.join("density_spearman.tsv"),
                &format!("k\trho\tdegenerate\n{k}\t{:.6}\t{}\n", c.rho, c.degenerate),
            )?;
            m.finish(out)
        }
        Analysis::Enrichment {
            embeddings,
            labels,
            label,
            k_grid,
            out,
        } => {
            let mut m = RunManifest::start(
                "analyze enrichment",
                None,
                serde_json::json!({"label": label, "k_grid": k_grid}),
            );
            let emb = load_embeddings(embeddings, &mut m)?;
            let l = load_labels(labels, &mut m)?;
            if *label >= l.num_labels() {
                return Err(Error::Config(format!(
                    "label {label} out of range (have {})",
                    l.num_labels()
                )));
            }
            let curve = same_label_enrichment(&emb, &l.column(*label), k_grid, exec)?;
            let mut s = String::from("k\tsame_label_fraction\n");
            for (k, f) in curve {
                s.push_str(&format!("{k}\t{f:.6}\n"));
            }
            out_dir(out)?;
            write_string(&out.join("enrichment.tsv"), &s)?;
            m.finish(out)
        }
        Analysis::CoEnrichment {
            embeddings,
            labels,
            anchors,
            k,
            ratio,
            out,
        } => {
            let mut m = RunManifest::start(
                "analyze co-enrichment",
                None,
                serde_json::json!({"anchors": anchors, "k": k, "ratio": ratio}),
            );
            let emb = load_embeddings(embeddings, &mut m)?;
            let l = load_labels(labels, &mut m)?;
            let anchors = anchors.clone().unwrap_or_else(|| {
                (0..l.num_labels())
                    .filter(|&c| (0..l.rows()).any(|i| l.get(i, c)))
                    .collect()
            });
            if let Some(&bad) = anchors.iter().find(|&&c| c >= l.num_labels()) {
                return Err(Error::Config(format!(
                    "label {bad} out of range (have {})",
                    l.num_labels()
                )));
            }
            let mat = co_enrichment(&emb, &l, &anchors, *k, *ratio, exec)?;
            out_dir(out)?;
            write_string(&out.join("co_enrichment.tsv"), &mat.to_tsv())?;
            m.finish(out)
        }
        Analysis::Strata { report, strata, out } => {
            let mut m = RunManifest::start("analyze strata", None, serde_json::Value::Null);
            m.input(report)?;
            m.input(strata)?;
            let rep = EvalReport::from_json(&read_string(report)?)?;
            let mut map = BTreeMap::new();
            for (n, line) in read_string(strata)?.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut it = line.split('\t');
                let (Some(l), Some(s)) = (it.next(), it.next()) else {
                    return Err(Error::Parse {
                        path: strata.clone(),
                        line: n + 1,
                        msg: "expected label<TAB>stratum".into(),
                    });
                };
                let l: usize = l.trim().parse().map_err(|_| Error::Parse {
                    path: strata.clone(),
                    line: n + 1,
                    msg: format!("invalid label {l:?}"),
                })?;
                map.insert(l, s.trim().to_string());
            }
            let mut aucs = Vec::new();
            let mut names = Vec::new();
            for r in &rep.labels {
                let s = map
                    .get(&r.label)
                    .ok_or_else(|| Error::Config(format!("label {} has no stratum assignment", r.label)))?;
                aucs.push(r.auc);
                names.push(s.clone());
            }
            let means = stratified_auc(&aucs, &names)?;
            let mut s = String::from("stratum\tmean_auc\tlabels\n");
            for (name, v) in means {
                s.push_str(&format!("{name}\t{:.6}\t{}\n", v.mean, v.count));
            }
            out_dir(out)?;
            write_string(&out.join("strata.tsv"), &s)?;
            m.finish(out)
        }
    }
}
