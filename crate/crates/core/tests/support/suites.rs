use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gfm_core::adapt::{zero_shot_probe, ProbeConfig};
use gfm_core::descriptors::{
    community_stats, graph_stats, kcore_numbers, pagerank, structural_profiles, DescriptorConfig, GraphStats,
    SpectralOperator, StructuralProfile,
};
use gfm_core::diffcore::{ParamStore, Tape, Var};
use gfm_core::graph::{generate_gnp, generate_sbm};
use gfm_core::io::sha256_hex;
use gfm_core::metrics::{
    co_enrichment, f1_at, fpr_grid, macro_roc, mean_defined, roc_auc, same_label_enrichment, spearman,
    stratified_auc, tune_threshold_f1, RocCurve,
};
use gfm_core::model::{adapter_inputs, Model, ModelConfig};
use gfm_core::pretrain::{
    infonce_symmetric, infonce_symmetric_with, laplacian_smoothing, ppr_scores, ppr_topk, NegativeBank,
};
use gfm_core::prompt::{encode_all, encode_hashed, hashed_context, render_all, render_prompt};
use gfm_core::{Exec, Graph, Labels, SplitTag, Tensor2};

use super::oracles;
use super::{random_matrix, unit_rows, Tally};

// ---------------------------------------------------------------- descriptors

fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Graph {
    Graph::from_edges(n, edges).unwrap().0
}

pub fn clique(n: usize) -> Graph {
    from_edges(n, (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))))
}

pub fn star(leaves: usize) -> Graph {
    from_edges(leaves + 1, (1..=leaves).map(|v| (0, v)))
}

pub fn path(n: usize) -> Graph {
    from_edges(n, (1..n).map(|v| (v - 1, v)))
}

pub fn cycle(n: usize) -> Graph {
    from_edges(n, (0..n).map(|v| (v, (v + 1) % n)))
}

pub fn fixture_graphs() -> Vec<(String, Graph)> {
    let mut out = Vec::new();
    for n in 1..=6 {
        out.push((format!("K{n}"), clique(n)));
    }
    for l in 1..=6 {
        out.push((format!("S{l}"), star(l)));
    }
    for n in 1..=7 {
        out.push((format!("P{n}"), path(n)));
    }
    for n in 3..=8 {
        out.push((format!("C{n}"), cycle(n)));
    }
    out.push((
        "two-triangles".into(),
        from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]),
    ));
    out.push((
        "triangle+path".into(),
        from_edges(7, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (5, 6)]),
    ));
    out.push((
        "K4+isolated".into(),
        from_edges(6, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]),
    ));
    out
}

/// 50 Erdős–Rényi graphs with `N ≤ 200` and mean degree between 0.5 and 10.
pub fn random_graphs() -> Vec<(String, Graph)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..50)
        .map(|i| {
            let n: usize = rng.gen_range(1..=200);
            let mean_degree: f64 = rng.gen_range(0.5..10.0);
            let p = (mean_degree / (n.max(2) - 1) as f64).min(1.0);
            (format!("gnp{i}(n={n})"), generate_gnp(n, p, 1000 + i).unwrap())
        })
        .collect()
}

fn check_community(
    t: &mut Tally,
    name: &str,
    a: &[Vec<bool>],
    assignment: &[usize],
    sizes: &[(usize, f64)],
    what: &str,
) {
    for (u, &(size, dens)) in sizes.iter().enumerate() {
        let members: Vec<usize> = (0..a.len()).filter(|&v| assignment[v] == assignment[u]).collect();
        let (v, _, d) = oracles::induced(a, &members);
        t.eq(|| format!("{name} {what}_size[{u}]"), size, v);
        t.eq(|| format!("{name} {what}_dens[{u}]"), dens, d);
    }
}

fn nearest_rank(sorted: &[usize], q: f64) -> usize {
    let rank = ((q * sorted.len() as f64).ceil() as usize).max(1);
    sorted[rank - 1]
}

pub fn check_descriptors(name: &str, g: &Graph) -> Tally {
    let mut t = Tally::default();
    let n = g.node_count();
    let a = oracles::adjacency(g);
    let (prof, stats) = structural_profiles(g, &DescriptorConfig::default()).unwrap();
    let cores = oracles::core_numbers(&a);
    let pr = oracles::pagerank_dense(&a, 0.85, 40);
    for u in 0..n {
        let p = &prof[u];
        t.eq(|| format!("{name} deg[{u}]"), p.degree, oracles::degree(&a, u));
        t.eq(
            || format!("{name} cc[{u}]"),
            p.clustering,
            oracles::clustering(&a, u),
        );
        t.eq(|| format!("{name} core[{u}]"), p.core, cores[u]);
        let (v1, e1, d1) = oracles::induced(&a, &oracles::ball(&a, u, 1));
        let (v2, e2, d2) = oracles::induced(&a, &oracles::ball(&a, u, 2));
        t.eq(
            || format!("{name} ego1[{u}]"),
            (p.ego1_v, p.ego1_e, p.ego1_d),
            (v1, e1, d1),
        );
        t.eq(
            || format!("{name} ego2[{u}]"),
            (p.ego2_v, p.ego2_e, p.ego2_d),
            (v2, e2, d2),
        );
        t.close(|| format!("{name} pr[{u}]"), p.pagerank, pr[u], 1e-9);
    }
    let lp: Vec<usize> = prof.iter().map(|p| p.lp_comm).collect();
    let lp_sizes: Vec<(usize, f64)> = prof.iter().map(|p| (p.lp_size, p.lp_dens)).collect();
    check_community(&mut t, name, &a, &lp, &lp_sizes, "lp");
    let sc: Vec<usize> = prof.iter().map(|p| p.scoda_comm).collect();
    let sc_sizes: Vec<(usize, f64)> = prof.iter().map(|p| (p.scoda_size, p.scoda_dens)).collect();
    check_community(&mut t, name, &a, &sc, &sc_sizes, "scoda");

    // an arbitrary partition, straight through community_stats
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let groups = 1 + n / 7;
    let mut part: Vec<usize> = (0..n).map(|u| u % groups).collect();
    part.shuffle(&mut rng);
    let cs = community_stats(g, &part).unwrap();
    for (c, s) in cs.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&u| part[u] == c).collect();
        let (v, e, d) = oracles::induced(&a, &members);
        t.eq(
            || format!("{name} partition[{c}]"),
            (s.size, s.internal_edges, s.density),
            (v, e, d),
        );
    }

    // graph-level statistics
    let mut deg: Vec<usize> = (0..n).map(|u| oracles::degree(&a, u)).collect();
    let triads: usize = deg.iter().map(|&d| d * d.saturating_sub(1) / 2).sum();
    let mut tri = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if a[i][j] && a[j][k] && a[i][k] {
                    tri += 1;
                }
            }
        }
    }
    deg.sort_unstable();
    let e = deg.iter().sum::<usize>() / 2;
    let want = (
        n,
        e,
        2.0 * e as f64 / n as f64,
        if triads == 0 {
            0.0
        } else {
            (3 * tri) as f64 / triads as f64
        },
        nearest_rank(&deg, 0.25),
        nearest_rank(&deg, 0.5),
        nearest_rank(&deg, 0.75),
    );
    t.eq(
        || format!("{name} graph stats"),
        (
            stats.n,
            stats.e,
            stats.avgd,
            stats.trans,
            stats.q25,
            stats.q50,
            stats.q75,
        ),
        want,
    );

    // personalized PageRank from a few anchors
    if n >= 2 {
        let mut anchors = vec![0, n / 2, n - 1];
        anchors.dedup();
        for &anchor in &anchors {
            let got = ppr_scores(g, anchor, 0.15, 100);
            let want = oracles::ppr_dense(&a, anchor, 0.15, 100);
            for v in 0..n {
                t.close(|| format!("{name} ppr[{anchor}][{v}]"), got[v], want[v], 1e-9);
            }
            t.close(
                || format!("{name} ppr[{anchor}] mass"),
                got.iter().sum(),
                1.0,
                1e-9,
            );
            let top = ppr_topk(g, anchor, 0.15, 100, 96);
            t.eq(|| format!("{name} ppr top-k length"), top.len(), 96.min(n - 1));
            t.truth(
                || format!("{name} ppr top-k order from {anchor}"),
                top.iter().all(|&(v, _)| v != anchor)
                    && top
                        .windows(2)
                        .all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)),
            );
        }
    }

    // core numbers survive relabeling
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let moved = kcore_numbers(&g.permuted(&perm).unwrap());
    t.truth(
        || format!("{name} k-core relabeling"),
        (0..n).all(|u| moved[perm[u]] == cores[u]),
    );
    t
}

pub fn descriptor_suite() -> Result<String, String> {
    let mut t = Tally::default();
    let fixtures = fixture_graphs();
    let random = random_graphs();
    for (name, g) in fixtures.iter().chain(&random) {
        t.merge(check_descriptors(name, g));
    }

    // closed forms
    let s4 = star(4);
    let pr = pagerank(&s4);
    let want = oracles::pagerank_dense(&oracles::adjacency(&s4), 0.85, 40);
    for v in 0..5 {
        t.close(|| format!("S4 pagerank[{v}]"), pr[v], want[v], 1e-12);
    }
    let p5 = path(5);
    let top = ppr_topk(&p5, 0, 0.15, 100, 96);
    let want = oracles::ppr_dense(&oracles::adjacency(&p5), 0, 0.15, 100);
    t.eq(
        || "P5 ppr ranking".into(),
        top.iter().map(|x| x.0).collect::<Vec<_>>(),
        vec![1, 2, 3, 4],
    );
    for &(v, s) in &top {
        t.close(|| format!("P5 ppr[{v}]"), s, want[v], 1e-12);
    }
    for n in 3..=12 {
        let gap = graph_stats(&cycle(n), SpectralOperator::Adjacency)
            .unwrap()
            .spec_gap;
        let want = 2.0 - 2.0 * (2.0 * std::f64::consts::PI / n as f64).cos();
        t.close(|| format!("C{n} spectral gap"), gap, want, 1e-9);
    }
    t.finish(format!(
        "{} fixtures + {} random graphs",
        fixtures.len(),
        random.len()
    ))
}

// --------------------------------------------------------------------- prompt

pub const REFERENCE_PROMPT: &str = "Node profile: local(deg=12, cc=0.167, core=4, ego1V=13, \
ego1E=22, ego1D=0.046, ego2V=214, ego2E=4103, ego2D=0.181, pr=0.00084); global(lp_comm=5, \
lp_size=312, lp_dens=0.021; scoda_comm=8, scoda_size=189, scoda_dens=0.018); graph(N=2708, \
E=5429, avgd=4.01, trans=0.241, q25=2, q50=3, q75=5, spec_gap=1.23).";

pub const ISOLATED_PROMPT: &str = "Node profile: local(deg=0, cc=0.000, core=0, ego1V=1, \
ego1E=0, ego1D=0.000, ego2V=1, ego2E=0, ego2D=0.000, pr=1.0); global(lp_comm=0, lp_size=1, \
lp_dens=0.000; scoda_comm=0, scoda_size=1, scoda_dens=0.000); graph(N=1, E=0, avgd=0.00, \
trans=0.000, q25=0, q50=0, q75=0, spec_gap=0.00).";

pub const GOLDEN_CORPUS: &str = include_str!("data/prompt_corpus.txt");
pub const GOLDEN_CORPUS_DIGEST: &str = include_str!("data/prompt_corpus.sha256");

pub fn reference_profile() -> (StructuralProfile, GraphStats) {
    (
        StructuralProfile {
            degree: 12,
            clustering: 0.167,
            core: 4,
            ego1_v: 13,
            ego1_e: 22,
            ego1_d: 0.046,
            ego2_v: 214,
            ego2_e: 4103,
            ego2_d: 0.181,
            pagerank: 0.00084,
            lp_comm: 5,
            lp_size: 312,
            lp_dens: 0.021,
            scoda_comm: 8,
            scoda_size: 189,
            scoda_dens: 0.018,
        },
        GraphStats {
            n: 2708,
            e: 5429,
            avgd: 4.01,
            trans: 0.241,
            q25: 2,
            q50: 3,
            q75: 5,
            spec_gap: 1.23,
        },
    )
}

/// Plausible but arbitrary profiles, including small and degenerate values.
pub fn random_profiles(count: usize, seed: u64) -> Vec<(StructuralProfile, GraphStats)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..5000usize);
            let degree = rng.gen_range(0..50usize);
            let p = StructuralProfile {
                degree,
                clustering: rng.gen_range(0.0..1.0),
                core: rng.gen_range(0..=degree),
                ego1_v: degree + 1,
                ego1_e: rng.gen_range(degree..=degree * 3),
                ego1_d: rng.gen_range(0.0..1.0),
                ego2_v: rng.gen_range(degree + 1..=degree * 20 + 1),
                ego2_e: rng.gen_range(0..10000usize),
                ego2_d: rng.gen_range(0.0..1.0),
                pagerank: 10f64.powf(rng.gen_range(-6.0..0.0)),
                lp_comm: rng.gen_range(0..100usize),
                lp_size: rng.gen_range(1..1000usize),
                lp_dens: rng.gen_range(0.0..1.0),
                scoda_comm: rng.gen_range(0..100usize),
                scoda_size: rng.gen_range(1..1000usize),
                scoda_dens: rng.gen_range(0.0..1.0),
            };
            let mut q = [
                rng.gen_range(0..20usize),
                rng.gen_range(0..20),
                rng.gen_range(0..20),
            ];
            q.sort_unstable();
            let g = GraphStats {
                n,
                e: rng.gen_range(0..20000usize),
                avgd: rng.gen_range(0.0..30.0),
                trans: rng.gen_range(0.0..1.0),
                q25: q[0],
                q50: q[1],
                q75: q[2],
                spec_gap: rng.gen_range(0.0..10.0),
            };
            (p, g)
        })
        .collect()
}

pub fn render_corpus() -> String {
    let mut s = String::new();
    for (p, g) in random_profiles(100, 808) {
        s.push_str(render_prompt(&p, &g).as_str());
        s.push('\n');
    }
    s
}

/// SHA-256 over the bits of the hashed encodings of the corpus lines.
pub fn corpus_digest(corpus: &str) -> String {
    let mut bytes = Vec::new();
    for line in corpus.lines() {
        let e = encode_hashed(&gfm_core::prompt::PromptString(line.to_string()));
        for v in e.as_slice() {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    sha256_hex(&bytes)
}

/// Mean and max pairwise cosine of hashed encodings of random profiles.
pub fn hashed_cosine_stats(count: usize) -> (f64, f64) {
    let prompts: Vec<_> = random_profiles(count, 99)
        .iter()
        .map(|(p, g)| render_prompt(p, g))
        .collect();
    let m = encode_all(&prompts, Exec::default());
    let (mut sum, mut max, mut pairs) = (0.0, f64::NEG_INFINITY, 0usize);
    for i in 0..count {
        for j in i + 1..count {
            let c: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| a * b).sum();
            sum += c;
            max = max.max(c);
            pairs += 1;
        }
    }
    (sum / pairs as f64, max)
}

pub fn prompt_suite() -> Result<String, String> {
    let mut t = Tally::default();
    let (p, g) = reference_profile();
    t.eq(
        || "reference example".into(),
        render_prompt(&p, &g).as_str(),
        REFERENCE_PROMPT,
    );

    let single = from_edges(1, []);
    let (prof, stats) = structural_profiles(&single, &DescriptorConfig::default()).unwrap();
    t.eq(
        || "isolated node".into(),
        render_all(&prof, &stats)[0].as_str(),
        ISOLATED_PROMPT,
    );

    let corpus = render_corpus();
    t.eq(|| "corpus line count".into(), corpus.lines().count(), 100);
    for (i, (got, want)) in corpus.lines().zip(GOLDEN_CORPUS.lines()).enumerate() {
        t.eq(|| format!("corpus line {i}"), got, want);
    }
    t.eq(|| "corpus bytes".into(), corpus.as_str(), GOLDEN_CORPUS);
    t.eq(
        || "corpus encoding digest".into(),
        corpus_digest(GOLDEN_CORPUS).as_str(),
        GOLDEN_CORPUS_DIGEST.trim(),
    );
    t.finish("reference example, isolated node and 100-profile golden corpus".into())
}

// ------------------------------------------------------------------ gradients

/// Central differences against the tape's analytic gradient of
/// `<w, f(params)>` for every parameter entry. Relative error floor 1e-6.
pub fn gradcheck<'a, F>(t: &mut Tally, label: &str, store: &ParamStore, f: F, seed: u64)
where
    F: Fn(&mut Tape<'a>, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store);
    let w = random_matrix(tape.value(out).rows(), tape.value(out).cols(), seed);
    let mut analytic = store.clone();
    analytic.zero_grad();
    tape.backward(&[(out, &w)], &mut analytic).unwrap();
    let objective = |s: &ParamStore| {
        let mut tp = Tape::new();
        let o = f(&mut tp, s);
        tp.value(o)
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    fd_compare(t, label, store, &analytic, objective);
}

fn fd_compare(
    t: &mut Tally,
    label: &str,
    store: &ParamStore,
    analytic: &ParamStore,
    objective: impl Fn(&ParamStore) -> f64,
) {
    let eps = 1e-5;
    for name in store.names() {
        let len = store.get(&name).unwrap().value.data().len();
        for k in 0..len {
            let mut plus = store.clone();
            plus.get_mut(&name).unwrap().value.data_mut()[k] += eps;
            let mut minus = store.clone();
            minus.get_mut(&name).unwrap().value.data_mut()[k] -= eps;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            let an = analytic.get(&name).unwrap().grad.data()[k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            t.truth(
                || format!("{label} {name}[{k}]: analytic {an:e} vs numeric {fd:e}"),
                rel < 1e-4,
            );
        }
    }
}

fn store_of(entries: &[(&str, Tensor2)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, v) in entries {
        s.insert(*n, v.clone());
    }
    s
}

/// Tiny model (context width 3) whose streams feed the losses.
fn composed_case(seed: u64) -> (Model, Graph, Tensor2) {
    let graph = generate_gnp(7, 0.4, seed).unwrap();
    let config = ModelConfig {
        context_dim: 3,
        adapter_dim: 5,
        hidden_dim: 4,
        out_dim: 3,
        dropout: 0.2,
        ..ModelConfig::default()
    };
    let mut model = Model::new(config, seed).unwrap();
    model.add_adapter("g", 0, seed);
    let ctx = random_matrix(7, 3, seed + 1);
    let inputs = adapter_inputs("g", &graph, &ctx).unwrap();
    (model, graph, inputs)
}

pub fn gradient_suite() -> Result<String, String> {
    let mut t = Tally::default();
    for seed in 0..3u64 {
        let s = seed * 100;
        let (r, c, k) = (3 + seed as usize, 4, 2 + seed as usize);
        let store = store_of(&[
            ("x", random_matrix(r, c, s + 1)),
            ("w", random_matrix(c, k, s + 2)),
            ("b", random_matrix(1, k, s + 3)),
            ("y", random_matrix(r + 1, c, s + 4)),
        ]);
        gradcheck(
            &mut t,
            "affine",
            &store,
            |tp, st| {
                let x = tp.param(st, "x", true).unwrap();
                let w = tp.param(st, "w", true).unwrap();
                let b = tp.param(st, "b", true).unwrap();
                tp.affine(x, w, Some(b)).unwrap()
            },
            s + 5,
        );
        gradcheck(
            &mut t,
            "matmul",
            &store,
            |tp, st| {
                let x = tp.param(st, "x", true).unwrap();
                let w = tp.param(st, "w", true).unwrap();
                tp.matmul(x, w).unwrap()
            },
            s + 6,
        );
        gradcheck(
            &mut t,
            "matmul_nt",
            &store,
            |tp, st| {
                let x = tp.param(st, "x", true).unwrap();
                let y = tp.param(st, "y", true).unwrap();
                tp.matmul_nt(x, y).unwrap()
            },
            s + 7,
        );
        gradcheck(
            &mut t,
            "relu",
            &store,
            |tp, st| {
                let x = tp.param(st, "x", true).unwrap();
                tp.relu(x)
            },
            s + 8,
        );
        gradcheck(
            &mut t,
            "row_l2_normalize",
            &store,
            |tp, st| {
                let x = tp.param(st, "x", true).unwrap();
                tp.row_l2_normalize(x)
            },
            s + 9,
        );
        gradcheck(
            &mut t,
            "dropout",
            &store,
            |tp, st| {
                let x = tp.param(st, "x", true).unwrap();
                tp.dropout(x, 0.3, true, s + 10).unwrap()
            },
            s + 11,
        );
        gradcheck(
            &mut t,
            "concat+scale",
            &store,
            |tp, st| {
                let x = tp.param(st, "x", true).unwrap();
                let w = tp.param(st, "w", true).unwrap();
                let xw = tp.matmul(x, w).unwrap();
                let half = tp.scale(x, 0.5);
                tp.concat(&[half, xw]).unwrap()
            },
            s + 12,
        );
        gradcheck(
            &mut t,
            "cosine_logits",
            &store,
            |tp, st| {
                let x = tp.param(st, "x", true).unwrap();
                let y = tp.param(st, "y", true).unwrap();
                tp.cosine_logits(x, y, 0.1).unwrap()
            },
            s + 13,
        );

        let graph = generate_gnp(6, 0.5, s + 14).unwrap();
        let sage = store_of(&[
            ("h", random_matrix(6, 3, s + 15)),
            ("ws", random_matrix(3, 4, s + 16)),
            ("wn", random_matrix(3, 4, s + 17)),
        ]);
        gradcheck(
            &mut t,
            "sage_linear",
            &sage,
            |tp, st| {
                let h = tp.param(st, "h", true).unwrap();
                let ws = tp.param(st, "ws", true).unwrap();
                let wn = tp.param(st, "wn", true).unwrap();
                tp.sage_linear(h, &graph, ws, wn).unwrap()
            },
            s + 18,
        );
        gradcheck(
            &mut t,
            "sage_layer",
            &sage,
            |tp, st| {
                let h = tp.param(st, "h", true).unwrap();
                let ws = tp.param(st, "ws", true).unwrap();
                let wn = tp.param(st, "wn", true).unwrap();
                tp.sage_layer(h, &graph, ws, wn).unwrap()
            },
            s + 19,
        );

        // adapter → both streams → embedding
        let (model, graph, inputs) = composed_case(s + 20);
        let store = model.params.clone();
        gradcheck(
            &mut t,
            "model embedding",
            &store,
            |tp, st| {
                let mut m = model.clone();
                m.params = st.clone();
                let streams = m
                    .forward(tp, "g", &graph, &inputs, &|_| true, true, s + 22)
                    .unwrap();
                m.embedding_on_tape(tp, streams).unwrap()
            },
            s + 23,
        );

        // full objective: symmetric InfoNCE + Laplacian smoothing
        for bank in [NegativeBank::Full, NegativeBank::Sampled(vec![1, 4, 6])] {
            let pairs = [(0, 2), (3, 5), (6, 1)];
            let objective = |st: &ParamStore, grads: Option<&mut ParamStore>| {
                let mut m = model.clone();
                m.params = st.clone();
                let mut tp = Tape::new();
                let sv = m
                    .forward(&mut tp, "g", &graph, &inputs, &|_| true, true, s + 24)
                    .unwrap();
                let nce = infonce_symmetric_with(tp.value(sv.g), tp.value(sv.z), &pairs, &bank, 0.5, false)
                    .unwrap();
                let (smooth, grad_smooth) = laplacian_smoothing(tp.value(sv.g), &graph, 0.3).unwrap();
                if let Some(out) = grads {
                    let mut gg = nce.grad_g.clone();
                    gg.add_scaled(&grad_smooth, 1.0);
                    out.zero_grad();
                    tp.backward(&[(sv.g, &gg), (sv.z, &nce.grad_z)], out).unwrap();
                }
                nce.value + smooth
            };
            let mut analytic = store.clone();
            objective(&store, Some(&mut analytic));
            fd_compare(&mut t, &format!("objective {bank:?}"), &store, &analytic, |st| {
                objective(st, None)
            });
        }
    }
    t.finish("every tape op, the embedding and the full objective over 3 random shapes".into())
}

// ----------------------------------------------------------------------- loss

pub fn loss_suite() -> Result<String, String> {
    let mut t = Tally::default();

    // uniform similarities
    for (n, bank) in [
        (8, NegativeBank::Full),
        (30, NegativeBank::Full),
        (30, NegativeBank::Sampled(vec![3, 7, 11, 19])),
    ] {
        let row = unit_rows(1, 6, n as u64);
        let mut g = Tensor2::zeros(n, 6);
        for i in 0..n {
            g.row_mut(i).copy_from_slice(row.row(0));
        }
        let pairs = [(0, 1), (5, 2), (9 % n, 0)];
        let k = match &bank {
            NegativeBank::Full => n,
            // the sampled bank plus each pair's own positive
            NegativeBank::Sampled(idx) => idx.len() + 1,
        };
        let v = infonce_symmetric(&g, &g, &pairs, &bank, 0.07).unwrap().value;
        t.close(|| format!("uniform bank of {k}"), v, (k as f64).ln(), 1e-9);
    }

    // closed form, positive similarity 1 and three negatives at −1
    let e = Tensor2::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![-1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
    let v = infonce_symmetric(&e, &e, &[(0, 0)], &NegativeBank::Full, 0.1)
        .unwrap()
        .value;
    let want = (3.0 * (-20f64).exp()).ln_1p();
    t.close(|| "4-candidate closed form".into(), v, want, 1e-12);

    // exact stream-swap symmetry
    for seed in 0..5u64 {
        let g = unit_rows(12, 5, seed);
        let z = unit_rows(12, 5, seed + 50);
        let pairs = [(0, 3), (4, 4), (11, 1), (7, 2)];
        let swapped: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (j, i)).collect();
        for bank in [NegativeBank::Full, NegativeBank::Sampled(vec![2, 5, 9])] {
            let a = infonce_symmetric(&g, &z, &pairs, &bank, 0.1).unwrap();
            let b = infonce_symmetric(&z, &g, &swapped, &bank, 0.1).unwrap();
            t.eq(
                || format!("swap symmetry seed {seed} {bank:?}"),
                a.value.to_bits(),
                b.value.to_bits(),
            );
            t.truth(|| format!("non-negative loss seed {seed}"), a.value >= 0.0);
        }
    }

    // Laplacian term
    let (one, _) = laplacian_smoothing(
        &Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap(),
        &path(2),
        5e-3,
    )
    .unwrap();
    t.close(|| "single edge".into(), one, 5e-3, 1e-15);
    for seed in 0..5u64 {
        let graph = generate_gnp(10, 0.4, seed).unwrap();
        let g = random_matrix(10, 4, seed + 7);
        let (v, _) = laplacian_smoothing(&g, &graph, 5e-3).unwrap();
        let a = oracles::adjacency(&graph);
        let mut sum = 0.0;
        let mut edges = 0usize;
        for u in 0..10 {
            for w in u + 1..10 {
                if a[u][w] {
                    edges += 1;
                    sum += (0..4).map(|k| (g.get(u, k) - g.get(w, k)).powi(2)).sum::<f64>();
                }
            }
        }
        let want = if edges == 0 {
            0.0
        } else {
            5e-3 * sum / edges as f64
        };
        t.close(|| format!("laplacian direct sum seed {seed}"), v, want, 1e-12);

        let mut perm: Vec<usize> = (0..10).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut moved = Tensor2::zeros(10, 4);
        for u in 0..10 {
            moved.row_mut(perm[u]).copy_from_slice(g.row(u));
        }
        let (vp, _) = laplacian_smoothing(&moved, &graph.permuted(&perm).unwrap(), 5e-3).unwrap();
        t.close(|| format!("laplacian relabeling seed {seed}"), vp, v, 1e-12);
    }
    t.finish("uniform, closed-form, symmetry and smoothing cases".into())
}

// -------------------------------------------------------------------- metrics

fn random_scores(n: usize, seed: u64, ties: bool) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    let scores = labels
        .iter()
        .map(|&l| {
            let s: f64 = rng.gen_range(0.0..1.0) + if l { 0.3 } else { 0.0 };
            if ties {
                (s * 10.0).round() / 10.0
            } else {
                s
            }
        })
        .collect();
    (scores, labels)
}

pub fn metric_suite() -> Result<String, String> {
    let mut t = Tally::default();
    for seed in 0..10u64 {
        let (s, l) = random_scores(200, seed, seed % 2 == 0);
        t.close(
            || format!("roc_auc seed {seed}"),
            roc_auc(&s, &l).unwrap(),
            oracles::pair_count_auc(&s, &l).unwrap(),
            1e-12,
        );

        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let x: Vec<f64> = (0..80).map(|_| (rng.gen_range(0.0..5.0f64)).floor()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-2.0..2.0)).collect();
        t.close(
            || format!("spearman seed {seed}"),
            spearman(&x, &y).rho,
            oracles::naive_spearman(&x, &y),
            1e-12,
        );

        let n = 60;
        let emb = random_matrix(n, 8, seed + 200);
        let label: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let pos = label.iter().filter(|&&b| b).count();
        if pos >= 2 {
            let curve = same_label_enrichment(&emb, &label, &[n - 1], Exec::default()).unwrap();
            t.close(
                || format!("enrichment at N-1 seed {seed}"),
                curve[0].1,
                (pos - 1) as f64 / (n - 1) as f64,
                1e-12,
            );
        }

        let aucs: Vec<Option<f64>> = (0..40)
            .map(|_| rng.gen_bool(0.85).then(|| rng.gen_range(0.3..1.0)))
            .collect();
        let strata: Vec<String> = (0..40)
            .map(|_| ["shallow", "medium", "deep"][rng.gen_range(0..3)].to_string())
            .collect();
        let per = stratified_auc(&aucs, &strata).unwrap();
        let weighted: f64 = per.values().map(|m| m.mean * m.count as f64).sum();
        let count: usize = per.values().map(|m| m.count).sum();
        t.close(
            || format!("stratified recombination seed {seed}"),
            weighted / count as f64,
            mean_defined(&aucs).unwrap(),
            1e-12,
        );
    }

    // crafted 6-point instances for the F1 threshold
    let instances: [([f64; 6], [bool; 6]); 4] = [
        (
            [0.9, 0.8, 0.7, 0.6, 0.5, 0.4],
            [true, false, true, true, false, false],
        ),
        (
            [0.2, 0.2, 0.5, 0.5, 0.9, 0.1],
            [false, true, true, false, true, false],
        ),
        (
            [0.3, 0.6, 0.6, 0.6, 0.1, 0.8],
            [true, true, false, true, false, false],
        ),
        (
            [0.5, 0.4, 0.3, 0.2, 0.1, 0.0],
            [false, false, false, false, false, true],
        ),
    ];
    for (i, (s, l)) in instances.iter().enumerate() {
        let tuned = tune_threshold_f1(s, l);
        let (best, argmax) = oracles::exhaustive_f1(s, l);
        t.eq(|| format!("6-point F1 instance {i}"), f1_at(s, l, tuned), best);
        let highest = argmax
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::MIN, f64::max);
        t.eq(|| format!("6-point threshold instance {i}"), tuned, highest);
    }

    // macro ROC of 5 random curves against direct averaging
    let mut curves = Vec::new();
    let mut cases = Vec::new();
    for seed in 0..5u64 {
        let (s, l) = random_scores(50, seed + 300, seed % 2 == 1);
        curves.push(RocCurve::from_scores(&s, &l).unwrap());
        cases.push((s, l));
    }
    let mean = macro_roc(&curves).unwrap();
    for (gi, &x) in fpr_grid().iter().enumerate().step_by(10) {
        let direct: f64 =
            cases.iter().map(|(s, l)| oracles::tpr_at(s, l, x)).sum::<f64>() / cases.len() as f64;
        t.close(
            || format!("macro ROC at grid point {gi}"),
            mean.tpr[gi],
            direct,
            1e-12,
        );
    }
    t.finish("AUC, Spearman, enrichment, strata, F1 scan and macro ROC".into())
}

// ---------------------------------------------------------- null calibration

/// Mean zero-shot AUC over `seeds` probes on hashed context with node
/// labels shuffled.
pub fn permuted_label_auc(seeds: u64) -> Vec<f64> {
    let graph = generate_sbm(&[100, 100], 0.3, 0.02, 5).unwrap();
    let ctx = hashed_context(&graph, &DescriptorConfig::default()).unwrap();
    let labels = graph.labels().unwrap().clone();
    (0..seeds)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..200).collect();
            order.shuffle(&mut rng);
            let shuffled = labels.select_rows(&order);
            let split: Vec<SplitTag> = (0..200)
                .map(|_| match rng.gen_range(0..10) {
                    0..=5 => SplitTag::Train,
                    6 | 7 => SplitTag::Valid,
                    _ => SplitTag::Test,
                })
                .collect();
            let (_, report) =
                zero_shot_probe(&ctx, &shuffled, &split, &ProbeConfig::default(), Exec::default()).unwrap();
            report.mean_auc.unwrap()
        })
        .collect()
}

/// Ratio-mode co-enrichment of independent labels on random embeddings.
pub fn null_co_enrichment() -> Tensor2 {
    let n = 500;
    let emb = random_matrix(n, 32, 77);
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let prevalence = [0.2, 0.3, 0.4, 0.5];
    let data: Vec<bool> = (0..n).flat_map(|_| prevalence.map(|p| rng.gen_bool(p))).collect();
    let labels = Labels::new(n, prevalence.len(), data).unwrap();
    co_enrichment(&emb, &labels, &[0, 1, 2, 3], 10, true, Exec::default())
        .unwrap()
        .values
}

pub fn null_calibration_suite() -> Result<String, String> {
    let mut t = Tally::default();
    let aucs = permuted_label_auc(10);
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    t.truth(
        || format!("permuted-label mean AUC {mean:.4} outside [0.45, 0.55]"),
        (0.45..=0.55).contains(&mean),
    );
    let m = null_co_enrichment();
    let (lo, hi) = m
        .data()
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    t.truth(
        || format!("co-enrichment ratio range [{lo:.3}, {hi:.3}] outside [0.8, 1.2]"),
        lo >= 0.8 && hi <= 1.2,
    );
    t.finish(format!(
        "permuted-label mean AUC {mean:.4}; co-enrichment ratios in [{lo:.3}, {hi:.3}]"
    ))
}
