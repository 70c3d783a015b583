//! Local and global topology descriptors of every node, plus graph-level
//! statistics.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::graph::Graph;
use crate::io;
use crate::{Error, Result};

pub const PAGERANK_DAMPING: f64 = 0.85;
pub const PAGERANK_ITERATIONS: usize = 40;
pub const LABEL_PROPAGATION_SWEEPS: usize = 20;

/// Above this node count the spectral gap is estimated by power iteration
/// instead of a dense eigensolve.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralProfile {
    pub degree: usize,
    pub clustering: f64,
    pub core: usize,
    pub ego1_v: usize,
    pub ego1_e: usize,
    pub ego1_d: f64,
    pub ego2_v: usize,
    pub ego2_e: usize,
    pub ego2_d: f64,
    pub pagerank: f64,
    pub lp_comm: usize,
    pub lp_size: usize,
    pub lp_dens: f64,
    pub scoda_comm: usize,
    pub scoda_size: usize,
    pub scoda_dens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n: usize,
    pub e: usize,
    pub avgd: f64,
    pub trans: f64,
    pub q25: usize,
    pub q50: usize,
    pub q75: usize,
    pub spec_gap: f64,
}

/// Matrix whose top of spectrum defines `spec_gap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralOperator {
    /// `λ1 − λ2` of the adjacency matrix.
    #[default]
    Adjacency,
    /// `μ2 − μ1` of `I − D^{-1/2} A D^{-1/2}` (smallest two eigenvalues).
    NormalizedLaplacian,
}

#[derive(Debug, Clone)]
pub struct DescriptorConfig {
    pub seed: u64,
    /// Stop growing a radius-2 ego ball once it holds this many nodes.
    pub ego_cap: Option<usize>,
    pub spectral: SpectralOperator,
    /// SCoDA degree threshold; the degree mode when unset.
    pub scoda_threshold: Option<usize>,
    pub exec: Exec,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            seed: 42,
            ego_cap: None,
            spectral: SpectralOperator::Adjacency,
            scoda_threshold: None,
            exec: Exec::default(),
        }
    }
}

fn sorted_intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Triangles through `node`.
pub fn triangles(graph: &Graph, node: usize) -> usize {
    let nbrs = graph.neighbors(node);
    // each triangle is seen from both of its other corners
    nbrs.iter()
        .map(|&v| sorted_intersection_len(nbrs, graph.neighbors(v)))
        .sum::<usize>()
        / 2
}

pub fn clustering_coefficient(graph: &Graph, node: usize) -> f64 {
    let d = graph.degree(node);
    if d < 2 {
        return 0.0;
    }
    triangles(graph, node) as f64 / (d * (d - 1) / 2) as f64
}

/// Core numbers by bucket-sorted peeling (Batagelj–Zaveršnik).
pub fn kcore_numbers(graph: &Graph) -> Vec<usize> {
    let n = graph.node_count();
    let mut deg = graph.degrees();
    let max_deg = deg.iter().copied().max().unwrap_or(0);
    let mut bin = vec![0usize; max_deg + 1];
    for &d in &deg {
        bin[d] += 1;
    }
    let mut start = 0;
    for b in bin.iter_mut() {
        let count = *b;
        *b = start;
        start += count;
    }
    let mut pos = vec![0usize; n];
    let mut vert = vec![0usize; n];
    for v in 0..n {
        pos[v] = bin[deg[v]];
        vert[pos[v]] = v;
        bin[deg[v]] += 1;
    }
    for d in (1..=max_deg).rev() {
        bin[d] = bin[d - 1];
    }
    if max_deg > 0 || n > 0 {
        bin[0] = 0;
    }
    for i in 0..n {
        let v = vert[i];
        for &u in graph.neighbors(v) {
            if deg[u] > deg[v] {
                let du = deg[u];
                let pu = pos[u];
                let pw = bin[du];
                let w = vert[pw];
                if u != w {
                    pos[u] = pw;
                    vert[pu] = w;
                    pos[w] = pu;
                    vert[pw] = u;
                }
                bin[du] += 1;
                deg[u] -= 1;
            }
        }
    }
    deg
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoStats {
    pub vertices: usize,
    pub edges: usize,
    pub density: f64,
}

/// Pair-count density `2e / (v (v − 1))`; zero below two vertices.
pub fn pair_density(vertices: usize, edges: usize) -> f64 {
    if vertices < 2 {
        0.0
    } else {
        2.0 * edges as f64 / (vertices as f64 * (vertices as f64 - 1.0))
    }
}

pub fn ego_stats(graph: &Graph, node: usize, radius: usize) -> Result<EgoStats> {
    ego_stats_capped(graph, node, radius, None)
}

/// Statistics of the radius-`radius` BFS ball around `node` (center
/// included). With `cap`, the ball stops growing at `cap` nodes; frontier
/// nodes are admitted in ascending id order.
pub fn ego_stats_capped(graph: &Graph, node: usize, radius: usize, cap: Option<usize>) -> Result<EgoStats> {
    if !(1..=2).contains(&radius) {
        return Err(Error::Config(format!("ego radius must be 1 or 2, got {radius}")));
    }
    let cap = cap.unwrap_or(usize::MAX).max(1);
    let mut ball = vec![node];
    let mut frontier = vec![node];
    'grow: for _ in 0..radius {
        let mut next: Vec<usize> = frontier
            .iter()
            .flat_map(|&u| graph.neighbors(u).iter().copied())
            .collect();
        next.sort_unstable();
        next.dedup();
        ball.sort_unstable();
        let mut added = Vec::new();
        for v in next {
            if ball.binary_search(&v).is_err() {
                if ball.len() + added.len() >= cap {
                    ball.extend(added);
                    break 'grow;
                }
                added.push(v);
            }
        }
        ball.extend(added.iter().copied());
        frontier = added;
    }
    ball.sort_unstable();
    let twice: usize = ball
        .iter()
        .map(|&u| sorted_intersection_len(graph.neighbors(u), &ball))
        .sum();
    let edges = twice / 2;
    Ok(EgoStats {
        vertices: ball.len(),
        edges,
        density: pair_density(ball.len(), edges),
    })
}

pub fn pagerank(graph: &Graph) -> Vec<f64> {
    pagerank_with(graph, PAGERANK_DAMPING, PAGERANK_ITERATIONS)
}

/// Power iteration from the uniform vector. Mass on dangling nodes is spread
/// uniformly.
pub fn pagerank_with(graph: &Graph, damping: f64, iterations: usize) -> Vec<f64> {
    let n = graph.node_count();
    if n == 0 {
        return Vec::new();
    }
    let nf = n as f64;
    let mut p = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    for _ in 0..iterations {
        let dangling: f64 = (0..n).filter(|&u| graph.degree(u) == 0).map(|u| p[u]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        for v in 0..n {
            let inflow: f64 = graph
                .neighbors(v)
                .iter()
                .map(|&u| p[u] / graph.degree(u) as f64)
                .sum();
            next[v] = base + damping * inflow;
        }
        std::mem::swap(&mut p, &mut next);
    }
    p
}

/// Renumbers community ids `0..C` by first appearance in node order.
pub fn canonical_communities(raw: &[usize]) -> Vec<usize> {
    let mut map = HashMap::new();
    raw.iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

/// Asynchronous label propagation. Each sweep visits nodes in a fresh
/// seeded shuffle; a node adopts the most frequent label among its
/// neighbors, smallest label on ties. Stops after 20 sweeps or a sweep with
/// no change. Returned ids are canonical.
pub fn label_propagation(graph: &Graph, seed: u64) -> Vec<usize> {
    label_propagation_sweeps(graph, seed, LABEL_PROPAGATION_SWEEPS)
}

pub fn label_propagation_sweeps(graph: &Graph, seed: u64, sweeps: usize) -> Vec<usize> {
    let n = graph.node_count();
    let mut label: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut buf = Vec::new();
    for _ in 0..sweeps {
        order.shuffle(&mut rng);
        let mut changed = false;
        for &u in &order {
            let nbrs = graph.neighbors(u);
            if nbrs.is_empty() {
                continue;
            }
            buf.clear();
            buf.extend(nbrs.iter().map(|&v| label[v]));
            buf.sort_unstable();
            let (mut best, mut best_count) = (buf[0], 0);
            let mut i = 0;
            while i < buf.len() {
                let mut j = i;
                while j < buf.len() && buf[j] == buf[i] {
                    j += 1;
                }
                if j - i > best_count {
                    best = buf[i];
                    best_count = j - i;
                }
                i = j;
            }
            if best != label[u] {
                label[u] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    canonical_communities(&label)
}

/// Most frequent degree among non-isolated nodes, smallest on ties. Zero for
/// an edgeless graph.
pub fn degree_mode(graph: &Graph) -> usize {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for d in graph.degrees().into_iter().filter(|&d| d > 0) {
        *counts.entry(d).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(d, _)| d)
}

/// Streaming community detection (SCoDA). Edges arrive in a seeded shuffle
/// of the canonical list; every node starts alone. On edge `(u, v)` both
/// observed degrees grow by one, and if the smaller of them is within the
/// threshold the endpoint with the smaller observed degree joins the other's
/// community (`u` joins `v` on ties). Returned ids are canonical.
pub fn scoda(graph: &Graph, seed: u64, degree_threshold: Option<usize>) -> Vec<usize> {
    let n = graph.node_count();
    let threshold = degree_threshold.unwrap_or_else(|| degree_mode(graph));
    let mut edges: Vec<(usize, usize)> = graph.edges().collect();
    edges.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut community: Vec<usize> = (0..n).collect();
    let mut observed = vec![0usize; n];
    for (u, v) in edges {
        observed[u] += 1;
        observed[v] += 1;
        if observed[u].min(observed[v]) <= threshold {
            if observed[u] <= observed[v] {
                community[u] = community[v];
            } else {
                community[v] = community[u];
            }
        }
    }
    canonical_communities(&community)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommunityStats {
    pub size: usize,
    pub internal_edges: usize,
    pub density: f64,
}

/// Size and internal pair density of each community. `assignment` must use
/// ids `0..C`; the result is indexed by id.
pub fn community_stats(graph: &Graph, assignment: &[usize]) -> Result<Vec<CommunityStats>> {
    if assignment.len() != graph.node_count() {
        return Err(Error::Dimension(format!(
            "assignment covers {} of {} nodes",
            assignment.len(),
            graph.node_count()
        )));
    }
    let c = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut size = vec![0usize; c];
    let mut internal = vec![0usize; c];
    for &a in assignment {
        size[a] += 1;
    }
    for (u, v) in graph.edges() {
        if assignment[u] == assignment[v] {
            internal[assignment[u]] += 1;
        }
    }
    Ok(size
        .into_iter()
        .zip(internal)
        .map(|(s, e)| CommunityStats {
            size: s,
            internal_edges: e,
            density: pair_density(s, e),
        })
        .collect())
}

/// Nearest-rank quantile (`p` in quarters) of sorted values.
fn nearest_rank(sorted: &[usize], quarters: usize) -> usize {
    let n = sorted.len();
    let rank = (quarters * n).div_ceil(4).max(1);
    sorted[rank - 1]
}

pub fn graph_stats(graph: &Graph, spectral: SpectralOperator) -> Result<GraphStats> {
    let n = graph.node_count();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let e = graph.edge_count();
    let mut degrees = graph.degrees();
    let corner_triangles: usize = (0..n).map(|u| triangles(graph, u)).sum();
    let triads: usize = degrees.iter().map(|&d| d * d.saturating_sub(1) / 2).sum();
    let trans = if triads == 0 {
        0.0
    } else {
        corner_triangles as f64 / triads as f64
    };
    degrees.sort_unstable();
    Ok(GraphStats {
        n,
        e,
        avgd: 2.0 * e as f64 / n as f64,
        trans,
        q25: nearest_rank(&degrees, 1),
        q50: nearest_rank(&degrees, 2),
        q75: nearest_rank(&degrees, 3),
        spec_gap: spectral_gap(graph, spectral),
    })
}

pub fn spectral_gap(graph: &Graph, op: SpectralOperator) -> f64 {
    let n = graph.node_count();
    if n < 2 {
        return 0.0;
    }
    if n <= DENSE_EIGEN_LIMIT {
        let m = dense_operator(graph, op);
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        match op {
            SpectralOperator::Adjacency => ev[0] - ev[1],
            SpectralOperator::NormalizedLaplacian => ev[n - 2] - ev[n - 1],
        }
    } else {
        power_gap(graph, op)
    }
}

fn inv_sqrt_degrees(graph: &Graph) -> Vec<f64> {
    graph
        .degrees()
        .into_iter()
        .map(|d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect()
}

fn dense_operator(graph: &Graph, op: SpectralOperator) -> DMatrix<f64> {
    let n = graph.node_count();
    let mut m = DMatrix::zeros(n, n);
    match op {
        SpectralOperator::Adjacency => {
            for (u, v) in graph.edges() {
                m[(u, v)] = 1.0;
                m[(v, u)] = 1.0;
            }
        }
        SpectralOperator::NormalizedLaplacian => {
            let s = inv_sqrt_degrees(graph);
            for u in 0..n {
                if graph.degree(u) > 0 {
                    m[(u, u)] = 1.0;
                }
            }
            for (u, v) in graph.edges() {
                m[(u, v)] = -s[u] * s[v];
                m[(v, u)] = -s[u] * s[v];
            }
        }
    }
    m
}

/// Top two eigenvalues of a shifted positive semidefinite operator by power
/// iteration with deflation, mapped back to the requested gap.
fn power_gap(graph: &Graph, op: SpectralOperator) -> f64 {
    let n = graph.node_count();
    let s = inv_sqrt_degrees(graph);
    let shift = match op {
        SpectralOperator::Adjacency => graph.degrees().into_iter().max().unwrap_or(0) as f64,
        SpectralOperator::NormalizedLaplacian => 0.0,
    };
    // Adjacency: A + shift I.  Normalized Laplacian: 2I − L = I + D^-½ A D^-½,
    // whose top eigenvalues are 2 − (smallest of L).
    let apply = |x: &DVector<f64>| -> DVector<f64> {
        let mut y = DVector::zeros(n);
        for u in 0..n {
            let mut acc = 0.0;
            for &v in graph.neighbors(u) {
                acc += match op {
                    SpectralOperator::Adjacency => x[v],
                    SpectralOperator::NormalizedLaplacian => s[u] * s[v] * x[v],
                };
            }
            y[u] = acc
                + match op {
                    SpectralOperator::Adjacency => shift * x[u],
                    SpectralOperator::NormalizedLaplacian => {
                        if graph.degree(u) > 0 {
                            x[u]
                        } else {
                            2.0 * x[u]
                        }
                    }
                };
        }
        y
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut found: Vec<(f64, DVector<f64>)> = Vec::new();
    for _ in 0..2 {
        let mut x = DVector::from_fn(n, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let mut lambda = 0.0;
        for _ in 0..5000 {
            for (_, q) in &found {
                let c = q.dot(&x);
                x -= q * c;
            }
            let norm = x.norm();
            if norm == 0.0 {
                break;
            }
            x /= norm;
            let y = apply(&x);
            let next = x.dot(&y);
            let done = (next - lambda).abs() <= 1e-12 * next.abs().max(1.0);
            lambda = next;
            x = y;
            if done {
                break;
            }
        }
        for (_, q) in &found {
            let c = q.dot(&x);
            x -= q * c;
        }
        let norm = x.norm();
        if norm > 0.0 {
            x /= norm;
        }
        found.push((lambda, x));
    }
    match op {
        SpectralOperator::Adjacency => found[0].0 - found[1].0,
        SpectralOperator::NormalizedLaplacian => found[0].0 - found[1].0,
    }
}

/// Every descriptor of every node plus the graph statistics.
pub fn structural_profiles(
    graph: &Graph,
    config: &DescriptorConfig,
) -> Result<(Vec<StructuralProfile>, GraphStats)> {
    let stats = graph_stats(graph, config.spectral)?;
    let cores = kcore_numbers(graph);
    let pr = pagerank(graph);
    let lp = label_propagation(graph, config.seed);
    let lp_stats = community_stats(graph, &lp)?;
    let sc = scoda(graph, config.seed, config.scoda_threshold);
    let sc_stats = community_stats(graph, &sc)?;
    let local = config.exec.map(graph.node_count(), |u| {
        let e1 = ego_stats_capped(graph, u, 1, None).expect("radius 1 is valid");
        let e2 = ego_stats_capped(graph, u, 2, config.ego_cap).expect("radius 2 is valid");
        (clustering_coefficient(graph, u), e1, e2)
    });
    let profiles = local
        .into_iter()
        .enumerate()
        .map(|(u, (cc, e1, e2))| StructuralProfile {
            degree: graph.degree(u),
            clustering: cc,
            core: cores[u],
            ego1_v: e1.vertices,
            ego1_e: e1.edges,
            ego1_d: e1.density,
            ego2_v: e2.vertices,
            ego2_e: e2.edges,
            ego2_d: e2.density,
            pagerank: pr[u],
            lp_comm: lp[u],
            lp_size: lp_stats[lp[u]].size,
            lp_dens: lp_stats[lp[u]].density,
            scoda_comm: sc[u],
            scoda_size: sc_stats[sc[u]].size,
            scoda_dens: sc_stats[sc[u]].density,
        })
        .collect();
    Ok((profiles, stats))
}

pub const DESCRIPTOR_COLUMNS: [&str; 17] = [
    "node",
    "deg",
    "cc",
    "core",
    "ego1V",
    "ego1E",
    "ego1D",
    "ego2V",
    "ego2E",
    "ego2D",
    "pr",
    "lp_comm",
    "lp_size",
    "lp_dens",
    "scoda_comm",
    "scoda_size",
    "scoda_dens",
];

/// Tab-separated descriptor table; reals use shortest round-trip formatting.
pub fn descriptor_table(profiles: &[StructuralProfile]) -> String {
    let mut s = DESCRIPTOR_COLUMNS.join("\t");
    s.push('\n');
    for (u, p) in profiles.iter().enumerate() {
        writeln!(
            s,
            "{u}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.degree,
            p.clustering,
            p.core,
            p.ego1_v,
            p.ego1_e,
            p.ego1_d,
            p.ego2_v,
            p.ego2_e,
            p.ego2_d,
            p.pagerank,
            p.lp_comm,
            p.lp_size,
            p.lp_dens,
            p.scoda_comm,
            p.scoda_size,
            p.scoda_dens
        )
        .unwrap();
    }
    s
}

pub fn parse_descriptor_table(text: &str, path: &Path) -> Result<Vec<StructuralProfile>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split('\t').eq(DESCRIPTOR_COLUMNS.iter().copied()) => {}
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "missing or unexpected descriptor header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != DESCRIPTOR_COLUMNS.len() {
            return Err(err(format!(
                "{} columns, expected {}",
                f.len(),
                DESCRIPTOR_COLUMNS.len()
            )));
        }
        let int =
            |i: usize| -> Result<usize> { f[i].parse().map_err(|_| err(format!("bad integer {:?}", f[i]))) };
        let real =
            |i: usize| -> Result<f64> { f[i].parse().map_err(|_| err(format!("bad number {:?}", f[i]))) };
        out.push(StructuralProfile {
            degree: int(1)?,
            clustering: real(2)?,
            core: int(3)?,
            ego1_v: int(4)?,
            ego1_e: int(5)?,
            ego1_d: real(6)?,
            ego2_v: int(7)?,
            ego2_e: int(8)?,
            ego2_d: real(9)?,
            pagerank: real(10)?,
            lp_comm: int(11)?,
            lp_size: int(12)?,
            lp_dens: real(13)?,
            scoda_comm: int(14)?,
            scoda_size: int(15)?,
            scoda_dens: real(16)?,
        });
    }
    Ok(out)
}

pub fn write_descriptor_table(path: &Path, profiles: &[StructuralProfile]) -> Result<()> {
    io::write_string(path, &descriptor_table(profiles))
}

pub fn read_descriptor_table(path: &Path) -> Result<Vec<StructuralProfile>> {
    parse_descriptor_table(&io::read_string(path)?, path)
}

pub fn graph_stats_text(stats: &GraphStats) -> String {
    format!(
        "N\t{}\nE\t{}\navgd\t{}\ntrans\t{}\nq25\t{}\nq50\t{}\nq75\t{}\nspec_gap\t{}\n",
        stats.n, stats.e, stats.avgd, stats.trans, stats.q25, stats.q50, stats.q75, stats.spec_gap
    )
}

pub fn parse_graph_stats(text: &str, path: &Path) -> Result<GraphStats> {
    let mut kv = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut it = line.splitn(2, '\t');
        if let (Some(k), Some(v)) = (it.next(), it.next()) {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| {
        kv.get(k).cloned().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("missing key {k}"),
        })
    };
    let bad = |k: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("bad value for {k}"),
    };
    macro_rules! field {
        ($k:literal) => {
            get($k)?.parse().map_err(|_| bad($k))?
        };
    }
    Ok(GraphStats {
        n: field!("N"),
        e: field!("E"),
        avgd: field!("avgd"),
        trans: field!("trans"),
        q25: field!("q25"),
        q50: field!("q50"),
        q75: field!("q75"),
        spec_gap: field!("spec_gap"),
    })
}
