//! Immutable undirected graphs in compressed sparse row form, plus loaders,
//! synthetic generators and node splits.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io;
use crate::tensor::Tensor2;
use crate::{Error, Result};

/// Binary node-by-label matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Labels {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} label entries for a {rows}x{cols} label matrix",
                data.len()
            )));
        }
        Ok(Labels { rows, cols, data })
    }

    /// One column per class; node `i` is positive for `classes[i]` only.
    pub fn one_hot(classes: &[usize], num_classes: usize) -> Self {
        let mut data = vec![false; classes.len() * num_classes];
        for (i, &c) in classes.iter().enumerate() {
            data[i * num_classes + c] = true;
        }
        Labels {
            rows: classes.len(),
            cols: num_classes,
            data,
        }
    }

    pub fn from_tensor(t: &Tensor2) -> Result<Self> {
        let mut data = Vec::with_capacity(t.data().len());
        for &v in t.data() {
            if v == 0.0 {
                data.push(false);
            } else if v == 1.0 {
                data.push(true);
            } else {
                return Err(Error::Format(format!("label value {v} is not 0 or 1")));
            }
        }
        Labels::new(t.rows(), t.cols(), data)
    }

    pub fn to_tensor(&self) -> Tensor2 {
        let data = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor2::from_vec(self.rows, self.cols, data).expect("shape is consistent")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_labels(&self) -> usize {
        self.cols
    }

    pub fn get(&self, node: usize, label: usize) -> bool {
        self.data[node * self.cols + label]
    }

    pub fn column(&self, label: usize) -> Vec<bool> {
        (0..self.rows).map(|i| self.get(i, label)).collect()
    }

    pub fn count(&self, node: usize) -> usize {
        (0..self.cols).filter(|&l| self.get(node, l)).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Labels {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
        }
        Labels {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitTag::Train),
            "valid" | "val" | "validation" => Some(SplitTag::Valid),
            "test" => Some(SplitTag::Test),
            _ => None,
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Counts of input edges discarded while building a graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub duplicates: usize,
    pub self_loops: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    features: Option<Tensor2>,
    labels: Option<Labels>,
    split: Option<Vec<SplitTag>>,
    /// Original integer id of each dense node, when the graph was loaded
    /// from a file with arbitrary ids.
    original_ids: Option<Vec<i64>>,
}

impl Graph {
    /// Builds from `(u, v)` pairs over nodes `0..node_count`. Both directions
    /// are stored; duplicates and self-loops are dropped and counted.
    pub fn from_edges<I>(node_count: usize, edges: I) -> Result<(Graph, BuildReport)>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut report = BuildReport::default();
        let mut pairs = Vec::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::Dimension(format!(
                    "edge ({u}, {v}) references a node outside 0..{node_count}"
                )));
            }
            if u == v {
                report.self_loops += 1;
                continue;
            }
            pairs.push((u.min(v), u.max(v)));
        }
        pairs.sort_unstable();
        let before = pairs.len();
        pairs.dedup();
        report.duplicates = before - pairs.len();

        let mut degree = vec![0usize; node_count];
        for &(u, v) in &pairs {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(node_count + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..node_count].to_vec();
        let mut targets = vec![0usize; offsets[node_count]];
        for &(u, v) in &pairs {
            targets[cursor[u]] = v;
            cursor[u] += 1;
            targets[cursor[v]] = u;
            cursor[v] += 1;
        }
        for u in 0..node_count {
            targets[offsets[u]..offsets[u + 1]].sort_unstable();
        }
        Ok((
            Graph {
                offsets,
                targets,
                features: None,
                labels: None,
                split: None,
                original_ids: None,
            },
            report,
        ))
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    /// Sorted neighbor list.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count()).map(|u| self.degree(u)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| v > u)
                .map(move |&v| (u, v))
        })
    }

    pub fn features(&self) -> Option<&Tensor2> {
        self.features.as_ref()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.as_ref().map_or(0, Tensor2::cols)
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn split(&self) -> Option<&[SplitTag]> {
        self.split.as_deref()
    }

    pub fn original_ids(&self) -> Option<&[i64]> {
        self.original_ids.as_deref()
    }

    pub fn with_features(mut self, features: Tensor2) -> Result<Self> {
        if features.rows() != self.node_count() {
            return Err(Error::Dimension(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                self.node_count()
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        if labels.rows() != self.node_count() {
            return Err(Error::Dimension(format!(
                "label matrix has {} rows for {} nodes",
                labels.rows(),
                self.node_count()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_split(mut self, split: Vec<SplitTag>) -> Result<Self> {
        if split.len() != self.node_count() {
            return Err(Error::Dimension(format!(
                "split has {} tags for {} nodes",
                split.len(),
                self.node_count()
            )));
        }
        self.split = Some(split);
        Ok(self)
    }

    /// Node indices carrying `tag`, ascending.
    pub fn split_nodes(&self, tag: SplitTag) -> Vec<usize> {
        self.split
            .as_ref()
            .map(|s| (0..s.len()).filter(|&i| s[i] == tag).collect())
            .unwrap_or_default()
    }

    /// Relabels node `u` as `perm[u]`, carrying features, labels and split.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.node_count();
        if perm.len() != n {
            return Err(Error::Dimension("permutation length differs from N".into()));
        }
        let (mut g, _) = Graph::from_edges(n, self.edges().map(|(u, v)| (perm[u], perm[v])))?;
        let mut inverse = vec![0; n];
        for (u, &p) in perm.iter().enumerate() {
            inverse[p] = u;
        }
        if let Some(f) = &self.features {
            g.features = Some(f.select_rows(&inverse));
        }
        if let Some(l) = &self.labels {
            g.labels = Some(l.select_rows(&inverse));
        }
        if let Some(s) = &self.split {
            g.split = Some(inverse.iter().map(|&u| s[u]).collect());
        }
        Ok(g)
    }

    /// SHA-256 over the canonical edge list and node count. Topology only.
    pub fn topology_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(8 + self.targets.len() * 8);
        bytes.extend_from_slice(&(self.node_count() as u64).to_le_bytes());
        for (u, v) in self.edges() {
            bytes.extend_from_slice(&(u as u32).to_le_bytes());
            bytes.extend_from_slice(&(v as u32).to_le_bytes());
        }
        io::sha256_hex(&bytes)
    }

    /// `u v` lines with `u < v`, after a `# nodes N` header that preserves
    /// isolated nodes on reload.
    pub fn canonical_edge_list(&self) -> String {
        let mut s = format!("# nodes {}\n", self.node_count());
        for (u, v) in self.edges() {
            s.push_str(&format!("{u} {v}\n"));
        }
        s
    }

    pub fn save_edge_list(&self, path: &Path) -> Result<()> {
        io::write_string(path, &self.canonical_edge_list())
    }

    /// Node-to-original-id mapping, one `dense original` pair per line.
    pub fn save_id_map(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for u in 0..self.node_count() {
            let orig = self.original_ids.as_ref().map_or(u as i64, |m| m[u]);
            s.push_str(&format!("{u} {orig}\n"));
        }
        io::write_string(path, &s)
    }
}

/// Disjoint union; node ids of later graphs are shifted past earlier ones.
/// Features are kept only when every part has the same feature dimension,
/// labels only when every part has the same label count.
pub fn disjoint_union(parts: &[Graph]) -> Result<Graph> {
    let n: usize = parts.iter().map(Graph::node_count).sum();
    let mut edges = Vec::new();
    let mut offset = 0;
    for g in parts {
        edges.extend(g.edges().map(|(u, v)| (u + offset, v + offset)));
        offset += g.node_count();
    }
    let (mut merged, _) = Graph::from_edges(n, edges)?;
    if !parts.is_empty() && parts.iter().all(|g| g.features.is_some()) {
        let dim = parts[0].feature_dim();
        if parts.iter().all(|g| g.feature_dim() == dim) {
            let mut data = Vec::with_capacity(n * dim);
            for g in parts {
                data.extend_from_slice(g.features.as_ref().unwrap().data());
            }
            merged.features = Some(Tensor2::from_vec(n, dim, data)?);
        }
    }
    if !parts.is_empty() && parts.iter().all(|g| g.labels.is_some()) {
        let l = parts[0].labels.as_ref().unwrap().num_labels();
        if parts.iter().all(|g| g.labels.as_ref().unwrap().num_labels() == l) {
            let mut data = Vec::with_capacity(n * l);
            for g in parts {
                data.extend_from_slice(&g.labels.as_ref().unwrap().data);
            }
            merged.labels = Some(Labels::new(n, l, data)?);
        }
    }
    Ok(merged)
}

/// Result of reading an edge-list file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedGraph {
    pub graph: Graph,
    pub report: BuildReport,
}

/// Reads a whitespace-separated `u v` edge list with `#` comments. Arbitrary
/// integer ids are remapped to `0..N` in ascending id order. A `# nodes N`
/// comment declares ids `0..N` directly, keeping isolated nodes.
pub fn load_edge_list(
    path: &Path,
    feature_path: Option<&Path>,
    label_path: Option<&Path>,
) -> Result<LoadedGraph> {
    let text = io::read_string(path)?;
    let mut raw = Vec::new();
    let mut declared: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        if let Some(n) = line
            .trim()
            .strip_prefix("# nodes ")
            .and_then(|n| n.trim().parse().ok())
        {
            declared.get_or_insert(n);
        }
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let mut it = body.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(parse_err(format!("expected two node ids, got {body:?}"))),
        };
        let u: i64 = a
            .parse()
            .map_err(|_| parse_err(format!("invalid node id {a:?}")))?;
        let v: i64 = b
            .parse()
            .map_err(|_| parse_err(format!("invalid node id {b:?}")))?;
        raw.push((u, v));
    }
    if let Some(n) = declared {
        if n > 0
            && raw
                .iter()
                .all(|&(u, v)| (0..n as i64).contains(&u) && (0..n as i64).contains(&v))
        {
            let (graph, report) = Graph::from_edges(n, raw.iter().map(|&(u, v)| (u as usize, v as usize)))?;
            return attach(graph, report, path, feature_path, label_path);
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let ids: Vec<i64> = raw
        .iter()
        .flat_map(|&(u, v)| [u, v])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let dense = |x: i64| ids.binary_search(&x).expect("id collected above");
    let identity = ids.iter().enumerate().all(|(i, &x)| x == i as i64);
    let (mut graph, report) = Graph::from_edges(ids.len(), raw.iter().map(|&(u, v)| (dense(u), dense(v))))?;
    if !identity {
        graph.original_ids = Some(ids);
    }
    attach(graph, report, path, feature_path, label_path)
}

fn attach(
    mut graph: Graph,
    report: BuildReport,
    path: &Path,
    feature_path: Option<&Path>,
    label_path: Option<&Path>,
) -> Result<LoadedGraph> {
    if report.duplicates + report.self_loops > 0 {
        log::info!(
            "{}: dropped {} duplicate edge(s) and {} self-loop(s)",
            path.display(),
            report.duplicates,
            report.self_loops
        );
    }
    if let Some(fp) = feature_path {
        graph = graph.with_features(io::read_matrix(fp)?)?;
    }
    if let Some(lp) = label_path {
        graph = graph.with_labels(Labels::from_tensor(&io::read_matrix(lp)?)?)?;
    }
    Ok(LoadedGraph { graph, report })
}

pub fn read_split_file(path: &Path, node_count: usize) -> Result<Vec<SplitTag>> {
    let text = io::read_string(path)?;
    let mut tags = Vec::with_capacity(node_count);
    for (lineno, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        tags.push(SplitTag::parse(t).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("unknown split tag {t:?}"),
        })?);
    }
    if tags.len() != node_count {
        return Err(Error::Dimension(format!(
            "{}: {} split tags for {node_count} nodes",
            path.display(),
            tags.len()
        )));
    }
    Ok(tags)
}

pub fn write_split_file(path: &Path, split: &[SplitTag]) -> Result<()> {
    let mut s = String::with_capacity(split.len() * 6);
    for t in split {
        s.push_str(t.as_str());
        s.push('\n');
    }
    io::write_string(path, &s)
}

/// Planted-partition graph. Node `i`'s block becomes its single label.
pub fn generate_sbm(blocks: &[usize], p_in: f64, p_out: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(Error::Config(format!(
            "probabilities must lie in [0, 1], got p_in={p_in}, p_out={p_out}"
        )));
    }
    if p_in < p_out {
        return Err(Error::Config(format!(
            "p_in ({p_in}) must be at least p_out ({p_out})"
        )));
    }
    let block_of: Vec<usize> = blocks
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    let n = block_of.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block_of[u] == block_of[v] { p_in } else { p_out };
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let (g, _) = Graph::from_edges(n, edges)?;
    g.with_labels(Labels::one_hot(&block_of, blocks.len()))
}

/// Erdős–Rényi `G(n, p)`.
pub fn generate_gnp(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("edge probability {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Ok(Graph::from_edges(n, edges)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    /// Shuffle nodes and cut by `(train, valid, test)` fractions.
    RandomFractions {
        fractions: [f64; 3],
        seed: u64,
    },
    /// Label classes are partitioned; a node goes to the split of any test
    /// class it carries, else any valid class, else train.
    DisjointLabelClasses {
        train: Vec<usize>,
        valid: Vec<usize>,
        test: Vec<usize>,
    },
    Provided(Vec<SplitTag>),
}

/// Floor each fraction, then hand the remaining nodes one at a time to the
/// parts with the largest fractional remainders (earlier part wins ties).
fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

pub fn make_split(graph: Graph, spec: &SplitSpec) -> Result<Graph> {
    let n = graph.node_count();
    let tags = match spec {
        SplitSpec::RandomFractions { fractions, seed } => {
            let total: f64 = fractions.iter().sum();
            if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
                return Err(Error::Config(format!(
                    "split fractions {fractions:?} must be non-negative and sum to 1"
                )));
            }
            let counts = split_counts(n, *fractions);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let mut tags = vec![SplitTag::Train; n];
            for (pos, &u) in order.iter().enumerate() {
                tags[u] = if pos < counts[0] {
                    SplitTag::Train
                } else if pos < counts[0] + counts[1] {
                    SplitTag::Valid
                } else {
                    SplitTag::Test
                };
            }
            tags
        }
        SplitSpec::DisjointLabelClasses { train, valid, test } => {
            let labels = graph
                .labels()
                .ok_or_else(|| Error::Config("disjoint-label-classes split needs a labelled graph".into()))?;
            let l = labels.num_labels();
            let mut seen = BTreeSet::new();
            for &c in train.iter().chain(valid).chain(test) {
                if c >= l {
                    return Err(Error::Config(format!("class {c} out of range 0..{l}")));
                }
                if !seen.insert(c) {
                    return Err(Error::Config(format!("class {c} assigned to two splits")));
                }
            }
            if seen.len() != l {
                return Err(Error::Config(format!(
                    "class partition covers {} of {l} classes",
                    seen.len()
                )));
            }
            let has = |u: usize, set: &[usize]| set.iter().any(|&c| labels.get(u, c));
            (0..n)
                .map(|u| {
                    if has(u, test) {
                        SplitTag::Test
                    } else if has(u, valid) {
                        SplitTag::Valid
                    } else {
                        SplitTag::Train
                    }
                })
                .collect()
        }
        SplitSpec::Provided(tags) => tags.clone(),
    };
    graph.with_split(tags)
}
