//! Personalized PageRank positives.

use std::path::{Path, PathBuf};

use crate::exec::Exec;
use crate::graph::Graph;
use crate::{Error, Result};

/// Scores of the walk restarted at `anchor` after exactly `iterations`
/// steps from the anchor's indicator. Mass reaching a dangling node returns
/// to the anchor, so the vector sums to one throughout.
pub fn ppr_scores(graph: &Graph, anchor: usize, restart: f64, iterations: usize) -> Vec<f64> {
    let n = graph.node_count();
    let mut r = vec![0.0; n];
    r[anchor] = 1.0;
    let mut next = vec![0.0; n];
    for _ in 0..iterations {
        next.iter_mut().for_each(|x| *x = 0.0);
        let mut dangling = 0.0;
        for u in 0..n {
            if r[u] == 0.0 {
                continue;
            }
            let nbrs = graph.neighbors(u);
            if nbrs.is_empty() {
                dangling += r[u];
                continue;
            }
            let share = (1.0 - restart) * r[u] / nbrs.len() as f64;
            for &v in nbrs {
                next[v] += share;
            }
        }
        next[anchor] += restart + (1.0 - restart) * dangling;
        std::mem::swap(&mut r, &mut next);
    }
    r
}

/// Highest-scoring nodes other than the anchor, by score then node id.
pub fn ppr_topk(
    graph: &Graph,
    anchor: usize,
    restart: f64,
    iterations: usize,
    k: usize,
) -> Vec<(usize, f64)> {
    let scores = ppr_scores(graph, anchor, restart, iterations);
    let mut ranked: Vec<(usize, f64)> = scores
        .into_iter()
        .enumerate()
        .filter(|&(v, _)| v != anchor)
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PprParams {
    pub restart: f64,
    pub iterations: usize,
    pub k: usize,
}

impl Default for PprParams {
    fn default() -> Self {
        PprParams {
            restart: 0.15,
            iterations: 100,
            k: 96,
        }
    }
}

/// Top-k PPR lists of every anchor in a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PprIndex {
    pub params: PprParams,
    lists: Vec<Vec<(usize, f64)>>,
}

const PPR_MAGIC: &[u8; 8] = b"GFMPPR01";

impl PprIndex {
    pub fn build(graph: &Graph, params: PprParams, exec: Exec) -> Result<Self> {
        if graph.node_count() < 2 {
            return Err(Error::Config("PPR positives need at least two nodes".into()));
        }
        let lists = exec.map(graph.node_count(), |a| {
            ppr_topk(graph, a, params.restart, params.iterations, params.k)
        });
        Ok(PprIndex { params, lists })
    }

    pub fn positives(&self, anchor: usize) -> &[(usize, f64)] {
        &self.lists[anchor]
    }

    pub fn node_count(&self) -> usize {
        self.lists.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PPR_MAGIC);
        out.extend_from_slice(&self.params.restart.to_le_bytes());
        out.extend_from_slice(&(self.params.iterations as u64).to_le_bytes());
        out.extend_from_slice(&(self.params.k as u64).to_le_bytes());
        out.extend_from_slice(&(self.lists.len() as u64).to_le_bytes());
        for list in &self.lists {
            out.extend_from_slice(&(list.len() as u64).to_le_bytes());
            for &(v, s) in list {
                out.extend_from_slice(&(v as u64).to_le_bytes());
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Format("malformed PPR cache".into());
        if !bytes.starts_with(PPR_MAGIC) {
            return Err(bad());
        }
        let mut pos = 8;
        let mut word = || -> Result<[u8; 8]> {
            let w = bytes.get(pos..pos + 8).ok_or_else(bad)?;
            pos += 8;
            Ok(w.try_into().unwrap())
        };
        let restart = f64::from_le_bytes(word()?);
        let iterations = u64::from_le_bytes(word()?) as usize;
        let k = u64::from_le_bytes(word()?) as usize;
        let n = u64::from_le_bytes(word()?) as usize;
        let mut lists = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = u64::from_le_bytes(word()?) as usize;
            let mut list = Vec::with_capacity(len.min(1 << 16));
            for _ in 0..len {
                let v = u64::from_le_bytes(word()?) as usize;
                let s = f64::from_le_bytes(word()?);
                list.push((v, s));
            }
            lists.push(list);
        }
        if pos != bytes.len() {
            return Err(bad());
        }
        Ok(PprIndex {
            params: PprParams {
                restart,
                iterations,
                k,
            },
            lists,
        })
    }

    /// Cache file name keyed by topology hash and walk parameters.
    pub fn cache_path(dir: &Path, graph: &Graph, params: PprParams) -> PathBuf {
        let h = graph.topology_hash();
        dir.join(format!(
            "ppr-{}-r{}-i{}-k{}.bin",
            &h[..16],
            params.restart,
            params.iterations,
            params.k
        ))
    }

    /// Reads the cached index when present, otherwise builds and writes it.
    /// Cache files are write-once.
    pub fn load_or_build(
        graph: &Graph,
        params: PprParams,
        cache_dir: Option<&Path>,
        exec: Exec,
    ) -> Result<Self> {
        let Some(dir) = cache_dir else {
            return PprIndex::build(graph, params, exec);
        };
        let path = PprIndex::cache_path(dir, graph, params);
        if let Ok(bytes) = std::fs::read(&path) {
            let idx = PprIndex::decode(&bytes)?;
            if idx.node_count() == graph.node_count() && idx.params == params {
                return Ok(idx);
            }
        }
        let idx = PprIndex::build(graph, params, exec)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(&path, idx.encode()).map_err(|e| Error::io(&path, e))?;
        Ok(idx)
    }
}
