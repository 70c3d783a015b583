//! Natural-language node profiles and their 384-dimensional context
//! embeddings.
//!
//! Field formatting:
//!
//! | fields                                                   | format                     |
//! |----------------------------------------------------------|----------------------------|
//! | deg, core, ego counts, community ids and sizes, N, E, q* | integer                    |
//! | cc, ego1D, ego2D, lp_dens, scoda_dens, trans             | `%.3f`                     |
//! | avgd, spec_gap                                           | `%.2f`                     |
//! | pr                                                       | two significant digits, plain decimal |

use std::fmt::Write as _;
use std::path::Path;

use crate::descriptors::{structural_profiles, DescriptorConfig, GraphStats, StructuralProfile};
use crate::graph::Graph;
use crate::io;
use crate::tensor::Tensor2;
use crate::{Error, Result};

pub const CONTEXT_DIM: usize = 384;
pub const DEFAULT_HASH_SEED: u64 = 42;

/// Field names and section words shared by every profile. They carry no
/// per-node information and are not embedded on their own.
const TEMPLATE_WORDS: [&str; 33] = [
    "Node",
    "profile",
    "local",
    "global",
    "graph",
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
    "N",
    "E",
    "avgd",
    "trans",
    "q25",
    "q50",
    "q75",
    "spec_gap",
    "lp",
    "scoda",
    "spec",
    "gap",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptString(pub String);

impl PromptString {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Unit-norm 384-dimensional vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding(Vec<f64>);

impl ContextEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn cosine(&self, other: &ContextEmbedding) -> f64 {
        crate::tensor::dot(&self.0, &other.0)
    }
}

fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
        _ => s,
    }
}

/// Two significant digits without exponent notation: `0.00084`, `0.50`, `1.0`.
pub fn two_significant(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return fixed(if v.is_finite() { 0.0 } else { v }, 1);
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (1 - exp).max(0) as usize;
    let s = fixed(v, decimals);
    let rounded: f64 = s.parse().unwrap_or(v);
    if decimals > 0 && rounded.abs() >= 10f64.powi(exp + 1) {
        fixed(v, decimals - 1)
    } else {
        s
    }
}

pub fn render_prompt(p: &StructuralProfile, g: &GraphStats) -> PromptString {
    let mut s = String::with_capacity(320);
    write!(
        s,
        "Node profile: local(deg={}, cc={}, core={}, ego1V={}, ego1E={}, ego1D={}, \
         ego2V={}, ego2E={}, ego2D={}, pr={}); ",
        p.degree,
        fixed(p.clustering, 3),
        p.core,
        p.ego1_v,
        p.ego1_e,
        fixed(p.ego1_d, 3),
        p.ego2_v,
        p.ego2_e,
        fixed(p.ego2_d, 3),
        two_significant(p.pagerank),
    )
    .unwrap();
    write!(
        s,
        "global(lp_comm={}, lp_size={}, lp_dens={}; scoda_comm={}, scoda_size={}, \
         scoda_dens={}); ",
        p.lp_comm,
        p.lp_size,
        fixed(p.lp_dens, 3),
        p.scoda_comm,
        p.scoda_size,
        fixed(p.scoda_dens, 3),
    )
    .unwrap();
    write!(
        s,
        "graph(N={}, E={}, avgd={}, trans={}, q25={}, q50={}, q75={}, spec_gap={}).",
        g.n,
        g.e,
        fixed(g.avgd, 2),
        fixed(g.trans, 3),
        g.q25,
        g.q50,
        g.q75,
        fixed(g.spec_gap, 2),
    )
    .unwrap();
    PromptString(s)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seeded FNV-1a with a splitmix finalizer; stable across platforms.
fn hash_feature(seed: u64, feature: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ splitmix64(seed);
    for b in feature.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h)
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Tokens are maximal runs of alphanumerics and underscores; a `.` between
/// two digits stays inside the token so decimals survive whole.
pub fn tokenize(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        let inside = is_word_char(c)
            || (c == '.'
                && start.is_some()
                && i > 0
                && bytes[i - 1].is_ascii_digit()
                && bytes.get(i + 1).is_some_and(u8::is_ascii_digit));
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(&text[s..i]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

/// `key=value` pairs where both sides are tokens joined by a single `=`.
pub fn key_value_pairs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut prev: Option<(&str, usize)> = None;
    for tok in tokenize(text) {
        let start = tok.as_ptr() as usize - text.as_ptr() as usize;
        if let Some((key, end)) = prev {
            if &text[end..start] == "=" {
                out.push(format!("{key}={tok}"));
            }
        }
        prev = Some((tok, start + tok.len()));
    }
    out
}

/// Signed feature hashing of the prompt's value tokens and `key=value`
/// pairs into 384 buckets, then L2 normalization. An empty feature set maps
/// to the first basis vector.
pub fn encode_hashed(prompt: &PromptString) -> ContextEmbedding {
    encode_hashed_seeded(prompt, DEFAULT_HASH_SEED)
}

pub fn encode_hashed_seeded(prompt: &PromptString, seed: u64) -> ContextEmbedding {
    let text = prompt.as_str();
    let mut v = vec![0.0; CONTEXT_DIM];
    let mut add = |feature: &str| {
        let h = hash_feature(seed, feature);
        let bucket = (h % CONTEXT_DIM as u64) as usize;
        let sign = if splitmix64(h ^ 0x2545_f491_4f6c_dd1d) >> 63 == 0 {
            1.0
        } else {
            -1.0
        };
        v[bucket] += sign;
    };
    for tok in tokenize(text) {
        if !TEMPLATE_WORDS.contains(&tok) {
            add(tok);
        }
    }
    for pair in key_value_pairs(text) {
        add(&pair);
    }
    ContextEmbedding(normalize_or_basis(v).0)
}

/// Returns the normalized vector and whether the zero-vector fallback fired.
fn normalize_or_basis(mut v: Vec<f64>) -> (Vec<f64>, bool) {
    let norm = crate::tensor::l2_norm(&v);
    if norm == 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
        (v, true)
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
        (v, false)
    }
}

/// Stacks one embedding per prompt into an `N x 384` matrix.
pub fn encode_all(prompts: &[PromptString], exec: crate::Exec) -> Tensor2 {
    encode_all_seeded(prompts, DEFAULT_HASH_SEED, exec)
}

pub fn encode_all_seeded(prompts: &[PromptString], seed: u64, exec: crate::Exec) -> Tensor2 {
    let rows = exec.map(prompts.len(), |i| encode_hashed_seeded(&prompts[i], seed).0);
    let mut data = Vec::with_capacity(prompts.len() * CONTEXT_DIM);
    for r in rows {
        data.extend(r);
    }
    Tensor2::from_vec(prompts.len(), CONTEXT_DIM, data).expect("rows are 384 wide")
}

/// Descriptors → prompts → hashed encodings for every node of `graph`.
pub fn hashed_context(graph: &Graph, config: &DescriptorConfig) -> Result<Tensor2> {
    let (profiles, stats) = structural_profiles(graph, config)?;
    Ok(encode_all(&render_all(&profiles, &stats), config.exec))
}

pub fn render_all(profiles: &[StructuralProfile], stats: &GraphStats) -> Vec<PromptString> {
    profiles.iter().map(|p| render_prompt(p, stats)).collect()
}

/// Validates and row-normalizes an externally produced `N x 384` matrix.
/// Zero rows become the first basis vector with a warning.
pub fn normalize_precomputed(m: Tensor2, node_count: usize) -> Result<Tensor2> {
    if m.cols() != CONTEXT_DIM {
        return Err(Error::Format(format!(
            "context embeddings must have {CONTEXT_DIM} columns, found {}",
            m.cols()
        )));
    }
    if m.rows() != node_count {
        return Err(Error::Dimension(format!(
            "{} context embeddings for {node_count} nodes",
            m.rows()
        )));
    }
    let mut out = m;
    for i in 0..out.rows() {
        let (row, zero) = normalize_or_basis(out.row(i).to_vec());
        if zero {
            log::warn!("context embedding row {i} is zero; using basis vector e0");
        }
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

pub fn load_precomputed(path: &Path, graph: &Graph) -> Result<Tensor2> {
    normalize_precomputed(io::read_matrix(path)?, graph.node_count())
}

pub fn write_prompts(path: &Path, prompts: &[PromptString]) -> Result<()> {
    let mut s = String::new();
    for p in prompts {
        s.push_str(p.as_str());
        s.push('\n');
    }
    io::write_string(path, &s)
}

pub fn read_prompts(path: &Path) -> Result<Vec<PromptString>> {
    Ok(io::read_string(path)?
        .lines()
        .map(|l| PromptString(l.to_string()))
        .collect())
}
