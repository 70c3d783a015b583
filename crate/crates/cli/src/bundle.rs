//! Graph inputs: either a bundle directory or an edge-list file plus
//! optional side files.
//!
//! A bundle directory holds `graph.edges` and optionally `features.{txt,bin}`,
//! `labels.{txt,bin}`, `split.txt` and `context.{txt,bin}`. The directory name
//! is the graph id.

use std::path::{Path, PathBuf};

use gfm_core::descriptors::DescriptorConfig;
use gfm_core::graph::{load_edge_list, read_split_file};
use gfm_core::prompt::{hashed_context, load_precomputed};
use gfm_core::{Error, Exec, Graph, Result, Tensor2};

use crate::manifest::RunManifest;

pub const EDGES_FILE: &str = "graph.edges";

#[derive(Debug, Clone, Default)]
pub struct SideFiles {
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub context: Option<PathBuf>,
}

pub struct Bundle {
    pub id: String,
    pub graph: Graph,
    pub context: Tensor2,
}

fn first_existing(dir: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

fn resolve(path: &Path, side: &SideFiles) -> Result<(PathBuf, SideFiles, String)> {
    if path.is_dir() {
        let edges = path.join(EDGES_FILE);
        if !edges.is_file() {
            return Err(Error::io(
                &edges,
                std::io::Error::new(std::io::ErrorKind::NotFound, "bundle has no graph.edges"),
            ));
        }
        let found = SideFiles {
            features: side
                .features
                .clone()
                .or_else(|| first_existing(path, &["features.bin", "features.txt"])),
            labels: side
                .labels
                .clone()
                .or_else(|| first_existing(path, &["labels.bin", "labels.txt"])),
            split: side
                .split
                .clone()
                .or_else(|| first_existing(path, &["split.txt"])),
            context: side
                .context
                .clone()
                .or_else(|| first_existing(path, &["context.bin", "context.txt"])),
        };
        let id = path
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "graph".into());
        Ok((edges, found, id))
    } else {
        let id = path
            .file_stem()
            .map_or_else(|| "graph".into(), |n| n.to_string_lossy().into_owned());
        Ok((path.to_path_buf(), side.clone(), id))
    }
}

/// Loads the topology and side files; records every file read in `manifest`.
pub fn load_graph(
    path: &Path,
    side: &SideFiles,
    manifest: &mut RunManifest,
) -> Result<(Graph, SideFiles, String)> {
    let (edges, side, id) = resolve(path, side)?;
    manifest.input(&edges)?;
    for p in [&side.features, &side.labels].into_iter().flatten() {
        manifest.input(p)?;
    }
    let mut graph = load_edge_list(&edges, side.features.as_deref(), side.labels.as_deref())?.graph;
    if let Some(sp) = &side.split {
        manifest.input(sp)?;
        let tags = read_split_file(sp, graph.node_count())?;
        graph = graph.with_split(tags)?;
    }
    Ok((graph, side, id))
}

/// Graph plus context embeddings: loaded from the context file when one
/// exists, otherwise computed with the hashed prompt encoder.
pub fn load_bundle(
    path: &Path,
    side: &SideFiles,
    id_override: Option<&str>,
    seed: u64,
    exec: Exec,
    manifest: &mut RunManifest,
) -> Result<Bundle> {
    let (graph, side, id) = load_graph(path, side, manifest)?;
    let context = match &side.context {
        Some(c) => {
            manifest.input(c)?;
            load_precomputed(c, &graph)?
        }
        None => hashed_context(
            &graph,
            &DescriptorConfig {
                seed,
                exec,
                ..DescriptorConfig::default()
            },
        )?,
    };
    Ok(Bundle {
        id: id_override.map_or(id, str::to_string),
        graph,
        context,
    })
}
