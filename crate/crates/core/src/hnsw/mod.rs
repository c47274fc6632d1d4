//! Hierarchical navigable small world graph.
//!
//! The graph holds only keys and adjacency lists. Every vector read during
//! insertion or search goes through a [`PrefetchCache`] in front of a
//! [`VectorStore`], so the resident footprint is the topology plus whatever
//! the cache currently holds.
//!
//! Nodes are addressed internally by dense [`NodeId`]s; everything public is
//! keyed by string. Whenever two candidates are at the same distance the
//! lexicographically smaller key wins, in the search frontier, in result
//! sets and while pruning, so builds and queries are fully deterministic.
//!
//! [`PrefetchCache`]: crate::cache::PrefetchCache
//! [`VectorStore`]: crate::store::VectorStore

mod config;
mod insert;
mod search;

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{HnswConfig, HnswParams, DEFAULT_EF_CONSTRUCTION, DEFAULT_M, DEFAULT_SEED};
pub use insert::{BuildOutcome, BuildProgress};
pub use search::{effective_ef, SearchResult};

use crate::error::{Error, Result};

pub(crate) type NodeId = u32;

/// Levels are clamped here so a pathological `mL` cannot allocate
/// unbounded layer vectors.
pub const MAX_LEVEL: usize = 64;

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) key: Arc<str>,
    /// `links[layer]` for `layer` in `0..=level`.
    pub(crate) links: Vec<Vec<NodeId>>,
}

impl Node {
    pub(crate) fn level(&self) -> usize {
        self.links.len() - 1
    }
}

/// Seeded level generator whose position can be saved and restored.
#[derive(Debug, Clone)]
pub(crate) struct LevelRng {
    rng: ChaCha8Rng,
}

impl LevelRng {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn resume(seed: u64, words: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(u128::from(words));
        Self { rng }
    }

    /// Position in 32-bit words since seeding.
    pub(crate) fn cursor(&self) -> u64 {
        self.rng.get_word_pos() as u64
    }

    /// Uniform draw from `(0, 1]`.
    fn unit(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }

    pub(crate) fn next_level(&mut self, ml: f64) -> usize {
        level_for(self.unit(), ml)
    }
}

/// `floor(-ln(u) * ml)`, clamped to [`MAX_LEVEL`].
pub fn level_for(u: f64, ml: f64) -> usize {
    debug_assert!(u > 0.0 && u <= 1.0);
    let level = (-u.ln() * ml).floor();
    if level >= MAX_LEVEL as f64 {
        MAX_LEVEL
    } else {
        level as usize
    }
}

/// The RAM-resident part of an index: keys, levels and adjacency lists.
#[derive(Debug, Clone)]
pub struct HnswGraph {
    config: HnswConfig,
    dimension: usize,
    nodes: Vec<Node>,
    ids: HashMap<Arc<str>, NodeId>,
    entry_point: Option<NodeId>,
    rng: LevelRng,
}

/// Read-only view of one node.
#[derive(Debug, Clone, Copy)]
pub struct NodeView<'g> {
    graph: &'g HnswGraph,
    id: NodeId,
}

impl<'g> NodeView<'g> {
    pub fn key(&self) -> &'g str {
        &self.graph.node(self.id).key
    }

    pub fn level(&self) -> usize {
        self.graph.node(self.id).level()
    }

    /// Neighbor keys on `layer`, in stored order. Empty above the node's level.
    pub fn neighbors(&self, layer: usize) -> impl ExactSizeIterator<Item = &'g str> + 'g {
        let graph = self.graph;
        graph
            .links(self.id, layer)
            .iter()
            .map(move |&n| &*graph.node(n).key)
    }
}

impl HnswGraph {
    pub fn new(config: HnswConfig, dimension: usize) -> Result<Self> {
        config.validate()?;
        if dimension == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        let rng = LevelRng::new(config.seed);
        Ok(Self {
            config,
            dimension,
            nodes: Vec::new(),
            ids: HashMap::new(),
            entry_point: None,
            rng,
        })
    }

    pub fn config(&self) -> &HnswConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.ids.contains_key(key)
    }

    pub fn entry_point(&self) -> Option<&str> {
        self.entry_point.map(|id| &*self.node(id).key)
    }

    /// Level of the entry point, or -1 for an empty graph.
    pub fn max_level(&self) -> i64 {
        self.entry_point.map_or(-1, |id| self.node(id).level() as i64)
    }

    pub fn node_view(&self, key: &str) -> Option<NodeView<'_>> {
        self.ids.get(key).map(|&id| NodeView { graph: self, id })
    }

    /// Nodes in insertion order.
    pub fn nodes(&self) -> impl ExactSizeIterator<Item = NodeView<'_>> {
        (0..self.nodes.len() as NodeId).map(move |id| NodeView { graph: self, id })
    }

    pub fn keys(&self) -> impl ExactSizeIterator<Item = &str> {
        self.nodes.iter().map(|n| &*n.key)
    }

    /// Number of nodes whose top level is exactly `l`, for `l` in `0..=max_level`.
    pub fn level_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; (self.max_level() + 1) as usize];
        for node in &self.nodes {
            hist[node.level()] += 1;
        }
        hist
    }

    /// Position of the level RNG, for snapshots.
    pub fn rng_cursor(&self) -> u64 {
        self.rng.cursor()
    }

    pub(crate) fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub(crate) fn id_of(&self, key: &str) -> Option<NodeId> {
        self.ids.get(key).copied()
    }

    pub(crate) fn links(&self, id: NodeId, layer: usize) -> &[NodeId] {
        self.node(id).links.get(layer).map_or(&[], Vec::as_slice)
    }

    /// Rebuilds a graph from its serialized parts. Neighbor lists refer to
    /// keys; the result is checked with [`HnswGraph::check_invariants`].
    pub fn from_parts(
        config: HnswConfig,
        dimension: usize,
        rng_cursor: u64,
        entry_point: Option<&str>,
        nodes: Vec<(String, Vec<Vec<String>>)>,
    ) -> Result<Self> {
        let mut graph = Self::new(config, dimension)?;
        graph.rng = LevelRng::resume(graph.config.seed, rng_cursor);
        for (key, layers) in &nodes {
            if layers.is_empty() {
                return Err(Error::GraphCorruption(format!("node {key:?} has no layers")));
            }
            if layers.len() > MAX_LEVEL + 1 {
                return Err(Error::GraphCorruption(format!("node {key:?} exceeds the maximum level")));
            }
            let key: Arc<str> = Arc::from(key.as_str());
            let id = graph.nodes.len() as NodeId;
            if graph.ids.insert(key.clone(), id).is_some() {
                return Err(Error::GraphCorruption(format!("duplicate node {key:?}")));
            }
            graph.nodes.push(Node {
                key,
                links: vec![Vec::new(); layers.len()],
            });
        }
        for (id, (key, layers)) in nodes.iter().enumerate() {
            for (layer, neighbors) in layers.iter().enumerate() {
                let resolved = neighbors
                    .iter()
                    .map(|n| {
                        graph.id_of(n).ok_or_else(|| {
                            Error::GraphCorruption(format!(
                                "node {key:?} links to unknown key {n:?} on layer {layer}"
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                graph.nodes[id].links[layer] = resolved;
            }
        }
        graph.entry_point = match entry_point {
            Some(key) => Some(
                graph
                    .id_of(key)
                    .ok_or_else(|| Error::GraphCorruption(format!("entry point {key:?} is not a node")))?,
            ),
            None => None,
        };
        graph.check_invariants()?;
        Ok(graph)
    }

    /// Full scan of the structural invariants: degree caps, hierarchy,
    /// no self-links or duplicate links, and entry point consistency.
    pub fn check_invariants(&self) -> Result<()> {
        let corrupt = |msg: String| Err(Error::GraphCorruption(msg));
        match self.entry_point {
            None if !self.nodes.is_empty() => return corrupt("non-empty graph has no entry point".into()),
            Some(ep) => {
                let top = self.nodes.iter().map(Node::level).max().unwrap_or(0);
                if self.node(ep).level() != top {
                    return corrupt(format!(
                        "entry point {:?} has level {} but the maximum level is {top}",
                        self.node(ep).key,
                        self.node(ep).level()
                    ));
                }
            }
            None => {}
        }
        let mut seen = Vec::new();
        for node in &self.nodes {
            for (layer, links) in node.links.iter().enumerate() {
                let cap = self.config.max_links(layer);
                if links.len() > cap {
                    return corrupt(format!(
                        "node {:?} has {} links on layer {layer}, cap is {cap}",
                        node.key,
                        links.len()
                    ));
                }
                seen.clear();
                for &n in links {
                    let Some(target) = self.nodes.get(n as usize) else {
                        return corrupt(format!("node {:?} links to a missing node", node.key));
                    };
                    if Arc::ptr_eq(&target.key, &node.key) {
                        return corrupt(format!("node {:?} links to itself on layer {layer}", node.key));
                    }
                    if target.level() < layer {
                        return corrupt(format!(
                            "node {:?} links to {:?} on layer {layer}, above its level {}",
                            node.key,
                            target.key,
                            target.level()
                        ));
                    }
                    if seen.contains(&n) {
                        return corrupt(format!(
                            "node {:?} links to {:?} twice on layer {layer}",
                            node.key, target.key
                        ));
                    }
                    seen.push(n);
                }
            }
        }
        Ok(())
    }
}
