use std::collections::HashSet;
use std::ops::ControlFlow;
use std::sync::Arc;

use serde::Serialize;

use super::search::{Reader, Scored};
use super::{HnswGraph, Node, NodeId};
use crate::cache::PrefetchCache;
use crate::error::{Error, Result};
use crate::store::{StoreRecord, VectorStore};
use crate::vector::Vector;

/// Reported after every insertion of a bulk build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BuildProgress {
    pub inserted: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BuildOutcome {
    /// Records linked into the graph.
    pub inserted: usize,
    /// True if the progress callback stopped the build early. The records
    /// that were not linked have been removed from the store again.
    pub cancelled: bool,
}

/// Link changes for one insertion, computed before anything is mutated.
struct LinkPlan {
    level: usize,
    /// The new node's neighbors per layer, `0..=min(level, max_level)`.
    own: Vec<Vec<NodeId>>,
    /// `(neighbor, layer, new list)` for every back-link.
    updates: Vec<(NodeId, usize, Vec<NodeId>)>,
}

impl HnswGraph {
    /// Inserts one element: writes it to the store, then links it.
    pub fn insert(
        &mut self,
        key: &str,
        vector: &Vector,
        store: &dyn VectorStore,
        cache: &PrefetchCache,
    ) -> Result<()> {
        self.bulk_insert(&[StoreRecord::new(key, vector)], store, cache)
    }

    /// Writes all records to the store in one batch, then links them in
    /// order. The resulting graph is the same as inserting them one by one.
    pub fn bulk_insert(
        &mut self,
        records: &[StoreRecord<'_>],
        store: &dyn VectorStore,
        cache: &PrefetchCache,
    ) -> Result<()> {
        self.bulk_insert_with(records, store, cache, |_| ControlFlow::Continue(()))
            .map(|_| ())
    }

    /// [`HnswGraph::bulk_insert`] with a progress callback that runs after
    /// every insertion and may stop the build.
    ///
    /// Records are validated before the store write, so a dimension,
    /// degenerate-vector or duplicate-key error leaves both graph and store
    /// untouched. If linking fails part way, the records already linked
    /// stay and the rest are removed from the store.
    pub fn bulk_insert_with<F>(
        &mut self,
        records: &[StoreRecord<'_>],
        store: &dyn VectorStore,
        cache: &PrefetchCache,
        mut on_progress: F,
    ) -> Result<BuildOutcome>
    where
        F: FnMut(BuildProgress) -> ControlFlow<()>,
    {
        if records.is_empty() {
            return Ok(BuildOutcome {
                inserted: 0,
                cancelled: false,
            });
        }
        self.validate_batch(records, store)?;
        store.put_batch(records)?;

        let total = records.len();
        for (i, record) in records.iter().enumerate() {
            let linked = record
                .vector
                .to_stored()
                .and_then(|stored| self.link(record.key, Arc::new(stored), store, cache));
            if let Err(err) = linked {
                discard(&records[i..], store);
                return Err(err);
            }
            let progress = BuildProgress { inserted: i + 1, total };
            if on_progress(progress).is_break() && i + 1 < total {
                discard(&records[i + 1..], store);
                return Ok(BuildOutcome {
                    inserted: i + 1,
                    cancelled: true,
                });
            }
        }
        Ok(BuildOutcome {
            inserted: total,
            cancelled: false,
        })
    }

    fn validate_batch(&self, records: &[StoreRecord<'_>], store: &dyn VectorStore) -> Result<()> {
        if self.nodes.len() + records.len() > NodeId::MAX as usize {
            return Err(Error::Argument("index is full".into()));
        }
        if store.dimension() != self.dimension {
            return Err(Error::StoreSchema(format!(
                "store dimension {} does not match index dimension {}",
                store.dimension(),
                self.dimension
            )));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in records {
            if r.key.is_empty() {
                return Err(Error::Argument("keys must be non-empty".into()));
            }
            if self.contains(r.key) || !seen.insert(r.key) {
                return Err(Error::DuplicateKey(r.key.to_owned()));
            }
            if r.vector.dimension() != self.dimension {
                return Err(Error::Dimension {
                    expected: self.dimension,
                    actual: r.vector.dimension(),
                });
            }
            self.config.metric.validate(r.vector)?;
        }
        Ok(())
    }

    /// Links a vector that is already in the store. On error the graph is
    /// left exactly as it was.
    fn link(&mut self, key: &str, vector: Arc<Vector>, store: &dyn VectorStore, cache: &PrefetchCache) -> Result<()> {
        let saved_rng = self.rng.clone();
        let level = self.rng.next_level(self.config.ml);
        let key: Arc<str> = Arc::from(key);
        cache.admit(key.clone(), vector.clone());

        let id = self.nodes.len() as NodeId;
        self.nodes.push(Node {
            key: key.clone(),
            links: vec![Vec::new(); level + 1],
        });
        self.ids.insert(key.clone(), id);

        let Some(entry) = self.entry_point else {
            self.entry_point = Some(id);
            return Ok(());
        };

        match self.plan(id, level, entry, vector.as_slice(), store, cache) {
            Ok(plan) => {
                self.apply(id, plan);
                Ok(())
            }
            Err(err) => {
                self.nodes.pop();
                self.ids.remove(&key);
                self.rng = saved_rng;
                Err(err)
            }
        }
    }

    fn plan(
        &self,
        id: NodeId,
        level: usize,
        entry: NodeId,
        q: &[f64],
        store: &dyn VectorStore,
        cache: &PrefetchCache,
    ) -> Result<LinkPlan> {
        let reader = self.reader(store, cache);
        let top = self.node(entry).level();
        let mut ep = vec![entry];
        for layer in (level + 1..=top).rev() {
            ep = vec![reader.search_layer(q, &ep, 1, layer)?[0].id];
        }

        let mut own = vec![Vec::new(); level.min(top) + 1];
        let mut updates = Vec::new();
        for layer in (0..=level.min(top)).rev() {
            let found = reader.search_layer(q, &ep, self.config.ef_construction, layer)?;
            let selected = reader.select_neighbors(&found, self.config.m, layer)?;
            for n in &selected {
                updates.push((n.id, layer, self.back_link(&reader, n.id, id, layer)?));
            }
            own[layer] = selected.iter().map(|s| s.id).collect();
            ep = found.iter().map(|s| s.id).collect();
        }
        Ok(LinkPlan { level, own, updates })
    }

    /// `neighbor`'s layer list after adding `new`, pruned to the layer cap.
    fn back_link(&self, reader: &Reader<'_>, neighbor: NodeId, new: NodeId, layer: usize) -> Result<Vec<NodeId>> {
        let mut links = self.links(neighbor, layer).to_vec();
        links.push(new);
        let cap = self.config.max_links(layer);
        if links.len() <= cap {
            return Ok(links);
        }
        let base = reader.vector(neighbor, layer)?;
        let metric = self.config.metric;
        let mut scored = links
            .iter()
            .map(|&n| {
                let v = reader.vector(n, layer)?;
                Ok(Scored {
                    distance: metric.eval(base.as_slice(), v.as_slice()),
                    id: n,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| reader.compare(a, b));
        let kept = reader.select_neighbors(&scored, cap, layer)?;
        Ok(kept.into_iter().map(|s| s.id).collect())
    }

    fn apply(&mut self, id: NodeId, plan: LinkPlan) {
        for (layer, links) in plan.own.into_iter().enumerate() {
            self.nodes[id as usize].links[layer] = links;
        }
        for (neighbor, layer, links) in plan.updates {
            self.nodes[neighbor as usize].links[layer] = links;
        }
        if plan.level as i64 > self.max_level() {
            self.entry_point = Some(id);
        }
    }
}

/// Best-effort removal of records that were written but never linked.
fn discard(records: &[StoreRecord<'_>], store: &dyn VectorStore) {
    let keys: Vec<&str> = records.iter().map(|r| r.key).collect();
    if let Err(err) = store.remove_batch(&keys) {
        tracing::warn!(%err, count = keys.len(), "could not remove unlinked records from the store");
    }
}
