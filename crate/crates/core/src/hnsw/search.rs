use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{HnswGraph, NodeId};
use crate::cache::PrefetchCache;
use crate::error::{Error, Result};
use crate::store::VectorStore;
use crate::vector::Vector;

/// Keys and distances of a k-NN query, nearest first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub keys: Vec<String>,
    pub distances: Vec<f64>,
}

impl SearchResult {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.keys.iter().map(String::as_str).zip(self.distances.iter().copied())
    }
}

/// A node and its distance to whatever is being searched for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Scored {
    pub(crate) distance: f64,
    pub(crate) id: NodeId,
}

/// Heap entry ordered by `(distance, key)`.
#[derive(Clone, Copy)]
struct Ranked<'g> {
    distance: f64,
    key: &'g str,
    id: NodeId,
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.key.cmp(other.key))
    }
}

struct Visited(Vec<u64>);

impl Visited {
    fn new(n: usize) -> Self {
        Self(vec![0; n.div_ceil(64)])
    }

    /// Marks `id`; returns true if it was not marked before.
    fn insert(&mut self, id: NodeId) -> bool {
        let (word, bit) = (id as usize / 64, id % 64);
        let fresh = self.0[word] & (1 << bit) == 0;
        self.0[word] |= 1 << bit;
        fresh
    }
}

/// Vector access for one search or insert: graph + cache + store.
pub(crate) struct Reader<'a> {
    pub(crate) graph: &'a HnswGraph,
    pub(crate) store: &'a dyn VectorStore,
    pub(crate) cache: &'a PrefetchCache,
}

impl<'a> Reader<'a> {
    pub(crate) fn vector(&self, id: NodeId, layer: usize) -> Result<Arc<Vector>> {
        self.cache.fetch_node(id, layer, self.graph, self.store)
    }

    fn distance(&self, query: &[f64], id: NodeId, layer: usize) -> Result<f64> {
        let v = self.vector(id, layer)?;
        Ok(self.graph.config.metric.eval(query, v.as_slice()))
    }

    fn key(&self, id: NodeId) -> &'a str {
        &self.graph.node(id).key
    }

    pub(crate) fn compare(&self, a: &Scored, b: &Scored) -> Ordering {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| self.key(a.id).cmp(self.key(b.id)))
    }

    /// Best-first search of one layer. Returns at most `ef` nodes, ascending.
    pub(crate) fn search_layer(
        &self,
        query: &[f64],
        entry: &[NodeId],
        ef: usize,
        layer: usize,
    ) -> Result<Vec<Scored>> {
        let ef = ef.max(1);
        let mut visited = Visited::new(self.graph.nodes.len());
        let mut frontier: BinaryHeap<Reverse<Ranked<'a>>> = BinaryHeap::new();
        let mut results: BinaryHeap<Ranked<'a>> = BinaryHeap::new();

        for &id in entry {
            if !visited.insert(id) {
                continue;
            }
            let ranked = Ranked {
                distance: self.distance(query, id, layer)?,
                key: self.key(id),
                id,
            };
            frontier.push(Reverse(ranked));
            results.push(ranked);
            if results.len() > ef {
                results.pop();
            }
        }

        while let Some(Reverse(nearest)) = frontier.pop() {
            if let Some(worst) = results.peek() {
                if nearest > *worst {
                    break;
                }
            }
            for &n in self.graph.links(nearest.id, layer) {
                if !visited.insert(n) {
                    continue;
                }
                let candidate = Ranked {
                    distance: self.distance(query, n, layer)?,
                    key: self.key(n),
                    id: n,
                };
                let admit = results.len() < ef || results.peek().is_some_and(|w| candidate < *w);
                if admit {
                    frontier.push(Reverse(candidate));
                    results.push(candidate);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }

        Ok(results
            .into_sorted_vec()
            .into_iter()
            .map(|r| Scored {
                distance: r.distance,
                id: r.id,
            })
            .collect())
    }

    /// Diversity heuristic: walk candidates nearest-first and accept one only
    /// if it is strictly closer to the target than to every accepted
    /// candidate; then backfill with the nearest rejected ones up to `m`.
    pub(crate) fn select_neighbors(&self, candidates: &[Scored], m: usize, layer: usize) -> Result<Vec<Scored>> {
        if candidates.len() <= m {
            return Ok(candidates.to_vec());
        }
        let metric = self.graph.config.metric;
        let mut accepted: Vec<(Scored, Arc<Vector>)> = Vec::with_capacity(m);
        let mut rejected = Vec::new();
        for &candidate in candidates {
            if accepted.len() >= m {
                break;
            }
            let v = self.vector(candidate.id, layer)?;
            let diverse = accepted
                .iter()
                .all(|(_, a)| candidate.distance < metric.eval(v.as_slice(), a.as_slice()));
            if diverse {
                accepted.push((candidate, v));
            } else {
                rejected.push(candidate);
            }
        }
        let mut selected: Vec<Scored> = accepted.into_iter().map(|(s, _)| s).collect();
        let room = m - selected.len();
        selected.extend(rejected.into_iter().take(room));
        Ok(selected)
    }

    /// Greedy descent from the entry point down to `stop_layer + 1`.
    pub(crate) fn descend(&self, query: &[f64], stop_layer: usize) -> Result<Vec<NodeId>> {
        let entry = self.graph.entry_point.ok_or(Error::EmptyIndex)?;
        let top = self.graph.node(entry).level();
        let mut ep = vec![entry];
        for layer in (stop_layer + 1..=top).rev() {
            let nearest = self.search_layer(query, &ep, 1, layer)?;
            ep = vec![nearest[0].id];
        }
        Ok(ep)
    }
}

impl HnswGraph {
    pub(crate) fn reader<'a>(&'a self, store: &'a dyn VectorStore, cache: &'a PrefetchCache) -> Reader<'a> {
        Reader {
            graph: self,
            store,
            cache,
        }
    }

    fn check_query(&self, query: &Vector) -> Result<()> {
        if query.dimension() != self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                actual: query.dimension(),
            });
        }
        self.config.metric.validate(query)
    }

    fn to_keys(&self, scored: &[Scored]) -> Vec<(String, f64)> {
        scored
            .iter()
            .map(|s| (self.node(s.id).key.to_string(), s.distance))
            .collect()
    }

    /// Best-first search restricted to `layer`, starting from `entry`.
    /// Returns up to `ef` `(key, distance)` pairs, nearest first.
    pub fn search_layer(
        &self,
        query: &Vector,
        entry: &[&str],
        ef: usize,
        layer: usize,
        store: &dyn VectorStore,
        cache: &PrefetchCache,
    ) -> Result<Vec<(String, f64)>> {
        self.check_query(query)?;
        if ef == 0 {
            return Err(Error::Argument("ef must be positive".into()));
        }
        if self.is_empty() || layer as i64 > self.max_level() {
            return Err(Error::Argument(format!(
                "layer {layer} is above the graph's maximum level {}",
                self.max_level()
            )));
        }
        let ids = entry
            .iter()
            .map(|k| {
                let id = self
                    .id_of(k)
                    .ok_or_else(|| Error::GraphCorruption(format!("unknown entry key {k:?}")))?;
                if self.node(id).level() < layer {
                    return Err(Error::GraphCorruption(format!("entry key {k:?} is not on layer {layer}")));
                }
                Ok(id)
            })
            .collect::<Result<Vec<_>>>()?;
        let found = self.reader(store, cache).search_layer(query.as_slice(), &ids, ef, layer)?;
        Ok(self.to_keys(&found))
    }

    /// Applies the neighbor-selection heuristic to `candidates`, which must
    /// be sorted ascending by distance to `target`. Returns at most `m` keys.
    pub fn select_neighbors(
        &self,
        target: &Vector,
        candidates: &[&str],
        m: usize,
        layer: usize,
        store: &dyn VectorStore,
        cache: &PrefetchCache,
    ) -> Result<Vec<String>> {
        self.check_query(target)?;
        let reader = self.reader(store, cache);
        let scored = candidates
            .iter()
            .map(|k| {
                let id = self
                    .id_of(k)
                    .ok_or_else(|| Error::Argument(format!("unknown candidate key {k:?}")))?;
                Ok(Scored {
                    distance: reader.distance(target.as_slice(), id, layer)?,
                    id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let selected = reader.select_neighbors(&scored, m, layer)?;
        Ok(selected.iter().map(|s| self.node(s.id).key.to_string()).collect())
    }

    /// k nearest neighbors of `query`.
    ///
    /// The layer-0 beam is `max(ef, k)`, where `ef` defaults to `10k`
    /// capped at the node count.
    pub fn query(
        &self,
        query: &Vector,
        k: usize,
        ef: Option<usize>,
        store: &dyn VectorStore,
        cache: &PrefetchCache,
    ) -> Result<SearchResult> {
        if k == 0 {
            return Err(Error::Argument("k must be positive".into()));
        }
        if ef == Some(0) {
            return Err(Error::Argument("ef must be positive".into()));
        }
        self.check_query(query)?;
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let ef = effective_ef(k, ef, self.len());
        let reader = self.reader(store, cache);
        let q = query.as_slice();
        let ep = reader.descend(q, 0)?;
        let found = reader.search_layer(q, &ep, ef, 0)?;
        let mut result = SearchResult::default();
        for s in found.into_iter().take(k) {
            result.keys.push(self.node(s.id).key.to_string());
            result.distances.push(s.distance);
        }
        Ok(result)
    }
}

/// `max(ef.unwrap_or(min(10k, count)), k)`.
pub fn effective_ef(k: usize, ef: Option<usize>, count: usize) -> usize {
    ef.unwrap_or_else(|| k.saturating_mul(10).min(count)).max(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hnsw::HnswConfig;
    use crate::store::{MemoryStore, StoreRecord};
    use crate::vector::DistanceMetric;

    fn v(c: &[f64]) -> Vector {
        Vector::new(c.to_vec()).unwrap()
    }

    /// 1-D points, every node linked to every other on layer 0.
    fn complete_line(points: &[(&str, f64)]) -> (MemoryStore, HnswGraph) {
        let store = MemoryStore::new(1).unwrap();
        let vectors: Vec<Vector> = points.iter().map(|(_, x)| v(&[*x])).collect();
        let records: Vec<_> = points
            .iter()
            .zip(&vectors)
            .map(|((k, _), v)| StoreRecord::new(k, v))
            .collect();
        store.put_batch(&records).unwrap();
        let nodes = points
            .iter()
            .map(|(k, _)| {
                let others = points
                    .iter()
                    .filter(|(o, _)| o != k)
                    .map(|(o, _)| o.to_string())
                    .collect();
                (k.to_string(), vec![others])
            })
            .collect();
        let config = HnswConfig::new(DistanceMetric::EuclideanSquared)
            .with_m(2)
            .with_m_max0(8)
            .with_ef_construction(2);
        let graph = HnswGraph::from_parts(config, 1, 0, Some(points[0].0), nodes).unwrap();
        (store, graph)
    }

    #[test]
    fn search_layer_single_node() {
        let (store, graph) = complete_line(&[("only", 3.0)]);
        let cache = PrefetchCache::for_dimension(1);
        let found = graph.search_layer(&v(&[-7.0]), &["only"], 5, 0, &store, &cache).unwrap();
        assert_eq!(found, vec![("only".to_string(), 100.0)]);
    }

    #[test]
    fn search_layer_line_example() {
        let (store, graph) = complete_line(&[("p0", 0.0), ("p1", 1.0), ("p2", 2.0), ("p10", 10.0)]);
        let cache = PrefetchCache::for_dimension(1);
        let found = graph.search_layer(&v(&[1.4]), &["p0"], 2, 0, &store, &cache).unwrap();
        let keys: Vec<&str> = found.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, vec!["p1", "p2"]);
        // from a far entry point as well
        let found = graph.search_layer(&v(&[1.4]), &["p10"], 2, 0, &store, &cache).unwrap();
        assert_eq!(found[0].0, "p1");
        assert_eq!(found[1].0, "p2");
    }

    #[test]
    fn search_layer_rejects_unknown_entry_and_bad_layer() {
        let (store, graph) = complete_line(&[("a", 0.0), ("b", 1.0)]);
        let cache = PrefetchCache::for_dimension(1);
        let err = graph.search_layer(&v(&[0.0]), &["zz"], 1, 0, &store, &cache).unwrap_err();
        assert!(matches!(err, Error::GraphCorruption(_)));
        let err = graph.search_layer(&v(&[0.0]), &["a"], 1, 3, &store, &cache).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn ties_break_on_key() {
        let (store, graph) = complete_line(&[("m", 0.0), ("b", 1.0), ("a", -1.0), ("c", 1.0)]);
        let cache = PrefetchCache::for_dimension(1);
        let r = graph.query(&v(&[0.0]), 4, Some(4), &store, &cache).unwrap();
        assert_eq!(r.keys, vec!["m", "a", "b", "c"]);
        assert_eq!(r.distances, vec![0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn select_neighbors_examples() {
        let (store, graph) = complete_line(&[
            ("t", 0.0),
            ("x1", 1.0),
            ("x11", 1.1),
            ("x5", 5.0),
            ("xm5", -5.0),
        ]);
        let cache = PrefetchCache::for_dimension(1);
        let target = v(&[0.0]);
        let select = |cands: &[&str], m| graph.select_neighbors(&target, cands, m, 0, &store, &cache).unwrap();

        // fewer candidates than m: all of them
        assert_eq!(select(&["x1", "x11"], 3), vec!["x1", "x11"]);
        // m = 1: the nearest
        assert_eq!(select(&["x1", "x11", "x5"], 1), vec!["x1"]);
        // 1.1 is closer to 1 than to 0 and 5 is closer to 1 than to 0: both
        // rejected, backfill restores the nearest rejected one
        assert_eq!(select(&["x1", "x11", "x5"], 2), vec!["x1", "x11"]);
        // -5 lies on the other side of the target and displaces 1.1
        assert_eq!(select(&["x1", "x11", "xm5"], 2), vec!["x1", "xm5"]);
    }

    #[test]
    fn query_contract() {
        let (store, graph) = complete_line(&[("a", 0.0), ("b", 1.0), ("c", 3.0)]);
        let cache = PrefetchCache::for_dimension(1);
        assert!(matches!(
            graph.query(&v(&[0.0]), 0, None, &store, &cache),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            graph.query(&v(&[0.0, 1.0]), 1, None, &store, &cache),
            Err(Error::Dimension { .. })
        ));
        let r = graph.query(&v(&[2.9]), 10, None, &store, &cache).unwrap();
        assert_eq!(r.keys, vec!["c", "b", "a"]);

        let empty = HnswGraph::new(graph.config().clone(), 1).unwrap();
        assert!(matches!(
            empty.query(&v(&[0.0]), 1, None, &store, &cache),
            Err(Error::EmptyIndex)
        ));
    }

    #[test]
    fn effective_ef_rule() {
        assert_eq!(effective_ef(10, None, 1000), 100);
        assert_eq!(effective_ef(10, None, 30), 30);
        assert_eq!(effective_ef(10, None, 5), 10);
        assert_eq!(effective_ef(10, Some(4), 1000), 10);
        assert_eq!(effective_ef(10, Some(50), 1000), 50);
    }
}
