//! Embedded approximate nearest neighbor search.
//!
//! An [`HnswGraph`] keeps keys and adjacency lists in RAM while the vectors
//! themselves live in a [`VectorStore`]; reads during search and insertion
//! go through a [`PrefetchCache`] that loads a node's layer neighbors along
//! with the node itself.

pub mod cache;
pub mod error;
pub mod exact;
pub mod hnsw;
pub mod index;
pub mod snapshot;
pub mod store;
pub mod vector;

pub use cache::{default_p, CacheConfig, CacheStats, PrefetchCache};
pub use error::{Error, Result};
pub use hnsw::{BuildOutcome, BuildProgress, HnswConfig, HnswGraph, HnswParams, SearchResult};
pub use index::{ConsistencyReport, Index};
pub use store::{BatchRead, DiskStore, MemoryStore, StoreRecord, StoreStats, VectorStore};
pub use vector::{distance, DistanceMetric, Vector};
