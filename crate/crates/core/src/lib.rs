//! Retrieval-augmented generation benchmark toolkit: corpus preparation,
//! synthetic question generation, embedding indexes, threshold-gated
//! retrieval, generation clients, text-similarity metrics, held-out test
//! set construction and experiment reporting.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for common use.

pub mod config;
pub mod corpus;
pub mod embed;
pub mod experiment;
pub mod generate;
pub mod http;
pub mod index;
pub mod jsonl;
pub mod metrics;
pub mod par;
pub mod qagen;
pub mod retrieve;
pub mod scalar;
pub mod testgen;
pub mod tokenize;

pub use scalar::Scalar;

pub type Embedding = embed::EmbeddingVector<f64>;
pub type Index = index::IndexedDataset<f64>;
pub type Entry = index::IndexEntry<f64>;
pub type Hit = index::RetrievalHit<f64>;
pub type Context = retrieve::PackedContext<f64>;
pub type Answer = retrieve::RagAnswer<f64>;
pub type LocalEmbedder = embed::HashingEmbedder<f64>;

pub type Embedding32 = embed::EmbeddingVector<f32>;
pub type Index32 = index::IndexedDataset<f32>;
pub type Entry32 = index::IndexEntry<f32>;
pub type Hit32 = index::RetrievalHit<f32>;
pub type Context32 = retrieve::PackedContext<f32>;
pub type Answer32 = retrieve::RagAnswer<f32>;
pub type LocalEmbedder32 = embed::HashingEmbedder<f32>;
