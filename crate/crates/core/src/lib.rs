//! Unsupervised cross-camera adaptation for re-identification embeddings.
//!
//! The pipeline works on precomputed feature vectors. Each iteration
//! clusters the target set with OPTICS, keeps clusters observed by at least
//! two cameras, mines cross-camera triplets from them and fine-tunes a linear
//! projection head with the triplet loss. Checkpoints are averaged with
//! reliability weights into one head, and several heads can be fused at
//! inference by averaging their distances.

// `!(x > 0.0)` is how validation rejects NaN alongside out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod cli;
pub mod curriculum;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod exec;
pub mod head;
pub mod io;
pub mod miner;
pub mod optics;
pub mod rerank;
pub mod seed;
pub mod synth;

pub use adaptation::{run_adaptation, Adapter, AdaptationOutput, IterationRecord, TrainConfig};
pub use curriculum::{reliability_series, select_clusters, select_clusters_with, SelectedClusters, SelectionPolicy};
pub use data::{cross_distances, pairwise_distances, DistanceMatrix, EmbeddingSet, Sample};
pub use ensemble::{ensemble_distance, self_ensemble, Checkpoint, ModelBank};
pub use error::{Error, Result};
pub use eval::{evaluate, QueryGallerySplit, RetrievalReport};
pub use exec::Exec;
pub use head::{triplet_loss, ProjectionHead, TripletBatch};
pub use miner::{mine_triplets, MinerConfig, Triplet};
pub use optics::{extract_clusters_xi, optics_order, ClusterAssignment, Label, OpticsConfig, ReachabilityPlot};
pub use rerank::{k_reciprocal_rerank, RerankConfig};
pub use synth::{generate, Preset, SynthConfig};
