//! Linear retrieval adapters over frozen, precomputed embeddings.
//!
//! A query-embedder space is first aligned onto a document-embedder space
//! using the same documents embedded by both models, then fine-tuned with a
//! contrastive loss on a small labeled set. Retrieval is exhaustive cosine
//! search; evaluation reports nDCG@10, Recall@100 and MAP@100 with
//! task/group macro averages.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are what the CLI and the tests use.

pub mod adapter;
pub mod error;
pub mod keyed;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod mining;
pub mod optim;
pub mod pipeline;
pub mod retrieval;
pub mod scalar;
pub mod split;
pub mod store;
pub mod synth;

pub use adapter::{
    apply_adapter, cosine_sim, init_adapter, l2_normalize, load_adapter, load_adapter_meta, save_adapter, Adapter,
    AdapterMeta, InitScheme, Normalized,
};
pub use error::{Error, Result};
pub use loss::{
    alignment_loss, infonce_loss, triplet_loss, AlignmentBatch, ContrastiveBatch, ContrastiveLoss, LossValue,
};
pub use matrix::Matrix;
pub use metrics::{aggregate, map_at_k, ndcg_at_k, recall_at_k, render_table, Metric, MetricsReport, QueryMetrics};
pub use mining::{mine_naive_topk, mine_random, mine_topk_percpos, MiningParams, NegativeSet, Strategy};
pub use optim::{adamw_step, lr_at, train_loop, AdamWState, ContrastiveObjective, Objective, TrainConfig, TrainReport};
pub use pipeline::{run_adaptation_stage, run_alignment_stage, run_pipeline, Mode, PipelineConfig, PipelineData};
pub use retrieval::retrieve_topk;
pub use scalar::Scalar;
pub use split::{sample_alignment_docs, split_dataset, Split, SplitSpec};
pub use store::{EmbeddingFormat, EmbeddingSet, RelevanceJudgments, RetrievalRun, TaskTag};
pub use synth::{make_synthetic, SyntheticData, SyntheticSpec};

/// Norm floor below which vectors count as degenerate.
pub const NORM_EPS: f64 = 1e-12;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Adapter64 = Adapter<f64>;
pub type Adapter32 = Adapter<f32>;
pub type EmbeddingSet64 = EmbeddingSet<f64>;
pub type EmbeddingSet32 = EmbeddingSet<f32>;
pub type LossValue64 = LossValue<f64>;
pub type AlignmentBatch64 = AlignmentBatch<f64>;
pub type ContrastiveBatch64 = ContrastiveBatch<f64>;
pub type SyntheticData64 = SyntheticData<f64>;
