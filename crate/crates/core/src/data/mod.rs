//! Dataset types, file formats, pooling, splitting and sampling.

pub mod distribution;
pub mod formats;
pub mod mlsp;
pub mod sampler;
pub mod splits;
pub mod synthetic;

pub use distribution::{BucketScale, ScoreDistribution};
pub use formats::{
    load_attributes, load_embeddings, load_scores, load_split, store_attributes, store_embeddings, store_scores,
    store_split,
};
pub use mlsp::{mlsp_pool, ActivationMap, ActivationSet};
pub use sampler::{BalancedBatches, Task, TaskSample};
pub use splits::{make_splits, SplitSizes, SplitSpec};
pub use synthetic::{gen_synthetic, SyntheticConfig, SyntheticData};

/// Pooled backbone feature for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector {
    pub id: String,
    pub values: Vec<f64>,
}

/// Style class and/or composition multi-hot for one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeLabels {
    pub id: String,
    pub style: Option<usize>,
    pub composition: Option<Vec<bool>>,
}
