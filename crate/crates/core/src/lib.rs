//! Audio fingerprinting with a siamese MLP: featurization, corpus handling,
//! pair sampling, training, embedding search and retrieval metrics.

pub mod audio;
mod binio;
pub mod corpus;
pub mod error;
pub mod index;
pub mod metrics;
pub mod pairs;
pub mod siamese;

pub use audio::{featurize_clip, FeatConfig, FeatureCache, FeatureSource, LogSpecFeature, PcmClip, StftConfig};
pub use corpus::{ClipRecord, Manifest, Split, SplitRatios};
pub use error::{Error, Result};
pub use index::{build_index, EmbeddingIndex, Measure, Ranking};
pub use metrics::{evaluate_all, EvalReport, RelevanceList};
pub use pairs::{make_pairs, PairExample, PairScheme, PairingConfig};
pub use siamese::{train, Embedding, LossConfig, MlpParams, Normalizer, SiameseModel, TrainConfig};
