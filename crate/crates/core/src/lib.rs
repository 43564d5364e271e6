//! Illumination-guided residual enhancement of adverse-condition images,
//! trained adversarially at scene, object and texture scale.
//!
//! The generator predicts a bounded residual mask that is added to the
//! source image. Its encoder features are weighted by an attention pyramid
//! derived from per-pixel illumination. Training pairs patches of roughly
//! aligned source/reference images with a ranked window search.

pub mod ablation;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod hierarchy;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rawp;
pub mod rng;
pub mod siam;
pub mod synthetic;
pub mod trainer;

pub use dataset::{Condition, PairEntry, PairManifest, TrainingPair};
pub use error::{Edge, Error, Result};
pub use hierarchy::{HierarchySpec, PatchPair, PatchPairSet};
pub use image::{ImageBuffer, PatchRegion};
pub use losses::{LossReport, LossWeights};
pub use metrics::{ImageMetrics, MetricReport};
pub use model::{DiscriminatorConfig, Generator, GeneratorConfig, Level, Mask};
pub use rawp::{MatchResult, SearchSpec};
pub use rng::RandomState;
pub use siam::{AttentionMap, AttentionMode, AttentionPyramid};
pub use trainer::{Pairing, TrainConfig, TrainState};
