//! Training-free person re-identification.
//!
//! Images arrive with precomputed human-parsing masks. For every parsed
//! class the engine extracts CIELAB color descriptors (binarized channel
//! histograms plus a mean color) and two rotation-invariant LBP texture
//! histograms, one for the region contour and one for its interior. Pairs
//! of images are scored class by class with fixed, interpretable weights,
//! and galleries are ranked by the aggregate score.

pub mod color;
pub mod config;
pub mod eval;
pub mod features;
pub mod mask;
pub mod query;
pub mod scoring;
pub mod store;
pub mod synthetic;
pub mod texture;

pub use config::{EngineConfig, ExtractionConfig, ScoringConfig};
pub use features::{extract_record, ClassFeatures, FeatureRecord};
pub use mask::{load_person_image, ClassId, PersonImage};
pub use scoring::{pair_score, SimilarityReport};
