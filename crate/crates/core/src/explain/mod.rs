//! Attribution and segment discovery for the hardest rows.

pub mod kmeans;
pub mod pca;
pub mod segment;
pub mod shap;

pub use kmeans::{kmeans, KMeans};
pub use pca::{fit_pca, pca_reduce, Pca};
pub use segment::{
    build_segments, hard_subset, segment_filter, Rule, Segment, SegmentConfig, SegmentInput,
    SegmentReport, SegmentSet,
};
pub use shap::{tree_shap, tree_shap_batch, Attribution};
