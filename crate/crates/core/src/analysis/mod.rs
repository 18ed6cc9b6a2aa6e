//! Latent-space diagnostics: interpolation distance curves and PCA
//! projections with cluster separation scores.

mod interpolation;
mod pca;
mod stats;
pub mod svg;

pub use interpolation::{
    aggregate_curve, hamming_distance, interpolate, interpolation_curve, AggregateCurve, InterpolationCurve,
};
pub use pca::{pca_project, symmetric_eigen, ProjectedCloud};
pub use stats::{cluster_separation, silhouette, spearman};
