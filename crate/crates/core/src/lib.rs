//! Compositional-data analytics for spatial transcriptomics.
//!
//! Per-spot cell-type proportions are treated as points of the simplex and
//! analyzed in Aitchison geometry: CLR transform, PCA for a 2D embedding and
//! a PC1 ordering, and k-means for clustering. The [`session`] module holds
//! the selection model shared by the linked views.

pub mod cluster;
pub mod composition;
pub mod dataset;
pub mod embedding;
mod linalg;
pub mod session;

pub use cluster::{kmeans, kmeans_with, Clustering, KMeansConfig};
pub use composition::{
    aitchison_distance, closure, clr, clr_inv, perturb, power, replace_zeros, ClrVector,
    Composition,
};
pub use dataset::{load_dataset, Dataset, SpotRecord};
pub use embedding::{embed, pca_fit, pca_project, ClrMatrix, Embedding, PcaModel};
pub use linalg::symmetric_eigen;
