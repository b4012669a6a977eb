//! Per-dataset analysis shared by the HTTP API and the `analyze` command.

use aitchview_core::cluster::{kmeans, ClusterError, Clustering};
use aitchview_core::composition::{clr_inv, ClrVector, Composition, DEFAULT_ZERO_EPS};
use aitchview_core::embedding::{embed, ClrMatrix, Embedding, EmbeddingError, PcaModel};
use aitchview_core::Dataset;
use serde::Serialize;

/// CLR coordinates and the PCA embedding of a dataset.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub clr: ClrMatrix,
    pub model: PcaModel,
    pub embedding: Embedding,
}

impl Analysis {
    /// Zero-replaces, CLR-transforms and embeds every spot. A single-spot
    /// dataset gets the trivial embedding at the origin.
    pub fn compute(dataset: &Dataset) -> Result<Self, EmbeddingError> {
        let clr = ClrMatrix::from_compositions(&dataset.compositions(), DEFAULT_ZERO_EPS)?;
        let (model, embedding) = if clr.rows() >= 2 {
            embed(&clr)?
        } else {
            let d = clr.cols();
            let mut axes = [vec![0.0; d], vec![0.0; d]];
            axes[0][0] = 1.0;
            axes[1][1] = 1.0;
            let model = PcaModel {
                mean: clr.row(0).to_vec(),
                components: axes,
                explained_variance: [0.0, 0.0],
            };
            let embedding = Embedding {
                coords: vec![[0.0, 0.0]],
                pc1_order: vec![0],
            };
            (model, embedding)
        };
        Ok(Self {
            clr,
            model,
            embedding,
        })
    }

    pub fn cluster(&self, k: usize, seed: u64) -> Result<Clustering, ClusterError> {
        kmeans(&self.clr, k, seed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingBody<'a> {
    pub coords: &'a [[f64; 2]],
    pub explained_variance: [f64; 2],
    pub components: &'a [Vec<f64>; 2],
    pub mean: &'a [f64],
    pub pc1_order: &'a [usize],
}

impl<'a> EmbeddingBody<'a> {
    pub fn new(a: &'a Analysis) -> Self {
        Self {
            coords: &a.embedding.coords,
            explained_variance: a.model.explained_variance,
            components: &a.model.components,
            mean: &a.model.mean,
            pc1_order: &a.embedding.pc1_order,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusteringBody<'a> {
    pub k: usize,
    pub seed: u64,
    pub labels: &'a [usize],
    pub sizes: Vec<usize>,
    /// Centroids mapped back onto the simplex.
    pub centroids: Vec<Composition>,
    pub centroids_clr: &'a [Vec<f64>],
    pub inertia: f64,
    pub iterations: usize,
}

impl<'a> ClusteringBody<'a> {
    pub fn new(c: &'a Clustering) -> Self {
        let centroids = c
            .centroids
            .iter()
            .map(|z| {
                ClrVector::new(z.clone())
                    .and_then(|v| clr_inv(&v))
                    .expect("centroids are finite")
            })
            .collect();
        Self {
            k: c.k,
            seed: c.seed,
            labels: &c.labels,
            sizes: c.cluster_sizes(),
            centroids,
            centroids_clr: &c.centroids,
            inertia: c.inertia,
            iterations: c.iterations,
        }
    }
}

/// The document written by `aitchview analyze`.
#[derive(Debug, Serialize)]
pub struct AnalyzeReport<'a> {
    pub n: usize,
    pub d: usize,
    pub cell_types: &'a [String],
    pub spot_ids: Vec<&'a str>,
    pub clr: Vec<&'a [f64]>,
    pub embedding: EmbeddingBody<'a>,
    pub clustering: ClusteringBody<'a>,
}

impl<'a> AnalyzeReport<'a> {
    pub fn new(dataset: &'a Dataset, analysis: &'a Analysis, clustering: &'a Clustering) -> Self {
        Self {
            n: dataset.len(),
            d: dataset.dim(),
            cell_types: dataset.cell_types(),
            spot_ids: dataset.spots().iter().map(|s| s.id.as_str()).collect(),
            clr: analysis.clr.iter_rows().collect(),
            embedding: EmbeddingBody::new(analysis),
            clustering: ClusteringBody::new(clustering),
        }
    }
}
