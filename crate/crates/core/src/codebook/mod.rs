//! Codebook training: k-means for VLAD and PQ sub-quantizers, diagonal GMMs
//! for Fisher vectors.

mod gmm;
mod kmeans;

pub use gmm::{fit_gmm, fit_gmm_traced, GmmModel, GmmParams, GmmTrace};
pub use kmeans::{fit_kmeans, fit_kmeans_traced, Codebook, KMeansParams, KMeansTrace};

/// Rows per partial in chunked reductions over training data. Depends only
/// on `n`, never on the thread count.
pub(crate) fn reduction_chunk(n: usize) -> usize {
    n.div_ceil(64).max(2048)
}
