//! Event detectors: linear SVMs, exponential-kernel SVMs on precomputed
//! kernels, and cross-validated hyperparameter selection.

pub mod cv;
pub mod kernel;
pub mod linear;
mod smo;

pub use cv::{
    cross_validate_kernel, cross_validate_linear, stratified_folds, CvPoint, CvResult, DEFAULT_C_GRID,
    DEFAULT_SIGMA_GRID,
};
pub use kernel::{
    chi2_distance, distance, distance_matrix, fit_kernel_svm, kernel_from_distances, kernel_matrix, mean_distance,
    mean_distance_subset, pairwise_distances, rbf_distance, train_kernel_svm, KernelKind, KernelSvmModel,
    KernelSvmParams, KernelSvmSolution, CHI2_EPS,
};
pub use linear::{
    predict_linear, train_linear_svm, train_linear_svm_traced, LinearClassifier, LinearSvmParams, LinearSvmTrace,
};

use crate::error::{Error, Result};

/// `true → +1`, `false → −1`; both classes must be present.
pub(crate) fn signed_labels(labels: &[bool]) -> Result<Vec<f64>> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::InsufficientData(format!(
            "training needs both classes, got {pos} positives and {} negatives",
            labels.len() - pos
        )));
    }
    Ok(labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect())
}
