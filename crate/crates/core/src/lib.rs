//! Discriminative video-level representations built from frame-level CNN
//! descriptors.
//!
//! The crate covers the whole offline event-detection pipeline:
//!
//! * [`io`]: bit-exact file formats for descriptors, pool5 tensors, models,
//!   labels, scores and PQ codes.
//! * [`preprocess`]: ℓ2 normalization and PCA with whitening.
//! * [`codebook`]: k-means (k-means++ seeding) and diagonal GMMs trained by EM.
//! * [`encode`]: average pooling, Fisher vectors and VLAD-k.
//! * [`lcd`]: latent concept descriptors from pool5 tensors, with spatial
//!   pyramid max pooling.
//! * [`pq`]: product quantization and look-up-table scoring of linear models
//!   on compressed codes.
//! * [`classify`]: linear and precomputed-kernel SVMs (exp-χ², RBF) and
//!   cross-validation.
//! * [`eval`]: average precision, mAP, late fusion and cosine-similarity
//!   statistics.
//! * [`synth`] and [`experiment`]: seeded synthetic corpora and an end-to-end
//!   evaluation harness.
//!
//! Batch work runs data-parallel through [`par`] when the `parallel` feature
//! (on by default) is enabled, and sequentially otherwise. Results are
//! bitwise identical either way.

pub mod classify;
pub mod codebook;
pub mod encode;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod lcd;
pub mod math;
pub mod par;
pub mod pq;
pub mod preprocess;
pub mod synth;

pub use error::{Error, Result};
pub use io::DescriptorSet;
