//! Pyramidal hybrid feature extraction and classification.
//!
//! The pipeline decomposes each RGB image into a four-level wavelet pyramid,
//! describes every level with uniform LBP and LPQ histograms per channel plus
//! externally supplied deep embeddings, normalizes and prunes the fused
//! 11,780-column matrix, ranks columns with feature-weighting NCA and
//! evaluates a cubic-kernel SVM under hold-out and k-fold schemes.

pub mod cli;
pub mod deepfeat;
pub mod dwt;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod fusion;
pub mod imagecore;
pub mod lbp;
pub mod lpq;
pub mod scalar;
pub mod selection;
pub mod svm;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Plane64 = imagecore::ChannelPlane<f64>;
pub type Plane32 = imagecore::ChannelPlane<f32>;
pub type Pyramid64 = dwt::Pyramid<f64>;
pub type Pyramid32 = dwt::Pyramid<f32>;
pub type FeatureMatrix64 = fusion::FeatureMatrix<f64>;
pub type FeatureMatrix32 = fusion::FeatureMatrix<f32>;
pub type WeightVector64 = selection::WeightVector<f64>;
pub type SvmModel64 = svm::SvmModel<f64>;
pub type SvmModel32 = svm::SvmModel<f32>;
