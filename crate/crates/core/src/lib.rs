//! Unsupervised domain-adaptation dictionary learning.
//!
//! Source features are coupled to target features by nearest neighbour, the
//! coupled pairs are stacked and a single K-SVD fit learns a source and a target
//! dictionary that share sparse codes. Images are then described by max-pooled
//! sparse codes and classified with a linear SVM trained on the source domain.
//!
//! All numerical code is generic over [`Scalar`] (`f32`/`f64`); the `*64` and
//! `*32` aliases below fix the element type.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod classify;
pub mod coupling;
pub mod data;
mod error;
pub mod features;
pub mod ksvd;
pub mod linalg;
pub mod rng;
mod scalar;
pub mod sparse_coding;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use adapt::{
    adapt_fit, adapt_fit_with, joint_objective, stack_problem, AdaptFit, AdaptOptions,
    AdaptedDictionaries, StackedProblem,
};
pub use classify::{evaluate_accuracy, svm_predict, svm_train, LinearSvmModel, SvmParams};
pub use coupling::{
    apply_coupling, build_coupling, coupling_cost, gaussian_affinity, AffinityMatrix,
    CouplingMatrix,
};
pub use data::{
    load_features, sample_protocol, save_features, synth_domain_pair, FeatureMatrix, ImageEntry,
    ImageSet, ProtocolSplit, SynthPair, SynthSpec,
};
pub use features::{
    bow_encode, encode_image_set, kmeans_fit, pool_max, Codebook, ImageDescriptor, PoolMode,
    PoolOptions,
};
pub use ksvd::{
    init_dictionary, ksvd_fit, ksvd_fit_from, replace_unused_atoms, update_atom, Dictionary,
    FitReport, KsvdConfig,
};
pub use sparse_coding::{batch_encode, omp_encode, SparseCode, SparseCodeMatrix};

pub type FeatureMatrix64 = FeatureMatrix<f64>;
pub type FeatureMatrix32 = FeatureMatrix<f32>;
pub type Dictionary64 = Dictionary<f64>;
pub type Dictionary32 = Dictionary<f32>;
pub type SparseCode64 = SparseCode<f64>;
pub type SparseCode32 = SparseCode<f32>;
pub type SparseCodeMatrix64 = SparseCodeMatrix<f64>;
pub type SparseCodeMatrix32 = SparseCodeMatrix<f32>;
pub type AffinityMatrix64 = AffinityMatrix<f64>;
pub type AdaptedDictionaries64 = AdaptedDictionaries<f64>;
pub type AdaptedDictionaries32 = AdaptedDictionaries<f32>;
pub type ImageDescriptor64 = ImageDescriptor<f64>;
pub type Codebook64 = Codebook<f64>;
pub type LinearSvmModel64 = LinearSvmModel<f64>;
pub type LinearSvmModel32 = LinearSvmModel<f32>;
