//! Image-level descriptors: max-pooled sparse codes and bag-of-words histograms.

mod bow;

pub use bow::{bow_encode, kmeans_fit, nearest_center, Codebook, KmeansFit};

use std::str::FromStr;

use ndarray::Array1;

use crate::data::{FeatureMatrix, ImageSet};
use crate::error::{Error, Result};
use crate::ksvd::Dictionary;
use crate::linalg::normalize;
use crate::sparse_coding::{batch_encode_with, SparseCode};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDescriptor<T> {
    pub vector: Array1<T>,
    pub image_id: usize,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMode {
    /// Per-atom maximum of `|x|`.
    #[default]
    Abs,
    /// Per-atom maximum of the signed coefficient (implicit zeros included).
    Signed,
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" => Ok(PoolMode::Abs),
            "signed" => Ok(PoolMode::Signed),
            other => Err(Error::Config(format!(
                "unknown pool mode {other:?}, expected abs|signed"
            ))),
        }
    }
}

impl std::fmt::Display for PoolMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolMode::Abs => "abs",
            PoolMode::Signed => "signed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolOptions {
    pub mode: PoolMode,
    pub l2_normalize: bool,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            mode: PoolMode::Abs,
            l2_normalize: true,
        }
    }
}

/// Max-pools one image's codes into a `num_atoms` vector, then L2-normalizes it
/// unless it is all zeros.
pub fn pool_max<T: Scalar>(
    codes: &[SparseCode<T>],
    num_atoms: usize,
    options: PoolOptions,
) -> Result<Array1<T>> {
    if codes.is_empty() {
        return Err(Error::Input(
            "cannot pool an image with no local features".into(),
        ));
    }
    let mut out = Array1::<T>::zeros(num_atoms);
    match options.mode {
        PoolMode::Abs => {
            for (k, v) in codes.iter().flat_map(SparseCode::iter) {
                out[k] = out[k].max(v.abs());
            }
        }
        PoolMode::Signed => {
            let mut best = vec![T::neg_infinity(); num_atoms];
            let mut present = vec![0usize; num_atoms];
            for (k, v) in codes.iter().flat_map(SparseCode::iter) {
                best[k] = best[k].max(v);
                present[k] += 1;
            }
            for k in 0..num_atoms {
                out[k] = match present[k] {
                    0 => T::zero(),
                    n if n < codes.len() => best[k].max(T::zero()),
                    _ => best[k],
                };
            }
        }
    }
    if options.l2_normalize {
        normalize(out.view_mut());
    }
    Ok(out)
}

/// Encodes every feature against `dictionary` and pools per image. The caller
/// picks the dictionary matching the images' domain.
pub fn encode_image_set<T: Scalar>(
    images: &ImageSet,
    features: &FeatureMatrix<T>,
    dictionary: &Dictionary<T>,
    sparsity: usize,
    options: PoolOptions,
) -> Result<Vec<ImageDescriptor<T>>> {
    if images.feature_count() != features.count() {
        return Err(Error::Consistency(format!(
            "image index covers {} features, matrix has {}",
            images.feature_count(),
            features.count()
        )));
    }
    let codes = batch_encode_with(features.values(), dictionary, sparsity, true)?;
    images
        .images()
        .iter()
        .enumerate()
        .map(|(image_id, img)| {
            let vector = pool_max(
                &codes.columns()[img.range()],
                dictionary.num_atoms(),
                options,
            )?;
            Ok(ImageDescriptor {
                vector,
                image_id,
                label: img.label,
            })
        })
        .collect()
}
