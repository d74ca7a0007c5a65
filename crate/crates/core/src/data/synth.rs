//! Synthetic source/target pairs with a controlled linear domain shift.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FeatureMatrix, ImageSet};
use crate::error::{Error, Result};
use crate::ksvd::Dictionary;
use crate::linalg::spectral_norm;
use crate::rng::{stage_rng, Stage};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub dim: usize,
    pub atoms: usize,
    pub classes: usize,
    pub images_per_class: usize,
    pub features_per_image: usize,
    pub sparsity: usize,
    /// Magnitude of the linear transform applied to target atoms.
    pub shift_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dim: 20,
            atoms: 30,
            classes: 5,
            images_per_class: 40,
            features_per_image: 30,
            sparsity: 3,
            shift_strength: 0.5,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Atoms owned by each class; leftover atoms are generated but never used.
    pub fn atoms_per_class(&self) -> usize {
        self.atoms / self.classes.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dim", self.dim),
            ("atoms", self.atoms),
            ("classes", self.classes),
            ("images_per_class", self.images_per_class),
            ("features_per_image", self.features_per_image),
            ("sparsity", self.sparsity),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Spec(format!("{name} must be at least 1")));
        }
        if self.sparsity > self.atoms {
            return Err(Error::Spec(format!(
                "sparsity {} exceeds atoms {}",
                self.sparsity, self.atoms
            )));
        }
        if self.classes > self.atoms {
            return Err(Error::Spec(format!(
                "{} classes need at least one atom each, only {} atoms",
                self.classes, self.atoms
            )));
        }
        if self.sparsity > self.atoms_per_class() {
            return Err(Error::Spec(format!(
                "sparsity {} exceeds the {} atoms owned by each class",
                self.sparsity,
                self.atoms_per_class()
            )));
        }
        if !(self.shift_strength >= 0.0 && self.shift_strength.is_finite()) {
            return Err(Error::Spec("shift_strength must be finite and >= 0".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Spec("noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair<T> {
    pub source: FeatureMatrix<T>,
    pub source_images: ImageSet,
    pub target: FeatureMatrix<T>,
    pub target_images: ImageSet,
    /// Atoms that generated the source features.
    pub ground_truth: Dictionary<T>,
    /// The shifted atoms that generated the target features.
    pub target_ground_truth: Dictionary<T>,
}

fn gaussian<T: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let v: f64 = StandardNormal.sample(rng);
        T::lit(v)
    })
}

fn draw_domain<T: Scalar>(
    spec: &SynthSpec,
    dict: &Dictionary<T>,
    stage: Stage,
) -> Result<(FeatureMatrix<T>, ImageSet)> {
    let per_class = spec.atoms_per_class();
    let n_images = spec.classes * spec.images_per_class;
    let mut values = Array2::<T>::zeros((spec.dim, n_images * spec.features_per_image));
    let mut labels = Vec::with_capacity(n_images);
    for image in 0..n_images {
        let class = image / spec.images_per_class;
        labels.push(Some(class));
        let mut rng = stage_rng(spec.seed, stage, image as u64);
        for f in 0..spec.features_per_image {
            let mut col = Array1::<T>::zeros(spec.dim);
            for local in sample(&mut rng, per_class, spec.sparsity).into_iter() {
                let magnitude: f64 = rng.random_range(0.5..1.5);
                let coeff = if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                };
                col.scaled_add(T::lit(coeff), &dict.atom(class * per_class + local));
            }
            if spec.noise_sigma > 0.0 {
                for v in col.iter_mut() {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *v += T::lit(spec.noise_sigma * n);
                }
            }
            values
                .column_mut(image * spec.features_per_image + f)
                .assign(&col);
        }
    }
    let sizes = vec![spec.features_per_image; n_images];
    Ok((
        FeatureMatrix::new(values)?,
        ImageSet::from_sizes(&sizes, &labels)?,
    ))
}

/// Generates a labeled source/target pair.
///
/// Class `c` owns atoms `c*p .. (c+1)*p` with `p = atoms / classes`. Each local
/// feature combines `sparsity` distinct atoms of its class with coefficients of
/// magnitude in `[0.5, 1.5)` and random sign, plus `N(0, noise_sigma²)` noise.
/// Target atoms are `normalize((I + s·A/‖A‖₂)·d)` for a Gaussian `A`.
pub fn synth_domain_pair<T: Scalar>(spec: &SynthSpec) -> Result<SynthPair<T>> {
    spec.validate()?;
    let mut rng = stage_rng(spec.seed, Stage::SynthDictionary, 0);
    let ground_truth =
        Dictionary::from_columns_normalized(gaussian::<T>(&mut rng, spec.dim, spec.atoms))?;

    let mut rng = stage_rng(spec.seed, Stage::SynthShift, 0);
    let a = gaussian::<T>(&mut rng, spec.dim, spec.dim);
    let a_norm = spectral_norm(a.view());
    let mut shift = Array2::<T>::eye(spec.dim);
    if a_norm > T::zero() {
        shift.scaled_add(T::lit(spec.shift_strength) / a_norm, &a);
    }
    let target_ground_truth = if spec.shift_strength == 0.0 {
        ground_truth.clone()
    } else {
        Dictionary::from_columns_normalized(shift.dot(&ground_truth.atoms()))
            .map_err(|e| Error::Spec(format!("shifted atoms degenerate: {e}")))?
    };

    let (source, source_images) = draw_domain(spec, &ground_truth, Stage::SynthSource)?;
    let (target, target_images) = draw_domain(spec, &target_ground_truth, Stage::SynthTarget)?;
    Ok(SynthPair {
        source,
        source_images,
        target,
        target_images,
        ground_truth,
        target_ground_truth,
    })
}
