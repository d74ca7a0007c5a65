//! Feature matrices, image indices, the DMAT container, synthetic domain pairs
//! and the train/test sampling protocol.

mod dmat;
mod protocol;
mod synth;

pub use dmat::{
    load_features, read_dmat, read_matrix_block, save_features, write_dmat, write_matrix_block,
    DMAT_MAGIC, DMAT_VERSION,
};
pub use protocol::{sample_protocol, ProtocolSplit};
pub use synth::{synth_domain_pair, SynthPair, SynthSpec};

use std::ops::Range;

use ndarray::{concatenate, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::Scalar;

/// Column-major collection of `dim`-dimensional local features: column `j` is one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    values: Array2<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(values: Array2<T>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Input(format!(
                "feature matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite feature value at flat index {pos}"
            )));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn count(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, T> {
        self.values.column(j)
    }

    pub fn into_inner(self) -> Array2<T> {
        self.values
    }

    pub fn columns(&self, range: Range<usize>) -> ArrayView2<'_, T> {
        self.values.slice(ndarray::s![.., range])
    }

    pub fn select_columns(&self, ids: &[usize]) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.count()) {
            return Err(Error::Consistency(format!(
                "column {bad} out of range for {} features",
                self.count()
            )));
        }
        Self::new(self.values.select(Axis(1), ids))
    }

    /// Stacks `top` over `bottom` (same count, dims add).
    pub fn vstack(top: &Self, bottom: &Self) -> Result<Self> {
        if top.count() != bottom.count() {
            return Err(Error::shape(format!(
                "cannot stack {} columns over {}",
                top.count(),
                bottom.count()
            )));
        }
        Self::new(
            concatenate(Axis(0), &[top.values(), bottom.values()]).expect("equal column counts"),
        )
    }

    pub fn hstack(parts: &[&Self]) -> Result<Self> {
        let views: Vec<_> = parts.iter().map(|p| p.values()).collect();
        let joined = concatenate(Axis(1), &views).map_err(|e| Error::shape(e.to_string()))?;
        Self::new(joined)
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            values: self.values.mapv(|v| U::lit(v.as_f64())),
        }
    }
}

/// One image: a contiguous run of local features plus an optional class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageEntry {
    pub start: usize,
    pub len: usize,
    pub label: Option<usize>,
}

impl ImageEntry {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Partition of a feature matrix into images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    images: Vec<ImageEntry>,
}

impl ImageSet {
    /// Validates that the ranges are non-empty, disjoint and cover `feature_count`.
    pub fn new(images: Vec<ImageEntry>, feature_count: usize) -> Result<Self> {
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.sort_by_key(|&i| images[i].start);
        let mut next = 0usize;
        for &i in &order {
            let img = images[i];
            if img.len == 0 {
                return Err(Error::Consistency(format!("image {i} has no features")));
            }
            if img.start != next {
                return Err(Error::Consistency(format!(
                    "image ranges do not tile the features: expected start {next}, image {i} starts at {}",
                    img.start
                )));
            }
            next = img.start + img.len;
        }
        if next != feature_count {
            return Err(Error::Consistency(format!(
                "images cover {next} features but the matrix has {feature_count}"
            )));
        }
        Ok(Self { images })
    }

    /// Consecutive images of the given sizes, in order.
    pub fn from_sizes(sizes: &[usize], labels: &[Option<usize>]) -> Result<Self> {
        if sizes.len() != labels.len() {
            return Err(Error::shape("sizes and labels differ in length"));
        }
        let mut start = 0;
        let images = sizes
            .iter()
            .zip(labels)
            .map(|(&len, &label)| {
                let img = ImageEntry { start, len, label };
                start += len;
                img
            })
            .collect();
        Self::new(images, start)
    }

    pub fn images(&self) -> &[ImageEntry] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.images.iter().map(|i| i.len).sum()
    }

    /// One past the largest label present; 0 when the set is unlabeled.
    pub fn num_classes(&self) -> usize {
        self.images
            .iter()
            .filter_map(|i| i.label)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Image ids grouped by label, `num_classes()` buckets.
    pub fn ids_by_class(&self) -> Vec<Vec<usize>> {
        let mut buckets = vec![Vec::new(); self.num_classes()];
        for (id, img) in self.images.iter().enumerate() {
            if let Some(c) = img.label {
                buckets[c].push(id);
            }
        }
        buckets
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(FeatureMatrix::new(array![[1.0, f64::NAN]]).is_err());
        assert!(FeatureMatrix::<f64>::new(Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn image_set_must_tile() {
        let img = |start, len| ImageEntry {
            start,
            len,
            label: None,
        };
        assert!(ImageSet::new(vec![img(0, 2), img(2, 3)], 5).is_ok());
        // out of order but still a tiling
        assert!(ImageSet::new(vec![img(2, 3), img(0, 2)], 5).is_ok());
        assert!(matches!(
            ImageSet::new(vec![img(0, 2), img(3, 2)], 5),
            Err(Error::Consistency(_))
        ));
        assert!(matches!(
            ImageSet::new(vec![img(0, 2), img(1, 4)], 5),
            Err(Error::Consistency(_))
        ));
        assert!(matches!(
            ImageSet::new(vec![img(0, 2)], 5),
            Err(Error::Consistency(_))
        ));
        assert!(matches!(
            ImageSet::new(vec![img(0, 0), img(0, 5)], 5),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn classes_from_labels() {
        let set = ImageSet::from_sizes(&[1, 1, 1], &[Some(2), None, Some(0)]).unwrap();
        assert_eq!(set.num_classes(), 3);
        assert_eq!(set.ids_by_class(), vec![vec![2], vec![], vec![0]]);
    }
}
