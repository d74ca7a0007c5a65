use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rayon::prelude::*;

use super::ImageDescriptor;
use crate::data::{FeatureMatrix, ImageSet};
use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::rng::{stage_rng, Stage};
use crate::Scalar;

/// `dim × bins` cluster centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T> {
    centers: Array2<T>,
}

impl<T: Scalar> Codebook<T> {
    pub fn new(centers: Array2<T>) -> Result<Self> {
        if centers.ncols() == 0 || centers.nrows() == 0 {
            return Err(Error::Config("codebook needs at least one bin".into()));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite codebook center".into()));
        }
        Ok(Self { centers })
    }

    pub fn bins(&self) -> usize {
        self.centers.ncols()
    }

    pub fn centers(&self) -> &Array2<T> {
        &self.centers
    }
}

#[derive(Debug, Clone)]
pub struct KmeansFit<T> {
    pub codebook: Codebook<T>,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_per_iteration: Vec<f64>,
    pub iterations_run: usize,
}

/// Index of the nearest center (lowest index on ties) and its squared distance.
pub fn nearest_center<T: Scalar>(centers: &Array2<T>, x: ArrayView1<'_, T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (b, c) in centers.axis_iter(Axis(1)).enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (b, d);
        }
    }
    best
}

fn plus_plus_seeding<T: Scalar>(
    features: &FeatureMatrix<T>,
    bins: usize,
    rng: &mut impl Rng,
) -> Array2<T> {
    let n = features.count();
    let mut centers = Array2::<T>::zeros((features.dim(), bins));
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centers.column_mut(0).assign(&features.column(first));
    let mut dist: Vec<f64> = (0..n)
        .map(|j| sq_dist(features.column(j), features.column(first)).as_f64())
        .collect();

    for b in 1..bins {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (j, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(j);
                    if u < d {
                        break;
                    }
                    u -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // All remaining points coincide with a center.
            let free: Vec<usize> = (0..n).filter(|&j| !chosen[j]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.column_mut(b).assign(&features.column(pick));
        for (j, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(features.column(j), features.column(pick)).as_f64());
        }
    }
    centers
}

/// Lloyd's algorithm from k-means++ seeds. Stops after `iterations` rounds or
/// when assignments no longer change. Empty clusters keep their center.
pub fn kmeans_fit<T: Scalar>(
    features: &FeatureMatrix<T>,
    bins: usize,
    seed: u64,
    iterations: usize,
) -> Result<KmeansFit<T>> {
    if bins == 0 || features.count() < bins {
        return Err(Error::Config(format!(
            "k-means needs 1..={} bins, got {bins}",
            features.count()
        )));
    }
    let mut rng = stage_rng(seed, Stage::Kmeans, 0);
    let mut centers = plus_plus_seeding(features, bins, &mut rng);
    let mut assignment: Vec<usize> = vec![usize::MAX; features.count()];
    let mut wcss_trace = Vec::new();
    let mut run = 0;
    for _ in 0..iterations.max(1) {
        let next: Vec<(usize, T)> = (0..features.count())
            .into_par_iter()
            .map(|j| nearest_center(&centers, features.column(j)))
            .collect();
        let wcss: f64 = next.iter().map(|(_, d)| d.as_f64()).sum();
        wcss_trace.push(wcss);
        run += 1;
        let changed = next.iter().zip(&assignment).any(|((a, _), b)| a != b);
        for (slot, (a, _)) in assignment.iter_mut().zip(&next) {
            *slot = *a;
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<T>::zeros(centers.dim());
        let mut counts = vec![0usize; bins];
        for (j, &a) in assignment.iter().enumerate() {
            sums.column_mut(a).scaled_add(T::one(), &features.column(j));
            counts[a] += 1;
        }
        for (b, &n) in counts.iter().enumerate() {
            if n > 0 {
                let mean = sums.column(b).mapv(|v| v / T::lit(n as f64));
                centers.column_mut(b).assign(&mean);
            }
        }
    }
    Ok(KmeansFit {
        codebook: Codebook::new(centers)?,
        wcss_per_iteration: wcss_trace,
        iterations_run: run,
    })
}

/// Hard-assignment histograms over the codebook, L1-normalized per image.
pub fn bow_encode<T: Scalar>(
    images: &ImageSet,
    features: &FeatureMatrix<T>,
    codebook: &Codebook<T>,
) -> Result<Vec<ImageDescriptor<T>>> {
    if features.dim() != codebook.centers().nrows() {
        return Err(Error::shape(format!(
            "features have dimension {}, codebook {}",
            features.dim(),
            codebook.centers().nrows()
        )));
    }
    if images.feature_count() != features.count() {
        return Err(Error::Consistency(format!(
            "image index covers {} features, matrix has {}",
            images.feature_count(),
            features.count()
        )));
    }
    Ok(images
        .images()
        .par_iter()
        .enumerate()
        .map(|(image_id, img)| {
            let mut hist = Array1::<T>::zeros(codebook.bins());
            for j in img.range() {
                hist[nearest_center(codebook.centers(), features.column(j)).0] += T::one();
            }
            let total = T::lit(img.len as f64);
            hist.mapv_inplace(|v| v / total);
            ImageDescriptor {
                vector: hist,
                image_id,
                label: img.label,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn distinct_points_become_centers() {
        let f = FeatureMatrix::new(array![[0.0, 5.0, 1.0, -3.0], [0.0, 1.0, 7.0, 2.0]]).unwrap();
        let fit = kmeans_fit(&f, 4, 3, 10).unwrap();
        assert_eq!(*fit.wcss_per_iteration.last().unwrap(), 0.0);
        for j in 0..4 {
            assert_eq!(nearest_center(fit.codebook.centers(), f.column(j)).1, 0.0);
        }
    }

    #[test]
    fn too_many_bins_rejected() {
        let f = FeatureMatrix::new(array![[0.0, 1.0]]).unwrap();
        assert!(matches!(kmeans_fit(&f, 3, 0, 5), Err(Error::Config(_))));
    }

    #[test]
    fn duplicates_still_seed_distinct_slots() {
        let f = FeatureMatrix::new(array![[1.0, 1.0, 1.0]]).unwrap();
        let fit = kmeans_fit(&f, 2, 0, 5).unwrap();
        assert_eq!(fit.codebook.bins(), 2);
    }

    #[test]
    fn single_feature_histogram_is_one_hot() {
        let cb = Codebook::new(array![[0.0, 10.0]]).unwrap();
        let f = FeatureMatrix::new(array![[9.0, 1.0, 2.0]]).unwrap();
        let set = ImageSet::from_sizes(&[1, 2], &[Some(0), None]).unwrap();
        let d = bow_encode(&set, &f, &cb).unwrap();
        assert_eq!(d[0].vector, array![0.0, 1.0]);
        assert_eq!(d[1].vector, array![1.0, 0.0]);
        assert_eq!(d[1].vector.sum(), 1.0);
    }
}
