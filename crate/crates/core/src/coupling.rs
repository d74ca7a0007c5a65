//! Nearest-neighbour coupling between target and source features.
//!
//! The coupling matrix `P` (`L_s × L_t`) has a single 1 per column, in the row of
//! the source feature with the largest Gaussian affinity to that target feature.
//! The affinity is strictly decreasing in Euclidean distance, so the selection is
//! computed directly as the nearest source feature.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::sparse_coding::SparseCodeMatrix;
use crate::Scalar;

/// Target columns handled per parallel task.
const BLOCK: usize = 64;

/// Column-sparse binary matrix: `selected_source[j]` is the row of the 1 in column `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingMatrix {
    rows: usize,
    selected_source: Vec<usize>,
}

impl CouplingMatrix {
    pub fn new(rows: usize, selected_source: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = selected_source.iter().find(|&&i| i >= rows) {
            return Err(Error::Consistency(format!(
                "coupling selects source {bad} but only {rows} source features exist"
            )));
        }
        Ok(Self {
            rows,
            selected_source,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            selected_source: (0..n).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.selected_source.len()
    }

    pub fn selected_source(&self) -> &[usize] {
        &self.selected_source
    }

    pub fn to_dense<T: Scalar>(&self) -> Array2<T> {
        let mut p = Array2::zeros((self.rows, self.cols()));
        for (j, &i) in self.selected_source.iter().enumerate() {
            p[[i, j]] = T::one();
        }
        p
    }
}

/// Pairwise affinities `Φ(i, j) = exp(−‖y_i^s − y_j^t‖²/2) / √(2π)`.
///
/// Values underflow to 0 once the squared distance exceeds roughly 1400, which is
/// why [`build_coupling`] works on distances instead.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix<T> {
    values: Array2<T>,
}

impl<T: Scalar> AffinityMatrix<T> {
    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    /// Per column, the first row holding the maximum.
    pub fn argmax_columns(&self) -> Vec<usize> {
        self.values
            .axis_iter(Axis(1))
            .map(|col| {
                col.iter()
                    .enumerate()
                    .fold(
                        (0, T::neg_infinity()),
                        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                    )
                    .0
            })
            .collect()
    }
}

pub fn gaussian_kernel<T: Scalar>(sq_distance: T) -> T {
    T::lit(1.0 / (2.0 * PI).sqrt()) * (-sq_distance / T::lit(2.0)).exp()
}

fn check_dims<T: Scalar>(source: &FeatureMatrix<T>, target: &FeatureMatrix<T>) -> Result<()> {
    if source.dim() != target.dim() {
        return Err(Error::shape(format!(
            "source features have dimension {}, target {}",
            source.dim(),
            target.dim()
        )));
    }
    Ok(())
}

pub fn gaussian_affinity<T: Scalar>(
    source: &FeatureMatrix<T>,
    target: &FeatureMatrix<T>,
) -> Result<AffinityMatrix<T>> {
    check_dims(source, target)?;
    let (ls, lt) = (source.count(), target.count());
    let blocks: Vec<Vec<T>> = (0..lt.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let cols = b * BLOCK..((b + 1) * BLOCK).min(lt);
            let mut out = Vec::with_capacity(cols.len() * ls);
            for j in cols {
                let t = target.column(j);
                out.extend((0..ls).map(|i| gaussian_kernel(sq_dist(source.column(i), t))));
            }
            out
        })
        .collect();
    // blocks hold column-major chunks of the L_s × L_t matrix
    let flat: Vec<T> = blocks.into_iter().flatten().collect();
    let values = Array2::from_shape_vec((lt, ls), flat)
        .expect("block sizes")
        .reversed_axes();
    Ok(AffinityMatrix {
        values: values.as_standard_layout().into_owned(),
    })
}

/// For every target feature, the index of its nearest source feature (lowest index on ties).
pub fn build_coupling<T: Scalar>(
    source: &FeatureMatrix<T>,
    target: &FeatureMatrix<T>,
) -> Result<CouplingMatrix> {
    check_dims(source, target)?;
    let ls = source.count();
    let lt = target.count();
    let selected: Vec<usize> = (0..lt.div_ceil(BLOCK))
        .into_par_iter()
        .flat_map_iter(|b| {
            (b * BLOCK..((b + 1) * BLOCK).min(lt)).map(|j| {
                let t = target.column(j);
                let mut best = (0, T::infinity());
                for i in 0..ls {
                    let d = sq_dist(source.column(i), t);
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                best.0
            })
        })
        .collect();
    CouplingMatrix::new(ls, selected)
}

/// `‖X_t − X_s·P‖²_F`, accumulated over the union of supports of each coupled pair.
pub fn coupling_cost<T: Scalar>(
    codes_source: &SparseCodeMatrix<T>,
    codes_target: &SparseCodeMatrix<T>,
    coupling: &CouplingMatrix,
) -> Result<T> {
    if codes_source.num_atoms() != codes_target.num_atoms() {
        return Err(Error::shape(format!(
            "source codes over {} atoms, target codes over {}",
            codes_source.num_atoms(),
            codes_target.num_atoms()
        )));
    }
    if coupling.rows() != codes_source.len() || coupling.cols() != codes_target.len() {
        return Err(Error::shape(format!(
            "coupling is {}x{}, codes have {} source and {} target columns",
            coupling.rows(),
            coupling.cols(),
            codes_source.len(),
            codes_target.len()
        )));
    }
    let mut total = T::zero();
    for (t, &i) in codes_target
        .columns()
        .iter()
        .zip(coupling.selected_source())
    {
        let s = codes_source.column(i);
        let (mut a, mut b) = (t.iter().peekable(), s.iter().peekable());
        loop {
            let diff = match (a.peek().copied(), b.peek().copied()) {
                (None, None) => break,
                (Some((_, x)), None) => {
                    a.next();
                    x
                }
                (None, Some((_, y))) => {
                    b.next();
                    -y
                }
                (Some((ka, x)), Some((kb, y))) => {
                    if ka == kb {
                        a.next();
                        b.next();
                        x - y
                    } else if ka < kb {
                        a.next();
                        x
                    } else {
                        b.next();
                        -y
                    }
                }
            };
            total += diff * diff;
        }
    }
    Ok(total)
}

/// `Y_s·P`: column `j` is source column `selected_source[j]`.
pub fn apply_coupling<T: Scalar>(
    source: &FeatureMatrix<T>,
    coupling: &CouplingMatrix,
) -> Result<FeatureMatrix<T>> {
    if coupling.rows() != source.count() {
        return Err(Error::Consistency(format!(
            "coupling has {} rows, source has {} features",
            coupling.rows(),
            source.count()
        )));
    }
    source.select_columns(coupling.selected_source())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    use crate::sparse_coding::SparseCode;

    #[test]
    fn kernel_values() {
        let peak = 1.0 / (2.0 * PI).sqrt();
        assert!((gaussian_kernel(0.0f64) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((gaussian_kernel(2.0f64) - peak * (-1.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn self_coupling_is_identity() {
        let y = FeatureMatrix::new(array![[0.0, 1.0, 5.0], [0.0, 2.0, -1.0]]).unwrap();
        assert_eq!(build_coupling(&y, &y).unwrap(), CouplingMatrix::identity(3));
        assert_eq!(apply_coupling(&y, &CouplingMatrix::identity(3)).unwrap(), y);
    }

    #[test]
    fn single_source_forced() {
        let s = FeatureMatrix::new(array![[1.0]]).unwrap();
        let t = FeatureMatrix::new(array![[-4.0, 9.0, 0.5]]).unwrap();
        let c = build_coupling(&s, &t).unwrap();
        assert_eq!(c.selected_source(), &[0, 0, 0]);
        let y = apply_coupling(&s, &c).unwrap();
        assert_eq!(y.values(), array![[1.0, 1.0, 1.0]]);
    }

    #[test]
    fn ties_pick_lowest_source() {
        let s = FeatureMatrix::new(array![[-1.0, 1.0]]).unwrap();
        let t = FeatureMatrix::new(array![[0.0]]).unwrap();
        assert_eq!(build_coupling(&s, &t).unwrap().selected_source(), &[0]);
    }

    #[test]
    fn affinity_layout() {
        let s = FeatureMatrix::<f64>::new(array![[0.0, 3.0]]).unwrap();
        let t = FeatureMatrix::new(array![[0.0, 1.0, 3.0]]).unwrap();
        let a = gaussian_affinity(&s, &t).unwrap();
        assert_eq!(a.values().dim(), (2, 3));
        assert!((a.values()[[1, 1]] - gaussian_kernel(4.0)).abs() < 1e-16);
        assert_eq!(a.argmax_columns(), vec![0, 0, 1]);
    }

    #[test]
    fn cost_cases() {
        let k = 4;
        let zero = SparseCodeMatrix::new(k, vec![SparseCode::<f64>::empty(); 2]).unwrap();
        let xt = SparseCodeMatrix::new(
            k,
            vec![
                SparseCode::new(vec![(0, 1.5), (3, 2.0)], k).unwrap(),
                SparseCode::new(vec![(1, -1.0), (2, 0.5)], k).unwrap(),
            ],
        )
        .unwrap();
        // ‖X_t‖² = 2.25 + 4 + 1 + 0.25 = 7.5
        let c = CouplingMatrix::new(2, vec![1, 0]).unwrap();
        assert_eq!(coupling_cost(&zero, &xt, &c).unwrap(), 7.5);
        let c = CouplingMatrix::identity(2);
        assert_eq!(coupling_cost(&xt, &xt, &c).unwrap(), 0.0);
    }

    #[test]
    fn shape_errors() {
        let a = FeatureMatrix::new(array![[1.0, 2.0]]).unwrap();
        let b = FeatureMatrix::new(array![[1.0], [2.0]]).unwrap();
        assert!(matches!(build_coupling(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(gaussian_affinity(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(
            apply_coupling(&a, &CouplingMatrix::identity(3)),
            Err(Error::Consistency(_))
        ));
        assert!(matches!(
            CouplingMatrix::new(2, vec![2]),
            Err(Error::Consistency(_))
        ));
    }
}
