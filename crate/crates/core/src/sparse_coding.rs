//! Orthogonal matching pursuit under an ℓ0 budget.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::ksvd::Dictionary;
use crate::linalg::{norm2, solve_spd};
use crate::Scalar;

/// Relative residual tolerance used when none is given.
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-9;

/// Sparse coefficient vector: strictly increasing `support` with aligned `coeffs`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseCode<T> {
    support: Vec<usize>,
    coeffs: Vec<T>,
}

impl<T: Scalar> SparseCode<T> {
    pub fn empty() -> Self {
        Self {
            support: Vec::new(),
            coeffs: Vec::new(),
        }
    }

    /// Builds a code from arbitrary (index, value) pairs; entries are sorted by index.
    pub fn new(mut entries: Vec<(usize, T)>, num_atoms: usize) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Input("duplicate atom index in sparse code".into()));
        }
        if let Some(&(k, _)) = entries.iter().find(|e| e.0 >= num_atoms) {
            return Err(Error::Input(format!(
                "atom index {k} out of range for {num_atoms} atoms"
            )));
        }
        if entries.iter().any(|e| !e.1.is_finite()) {
            return Err(Error::Input("non-finite coefficient".into()));
        }
        let (support, coeffs) = entries.into_iter().unzip();
        Ok(Self { support, coeffs })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn nnz(&self) -> usize {
        self.support.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.support
            .iter()
            .copied()
            .zip(self.coeffs.iter().copied())
    }

    pub fn get(&self, atom: usize) -> Option<T> {
        self.support
            .binary_search(&atom)
            .ok()
            .map(|p| self.coeffs[p])
    }

    pub(crate) fn set(&mut self, atom: usize, value: T) -> bool {
        match self.support.binary_search(&atom) {
            Ok(p) => {
                self.coeffs[p] = value;
                true
            }
            Err(_) => false,
        }
    }

    pub fn to_dense(&self, num_atoms: usize) -> Array1<T> {
        let mut out = Array1::zeros(num_atoms);
        for (k, v) in self.iter() {
            out[k] = v;
        }
        out
    }

    /// `D·x` for this code.
    pub fn reconstruct(&self, dictionary: ArrayView2<'_, T>) -> Array1<T> {
        let mut out = Array1::zeros(dictionary.nrows());
        for (k, v) in self.iter() {
            out.scaled_add(v, &dictionary.column(k));
        }
        out
    }
}

/// One sparse code per signal, all over the same `num_atoms`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodeMatrix<T> {
    num_atoms: usize,
    columns: Vec<SparseCode<T>>,
}

impl<T: Scalar> SparseCodeMatrix<T> {
    pub fn new(num_atoms: usize, columns: Vec<SparseCode<T>>) -> Result<Self> {
        if let Some(bad) = columns
            .iter()
            .flat_map(|c| c.support.iter())
            .find(|&&k| k >= num_atoms)
        {
            return Err(Error::Input(format!(
                "atom index {bad} out of range for {num_atoms} atoms"
            )));
        }
        Ok(Self { num_atoms, columns })
    }

    pub fn num_atoms(&self) -> usize {
        self.num_atoms
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[SparseCode<T>] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &SparseCode<T> {
        &self.columns[j]
    }

    pub(crate) fn columns_mut(&mut self) -> &mut [SparseCode<T>] {
        &mut self.columns
    }

    pub fn max_nnz(&self) -> usize {
        self.columns.iter().map(SparseCode::nnz).max().unwrap_or(0)
    }

    /// Number of codes using each atom.
    pub fn usage(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_atoms];
        for k in self.columns.iter().flat_map(|c| c.support.iter()) {
            counts[*k] += 1;
        }
        counts
    }

    /// K×L dense matrix.
    pub fn to_dense(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.num_atoms, self.columns.len()));
        for (j, code) in self.columns.iter().enumerate() {
            for (k, v) in code.iter() {
                out[[k, j]] = v;
            }
        }
        out
    }

    /// `D·X`.
    pub fn reconstruct(&self, dictionary: ArrayView2<'_, T>) -> Array2<T> {
        let mut out = Array2::zeros((dictionary.nrows(), self.columns.len()));
        for (mut col, code) in out.axis_iter_mut(Axis(1)).zip(&self.columns) {
            for (k, v) in code.iter() {
                col.scaled_add(v, &dictionary.column(k));
            }
        }
        out
    }

    /// `Y − D·X`.
    pub fn residual(
        &self,
        signals: ArrayView2<'_, T>,
        dictionary: ArrayView2<'_, T>,
    ) -> Result<Array2<T>> {
        if signals.ncols() != self.columns.len()
            || signals.nrows() != dictionary.nrows()
            || dictionary.ncols() != self.num_atoms
        {
            return Err(Error::shape(format!(
                "residual of {}x{} signals with {}x{} dictionary and {} codes over {} atoms",
                signals.nrows(),
                signals.ncols(),
                dictionary.nrows(),
                dictionary.ncols(),
                self.columns.len(),
                self.num_atoms
            )));
        }
        Ok(&signals - &self.reconstruct(dictionary))
    }

    /// `‖Y − D·X‖²_F`.
    pub fn objective(
        &self,
        signals: ArrayView2<'_, T>,
        dictionary: ArrayView2<'_, T>,
    ) -> Result<T> {
        Ok(self
            .residual(signals, dictionary)?
            .iter()
            .map(|&v| v * v)
            .sum())
    }
}

/// Encoder output plus the residual norm after each selection step.
#[derive(Debug, Clone)]
pub struct OmpTrace<T> {
    pub code: SparseCode<T>,
    /// `residual_norms[0]` is `‖y‖`; entry `i` is the norm after `i` atoms.
    pub residual_norms: Vec<T>,
}

/// OMP with full least-squares refit over the selected support at every step.
///
/// Stops after `sparsity` atoms or once the residual norm is at most
/// `residual_tol`. Correlation ties go to the lowest atom index.
pub fn omp_encode<T: Scalar>(
    signal: ArrayView1<'_, T>,
    dictionary: &Dictionary<T>,
    sparsity: usize,
    residual_tol: T,
) -> Result<SparseCode<T>> {
    omp_encode_traced(signal, dictionary, sparsity, residual_tol).map(|t| t.code)
}

pub fn omp_encode_traced<T: Scalar>(
    signal: ArrayView1<'_, T>,
    dictionary: &Dictionary<T>,
    sparsity: usize,
    residual_tol: T,
) -> Result<OmpTrace<T>> {
    if sparsity == 0 {
        return Err(Error::Config("sparsity must be at least 1".into()));
    }
    if signal.len() != dictionary.dim() {
        return Err(Error::shape(format!(
            "signal of length {} against {}-dimensional dictionary",
            signal.len(),
            dictionary.dim()
        )));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite signal".into()));
    }
    let atoms = dictionary.atoms();
    let k_total = dictionary.num_atoms();
    let budget = sparsity.min(k_total).min(dictionary.dim().max(1));

    let mut residual = signal.to_owned();
    let mut norm = norm2(residual.view());
    let mut norms = vec![norm];
    let mut selected: Vec<usize> = Vec::with_capacity(budget);
    let mut coeffs: Array1<T> = Array1::zeros(0);
    let mut in_support = vec![false; k_total];

    while selected.len() < budget && norm > residual_tol {
        let corr = atoms.t().dot(&residual);
        let mut best: Option<(usize, T)> = None;
        for (k, &c) in corr.iter().enumerate() {
            if in_support[k] {
                continue;
            }
            let a = c.abs();
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((k, a));
            }
        }
        let Some((pick, score)) = best else { break };
        if !(score > T::zero()) {
            break;
        }

        let mut trial_support = selected.clone();
        trial_support.push(pick);
        let sub = atoms.select(Axis(1), &trial_support);
        let gram = sub.t().dot(&sub);
        let rhs = sub.t().dot(&signal);
        let Some(trial_coeffs) = solve_spd(&gram, &rhs) else {
            return Err(Error::Numeric(
                "least-squares refit failed on support Gram matrix".into(),
            ));
        };
        let trial_residual = &signal - &sub.dot(&trial_coeffs);
        let trial_norm = norm2(trial_residual.view());
        // The refit is optimal over a superset of the previous support, so this only
        // trips when jitter or rounding would make things worse: keep the old code.
        if trial_norm > norm {
            break;
        }
        in_support[pick] = true;
        selected = trial_support;
        coeffs = trial_coeffs;
        residual = trial_residual;
        norm = trial_norm;
        norms.push(norm);
    }

    let entries = selected.into_iter().zip(coeffs.iter().copied()).collect();
    let code = SparseCode::new(entries, k_total)?;
    Ok(OmpTrace {
        code,
        residual_norms: norms,
    })
}

/// Encodes every column with the default tolerance `1e-9·‖y‖₂`.
pub fn batch_encode<T: Scalar>(
    signals: &FeatureMatrix<T>,
    dictionary: &Dictionary<T>,
    sparsity: usize,
) -> Result<SparseCodeMatrix<T>> {
    batch_encode_with(signals.values(), dictionary, sparsity, true)
}

/// As [`batch_encode`] over a raw view, optionally sequential. Output is identical
/// either way since every column is encoded independently.
pub fn batch_encode_with<T: Scalar>(
    signals: ArrayView2<'_, T>,
    dictionary: &Dictionary<T>,
    sparsity: usize,
    parallel: bool,
) -> Result<SparseCodeMatrix<T>> {
    if signals.nrows() != dictionary.dim() {
        return Err(Error::shape(format!(
            "signals have dimension {}, dictionary has {}",
            signals.nrows(),
            dictionary.dim()
        )));
    }
    let encode = |j: usize| {
        let y = signals.column(j);
        let tol = norm2(y) * T::lit(DEFAULT_RESIDUAL_TOL);
        omp_encode(y, dictionary, sparsity, tol)
    };
    let columns: Result<Vec<_>> = if parallel {
        (0..signals.ncols()).into_par_iter().map(encode).collect()
    } else {
        (0..signals.ncols()).map(encode).collect()
    };
    SparseCodeMatrix::new(dictionary.num_atoms(), columns?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn identity(n: usize) -> Dictionary<f64> {
        Dictionary::new(Array2::eye(n)).unwrap()
    }

    #[test]
    fn atom_aligned_signal() {
        let code = omp_encode(array![0.0, 2.0, 0.0].view(), &identity(3), 1, 0.0).unwrap();
        assert_eq!(code.support(), &[1]);
        assert_eq!(code.coeffs(), &[2.0]);
        let r = array![0.0, 2.0, 0.0] - code.reconstruct(identity(3).atoms());
        assert_eq!(r.dot(&r), 0.0);
    }

    #[test]
    fn zero_signal_gives_empty_code() {
        let d = identity(4);
        let y = Array1::<f64>::zeros(4);
        let code = omp_encode(y.view(), &d, 5, 1e-9 * norm2(y.view())).unwrap();
        assert_eq!(code.nnz(), 0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let code = omp_encode(array![1.0, 1.0, 0.0].view(), &identity(3), 1, 0.0).unwrap();
        assert_eq!(code.support(), &[0]);
    }

    #[test]
    fn support_sorted_and_within_budget() {
        let d = identity(5);
        let code = omp_encode(array![0.1, 0.0, 3.0, -2.0, 0.5].view(), &d, 3, 0.0).unwrap();
        assert_eq!(code.support(), &[2, 3, 4]);
        assert_eq!(code.get(3), Some(-2.0));
    }

    #[test]
    fn shape_and_input_errors() {
        let d = identity(3);
        assert!(matches!(
            omp_encode(array![1.0, 2.0].view(), &d, 1, 0.0),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            omp_encode(array![1.0, f64::INFINITY, 0.0].view(), &d, 1, 0.0),
            Err(Error::Input(_))
        ));
        let signals = FeatureMatrix::new(Array2::<f64>::ones((2, 3))).unwrap();
        assert!(matches!(
            batch_encode(&signals, &d, 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn dense_helpers_agree() {
        let d =
            Dictionary::<f64>::from_columns_normalized(array![[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
                .unwrap();
        let codes = SparseCodeMatrix::new(
            3,
            vec![
                SparseCode::new(vec![(2, 1.5), (0, -1.0)], 3).unwrap(),
                SparseCode::empty(),
            ],
        )
        .unwrap();
        let dense = codes.to_dense();
        let direct = d.atoms().dot(&dense);
        assert!((codes.reconstruct(d.atoms()) - direct)
            .iter()
            .all(|v| v.abs() < 1e-15));
        assert_eq!(codes.usage(), vec![1, 0, 1]);
    }
}
