use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg::{norm2, normalize};
use crate::Scalar;

/// `dim × num_atoms` matrix whose columns (atoms) have unit 2-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary<T> {
    atoms: Array2<T>,
}

impl<T: Scalar> Dictionary<T> {
    /// Wraps atoms that are already unit-norm.
    pub fn new(atoms: Array2<T>) -> Result<Self> {
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(Error::InvalidDictionary(format!(
                "empty dictionary {}x{}",
                atoms.nrows(),
                atoms.ncols()
            )));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDictionary("non-finite entry".into()));
        }
        let tol = T::unit_norm_tol();
        for (k, atom) in atoms.columns().into_iter().enumerate() {
            let n = norm2(atom);
            if n == T::zero() {
                return Err(Error::InvalidDictionary(format!("atom {k} has zero norm")));
            }
            if (n - T::one()).abs() > tol {
                return Err(Error::InvalidDictionary(format!(
                    "atom {k} has norm {n}, expected 1"
                )));
            }
        }
        Ok(Self { atoms })
    }

    /// Normalizes every column; a zero column is an error.
    pub fn from_columns_normalized(mut raw: Array2<T>) -> Result<Self> {
        for (k, col) in raw.columns_mut().into_iter().enumerate() {
            if normalize(col).is_none() {
                return Err(Error::InvalidDictionary(format!("atom {k} has zero norm")));
            }
        }
        Self::new(raw)
    }

    /// Gaussian atoms, normalized.
    pub fn random(dim: usize, num_atoms: usize, rng: &mut impl Rng) -> Result<Self> {
        let raw =
            Array2::from_shape_simple_fn((dim, num_atoms), || T::lit(StandardNormal.sample(rng)));
        Self::from_columns_normalized(raw)
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> ArrayView2<'_, T> {
        self.atoms.view()
    }

    pub fn atom(&self, k: usize) -> ArrayView1<'_, T> {
        self.atoms.column(k)
    }

    pub fn into_inner(self) -> Array2<T> {
        self.atoms
    }

    /// Caller guarantees `atom` is unit-norm.
    pub(crate) fn set_atom(&mut self, k: usize, atom: &Array1<T>) {
        debug_assert!((norm2(atom.view()) - T::one()).abs() <= T::unit_norm_tol());
        self.atoms.column_mut(k).assign(atom);
    }

    /// Largest `|⟨d_i, d_j⟩|` over distinct atoms (0 for a single atom).
    pub fn mutual_coherence(&self) -> T {
        let gram = self.atoms.t().dot(&self.atoms);
        let mut mu = T::zero();
        for i in 0..gram.nrows() {
            for j in (i + 1)..gram.ncols() {
                mu = mu.max(gram[[i, j]].abs());
            }
        }
        mu
    }

    pub fn as_features(&self) -> FeatureMatrix<T> {
        FeatureMatrix::new(self.atoms.clone()).expect("dictionary atoms are finite and non-empty")
    }

    pub fn cast<U: Scalar>(&self) -> Dictionary<U> {
        Dictionary::from_columns_normalized(self.atoms.mapv(|v| U::lit(v.as_f64())))
            .expect("unit atoms survive casting")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_zero_and_unnormalized_atoms() {
        assert!(matches!(
            Dictionary::new(array![[1.0, 0.0], [0.0, 0.0]]),
            Err(Error::InvalidDictionary(_))
        ));
        assert!(matches!(
            Dictionary::new(array![[2.0]]),
            Err(Error::InvalidDictionary(_))
        ));
        assert!(matches!(
            Dictionary::from_columns_normalized(array![[1.0, 0.0], [1.0, 0.0]]),
            Err(Error::InvalidDictionary(_))
        ));
    }

    #[test]
    fn coherence_of_identity_is_zero() {
        let d = Dictionary::<f64>::new(Array2::eye(3)).unwrap();
        assert_eq!(d.mutual_coherence(), 0.0);
        let d = Dictionary::from_columns_normalized(array![[1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!((d.mutual_coherence() - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
